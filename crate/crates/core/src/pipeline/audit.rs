//! Records which subjects' phenotype values each pipeline stage reads, so
//! tests can check that fitting never touches the evaluation subjects.
//!
//! The log is per thread and off until [`start`] is called.

use std::cell::RefCell;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhenotypeUse {
    /// Read while fitting something (regression head, GWAS).
    Fit,
    /// Read to score predictions.
    Evaluate,
}

thread_local! {
    static LOG: RefCell<Option<Vec<(PhenotypeUse, String)>>> = const { RefCell::new(None) };
}

pub fn start() {
    LOG.with(|l| *l.borrow_mut() = Some(Vec::new()));
}

/// Stops recording and returns everything recorded since [`start`].
pub fn finish() -> Vec<(PhenotypeUse, String)> {
    LOG.with(|l| l.borrow_mut().take().unwrap_or_default())
}

pub fn record<'a>(usage: PhenotypeUse, subject_ids: impl IntoIterator<Item = &'a String>) {
    LOG.with(|l| {
        if let Some(log) = l.borrow_mut().as_mut() {
            log.extend(subject_ids.into_iter().map(|id| (usage, id.clone())));
        }
    });
}
