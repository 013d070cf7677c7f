//! `verify`: checks an event log's hash chain, then replays every verdict
//! from the signed messages it contains.

use std::path::Path;

use btard_core::audit::{audit, AuditError, AuditReport};
use btard_core::optim::ObjectiveError;

use crate::output::{read_events_file, EventLogError};

#[derive(Debug, thiserror::Error)]
pub enum VerifyError {
    #[error(transparent)]
    Log(#[from] EventLogError),
    #[error("objective in header: {0}")]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Audit(#[from] AuditError),
}

pub fn verify_trace(path: &Path) -> Result<AuditReport, VerifyError> {
    let (header, events) = read_events_file(path)?;
    let objective = header.config.objective.build()?;
    Ok(audit(&events, &objective)?)
}
