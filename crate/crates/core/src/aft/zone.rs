use super::{ProcessGroup, RecoveryRecord};
use crate::error::{CommError, CraftError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZoneOutcome {
    /// Successful runs of the body; 1 unless the exit agreement failed.
    pub completions: u64,
    /// Every recovery of the group so far, one per epoch.
    pub recoveries: Vec<RecoveryRecord>,
    /// Transport clock readings at which this process caught a failure.
    pub detections: Vec<u64>,
    /// Times this process entered the body.
    pub entries: u64,
}

/// Run `body` until it completes on every member.
///
/// A process failure observed by the body (directly, or as a revoked group)
/// leads to a group recovery and a fresh call of `body` with the repaired
/// group. The body must propagate such errors instead of handling them.
/// After a successful body, the members agree on the exit; a failure during
/// that agreement sends everyone back into recovery.
///
/// Any other error is fatal: the failing process abandons the group, its
/// peers end with [`CraftError::Unrecoverable`], and the error is returned.
pub fn run_aft_zone<T>(
    group: &ProcessGroup,
    mut body: impl FnMut(&ProcessGroup) -> Result<T>,
) -> Result<(T, ZoneOutcome)> {
    let mut outcome = ZoneOutcome { completions: 0, recoveries: Vec::new(), detections: Vec::new(), entries: 0 };
    loop {
        outcome.entries += 1;
        let err = match body(group) {
            Ok(value) => {
                outcome.completions += 1;
                match group.agree(1) {
                    Ok(1) => {
                        outcome.recoveries = group.history();
                        return Ok((value, outcome));
                    }
                    Ok(_) => return Err(CraftError::Unrecoverable("a peer failed inside the zone".into())),
                    Err(e) => CraftError::Comm(e),
                }
            }
            Err(e) => e,
        };
        match err.comm() {
            Some(c) if c.is_recoverable() => {
                outcome.detections.push(group.now());
                log::info!("rank {} epoch {}: {c}, recovering", group.rank(), group.epoch());
                match group.recover() {
                    Ok(_) => {}
                    Err(CommError::Abandoned) => {
                        return Err(CraftError::Unrecoverable("a peer abandoned the zone".into()));
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            Some(CommError::Killed) => return Err(err),
            _ => {
                log::error!("rank {} leaves the zone: {err}", group.rank());
                group.abandon();
                return Err(err);
            }
        }
    }
}
