//! Single-erasure XOR parity over a group of payloads.
//!
//! Payloads are zero-padded to the longest member and XORed byte by byte.
//! Given the parity block, the true lengths and all but one payload, the
//! missing payload is recovered by XORing the survivors into the parity and
//! truncating to the recorded length.

use crate::error::{CraftError, Result};

/// Parity bytes plus the true length of every covered payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParityBlock {
    pub bytes: Vec<u8>,
    pub lengths: Vec<usize>,
}

pub fn parity<P: AsRef<[u8]>>(payloads: &[P]) -> ParityBlock {
    let width = payloads.iter().map(|p| p.as_ref().len()).max().unwrap_or(0);
    let mut bytes = vec![0u8; width];
    for p in payloads {
        xor_into(&mut bytes, p.as_ref());
    }
    ParityBlock { bytes, lengths: payloads.iter().map(|p| p.as_ref().len()).collect() }
}

fn xor_into(acc: &mut [u8], src: &[u8]) {
    for (a, b) in acc.iter_mut().zip(src) {
        *a ^= b;
    }
}

/// Rebuild the single missing member of a parity group.
///
/// `members[i]` is `None` for erased payloads. Returns the member index and
/// its recovered bytes, or `None` when nothing is missing.
pub fn reconstruct(
    members: &[Option<&[u8]>],
    parity: &ParityBlock,
) -> Result<Option<(usize, Vec<u8>)>> {
    if members.len() != parity.lengths.len() {
        return Err(CraftError::Unrecoverable(format!(
            "parity covers {} members, got {}",
            parity.lengths.len(),
            members.len()
        )));
    }
    let missing: Vec<usize> =
        members.iter().enumerate().filter(|(_, m)| m.is_none()).map(|(i, _)| i).collect();
    match missing.as_slice() {
        [] => Ok(None),
        [lost] => {
            let mut acc = parity.bytes.clone();
            for m in members.iter().flatten() {
                xor_into(&mut acc, m);
            }
            acc.truncate(parity.lengths[*lost]);
            Ok(Some((*lost, acc)))
        }
        many => Err(CraftError::Unrecoverable(format!(
            "{} members of a parity group lost",
            many.len()
        ))),
    }
}
