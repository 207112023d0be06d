//! Group-level message envelope.
//!
//! ```text
//! kind u8 | epoch u64 | tag u64 | payload
//! ```

use serde::{Deserialize, Serialize};

use super::{NodeLedger, RecoveryRecord};
use crate::error::CommError;
use crate::transport::{EndpointId, Member};

/// Tag of the consensus instance that decides a recovery.
pub(crate) const RECOVERY_TAG: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Kind {
    App = 1,
    Coll = 2,
    Revoke = 3,
    Propose = 4,
    Decided = 5,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Msg {
    pub kind: Kind,
    pub epoch: u64,
    pub tag: u64,
    pub payload: Vec<u8>,
}

impl Msg {
    pub fn new(kind: Kind, epoch: u64, tag: u64, payload: Vec<u8>) -> Self {
        Msg { kind, epoch, tag, payload }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(17 + self.payload.len());
        b.push(self.kind as u8);
        b.extend_from_slice(&self.epoch.to_le_bytes());
        b.extend_from_slice(&self.tag.to_le_bytes());
        b.extend_from_slice(&self.payload);
        b
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CommError> {
        if bytes.len() < 17 {
            return Err(CommError::Protocol(format!("message of {} bytes", bytes.len())));
        }
        let kind = match bytes[0] {
            1 => Kind::App,
            2 => Kind::Coll,
            3 => Kind::Revoke,
            4 => Kind::Propose,
            5 => Kind::Decided,
            k => return Err(CommError::Protocol(format!("unknown message kind {k}"))),
        };
        Ok(Msg {
            kind,
            epoch: u64::from_le_bytes(bytes[1..9].try_into().unwrap()),
            tag: u64::from_le_bytes(bytes[9..17].try_into().unwrap()),
            payload: bytes[17..].to_vec(),
        })
    }

    /// Messages that only exist while a group is being recovered.
    pub fn is_recovery(&self) -> bool {
        self.kind == Kind::Revoke
            || (self.tag == RECOVERY_TAG && matches!(self.kind, Kind::Propose | Kind::Decided))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub(crate) struct Proposal {
    pub flag: u64,
    pub failed: Vec<EndpointId>,
}

/// Membership of a group from one epoch on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct View {
    pub epoch: u64,
    pub members: Vec<Member>,
    pub ledger: NodeLedger,
    pub history: Vec<RecoveryRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Decision {
    pub flag: u64,
    pub failed: Vec<EndpointId>,
    pub view: Option<View>,
}

pub(crate) fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    serde_json::to_vec(v).expect("serializable")
}

pub(crate) fn from_json<'a, T: Deserialize<'a>>(b: &'a [u8]) -> Result<T, CommError> {
    serde_json::from_slice(b).map_err(|e| CommError::Protocol(e.to_string()))
}

pub(crate) fn encode_f64s(v: &[f64]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

pub(crate) fn decode_f64s(b: &[u8]) -> Vec<f64> {
    b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()
}
