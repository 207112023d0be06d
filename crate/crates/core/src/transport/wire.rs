//! Frames exchanged between worker processes and the launcher hub.
//!
//! Every frame is a 4-byte little-endian length followed by that many bytes
//! of payload. The payload starts with a one-byte frame type; integers are
//! little-endian.

use std::io::{self, ErrorKind, Read, Write};

use super::{EndpointId, FailureTarget, Member, NodeId};

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Frame {
    Hello { endpoint: EndpointId, node: NodeId, generation: u64 },
    /// Worker to hub: `peer` is the destination. Hub to worker: the source.
    Data { peer: EndpointId, bytes: Vec<u8> },
    Heartbeat,
    Failed { endpoint: EndpointId },
    SpawnRequest { request: u64, nodes: Vec<NodeId> },
    SpawnReply { request: u64, members: Vec<Member> },
    Kill { target: FailureTarget },
    Bye,
}

const MAX_FRAME: usize = 1 << 30;

struct Reader<'a>(&'a [u8]);

impl Reader<'_> {
    fn take(&mut self, n: usize) -> io::Result<&[u8]> {
        if self.0.len() < n {
            return Err(io::Error::new(ErrorKind::InvalidData, "short frame"));
        }
        let (head, tail) = self.0.split_at(n);
        self.0 = tail;
        Ok(head)
    }

    fn u8(&mut self) -> io::Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> io::Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> io::Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

impl Frame {
    pub(crate) fn encode(&self) -> Vec<u8> {
        let mut b = Vec::new();
        match self {
            Frame::Hello { endpoint, node, generation } => {
                b.push(1);
                b.extend_from_slice(&endpoint.0.to_le_bytes());
                b.extend_from_slice(&node.to_le_bytes());
                b.extend_from_slice(&generation.to_le_bytes());
            }
            Frame::Data { peer, bytes } => {
                b.push(2);
                b.extend_from_slice(&peer.0.to_le_bytes());
                b.extend_from_slice(bytes);
            }
            Frame::Heartbeat => b.push(3),
            Frame::Failed { endpoint } => {
                b.push(4);
                b.extend_from_slice(&endpoint.0.to_le_bytes());
            }
            Frame::SpawnRequest { request, nodes } => {
                b.push(5);
                b.extend_from_slice(&request.to_le_bytes());
                b.extend_from_slice(&(nodes.len() as u32).to_le_bytes());
                for n in nodes {
                    b.extend_from_slice(&n.to_le_bytes());
                }
            }
            Frame::SpawnReply { request, members } => {
                b.push(6);
                b.extend_from_slice(&request.to_le_bytes());
                b.extend_from_slice(&(members.len() as u32).to_le_bytes());
                for m in members {
                    b.extend_from_slice(&m.endpoint.0.to_le_bytes());
                    b.extend_from_slice(&m.node.to_le_bytes());
                }
            }
            Frame::Kill { target } => {
                b.push(7);
                match target {
                    FailureTarget::Rank(ep) => {
                        b.push(0);
                        b.extend_from_slice(&ep.0.to_le_bytes());
                    }
                    FailureTarget::Node(n) => {
                        b.push(1);
                        b.extend_from_slice(&(*n as u64).to_le_bytes());
                    }
                }
            }
            Frame::Bye => b.push(8),
        }
        b
    }

    pub(crate) fn decode(bytes: &[u8]) -> io::Result<Frame> {
        let mut r = Reader(bytes);
        let frame = match r.u8()? {
            1 => Frame::Hello { endpoint: EndpointId(r.u64()?), node: r.u32()?, generation: r.u64()? },
            2 => {
                let peer = EndpointId(r.u64()?);
                Frame::Data { peer, bytes: r.0.to_vec() }
            }
            3 => Frame::Heartbeat,
            4 => Frame::Failed { endpoint: EndpointId(r.u64()?) },
            5 => {
                let request = r.u64()?;
                let n = r.u32()? as usize;
                let nodes = (0..n).map(|_| r.u32()).collect::<io::Result<_>>()?;
                Frame::SpawnRequest { request, nodes }
            }
            6 => {
                let request = r.u64()?;
                let n = r.u32()? as usize;
                let members = (0..n)
                    .map(|_| Ok(Member { endpoint: EndpointId(r.u64()?), node: r.u32()? }))
                    .collect::<io::Result<_>>()?;
                Frame::SpawnReply { request, members }
            }
            7 => {
                let kind = r.u8()?;
                let v = r.u64()?;
                let target = if kind == 0 { FailureTarget::Rank(EndpointId(v)) } else { FailureTarget::Node(v as NodeId) };
                Frame::Kill { target }
            }
            8 => Frame::Bye,
            t => return Err(io::Error::new(ErrorKind::InvalidData, format!("unknown frame type {t}"))),
        };
        Ok(frame)
    }
}

pub(crate) fn write_frame(w: &mut impl Write, frame: &Frame) -> io::Result<()> {
    let payload = frame.encode();
    let mut buf = Vec::with_capacity(payload.len() + 4);
    buf.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    buf.extend_from_slice(&payload);
    w.write_all(&buf)?;
    w.flush()
}

/// Read one frame; `None` on a clean end of stream.
pub(crate) fn read_frame(r: &mut impl Read) -> io::Result<Option<Frame>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_le_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(io::Error::new(ErrorKind::InvalidData, format!("frame of {len} bytes")));
    }
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload)?;
    Frame::decode(&payload).map(Some)
}
