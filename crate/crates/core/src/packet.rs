//! Network-layer packets shared by both routing protocols.

use std::fmt;

use crate::engine::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Link-layer destination.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Dest {
    Node(NodeId),
    Broadcast,
}

/// Hop list carried in the header of a source-routed packet, with the index
/// of the node the packet is currently addressed to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Routed {
    pub path: Vec<NodeId>,
    pub hop: usize,
}

impl Routed {
    pub fn new(path: Vec<NodeId>) -> Self {
        Routed { path, hop: 1 }
    }

    pub fn origin(&self) -> NodeId {
        self.path[0]
    }

    pub fn current(&self) -> NodeId {
        self.path[self.hop]
    }

    pub fn at_end(&self) -> bool {
        self.hop + 1 == self.path.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataHeader {
    /// CBR source of the logical packet.
    pub source: NodeId,
    /// Per-source sequence number, starting at 1.
    pub seq: u64,
    pub generated_at: SimTime,
    pub payload: u32,
    /// Present for DSR unicast copies.
    pub route: Option<Routed>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Body {
    Data(DataHeader),
    Rreq {
        origin: NodeId,
        target: NodeId,
        id: u64,
        route: Vec<NodeId>,
    },
    Rrep {
        /// Discovered path, origin first, target last.
        discovered: Vec<NodeId>,
        /// Return path from the replying node back to the origin.
        back: Routed,
    },
    Rerr {
        broken_from: NodeId,
        broken_to: NodeId,
        back: Routed,
    },
    Hello {
        neighbors: Vec<NodeId>,
    },
    Nack {
        source: NodeId,
        seq: u64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PacketKind {
    Data,
    Rreq,
    Rrep,
    Rerr,
    Hello,
    Nack,
}

impl PacketKind {
    pub fn is_routing(self) -> bool {
        !matches!(self, PacketKind::Data)
    }

    pub fn label(self) -> &'static str {
        match self {
            PacketKind::Data => "DATA",
            PacketKind::Rreq => "RREQ",
            PacketKind::Rrep => "RREP",
            PacketKind::Rerr => "RERR",
            PacketKind::Hello => "HELLO",
            PacketKind::Nack => "NACK",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Packet {
    /// Unique per originated packet; forwarded copies keep it.
    pub uid: u64,
    pub body: Body,
}

const ADDR_BYTES: u32 = 4;

fn list_bytes(n: usize) -> u32 {
    ADDR_BYTES * n as u32
}

impl Packet {
    pub fn new(uid: u64, body: Body) -> Self {
        Packet { uid, body }
    }

    pub fn kind(&self) -> PacketKind {
        match self.body {
            Body::Data(_) => PacketKind::Data,
            Body::Rreq { .. } => PacketKind::Rreq,
            Body::Rrep { .. } => PacketKind::Rrep,
            Body::Rerr { .. } => PacketKind::Rerr,
            Body::Hello { .. } => PacketKind::Hello,
            Body::Nack { .. } => PacketKind::Nack,
        }
    }

    /// Bytes above the fixed MAC/IP header.
    pub fn size_bytes(&self) -> u32 {
        match &self.body {
            Body::Data(h) => {
                h.payload + h.route.as_ref().map_or(0, |r| 4 + list_bytes(r.path.len()))
            }
            Body::Rreq { route, .. } => 8 + list_bytes(route.len()),
            Body::Rrep { discovered, back } => {
                8 + list_bytes(discovered.len()) + list_bytes(back.path.len())
            }
            Body::Rerr { back, .. } => 12 + list_bytes(back.path.len()),
            Body::Hello { neighbors } => 8 + list_bytes(neighbors.len()),
            Body::Nack { .. } => 12,
        }
    }

    pub fn data(&self) -> Option<&DataHeader> {
        match &self.body {
            Body::Data(h) => Some(h),
            _ => None,
        }
    }

    /// The source route this packet travels along, if any.
    pub fn routed(&self) -> Option<&Routed> {
        match &self.body {
            Body::Data(h) => h.route.as_ref(),
            Body::Rrep { back, .. } | Body::Rerr { back, .. } => Some(back),
            _ => None,
        }
    }

    pub fn routed_mut(&mut self) -> Option<&mut Routed> {
        match &mut self.body {
            Body::Data(h) => h.route.as_mut(),
            Body::Rrep { back, .. } | Body::Rerr { back, .. } => Some(back),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn data_size_includes_source_route() {
        let mut h = DataHeader {
            source: NodeId(0),
            seq: 1,
            generated_at: SimTime::ZERO,
            payload: 512,
            route: None,
        };
        assert_eq!(Packet::new(1, Body::Data(h.clone())).size_bytes(), 512);
        h.route = Some(Routed::new(vec![NodeId(0), NodeId(1), NodeId(2)]));
        assert_eq!(Packet::new(1, Body::Data(h)).size_bytes(), 512 + 4 + 12);
    }

    #[test]
    fn routing_kinds() {
        assert!(!PacketKind::Data.is_routing());
        for k in [
            PacketKind::Rreq,
            PacketKind::Rrep,
            PacketKind::Rerr,
            PacketKind::Hello,
            PacketKind::Nack,
        ] {
            assert!(k.is_routing());
        }
    }
}
