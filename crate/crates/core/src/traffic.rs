//! CBR group traffic: who sends, who listens, and when packets are made.

use std::collections::{BTreeSet, HashSet};

use rand::seq::index::sample;
use rand::Rng;

use crate::engine::{SimRng, SimTime};
use crate::error::SimError;
use crate::packet::{NodeId, Packet};

#[derive(Clone, Debug, PartialEq)]
pub struct GroupConfig {
    pub senders: Vec<NodeId>,
    pub receivers: Vec<NodeId>,
    /// Packets per second per sender.
    pub rate: f64,
    pub payload: u32,
    pub start: f64,
    pub stop: f64,
}

impl GroupConfig {
    /// Draws `n_senders` and `n_receivers` nodes without replacement, each
    /// set independently of the other.
    pub fn sample_members(
        node_count: u32,
        n_senders: u32,
        n_receivers: u32,
        rng: &mut SimRng,
    ) -> (Vec<NodeId>, Vec<NodeId>) {
        let pick = |k: u32, rng: &mut SimRng| -> Vec<NodeId> {
            let mut v: Vec<NodeId> = sample(rng, node_count as usize, k as usize)
                .into_iter()
                .map(|i| NodeId(i as u32))
                .collect();
            v.sort();
            v
        };
        let senders = pick(n_senders, rng);
        let receivers = pick(n_receivers, rng);
        (senders, receivers)
    }

    pub fn validate(&self, node_count: u32) -> Result<(), SimError> {
        for id in self.senders.iter().chain(&self.receivers) {
            if id.0 >= node_count {
                return Err(SimError::Scenario(format!("node {id} is not in the node set")));
            }
        }
        if !(self.rate > 0.0) {
            return Err(SimError::Scenario("traffic rate must be positive".into()));
        }
        Ok(())
    }

    /// Receivers of a packet from `sender`: everyone in the group but itself.
    pub fn unicast_fanout(&self, sender: NodeId) -> Vec<NodeId> {
        self.receivers.iter().copied().filter(|r| *r != sender).collect()
    }

    pub fn interval(&self) -> f64 {
        1.0 / self.rate
    }
}

/// One sender's generator: packet k leaves at `start + offset + k / rate`.
#[derive(Clone, Debug)]
pub struct CbrSource {
    pub sender: NodeId,
    pub offset: f64,
    /// Sequence number of the last packet generated.
    pub seq: u64,
}

impl CbrSource {
    /// Generators with per-sender phase offsets drawn uniformly from
    /// [0, 1/rate).
    pub fn for_group(group: &GroupConfig, rng: &mut SimRng) -> Vec<CbrSource> {
        group
            .senders
            .iter()
            .map(|s| CbrSource {
                sender: *s,
                offset: rng.random::<f64>() * group.interval(),
                seq: 0,
            })
            .collect()
    }

    /// Time of packet `k` (0-based), or None once past `stop`.
    pub fn time_of(&self, k: u64, group: &GroupConfig) -> Option<SimTime> {
        let t = group.start + self.offset + k as f64 * group.interval();
        (t < group.stop).then(|| SimTime::from_secs(t))
    }

    /// Every generation instant of this source.
    pub fn schedule(&self, group: &GroupConfig) -> Vec<SimTime> {
        (0..).map_while(|k| self.time_of(k, group)).collect()
    }
}

/// Application sinks: count each (receiver, source, seq) once, and only at
/// group receivers other than the source.
#[derive(Clone, Debug, Default)]
pub struct Sinks {
    members: BTreeSet<NodeId>,
    seen: HashSet<(NodeId, NodeId, u64)>,
}

impl Sinks {
    pub fn new(receivers: &[NodeId]) -> Self {
        Sinks {
            members: receivers.iter().copied().collect(),
            seen: HashSet::new(),
        }
    }

    /// True if this delivery counts.
    pub fn on_deliver(&mut self, packet: &Packet, node: NodeId) -> bool {
        let Some(h) = packet.data() else {
            return false;
        };
        if !self.members.contains(&node) || h.source == node {
            return false;
        }
        self.seen.insert((node, h.source, h.seq))
    }
}
