//! Neighbor-knowledge broadcast.
//!
//! Periodic Hellos give every node its 1-hop neighbors and their advertised
//! neighbor lists. A node rebroadcasts a packet only when some of its own
//! neighbors were not covered by the transmitter, after a random delay
//! scaled by MAX/N, and drops the pending rebroadcast if later copies cover
//! the rest. Each node buffers the last X packets per source and repairs
//! single gaps with NACK(N-1, A).

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use rand::Rng;

use crate::engine::{EventHandle, SimRng, SimTime};
use crate::packet::{Body, Dest, NodeId, Packet};
use crate::routing::{NetAction, NetCtx, RoutingTimer};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BcastParams {
    /// Time scale of the MAX/N rebroadcast delay, seconds.
    pub delay_unit: f64,
    pub hello_interval: f64,
    /// Hello period jitter as a fraction of the interval.
    pub hello_jitter: f64,
    /// Seconds without a Hello before a neighbor is forgotten.
    pub hello_expiry: f64,
    /// Packets buffered per source (X).
    pub buffer_size: usize,
    /// Upper bound of NACK and retransmission jitter, seconds.
    pub nack_jitter: f64,
    pub nack_retries: u32,
    /// Wait for the repair before asking again, seconds.
    pub nack_timeout: f64,
}

impl Default for BcastParams {
    fn default() -> Self {
        BcastParams {
            delay_unit: 0.01,
            hello_interval: 1.0,
            hello_jitter: 0.1,
            hello_expiry: 3.0,
            buffer_size: 16,
            nack_jitter: 0.01,
            nack_retries: 2,
            nack_timeout: 0.05,
        }
    }
}

/// (source, sequence) of a broadcast data packet.
pub type PacketKey = (NodeId, u64);

#[derive(Clone, Debug)]
struct Neighbor {
    last_heard: SimTime,
    advertised: BTreeSet<NodeId>,
}

/// 1-hop neighbors with the lists they advertise, expiring after silence.
#[derive(Clone, Debug)]
pub struct NeighborTable {
    expiry: f64,
    entries: BTreeMap<NodeId, Neighbor>,
}

impl NeighborTable {
    pub fn new(expiry: f64) -> Self {
        NeighborTable {
            expiry,
            entries: BTreeMap::new(),
        }
    }

    pub fn update(&mut self, from: NodeId, neighbors: &[NodeId], now: SimTime) {
        self.entries.insert(
            from,
            Neighbor {
                last_heard: now,
                advertised: neighbors.iter().copied().collect(),
            },
        );
    }

    fn live(&self, now: SimTime) -> impl Iterator<Item = (&NodeId, &Neighbor)> {
        self.entries
            .iter()
            .filter(move |(_, n)| now - n.last_heard <= self.expiry)
    }

    pub fn one_hop(&self, now: SimTime) -> BTreeSet<NodeId> {
        self.live(now).map(|(id, _)| *id).collect()
    }

    pub fn advertised(&self, node: NodeId, now: SimTime) -> Option<&BTreeSet<NodeId>> {
        self.entries
            .get(&node)
            .filter(|n| now - n.last_heard <= self.expiry)
            .map(|n| &n.advertised)
    }

    pub fn two_hop(&self, now: SimTime) -> BTreeSet<NodeId> {
        self.live(now)
            .flat_map(|(_, n)| n.advertised.iter().copied())
            .collect()
    }

    pub fn degree(&self, now: SimTime) -> usize {
        self.live(now).count()
    }

    /// Largest degree advertised by any live neighbor (MAX).
    pub fn max_neighbor_degree(&self, now: SimTime) -> usize {
        self.live(now)
            .map(|(_, n)| n.advertised.len())
            .max()
            .unwrap_or(0)
    }

    pub fn purge(&mut self, now: SimTime) {
        let expiry = self.expiry;
        self.entries.retain(|_, n| now - n.last_heard <= expiry);
    }
}

/// Most recent X packets per source, evicting the lowest sequence first.
#[derive(Clone, Debug)]
pub struct PacketBuffer {
    capacity: usize,
    per_source: BTreeMap<NodeId, BTreeMap<u64, Packet>>,
}

impl PacketBuffer {
    pub fn new(capacity: usize) -> Self {
        PacketBuffer {
            capacity,
            per_source: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, key: PacketKey, packet: Packet) {
        if self.capacity == 0 {
            return;
        }
        let ring = self.per_source.entry(key.0).or_default();
        ring.insert(key.1, packet);
        while ring.len() > self.capacity {
            ring.pop_first();
        }
    }

    pub fn get(&self, key: PacketKey) -> Option<&Packet> {
        self.per_source.get(&key.0)?.get(&key.1)
    }

    pub fn len_for(&self, source: NodeId) -> usize {
        self.per_source.get(&source).map_or(0, BTreeMap::len)
    }
}

/// Rebroadcast delay: uniform(0, 1) x MAX/N x `delay_unit`.
///
/// An isolated node (N = 0) uses one unit; MAX = 0 (neighbors that have not
/// advertised anyone yet) is treated as ratio 1.
pub fn compute_delay(n: usize, max: usize, delay_unit: f64, rng: &mut SimRng) -> f64 {
    let ratio = if n == 0 || max == 0 {
        1.0
    } else {
        max as f64 / n as f64
    };
    rng.random::<f64>() * ratio * delay_unit
}

#[derive(Clone, Debug, PartialEq)]
pub enum BcastTimer {
    Hello,
    Rebroadcast { source: NodeId, seq: u64 },
    NackSend { source: NodeId, seq: u64 },
    NackRetry { source: NodeId, seq: u64 },
    Retransmit { source: NodeId, seq: u64 },
}

#[derive(Debug)]
struct Pending {
    handle: EventHandle,
    covered: BTreeSet<NodeId>,
}

/// A rebroadcast or retransmission handed to the MAC but possibly still
/// waiting in the interface queue.
#[derive(Debug)]
enum Queued {
    Rebroadcast(BTreeSet<NodeId>),
    Retransmit,
}

#[derive(Debug)]
struct NackState {
    attempts: u32,
    handle: Option<EventHandle>,
}

/// Outcome of the coverage check for the first copy of a packet.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Forward {
    Drop,
    Schedule(f64),
}

pub struct BcastAgent {
    me: NodeId,
    params: BcastParams,
    table: NeighborTable,
    buffer: PacketBuffer,
    seen: HashSet<PacketKey>,
    first_seen: HashMap<NodeId, u64>,
    pending: HashMap<PacketKey, Pending>,
    nacks: HashMap<PacketKey, NackState>,
    retransmits: HashMap<PacketKey, EventHandle>,
    queued: HashMap<PacketKey, Queued>,
    next_seq: u64,
    rebroadcasts: u64,
    nacks_sent: u64,
    retransmissions: u64,
}

fn timer(t: BcastTimer) -> RoutingTimer {
    RoutingTimer::Bcast(t)
}

impl BcastAgent {
    pub fn new(me: NodeId, params: BcastParams) -> Self {
        BcastAgent {
            me,
            params,
            table: NeighborTable::new(params.hello_expiry),
            buffer: PacketBuffer::new(params.buffer_size),
            seen: HashSet::new(),
            first_seen: HashMap::new(),
            pending: HashMap::new(),
            nacks: HashMap::new(),
            retransmits: HashMap::new(),
            queued: HashMap::new(),
            next_seq: 0,
            rebroadcasts: 0,
            nacks_sent: 0,
            retransmissions: 0,
        }
    }

    pub fn table(&self) -> &NeighborTable {
        &self.table
    }

    pub fn table_mut(&mut self) -> &mut NeighborTable {
        &mut self.table
    }

    pub fn buffer(&self) -> &PacketBuffer {
        &self.buffer
    }

    pub fn has_pending(&self, key: PacketKey) -> bool {
        self.pending.contains_key(&key)
    }

    pub fn has_seen(&self, key: PacketKey) -> bool {
        self.seen.contains(&key)
    }

    pub fn rebroadcasts(&self) -> u64 {
        self.rebroadcasts
    }

    pub fn nacks_sent(&self) -> u64 {
        self.nacks_sent
    }

    pub fn retransmissions(&self) -> u64 {
        self.retransmissions
    }

    /// Sequence number for the next packet this node originates.
    pub fn next_sequence(&mut self) -> u64 {
        self.next_seq += 1;
        self.next_seq
    }

    pub fn start(&mut self, ctx: &mut NetCtx) {
        let first = ctx.rng.random::<f64>() * self.params.hello_interval;
        ctx.schedule(first, timer(BcastTimer::Hello));
    }

    pub fn hello(&self, now: SimTime) -> Body {
        Body::Hello {
            neighbors: self.table.one_hop(now).into_iter().collect(),
        }
    }

    fn emit_hello(&mut self, ctx: &mut NetCtx) {
        self.table.purge(ctx.now);
        let uid = ctx.uid();
        ctx.send(Packet::new(uid, self.hello(ctx.now)), Dest::Broadcast);
        let j = self.params.hello_jitter;
        let period = self.params.hello_interval * (1.0 + j * (2.0 * ctx.rng.random::<f64>() - 1.0));
        ctx.schedule(period, timer(BcastTimer::Hello));
    }

    pub fn originate(&mut self, packet: Packet, ctx: &mut NetCtx) {
        let h = packet.data().expect("broadcast origination carries data");
        let key = (h.source, h.seq);
        self.seen.insert(key);
        self.first_seen.entry(key.0).or_insert(key.1);
        self.buffer.insert(key, packet.clone());
        ctx.send(packet, Dest::Broadcast);
    }

    pub fn receive(&mut self, packet: Packet, from: NodeId, ctx: &mut NetCtx) {
        match &packet.body {
            Body::Hello { neighbors } => self.table.update(from, neighbors, ctx.now),
            Body::Nack { source, seq } => self.serve_nack((*source, *seq), ctx),
            Body::Data(h) => {
                let key = (h.source, h.seq);
                self.on_data(key, packet, from, ctx);
            }
            _ => {}
        }
    }

    fn on_data(&mut self, key: PacketKey, packet: Packet, from: NodeId, ctx: &mut NetCtx) {
        if let Some(h) = self.retransmits.remove(&key) {
            ctx.cancel(h);
        }
        if !self.seen.insert(key) {
            if self.pending.contains_key(&key) {
                self.recheck_on_duplicate(key, from, ctx);
            } else if self.queued.contains_key(&key) {
                self.recheck_queued(key, from, ctx);
            }
            return;
        }
        if let Some(n) = self.nacks.get_mut(&key) {
            if let Some(h) = n.handle.take() {
                ctx.cancel(h);
            }
            if n.attempts > 0 {
                ctx.out.push(NetAction::Withdraw {
                    source: key.0,
                    seq: key.1,
                });
            }
        }
        self.buffer.insert(key, packet.clone());
        let buffer = &self.buffer;
        self.queued
            .retain(|k, _| k.0 != key.0 || buffer.get(*k).is_some());
        self.detect_gap(key, ctx);
        if key.0 != self.me {
            ctx.deliver(packet.clone());
        }
        match self.forward_decision(from, ctx.now, ctx.rng) {
            Forward::Drop => {}
            Forward::Schedule(delay) => {
                let handle = ctx.schedule(
                    delay,
                    timer(BcastTimer::Rebroadcast {
                        source: key.0,
                        seq: key.1,
                    }),
                );
                let covered = self.covered_by(from, ctx.now);
                self.pending.insert(key, Pending { handle, covered });
            }
        }
    }

    fn covered_by(&self, sender: NodeId, now: SimTime) -> BTreeSet<NodeId> {
        let mut covered: BTreeSet<NodeId> = self
            .table
            .advertised(sender, now)
            .cloned()
            .unwrap_or_default();
        covered.insert(sender);
        covered
    }

    /// Coverage check for the first copy of a packet heard from `sender`.
    pub fn forward_decision(&self, sender: NodeId, now: SimTime, rng: &mut SimRng) -> Forward {
        let covered = self.covered_by(sender, now);
        let mine = self.table.one_hop(now);
        if mine.iter().all(|n| covered.contains(n) || *n == self.me) {
            return Forward::Drop;
        }
        Forward::Schedule(compute_delay(
            mine.len(),
            self.table.max_neighbor_degree(now),
            self.params.delay_unit,
            rng,
        ))
    }

    fn recheck_on_duplicate(&mut self, key: PacketKey, from: NodeId, ctx: &mut NetCtx) {
        let extra = self.covered_by(from, ctx.now);
        let mine = self.table.one_hop(ctx.now);
        let Some(p) = self.pending.get_mut(&key) else {
            return;
        };
        p.covered.extend(extra);
        if mine.iter().all(|n| p.covered.contains(n) || *n == self.me) {
            let p = self.pending.remove(&key).expect("present");
            ctx.cancel(p.handle);
        }
    }

    /// A copy heard while our own is still queued: a retransmission is no
    /// longer needed, a rebroadcast only if it would still reach someone new.
    fn recheck_queued(&mut self, key: PacketKey, from: NodeId, ctx: &mut NetCtx) {
        let extra = self.covered_by(from, ctx.now);
        let mine = self.table.one_hop(ctx.now);
        let withdraw = match self.queued.get_mut(&key) {
            Some(Queued::Retransmit) => true,
            Some(Queued::Rebroadcast(covered)) => {
                covered.extend(extra);
                mine.iter().all(|n| covered.contains(n) || *n == self.me)
            }
            None => false,
        };
        if withdraw {
            self.queued.remove(&key);
            ctx.out.push(NetAction::Withdraw {
                source: key.0,
                seq: key.1,
            });
        }
    }

    /// Asks for N-1 when it was never received. The first packet seen from a
    /// source has no predecessor to ask for.
    fn detect_gap(&mut self, (source, seq): PacketKey, ctx: &mut NetCtx) {
        let first = *self.first_seen.entry(source).or_insert(seq);
        if seq <= first || seq < 2 {
            return;
        }
        let missing = (source, seq - 1);
        if self.seen.contains(&missing) || self.nacks.contains_key(&missing) {
            return;
        }
        let delay = self.nack_delay(ctx.rng);
        let handle = ctx.schedule(
            delay,
            timer(BcastTimer::NackSend {
                source,
                seq: seq - 1,
            }),
        );
        self.nacks.insert(
            missing,
            NackState {
                attempts: 0,
                handle: Some(handle),
            },
        );
    }

    fn nack_delay(&self, rng: &mut SimRng) -> f64 {
        // uniform on (0, jitter]
        (1.0 - rng.random::<f64>()) * self.params.nack_jitter
    }

    fn serve_nack(&mut self, key: PacketKey, ctx: &mut NetCtx) {
        if self.buffer.get(key).is_none() || self.retransmits.contains_key(&key) {
            return;
        }
        let delay = self.nack_delay(ctx.rng);
        let handle = ctx.schedule(
            delay,
            timer(BcastTimer::Retransmit {
                source: key.0,
                seq: key.1,
            }),
        );
        self.retransmits.insert(key, handle);
    }

    pub fn on_timer(&mut self, t: BcastTimer, ctx: &mut NetCtx) {
        match t {
            BcastTimer::Hello => self.emit_hello(ctx),
            BcastTimer::Rebroadcast { source, seq } => {
                let key = (source, seq);
                if let Some(pending) = self.pending.remove(&key) {
                    if let Some(p) = self.buffer.get(key).cloned() {
                        self.rebroadcasts += 1;
                        self.queued.insert(key, Queued::Rebroadcast(pending.covered));
                        ctx.send(p, Dest::Broadcast);
                    }
                }
            }
            BcastTimer::NackSend { source, seq } => {
                let key = (source, seq);
                if self.seen.contains(&key) {
                    return;
                }
                let Some(n) = self.nacks.get_mut(&key) else {
                    return;
                };
                n.attempts += 1;
                self.nacks_sent += 1;
                let uid = ctx.uid();
                ctx.send(Packet::new(uid, Body::Nack { source, seq }), Dest::Broadcast);
                n.handle = Some(ctx.schedule(
                    self.params.nack_timeout,
                    timer(BcastTimer::NackRetry { source, seq }),
                ));
            }
            BcastTimer::NackRetry { source, seq } => {
                let key = (source, seq);
                let Some(n) = self.nacks.get_mut(&key) else {
                    return;
                };
                n.handle = None;
                if self.seen.contains(&key) || n.attempts >= self.params.nack_retries {
                    return;
                }
                let delay = (1.0 - ctx.rng.random::<f64>()) * self.params.nack_jitter;
                let handle = ctx.schedule(delay, timer(BcastTimer::NackSend { source, seq }));
                if let Some(n) = self.nacks.get_mut(&key) {
                    n.handle = Some(handle);
                }
            }
            BcastTimer::Retransmit { source, seq } => {
                let key = (source, seq);
                if self.retransmits.remove(&key).is_some() {
                    if let Some(p) = self.buffer.get(key).cloned() {
                        self.retransmissions += 1;
                        self.queued.entry(key).or_insert(Queued::Retransmit);
                        ctx.send(p, Dest::Broadcast);
                    }
                }
            }
        }
    }
}
