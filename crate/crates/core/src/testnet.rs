//! Routing-agent test bench: agents joined by a lossless wire over a fixed
//! adjacency list, with no MAC and no radio. Unicast sends to a node that is
//! not adjacent come back as link failures.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use crate::bcast::{BcastAgent, BcastParams};
use crate::dsr::{DsrAgent, DsrParams};
use crate::engine::{EventQueue, RngStreams, SimRng, SimTime};
use crate::metrics::MetricsLedger;
use crate::packet::{Body, DataHeader, Dest, NodeId, Packet, PacketKind};
use crate::routing::{Agent, NetAction, NetCtx};
use crate::sim::Event;

const LATENCY: f64 = 1e-5;

enum Wire {
    Deliver { to: NodeId, packet: Packet, from: NodeId },
    Fail { at: NodeId, packet: Packet, next_hop: NodeId },
}

pub struct TestNet {
    queue: EventQueue<Event>,
    rng: SimRng,
    ledger: MetricsLedger,
    agents: Vec<Agent>,
    adj: BTreeSet<(u32, u32)>,
    wire: BTreeMap<(SimTime, u64), Wire>,
    wire_seq: u64,
    next_uid: u64,
    drops: HashSet<(u32, u32, u64)>,
    sent: Vec<(NodeId, Packet)>,
    delivered: Vec<(NodeId, u64)>,
}

pub fn data_packet(uid: u64, source: u32, seq: u64) -> Packet {
    Packet::new(
        uid,
        Body::Data(DataHeader {
            source: NodeId(source),
            seq,
            generated_at: SimTime::ZERO,
            payload: 512,
            route: None,
        }),
    )
}

impl TestNet {
    fn build(agents: Vec<Agent>, edges: &[(u32, u32)]) -> Self {
        let mut net = TestNet {
            queue: EventQueue::new(),
            rng: RngStreams::new(1).stream("testnet"),
            ledger: MetricsLedger::default(),
            agents,
            adj: BTreeSet::new(),
            wire: BTreeMap::new(),
            wire_seq: 0,
            next_uid: 1_000_000,
            drops: HashSet::new(),
            sent: Vec::new(),
            delivered: Vec::new(),
        };
        for &(a, b) in edges {
            net.adj.insert((a.min(b), a.max(b)));
        }
        for i in 0..net.agents.len() {
            net.with_agent(i as u32, |a, ctx| a.start(ctx));
        }
        net
    }

    pub fn new_dsr(n: u32, edges: &[(u32, u32)]) -> Self {
        let agents = (0..n)
            .map(|i| Agent::Dsr(DsrAgent::new(NodeId(i), DsrParams::default())))
            .collect();
        Self::build(agents, edges)
    }

    pub fn line_dsr(n: u32) -> Self {
        let edges: Vec<(u32, u32)> = (1..n).map(|i| (i - 1, i)).collect();
        Self::new_dsr(n, &edges)
    }

    pub fn new_bcast(n: u32, edges: &[(u32, u32)]) -> Self {
        Self::with_bcast_params(n, edges, BcastParams::default())
    }

    pub fn with_bcast_params(n: u32, edges: &[(u32, u32)], params: BcastParams) -> Self {
        let agents = (0..n)
            .map(|i| Agent::Bcast(BcastAgent::new(NodeId(i), params)))
            .collect();
        Self::build(agents, edges)
    }

    pub fn dsr(&self, i: u32) -> &DsrAgent {
        self.agents[i as usize].as_dsr().expect("dsr agent")
    }

    pub fn dsr_mut(&mut self, i: u32) -> &mut DsrAgent {
        match &mut self.agents[i as usize] {
            Agent::Dsr(d) => d,
            _ => panic!("not a dsr agent"),
        }
    }

    pub fn bcast(&self, i: u32) -> &BcastAgent {
        self.agents[i as usize].as_bcast().expect("bcast agent")
    }

    fn adjacent(&self, a: NodeId, b: NodeId) -> bool {
        self.adj.contains(&(a.0.min(b.0), a.0.max(b.0)))
    }

    pub fn cut_link(&mut self, a: u32, b: u32) {
        self.adj.remove(&(a.min(b), a.max(b)));
    }

    /// Silently discards the next copy of (source, seq) arriving at `node`.
    pub fn drop_at(&mut self, node: u32, source: u32, seq: u64) {
        self.drops.insert((node, source, seq));
    }

    fn with_agent(&mut self, i: u32, f: impl FnOnce(&mut Agent, &mut NetCtx)) {
        let mut out = Vec::new();
        {
            let mut ctx = NetCtx {
                now: self.queue.now(),
                me: NodeId(i),
                queue: &mut self.queue,
                rng: &mut self.rng,
                ledger: &mut self.ledger,
                out: &mut out,
                next_uid: &mut self.next_uid,
            };
            f(&mut self.agents[i as usize], &mut ctx);
        }
        for action in out {
            self.apply(NodeId(i), action);
        }
    }

    fn push_wire(&mut self, item: Wire) {
        self.wire_seq += 1;
        let at = self.queue.now() + LATENCY;
        self.wire.insert((at, self.wire_seq), item);
    }

    fn apply(&mut self, me: NodeId, action: NetAction) {
        match action {
            NetAction::Send {
                packet, next_hop, ..
            } => self.transmit(me, packet, next_hop),
            NetAction::Deliver(p) => {
                let seq = p.data().map_or(0, |h| h.seq);
                self.delivered.push((me, seq));
            }
            NetAction::FlushNextHop(_) | NetAction::Withdraw { .. } => {}
        }
    }

    fn transmit(&mut self, me: NodeId, packet: Packet, next_hop: Dest) {
        self.sent.push((me, packet.clone()));
        match next_hop {
            Dest::Broadcast => {
                let n = self.agents.len() as u32;
                for j in 0..n {
                    if j != me.0 && self.adjacent(me, NodeId(j)) {
                        self.push_wire(Wire::Deliver {
                            to: NodeId(j),
                            packet: packet.clone(),
                            from: me,
                        });
                    }
                }
            }
            Dest::Node(to) if self.adjacent(me, to) => {
                let n = self.agents.len() as u32;
                for j in 0..n {
                    if j != me.0 && j != to.0 && self.adjacent(me, NodeId(j)) {
                        let p = packet.clone();
                        let from = me;
                        self.with_agent(j, |a, ctx| a.overhear(p, from, ctx));
                    }
                }
                self.push_wire(Wire::Deliver {
                    to,
                    packet,
                    from: me,
                });
            }
            Dest::Node(to) => self.push_wire(Wire::Fail {
                at: me,
                packet,
                next_hop: to,
            }),
        }
    }

    pub fn originate_dsr(&mut self, src: u32, dst: u32, seq: u64) {
        let p = self.data(src, seq);
        self.with_agent(src, |a, ctx| a.originate(p, Some(NodeId(dst)), ctx));
    }

    pub fn originate_bcast(&mut self, src: u32, seq: u64) {
        let p = self.data(src, seq);
        self.with_agent(src, |a, ctx| a.originate(p, None, ctx));
    }

    fn data(&mut self, src: u32, seq: u64) -> Packet {
        self.next_uid += 1;
        let mut p = data_packet(self.next_uid, src, seq);
        if let Body::Data(h) = &mut p.body {
            h.generated_at = self.queue.now();
        }
        p
    }

    /// A data packet from `source` with a fresh uid, for hand delivery.
    pub fn bcast_data(&self, source: u32, seq: u64) -> Packet {
        data_packet(500_000 + seq, source, seq)
    }

    pub fn deliver_to(&mut self, node: u32, packet: Packet, from: u32) {
        self.with_agent(node, |a, ctx| a.receive(packet, NodeId(from), ctx));
    }

    pub fn overhear_at(&mut self, node: u32, packet: &Packet, from: u32) {
        let p = packet.clone();
        self.with_agent(node, |a, ctx| a.overhear(p, NodeId(from), ctx));
    }

    /// Puts `packet` on the wire as a broadcast from `node`.
    pub fn broadcast_from(&mut self, node: u32, packet: Packet) {
        self.transmit(NodeId(node), packet, Dest::Broadcast);
    }

    pub fn run(&mut self, until: f64) {
        let end = SimTime::from_secs(until);
        loop {
            let tw = self.wire.keys().next().map(|k| k.0);
            let tq = self.queue.peek_time();
            let wire_first = match (tw, tq) {
                (Some(w), Some(q)) => w <= q,
                (Some(_), None) => true,
                (None, Some(_)) => false,
                (None, None) => break,
            };
            if wire_first {
                let (&key, _) = self.wire.iter().next().expect("non-empty");
                if key.0 > end {
                    break;
                }
                let item = self.wire.remove(&key).expect("present");
                self.queue.advance_to(key.0);
                self.on_wire(item);
            } else {
                let tq = tq.expect("checked");
                if tq > end {
                    break;
                }
                if let Some((_, ev)) = self.queue.pop_until(tq) {
                    if let Event::Routing { node, timer } = ev {
                        self.with_agent(node.0, |a, ctx| a.on_timer(timer, ctx));
                    }
                }
            }
        }
        self.queue.advance_to(end);
    }

    fn on_wire(&mut self, item: Wire) {
        match item {
            Wire::Deliver { to, packet, from } => {
                if let Some(h) = packet.data() {
                    if self.drops.remove(&(to.0, h.source.0, h.seq)) {
                        return;
                    }
                }
                self.with_agent(to.0, |a, ctx| a.receive(packet, from, ctx));
            }
            Wire::Fail {
                at,
                packet,
                next_hop,
            } => self.with_agent(at.0, |a, ctx| a.link_failure(packet, next_hop, ctx)),
        }
    }

    pub fn count_sent(&self, label: &str) -> usize {
        self.sent.iter().filter(|(_, p)| p.kind().label() == label).count()
    }

    pub fn count_kind(&self, kind: PacketKind) -> usize {
        self.sent.iter().filter(|(_, p)| p.kind() == kind).count()
    }

    pub fn sent_by(&self, node: u32, label: &str) -> usize {
        self.sent
            .iter()
            .filter(|(n, p)| n.0 == node && p.kind().label() == label)
            .count()
    }

    pub fn sent_bodies(&self, label: &str) -> Vec<Body> {
        self.sent
            .iter()
            .filter(|(_, p)| p.kind().label() == label)
            .map(|(_, p)| p.body.clone())
            .collect()
    }

    /// Sequence numbers handed to the application at `node`, in order.
    pub fn delivered_at(&self, node: u32) -> Vec<u64> {
        self.delivered
            .iter()
            .filter(|(n, _)| n.0 == node)
            .map(|(_, s)| *s)
            .collect()
    }

    /// Every source route stamped on a data packet that went on the wire.
    pub fn data_routes(&self) -> Vec<Vec<NodeId>> {
        self.sent
            .iter()
            .filter_map(|(_, p)| p.data()?.route.as_ref().map(|r| r.path.clone()))
            .collect()
    }
}
