//! One simulation run: nodes, the shared radio channel, traffic and metrics.

use std::collections::{HashSet, VecDeque};
use std::fmt::Write as _;
use std::rc::Rc;

use sha2::{Digest, Sha256};

use crate::bcast::{BcastAgent, BcastTimer};
use crate::config::{MobilityModel, Protocol, ScenarioConfig};
use crate::dsr::DsrAgent;
use crate::engine::{EventQueue, RngStreams, SimRng, SimTime};
use crate::error::SimError;
use crate::mac::{Enqueued, Frame, FrameKind, IfqEntry, Mac, MacIo, MacOutput, MacTimer, Priority};
use crate::metrics::{DropReason, MetricRow, MetricsLedger};
use crate::mobility::{NodeMobility, Point, RandomWaypoint};
use crate::packet::{Body, DataHeader, Dest, NodeId, Packet, PacketKind};
use crate::phy::{mean_rx_power, sample_rx_power, SPEED_OF_LIGHT};
use crate::routing::{Agent, NetAction, NetCtx, RoutingTimer};
use crate::traffic::{CbrSource, GroupConfig, Sinks};

#[derive(Clone, Debug)]
pub enum Event {
    SignalStart {
        node: NodeId,
        frame: Rc<Frame>,
        power: f64,
        end: SimTime,
    },
    SignalEnd {
        node: NodeId,
        frame_id: u64,
    },
    Mac {
        node: NodeId,
        timer: MacTimer,
    },
    Routing {
        node: NodeId,
        timer: RoutingTimer,
    },
    Cbr {
        flow: usize,
    },
    NodeDown {
        node: NodeId,
    },
}

impl Event {
    pub fn mac(node: NodeId, timer: MacTimer) -> Self {
        Event::Mac { node, timer }
    }

    fn kind(&self) -> &'static str {
        match self {
            Event::SignalStart { .. } => "rx-start",
            Event::SignalEnd { .. } => "rx-end",
            Event::Mac { timer, .. } => match timer {
                MacTimer::Contention => "mac-contention",
                MacTimer::TxEnd => "mac-tx-end",
                MacTimer::CtsTimeout => "mac-cts-timeout",
                MacTimer::AckTimeout => "mac-ack-timeout",
                MacTimer::SendData => "mac-send-data",
                MacTimer::Respond => "mac-respond",
                MacTimer::NavEnd => "mac-nav-end",
            },
            Event::Routing { timer, .. } => match timer {
                RoutingTimer::Dsr(_) => "dsr-timer",
                RoutingTimer::Bcast(BcastTimer::Hello) => "bcast-hello",
                RoutingTimer::Bcast(_) => "bcast-timer",
            },
            Event::Cbr { .. } => "cbr",
            Event::NodeDown { .. } => "node-down",
        }
    }

    fn node(&self) -> Option<NodeId> {
        match self {
            Event::SignalStart { node, .. }
            | Event::SignalEnd { node, .. }
            | Event::Mac { node, .. }
            | Event::Routing { node, .. }
            | Event::NodeDown { node } => Some(*node),
            Event::Cbr { .. } => None,
        }
    }

    fn packet_id(&self) -> u64 {
        match self {
            Event::SignalStart { frame, .. } => frame.id,
            Event::SignalEnd { frame_id, .. } => *frame_id,
            _ => 0,
        }
    }
}

/// One transmitted frame, as seen by the trace.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameRecord {
    pub time: SimTime,
    pub node: NodeId,
    pub kind: FrameKind,
    pub size: u32,
    pub dest: Dest,
    pub packet: Option<PacketKind>,
    pub route: Option<Vec<NodeId>>,
    /// (source, seq) of a data packet, or of the packet a NACK asks for.
    pub key: Option<(NodeId, u64)>,
    /// "first" or "retry".
    pub outcome: &'static str,
}

impl FrameRecord {
    pub fn line(&self) -> String {
        let dest = match self.dest {
            Dest::Node(n) => n.to_string(),
            Dest::Broadcast => "*".into(),
        };
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.time,
            self.node,
            self.kind.label(),
            self.packet.map_or("-", PacketKind::label),
            self.size,
            dest,
            self.outcome
        )
    }
}

/// Optional recordings kept during a run.
#[derive(Clone, Copy, Debug, Default)]
pub struct TraceOptions {
    /// Keep one line per fired event.
    pub events: bool,
    /// Keep one record per transmitted frame.
    pub frames: bool,
}

struct Node {
    id: NodeId,
    mobility: NodeMobility,
    mac: Mac,
    agent: Agent,
    mac_rng: SimRng,
    net_rng: SimRng,
    alive: bool,
}

enum Work {
    Mac(usize, MacOutput),
    Net(usize, NetAction),
}

/// Result of one run.
#[derive(Clone, Debug)]
pub struct RunReport {
    pub scenario: String,
    pub protocol: Protocol,
    pub seed: u64,
    pub metrics: MetricRow,
    pub ledger: MetricsLedger,
    pub events: u64,
    /// SHA-256 of every node's waypoint legs up to the end of the run.
    pub trajectory_digest: String,
    /// SHA-256 of the membership and every packet generation instant.
    pub traffic_digest: String,
    /// SHA-256 of the event trace, when it was recorded.
    pub event_digest: Option<String>,
}

pub struct Simulator {
    cfg: ScenarioConfig,
    queue: EventQueue<Event>,
    nodes: Vec<Node>,
    shadow_rng: SimRng,
    ledger: MetricsLedger,
    group: GroupConfig,
    flows: Vec<CbrSource>,
    sinks: Sinks,
    next_uid: u64,
    next_frame_id: u64,
    work: VecDeque<Work>,
    forced_drops: HashSet<(u32, u32, u64)>,
    trace: TraceOptions,
    event_lines: Vec<String>,
    frames: Vec<FrameRecord>,
    mac_failures: u64,
    traffic_digest: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

impl Simulator {
    pub fn new(cfg: ScenarioConfig) -> Result<Self, SimError> {
        cfg.validate()
            .map_err(|e| SimError::Scenario(e.to_string()))?;
        let streams = RngStreams::new(cfg.seed);

        let mut membership = streams.stream("membership");
        let (sampled_s, sampled_r) = GroupConfig::sample_members(
            cfg.node_count,
            if cfg.sender_ids.is_some() { 0 } else { cfg.senders },
            if cfg.receiver_ids.is_some() { 0 } else { cfg.receivers },
            &mut membership,
        );
        let ids = |v: &Option<Vec<u32>>, sampled: Vec<NodeId>| {
            v.as_ref()
                .map_or(sampled, |ids| ids.iter().map(|i| NodeId(*i)).collect())
        };
        let group = GroupConfig {
            senders: ids(&cfg.sender_ids, sampled_s),
            receivers: ids(&cfg.receiver_ids, sampled_r),
            rate: cfg.rate,
            payload: cfg.payload,
            start: cfg.traffic_start,
            stop: cfg.traffic_stop(),
        };
        group.validate(cfg.node_count)?;
        let flows = CbrSource::for_group(&group, &mut streams.stream("traffic"));

        let model = RandomWaypoint {
            field: cfg.field,
            max_speed: cfg.max_speed,
            pause: cfg.pause_time,
        };
        let mut nodes = Vec::with_capacity(cfg.node_count as usize);
        for i in 0..cfg.node_count {
            let id = NodeId(i);
            let mut mob_rng = streams.stream(&format!("mobility/{i}"));
            let start = match &cfg.positions {
                Some(ps) => ps[i as usize],
                None => cfg.field.random_point(&mut mob_rng),
            };
            let mobility = match cfg.mobility {
                MobilityModel::Static => NodeMobility::fixed(start),
                MobilityModel::Waypoint => NodeMobility::waypoint(model, start, mob_rng),
            };
            let agent = match cfg.protocol {
                Protocol::Dsr => Agent::Dsr(DsrAgent::new(id, cfg.dsr)),
                Protocol::Bcast => Agent::Bcast(BcastAgent::new(id, cfg.bcast)),
            };
            nodes.push(Node {
                id,
                mobility,
                mac: Mac::new(id, cfg.mac),
                agent,
                mac_rng: streams.stream(&format!("mac/{i}")),
                net_rng: streams.stream(&format!("net/{i}")),
                alive: true,
            });
        }

        let traffic_digest = {
            let mut h = Sha256::new();
            for s in &group.senders {
                h.update(b"S");
                h.update(s.0.to_le_bytes());
            }
            for r in &group.receivers {
                h.update(b"R");
                h.update(r.0.to_le_bytes());
            }
            for f in &flows {
                for t in f.schedule(&group) {
                    h.update(f.sender.0.to_le_bytes());
                    h.update(t.secs().to_le_bytes());
                }
            }
            hex(&h.finalize())
        };

        let mut sim = Simulator {
            sinks: Sinks::new(&group.receivers),
            ledger: MetricsLedger::new(cfg.throughput_mode),
            shadow_rng: streams.stream("shadowing"),
            queue: EventQueue::new(),
            nodes,
            group,
            flows,
            next_uid: 0,
            next_frame_id: 0,
            work: VecDeque::new(),
            forced_drops: HashSet::new(),
            trace: TraceOptions::default(),
            event_lines: Vec::new(),
            frames: Vec::new(),
            mac_failures: 0,
            traffic_digest,
            cfg,
        };
        for (i, f) in sim.flows.iter().enumerate() {
            if let Some(t) = f.time_of(0, &sim.group) {
                sim.queue.schedule(t, Event::Cbr { flow: i })?;
            }
        }
        for i in 0..sim.nodes.len() {
            sim.net_call(i, |a, ctx| a.start(ctx));
        }
        sim.drain_work();
        Ok(sim)
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn group(&self) -> &GroupConfig {
        &self.group
    }

    pub fn now(&self) -> SimTime {
        self.queue.now()
    }

    pub fn ledger(&self) -> &MetricsLedger {
        &self.ledger
    }

    pub fn set_trace(&mut self, trace: TraceOptions) {
        self.trace = trace;
    }

    pub fn frames(&self) -> &[FrameRecord] {
        &self.frames
    }

    pub fn event_lines(&self) -> &[String] {
        &self.event_lines
    }

    /// Unicast transmissions the MAC gave up on.
    pub fn mac_failures(&self) -> u64 {
        self.mac_failures
    }

    pub fn agent(&self, node: u32) -> &Agent {
        &self.nodes[node as usize].agent
    }

    pub fn mac(&self, node: u32) -> &Mac {
        &self.nodes[node as usize].mac
    }

    pub fn position(&mut self, node: u32) -> Point {
        let now = self.queue.now();
        self.nodes[node as usize].mobility.position(now)
    }

    /// Takes `node` off the air at `at`: it stops sending, receiving and
    /// running timers.
    pub fn schedule_node_down(&mut self, node: u32, at: f64) -> Result<(), SimError> {
        self.queue
            .schedule(SimTime::from_secs(at), Event::NodeDown { node: NodeId(node) })?;
        Ok(())
    }

    /// Discards the next copy of data packet (source, seq) that the MAC at
    /// `node` would hand up.
    pub fn force_drop(&mut self, node: u32, source: u32, seq: u64) {
        self.forced_drops.insert((node, source, seq));
    }

    /// Puts a packet straight into a node's interface queue.
    pub fn inject(&mut self, node: u32, packet: Packet, next_hop: Dest) {
        let priority = if packet.kind().is_routing() {
            Priority::Routing
        } else {
            Priority::Data
        };
        self.enqueue(node as usize, packet, next_hop, priority);
        self.drain_work();
    }

    pub fn fresh_uid(&mut self) -> u64 {
        self.next_uid += 1;
        self.next_uid
    }

    fn mac_call(&mut self, i: usize, f: impl FnOnce(&mut Mac, &mut MacIo)) {
        let mut out = Vec::new();
        let node = &mut self.nodes[i];
        let mut io = MacIo {
            now: self.queue.now(),
            queue: &mut self.queue,
            rng: &mut node.mac_rng,
            phy: &self.cfg.phy,
            out: &mut out,
            next_frame_id: &mut self.next_frame_id,
        };
        f(&mut node.mac, &mut io);
        self.work.extend(out.into_iter().map(|o| Work::Mac(i, o)));
    }

    fn net_call(&mut self, i: usize, f: impl FnOnce(&mut Agent, &mut NetCtx)) {
        let mut out = Vec::new();
        let node = &mut self.nodes[i];
        let mut ctx = NetCtx {
            now: self.queue.now(),
            me: node.id,
            queue: &mut self.queue,
            rng: &mut node.net_rng,
            ledger: &mut self.ledger,
            out: &mut out,
            next_uid: &mut self.next_uid,
        };
        f(&mut node.agent, &mut ctx);
        self.work.extend(out.into_iter().map(|a| Work::Net(i, a)));
    }

    fn enqueue(&mut self, i: usize, packet: Packet, next_hop: Dest, priority: Priority) {
        let entry = IfqEntry {
            packet,
            next_hop,
            priority,
            enqueued_at: self.queue.now(),
        };
        let mut result = None;
        self.mac_call(i, |m, io| result = Some(m.enqueue(entry, io)));
        match result.expect("enqueue ran") {
            Enqueued::Accepted { evicted: None } => {}
            Enqueued::Accepted { evicted: Some(e) } | Enqueued::Dropped(e) => {
                self.ledger.record_drop(&e.packet, DropReason::IfqFull);
            }
        }
    }

    fn drain_work(&mut self) {
        while let Some(w) = self.work.pop_front() {
            match w {
                Work::Mac(i, out) => self.on_mac_output(i, out),
                Work::Net(i, action) => self.on_net_action(i, action),
            }
        }
    }

    fn on_mac_output(&mut self, i: usize, out: MacOutput) {
        match out {
            MacOutput::Transmit(frame) => self.transmit(i, frame),
            MacOutput::Deliver { packet, from } => {
                if let Some(h) = packet.data() {
                    let key = (i as u32, h.source.0, h.seq);
                    if self.forced_drops.remove(&key) {
                        self.ledger.record_drop(&packet, DropReason::Injected);
                        return;
                    }
                }
                self.net_call(i, |a, ctx| a.receive(packet, from, ctx));
            }
            MacOutput::Overheard { packet, from } => {
                self.net_call(i, |a, ctx| a.overhear(packet, from, ctx));
            }
            MacOutput::TxFailed { packet, next_hop } => {
                self.mac_failures += 1;
                self.net_call(i, |a, ctx| a.link_failure(packet, next_hop, ctx));
            }
        }
    }

    fn on_net_action(&mut self, i: usize, action: NetAction) {
        match action {
            NetAction::Send {
                packet,
                next_hop,
                priority,
            } => {
                if self.nodes[i].alive {
                    self.enqueue(i, packet, next_hop, priority);
                } else {
                    self.ledger.record_drop(&packet, DropReason::NodeDown);
                }
            }
            NetAction::Deliver(packet) => {
                let node = self.nodes[i].id;
                if self.sinks.on_deliver(&packet, node) {
                    self.ledger.record_delivery(&packet, node, self.queue.now());
                }
            }
            NetAction::FlushNextHop(hop) => {
                let entries = self.nodes[i].mac.ifq.remove_next_hop(hop);
                if !entries.is_empty() {
                    self.net_call(i, |a, ctx| a.salvage(entries, ctx));
                }
            }
            NetAction::Withdraw { source, seq } => {
                self.nodes[i].mac.ifq.remove_broadcast(source, seq);
            }
        }
    }

    /// Puts a frame on the channel: every other live node gets the signal
    /// after the propagation delay, unless it is below carrier sense.
    fn transmit(&mut self, i: usize, frame: Rc<Frame>) {
        let now = self.queue.now();
        self.ledger.record_frame(&frame);
        if self.trace.frames {
            self.frames.push(FrameRecord {
                time: now,
                node: frame.tx,
                kind: frame.kind,
                size: frame.size,
                dest: frame.rx,
                packet: frame.packet.as_ref().map(Packet::kind),
                route: frame
                    .packet
                    .as_ref()
                    .and_then(|p| p.data())
                    .and_then(|h| h.route.as_ref().map(|r| r.path.clone())),
                key: frame.packet.as_ref().and_then(|p| match &p.body {
                    Body::Data(h) => Some((h.source, h.seq)),
                    Body::Nack { source, seq } => Some((*source, *seq)),
                    _ => None,
                }),
                outcome: if frame.retry { "retry" } else { "first" },
            });
        }
        let phy = self.cfg.phy;
        let airtime = phy.airtime(frame.size);
        let from = self.nodes[i].mobility.position(now);
        for j in 0..self.nodes.len() {
            if j == i || !self.nodes[j].alive {
                continue;
            }
            let to = self.nodes[j].mobility.position(now);
            let d = from.distance(&to).max(phy.ref_distance);
            let mean = mean_rx_power(&phy, d).expect("distance clamped to the reference");
            let power = sample_rx_power(mean, phy.shadow_sigma, &mut self.shadow_rng);
            if power < phy.cs_threshold {
                continue;
            }
            let start = now + d / SPEED_OF_LIGHT;
            let end = start + airtime;
            let node = self.nodes[j].id;
            self.queue
                .schedule(
                    start,
                    Event::SignalStart {
                        node,
                        frame: Rc::clone(&frame),
                        power,
                        end,
                    },
                )
                .expect("future");
            self.queue
                .schedule(
                    end,
                    Event::SignalEnd {
                        node,
                        frame_id: frame.id,
                    },
                )
                .expect("future");
        }
    }

    fn generate(&mut self, flow: usize) {
        let now = self.queue.now();
        let (sender, seq) = {
            let f = &mut self.flows[flow];
            f.seq += 1;
            (f.sender, f.seq)
        };
        if let Some(t) = self.flows[flow].time_of(seq, &self.group) {
            self.queue
                .schedule(t, Event::Cbr { flow })
                .expect("generation times increase");
        }
        let i = sender.index();
        let header = DataHeader {
            source: sender,
            seq,
            generated_at: now,
            payload: self.group.payload,
            route: None,
        };
        let alive = self.nodes[i].alive;
        match self.cfg.protocol {
            Protocol::Dsr => {
                let dsts = self.group.unicast_fanout(sender);
                let packets: Vec<(NodeId, Packet)> = dsts
                    .into_iter()
                    .map(|d| (d, Packet::new(self.fresh_uid(), Body::Data(header.clone()))))
                    .collect();
                let uids: Vec<u64> = packets.iter().map(|(_, p)| p.uid).collect();
                self.ledger
                    .record_generation(sender, now, uids.len() as u64, &uids);
                for (dst, p) in packets {
                    if alive {
                        self.net_call(i, |a, ctx| a.originate(p, Some(dst), ctx));
                    } else {
                        self.ledger.record_drop(&p, DropReason::NodeDown);
                    }
                }
            }
            Protocol::Bcast => {
                let intended = self.group.unicast_fanout(sender).len() as u64;
                self.ledger.record_generation(sender, now, intended, &[]);
                let p = Packet::new(self.fresh_uid(), Body::Data(header));
                if alive {
                    self.net_call(i, |a, ctx| a.originate(p, None, ctx));
                }
            }
        }
    }

    fn dispatch(&mut self, at: SimTime, ev: Event) {
        if self.trace.events {
            let node = ev.node().map_or("-".to_string(), |n| n.to_string());
            self.event_lines
                .push(format!("{at}\t{node}\t{}\t{}", ev.kind(), ev.packet_id()));
        }
        if let Some(n) = ev.node() {
            if !self.nodes[n.index()].alive {
                return;
            }
        }
        match ev {
            Event::SignalStart {
                node,
                frame,
                power,
                end,
            } => self.mac_call(node.index(), |m, io| m.signal_start(frame, power, end, io)),
            Event::SignalEnd { node, frame_id } => {
                self.mac_call(node.index(), |m, io| m.signal_end(frame_id, io))
            }
            Event::Mac { node, timer } => self.mac_call(node.index(), |m, io| m.on_timer(timer, io)),
            Event::Routing { node, timer } => {
                self.net_call(node.index(), |a, ctx| a.on_timer(timer, ctx))
            }
            Event::Cbr { flow } => self.generate(flow),
            Event::NodeDown { node } => {
                let n = &mut self.nodes[node.index()];
                n.alive = false;
                n.mac.rx.clear();
            }
        }
        self.drain_work();
    }

    /// Runs every event up to `end` (clamped to the scenario length).
    pub fn run_until(&mut self, end: f64) {
        let end = SimTime::from_secs(end.min(self.cfg.sim_time));
        while let Some((at, ev)) = self.queue.pop_until(end) {
            self.dispatch(at, ev);
        }
        self.queue.advance_to(end);
    }

    /// Uids of data packets still queued or buffered anywhere.
    fn held_uids(&self) -> HashSet<u64> {
        let mut held = HashSet::new();
        for n in &self.nodes {
            for e in n.mac.ifq.iter() {
                if e.packet.data().is_some() {
                    held.insert(e.packet.uid);
                }
            }
            if let Some(p) = n.mac.in_service() {
                if p.data().is_some() {
                    held.insert(p.uid);
                }
            }
            for p in n.agent.held_data() {
                held.insert(p.uid);
            }
        }
        held
    }

    fn trajectory_digest(&self) -> String {
        let end = SimTime::from_secs(self.cfg.sim_time);
        let mut h = Sha256::new();
        for n in &self.nodes {
            let mut m = n.mobility.clone();
            let p = match m.legs().first() {
                Some(first) => first.origin,
                None => m.position(SimTime::ZERO),
            };
            h.update(p.x.to_le_bytes());
            h.update(p.y.to_le_bytes());
            m.position(end);
            for leg in m.legs().iter().filter(|l| l.depart_at <= end) {
                for v in [leg.dest.x, leg.dest.y, leg.speed, leg.depart_at.secs(), leg.pause] {
                    h.update(v.to_le_bytes());
                }
            }
        }
        hex(&h.finalize())
    }

    /// Runs to the end of the scenario and closes the books.
    pub fn run(mut self) -> Result<RunReport, SimError> {
        self.run_until(self.cfg.sim_time);
        self.finish()
    }

    pub fn finish(&mut self) -> Result<RunReport, SimError> {
        let held = self.held_uids();
        self.ledger.finalize(&held)?;
        let event_digest = self.trace.events.then(|| {
            let mut h = Sha256::new();
            for l in &self.event_lines {
                h.update(l.as_bytes());
                h.update(b"\n");
            }
            hex(&h.finalize())
        });
        Ok(RunReport {
            scenario: self.cfg.name.clone(),
            protocol: self.cfg.protocol,
            seed: self.cfg.seed,
            metrics: self.ledger.metrics(),
            ledger: self.ledger.clone(),
            events: self.queue.fired(),
            trajectory_digest: self.trajectory_digest(),
            traffic_digest: self.traffic_digest.clone(),
            event_digest,
        })
    }
}

/// Convenience: build and run one scenario.
pub fn run_scenario(cfg: ScenarioConfig) -> Result<RunReport, SimError> {
    Simulator::new(cfg)?.run()
}
