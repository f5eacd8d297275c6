//! Run-wide counters and the QoS metrics derived from them.
//!
//! Every metric is a pure function of the persisted part of
//! [`MetricsLedger`], so a ledger written with [`MetricsLedger::to_kv`] and
//! read back with [`MetricsLedger::from_kv`] reproduces the same values.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::str::FromStr;

use crate::engine::SimTime;
use crate::error::SimError;
use crate::mac::{Frame, FrameKind};
use crate::packet::{NodeId, Packet, PacketKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DropReason {
    IfqFull,
    MacRetry,
    LinkBreak,
    SendBufferFull,
    SendBufferTimeout,
    Misrouted,
    NodeDown,
    /// Discarded on purpose by a test hook.
    Injected,
}

impl DropReason {
    pub const ALL: [DropReason; 8] = [
        DropReason::IfqFull,
        DropReason::MacRetry,
        DropReason::LinkBreak,
        DropReason::SendBufferFull,
        DropReason::SendBufferTimeout,
        DropReason::Misrouted,
        DropReason::NodeDown,
        DropReason::Injected,
    ];

    pub fn key(self) -> &'static str {
        match self {
            DropReason::IfqFull => "ifq_full",
            DropReason::MacRetry => "mac_retry",
            DropReason::LinkBreak => "link_break",
            DropReason::SendBufferFull => "send_buffer_full",
            DropReason::SendBufferTimeout => "send_buffer_timeout",
            DropReason::Misrouted => "misrouted",
            DropReason::NodeDown => "node_down",
            DropReason::Injected => "injected",
        }
    }
}

/// How "connection time" is measured for throughput.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ThroughputMode {
    /// Total bits over the span from first generation to last delivery.
    #[default]
    Global,
    /// Mean over (sender, receiver) connections, each measured from the
    /// sender's first generation to that receiver's last delivery.
    PerFlow,
}

impl ThroughputMode {
    pub fn key(self) -> &'static str {
        match self {
            ThroughputMode::Global => "global",
            ThroughputMode::PerFlow => "per_flow",
        }
    }
}

impl FromStr for ThroughputMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "global" => Ok(ThroughputMode::Global),
            "per_flow" => Ok(ThroughputMode::PerFlow),
            _ => Err("expected `global` or `per_flow`".into()),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FlowSpan {
    pub first_sent: Option<f64>,
    pub last_received: Option<f64>,
    pub bytes: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum CopyState {
    Pending,
    Dropped,
    InFlight,
    Delivered,
}

#[derive(Clone, Debug, Default)]
pub struct MetricsLedger {
    /// Intended receptions: logical packets times receivers (sender excluded).
    pub data_generated: u64,
    pub data_delivered: u64,
    pub data_dropped: u64,
    pub data_in_flight: u64,
    pub latency_sum: f64,
    /// Hop-wise transmissions of RREQ/RREP/RERR/Hello/NACK packets.
    pub routing_tx: u64,
    /// RTS + CTS + ACK frames.
    pub mac_control_tx: u64,
    pub rts_tx: u64,
    pub cts_tx: u64,
    pub ack_tx: u64,
    /// DATA frames carrying application data, retries included.
    pub data_frames_tx: u64,
    pub bytes_delivered: u64,
    pub first_sent: Option<f64>,
    pub last_received: Option<f64>,
    /// Keyed by (source, receiver).
    pub flows: BTreeMap<(u32, u32), FlowSpan>,
    /// First generation time per source.
    pub sources: BTreeMap<u32, f64>,
    pub routing_by_kind: BTreeMap<PacketKind, u64>,
    pub drops: BTreeMap<DropReason, u64>,
    pub throughput_mode: ThroughputMode,
    tracked: HashMap<u64, CopyState>,
}

impl MetricsLedger {
    pub fn new(throughput_mode: ThroughputMode) -> Self {
        MetricsLedger {
            throughput_mode,
            ..Default::default()
        }
    }

    /// One logical packet from `source` with `intended` receivers. Unicast
    /// copies listed in `copies` are followed individually for the
    /// conservation check.
    pub fn record_generation(&mut self, source: NodeId, at: SimTime, intended: u64, copies: &[u64]) {
        self.data_generated += intended;
        let t = at.secs();
        self.first_sent.get_or_insert(t);
        self.sources.entry(source.0).or_insert(t);
        for uid in copies {
            self.tracked.insert(*uid, CopyState::Pending);
        }
    }

    pub fn record_delivery(&mut self, packet: &Packet, receiver: NodeId, at: SimTime) {
        let Some(h) = packet.data() else { return };
        let t = at.secs();
        self.data_delivered += 1;
        self.latency_sum += t - h.generated_at.secs();
        self.bytes_delivered += u64::from(h.payload);
        self.last_received = Some(self.last_received.map_or(t, |l| l.max(t)));
        let start = self.sources.get(&h.source.0).copied();
        let flow = self.flows.entry((h.source.0, receiver.0)).or_default();
        if flow.first_sent.is_none() {
            flow.first_sent = start.or(Some(h.generated_at.secs()));
        }
        flow.bytes += u64::from(h.payload);
        flow.last_received = Some(flow.last_received.map_or(t, |l| l.max(t)));
        if let Some(s) = self.tracked.get_mut(&packet.uid) {
            *s = CopyState::Delivered;
        }
    }

    pub fn record_drop(&mut self, packet: &Packet, reason: DropReason) {
        *self.drops.entry(reason).or_default() += 1;
        if let Some(s) = self.tracked.get_mut(&packet.uid) {
            if *s == CopyState::Pending {
                *s = CopyState::Dropped;
            }
        }
    }

    /// Counts a frame as it goes on the air.
    pub fn record_frame(&mut self, frame: &Frame) {
        match frame.kind {
            FrameKind::Rts => self.rts_tx += 1,
            FrameKind::Cts => self.cts_tx += 1,
            FrameKind::Ack => self.ack_tx += 1,
            FrameKind::Data => {
                let Some(p) = &frame.packet else { return };
                let kind = p.kind();
                if kind.is_routing() {
                    if !frame.retry {
                        self.routing_tx += 1;
                        *self.routing_by_kind.entry(kind).or_default() += 1;
                    }
                } else {
                    self.data_frames_tx += 1;
                }
            }
        }
        if frame.kind.is_control() {
            self.mac_control_tx += 1;
        }
    }

    /// Closes the books. `held` lists the uids of data packets still queued
    /// somewhere in the network. Fails if a tracked copy vanished.
    pub fn finalize(&mut self, held: &HashSet<u64>) -> Result<(), SimError> {
        if self.tracked.is_empty() {
            self.data_dropped = self.data_generated - self.data_delivered;
            self.data_in_flight = 0;
            return Ok(());
        }
        let mut vanished = 0u64;
        let (mut dropped, mut in_flight) = (0u64, 0u64);
        for (uid, state) in self.tracked.iter_mut() {
            if *state != CopyState::Delivered && held.contains(uid) {
                *state = CopyState::InFlight;
            }
            match state {
                CopyState::Pending => vanished += 1,
                CopyState::Dropped => dropped += 1,
                CopyState::InFlight => in_flight += 1,
                CopyState::Delivered => {}
            }
        }
        self.data_dropped = dropped;
        self.data_in_flight = in_flight;
        if vanished > 0 {
            return Err(SimError::Conservation(format!(
                "{vanished} data packets were neither delivered, dropped nor queued"
            )));
        }
        self.check_conservation()
    }

    pub fn check_conservation(&self) -> Result<(), SimError> {
        let accounted = self.data_delivered + self.data_dropped + self.data_in_flight;
        if accounted != self.data_generated {
            return Err(SimError::Conservation(format!(
                "generated {} != delivered {} + dropped {} + in flight {}",
                self.data_generated, self.data_delivered, self.data_dropped, self.data_in_flight
            )));
        }
        Ok(())
    }

    pub fn pdr(&self) -> Option<f64> {
        (self.data_generated > 0).then(|| self.data_delivered as f64 / self.data_generated as f64)
    }

    /// Mean end-to-end delay of delivered packets, seconds.
    pub fn latency_avg(&self) -> Option<f64> {
        (self.data_delivered > 0).then(|| self.latency_sum / self.data_delivered as f64)
    }

    pub fn nrl(&self) -> Option<f64> {
        (self.data_delivered > 0).then(|| self.routing_tx as f64 / self.data_delivered as f64)
    }

    /// ARP is not modeled, so its term is zero.
    pub fn nml(&self) -> Option<f64> {
        (self.data_delivered > 0)
            .then(|| (self.routing_tx + self.mac_control_tx) as f64 / self.data_delivered as f64)
    }

    /// Bits per second.
    pub fn throughput(&self) -> Option<f64> {
        match self.throughput_mode {
            ThroughputMode::Global => {
                let span = self.last_received? - self.first_sent?;
                (span > 0.0).then(|| self.bytes_delivered as f64 * 8.0 / span)
            }
            ThroughputMode::PerFlow => {
                let rates: Vec<f64> = self
                    .flows
                    .values()
                    .filter_map(|f| {
                        let span = f.last_received? - f.first_sent?;
                        (span > 0.0).then(|| f.bytes as f64 * 8.0 / span)
                    })
                    .collect();
                (!rates.is_empty()).then(|| rates.iter().sum::<f64>() / rates.len() as f64)
            }
        }
    }

    pub fn metrics(&self) -> MetricRow {
        MetricRow {
            pdr: self.pdr(),
            latency_avg: self.latency_avg(),
            nrl: self.nrl(),
            nml: self.nml(),
            throughput: self.throughput(),
        }
    }

    /// Flat `key=value` dump of everything the metrics depend on.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        put("data_generated", self.data_generated.to_string());
        put("data_delivered", self.data_delivered.to_string());
        put("data_dropped", self.data_dropped.to_string());
        put("data_in_flight", self.data_in_flight.to_string());
        put("latency_sum", self.latency_sum.to_string());
        put("routing_tx", self.routing_tx.to_string());
        put("mac_control_tx", self.mac_control_tx.to_string());
        put("rts_tx", self.rts_tx.to_string());
        put("cts_tx", self.cts_tx.to_string());
        put("ack_tx", self.ack_tx.to_string());
        put("data_frames_tx", self.data_frames_tx.to_string());
        put("bytes_delivered", self.bytes_delivered.to_string());
        put("first_sent", opt(self.first_sent));
        put("last_received", opt(self.last_received));
        put("throughput_mode", self.throughput_mode.key().to_string());
        for (k, v) in &self.routing_by_kind {
            put(&format!("routing.{}", k.label()), v.to_string());
        }
        for (k, v) in &self.drops {
            put(&format!("drops.{}", k.key()), v.to_string());
        }
        for (id, t) in &self.sources {
            put(&format!("source.{id}.first_sent"), t.to_string());
        }
        for ((src, dst), f) in &self.flows {
            put(&format!("flow.{src}-{dst}.first_sent"), opt(f.first_sent));
            put(&format!("flow.{src}-{dst}.last_received"), opt(f.last_received));
            put(&format!("flow.{src}-{dst}.bytes"), f.bytes.to_string());
        }
        s
    }

    pub fn from_kv(text: &str) -> Result<Self, String> {
        let mut l = MetricsLedger::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: missing `=`", n + 1))?;
            let bad = |e: &dyn std::fmt::Display| format!("line {}: {k}: {e}", n + 1);
            let int = || v.parse::<u64>().map_err(|e| bad(&e));
            let float = || parse_opt(v).map_err(|e| bad(&e));
            match k {
                "data_generated" => l.data_generated = int()?,
                "data_delivered" => l.data_delivered = int()?,
                "data_dropped" => l.data_dropped = int()?,
                "data_in_flight" => l.data_in_flight = int()?,
                "latency_sum" => l.latency_sum = v.parse().map_err(|e| bad(&e))?,
                "routing_tx" => l.routing_tx = int()?,
                "mac_control_tx" => l.mac_control_tx = int()?,
                "rts_tx" => l.rts_tx = int()?,
                "cts_tx" => l.cts_tx = int()?,
                "ack_tx" => l.ack_tx = int()?,
                "data_frames_tx" => l.data_frames_tx = int()?,
                "bytes_delivered" => l.bytes_delivered = int()?,
                "first_sent" => l.first_sent = float()?,
                "last_received" => l.last_received = float()?,
                "throughput_mode" => l.throughput_mode = v.parse().map_err(|e: String| bad(&e))?,
                _ => {
                    if let Some(kind) = k.strip_prefix("routing.") {
                        let kind = ROUTING_KINDS
                            .iter()
                            .find(|p| p.label() == kind)
                            .ok_or_else(|| bad(&"unknown packet kind"))?;
                        l.routing_by_kind.insert(*kind, int()?);
                    } else if let Some(reason) = k.strip_prefix("drops.") {
                        let r = DropReason::ALL
                            .iter()
                            .find(|r| r.key() == reason)
                            .ok_or_else(|| bad(&"unknown drop reason"))?;
                        l.drops.insert(*r, int()?);
                    } else if let Some(id) = k
                        .strip_prefix("source.")
                        .and_then(|r| r.strip_suffix(".first_sent"))
                    {
                        let id: u32 = id.parse().map_err(|e| bad(&e))?;
                        l.sources.insert(id, v.parse().map_err(|e| bad(&e))?);
                    } else if let Some(rest) = k.strip_prefix("flow.") {
                        let (pair, field) = rest.split_once('.').ok_or_else(|| bad(&"bad flow key"))?;
                        let (src, dst) = pair.split_once('-').ok_or_else(|| bad(&"bad flow key"))?;
                        let src: u32 = src.parse().map_err(|e| bad(&e))?;
                        let dst: u32 = dst.parse().map_err(|e| bad(&e))?;
                        let f = l.flows.entry((src, dst)).or_default();
                        match field {
                            "first_sent" => f.first_sent = float()?,
                            "last_received" => f.last_received = float()?,
                            "bytes" => f.bytes = int()?,
                            _ => return Err(bad(&"bad flow field")),
                        }
                    } else {
                        return Err(bad(&"unknown key"));
                    }
                }
            }
        }
        Ok(l)
    }
}

const ROUTING_KINDS: [PacketKind; 5] = [
    PacketKind::Rreq,
    PacketKind::Rrep,
    PacketKind::Rerr,
    PacketKind::Hello,
    PacketKind::Nack,
];

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |x| x.to_string())
}

fn parse_opt(v: &str) -> Result<Option<f64>, std::num::ParseFloatError> {
    if v == "none" {
        Ok(None)
    } else {
        v.parse().map(Some)
    }
}

/// The five QoS metrics of one run (or one averaged point).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricRow {
    pub pdr: Option<f64>,
    /// Seconds.
    pub latency_avg: Option<f64>,
    pub nrl: Option<f64>,
    pub nml: Option<f64>,
    /// Bits per second.
    pub throughput: Option<f64>,
}

impl MetricRow {
    pub const NAMES: [&'static str; 5] = ["pdr", "latency_avg", "nrl", "nml", "throughput"];

    pub fn values(&self) -> [Option<f64>; 5] {
        [self.pdr, self.latency_avg, self.nrl, self.nml, self.throughput]
    }

    pub fn from_values(v: [Option<f64>; 5]) -> Self {
        MetricRow {
            pdr: v[0],
            latency_avg: v[1],
            nrl: v[2],
            nml: v[3],
            throughput: v[4],
        }
    }

    /// `scenario,seed,pdr,latency_avg,nrl,nml,throughput`; absent values are empty.
    pub fn csv_row(&self, scenario: &str, seed: u64) -> String {
        let mut s = format!("{scenario},{seed}");
        for v in self.values() {
            s.push(',');
            s.push_str(&fmt_opt(v));
        }
        s
    }

    pub const CSV_HEADER: &'static str = "scenario,seed,pdr,latency_avg,nrl,nml,throughput";
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}
