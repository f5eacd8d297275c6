//! Scenario configuration: a flat `key = value` text format with dotted keys.
//! Every key has a default, so an empty file is a complete scenario.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::bcast::BcastParams;
use crate::dsr::DsrParams;
use crate::error::ConfigError;
use crate::mac::MacParams;
use crate::metrics::ThroughputMode;
use crate::mobility::{Field, Point};
use crate::phy::PhyParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Protocol {
    Dsr,
    Bcast,
}

impl Protocol {
    pub fn key(self) -> &'static str {
        match self {
            Protocol::Dsr => "dsr",
            Protocol::Bcast => "bcast",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Protocol {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "dsr" => Ok(Protocol::Dsr),
            "bcast" => Ok(Protocol::Bcast),
            _ => Err("expected `dsr` or `bcast`".into()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MobilityModel {
    Waypoint,
    Static,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub node_count: u32,
    pub sim_time: f64,
    pub seed: u64,
    pub protocol: Protocol,
    pub field: Field,
    pub mobility: MobilityModel,
    pub max_speed: f64,
    /// Seconds.
    pub pause_time: f64,
    /// Fixed initial positions, one per node; random when absent.
    pub positions: Option<Vec<Point>>,
    pub phy: PhyParams,
    pub mac: MacParams,
    pub dsr: DsrParams,
    pub bcast: BcastParams,
    /// Number of senders, sampled per seed unless `sender_ids` is set.
    pub senders: u32,
    pub receivers: u32,
    pub sender_ids: Option<Vec<u32>>,
    pub receiver_ids: Option<Vec<u32>>,
    /// Packets per second per sender.
    pub rate: f64,
    /// Bytes.
    pub payload: u32,
    pub traffic_start: f64,
    /// Defaults to the end of the simulation.
    pub traffic_stop: Option<f64>,
    pub throughput_mode: ThroughputMode,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            name: "scenario".into(),
            node_count: 50,
            sim_time: 200.0,
            seed: 1,
            protocol: Protocol::Bcast,
            field: Field::default(),
            mobility: MobilityModel::Waypoint,
            max_speed: 20.0,
            pause_time: 0.0,
            positions: None,
            phy: PhyParams::default(),
            mac: MacParams::default(),
            dsr: DsrParams::default(),
            bcast: BcastParams::default(),
            senders: 5,
            receivers: 20,
            sender_ids: None,
            receiver_ids: None,
            rate: 2.0,
            payload: 512,
            traffic_start: 10.0,
            traffic_stop: None,
            throughput_mode: ThroughputMode::Global,
        }
    }
}

/// Every recognized key, in echo order.
pub const KEYS: &[&str] = &[
    "scenario.name",
    "scenario.nodes",
    "scenario.sim_time",
    "scenario.seed",
    "scenario.protocol",
    "field.width",
    "field.height",
    "mobility.model",
    "mobility.max_speed",
    "mobility.pause_time",
    "mobility.positions",
    "phy.tx_power",
    "phy.frequency",
    "phy.path_loss_exponent",
    "phy.shadow_sigma",
    "phy.ref_distance",
    "phy.system_loss",
    "phy.rx_threshold",
    "phy.cs_threshold",
    "phy.capture_ratio",
    "phy.bitrate",
    "phy.interference",
    "mac.slot",
    "mac.sifs",
    "mac.difs",
    "mac.cw_min",
    "mac.cw_max",
    "mac.retry_limit",
    "mac.rts_threshold",
    "mac.ifq_capacity",
    "mac.header_bytes",
    "dsr.rreq_backoff",
    "dsr.rreq_max_tries",
    "dsr.send_buffer_capacity",
    "dsr.send_buffer_timeout",
    "dsr.cache_ttl",
    "dsr.cache_capacity",
    "dsr.promiscuous",
    "dsr.broadcast_jitter",
    "bcast.delay_unit",
    "bcast.hello_interval",
    "bcast.hello_jitter",
    "bcast.hello_expiry",
    "bcast.buffer_size",
    "bcast.nack_jitter",
    "bcast.nack_retries",
    "bcast.nack_timeout",
    "traffic.senders",
    "traffic.receivers",
    "traffic.sender_ids",
    "traffic.receiver_ids",
    "traffic.rate",
    "traffic.payload",
    "traffic.start",
    "traffic.stop",
    "metrics.throughput",
];

fn num<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    v.parse::<T>()
        .map_err(|e| ConfigError::invalid(key, v, e.to_string()))
}

fn boolean(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(ConfigError::invalid(key, v, "expected true or false")),
    }
}

fn id_list(key: &str, v: &str) -> Result<Option<Vec<u32>>, ConfigError> {
    if v.is_empty() || v == "random" {
        return Ok(None);
    }
    v.split(',')
        .map(|s| num::<u32>(key, s.trim()))
        .collect::<Result<Vec<_>, _>>()
        .map(Some)
}

fn positions(key: &str, v: &str) -> Result<Option<Vec<Point>>, ConfigError> {
    if v.is_empty() || v == "random" {
        return Ok(None);
    }
    v.split(';')
        .map(|pair| {
            let (x, y) = pair
                .trim()
                .split_once(':')
                .ok_or_else(|| ConfigError::invalid(key, v, "expected `x:y;x:y;...`"))?;
            Ok(Point::new(num(key, x.trim())?, num(key, y.trim())?))
        })
        .collect::<Result<Vec<_>, _>>()
        .map(Some)
}

fn join<T: fmt::Display>(items: &[T], sep: &str) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(sep)
}

impl ScenarioConfig {
    /// Sets one key from its textual value. Range checks happen in
    /// [`ScenarioConfig::validate`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        let k = key;
        match k {
            "scenario.name" => self.name = v.to_string(),
            "scenario.nodes" => self.node_count = num(k, v)?,
            "scenario.sim_time" => self.sim_time = num(k, v)?,
            "scenario.seed" => self.seed = num(k, v)?,
            "scenario.protocol" => {
                self.protocol = v.parse().map_err(|e: String| ConfigError::invalid(k, v, e))?
            }
            "field.width" => self.field.width = num(k, v)?,
            "field.height" => self.field.height = num(k, v)?,
            "mobility.model" => {
                self.mobility = match v {
                    "waypoint" => MobilityModel::Waypoint,
                    "static" => MobilityModel::Static,
                    _ => return Err(ConfigError::invalid(k, v, "expected `waypoint` or `static`")),
                }
            }
            "mobility.max_speed" => self.max_speed = num(k, v)?,
            "mobility.pause_time" => self.pause_time = num(k, v)?,
            "mobility.positions" => self.positions = positions(k, v)?,
            "phy.tx_power" => self.phy.tx_power = num(k, v)?,
            "phy.frequency" => self.phy.frequency = num(k, v)?,
            "phy.path_loss_exponent" => self.phy.path_loss_exponent = num(k, v)?,
            "phy.shadow_sigma" => self.phy.shadow_sigma = num(k, v)?,
            "phy.ref_distance" => self.phy.ref_distance = num(k, v)?,
            "phy.system_loss" => self.phy.system_loss = num(k, v)?,
            "phy.rx_threshold" => self.phy.rx_threshold = num(k, v)?,
            "phy.cs_threshold" => self.phy.cs_threshold = num(k, v)?,
            "phy.capture_ratio" => self.phy.capture_ratio = num(k, v)?,
            "phy.bitrate" => self.phy.bitrate = num(k, v)?,
            "phy.interference" => self.phy.interference = boolean(k, v)?,
            "mac.slot" => self.mac.slot = num(k, v)?,
            "mac.sifs" => self.mac.sifs = num(k, v)?,
            "mac.difs" => self.mac.difs = num(k, v)?,
            "mac.cw_min" => self.mac.cw_min = num(k, v)?,
            "mac.cw_max" => self.mac.cw_max = num(k, v)?,
            "mac.retry_limit" => self.mac.retry_limit = num(k, v)?,
            "mac.rts_threshold" => self.mac.rts_threshold = num(k, v)?,
            "mac.ifq_capacity" => self.mac.ifq_capacity = num(k, v)?,
            "mac.header_bytes" => self.mac.header_bytes = num(k, v)?,
            "dsr.rreq_backoff" => self.dsr.rreq_backoff = num(k, v)?,
            "dsr.rreq_max_tries" => self.dsr.rreq_max_tries = num(k, v)?,
            "dsr.send_buffer_capacity" => self.dsr.send_buffer_capacity = num(k, v)?,
            "dsr.send_buffer_timeout" => self.dsr.send_buffer_timeout = num(k, v)?,
            "dsr.cache_ttl" => self.dsr.cache_ttl = num(k, v)?,
            "dsr.cache_capacity" => self.dsr.cache_capacity = num(k, v)?,
            "dsr.promiscuous" => self.dsr.promiscuous = boolean(k, v)?,
            "dsr.broadcast_jitter" => self.dsr.broadcast_jitter = num(k, v)?,
            "bcast.delay_unit" => self.bcast.delay_unit = num(k, v)?,
            "bcast.hello_interval" => self.bcast.hello_interval = num(k, v)?,
            "bcast.hello_jitter" => self.bcast.hello_jitter = num(k, v)?,
            "bcast.hello_expiry" => self.bcast.hello_expiry = num(k, v)?,
            "bcast.buffer_size" => self.bcast.buffer_size = num(k, v)?,
            "bcast.nack_jitter" => self.bcast.nack_jitter = num(k, v)?,
            "bcast.nack_retries" => self.bcast.nack_retries = num(k, v)?,
            "bcast.nack_timeout" => self.bcast.nack_timeout = num(k, v)?,
            "traffic.senders" => self.senders = num(k, v)?,
            "traffic.receivers" => self.receivers = num(k, v)?,
            "traffic.sender_ids" => self.sender_ids = id_list(k, v)?,
            "traffic.receiver_ids" => self.receiver_ids = id_list(k, v)?,
            "traffic.rate" => self.rate = num(k, v)?,
            "traffic.payload" => self.payload = num(k, v)?,
            "traffic.start" => self.traffic_start = num(k, v)?,
            "traffic.stop" => {
                self.traffic_stop = if v == "end" { None } else { Some(num(k, v)?) }
            }
            "metrics.throughput" => {
                self.throughput_mode = v.parse().map_err(|e: String| ConfigError::invalid(k, v, e))?
            }
            _ => {
                return Err(ConfigError::UnknownKey {
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    /// Textual value of a key, in a form [`ScenarioConfig::set`] accepts.
    pub fn get(&self, key: &str) -> Option<String> {
        let s = |x: &dyn fmt::Display| Some(x.to_string());
        match key {
            "scenario.name" => s(&self.name),
            "scenario.nodes" => s(&self.node_count),
            "scenario.sim_time" => s(&self.sim_time),
            "scenario.seed" => s(&self.seed),
            "scenario.protocol" => s(&self.protocol),
            "field.width" => s(&self.field.width),
            "field.height" => s(&self.field.height),
            "mobility.model" => s(&match self.mobility {
                MobilityModel::Waypoint => "waypoint",
                MobilityModel::Static => "static",
            }),
            "mobility.max_speed" => s(&self.max_speed),
            "mobility.pause_time" => s(&self.pause_time),
            "mobility.positions" => Some(match &self.positions {
                None => "random".into(),
                Some(ps) => ps
                    .iter()
                    .map(|p| format!("{}:{}", p.x, p.y))
                    .collect::<Vec<_>>()
                    .join(";"),
            }),
            "phy.tx_power" => s(&self.phy.tx_power),
            "phy.frequency" => s(&self.phy.frequency),
            "phy.path_loss_exponent" => s(&self.phy.path_loss_exponent),
            "phy.shadow_sigma" => s(&self.phy.shadow_sigma),
            "phy.ref_distance" => s(&self.phy.ref_distance),
            "phy.system_loss" => s(&self.phy.system_loss),
            "phy.rx_threshold" => s(&self.phy.rx_threshold),
            "phy.cs_threshold" => s(&self.phy.cs_threshold),
            "phy.capture_ratio" => s(&self.phy.capture_ratio),
            "phy.bitrate" => s(&self.phy.bitrate),
            "phy.interference" => s(&self.phy.interference),
            "mac.slot" => s(&self.mac.slot),
            "mac.sifs" => s(&self.mac.sifs),
            "mac.difs" => s(&self.mac.difs),
            "mac.cw_min" => s(&self.mac.cw_min),
            "mac.cw_max" => s(&self.mac.cw_max),
            "mac.retry_limit" => s(&self.mac.retry_limit),
            "mac.rts_threshold" => s(&self.mac.rts_threshold),
            "mac.ifq_capacity" => s(&self.mac.ifq_capacity),
            "mac.header_bytes" => s(&self.mac.header_bytes),
            "dsr.rreq_backoff" => s(&self.dsr.rreq_backoff),
            "dsr.rreq_max_tries" => s(&self.dsr.rreq_max_tries),
            "dsr.send_buffer_capacity" => s(&self.dsr.send_buffer_capacity),
            "dsr.send_buffer_timeout" => s(&self.dsr.send_buffer_timeout),
            "dsr.cache_ttl" => s(&self.dsr.cache_ttl),
            "dsr.cache_capacity" => s(&self.dsr.cache_capacity),
            "dsr.promiscuous" => s(&self.dsr.promiscuous),
            "dsr.broadcast_jitter" => s(&self.dsr.broadcast_jitter),
            "bcast.delay_unit" => s(&self.bcast.delay_unit),
            "bcast.hello_interval" => s(&self.bcast.hello_interval),
            "bcast.hello_jitter" => s(&self.bcast.hello_jitter),
            "bcast.hello_expiry" => s(&self.bcast.hello_expiry),
            "bcast.buffer_size" => s(&self.bcast.buffer_size),
            "bcast.nack_jitter" => s(&self.bcast.nack_jitter),
            "bcast.nack_retries" => s(&self.bcast.nack_retries),
            "bcast.nack_timeout" => s(&self.bcast.nack_timeout),
            "traffic.senders" => s(&self.senders),
            "traffic.receivers" => s(&self.receivers),
            "traffic.sender_ids" => Some(self.sender_ids.as_ref().map_or("random".into(), |v| join(v, ","))),
            "traffic.receiver_ids" => {
                Some(self.receiver_ids.as_ref().map_or("random".into(), |v| join(v, ",")))
            }
            "traffic.rate" => s(&self.rate),
            "traffic.payload" => s(&self.payload),
            "traffic.start" => s(&self.traffic_start),
            "traffic.stop" => Some(self.traffic_stop.map_or("end".into(), |t| t.to_string())),
            "metrics.throughput" => s(&self.throughput_mode.key()),
            _ => None,
        }
    }

    pub fn traffic_stop(&self) -> f64 {
        self.traffic_stop.unwrap_or(self.sim_time)
    }

    /// Effective sender count.
    pub fn sender_count(&self) -> u32 {
        self.sender_ids.as_ref().map_or(self.senders, |v| v.len() as u32)
    }

    /// Effective receiver count.
    pub fn receiver_count(&self) -> u32 {
        self.receiver_ids.as_ref().map_or(self.receivers, |v| v.len() as u32)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |k: &str, reason: &str| Err(ConfigError::invalid(k, &self.get(k).unwrap_or_default(), reason));
        let checks: [(&str, f64); 12] = [
            ("scenario.sim_time", self.sim_time),
            ("field.width", self.field.width),
            ("field.height", self.field.height),
            ("traffic.rate", self.rate),
            ("phy.tx_power", self.phy.tx_power),
            ("phy.frequency", self.phy.frequency),
            ("phy.ref_distance", self.phy.ref_distance),
            ("phy.system_loss", self.phy.system_loss),
            ("phy.rx_threshold", self.phy.rx_threshold),
            ("phy.cs_threshold", self.phy.cs_threshold),
            ("phy.bitrate", self.phy.bitrate),
            ("bcast.hello_interval", self.bcast.hello_interval),
        ];
        for (k, x) in checks {
            if !(x.is_finite() && x > 0.0) {
                return bad(k, "must be positive");
            }
        }
        if self.node_count == 0 {
            return bad("scenario.nodes", "must be at least 1");
        }
        if self.mobility == MobilityModel::Waypoint && !(self.max_speed.is_finite() && self.max_speed > 0.0) {
            return bad("mobility.max_speed", "must be positive");
        }
        if !(self.pause_time.is_finite() && self.pause_time >= 0.0) {
            return bad("mobility.pause_time", "must be non-negative");
        }
        if !(self.phy.shadow_sigma.is_finite() && self.phy.shadow_sigma >= 0.0) {
            return bad("phy.shadow_sigma", "must be non-negative");
        }
        if self.phy.path_loss_exponent <= 0.0 {
            return bad("phy.path_loss_exponent", "must be positive");
        }
        if self.phy.cs_threshold >= self.phy.rx_threshold {
            return bad("phy.cs_threshold", "must be below phy.rx_threshold");
        }
        if self.phy.capture_ratio < 1.0 {
            return bad("phy.capture_ratio", "must be at least 1");
        }
        if self.mac.cw_min == 0 || self.mac.cw_max < self.mac.cw_min {
            return bad("mac.cw_max", "need 0 < cw_min <= cw_max");
        }
        if self.mac.ifq_capacity == 0 {
            return bad("mac.ifq_capacity", "must be at least 1");
        }
        if self.payload == 0 {
            return bad("traffic.payload", "must be at least 1 byte");
        }
        if self.traffic_start < 0.0 || self.traffic_stop() < self.traffic_start {
            return bad("traffic.stop", "must not precede traffic.start");
        }
        if self.sender_count() > self.node_count {
            return bad("traffic.senders", "exceeds the node count");
        }
        if self.receiver_count() > self.node_count {
            return bad("traffic.receivers", "exceeds the node count");
        }
        for key in ["traffic.sender_ids", "traffic.receiver_ids"] {
            let ids = if key == "traffic.sender_ids" {
                &self.sender_ids
            } else {
                &self.receiver_ids
            };
            if let Some(ids) = ids {
                if ids.iter().any(|i| *i >= self.node_count) {
                    return bad(key, "node id not in the node set");
                }
                let mut sorted = ids.clone();
                sorted.sort_unstable();
                sorted.dedup();
                if sorted.len() != ids.len() {
                    return bad(key, "duplicate node id");
                }
            }
        }
        if let Some(ps) = &self.positions {
            if ps.len() != self.node_count as usize {
                return bad("mobility.positions", "need one position per node");
            }
            if ps.iter().any(|p| !self.field.contains(*p)) {
                return bad("mobility.positions", "position outside the field");
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ScenarioConfig::default();
        apply_lines(text, |line, k, v| {
            cfg.set(k, v).map_err(|e| ConfigError::AtLine {
                line,
                source: Box::new(e),
            })
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Fully resolved configuration in the input format.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for k in KEYS {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&self.get(k).expect("every listed key has a value"));
            out.push('\n');
        }
        out
    }
}

/// Calls `f(line_number, key, value)` for every non-blank, non-comment line.
pub fn apply_lines(
    text: &str,
    mut f: impl FnMut(usize, &str, &str) -> Result<(), ConfigError>,
) -> Result<(), ConfigError> {
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError::Syntax {
                line: i + 1,
                text: raw.to_string(),
            });
        };
        f(i + 1, k.trim(), v.trim())?;
    }
    Ok(())
}
