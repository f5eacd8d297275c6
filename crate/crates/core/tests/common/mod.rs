#![allow(dead_code)]

use std::collections::VecDeque;

use manetsim_core::config::{MobilityModel, Protocol};
use manetsim_core::mobility::{Field, Point};
use manetsim_core::phy::{mean_rx_power, PhyParams};
use manetsim_core::ScenarioConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Static nodes, no shadowing, no interference, no traffic.
pub fn ideal_static(protocol: Protocol, positions: &[(f64, f64)]) -> ScenarioConfig {
    let width = positions.iter().map(|p| p.0).fold(1500.0, f64::max);
    let height = positions.iter().map(|p| p.1).fold(300.0, f64::max);
    let mut cfg = ScenarioConfig {
        protocol,
        node_count: positions.len() as u32,
        mobility: MobilityModel::Static,
        field: Field { width, height },
        positions: Some(positions.iter().map(|&(x, y)| Point::new(x, y)).collect()),
        sender_ids: Some(vec![]),
        receiver_ids: Some(vec![]),
        ..ScenarioConfig::default()
    };
    cfg.phy.shadow_sigma = 0.0;
    cfg.phy.interference = false;
    cfg
}

/// Links exist where the mean received power reaches the receive threshold.
pub fn adjacency(phy: &PhyParams, points: &[Point]) -> Vec<Vec<bool>> {
    let n = points.len();
    let mut adj = vec![vec![false; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let p = mean_rx_power(phy, points[i].distance(&points[j])).unwrap();
                adj[i][j] = p >= phy.rx_threshold;
            }
        }
    }
    adj
}

pub fn connected(adj: &[Vec<bool>]) -> bool {
    let n = adj.len();
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    while let Some(u) = queue.pop_front() {
        for v in 0..n {
            if adj[u][v] && !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Rejection-samples node placements in `field` until the graph is
/// connected and has at least one pair of nodes out of direct range.
pub fn random_connected(seed: u64, n: usize, field: Field, phy: &PhyParams) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let pts: Vec<Point> = (0..n)
            .map(|_| {
                Point::new(
                    rng.random::<f64>() * field.width,
                    rng.random::<f64>() * field.height,
                )
            })
            .collect();
        let adj = adjacency(phy, &pts);
        let multi_hop = adj.iter().enumerate().any(|(i, row)| {
            row.iter().enumerate().any(|(j, l)| i != j && !l)
        });
        if multi_hop && connected(&adj) {
            return pts.iter().map(|p| (p.x, p.y)).collect();
        }
    }
}

/// True when the list has no repeated node.
pub fn is_simple<T: Ord + Clone>(path: &[T]) -> bool {
    let mut v = path.to_vec();
    v.sort();
    v.windows(2).all(|w| w[0] != w[1])
}

use manetsim_core::packet::{NodeId, PacketKind};
use manetsim_core::sim::TraceOptions;
use manetsim_core::{RunReport, Simulator};

/// Outcome of a short static run with a frame trace.
pub struct TracedRun {
    pub report: RunReport,
    /// DATA frames that carried application data.
    pub data_frames: usize,
    /// Source routes seen on data frames.
    pub routes: Vec<Vec<NodeId>>,
    pub nacks: usize,
}

pub fn traced(cfg: ScenarioConfig, setup: impl FnOnce(&mut Simulator)) -> TracedRun {
    let mut sim = Simulator::new(cfg).unwrap();
    sim.set_trace(TraceOptions {
        frames: true,
        events: false,
    });
    setup(&mut sim);
    let end = sim.config().sim_time;
    sim.run_until(end);
    let data: Vec<_> = sim
        .frames()
        .iter()
        .filter(|f| f.packet == Some(PacketKind::Data))
        .collect();
    let data_frames = data.len();
    let routes = data.iter().filter_map(|f| f.route.clone()).collect();
    let nacks = sim
        .frames()
        .iter()
        .filter(|f| f.packet == Some(PacketKind::Nack))
        .count();
    TracedRun {
        report: sim.finish().unwrap(),
        data_frames,
        routes,
        nacks,
    }
}

/// Every node receives; `senders` nodes send at 2 packets/s from 5 s to 15 s.
pub fn flood_config(positions: &[(f64, f64)], senders: u32) -> ScenarioConfig {
    let n = positions.len() as u32;
    let mut cfg = ideal_static(Protocol::Bcast, positions);
    cfg.sender_ids = Some((0..senders).collect());
    cfg.receiver_ids = Some((0..n).collect());
    cfg.sim_time = 20.0;
    cfg.traffic_start = 5.0;
    cfg.traffic_stop = Some(15.0);
    cfg
}

/// Two senders, every node a receiver, traffic stops well before the end.
pub fn dsr_static_config(positions: &[(f64, f64)]) -> ScenarioConfig {
    let n = positions.len() as u32;
    let mut cfg = ideal_static(Protocol::Dsr, positions);
    cfg.sender_ids = Some(vec![0, n - 1]);
    cfg.receiver_ids = Some((0..n).collect());
    cfg.rate = 1.0;
    cfg.sim_time = 30.0;
    cfg.traffic_start = 1.0;
    cfg.traffic_stop = Some(20.0);
    cfg
}

/// Three nodes in a line, each only reaching its neighbors.
pub fn chain3() -> Vec<(f64, f64)> {
    vec![(0.0, 150.0), (400.0, 150.0), (800.0, 150.0)]
}
