use manetsim_core::config::Protocol;
use manetsim_core::sim::TraceOptions;
use manetsim_core::{ScenarioConfig, Simulator};

fn short(protocol: Protocol, seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        protocol,
        seed,
        sim_time: 25.0,
        traffic_start: 5.0,
        senders: 2,
        receivers: 10,
        ..ScenarioConfig::default()
    }
}

fn run(cfg: ScenarioConfig) -> (String, String) {
    let seed = cfg.seed;
    let mut sim = Simulator::new(cfg).unwrap();
    sim.set_trace(TraceOptions {
        events: true,
        frames: false,
    });
    sim.run_until(sim.config().sim_time);
    let report = sim.finish().unwrap();
    (
        report.metrics.csv_row(&report.scenario, seed),
        report.event_digest.unwrap(),
    )
}

#[test]
fn same_seed_same_bytes() {
    for protocol in [Protocol::Dsr, Protocol::Bcast] {
        assert_eq!(run(short(protocol, 7)), run(short(protocol, 7)));
    }
}

#[test]
fn different_seeds_differ() {
    assert_ne!(run(short(Protocol::Bcast, 1)).1, run(short(Protocol::Bcast, 2)).1);
}

#[test]
fn protocols_share_trajectories_and_traffic() {
    for seed in 1..=3 {
        let dsr = Simulator::new(short(Protocol::Dsr, seed)).unwrap().run().unwrap();
        let bcast = Simulator::new(short(Protocol::Bcast, seed)).unwrap().run().unwrap();
        assert_eq!(dsr.trajectory_digest, bcast.trajectory_digest);
        assert_eq!(dsr.traffic_digest, bcast.traffic_digest);
    }
    let a = Simulator::new(short(Protocol::Dsr, 1)).unwrap().run().unwrap();
    let b = Simulator::new(short(Protocol::Dsr, 2)).unwrap().run().unwrap();
    assert_ne!(a.trajectory_digest, b.trajectory_digest);
}

#[test]
fn ledgers_conserve_packets() {
    for protocol in [Protocol::Dsr, Protocol::Bcast] {
        let l = Simulator::new(short(protocol, 4)).unwrap().run().unwrap().ledger;
        assert_eq!(l.data_generated, l.data_delivered + l.data_dropped + l.data_in_flight);
        let m = l.metrics();
        assert!((0.0..=1.0).contains(&m.pdr.unwrap()));
        assert!(m.nrl.unwrap() >= 0.0 && m.nml.unwrap() >= m.nrl.unwrap());
    }
}
