mod common;

use common::ideal_static;
use manetsim_core::config::Protocol;
use manetsim_core::engine::SimTime;
use manetsim_core::mac::FrameKind;
use manetsim_core::packet::{Body, DataHeader, Dest, NodeId, PacketKind, Packet, Routed};
use manetsim_core::sim::TraceOptions;
use manetsim_core::Simulator;

/// Injects a one-hop source-routed data packet; returns its network-layer size.
fn unicast(sim: &mut Simulator, from: u32, to: u32) -> u32 {
    let uid = sim.fresh_uid();
    let packet = Packet::new(
        uid,
        Body::Data(DataHeader {
            source: NodeId(from),
            seq: 1,
            generated_at: sim.now(),
            payload: 512,
            route: Some(Routed::new(vec![NodeId(from), NodeId(to)])),
        }),
    );
    let size = packet.size_bytes();
    sim.inject(from, packet, Dest::Node(NodeId(to)));
    size
}

fn frames_on(positions: &[(f64, f64)], protocol: Protocol) -> Simulator {
    let mut sim = Simulator::new(ideal_static(protocol, positions)).unwrap();
    sim.set_trace(TraceOptions {
        frames: true,
        events: false,
    });
    sim
}

#[test]
fn unicast_is_rts_cts_data_ack() {
    let mut sim = frames_on(&[(0.0, 0.0), (100.0, 0.0)], Protocol::Dsr);
    let _ = unicast(&mut sim, 0, 1);
    sim.run_until(1.0);
    let kinds: Vec<(FrameKind, u32)> = sim.frames().iter().map(|f| (f.kind, f.node.0)).collect();
    assert_eq!(
        kinds,
        vec![
            (FrameKind::Rts, 0),
            (FrameKind::Cts, 1),
            (FrameKind::Data, 0),
            (FrameKind::Ack, 1)
        ]
    );
    assert_eq!(sim.mac_failures(), 0);
}

#[test]
fn exchange_timing_follows_airtimes() {
    let mut sim = frames_on(&[(0.0, 0.0), (100.0, 0.0)], Protocol::Dsr);
    let size = unicast(&mut sim, 0, 1);
    sim.run_until(1.0);
    let f = sim.frames();
    let phy = &sim.config().phy;
    let mac = &sim.config().mac;
    let prop = 100.0 / 3.0e8;
    let gap = |a: usize, b: usize| f[b].time.secs() - f[a].time.secs();
    let rts_air = f[0].size as f64 * 8.0 / phy.bitrate;
    let cts_air = f[1].size as f64 * 8.0 / phy.bitrate;
    assert!((gap(0, 1) - (rts_air + prop + mac.sifs)).abs() < 1e-9);
    assert!((gap(1, 2) - (cts_air + prop + mac.sifs)).abs() < 1e-9);
    assert!(size > 512);
    assert_eq!(f[2].size, size + mac.header_bytes);
}

#[test]
fn hello_is_one_broadcast_frame() {
    let mut sim = frames_on(&[(0.0, 0.0), (100.0, 0.0)], Protocol::Bcast);
    sim.run_until(0.999);
    let frames = sim.frames();
    assert!(!frames.is_empty());
    for f in frames {
        assert_eq!(f.kind, FrameKind::Data);
        assert_eq!(f.dest, Dest::Broadcast);
        assert_eq!(f.packet, Some(PacketKind::Hello));
    }
    let per_node = |n: u32| frames.iter().filter(|f| f.node.0 == n).count();
    assert_eq!((per_node(0), per_node(1)), (1, 1));
}

#[test]
fn unreachable_peer_gets_eight_rts_then_failure() {
    let mut sim = frames_on(&[(0.0, 0.0), (2000.0, 0.0)], Protocol::Dsr);
    let _ = unicast(&mut sim, 0, 1);
    sim.run_until(2.0);
    let rts = sim.frames().iter().filter(|f| f.kind == FrameKind::Rts).count();
    let retry_limit = sim.config().mac.retry_limit as usize;
    assert_eq!(rts, retry_limit + 1);
    assert!(sim.frames().iter().all(|f| f.kind != FrameKind::Cts));
    assert_eq!(sim.mac_failures(), 1);
}

#[test]
fn backoff_window_doubles_across_retries() {
    let mut sim = frames_on(&[(0.0, 0.0), (2000.0, 0.0)], Protocol::Dsr);
    let _ = unicast(&mut sim, 0, 1);
    sim.run_until(2.0);
    let times: Vec<f64> = sim
        .frames()
        .iter()
        .filter(|f| f.kind == FrameKind::Rts)
        .map(|f| f.time.secs())
        .collect();
    let slot = sim.config().mac.slot;
    let cw_min = sim.config().mac.cw_min as f64;
    // Later attempts may wait longer, but never more than the doubled window allows.
    for (k, w) in times.windows(2).enumerate() {
        let cw = ((cw_min + 1.0) * 2f64.powi(k as i32 + 1) - 1.0).min(1023.0);
        assert!(w[1] - w[0] < 0.01 + cw * slot, "attempt {k}: {w:?}");
    }
    assert!(times[0] >= SimTime::ZERO.secs());
}
