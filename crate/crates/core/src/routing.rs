//! Glue between routing agents and the rest of a node.

use crate::bcast::{BcastAgent, BcastTimer};
use crate::dsr::{DsrAgent, DsrTimer};
use crate::engine::{EventHandle, EventQueue, SimRng, SimTime};
use crate::mac::{IfqEntry, Priority};
use crate::metrics::{DropReason, MetricsLedger};
use crate::packet::{Body, Dest, NodeId, Packet};
use crate::sim::Event;

#[derive(Clone, Debug, PartialEq)]
pub enum RoutingTimer {
    Dsr(DsrTimer),
    Bcast(BcastTimer),
}

/// Requests a routing agent makes of its node.
#[derive(Debug)]
pub enum NetAction {
    Send {
        packet: Packet,
        next_hop: Dest,
        priority: Priority,
    },
    /// Hand a data packet to the local application.
    Deliver(Packet),
    /// Pull every queued packet for this next hop back out of the IFQ.
    FlushNextHop(NodeId),
    /// Discard a queued, not yet transmitted broadcast of data packet
    /// (source, seq), or a queued NACK asking for it.
    Withdraw { source: NodeId, seq: u64 },
}

pub struct NetCtx<'a> {
    pub now: SimTime,
    pub me: NodeId,
    pub queue: &'a mut EventQueue<Event>,
    pub rng: &'a mut SimRng,
    pub ledger: &'a mut MetricsLedger,
    pub out: &'a mut Vec<NetAction>,
    pub next_uid: &'a mut u64,
}

impl NetCtx<'_> {
    pub fn uid(&mut self) -> u64 {
        *self.next_uid += 1;
        *self.next_uid
    }

    pub fn schedule(&mut self, delay: f64, timer: RoutingTimer) -> EventHandle {
        self.queue.schedule_in(
            delay,
            Event::Routing {
                node: self.me,
                timer,
            },
        )
    }

    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        self.queue.cancel(handle)
    }

    pub fn send(&mut self, packet: Packet, next_hop: Dest) {
        let priority = if packet.kind().is_routing() {
            Priority::Routing
        } else {
            Priority::Data
        };
        self.out.push(NetAction::Send {
            packet,
            next_hop,
            priority,
        });
    }

    pub fn deliver(&mut self, packet: Packet) {
        self.out.push(NetAction::Deliver(packet));
    }

    /// Records the loss of a packet; data copies feed the drop accounting.
    pub fn drop_packet(&mut self, packet: &Packet, reason: DropReason) {
        self.ledger.record_drop(packet, reason);
    }
}

pub enum Agent {
    Dsr(DsrAgent),
    Bcast(BcastAgent),
}

impl Agent {
    pub fn start(&mut self, ctx: &mut NetCtx) {
        match self {
            Agent::Dsr(_) => {}
            Agent::Bcast(b) => b.start(ctx),
        }
    }

    /// A CBR source produced a packet for `dst` (unicast) or for everyone.
    pub fn originate(&mut self, packet: Packet, dst: Option<NodeId>, ctx: &mut NetCtx) {
        match (self, dst) {
            (Agent::Dsr(d), Some(dst)) => d.originate(packet, dst, ctx),
            (Agent::Bcast(b), None) => b.originate(packet, ctx),
            _ => panic!("origination mode does not match the routing protocol"),
        }
    }

    pub fn receive(&mut self, packet: Packet, from: NodeId, ctx: &mut NetCtx) {
        match self {
            Agent::Dsr(d) => d.receive(packet, from, ctx),
            Agent::Bcast(b) => b.receive(packet, from, ctx),
        }
    }

    pub fn overhear(&mut self, packet: Packet, from: NodeId, ctx: &mut NetCtx) {
        if let Agent::Dsr(d) = self {
            d.overhear(&packet, from, ctx);
        }
    }

    pub fn link_failure(&mut self, packet: Packet, next_hop: NodeId, ctx: &mut NetCtx) {
        match self {
            Agent::Dsr(d) => d.link_failure(packet, next_hop, ctx),
            Agent::Bcast(_) => ctx.drop_packet(&packet, DropReason::MacRetry),
        }
    }

    /// Packets pulled from the IFQ after a link break.
    pub fn salvage(&mut self, entries: Vec<IfqEntry>, ctx: &mut NetCtx) {
        match self {
            Agent::Dsr(d) => d.salvage(entries, ctx),
            Agent::Bcast(_) => {
                for e in entries {
                    ctx.drop_packet(&e.packet, DropReason::LinkBreak);
                }
            }
        }
    }

    pub fn on_timer(&mut self, timer: RoutingTimer, ctx: &mut NetCtx) {
        match (self, timer) {
            (Agent::Dsr(d), RoutingTimer::Dsr(t)) => d.on_timer(t, ctx),
            (Agent::Bcast(b), RoutingTimer::Bcast(t)) => b.on_timer(t, ctx),
            _ => unreachable!("timer routed to the wrong agent"),
        }
    }

    pub fn as_dsr(&self) -> Option<&DsrAgent> {
        match self {
            Agent::Dsr(d) => Some(d),
            _ => None,
        }
    }

    pub fn as_bcast(&self) -> Option<&BcastAgent> {
        match self {
            Agent::Bcast(b) => Some(b),
            _ => None,
        }
    }

    /// Data packets this agent is still holding (for end-of-run accounting).
    pub fn held_data(&self) -> Vec<&Packet> {
        match self {
            Agent::Dsr(d) => d.buffered().collect(),
            Agent::Bcast(_) => Vec::new(),
        }
    }
}

/// True for packets that carry application data.
pub fn is_data(packet: &Packet) -> bool {
    matches!(packet.body, Body::Data(_))
}
