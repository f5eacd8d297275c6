//! Dynamic Source Routing.
//!
//! Routes are discovered on demand by flooding route requests; replies carry
//! the complete hop list back to the requester, which then stamps it into
//! every data packet. Each node caches every route it forwards or overhears
//! and purges links that the MAC reports as broken.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};

use rand::Rng;

use crate::engine::{EventHandle, SimTime};
use crate::mac::IfqEntry;
use crate::metrics::DropReason;
use crate::packet::{Body, Dest, NodeId, Packet, Routed};
use crate::routing::{NetAction, NetCtx, RoutingTimer};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DsrParams {
    /// Wait before the first RREQ retry, seconds; doubles per try.
    pub rreq_backoff: f64,
    pub rreq_max_tries: u32,
    pub send_buffer_capacity: usize,
    /// Seconds a packet may wait for a route.
    pub send_buffer_timeout: f64,
    pub cache_ttl: f64,
    /// Maximum cached routes per node; 0 means unbounded.
    pub cache_capacity: usize,
    pub promiscuous: bool,
    /// Upper bound of the random delay before rebroadcasting a RREQ.
    pub broadcast_jitter: f64,
}

impl Default for DsrParams {
    fn default() -> Self {
        DsrParams {
            rreq_backoff: 0.5,
            rreq_max_tries: 3,
            send_buffer_capacity: 64,
            send_buffer_timeout: 30.0,
            cache_ttl: 300.0,
            cache_capacity: 0,
            promiscuous: true,
            broadcast_jitter: 0.01,
        }
    }
}

/// A loop-free hop list, source first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SourceRoute(Vec<NodeId>);

impl SourceRoute {
    /// None if the list is shorter than two hops or repeats a node.
    pub fn new(hops: Vec<NodeId>) -> Option<Self> {
        (hops.len() >= 2 && is_simple(&hops)).then_some(SourceRoute(hops))
    }

    pub fn hops(&self) -> &[NodeId] {
        &self.0
    }

    pub fn source(&self) -> NodeId {
        self.0[0]
    }

    pub fn destination(&self) -> NodeId {
        self.0[self.0.len() - 1]
    }

    pub fn into_hops(self) -> Vec<NodeId> {
        self.0
    }
}

/// True if no node appears twice.
pub fn is_simple(hops: &[NodeId]) -> bool {
    let mut seen = BTreeSet::new();
    hops.iter().all(|h| seen.insert(*h))
}

#[derive(Clone, Debug)]
struct CachedRoute {
    route: SourceRoute,
    learned_at: SimTime,
}

/// Per-node store of source routes that start at the owner.
#[derive(Clone, Debug)]
pub struct RouteCache {
    owner: NodeId,
    ttl: f64,
    capacity: usize,
    entries: Vec<CachedRoute>,
}

impl RouteCache {
    pub fn new(owner: NodeId, ttl: f64, capacity: usize) -> Self {
        RouteCache {
            owner,
            ttl,
            capacity,
            entries: Vec::new(),
        }
    }

    fn live(&self, e: &CachedRoute, now: SimTime) -> bool {
        now - e.learned_at <= self.ttl
    }

    /// Inserts a route starting at the owner; refreshes an identical entry.
    pub fn insert(&mut self, route: SourceRoute, now: SimTime) -> bool {
        if route.source() != self.owner {
            return false;
        }
        if let Some(e) = self.entries.iter_mut().find(|e| e.route == route) {
            e.learned_at = now;
            return true;
        }
        if self.capacity > 0 && self.entries.len() >= self.capacity {
            let oldest = self
                .entries
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.learned_at.cmp(&b.1.learned_at))
                .map(|(i, _)| i)
                .expect("non-empty");
            self.entries.remove(oldest);
        }
        self.entries.push(CachedRoute {
            route,
            learned_at: now,
        });
        true
    }

    /// Shortest unexpired route to `dst`, most recently learned on ties.
    pub fn lookup(&mut self, dst: NodeId, now: SimTime) -> Option<Vec<NodeId>> {
        self.entries.retain(|e| now - e.learned_at <= self.ttl);
        self.peek(dst, now)
    }

    /// Like [`RouteCache::lookup`] but leaves expired entries in place.
    pub fn peek(&self, dst: NodeId, now: SimTime) -> Option<Vec<NodeId>> {
        let mut best: Option<(usize, SimTime, &CachedRoute)> = None;
        for e in self.entries.iter().filter(|e| self.live(e, now)) {
            let Some(pos) = e.route.hops().iter().position(|h| *h == dst) else {
                continue;
            };
            if pos == 0 {
                continue;
            }
            let better = match best {
                None => true,
                Some((bp, bt, _)) => pos < bp || (pos == bp && e.learned_at > bt),
            };
            if better {
                best = Some((pos, e.learned_at, e));
            }
        }
        best.map(|(pos, _, e)| e.route.hops()[..=pos].to_vec())
    }

    /// Cuts every cached route at the link `a`-`b` (either direction).
    /// Returns the number of routes affected.
    pub fn purge_link(&mut self, a: NodeId, b: NodeId) -> usize {
        let mut touched = 0;
        for e in &mut self.entries {
            let hops = &e.route.0;
            if let Some(i) = hops
                .windows(2)
                .position(|w| (w[0] == a && w[1] == b) || (w[0] == b && w[1] == a))
            {
                e.route.0.truncate(i + 1);
                touched += 1;
            }
        }
        self.entries.retain(|e| e.route.0.len() >= 2);
        touched
    }

    pub fn routes(&self, now: SimTime) -> impl Iterator<Item = &[NodeId]> + '_ {
        self.entries
            .iter()
            .filter(move |e| self.live(e, now))
            .map(|e| e.route.hops())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DsrTimer {
    RreqTimeout { target: NodeId },
    Jittered(Box<Packet>),
    BufferSweep,
}

#[derive(Debug)]
struct Buffered {
    packet: Packet,
    dst: NodeId,
    expires: SimTime,
}

#[derive(Debug)]
struct Discovery {
    tries: u32,
    timer: EventHandle,
}

pub struct DsrAgent {
    me: NodeId,
    params: DsrParams,
    cache: RouteCache,
    buffer: VecDeque<Buffered>,
    seen_requests: HashSet<(NodeId, u64)>,
    next_request: u64,
    discoveries: BTreeMap<NodeId, Discovery>,
    sweep: Option<EventHandle>,
    rreqs_originated: u64,
}

impl DsrAgent {
    pub fn new(me: NodeId, params: DsrParams) -> Self {
        DsrAgent {
            me,
            params,
            cache: RouteCache::new(me, params.cache_ttl, params.cache_capacity),
            buffer: VecDeque::new(),
            seen_requests: HashSet::new(),
            next_request: 0,
            discoveries: BTreeMap::new(),
            sweep: None,
            rreqs_originated: 0,
        }
    }

    pub fn cache(&self) -> &RouteCache {
        &self.cache
    }

    pub fn cache_mut(&mut self) -> &mut RouteCache {
        &mut self.cache
    }

    pub fn buffered(&self) -> impl Iterator<Item = &Packet> {
        self.buffer.iter().map(|b| &b.packet)
    }

    /// Route requests this node started (first tries and retries).
    pub fn rreqs_originated(&self) -> u64 {
        self.rreqs_originated
    }

    pub fn discovery_in_flight(&self, target: NodeId) -> bool {
        self.discoveries.contains_key(&target)
    }

    pub fn originate(&mut self, packet: Packet, dst: NodeId, ctx: &mut NetCtx) {
        if let Some(route) = self.cache.lookup(dst, ctx.now) {
            self.send_along(packet, route, ctx);
            return;
        }
        if self.buffer.len() >= self.params.send_buffer_capacity {
            if let Some(old) = self.buffer.pop_front() {
                ctx.drop_packet(&old.packet, DropReason::SendBufferFull);
            }
        }
        self.buffer.push_back(Buffered {
            packet,
            dst,
            expires: ctx.now + self.params.send_buffer_timeout,
        });
        if self.sweep.is_none() {
            self.sweep = Some(ctx.schedule(1.0, RoutingTimer::Dsr(DsrTimer::BufferSweep)));
        }
        self.start_discovery(dst, ctx);
    }

    fn send_along(&mut self, mut packet: Packet, route: Vec<NodeId>, ctx: &mut NetCtx) {
        let next = route[1];
        if let Body::Data(h) = &mut packet.body {
            h.route = Some(Routed::new(route));
        }
        ctx.send(packet, Dest::Node(next));
    }

    fn start_discovery(&mut self, target: NodeId, ctx: &mut NetCtx) {
        if self.discoveries.contains_key(&target) {
            return;
        }
        self.send_rreq(target, ctx);
        let timer = ctx.schedule(
            self.params.rreq_backoff,
            RoutingTimer::Dsr(DsrTimer::RreqTimeout { target }),
        );
        self.discoveries.insert(target, Discovery { tries: 1, timer });
    }

    fn send_rreq(&mut self, target: NodeId, ctx: &mut NetCtx) {
        self.next_request += 1;
        let id = self.next_request;
        self.seen_requests.insert((self.me, id));
        self.rreqs_originated += 1;
        let uid = ctx.uid();
        let rreq = Packet::new(
            uid,
            Body::Rreq {
                origin: self.me,
                target,
                id,
                route: vec![self.me],
            },
        );
        ctx.send(rreq, Dest::Broadcast);
    }

    /// Sends every buffered packet that now has a route; expires stale ones.
    fn drain(&mut self, ctx: &mut NetCtx) {
        let pending = std::mem::take(&mut self.buffer);
        for b in pending {
            if ctx.now > b.expires {
                ctx.drop_packet(&b.packet, DropReason::SendBufferTimeout);
            } else if let Some(route) = self.cache.lookup(b.dst, ctx.now) {
                self.send_along(b.packet, route, ctx);
            } else {
                self.buffer.push_back(b);
            }
        }
    }

    /// Inserts the parts of `route` that start at this node, in both directions.
    fn learn(&mut self, route: &[NodeId], now: SimTime) {
        if !is_simple(route) {
            return;
        }
        let Some(i) = route.iter().position(|h| *h == self.me) else {
            return;
        };
        if let Some(fwd) = SourceRoute::new(route[i..].to_vec()) {
            self.cache.insert(fwd, now);
        }
        if let Some(back) = SourceRoute::new(route[..=i].iter().rev().copied().collect()) {
            self.cache.insert(back, now);
        }
    }

    /// Learns from a route seen in a frame sent by `from`, which this node
    /// heard directly.
    fn learn_overheard(&mut self, route: &[NodeId], from: NodeId, now: SimTime) {
        if route.contains(&self.me) {
            self.learn(route, now);
            return;
        }
        if !is_simple(route) {
            return;
        }
        let Some(i) = route.iter().position(|h| *h == from) else {
            return;
        };
        let mut fwd = vec![self.me];
        fwd.extend_from_slice(&route[i..]);
        let mut back = vec![self.me];
        back.extend(route[..=i].iter().rev());
        for r in [fwd, back] {
            if let Some(r) = SourceRoute::new(r) {
                self.cache.insert(r, now);
            }
        }
    }

    pub fn receive(&mut self, packet: Packet, _from: NodeId, ctx: &mut NetCtx) {
        match &packet.body {
            Body::Rreq {
                origin,
                target,
                id,
                route,
            } => {
                let (origin, target, id, route) = (*origin, *target, *id, route.clone());
                self.handle_rreq(origin, target, id, route, ctx);
            }
            Body::Rrep { .. } => self.handle_rrep(packet, ctx),
            Body::Rerr { .. } => self.handle_rerr(packet, ctx),
            Body::Data(_) => self.handle_data(packet, ctx),
            Body::Hello { .. } | Body::Nack { .. } => {}
        }
    }

    fn handle_rreq(
        &mut self,
        origin: NodeId,
        target: NodeId,
        id: u64,
        route: Vec<NodeId>,
        ctx: &mut NetCtx,
    ) {
        if origin == self.me || route.contains(&self.me) {
            return;
        }
        if !self.seen_requests.insert((origin, id)) {
            return;
        }
        let mut accumulated = route.clone();
        accumulated.push(self.me);
        self.learn(&accumulated, ctx.now);

        if target == self.me {
            self.reply(&accumulated, accumulated.clone(), ctx);
            return;
        }
        if let Some(tail) = self.cache.lookup(target, ctx.now) {
            let mut full = route;
            full.extend(tail);
            if is_simple(&full) {
                self.reply(&accumulated, full, ctx);
                return;
            }
        }
        let uid = ctx.uid();
        let fwd = Packet::new(
            uid,
            Body::Rreq {
                origin,
                target,
                id,
                route: accumulated,
            },
        );
        if self.params.broadcast_jitter > 0.0 {
            let delay = ctx.rng.random::<f64>() * self.params.broadcast_jitter;
            ctx.schedule(delay, RoutingTimer::Dsr(DsrTimer::Jittered(Box::new(fwd))));
        } else {
            ctx.send(fwd, Dest::Broadcast);
        }
    }

    /// Answers a request: `accumulated` is the path from the origin to this
    /// node, `discovered` the full path from the origin to the target.
    fn reply(&mut self, accumulated: &[NodeId], discovered: Vec<NodeId>, ctx: &mut NetCtx) {
        let back: Vec<NodeId> = accumulated.iter().rev().copied().collect();
        let next = back[1];
        let uid = ctx.uid();
        let rrep = Packet::new(
            uid,
            Body::Rrep {
                discovered,
                back: Routed::new(back),
            },
        );
        ctx.send(rrep, Dest::Node(next));
    }

    fn handle_rrep(&mut self, mut packet: Packet, ctx: &mut NetCtx) {
        let Body::Rrep { discovered, back } = &mut packet.body else {
            return;
        };
        if back.current() != self.me {
            return;
        }
        let discovered = discovered.clone();
        let back_path = back.path.clone();
        self.learn(&discovered, ctx.now);
        self.learn(&back_path, ctx.now);
        if back.at_end() {
            let target = discovered[discovered.len() - 1];
            if let Some(d) = self.discoveries.remove(&target) {
                ctx.cancel(d.timer);
            }
            self.drain(ctx);
        } else {
            back.hop += 1;
            let next = back.current();
            ctx.send(packet, Dest::Node(next));
        }
    }

    fn handle_rerr(&mut self, mut packet: Packet, ctx: &mut NetCtx) {
        let Body::Rerr {
            broken_from,
            broken_to,
            back,
        } = &mut packet.body
        else {
            return;
        };
        if back.current() != self.me {
            return;
        }
        self.cache.purge_link(*broken_from, *broken_to);
        if !back.at_end() {
            back.hop += 1;
            let next = back.current();
            ctx.send(packet, Dest::Node(next));
        }
    }

    fn handle_data(&mut self, mut packet: Packet, ctx: &mut NetCtx) {
        let addressed = packet.routed().is_some_and(|r| r.current() == self.me);
        if !addressed {
            ctx.drop_packet(&packet, DropReason::Misrouted);
            return;
        }
        let routed = packet.routed_mut().expect("checked");
        let path = routed.path.clone();
        if routed.at_end() {
            self.learn(&path, ctx.now);
            ctx.deliver(packet);
            return;
        }
        routed.hop += 1;
        let next = routed.current();
        self.learn(&path, ctx.now);
        ctx.send(packet, Dest::Node(next));
    }

    /// Promiscuous tap on unicast frames addressed to someone else.
    pub fn overhear(&mut self, packet: &Packet, from: NodeId, ctx: &mut NetCtx) {
        if !self.params.promiscuous {
            return;
        }
        match &packet.body {
            Body::Data(h) => {
                if let Some(r) = &h.route {
                    self.learn_overheard(&r.path, from, ctx.now);
                }
            }
            Body::Rrep { discovered, back } => {
                self.learn_overheard(discovered, from, ctx.now);
                self.learn_overheard(&back.path, from, ctx.now);
            }
            Body::Rerr {
                broken_from,
                broken_to,
                ..
            } => {
                self.cache.purge_link(*broken_from, *broken_to);
            }
            _ => {}
        }
    }

    /// The MAC gave up delivering `packet` to `next_hop`.
    pub fn link_failure(&mut self, packet: Packet, next_hop: NodeId, ctx: &mut NetCtx) {
        self.cache.purge_link(self.me, next_hop);
        ctx.out.push(NetAction::FlushNextHop(next_hop));
        let mut notified = BTreeSet::new();
        self.undeliverable(packet, next_hop, &mut notified, ctx);
    }

    pub fn salvage(&mut self, entries: Vec<IfqEntry>, ctx: &mut NetCtx) {
        let mut notified = BTreeSet::new();
        for e in entries {
            let Dest::Node(next_hop) = e.next_hop else {
                ctx.drop_packet(&e.packet, DropReason::LinkBreak);
                continue;
            };
            self.undeliverable(e.packet, next_hop, &mut notified, ctx);
        }
    }

    fn undeliverable(
        &mut self,
        mut packet: Packet,
        next_hop: NodeId,
        notified: &mut BTreeSet<NodeId>,
        ctx: &mut NetCtx,
    ) {
        let Body::Data(h) = &mut packet.body else {
            ctx.drop_packet(&packet, DropReason::LinkBreak);
            return;
        };
        let Some(route) = h.route.take() else {
            ctx.drop_packet(&packet, DropReason::LinkBreak);
            return;
        };
        let origin = route.origin();
        if origin == self.me {
            let dst = route.path[route.path.len() - 1];
            self.originate(packet, dst, ctx);
            return;
        }
        h.route = Some(route.clone());
        ctx.drop_packet(&packet, DropReason::LinkBreak);
        if !notified.insert(origin) {
            return;
        }
        let my_index = route.hop - 1;
        let back: Vec<NodeId> = route.path[..=my_index].iter().rev().copied().collect();
        if back.len() < 2 {
            return;
        }
        let first = back[1];
        let uid = ctx.uid();
        let rerr = Packet::new(
            uid,
            Body::Rerr {
                broken_from: self.me,
                broken_to: next_hop,
                back: Routed::new(back),
            },
        );
        ctx.send(rerr, Dest::Node(first));
    }

    pub fn on_timer(&mut self, timer: DsrTimer, ctx: &mut NetCtx) {
        match timer {
            DsrTimer::Jittered(packet) => ctx.send(*packet, Dest::Broadcast),
            DsrTimer::BufferSweep => {
                self.sweep = None;
                self.drain(ctx);
                if !self.buffer.is_empty() {
                    self.sweep = Some(ctx.schedule(1.0, RoutingTimer::Dsr(DsrTimer::BufferSweep)));
                }
            }
            DsrTimer::RreqTimeout { target } => {
                let Some(d) = self.discoveries.get_mut(&target) else {
                    return;
                };
                let waiting = self.buffer.iter().any(|b| b.dst == target);
                if !waiting || self.cache.lookup(target, ctx.now).is_some() {
                    self.discoveries.remove(&target);
                    self.drain(ctx);
                    return;
                }
                if d.tries >= self.params.rreq_max_tries {
                    self.discoveries.remove(&target);
                    return;
                }
                d.tries += 1;
                let wait = self.params.rreq_backoff * 2f64.powi(d.tries as i32 - 1);
                self.send_rreq(target, ctx);
                let timer = ctx.schedule(wait, RoutingTimer::Dsr(DsrTimer::RreqTimeout { target }));
                if let Some(d) = self.discoveries.get_mut(&target) {
                    d.timer = timer;
                }
            }
        }
    }
}
