//! Simplified IEEE 802.11 DCF.
//!
//! Unicast frames go through RTS/CTS/DATA/ACK with binary exponential
//! backoff and a retry limit; broadcast frames are sent once after carrier
//! sensing, with no control frames and no retries. Physical carrier sense
//! comes from the node's [`Receiver`]; virtual carrier sense from the NAV.

use std::collections::{HashMap, VecDeque};
use std::rc::Rc;

use rand::Rng;

use crate::engine::{EventHandle, EventQueue, SimRng, SimTime};
use crate::packet::{Body, Dest, NodeId, Packet};
use crate::phy::{PhyParams, Receiver};
use crate::sim::Event;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MacParams {
    /// Seconds.
    pub slot: f64,
    pub sifs: f64,
    pub difs: f64,
    pub cw_min: u32,
    pub cw_max: u32,
    /// Retransmissions allowed after the first attempt.
    pub retry_limit: u32,
    /// Unicast frames larger than this many bytes use RTS/CTS.
    pub rts_threshold: u32,
    pub ifq_capacity: usize,
    /// MAC + IP header bytes added to every network-layer packet on the air.
    pub header_bytes: u32,
    pub rts_bytes: u32,
    pub cts_bytes: u32,
    pub ack_bytes: u32,
}

impl Default for MacParams {
    fn default() -> Self {
        MacParams {
            slot: 20e-6,
            sifs: 10e-6,
            difs: 50e-6,
            cw_min: 31,
            cw_max: 1023,
            retry_limit: 7,
            rts_threshold: 0,
            ifq_capacity: 50,
            header_bytes: 58,
            rts_bytes: 20,
            cts_bytes: 14,
            ack_bytes: 14,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FrameKind {
    Rts,
    Cts,
    Ack,
    Data,
}

impl FrameKind {
    pub fn is_control(self) -> bool {
        !matches!(self, FrameKind::Data)
    }

    pub fn label(self) -> &'static str {
        match self {
            FrameKind::Rts => "RTS",
            FrameKind::Cts => "CTS",
            FrameKind::Ack => "ACK",
            FrameKind::Data => "DATA",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Frame {
    pub id: u64,
    pub kind: FrameKind,
    pub tx: NodeId,
    pub rx: Dest,
    /// Bytes on the air.
    pub size: u32,
    /// Medium reservation following the end of this frame, seconds.
    pub nav: f64,
    pub mac_seq: u64,
    /// True for second and later DATA transmissions of the same packet.
    pub retry: bool,
    pub packet: Option<Packet>,
}

impl Frame {
    #[cfg(test)]
    pub(crate) fn test_frame(id: u64) -> Frame {
        Frame {
            id,
            kind: FrameKind::Data,
            tx: NodeId(0),
            rx: Dest::Broadcast,
            size: 100,
            nav: 0.0,
            mac_seq: 0,
            retry: false,
            packet: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Priority {
    Routing,
    Data,
}

#[derive(Clone, Debug)]
pub struct IfqEntry {
    pub packet: Packet,
    pub next_hop: Dest,
    pub priority: Priority,
    pub enqueued_at: SimTime,
}

#[derive(Debug)]
pub enum Enqueued {
    /// Admitted; a full queue may have evicted its newest data entry.
    Accepted { evicted: Option<IfqEntry> },
    Dropped(IfqEntry),
}

/// Interface queue: routing packets always leave before data packets,
/// FIFO within each class.
#[derive(Debug)]
pub struct Ifq {
    capacity: usize,
    routing: VecDeque<IfqEntry>,
    data: VecDeque<IfqEntry>,
}

impl Ifq {
    pub fn new(capacity: usize) -> Self {
        Ifq {
            capacity,
            routing: VecDeque::new(),
            data: VecDeque::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.routing.len() + self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn enqueue(&mut self, entry: IfqEntry) -> Enqueued {
        let mut evicted = None;
        if self.len() >= self.capacity {
            match entry.priority {
                Priority::Data => return Enqueued::Dropped(entry),
                Priority::Routing => match self.data.pop_back() {
                    Some(victim) => evicted = Some(victim),
                    None => return Enqueued::Dropped(entry),
                },
            }
        }
        match entry.priority {
            Priority::Routing => self.routing.push_back(entry),
            Priority::Data => self.data.push_back(entry),
        }
        Enqueued::Accepted { evicted }
    }

    pub fn dequeue(&mut self) -> Option<IfqEntry> {
        self.routing.pop_front().or_else(|| self.data.pop_front())
    }

    /// Removes every entry headed for `next_hop`, preserving order.
    pub fn remove_next_hop(&mut self, next_hop: NodeId) -> Vec<IfqEntry> {
        let mut removed = Vec::new();
        for q in [&mut self.routing, &mut self.data] {
            let mut kept = VecDeque::with_capacity(q.len());
            for e in q.drain(..) {
                if e.next_hop == Dest::Node(next_hop) {
                    removed.push(e);
                } else {
                    kept.push_back(e);
                }
            }
            *q = kept;
        }
        removed
    }

    /// Removes queued broadcasts of data packet (source, seq) and NACKs
    /// for it.
    pub fn remove_broadcast(&mut self, source: NodeId, seq: u64) -> bool {
        let before = self.len();
        let keep = |e: &IfqEntry| {
            e.next_hop != Dest::Broadcast
                || match &e.packet.body {
                    Body::Data(h) => (h.source, h.seq) != (source, seq),
                    Body::Nack { source: s, seq: n } => (*s, *n) != (source, seq),
                    _ => true,
                }
        };
        self.routing.retain(keep);
        self.data.retain(keep);
        self.len() != before
    }

    pub fn iter(&self) -> impl Iterator<Item = &IfqEntry> {
        self.routing.iter().chain(self.data.iter())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MacTimer {
    Contention,
    TxEnd,
    CtsTimeout,
    AckTimeout,
    SendData,
    Respond,
    NavEnd,
}

/// What the MAC asks of the rest of the node / the channel.
#[derive(Debug)]
pub enum MacOutput {
    Transmit(Rc<Frame>),
    Deliver { packet: Packet, from: NodeId },
    Overheard { packet: Packet, from: NodeId },
    TxFailed { packet: Packet, next_hop: NodeId },
}

/// Borrowed simulator services for one MAC callback.
pub struct MacIo<'a> {
    pub now: SimTime,
    pub queue: &'a mut EventQueue<Event>,
    pub rng: &'a mut SimRng,
    pub phy: &'a PhyParams,
    pub out: &'a mut Vec<MacOutput>,
    pub next_frame_id: &'a mut u64,
}

impl MacIo<'_> {
    fn frame_id(&mut self) -> u64 {
        *self.next_frame_id += 1;
        *self.next_frame_id
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MacState {
    Idle,
    Contending,
    SendingRts,
    AwaitingCts,
    AwaitingSifs,
    SendingData,
    AwaitingAck,
    SendingBroadcast,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum TxRole {
    Own,
    Response,
}

#[derive(Debug)]
struct Outgoing {
    entry: IfqEntry,
    retries: u32,
    mac_seq: u64,
    data_sent: u32,
}

#[derive(Debug, Default)]
struct Backoff {
    slots: u32,
    /// Running countdown: timer handle and the instant DIFS completes.
    running: Option<(EventHandle, SimTime)>,
}

pub struct Mac {
    node: NodeId,
    params: MacParams,
    pub ifq: Ifq,
    pub rx: Receiver,
    state: MacState,
    cw: u32,
    backoff: Backoff,
    current: Option<Outgoing>,
    tx_role: Option<TxRole>,
    response: Option<(Frame, EventHandle)>,
    timeout: Option<EventHandle>,
    nav_until: SimTime,
    next_seq: u64,
    last_seq_from: HashMap<NodeId, u64>,
}

impl Mac {
    pub fn new(node: NodeId, params: MacParams) -> Self {
        Mac {
            node,
            params,
            ifq: Ifq::new(params.ifq_capacity),
            rx: Receiver::default(),
            state: MacState::Idle,
            cw: params.cw_min,
            backoff: Backoff::default(),
            current: None,
            tx_role: None,
            response: None,
            timeout: None,
            nav_until: SimTime::ZERO,
            next_seq: 0,
            last_seq_from: HashMap::new(),
        }
    }

    pub fn state(&self) -> MacState {
        self.state
    }

    pub fn contention_window(&self) -> u32 {
        self.cw
    }

    pub fn transmitting(&self) -> bool {
        self.tx_role.is_some()
    }

    /// Packet currently owned by the state machine, if any.
    pub fn in_service(&self) -> Option<&Packet> {
        self.current.as_ref().map(|c| &c.entry.packet)
    }

    pub fn medium_idle(&self, now: SimTime) -> bool {
        self.tx_role.is_none() && self.response.is_none() && !self.rx.busy() && now >= self.nav_until
    }

    pub fn enqueue(&mut self, entry: IfqEntry, io: &mut MacIo) -> Enqueued {
        let result = self.ifq.enqueue(entry);
        self.kick(io);
        result
    }

    fn kick(&mut self, io: &mut MacIo) {
        if self.state == MacState::Idle && self.current.is_none() {
            self.start_next(true, io);
        }
    }

    fn start_next(&mut self, fresh: bool, io: &mut MacIo) {
        debug_assert!(self.current.is_none());
        self.state = MacState::Idle;
        if let Some(entry) = self.ifq.dequeue() {
            self.next_seq += 1;
            self.current = Some(Outgoing {
                entry,
                retries: 0,
                mac_seq: self.next_seq,
                data_sent: 0,
            });
            self.contend(fresh, io);
        }
    }

    fn draw_slots(&mut self, rng: &mut SimRng) -> u32 {
        rng.random_range(0..self.cw)
    }

    /// A fresh frame on an idle medium only waits DIFS; everything else
    /// waits DIFS plus a random backoff.
    fn contend(&mut self, fresh: bool, io: &mut MacIo) {
        self.state = MacState::Contending;
        let slots = if fresh && self.medium_idle(io.now) {
            0
        } else {
            self.draw_slots(io.rng)
        };
        self.backoff = Backoff {
            slots,
            running: None,
        };
        self.medium_changed(io);
    }

    /// Re-evaluates carrier sense; freezes or resumes the backoff countdown.
    pub fn medium_changed(&mut self, io: &mut MacIo) {
        if self.state != MacState::Contending {
            return;
        }
        let idle = self.medium_idle(io.now);
        match (idle, self.backoff.running) {
            (true, None) => {
                let difs_done = io.now + self.params.difs;
                let fire = difs_done + f64::from(self.backoff.slots) * self.params.slot;
                let h = io
                    .queue
                    .schedule(fire, Event::mac(self.node, MacTimer::Contention))
                    .expect("future");
                self.backoff.running = Some((h, difs_done));
            }
            (false, Some((h, difs_done))) => {
                io.queue.cancel(h);
                self.backoff.running = None;
                if io.now > difs_done {
                    let elapsed = ((io.now - difs_done) / self.params.slot + 1e-9).floor() as u32;
                    self.backoff.slots -= elapsed.min(self.backoff.slots);
                } else if self.backoff.slots == 0 {
                    self.backoff.slots = self.draw_slots(io.rng);
                }
            }
            _ => {}
        }
    }

    pub fn signal_start(
        &mut self,
        frame: Rc<Frame>,
        power: f64,
        end: SimTime,
        io: &mut MacIo,
    ) {
        let transmitting = self.transmitting();
        self.rx.begin(frame, power, end, transmitting);
        self.medium_changed(io);
    }

    pub fn signal_end(&mut self, frame_id: u64, io: &mut MacIo) {
        if let Some(r) = self.rx.finish(frame_id) {
            if r.decodable(io.phy) {
                self.on_frame(&r.frame, io);
            }
        }
        self.medium_changed(io);
    }

    fn send(&mut self, frame: Frame, role: TxRole, io: &mut MacIo) {
        let airtime = io.phy.airtime(frame.size);
        self.tx_role = Some(role);
        if io.phy.interference {
            self.rx.corrupt_all();
        }
        io.queue
            .schedule_in(airtime, Event::mac(self.node, MacTimer::TxEnd));
        io.out.push(MacOutput::Transmit(Rc::new(frame)));
    }

    fn data_bytes(&self, packet: &Packet) -> u32 {
        packet.size_bytes() + self.params.header_bytes
    }

    fn data_frame(&self, cur: &Outgoing, io: &mut MacIo) -> Frame {
        let nav = match cur.entry.next_hop {
            Dest::Broadcast => 0.0,
            Dest::Node(_) => self.params.sifs + io.phy.airtime(self.params.ack_bytes),
        };
        Frame {
            id: io.frame_id(),
            kind: FrameKind::Data,
            tx: self.node,
            rx: cur.entry.next_hop,
            size: self.data_bytes(&cur.entry.packet),
            nav,
            mac_seq: cur.mac_seq,
            retry: cur.data_sent > 0,
            packet: Some(cur.entry.packet.clone()),
        }
    }

    fn transmit_current(&mut self, io: &mut MacIo) {
        let cur = self.current.as_ref().expect("contention without a frame");
        let next_hop = cur.entry.next_hop;
        let bytes = self.data_bytes(&cur.entry.packet);
        match next_hop {
            Dest::Broadcast => {
                let frame = self.data_frame(cur, io);
                self.state = MacState::SendingBroadcast;
                self.send(frame, TxRole::Own, io);
            }
            Dest::Node(_) if bytes > self.params.rts_threshold => {
                let p = &self.params;
                let nav = 3.0 * p.sifs
                    + io.phy.airtime(p.cts_bytes)
                    + io.phy.airtime(bytes)
                    + io.phy.airtime(p.ack_bytes);
                let frame = Frame {
                    id: io.frame_id(),
                    kind: FrameKind::Rts,
                    tx: self.node,
                    rx: next_hop,
                    size: p.rts_bytes,
                    nav,
                    mac_seq: cur.mac_seq,
                    retry: false,
                    packet: None,
                };
                self.state = MacState::SendingRts;
                self.send(frame, TxRole::Own, io);
            }
            Dest::Node(_) => self.transmit_data(io),
        }
    }

    fn transmit_data(&mut self, io: &mut MacIo) {
        let cur = self.current.as_ref().expect("no frame");
        let frame = self.data_frame(cur, io);
        if let Some(c) = self.current.as_mut() {
            c.data_sent += 1;
        }
        self.state = MacState::SendingData;
        self.send(frame, TxRole::Own, io);
    }

    fn schedule_response(&mut self, frame: Frame, io: &mut MacIo) {
        let h = io
            .queue
            .schedule_in(self.params.sifs, Event::mac(self.node, MacTimer::Respond));
        self.response = Some((frame, h));
        self.medium_changed(io);
    }

    fn on_frame(&mut self, frame: &Frame, io: &mut MacIo) {
        match frame.rx {
            Dest::Node(me) if me == self.node => self.on_frame_for_me(frame, io),
            Dest::Node(_) => {
                if frame.nav > 0.0 {
                    let until = io.now + frame.nav;
                    if until > self.nav_until {
                        self.nav_until = until;
                        io.queue
                            .schedule(until, Event::mac(self.node, MacTimer::NavEnd))
                            .expect("future");
                    }
                }
                if let (FrameKind::Data, Some(p)) = (frame.kind, &frame.packet) {
                    io.out.push(MacOutput::Overheard {
                        packet: p.clone(),
                        from: frame.tx,
                    });
                }
            }
            Dest::Broadcast => {
                if let Some(p) = &frame.packet {
                    io.out.push(MacOutput::Deliver {
                        packet: p.clone(),
                        from: frame.tx,
                    });
                }
            }
        }
    }

    fn expected_peer(&self) -> Option<NodeId> {
        match self.current.as_ref()?.entry.next_hop {
            Dest::Node(n) => Some(n),
            Dest::Broadcast => None,
        }
    }

    fn on_frame_for_me(&mut self, frame: &Frame, io: &mut MacIo) {
        match frame.kind {
            FrameKind::Rts => {
                let can_answer = matches!(self.state, MacState::Idle | MacState::Contending)
                    && io.now >= self.nav_until
                    && self.tx_role.is_none()
                    && self.response.is_none();
                if can_answer {
                    let cts_air = io.phy.airtime(self.params.cts_bytes);
                    let cts = Frame {
                        id: io.frame_id(),
                        kind: FrameKind::Cts,
                        tx: self.node,
                        rx: Dest::Node(frame.tx),
                        size: self.params.cts_bytes,
                        nav: (frame.nav - self.params.sifs - cts_air).max(0.0),
                        mac_seq: 0,
                        retry: false,
                        packet: None,
                    };
                    self.schedule_response(cts, io);
                }
            }
            FrameKind::Cts => {
                if self.state == MacState::AwaitingCts && self.expected_peer() == Some(frame.tx) {
                    if let Some(h) = self.timeout.take() {
                        io.queue.cancel(h);
                    }
                    self.state = MacState::AwaitingSifs;
                    io.queue
                        .schedule_in(self.params.sifs, Event::mac(self.node, MacTimer::SendData));
                }
            }
            FrameKind::Data => {
                if self.response.is_none() {
                    let ack = Frame {
                        id: io.frame_id(),
                        kind: FrameKind::Ack,
                        tx: self.node,
                        rx: Dest::Node(frame.tx),
                        size: self.params.ack_bytes,
                        nav: 0.0,
                        mac_seq: 0,
                        retry: false,
                        packet: None,
                    };
                    self.schedule_response(ack, io);
                }
                let dup = self.last_seq_from.insert(frame.tx, frame.mac_seq) == Some(frame.mac_seq);
                if !dup {
                    if let Some(p) = &frame.packet {
                        io.out.push(MacOutput::Deliver {
                            packet: p.clone(),
                            from: frame.tx,
                        });
                    }
                }
            }
            FrameKind::Ack => {
                if self.state == MacState::AwaitingAck && self.expected_peer() == Some(frame.tx) {
                    if let Some(h) = self.timeout.take() {
                        io.queue.cancel(h);
                    }
                    self.finish_success(io);
                }
            }
        }
    }

    fn finish_success(&mut self, io: &mut MacIo) {
        self.cw = self.params.cw_min;
        self.current = None;
        self.start_next(false, io);
    }

    fn attempt_failed(&mut self, io: &mut MacIo) {
        let cur = self.current.as_mut().expect("timeout without frame");
        cur.retries += 1;
        self.cw = (2 * self.cw + 1).min(self.params.cw_max);
        if cur.retries > self.params.retry_limit {
            let cur = self.current.take().expect("checked");
            if let Dest::Node(next_hop) = cur.entry.next_hop {
                io.out.push(MacOutput::TxFailed {
                    packet: cur.entry.packet,
                    next_hop,
                });
            }
            self.cw = self.params.cw_min;
            self.start_next(false, io);
        } else {
            self.contend(false, io);
        }
    }

    pub fn on_timer(&mut self, timer: MacTimer, io: &mut MacIo) {
        match timer {
            MacTimer::Contention => {
                self.backoff.running = None;
                if self.state == MacState::Contending {
                    self.transmit_current(io);
                }
            }
            MacTimer::TxEnd => {
                let role = self.tx_role.take();
                if role == Some(TxRole::Own) {
                    let margin = 2.0 * self.params.slot;
                    match self.state {
                        MacState::SendingRts => {
                            self.state = MacState::AwaitingCts;
                            let wait = self.params.sifs
                                + io.phy.airtime(self.params.cts_bytes)
                                + margin;
                            self.timeout = Some(
                                io.queue
                                    .schedule_in(wait, Event::mac(self.node, MacTimer::CtsTimeout)),
                            );
                        }
                        MacState::SendingData => {
                            self.state = MacState::AwaitingAck;
                            let wait = self.params.sifs
                                + io.phy.airtime(self.params.ack_bytes)
                                + margin;
                            self.timeout = Some(
                                io.queue
                                    .schedule_in(wait, Event::mac(self.node, MacTimer::AckTimeout)),
                            );
                        }
                        MacState::SendingBroadcast => {
                            self.current = None;
                            self.start_next(false, io);
                        }
                        _ => {}
                    }
                }
                self.medium_changed(io);
            }
            MacTimer::CtsTimeout | MacTimer::AckTimeout => {
                self.timeout = None;
                self.attempt_failed(io);
            }
            MacTimer::SendData => {
                if self.state == MacState::AwaitingSifs {
                    if self.transmitting() {
                        self.attempt_failed(io);
                    } else {
                        self.transmit_data(io);
                    }
                }
            }
            MacTimer::Respond => {
                if let Some((frame, _)) = self.response.take() {
                    if !self.transmitting() {
                        self.send(frame, TxRole::Response, io);
                    }
                }
                self.medium_changed(io);
            }
            MacTimer::NavEnd => self.medium_changed(io),
        }
    }
}
