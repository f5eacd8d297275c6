//! Random waypoint mobility over a rectangular field.
//!
//! Positions are evaluated lazily: a node's trajectory is a chain of
//! [`WaypointLeg`]s that is extended only when someone asks where the node is.

use rand::Rng;

use crate::engine::{SimRng, SimTime};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Field {
    pub width: f64,
    pub height: f64,
}

impl Default for Field {
    fn default() -> Self {
        Field {
            width: 1500.0,
            height: 300.0,
        }
    }
}

impl Field {
    pub fn contains(&self, p: Point) -> bool {
        (0.0..=self.width).contains(&p.x) && (0.0..=self.height).contains(&p.y)
    }

    pub fn random_point(&self, rng: &mut SimRng) -> Point {
        Point::new(
            rng.random::<f64>() * self.width,
            rng.random::<f64>() * self.height,
        )
    }
}

/// One straight-line movement followed by a pause at the destination.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WaypointLeg {
    pub origin: Point,
    pub dest: Point,
    /// m/s, strictly positive.
    pub speed: f64,
    pub depart_at: SimTime,
    /// Seconds spent at `dest` before the next leg departs.
    pub pause: f64,
}

impl WaypointLeg {
    pub fn travel_time(&self) -> f64 {
        self.origin.distance(&self.dest) / self.speed
    }

    pub fn arrival(&self) -> SimTime {
        self.depart_at + self.travel_time()
    }

    /// When the following leg departs.
    pub fn next_departure(&self) -> SimTime {
        self.arrival() + self.pause
    }

    /// Linear interpolation from origin to dest, clamped at dest.
    pub fn position_at(&self, t: SimTime) -> Point {
        debug_assert!(t >= self.depart_at);
        let total = self.origin.distance(&self.dest);
        if total == 0.0 {
            return self.dest;
        }
        let travelled = (t - self.depart_at).max(0.0) * self.speed;
        if travelled >= total {
            return self.dest;
        }
        let frac = travelled / total;
        Point::new(
            self.origin.x + (self.dest.x - self.origin.x) * frac,
            self.origin.y + (self.dest.y - self.origin.y) * frac,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RandomWaypoint {
    pub field: Field,
    pub max_speed: f64,
    pub pause: f64,
}

impl RandomWaypoint {
    /// Destination uniform over the field, speed uniform on `(0, max_speed]`.
    pub fn next_leg(&self, from: Point, depart_at: SimTime, rng: &mut SimRng) -> WaypointLeg {
        let dest = self.field.random_point(rng);
        // 1 - U with U in [0, 1) lies in (0, 1]: zero speed is never drawn.
        let speed = self.max_speed * (1.0 - rng.random::<f64>());
        WaypointLeg {
            origin: from,
            dest,
            speed,
            depart_at,
            pause: self.pause,
        }
    }
}

/// Movement state of a single node.
#[derive(Clone, Debug)]
pub enum NodeMobility {
    Static(Point),
    Waypoint {
        model: RandomWaypoint,
        rng: Box<SimRng>,
        current: WaypointLeg,
        history: Vec<WaypointLeg>,
    },
}

impl NodeMobility {
    pub fn fixed(at: Point) -> Self {
        NodeMobility::Static(at)
    }

    pub fn waypoint(model: RandomWaypoint, start: Point, mut rng: SimRng) -> Self {
        let first = model.next_leg(start, SimTime::ZERO, &mut rng);
        NodeMobility::Waypoint {
            model,
            rng: Box::new(rng),
            current: first,
            history: vec![first],
        }
    }

    /// Queries must not go back in time past the current leg.
    pub fn position(&mut self, t: SimTime) -> Point {
        match self {
            NodeMobility::Static(p) => *p,
            NodeMobility::Waypoint {
                model,
                rng,
                current,
                history,
            } => {
                while t >= current.next_departure() {
                    let next = model.next_leg(current.dest, current.next_departure(), rng);
                    *current = next;
                    history.push(next);
                }
                current.position_at(t)
            }
        }
    }

    /// Every leg generated so far, oldest first (empty for static nodes).
    pub fn legs(&self) -> &[WaypointLeg] {
        match self {
            NodeMobility::Static(_) => &[],
            NodeMobility::Waypoint { history, .. } => history,
        }
    }
}
