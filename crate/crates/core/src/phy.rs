//! Log-normal shadowing radio model.
//!
//! Mean received power follows free-space loss up to the reference distance
//! and a distance-power law beyond it. Each (link, frame) draw adds a
//! Gaussian offset in dB. Reception is classified against two thresholds:
//! frames above `rx_threshold` can be decoded, frames above `cs_threshold`
//! only make the medium look busy.

use std::f64::consts::PI;
use std::rc::Rc;

use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::engine::{SimRng, SimTime};
use crate::error::SimError;
use crate::mac::Frame;

/// Propagation speed used for wavelength and propagation delay.
pub const SPEED_OF_LIGHT: f64 = 3.0e8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhyParams {
    /// Transmit power, W.
    pub tx_power: f64,
    /// Carrier frequency, Hz.
    pub frequency: f64,
    pub path_loss_exponent: f64,
    /// Shadowing standard deviation, dB.
    pub shadow_sigma: f64,
    /// Reference distance, m.
    pub ref_distance: f64,
    pub system_loss: f64,
    /// Minimum power for decoding, W.
    pub rx_threshold: f64,
    /// Minimum power for carrier sensing, W.
    pub cs_threshold: f64,
    /// Capture threshold. Tabulated as "10.0 Watt" in the source parameter
    /// set; used here as the dimensionless power ratio a frame needs over
    /// its strongest interferer to survive.
    pub capture_ratio: f64,
    /// Channel bit rate, bit/s.
    pub bitrate: f64,
    /// When false, overlapping frames never destroy each other (ideal channel).
    pub interference: bool,
}

impl Default for PhyParams {
    fn default() -> Self {
        PhyParams {
            tx_power: 0.28183815,
            frequency: 914.0e6,
            path_loss_exponent: 2.0,
            shadow_sigma: 4.0,
            ref_distance: 1.0,
            system_loss: 1.0,
            rx_threshold: 6.76252e-10,
            cs_threshold: 2.88759e-11,
            capture_ratio: 10.0,
            bitrate: 2.0e6,
            interference: true,
        }
    }
}

/// Ratio between carrier-sense and receive thresholds.
pub const CS_TO_RX_RATIO: f64 = 0.0427;

impl PhyParams {
    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.frequency
    }

    /// Seconds needed to send `bytes` at the channel bit rate.
    pub fn airtime(&self, bytes: u32) -> f64 {
        f64::from(bytes) * 8.0 / self.bitrate
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReceptionClass {
    Receive,
    SenseOnly,
    Below,
}

/// Free-space power at `ref_distance`, unity antenna gains.
fn reference_power(params: &PhyParams) -> f64 {
    let lambda = params.wavelength();
    params.tx_power * lambda * lambda
        / ((4.0 * PI).powi(2) * params.ref_distance.powi(2) * params.system_loss)
}

pub fn mean_rx_power(params: &PhyParams, distance: f64) -> Result<f64, SimError> {
    if distance < params.ref_distance || distance.is_nan() {
        return Err(SimError::BelowReferenceDistance {
            distance,
            ref_distance: params.ref_distance,
        });
    }
    let pr0 = reference_power(params);
    Ok(pr0 * (params.ref_distance / distance).powf(params.path_loss_exponent))
}

/// Draws a shadowed power around `mean`: `mean_dB + N(0, sigma)`, back in watts.
pub fn sample_rx_power(mean: f64, sigma_db: f64, rng: &mut SimRng) -> f64 {
    debug_assert!(mean > 0.0);
    if sigma_db == 0.0 {
        return mean;
    }
    let z: f64 = StandardNormal.sample(rng);
    let db = 10.0 * mean.log10() + sigma_db * z;
    10f64.powf(db / 10.0)
}

pub fn classify_reception(params: &PhyParams, power: f64) -> ReceptionClass {
    if power >= params.rx_threshold {
        ReceptionClass::Receive
    } else if power >= params.cs_threshold {
        ReceptionClass::SenseOnly
    } else {
        ReceptionClass::Below
    }
}

fn captures(power: f64, strongest_other: f64, capture_ratio: f64) -> bool {
    strongest_other <= 0.0 || power >= capture_ratio * strongest_other
}

/// Given the powers of frames overlapping at one receiver, returns the index
/// of the frame that survives, if any. The strongest frame survives iff it
/// beats the second strongest by `capture_ratio`.
pub fn resolve_collision(powers: &[f64], capture_ratio: f64) -> Option<usize> {
    let (best, &p_max) = powers
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))?;
    let second = powers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != best)
        .map(|(_, p)| *p)
        .fold(0.0, f64::max);
    captures(p_max, second, capture_ratio).then_some(best)
}

/// Threshold `T` with `P[shadowed power at target_dist >= T] = target_prob`.
pub fn compute_rx_threshold(
    params: &PhyParams,
    target_prob: f64,
    target_dist: f64,
) -> Result<f64, SimError> {
    assert!(
        target_prob > 0.0 && target_prob < 1.0,
        "target probability must lie in (0, 1)"
    );
    let mean = mean_rx_power(params, target_dist)?;
    let z = Normal::standard().inverse_cdf(target_prob);
    Ok(mean * 10f64.powf(-params.shadow_sigma * z / 10.0))
}

/// A frame currently arriving at a receiver.
#[derive(Debug)]
pub struct Reception {
    pub frame: Rc<Frame>,
    pub power: f64,
    pub end: SimTime,
    /// Strongest other signal that overlapped this one.
    pub max_interference: f64,
    /// Lost regardless of power, e.g. the receiver transmitted meanwhile.
    pub corrupted: bool,
}

/// Per-node set of signals currently on the air above the sensing threshold.
#[derive(Debug, Default)]
pub struct Receiver {
    active: Vec<Reception>,
}

impl Receiver {
    pub fn busy(&self) -> bool {
        !self.active.is_empty()
    }

    pub fn begin(&mut self, frame: Rc<Frame>, power: f64, end: SimTime, transmitting: bool) {
        let mut max_interference = 0.0f64;
        for r in &mut self.active {
            r.max_interference = r.max_interference.max(power);
            max_interference = max_interference.max(r.power);
        }
        self.active.push(Reception {
            frame,
            power,
            end,
            max_interference,
            corrupted: transmitting,
        });
    }

    /// Half duplex: starting a transmission ruins everything being received.
    pub fn corrupt_all(&mut self) {
        for r in &mut self.active {
            r.corrupted = true;
        }
    }

    pub fn finish(&mut self, frame_id: u64) -> Option<Reception> {
        let idx = self.active.iter().position(|r| r.frame.id == frame_id)?;
        Some(self.active.swap_remove(idx))
    }

    pub fn clear(&mut self) {
        self.active.clear();
    }
}

impl Reception {
    pub fn decodable(&self, params: &PhyParams) -> bool {
        if classify_reception(params, self.power) != ReceptionClass::Receive {
            return false;
        }
        if !params.interference {
            return true;
        }
        !self.corrupted && captures(self.power, self.max_interference, params.capture_ratio)
    }
}
