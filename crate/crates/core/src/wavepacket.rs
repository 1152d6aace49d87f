//! Single-photon temporal amplitudes with a one-sided exponential envelope.
//!
//! Times are in ns, detunings in MHz. The amplitude has units of ns^(-1/2) so
//! that `|ψ(t)|²` is a probability density per ns.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{integrate, QuadOptions};

/// Support cutoff, in decay times, for numerical integrals over an envelope.
pub const SUPPORT_DECAY_TIMES: f64 = 40.0;

/// Angular frequency in rad/ns for a detuning given in MHz.
pub fn angular_frequency(detuning_mhz: f64) -> f64 {
    2.0 * PI * detuning_mhz * 1e-3
}

/// A photon wavepacket that switches on at a definite start time.
pub trait TemporalMode {
    fn amplitude(&self, t: f64) -> Complex64;

    /// The amplitude vanishes for every `t` before this instant.
    fn start(&self) -> f64;

    fn intensity(&self, t: f64) -> f64 {
        self.amplitude(t).norm_sqr()
    }
}

/// `ψ(t) = τ^(-1/2) · exp(−(t−t0)/2τ) · exp(−i·2πδ(t−t0)) · Θ(t−t0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    tau: f64,
    t0: f64,
    detuning: f64,
}

impl Envelope {
    pub fn new(tau: f64, t0: f64, detuning: f64) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::invalid("tau", format!("decay time must be > 0, got {tau}")));
        }
        if !t0.is_finite() {
            return Err(Error::invalid("t0", "start time must be finite"));
        }
        if !detuning.is_finite() {
            return Err(Error::invalid("detuning", "must be finite"));
        }
        Ok(Self { tau, t0, detuning })
    }

    /// Resonant envelope starting at `t0`.
    pub fn resonant(tau: f64, t0: f64) -> Result<Self> {
        Self::new(tau, t0, 0.0)
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn detuning(&self) -> f64 {
        self.detuning
    }

    /// Same envelope with its start moved by `shift` ns.
    pub fn shifted(&self, shift: f64) -> Self {
        Self {
            t0: self.t0 + shift,
            ..*self
        }
    }

    pub fn with_start(&self, t0: f64) -> Self {
        Self { t0, ..*self }
    }

    pub fn with_detuning(&self, detuning: f64) -> Self {
        Self { detuning, ..*self }
    }

    /// Emission-time density `|ψ(t)|²`.
    pub fn density(&self, t: f64) -> f64 {
        if t < self.t0 {
            0.0
        } else {
            (-(t - self.t0) / self.tau).exp() / self.tau
        }
    }

    /// Probability that the photon has not been emitted by `t`.
    pub fn survival(&self, t: f64) -> f64 {
        if t < self.t0 {
            1.0
        } else {
            (-(t - self.t0) / self.tau).exp()
        }
    }

    /// Inverse-CDF sample of the emission time for `u ∈ [0, 1)`.
    pub fn sample_emission_time(&self, u: f64) -> f64 {
        debug_assert!((0.0..1.0).contains(&u), "u = {u} outside [0, 1)");
        self.t0 - self.tau * (-u).ln_1p()
    }

    /// Numerical `∫|ψ|²` over `[t0, t0 + 40τ]`.
    pub fn norm(&self) -> f64 {
        self.norm_until(self.t0 + SUPPORT_DECAY_TIMES * self.tau)
            .expect("exponential envelope integrates on a finite support")
    }

    /// Numerical `∫|ψ|²` over `[t0, end]`.
    pub fn norm_until(&self, end: f64) -> Result<f64> {
        if end <= self.t0 {
            return Ok(0.0);
        }
        let r = integrate(
            |t| self.intensity(t),
            self.t0,
            end,
            QuadOptions::with_tol(1e-9),
        )?;
        Ok(r.value)
    }

    /// Closed form of `∫_from^∞ ψ_self(t)·conj(ψ_other(t)) dt`.
    pub fn overlap_tail(&self, other: &Envelope, from: f64) -> Complex64 {
        let m = from.max(self.t0).max(other.t0);
        let w1 = angular_frequency(self.detuning);
        let w2 = angular_frequency(other.detuning);
        let rate = Complex64::new(0.5 / self.tau + 0.5 / other.tau, w1 - w2);
        let exponent = Complex64::new(
            -(m - self.t0) / (2.0 * self.tau) - (m - other.t0) / (2.0 * other.tau),
            -w1 * (m - self.t0) + w2 * (m - other.t0),
        );
        exponent.exp() / (rate * (self.tau * other.tau).sqrt())
    }

    /// `∫ψ_self·conj(ψ_other)` over all time.
    pub fn overlap(&self, other: &Envelope) -> Complex64 {
        self.overlap_tail(other, f64::NEG_INFINITY)
    }
}

impl TemporalMode for Envelope {
    fn amplitude(&self, t: f64) -> Complex64 {
        if t < self.t0 {
            return Complex64::new(0.0, 0.0);
        }
        let dt = t - self.t0;
        let magnitude = (-dt / (2.0 * self.tau)).exp() / self.tau.sqrt();
        Complex64::from_polar(magnitude, -angular_frequency(self.detuning) * dt)
    }

    fn start(&self) -> f64 {
        self.t0
    }

    fn intensity(&self, t: f64) -> f64 {
        self.density(t)
    }
}
