//! Analytic two-photon statistics behind a 50:50 beam splitter.
//!
//! Delay convention: `ΔT = t_f − t_s`, the time by which the single-atom
//! photon leads the heralded photon. With this sign the closed-form dip
//! decays with `τ_s` for `ΔT ≥ 0` and with `τ_f` for `ΔT < 0`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{breakpoints, integrate_with_breaks, QuadOptions};
use crate::wavepacket::{angular_frequency, Envelope, TemporalMode, SUPPORT_DECAY_TIMES};

/// Absolute tolerance of the inner (per-Δt) quadrature.
pub const DENSITY_QUAD_TOL: f64 = 1e-10;

/// The two photons entering the beam splitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourcePair {
    env_f: Envelope,
    env_s: Envelope,
    xi: f64,
}

impl SourcePair {
    /// `env_f` is the heralded FWM photon, `env_s` the single-atom photon and
    /// `xi ∈ [0, 1]` the mode overlap (1: parallel, 0: orthogonal).
    pub fn new(env_f: Envelope, env_s: Envelope, xi: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&xi) {
            return Err(Error::invalid("xi", format!("must lie in [0, 1], got {xi}")));
        }
        Ok(Self { env_f, env_s, xi })
    }

    /// Resonant FWM photon starting at 0 and single-atom photon starting at
    /// `−delay`, detuned by `detuning` MHz.
    pub fn with_delay(tau_f: f64, tau_s: f64, delay: f64, xi: f64, detuning: f64) -> Result<Self> {
        if !delay.is_finite() {
            return Err(Error::invalid("delta_t", "must be finite"));
        }
        let env_f = Envelope::resonant(tau_f, 0.0)?;
        let env_s = Envelope::new(tau_s, -delay, detuning)?;
        Self::new(env_f, env_s, xi)
    }

    pub fn env_f(&self) -> &Envelope {
        &self.env_f
    }

    pub fn env_s(&self) -> &Envelope {
        &self.env_s
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    /// `ΔT = t_f − t_s`.
    pub fn delay(&self) -> f64 {
        self.env_f.t0() - self.env_s.t0()
    }

    pub fn with_xi(&self, xi: f64) -> Result<Self> {
        Self::new(self.env_f, self.env_s, xi)
    }

    /// Moves the single-atom photon so that `t_f − t_s = delay`.
    pub fn delayed(&self, delay: f64) -> Self {
        Self {
            env_s: self.env_s.with_start(self.env_f.t0() - delay),
            ..*self
        }
    }

    /// Relative carrier angular frequency `ω_f − ω_s` in rad/ns.
    fn beat(&self) -> f64 {
        angular_frequency(self.env_f.detuning()) - angular_frequency(self.env_s.detuning())
    }

    fn longest_tau(&self) -> f64 {
        self.env_f.tau().max(self.env_s.tau())
    }
}

/// `∫|ψ_f(t)|²|ψ_s(t+dt)|² dt` for exponential envelopes.
fn product_integral(f: &Envelope, s: &Envelope, dt: f64) -> f64 {
    let lo = f.t0().max(s.t0() - dt);
    (-(lo - f.t0()) / f.tau() - (lo + dt - s.t0()) / s.tau()).exp() / (f.tau() + s.tau())
}

/// `∫ψ_f(t)ψ_s(t+dt)·conj(ψ_f(t+dt)ψ_s(t)) dt` without its carrier phase.
fn exchange_integral(f: &Envelope, s: &Envelope, dt: f64) -> f64 {
    let lo = f.t0().max(s.t0()).max(f.t0() - dt).max(s.t0() - dt);
    (-(lo - f.t0() + 0.5 * dt) / f.tau() - (lo - s.t0() + 0.5 * dt) / s.tau()).exp()
        / (f.tau() + s.tau())
}

/// Coincidence probability density per ns at signed detection-time
/// difference `dt`, closed form.
pub fn coincidence_density(pair: &SourcePair, dt: f64) -> f64 {
    let (f, s) = (&pair.env_f, &pair.env_s);
    let direct = product_integral(f, s, dt) + product_integral(f, s, -dt);
    let exchange = exchange_integral(f, s, dt) * (pair.beat() * dt).cos();
    0.25 * (direct - 2.0 * pair.xi * pair.xi * exchange)
}

/// Joint density of clicks at `t` on A and `t + dt` on B in the one-photon-per-side outcome.
pub fn coincidence_integrand(pair: &SourcePair, t: f64, dt: f64) -> f64 {
    let (f, s) = (&pair.env_f, &pair.env_s);
    let a = f.amplitude(t) * s.amplitude(t + dt);
    let b = f.amplitude(t + dt) * s.amplitude(t);
    0.25 * (a.norm_sqr() + b.norm_sqr() - 2.0 * pair.xi * pair.xi * (a * b.conj()).re)
}

/// Same quantity as [`coincidence_density`], by adaptive quadrature over the
/// emission time.
pub fn coincidence_density_quadrature(pair: &SourcePair, dt: f64) -> Result<f64> {
    coincidence_density_quadrature_tol(pair, dt, DENSITY_QUAD_TOL)
}

fn coincidence_density_quadrature_tol(pair: &SourcePair, dt: f64, tol: f64) -> Result<f64> {
    let (tf, ts) = (pair.env_f.t0(), pair.env_s.t0());
    let kinks = [tf, ts, tf - dt, ts - dt];
    let lo = kinks.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = kinks.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        + SUPPORT_DECAY_TIMES * pair.longest_tau();
    let pts = breakpoints(lo, hi, &kinks);
    let r = integrate_with_breaks(
        |t| coincidence_integrand(pair, t, dt),
        &pts,
        QuadOptions::with_tol(tol),
    )?;
    Ok(r.value)
}

/// Total coincidence probability `P = ∫G(Δt) dΔt`, closed form:
/// `½ − ½·ξ²·|⟨ψ_f|ψ_s⟩|²`.
pub fn coincidence_probability(pair: &SourcePair) -> f64 {
    let overlap = pair.env_f.overlap(&pair.env_s).norm_sqr();
    0.5 * (1.0 - pair.xi * pair.xi * overlap)
}

/// Total coincidence probability by nested quadrature of the density
/// integrand (independent of every closed form above).
pub fn coincidence_probability_quadrature(pair: &SourcePair) -> Result<f64> {
    let offset = pair.env_s.t0() - pair.env_f.t0();
    let reach = offset.abs() + SUPPORT_DECAY_TIMES * pair.longest_tau();
    let pts = breakpoints(-reach, reach, &[0.0, offset, -offset]);
    let inner_tol = 1e-12;
    let cell = std::cell::Cell::new(None);
    let r = integrate_with_breaks(
        |dt| match coincidence_density_quadrature_tol(pair, dt, inner_tol) {
            Ok(v) => v,
            Err(e) => {
                cell.set(Some(e.to_string()));
                0.0
            }
        },
        &pts,
        QuadOptions::with_tol(1e-9),
    )?;
    if let Some(msg) = cell.take() {
        return Err(Error::invalid("inner quadrature", msg));
    }
    Ok(r.value)
}

/// `P_||/P_⊥` from integrated coincidence probabilities at the pair's delay.
pub fn dip_ratio_integrated(pair: &SourcePair) -> f64 {
    let perp = SourcePair { xi: 0.0, ..*pair };
    coincidence_probability(pair) / coincidence_probability(&perp)
}

fn check_tau(name: &str, tau: f64) -> Result<()> {
    if tau.is_finite() && tau > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("decay time must be > 0, got {tau}")))
    }
}

/// Expected visibility for synchronized, resonant, parallel photons:
/// `4·τ_s·τ_f / (τ_s + τ_f)²`.
pub fn visibility_closed_form(tau_s: f64, tau_f: f64) -> Result<f64> {
    check_tau("tau_s", tau_s)?;
    check_tau("tau_f", tau_f)?;
    Ok(4.0 * tau_s * tau_f / ((tau_s + tau_f) * (tau_s + tau_f)))
}

/// Closed-form HOM dip `P_||/P_⊥` at delay `ΔT = t_f − t_s`.
pub fn dip_ratio(delta_t: f64, tau_s: f64, tau_f: f64) -> Result<f64> {
    let v = visibility_closed_form(tau_s, tau_f)?;
    let tau = if delta_t >= 0.0 { -tau_s } else { tau_f };
    Ok(1.0 - v * (delta_t / tau).exp())
}

/// Conditional outcome law for one photon from each source detected at
/// times `t1` (FWM) and `t2` (single atom).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OutcomeProbs {
    pub coincidence: f64,
    pub bunch_a: f64,
    pub bunch_b: f64,
}

pub fn conditional_outcome_probs(pair: &SourcePair, t1: f64, t2: f64) -> Result<OutcomeProbs> {
    let (f, s) = (&pair.env_f, &pair.env_s);
    let a: Complex64 = f.amplitude(t1) * s.amplitude(t2);
    let b: Complex64 = f.amplitude(t2) * s.amplitude(t1);
    let d = a.norm_sqr() + b.norm_sqr();
    if !(d > 0.0) {
        return Err(Error::UnreachableSample { t1, t2 });
    }
    let x = 2.0 * pair.xi * pair.xi * (a * b.conj()).re;
    let bunch = (d + x) / (4.0 * d);
    Ok(OutcomeProbs {
        coincidence: (d - x) / (2.0 * d),
        bunch_a: bunch,
        bunch_b: bunch,
    })
}
