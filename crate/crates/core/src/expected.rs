//! Expected coincidence histogram of a simulated run, computed without
//! sampling.
//!
//! Each trigger falls into one photon-routing class (no photon, one photon on
//! a given side, both photons bunched on a given side, or one photon per
//! side). Within a class the first click on each detector is the earlier of
//! its photon arrival(s) and the first Poisson background click, so the
//! first-click density of a side follows from its survival function. For all
//! classes except the coincidence class the two sides are independent and
//! the bin probability reduces to a single integral. The coincidence class
//! uses the two-photon density weighted by the background survival on each
//! side, plus the terms where background precedes the photon on exactly one
//! side. Background preceding both photons is of second order in
//! `rate · (pre + τ)` and is neglected.
//!
//! Valid for jitter-free configurations whose detector offsets are removed
//! exactly by the analysis settings.

use serde::Serialize;

use crate::analysis::{AnalysisSettings, Binning, CoincidenceWindow, WingRegion};
use crate::error::{Error, Result};
use crate::interference::{coincidence_density, coincidence_integrand, SourcePair};
use crate::montecarlo::ExperimentConfig;
use crate::quadrature::{breakpoints, integrate_with_breaks, QuadOptions};
use crate::wavepacket::{Envelope, TemporalMode};

const QUAD: QuadOptions = QuadOptions {
    abs_tol: 1e-13,
    max_panels: 20_000,
};

#[derive(Debug, Clone, Copy)]
enum Load {
    Empty,
    Photon(Envelope),
    Pair,
}

/// First-click statistics of one detector within a routing class.
#[derive(Debug, Clone, Copy)]
struct Side<'a> {
    rate: f64,
    load: Load,
    pair: &'a SourcePair,
    /// `1 + ξ²|⟨ψ_f|ψ_s⟩|²`, the normalization of the bunched class.
    pair_norm: f64,
}

impl Side<'_> {
    fn photon_survival(&self, t: f64) -> f64 {
        match self.load {
            Load::Empty => 1.0,
            Load::Photon(env) => env.survival(t),
            Load::Pair => {
                let (f, s) = (self.pair.env_f(), self.pair.env_s());
                let tail = f.overlap_tail(s, t).norm_sqr();
                let xi2 = self.pair.xi() * self.pair.xi();
                (f.survival(t) * s.survival(t) + xi2 * tail) / self.pair_norm
            }
        }
    }

    fn photon_density(&self, t: f64) -> f64 {
        match self.load {
            Load::Empty => 0.0,
            Load::Photon(env) => env.density(t),
            Load::Pair => {
                let (f, s) = (self.pair.env_f(), self.pair.env_s());
                let xi2 = self.pair.xi() * self.pair.xi();
                let tail = f.overlap_tail(s, t);
                let cross = (tail.conj() * f.amplitude(t) * s.amplitude(t).conj()).re;
                (f.density(t) * s.survival(t) + f.survival(t) * s.density(t) + 2.0 * xi2 * cross)
                    / self.pair_norm
            }
        }
    }

    /// Probability of no click in `[−pre, t)`.
    fn survival(&self, t: f64, pre: f64) -> f64 {
        (-self.rate * (t + pre)).exp() * self.photon_survival(t)
    }

    fn density(&self, t: f64, pre: f64) -> f64 {
        (-self.rate * (t + pre)).exp() * (self.rate * self.photon_survival(t) + self.photon_density(t))
    }

    /// Probability that this side has no click in `[0, valid)` given that its
    /// first click is at `t`.
    fn quiet_in_valid(&self, t: f64, geo: &Geometry) -> f64 {
        if t >= geo.valid {
            1.0
        } else if t >= 0.0 {
            0.0
        } else {
            // The first click was background; photons never start before 0.
            (-self.rate * geo.valid).exp() * self.photon_survival(geo.valid)
        }
    }

    fn kinks(&self) -> Vec<f64> {
        match self.load {
            Load::Empty => vec![],
            Load::Photon(env) => vec![env.t0()],
            Load::Pair => vec![self.pair.env_f().t0(), self.pair.env_s().t0()],
        }
    }
}

/// Record span `[−pre, window)` and validity window `[0, valid)`, relative to
/// the trigger.
struct Geometry {
    pre: f64,
    window: f64,
    valid: f64,
}

/// Probability that the first clicks `a` (on A) and `b` (on B) both lie in
/// the record span, the sequence is valid, and `a − b ∈ [lo, hi)`.
fn independent_bin(a_side: &Side, b_side: &Side, geo: &Geometry, lo: f64, hi: f64) -> Result<f64> {
    let (pre, w, v) = (geo.pre, geo.window, geo.valid);
    let quiet_b_early = b_side.quiet_in_valid(-1.0, geo);
    let integrand = |a: f64| {
        let b_lo = (a - hi).max(-pre);
        let b_hi = (a - lo).min(w);
        if b_hi <= b_lo {
            return 0.0;
        }
        let quiet_a = a_side.quiet_in_valid(a, geo);
        let mut total = 0.0;
        for (r_lo, r_hi, quiet_b) in [(-pre, 0.0, quiet_b_early), (0.0, v, 0.0), (v, w, 1.0)] {
            let x = b_lo.max(r_lo);
            let y = b_hi.min(r_hi);
            if y > x {
                total += (b_side.survival(x, pre) - b_side.survival(y, pre)) * (1.0 - quiet_a * quiet_b);
            }
        }
        a_side.density(a, pre) * total
    };
    let mut kinks = vec![0.0, v, hi, lo, hi + v, lo + v, hi - pre, lo + w];
    kinks.extend(a_side.kinks());
    for s in b_side.kinks() {
        kinks.push(s + lo);
        kinks.push(s + hi);
    }
    let pts = breakpoints(-pre, w, &kinks);
    Ok(integrate_with_breaks(integrand, &pts, QUAD)?.value)
}

fn nan_to_error(value: f64) -> Result<f64> {
    if value.is_nan() {
        Err(Error::Quadrature {
            error: f64::NAN,
            tol: QUAD.abs_tol,
        })
    } else {
        Ok(value)
    }
}

/// Coincidence-class probability of `a − b ∈ [lo, hi)` with photon clicks
/// not preceded by background.
fn coincidence_bin(pair: &SourcePair, rate_a: f64, rate_b: f64, geo: &Geometry, lo: f64, hi: f64) -> Result<f64> {
    let (pre, w, v) = (geo.pre, geo.window, geo.valid);
    let (sf, ss) = (pair.env_f().t0(), pair.env_s().t0());
    let inner = |d: f64| -> f64 {
        // b = t, a = t + d
        let t_lo = (-d).max(0.0);
        let t_hi = (w - d).min(w);
        if t_hi <= t_lo {
            return 0.0;
        }
        let f = |t: f64| {
            let a = t + d;
            if a.min(t) >= v {
                return 0.0;
            }
            coincidence_integrand(pair, a, -d) * (-rate_a * (a + pre) - rate_b * (t + pre)).exp()
        };
        let kinks = [sf, ss, sf - d, ss - d, v, v - d];
        let pts = breakpoints(t_lo, t_hi, &kinks);
        integrate_with_breaks(f, &pts, QuadOptions { abs_tol: 1e-15, ..QUAD })
            .map(|r| r.value)
            .unwrap_or(f64::NAN)
    };
    let pts = breakpoints(lo, hi, &[0.0, ss - sf, sf - ss, w - v, v - w]);
    nan_to_error(integrate_with_breaks(inner, &pts, QUAD)?.value)
}

/// Coincidence-class probability that the first A click is background
/// preceding the A photon, the first B click is the B photon, and
/// `a − b ∈ [lo, hi)`. With `swap` the roles of A and B are exchanged.
fn masked_coincidence_bin(
    pair: &SourcePair,
    rate_masked: f64,
    rate_clean: f64,
    geo: &Geometry,
    lo: f64,
    hi: f64,
    swap: bool,
) -> Result<f64> {
    if rate_masked == 0.0 {
        return Ok(0.0);
    }
    let (pre, w, v) = (geo.pre, geo.window, geo.valid);
    let (sf, ss) = (pair.env_f().t0(), pair.env_s().t0());
    // Background click `u` on the masked side must satisfy
    // `u − c ∈ [lo, hi)` (or `c − u` when swapped), `u < m` and `u ≥ −pre`.
    let (u_lo, u_hi) = if swap { (-hi, -lo) } else { (lo, hi) };
    let cdf = |u: f64| (-rate_masked * (u + pre)).exp();
    // `m` is the masked photon, `c` the clean one.
    let outer = |c: f64| -> f64 {
        let clean = (-rate_clean * (c + pre)).exp();
        let inner = |m: f64| {
            let mut x = (c + u_lo).max(-pre);
            let mut y = (c + u_hi).min(m);
            if m.min(c) >= v {
                // Valid only through the background click itself.
                x = x.max(0.0);
                y = y.min(v);
            }
            if y <= x {
                return 0.0;
            }
            let joint = if swap {
                coincidence_integrand(pair, c, m - c)
            } else {
                coincidence_integrand(pair, m, c - m)
            };
            joint * (cdf(x) - cdf(y))
        };
        let kinks = [sf, ss, v, c + u_lo, c + u_hi];
        let pts = breakpoints(0.0, w, &kinks);
        clean
            * integrate_with_breaks(inner, &pts, QuadOptions { abs_tol: 1e-15, ..QUAD })
                .map(|r| r.value)
                .unwrap_or(f64::NAN)
    };
    let kinks = [sf, ss, v, -pre - u_lo, -pre - u_hi, -u_lo, -u_hi, v - u_lo, v - u_hi];
    let pts = breakpoints(0.0, w, &kinks);
    nan_to_error(integrate_with_breaks(outer, &pts, QUAD)?.value)
}

/// Per-bin expected `G(Δt_ab)` (probability per trigger) for a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpectedHistogram {
    pub binning: Binning,
    pub values: Vec<f64>,
    /// Photon-pair part of `values`, without any background contribution.
    pub coincidence_part: Vec<f64>,
}

impl ExpectedHistogram {
    pub fn window_sum(&self, window: CoincidenceWindow) -> f64 {
        let eps = 1e-9 * self.binning.bin_width;
        (0..self.binning.len())
            .filter(|&i| {
                let (lo, hi) = self.binning.edges(i);
                lo >= -window.half_width - eps && hi <= window.half_width + eps
            })
            .map(|i| self.values[i])
            .sum()
    }

    /// Mean over bins with `wing.lo ≤ |centre| ≤ wing.hi`.
    pub fn wing_mean(&self, wing: WingRegion) -> Result<f64> {
        let eps = 1e-9 * self.binning.bin_width;
        let vals: Vec<f64> = (0..self.binning.len())
            .filter(|&i| {
                let c = self.binning.center(i).abs();
                c >= wing.lo - eps && c <= wing.hi + eps
            })
            .map(|i| self.values[i])
            .collect();
        if vals.is_empty() {
            return Err(Error::invalid("wing", "no bins in wing region"));
        }
        Ok(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

fn check_supported(config: &ExperimentConfig, settings: &AnalysisSettings) -> Result<()> {
    config.validate()?;
    settings.validate()?;
    if config.excitation_jitter_sigma != 0.0 {
        return Err(Error::invalid(
            "excitation_jitter_sigma",
            "expected histogram is only available for jitter-free runs",
        ));
    }
    if config.pre_trigger_window != settings.pre_trigger_window {
        return Err(Error::invalid(
            "pre_trigger_window",
            "analysis pre-trigger window must equal the simulated one",
        ));
    }
    if config.offset_a != settings.offset_a || config.offset_b != settings.offset_b {
        return Err(Error::invalid(
            "offset",
            "analysis offsets must equal the simulated detector offsets",
        ));
    }
    Ok(())
}

/// Expected histogram of [`crate::analysis::simulate_histogram`] for `config`.
pub fn expected_histogram(config: &ExperimentConfig, settings: &AnalysisSettings) -> Result<ExpectedHistogram> {
    check_supported(config, settings)?;
    let binning = settings.binning()?;
    let pair = config.source_pair()?;
    let geo = Geometry {
        pre: config.pre_trigger_window,
        window: config.window_length,
        valid: settings.valid_window,
    };
    let overlap = pair.env_f().overlap(pair.env_s()).norm_sqr();
    let xi2 = config.xi * config.xi;
    let pair_norm = 1.0 + xi2 * overlap;
    let (eta_f, eta_s) = (config.eta_f, config.eta_s);
    let both = eta_f * eta_s;

    let side = |rate: f64, load: Load| Side {
        rate,
        load,
        pair: &pair,
        pair_norm,
    };
    let (ra, rb) = (config.bg_rate_a, config.bg_rate_b);
    let empty_a = side(ra, Load::Empty);
    let empty_b = side(rb, Load::Empty);
    let classes: Vec<(f64, Side, Side)> = vec![
        ((1.0 - eta_f) * (1.0 - eta_s), empty_a, empty_b),
        (0.5 * eta_f * (1.0 - eta_s), side(ra, Load::Photon(*pair.env_f())), empty_b),
        (0.5 * eta_f * (1.0 - eta_s), empty_a, side(rb, Load::Photon(*pair.env_f()))),
        (0.5 * eta_s * (1.0 - eta_f), side(ra, Load::Photon(*pair.env_s())), empty_b),
        (0.5 * eta_s * (1.0 - eta_f), empty_a, side(rb, Load::Photon(*pair.env_s()))),
        (both * pair_norm / 4.0, side(ra, Load::Pair), empty_b),
        (both * pair_norm / 4.0, empty_a, side(rb, Load::Pair)),
    ];
    let p_coincidence = both;

    let mut values = Vec::with_capacity(binning.len());
    let mut coincidence_part = Vec::with_capacity(binning.len());
    for i in 0..binning.len() {
        let (lo, hi) = binning.edges(i);
        let mut total = 0.0;
        for (p, a, b) in &classes {
            if *p > 0.0 && (a.rate > 0.0 || !matches!(a.load, Load::Empty)) && (b.rate > 0.0 || !matches!(b.load, Load::Empty)) {
                total += p * independent_bin(a, b, &geo, lo, hi)?;
            }
        }
        let (coinc, masked) = if p_coincidence > 0.0 {
            (
                p_coincidence * coincidence_bin(&pair, ra, rb, &geo, lo, hi)?,
                p_coincidence
                    * (masked_coincidence_bin(&pair, ra, rb, &geo, lo, hi, false)?
                        + masked_coincidence_bin(&pair, rb, ra, &geo, lo, hi, true)?),
            )
        } else {
            (0.0, 0.0)
        };
        values.push(total + coinc + masked);
        coincidence_part.push(coinc);
    }
    Ok(ExpectedHistogram {
        binning,
        values,
        coincidence_part,
    })
}

/// Bin integrals of the two-photon coincidence density of `pair`, with no
/// windowing, background or efficiency: the model shape behind a measured
/// histogram.
pub fn model_histogram(pair: &SourcePair, binning: Binning) -> Result<Vec<f64>> {
    let offset = pair.env_s().t0() - pair.env_f().t0();
    (0..binning.len())
        .map(|i| {
            let (lo, hi) = binning.edges(i);
            let pts = breakpoints(lo, hi, &[0.0, offset, -offset]);
            Ok(integrate_with_breaks(|d| coincidence_density(pair, d), &pts, QUAD)?.value)
        })
        .collect()
}

/// Expected `1 − Σ_window G_|| / Σ_window G_⊥` for two runs, optionally with
/// each run's expected wing mean subtracted.
pub fn expected_visibility(
    parallel: &ExperimentConfig,
    perpendicular: &ExperimentConfig,
    settings: &AnalysisSettings,
    window: CoincidenceWindow,
    subtract_wings: bool,
) -> Result<f64> {
    let hp = expected_histogram(parallel, settings)?;
    let ho = expected_histogram(perpendicular, settings)?;
    let m = {
        let eps = 1e-9 * hp.binning.bin_width;
        (0..hp.binning.len())
            .filter(|&i| {
                let (lo, hi) = hp.binning.edges(i);
                lo >= -window.half_width - eps && hi <= window.half_width + eps
            })
            .count() as f64
    };
    let (gp, go) = if subtract_wings {
        (hp.wing_mean(settings.wing)?, ho.wing_mean(settings.wing)?)
    } else {
        (0.0, 0.0)
    };
    let den = ho.window_sum(window) - m * go;
    if !(den > 0.0) {
        return Err(Error::InsufficientStatistics("expected perpendicular window sum is not positive".into()));
    }
    Ok(1.0 - (hp.window_sum(window) - m * gp) / den)
}

/// Background rate (equal on both detectors) at which the expected raw
/// visibility of the pair of runs equals `target`, found by bisection.
pub fn calibrate_background(
    parallel: &ExperimentConfig,
    perpendicular: &ExperimentConfig,
    settings: &AnalysisSettings,
    window: CoincidenceWindow,
    target: f64,
    rel_tol: f64,
) -> Result<f64> {
    let raw_v = |rate: f64| -> Result<f64> {
        let with = |c: &ExperimentConfig| ExperimentConfig {
            bg_rate_a: rate,
            bg_rate_b: rate,
            ..c.clone()
        };
        expected_visibility(&with(parallel), &with(perpendicular), settings, window, false)
    };
    let v0 = raw_v(0.0)?;
    if target >= v0 {
        return Err(Error::invalid(
            "target",
            format!("background-free visibility {v0:.4} does not exceed target {target}"),
        ));
    }
    let mut lo = 0.0;
    let mut hi = 1e-5;
    while raw_v(hi)? > target {
        lo = hi;
        hi *= 2.0;
        if hi > 1.0 {
            return Err(Error::invalid("target", "no background rate below 1/ns reaches the target"));
        }
    }
    while hi - lo > rel_tol * hi {
        let mid = 0.5 * (lo + hi);
        if raw_v(mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn background_only(ra: f64, rb: f64) -> ExperimentConfig {
        ExperimentConfig {
            eta_f: 0.0,
            eta_s: 0.0,
            bg_rate_a: ra,
            bg_rate_b: rb,
            pre_trigger_window: 0.0,
            ..Default::default()
        }
    }

    /// First-click background pairs: `r_a r_b e^{−r_a d}(1 − e^{−(r_a+r_b)V})/(r_a+r_b)`
    /// per ns for `0 < d < W − V`, mirrored with `r_b` for `d < 0`.
    fn closed_form_background(ra: f64, rb: f64, v: f64, d: f64) -> f64 {
        let decay = if d >= 0.0 { ra } else { rb };
        ra * rb * (-decay * d.abs()).exp() * (1.0 - (-(ra + rb) * v).exp()) / (ra + rb)
    }

    #[test]
    fn background_floor_matches_closed_form() {
        let (ra, rb) = (3e-3, 1e-3);
        let cfg = background_only(ra, rb);
        let settings = AnalysisSettings {
            pre_trigger_window: 0.0,
            ..Default::default()
        };
        let h = expected_histogram(&cfg, &settings).unwrap();
        for i in 0..h.binning.len() {
            let (lo, hi) = h.binning.edges(i);
            let pts = breakpoints(lo, hi, &[0.0]);
            let exact = integrate_with_breaks(
                |d| closed_form_background(ra, rb, settings.valid_window, d),
                &pts,
                QuadOptions::with_tol(1e-16),
            )
            .unwrap()
            .value;
            assert_abs_diff_eq!(h.values[i], exact, epsilon = 1e-12);
        }
    }

    #[test]
    fn ideal_run_reproduces_coincidence_density() {
        for xi in [0.0, 1.0] {
            let cfg = ExperimentConfig::ideal(1, xi, 0);
            // A validity window longer than the record window keeps every pair.
            let settings = AnalysisSettings {
                valid_window: 1e6,
                ..Default::default()
            };
            let h = expected_histogram(&cfg, &settings).unwrap();
            let model = model_histogram(&cfg.source_pair().unwrap(), h.binning).unwrap();
            for (e, m) in h.values.iter().zip(&model) {
                assert_abs_diff_eq!(e, m, epsilon = 1e-10);
            }
        }
        let cfg = ExperimentConfig::ideal(1, 0.0, 0);
        let model = model_histogram(&cfg.source_pair().unwrap(), AnalysisSettings::default().binning().unwrap()).unwrap();
        let total: f64 = model.iter().sum();
        assert_abs_diff_eq!(total, 0.5, epsilon = 1e-3);
    }

    #[test]
    fn pair_survival_normalized() {
        let cfg = ExperimentConfig::ideal(1, 1.0, 0);
        let pair = cfg.source_pair().unwrap();
        let overlap = pair.env_f().overlap(pair.env_s()).norm_sqr();
        let side = Side {
            rate: 0.0,
            load: Load::Pair,
            pair: &pair,
            pair_norm: 1.0 + overlap,
        };
        assert_abs_diff_eq!(side.survival(0.0, 0.0), 1.0, epsilon = 1e-14);
        let mass = integrate_with_breaks(|t| side.density(t, 0.0), &[0.0, 2000.0], QuadOptions::with_tol(1e-12))
            .unwrap()
            .value;
        assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn rejects_jitter() {
        let cfg = ExperimentConfig {
            excitation_jitter_sigma: 1.0,
            ..Default::default()
        };
        assert!(expected_histogram(&cfg, &AnalysisSettings::default()).is_err());
    }

    #[test]
    fn calibration_hits_target() {
        let par = ExperimentConfig {
            eta_f: 0.1,
            eta_s: 0.1,
            xi: 1.0,
            ..Default::default()
        };
        let perp = ExperimentConfig { xi: 0.0, ..par.clone() };
        let settings = AnalysisSettings::default();
        let w = CoincidenceWindow::symmetric(25.0);
        let rate = calibrate_background(&par, &perp, &settings, w, 0.62, 1e-6).unwrap();
        let with = |c: &ExperimentConfig| ExperimentConfig {
            bg_rate_a: rate,
            bg_rate_b: rate,
            ..c.clone()
        };
        let v = expected_visibility(&with(&par), &with(&perp), &settings, w, false).unwrap();
        assert_abs_diff_eq!(v, 0.62, epsilon = 1e-4);
    }
}
