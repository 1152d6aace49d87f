//! Simulator + analyzer against the semi-analytic expected histogram and the
//! closed-form oracle.

use hom_core::analysis::{
    estimate_accidentals, fit_scale, simulate_histogram, visibility, Accidentals, AnalysisSettings, CoincidenceHistogram,
    CoincidenceWindow,
};
use hom_core::expected::{expected_histogram, model_histogram};
use hom_core::interference::visibility_closed_form;
use hom_core::montecarlo::{Execution, ExperimentConfig};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Background rate giving raw V ≈ 0.62 over ±25 ns at η = 0.25.
const RATE: f64 = 4.77e-4;

fn noisy(n: u64, xi: f64, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        n_triggers: n,
        eta_f: 0.25,
        eta_s: 0.25,
        bg_rate_a: RATE,
        bg_rate_b: RATE,
        xi,
        seed,
        ..Default::default()
    }
}

fn run(cfg: &ExperimentConfig, settings: &AnalysisSettings) -> CoincidenceHistogram {
    simulate_histogram(cfg, settings, Execution::default()).unwrap()
}

/// Pearson χ² p-value of `h` against the predicted per-trigger values.
fn chi2_p_value(h: &CoincidenceHistogram, expected: &[f64]) -> (f64, f64) {
    let n = h.n_triggers as f64;
    let mut chi2 = 0.0;
    let mut dof = 0;
    for (&c, &e) in h.counts.iter().zip(expected) {
        let mu = e * n;
        if mu >= 5.0 {
            chi2 += (c as f64 - mu).powi(2) / mu;
            dof += 1;
        }
    }
    (chi2, 1.0 - ChiSquared::new(dof as f64).unwrap().cdf(chi2))
}

#[test]
fn ideal_histograms_converge_to_the_oracle() {
    let settings = AnalysisSettings::default();
    for (xi, seed) in [(0.0, 101), (1.0, 102)] {
        let cfg = ExperimentConfig::ideal(10_000_000, xi, seed);
        let h = run(&cfg, &settings);
        let e = expected_histogram(&cfg, &settings).unwrap();
        let (chi2, p) = chi2_p_value(&h, &e.values);
        assert!(p > 1e-3, "xi = {xi}: chi2 {chi2}, p {p}");
    }
}

#[test]
fn noisy_histograms_match_the_prediction() {
    let settings = AnalysisSettings::default();
    for (xi, seed) in [(0.0, 201), (1.0, 202)] {
        let cfg = noisy(2_000_000, xi, seed);
        let h = run(&cfg, &settings);
        let e = expected_histogram(&cfg, &settings).unwrap();
        let (chi2, p) = chi2_p_value(&h, &e.values);
        assert!(p > 1e-3, "xi = {xi}: chi2 {chi2}, p {p}");

        let g = estimate_accidentals(&h, settings.wing).unwrap();
        let predicted = e.wing_mean(settings.wing).unwrap();
        assert!((g.value - predicted).abs() < 3.0 * g.sigma, "{g:?} vs {predicted}");
    }
}

#[test]
fn accidental_correction_recovers_background_free_visibility() {
    let settings = AnalysisSettings::default();
    let window = CoincidenceWindow::symmetric(75.0);
    let with_bg = |xi, seed| run(&noisy(2_000_000, xi, seed), &settings);
    let without_bg = |xi, seed| {
        let cfg = ExperimentConfig {
            bg_rate_a: 0.0,
            bg_rate_b: 0.0,
            ..noisy(2_000_000, xi, seed)
        };
        run(&cfg, &settings)
    };
    let (bp, bo) = (with_bg(1.0, 301), with_bg(0.0, 302));
    let corrected = visibility(&bp, &bo, window, Accidentals::from_wings(&bp, &bo, settings.wing).unwrap()).unwrap();
    let clean = visibility(&without_bg(1.0, 301), &without_bg(0.0, 302), window, Accidentals::None).unwrap();
    let sigma = corrected.sigma_v.hypot(clean.sigma_v);
    assert!((corrected.v - clean.v).abs() < 3.0 * sigma, "{corrected:?} vs {clean:?}");
}

#[test]
fn ideal_visibility_matches_closed_form() {
    let settings = AnalysisSettings::default();
    let par = run(&ExperimentConfig::ideal(1_000_000, 1.0, 401), &settings);
    let perp = run(&ExperimentConfig::ideal(1_000_000, 0.0, 402), &settings);
    let v = visibility(&par, &perp, CoincidenceWindow::symmetric(200.0), Accidentals::None).unwrap();
    let expected = visibility_closed_form(26.18, 13.61).unwrap();
    assert!((v.v - expected).abs() < 3.0 * v.sigma_v, "{v:?} vs {expected}");
}

#[test]
fn scaled_model_describes_measured_histograms() {
    let settings = AnalysisSettings::default();
    for (xi, seed) in [(0.0, 501), (1.0, 502)] {
        let cfg = noisy(2_000_000, xi, seed);
        let h = run(&cfg, &settings);
        let model = model_histogram(&cfg.source_pair().unwrap(), h.binning).unwrap();
        let lookup = |x: f64| model[h.binning.index(x).unwrap()];
        let points: Vec<(f64, f64)> = h.bin_centers.iter().copied().zip(h.values.iter().copied()).collect();
        let fit = fit_scale(lookup, &points, true).unwrap();
        assert!(fit.scale > 0.0 && fit.offset > 0.0, "{fit:?}");
        let n = h.n_triggers as f64;
        let inside = points
            .iter()
            .zip(&h.counts)
            .filter(|((x, y), &c)| (y - fit.eval(lookup(*x))).abs() <= 3.0 * (c.max(1) as f64).sqrt() / n)
            .count();
        let fraction = inside as f64 / points.len() as f64;
        assert!(fraction >= 0.9, "xi = {xi}: {inside}/{} bins within 3σ", points.len());
    }
}
