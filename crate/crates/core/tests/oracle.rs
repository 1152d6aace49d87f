//! The simulator's per-trial outcome law against a brute-force evaluation of
//! the two-photon amplitudes through a 50:50 beam splitter, with polarization
//! carried explicitly in a two-dimensional basis.

use approx::assert_relative_eq;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hom_core::interference::{
    coincidence_density, coincidence_density_quadrature, coincidence_probability, coincidence_probability_quadrature,
    conditional_outcome_probs, dip_ratio, dip_ratio_integrated, SourcePair,
};
use hom_core::wavepacket::{Envelope, TemporalMode};

/// Output port 0 = A, 1 = B; input 0 carries the FWM photon, input 1 the
/// single-atom photon.
const BS: [[f64; 2]; 2] = [
    [std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2],
    [std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2],
];

/// Density of detecting one photon at `x` in `port_x` and one at `y` in
/// `port_y`. For equal ports this is the density of the unordered pair.
fn brute_force(pair: &SourcePair, port_x: usize, x: f64, port_y: usize, y: f64) -> f64 {
    let xi = pair.xi();
    let pol_f = [1.0, 0.0];
    let pol_s = [xi, (1.0 - xi * xi).sqrt()];
    let (f, s) = (pair.env_f(), pair.env_s());
    let mut total = 0.0;
    for p in 0..2 {
        for q in 0..2 {
            let direct: Complex64 = BS[port_x][0] * f.amplitude(x) * pol_f[p] * BS[port_y][1] * s.amplitude(y) * pol_s[q];
            let swapped: Complex64 = BS[port_y][0] * f.amplitude(y) * pol_f[q] * BS[port_x][1] * s.amplitude(x) * pol_s[p];
            total += (direct + swapped).norm_sqr();
        }
    }
    total
}

/// Same densities implied by the simulator: draw `t1 ~ |ψ_f|²`,
/// `t2 ~ |ψ_s|²`, pick the class from `conditional_outcome_probs`, and send
/// the FWM photon to A or B with equal probability in the split class.
fn simulator_law(pair: &SourcePair, port_x: usize, x: f64, port_y: usize, y: f64) -> f64 {
    let (f, s) = (pair.env_f(), pair.env_s());
    let w_xy = f.density(x) * s.density(y);
    let w_yx = f.density(y) * s.density(x);
    let pxy = conditional_outcome_probs(pair, x, y).unwrap();
    let pyx = conditional_outcome_probs(pair, y, x).unwrap();
    match (port_x, port_y) {
        (0, 1) | (1, 0) => 0.5 * (w_xy * pxy.coincidence + w_yx * pyx.coincidence),
        (0, 0) => w_xy * pxy.bunch_a + w_yx * pyx.bunch_a,
        _ => w_xy * pxy.bunch_b + w_yx * pyx.bunch_b,
    }
}

fn pair_strategy() -> impl Strategy<Value = SourcePair> {
    (1.0..80.0f64, 1.0..80.0f64, -30.0..30.0f64, 0.0..=1.0f64, -100.0..100.0f64).prop_map(
        |(tau_f, tau_s, delay, xi, detuning)| SourcePair::with_delay(tau_f, tau_s, delay, xi, detuning).unwrap(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn outcome_law_matches_beam_splitter_amplitudes(pair in pair_strategy(), u in 0.0..60.0f64, v in 0.0..60.0f64) {
        let start = pair.env_f().t0().max(pair.env_s().t0());
        let (x, y) = (start + u, start + v);
        for (px, py) in [(0, 1), (1, 0), (0, 0), (1, 1)] {
            let expected = brute_force(&pair, px, x, py, y);
            let got = simulator_law(&pair, px, x, py, y);
            prop_assert!((expected - got).abs() <= 1e-12 * expected.abs().max(1e-300) + 1e-300,
                "ports ({px},{py}) at ({x},{y}): brute {expected:e} vs simulator {got:e}");
        }
    }

    #[test]
    fn closed_form_density_matches_quadrature(pair in pair_strategy(), dt in -150.0..150.0f64) {
        let closed = coincidence_density(&pair, dt);
        let quad = coincidence_density_quadrature(&pair, dt).unwrap();
        prop_assert!((closed - quad).abs() < 1e-8, "{closed} vs {quad}");
    }
}

#[test]
fn conditional_probabilities_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..100_000 {
        let tau_f = rng.random_range(0.5..100.0);
        let tau_s = rng.random_range(0.5..100.0);
        let delay = rng.random_range(-50.0..50.0);
        let xi = rng.random_range(0.0..=1.0);
        let detuning = rng.random_range(-200.0..200.0);
        let pair = SourcePair::with_delay(tau_f, tau_s, delay, xi, detuning).unwrap();
        let start = pair.env_f().t0().max(pair.env_s().t0());
        let t1 = pair.env_f().sample_emission_time(rng.random()).max(start);
        let t2 = pair.env_s().sample_emission_time(rng.random()).max(start);
        let p = conditional_outcome_probs(&pair, t1, t2).unwrap();
        for q in [p.coincidence, p.bunch_a, p.bunch_b] {
            assert!((0.0..=1.0).contains(&q), "{p:?}");
        }
        assert!((p.coincidence + p.bunch_a + p.bunch_b - 1.0).abs() < 1e-12, "{p:?}");
    }
}

#[test]
fn integrated_probabilities_match_closed_forms() {
    let (tau_s, tau_f) = (26.18, 13.61);
    let perp = SourcePair::with_delay(tau_f, tau_s, 0.0, 0.0, 0.0).unwrap();
    assert!((coincidence_probability_quadrature(&perp).unwrap() - 0.5).abs() < 1e-6);
    let par = SourcePair::with_delay(tau_f, tau_s, 0.0, 1.0, 0.0).unwrap();
    let expected = (tau_s - tau_f).powi(2) / (2.0 * (tau_s + tau_f).powi(2));
    assert!((coincidence_probability_quadrature(&par).unwrap() - expected).abs() < 1e-6);
    assert_relative_eq!(coincidence_probability(&par), expected, max_relative = 1e-12);
    for delay in [-20.0, -10.0, 0.0, 10.0, 20.0] {
        let pair = SourcePair::with_delay(tau_f, tau_s, delay, 1.0, 0.0).unwrap();
        let closed = dip_ratio(delay, tau_s, tau_f).unwrap();
        assert!((dip_ratio_integrated(&pair) - closed).abs() < 1e-6, "ΔT = {delay}");
    }
}

#[test]
fn envelope_phase_does_not_enter_single_photon_density() {
    let a = Envelope::new(20.0, 3.0, 0.0).unwrap();
    let b = Envelope::new(20.0, 3.0, 55.0).unwrap();
    for t in [3.0, 10.0, 40.0] {
        assert_relative_eq!(a.intensity(t), b.intensity(t), max_relative = 1e-14);
    }
}
