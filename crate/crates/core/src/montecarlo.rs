//! Trigger-by-trigger Monte Carlo of the two-source HOM experiment.
//!
//! Every trigger draws from its own ChaCha8 stream, selected by the trigger
//! index, so the output does not depend on how triggers are scheduled across
//! threads. Triggers are generated in fixed-size chunks; each chunk covers a
//! contiguous, non-overlapping time range, so concatenating chunk outputs in
//! index order yields a globally sorted stream.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interference::{conditional_outcome_probs, SourcePair};
use crate::wavepacket::Envelope;

/// Triggers per work item.
pub const CHUNK_TRIGGERS: u64 = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_triggers: u64,
    /// Spacing of triggers, ns.
    pub trigger_period: f64,
    /// End-to-end detection probability of the heralded FWM photon.
    pub eta_f: f64,
    /// End-to-end detection probability of the single-atom photon.
    pub eta_s: f64,
    pub tau_f: f64,
    pub tau_s: f64,
    /// Emission delay `t_f − t_s`, ns.
    pub delta_t: f64,
    /// Standard deviation of Gaussian jitter on the single-atom start, ns.
    pub excitation_jitter_sigma: f64,
    /// Residual carrier detuning of the single-atom photon, MHz.
    pub detuning: f64,
    pub xi: f64,
    /// Background clicks per ns on each detector.
    pub bg_rate_a: f64,
    pub bg_rate_b: f64,
    /// Recorded time after each trigger, ns.
    pub window_length: f64,
    /// Recorded time before each trigger, ns. Background clicks are drawn
    /// over `[-pre_trigger_window, window_length)`.
    pub pre_trigger_window: f64,
    /// Timestamp tick, ps.
    pub timestamp_resolution: f64,
    /// Start of the earlier photon relative to its trigger, ns.
    pub emission_delay: f64,
    /// Constant latency added to every click of a detector, ns.
    pub offset_a: f64,
    pub offset_b: f64,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n_triggers: 100_000,
            trigger_period: 1000.0,
            eta_f: 0.005,
            eta_s: 0.005,
            tau_f: 13.61,
            tau_s: 26.18,
            delta_t: 0.0,
            excitation_jitter_sigma: 0.0,
            detuning: 0.0,
            xi: 1.0,
            bg_rate_a: 0.0,
            bg_rate_b: 0.0,
            window_length: 500.0,
            pre_trigger_window: 250.0,
            timestamp_resolution: 125.0,
            emission_delay: 0.0,
            offset_a: 0.0,
            offset_b: 0.0,
            seed: 0,
        }
    }
}

fn require(ok: bool, name: &str, reason: impl Into<String>) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(name, reason))
    }
}

impl ExperimentConfig {
    /// Ideal settings: every photon detected, no background.
    pub fn ideal(n_triggers: u64, xi: f64, seed: u64) -> Self {
        Self {
            n_triggers,
            eta_f: 1.0,
            eta_s: 1.0,
            xi,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("trigger_period", self.trigger_period),
            ("eta_f", self.eta_f),
            ("eta_s", self.eta_s),
            ("tau_f", self.tau_f),
            ("tau_s", self.tau_s),
            ("delta_t", self.delta_t),
            ("excitation_jitter_sigma", self.excitation_jitter_sigma),
            ("detuning", self.detuning),
            ("xi", self.xi),
            ("bg_rate_a", self.bg_rate_a),
            ("bg_rate_b", self.bg_rate_b),
            ("window_length", self.window_length),
            ("pre_trigger_window", self.pre_trigger_window),
            ("timestamp_resolution", self.timestamp_resolution),
            ("emission_delay", self.emission_delay),
            ("offset_a", self.offset_a),
            ("offset_b", self.offset_b),
        ];
        for (name, v) in finite {
            require(v.is_finite(), name, "must be finite")?;
        }
        require(self.n_triggers > 0, "n_triggers", "must be at least 1")?;
        for (name, p) in [("eta_f", self.eta_f), ("eta_s", self.eta_s), ("xi", self.xi)] {
            require((0.0..=1.0).contains(&p), name, format!("must lie in [0, 1], got {p}"))?;
        }
        require(self.tau_f > 0.0, "tau_f", "must be > 0")?;
        require(self.tau_s > 0.0, "tau_s", "must be > 0")?;
        require(self.bg_rate_a >= 0.0, "bg_rate_a", "must be >= 0")?;
        require(self.bg_rate_b >= 0.0, "bg_rate_b", "must be >= 0")?;
        require(self.excitation_jitter_sigma >= 0.0, "excitation_jitter_sigma", "must be >= 0")?;
        require(self.timestamp_resolution > 0.0, "timestamp_resolution", "must be > 0")?;
        require(self.window_length > 0.0, "window_length", "must be > 0")?;
        require(self.pre_trigger_window >= 0.0, "pre_trigger_window", "must be >= 0")?;
        require(self.emission_delay >= 0.0, "emission_delay", "must be >= 0")?;
        require(self.offset_a >= 0.0, "offset_a", "must be >= 0")?;
        require(self.offset_b >= 0.0, "offset_b", "must be >= 0")?;
        require(
            self.trigger_period
                > self.pre_trigger_window + self.window_length + self.offset_a.max(self.offset_b),
            "trigger_period",
            "must exceed pre_trigger_window + window_length plus detector offsets so trigger windows do not overlap",
        )?;
        require(
            self.emission_delay + self.delta_t.abs() < self.window_length,
            "delta_t",
            "both photons must start inside the record window",
        )?;
        Ok(())
    }

    /// Start of the FWM photon relative to its trigger, ns.
    pub fn start_f(&self) -> f64 {
        self.emission_delay + self.delta_t.max(0.0)
    }

    /// Nominal start of the single-atom photon relative to its trigger, ns.
    pub fn start_s(&self) -> f64 {
        self.emission_delay + (-self.delta_t).max(0.0)
    }

    /// Source pair for one trigger, times relative to the trigger.
    pub fn source_pair(&self) -> Result<SourcePair> {
        SourcePair::new(
            Envelope::resonant(self.tau_f, self.start_f())?,
            Envelope::new(self.tau_s, self.start_s(), self.detuning)?,
            self.xi,
        )
    }

    /// Absolute time of trigger `index`, ns.
    pub fn trigger_time(&self, index: u64) -> f64 {
        self.pre_trigger_window + index as f64 * self.trigger_period
    }

    /// Length of the background-recording span around each trigger, ns.
    pub fn record_span(&self) -> f64 {
        self.pre_trigger_window + self.window_length
    }

    pub fn n_chunks(&self) -> u64 {
        self.n_triggers.div_ceil(CHUNK_TRIGGERS)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Detector {
    #[serde(rename = "T")]
    Trigger,
    A,
    B,
}

impl Detector {
    pub fn label(self) -> &'static str {
        match self {
            Detector::Trigger => "T",
            Detector::A => "A",
            Detector::B => "B",
        }
    }
}

impl fmt::Display for Detector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Detector {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "T" => Ok(Detector::Trigger),
            "A" => Ok(Detector::A),
            "B" => Ok(Detector::B),
            other => Err(format!("unknown detector `{other}`")),
        }
    }
}

/// One timestamped click. Ordering is by timestamp, then detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub timestamp: u64,
    pub detector: Detector,
}

impl PartialOrd for DetectionRecord {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for DetectionRecord {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.timestamp, self.detector).cmp(&(other.timestamp, other.detector))
    }
}

impl DetectionRecord {
    pub fn new(detector: Detector, timestamp: u64) -> Self {
        Self {
            timestamp,
            detector,
        }
    }
}

/// Floor of `t` expressed in ticks of `resolution_ps`.
pub fn quantize(t_ns: f64, resolution_ps: f64) -> Result<u64> {
    if !(t_ns >= 0.0) || !t_ns.is_finite() {
        return Err(Error::invalid("t", format!("time must be finite and >= 0, got {t_ns}")));
    }
    if !(resolution_ps > 0.0) {
        return Err(Error::invalid("resolution", "must be > 0"));
    }
    Ok((t_ns * 1000.0 / resolution_ps).floor() as u64)
}

/// Which beam-splitter output(s) the photons of one trigger reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Outcome {
    NoPhoton,
    Single(Detector),
    Coincidence,
    Bunched(Detector),
}

/// Photon-level truth for one trigger, before background and quantization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialTruth {
    pub outcome: Outcome,
    /// Photon click times relative to the trigger, ns.
    pub clicks: [Option<(Detector, f64)>; 2],
}

/// Pre-validated simulation state shared by all trials.
#[derive(Debug, Clone)]
pub struct Simulator {
    config: ExperimentConfig,
    env_f: Envelope,
    env_s: Envelope,
    jitter: Option<Normal<f64>>,
    bg_a: Option<Poisson<f64>>,
    bg_b: Option<Poisson<f64>>,
}

fn background(rate: f64, window: f64) -> Result<Option<Poisson<f64>>> {
    let mean = rate * window;
    if mean > 0.0 {
        Poisson::new(mean)
            .map(Some)
            .map_err(|e| Error::invalid("bg_rate", e.to_string()))
    } else {
        Ok(None)
    }
}

impl Simulator {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let pair = config.source_pair()?;
        let jitter = if config.excitation_jitter_sigma > 0.0 {
            Some(
                Normal::new(0.0, config.excitation_jitter_sigma)
                    .map_err(|e| Error::invalid("excitation_jitter_sigma", e.to_string()))?,
            )
        } else {
            None
        };
        Ok(Self {
            bg_a: background(config.bg_rate_a, config.record_span())?,
            bg_b: background(config.bg_rate_b, config.record_span())?,
            env_f: *pair.env_f(),
            env_s: *pair.env_s(),
            jitter,
            config,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    fn rng_for(&self, trial: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(trial);
        rng
    }

    /// Photon routing for one trigger. Always consumes the same number of
    /// random draws, whatever the live photons and `xi` turn out to be.
    fn photons<R: Rng>(&self, rng: &mut R) -> Result<TrialTruth> {
        let c = &self.config;
        let live_f = rng.random::<f64>() < c.eta_f;
        let live_s = rng.random::<f64>() < c.eta_s;
        let env_s = match &self.jitter {
            Some(normal) => self.env_s.shifted(normal.sample(rng)),
            None => self.env_s,
        };
        let t1 = self.env_f.sample_emission_time(rng.random());
        let t2 = env_s.sample_emission_time(rng.random());
        let u_class: f64 = rng.random();
        let first_to_a = rng.random::<f64>() < 0.5;

        let side = |to_a: bool| if to_a { Detector::A } else { Detector::B };
        let truth = match (live_f, live_s) {
            (false, false) => TrialTruth {
                outcome: Outcome::NoPhoton,
                clicks: [None, None],
            },
            (true, false) | (false, true) => {
                let t = if live_f { t1 } else { t2 };
                let d = side(first_to_a);
                TrialTruth {
                    outcome: Outcome::Single(d),
                    clicks: [Some((d, t)), None],
                }
            }
            (true, true) => {
                let pair = SourcePair::new(self.env_f, env_s, c.xi)?;
                let p = conditional_outcome_probs(&pair, t1, t2)?;
                if u_class < p.coincidence {
                    let (d1, d2) = if first_to_a {
                        (Detector::A, Detector::B)
                    } else {
                        (Detector::B, Detector::A)
                    };
                    TrialTruth {
                        outcome: Outcome::Coincidence,
                        clicks: [Some((d1, t1)), Some((d2, t2))],
                    }
                } else {
                    let d = side(u_class < p.coincidence + p.bunch_a);
                    TrialTruth {
                        outcome: Outcome::Bunched(d),
                        clicks: [Some((d, t1)), Some((d, t2))],
                    }
                }
            }
        };
        Ok(truth)
    }

    /// Photon-level outcome of trial `index` (no background, no quantization).
    pub fn trial_truth(&self, index: u64) -> Result<TrialTruth> {
        self.photons(&mut self.rng_for(index))
    }

    /// Appends the records of trial `index`, sorted, to `out`.
    pub fn trial_into(&self, index: u64, out: &mut Vec<DetectionRecord>) -> Result<()> {
        let c = &self.config;
        let mut rng = self.rng_for(index);
        let truth = self.photons(&mut rng)?;
        let trigger = c.trigger_time(index);
        let res = c.timestamp_resolution;
        let first = out.len();
        out.push(DetectionRecord::new(Detector::Trigger, quantize(trigger, res)?));

        let mut push = |d: Detector, rel: f64| -> Result<()> {
            if !(-c.pre_trigger_window..c.window_length).contains(&rel) {
                return Ok(());
            }
            let offset = if d == Detector::A { c.offset_a } else { c.offset_b };
            out.push(DetectionRecord::new(d, quantize(trigger + rel + offset, res)?));
            Ok(())
        };
        for (d, t) in truth.clicks.into_iter().flatten() {
            push(d, t)?;
        }
        for (d, dist) in [(Detector::A, &self.bg_a), (Detector::B, &self.bg_b)] {
            if let Some(poisson) = dist {
                let n = poisson.sample(&mut rng) as u64;
                for _ in 0..n {
                    let rel = rng.random::<f64>() * c.record_span() - c.pre_trigger_window;
                    push(d, rel)?;
                }
            }
        }
        out[first..].sort_unstable();
        Ok(())
    }

    /// Records of chunk `chunk` (triggers `chunk·CHUNK_TRIGGERS ..`).
    pub fn chunk(&self, chunk: u64) -> Result<Vec<DetectionRecord>> {
        let start = chunk * CHUNK_TRIGGERS;
        let end = (start + CHUNK_TRIGGERS).min(self.config.n_triggers);
        let mut out = Vec::with_capacity(((end - start) * 2) as usize);
        for i in start..end {
            self.trial_into(i, &mut out)?;
        }
        Ok(out)
    }

    /// Maps every chunk's records and folds the results in chunk order.
    pub fn map_reduce<T, M, F>(&self, exec: Execution, map: M, init: T, mut fold: F) -> Result<T>
    where
        T: Send,
        M: Fn(&[DetectionRecord]) -> Result<T> + Sync + Send,
        F: FnMut(T, T) -> T,
    {
        let n = self.config.n_chunks();
        let run = |c: u64| self.chunk(c).and_then(|records| map(&records));
        let parts: Vec<Result<T>> = match exec {
            Execution::Sequential => (0..n).map(run).collect(),
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                use rayon::prelude::*;
                (0..n).into_par_iter().map(run).collect()
            }
        };
        let mut acc = init;
        for part in parts {
            acc = fold(acc, part?);
        }
        Ok(acc)
    }

    pub fn run(&self, exec: Execution) -> Result<Vec<DetectionRecord>> {
        let parts = self.map_reduce(exec, |r| Ok(vec![r.to_vec()]), Vec::new(), |mut acc, mut p| {
            acc.append(&mut p);
            acc
        })?;
        Ok(parts.concat())
    }
}

/// How trials are scheduled. Results are identical for every variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    #[cfg_attr(not(feature = "parallel"), default)]
    Sequential,
    #[cfg(feature = "parallel")]
    #[default]
    Parallel,
}

/// Full event stream for `config`, sorted by timestamp.
pub fn simulate(config: &ExperimentConfig) -> Result<Vec<DetectionRecord>> {
    simulate_with(config, Execution::default())
}

pub fn simulate_with(config: &ExperimentConfig, exec: Execution) -> Result<Vec<DetectionRecord>> {
    Simulator::new(config.clone())?.run(exec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_floor() {
        assert_eq!(quantize(0.0, 125.0).unwrap(), 0);
        assert_eq!(quantize(0.130, 125.0).unwrap(), 1);
        assert_eq!(quantize(0.124, 125.0).unwrap(), 0);
        assert_eq!(quantize(0.125, 125.0).unwrap(), 1);
        assert!(quantize(-0.001, 125.0).is_err());
        assert!(quantize(1.0, 0.0).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(ExperimentConfig::default().validate().is_ok());
        let bad = [
            ExperimentConfig { eta_f: 1.2, ..Default::default() },
            ExperimentConfig { bg_rate_b: -1.0, ..Default::default() },
            ExperimentConfig { trigger_period: 400.0, ..Default::default() },
            ExperimentConfig { trigger_period: 700.0, ..Default::default() },
            ExperimentConfig { pre_trigger_window: -1.0, ..Default::default() },
            ExperimentConfig { xi: -0.5, ..Default::default() },
            ExperimentConfig { n_triggers: 0, ..Default::default() },
            ExperimentConfig { delta_t: 600.0, ..Default::default() },
            ExperimentConfig { tau_s: 0.0, ..Default::default() },
            ExperimentConfig { timestamp_resolution: f64::NAN, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
            assert!(simulate(&cfg).is_err());
        }
    }

    #[test]
    fn no_photons_only_triggers() {
        let cfg = ExperimentConfig {
            n_triggers: 1000,
            eta_f: 0.0,
            eta_s: 0.0,
            ..Default::default()
        };
        let records = simulate(&cfg).unwrap();
        assert_eq!(records.len(), 1000);
        assert!(records.iter().all(|r| r.detector == Detector::Trigger));
        assert_eq!(records[0].timestamp, 2000);
        assert_eq!(records[1].timestamp, 10_000);
    }

    #[test]
    fn sorted_output() {
        let cfg = ExperimentConfig {
            n_triggers: 10_000,
            eta_f: 0.5,
            eta_s: 0.5,
            bg_rate_a: 1e-3,
            bg_rate_b: 2e-3,
            ..Default::default()
        };
        let records = simulate(&cfg).unwrap();
        assert!(records.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn sequential_equals_parallel() {
        let cfg = ExperimentConfig {
            n_triggers: 20_000,
            eta_f: 0.3,
            eta_s: 0.6,
            bg_rate_a: 1e-3,
            excitation_jitter_sigma: 1.0,
            ..Default::default()
        };
        let seq = simulate_with(&cfg, Execution::Sequential).unwrap();
        let par = simulate_with(&cfg, Execution::default()).unwrap();
        assert_eq!(seq, par);
    }

    #[test]
    fn perfect_bunching_for_identical_photons() {
        let cfg = ExperimentConfig {
            tau_f: 20.0,
            tau_s: 20.0,
            ..ExperimentConfig::ideal(20_000, 1.0, 3)
        };
        let sim = Simulator::new(cfg).unwrap();
        for i in 0..20_000 {
            let t = sim.trial_truth(i).unwrap();
            assert!(matches!(t.outcome, Outcome::Bunched(_)), "trial {i}: {:?}", t.outcome);
        }
    }
}
