//! Coincidence analysis of timestamped click streams.
//!
//! The pipeline mirrors a time-tagger workflow: split the stream into
//! trigger sequences, keep sequences with a click inside the validity window,
//! histogram the signed difference `Δt_ab = t_a − t_b` of the first click on
//! each detector, normalize by the number of triggers, and compare parallel
//! against orthogonal runs over a coincidence window.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::montecarlo::{DetectionRecord, Detector, Execution, ExperimentConfig, Simulator};

/// `|Δt_ab|` range whose bins carry only accidental coincidences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WingRegion {
    pub lo: f64,
    pub hi: f64,
}

impl Default for WingRegion {
    fn default() -> Self {
        Self { lo: 100.0, hi: 200.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSettings {
    /// A sequence is valid if A or B clicks within this time after its trigger, ns.
    pub valid_window: f64,
    pub bin_width: f64,
    /// Histogram covers `[−histogram_range, histogram_range]`, ns.
    pub histogram_range: f64,
    pub wing: WingRegion,
    /// Clicks up to this long before a trigger belong to its sequence, ns.
    pub pre_trigger_window: f64,
    /// Latencies subtracted from A and B click times, ns.
    pub offset_a: f64,
    pub offset_b: f64,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        Self {
            valid_window: 85.0,
            bin_width: 10.0,
            histogram_range: 205.0,
            wing: WingRegion::default(),
            pre_trigger_window: 250.0,
            offset_a: 0.0,
            offset_b: 0.0,
        }
    }
}

impl AnalysisSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.valid_window > 0.0 && self.valid_window.is_finite()) {
            return Err(Error::invalid("valid_window", "must be > 0"));
        }
        if !(self.bin_width > 0.0 && self.bin_width.is_finite()) {
            return Err(Error::invalid("bin_width", "must be > 0"));
        }
        if !(self.wing.lo >= 0.0 && self.wing.hi >= self.wing.lo) {
            return Err(Error::invalid("wing", "need 0 <= wing_lo <= wing_hi"));
        }
        if !(self.pre_trigger_window >= 0.0 && self.pre_trigger_window.is_finite()) {
            return Err(Error::invalid("pre_trigger_window", "must be >= 0"));
        }
        if !(self.offset_a.is_finite() && self.offset_b.is_finite()) {
            return Err(Error::invalid("offset", "detector offsets must be finite"));
        }
        self.binning().map(|_| ())
    }

    pub fn binning(&self) -> Result<Binning> {
        Binning::new(self.bin_width, self.histogram_range)
    }
}

/// Clicks attached to one valid trigger sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sequence {
    pub trigger: u64,
    /// First A / B click after offset correction, ns relative to the trigger.
    pub first_a: Option<f64>,
    pub first_b: Option<f64>,
    pub n_a: u32,
    pub n_b: u32,
}

impl Sequence {
    /// `t_a − t_b` of the first clicks, when both detectors fired.
    pub fn delta_t(&self) -> Option<f64> {
        Some(self.first_a? - self.first_b?)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PairedEvents {
    /// Every trigger in the stream, valid or not.
    pub n_triggers: u64,
    /// Valid sequences in stream order.
    pub sequences: Vec<Sequence>,
}

impl PairedEvents {
    pub fn delta_ts(&self) -> Vec<f64> {
        self.sequences.iter().filter_map(Sequence::delta_t).collect()
    }
}

struct OpenSequence {
    trigger: u64,
    trigger_ns: f64,
    first_a: Option<f64>,
    first_b: Option<f64>,
    n_a: u32,
    n_b: u32,
    in_window: bool,
}

impl OpenSequence {
    fn new(trigger: u64, trigger_ns: f64) -> Self {
        Self {
            trigger,
            trigger_ns,
            first_a: None,
            first_b: None,
            n_a: 0,
            n_b: 0,
            in_window: false,
        }
    }

    /// Adds a click at offset-corrected absolute time `t`. Clicks must
    /// arrive in time order per detector.
    fn add(&mut self, detector: Detector, t: f64, valid_window: f64) {
        let rel = t - self.trigger_ns;
        let (first, count) = if detector == Detector::A {
            (&mut self.first_a, &mut self.n_a)
        } else {
            (&mut self.first_b, &mut self.n_b)
        };
        if first.is_none() {
            *first = Some(rel);
        }
        *count += 1;
        if (0.0..valid_window).contains(&rel) {
            self.in_window = true;
        }
    }

    fn close(self) -> Option<Sequence> {
        self.in_window.then_some(Sequence {
            trigger: self.trigger,
            first_a: self.first_a,
            first_b: self.first_b,
            n_a: self.n_a,
            n_b: self.n_b,
        })
    }
}

/// Splits a timestamp-sorted stream into trigger sequences.
///
/// A trigger at `T` owns the clicks from `T − pre_trigger_window` up to the
/// start of the next trigger's pre-window. Earlier clicks are ignored. Only
/// valid sequences are returned, but every trigger is counted.
pub fn pair_events(
    records: &[DetectionRecord],
    resolution_ps: f64,
    settings: &AnalysisSettings,
) -> Result<PairedEvents> {
    if !(resolution_ps > 0.0) {
        return Err(Error::invalid("timestamp_resolution", "must be > 0"));
    }
    let tick = resolution_ps * 1e-3;
    let pre = settings.pre_trigger_window;
    let mut out = PairedEvents::default();
    let mut open: Option<OpenSequence> = None;
    // Clicks seen since the last trigger, offset-corrected.
    let mut pending: Vec<(Detector, f64)> = Vec::new();
    let mut previous = 0u64;

    for (index, r) in records.iter().enumerate() {
        if r.timestamp < previous {
            return Err(Error::Unsorted {
                index,
                timestamp: r.timestamp,
                previous,
            });
        }
        previous = r.timestamp;
        let t = r.timestamp as f64 * tick;
        match r.detector {
            Detector::Trigger => {
                let mut next = OpenSequence::new(r.timestamp, t);
                for (d, tc) in pending.drain(..) {
                    if tc >= t - pre {
                        next.add(d, tc, settings.valid_window);
                    } else if let Some(seq) = open.as_mut() {
                        seq.add(d, tc, settings.valid_window);
                    }
                }
                if let Some(seq) = open.take().and_then(OpenSequence::close) {
                    out.sequences.push(seq);
                }
                out.n_triggers += 1;
                open = Some(next);
            }
            Detector::A => pending.push((Detector::A, t - settings.offset_a)),
            Detector::B => pending.push((Detector::B, t - settings.offset_b)),
        }
    }
    if let Some(mut seq) = open {
        for (d, tc) in pending {
            seq.add(d, tc, settings.valid_window);
        }
        if let Some(seq) = seq.close() {
            out.sequences.push(seq);
        }
    }
    Ok(out)
}

/// Zero-centred bins `[(k − ½)w, (k + ½)w)` for `|k| ≤ n_side`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Binning {
    pub bin_width: f64,
    pub n_side: usize,
}

impl Binning {
    /// Largest zero-centred binning that fits inside `[−range, range]`.
    pub fn new(bin_width: f64, range: f64) -> Result<Self> {
        if !(bin_width > 0.0 && bin_width.is_finite()) {
            return Err(Error::invalid("bin_width", "must be > 0"));
        }
        if !(range.is_finite() && range >= 0.5 * bin_width) {
            return Err(Error::invalid(
                "histogram_range",
                format!("range {range} ns holds no {bin_width} ns bin"),
            ));
        }
        let n_side = ((range - 0.5 * bin_width) / bin_width + 1e-9).floor() as usize;
        Ok(Self { bin_width, n_side })
    }

    pub fn len(&self) -> usize {
        2 * self.n_side + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn center(&self, index: usize) -> f64 {
        (index as f64 - self.n_side as f64) * self.bin_width
    }

    pub fn edges(&self, index: usize) -> (f64, f64) {
        let c = self.center(index);
        (c - 0.5 * self.bin_width, c + 0.5 * self.bin_width)
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.center(i)).collect()
    }

    pub fn index(&self, dt: f64) -> Option<usize> {
        let k = (dt / self.bin_width + 0.5).floor();
        let n = self.n_side as f64;
        (k >= -n && k <= n).then(|| (k + n) as usize)
    }
}

/// Trigger-normalized histogram of `Δt_ab`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceHistogram {
    pub binning: Binning,
    pub bin_centers: Vec<f64>,
    pub counts: Vec<u64>,
    pub n_triggers: u64,
    /// `counts / n_triggers`.
    pub values: Vec<f64>,
    /// Differences that fell outside the binned range.
    pub overflow: u64,
}

impl CoincidenceHistogram {
    pub fn empty(binning: Binning, n_triggers: u64) -> Result<Self> {
        Self::from_counts(binning, vec![0; binning.len()], n_triggers, 0)
    }

    pub fn from_counts(binning: Binning, counts: Vec<u64>, n_triggers: u64, overflow: u64) -> Result<Self> {
        if n_triggers == 0 {
            return Err(Error::InsufficientStatistics("no triggers".into()));
        }
        if counts.len() != binning.len() {
            return Err(Error::invalid("counts", "length does not match binning"));
        }
        let values = counts.iter().map(|&c| c as f64 / n_triggers as f64).collect();
        Ok(Self {
            bin_centers: binning.centers(),
            binning,
            counts,
            n_triggers,
            values,
            overflow,
        })
    }

    pub fn bin_width(&self) -> f64 {
        self.binning.bin_width
    }

    /// Adds the counts and triggers of another run with the same binning.
    pub fn merge(&mut self, other: &CoincidenceHistogram) -> Result<()> {
        if self.binning != other.binning {
            return Err(Error::invalid("binning", "histograms use different bins"));
        }
        for (c, o) in self.counts.iter_mut().zip(&other.counts) {
            *c += o;
        }
        self.n_triggers += other.n_triggers;
        self.overflow += other.overflow;
        let n = self.n_triggers as f64;
        for (v, &c) in self.values.iter_mut().zip(&self.counts) {
            *v = c as f64 / n;
        }
        Ok(())
    }

    /// Indices of bins lying entirely inside `window`.
    pub fn window_bins(&self, window: CoincidenceWindow) -> Result<Vec<usize>> {
        let eps = 1e-9 * self.bin_width();
        let bins: Vec<usize> = (0..self.binning.len())
            .filter(|&i| {
                let (lo, hi) = self.binning.edges(i);
                lo >= -window.half_width - eps && hi <= window.half_width + eps
            })
            .collect();
        if bins.is_empty() {
            return Err(Error::invalid(
                "t_c",
                format!("window ±{} ns contains no complete bin", window.half_width),
            ));
        }
        Ok(bins)
    }
}

/// Bins `Δt_ab` values into a zero-centred, half-open histogram.
pub fn histogram(delta_ts: &[f64], n_triggers: u64, bin_width: f64, range: f64) -> Result<CoincidenceHistogram> {
    let binning = Binning::new(bin_width, range)?;
    histogram_with(delta_ts, n_triggers, binning)
}

pub fn histogram_with(delta_ts: &[f64], n_triggers: u64, binning: Binning) -> Result<CoincidenceHistogram> {
    let mut counts = vec![0u64; binning.len()];
    let mut overflow = 0;
    for &dt in delta_ts {
        match binning.index(dt) {
            Some(i) => counts[i] += 1,
            None => overflow += 1,
        }
    }
    CoincidenceHistogram::from_counts(binning, counts, n_triggers, overflow)
}

/// Pairs and histograms one stream.
pub fn analyze_stream(
    records: &[DetectionRecord],
    resolution_ps: f64,
    settings: &AnalysisSettings,
) -> Result<CoincidenceHistogram> {
    settings.validate()?;
    let paired = pair_events(records, resolution_ps, settings)?;
    histogram_with(&paired.delta_ts(), paired.n_triggers, settings.binning()?)
}

/// Simulates `config` and histograms it chunk by chunk, without holding the
/// full event stream in memory.
pub fn simulate_histogram(
    config: &ExperimentConfig,
    settings: &AnalysisSettings,
    exec: Execution,
) -> Result<CoincidenceHistogram> {
    settings.validate()?;
    let sim = Simulator::new(config.clone())?;
    let binning = settings.binning()?;
    let res = config.timestamp_resolution;
    let merged = sim.map_reduce(
        exec,
        |records| analyze_stream(records, res, settings).map(Some),
        None,
        |acc: Option<CoincidenceHistogram>, h| match (acc, h) {
            (Some(mut total), Some(h)) => {
                total.merge(&h).expect("chunks share one binning");
                Some(total)
            }
            (acc, h) => acc.or(h),
        },
    )?;
    match merged {
        Some(h) => Ok(h),
        None => CoincidenceHistogram::empty(binning, config.n_triggers),
    }
}

/// Symmetric coincidence window `Δt_ab ∈ [−half_width, half_width]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceWindow {
    pub half_width: f64,
}

impl CoincidenceWindow {
    pub fn symmetric(half_width: f64) -> Self {
        Self { half_width }
    }

    /// Window of the given total length, centred on zero.
    pub fn total_length(length: f64) -> Self {
        Self {
            half_width: 0.5 * length,
        }
    }
}

/// Accidental floor per bin with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AccidentalEstimate {
    pub value: f64,
    pub sigma: f64,
    pub n_bins: usize,
}

impl AccidentalEstimate {
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            sigma: 0.0,
            n_bins: 0,
        }
    }
}

/// Mean normalized value over bins with `wing.lo ≤ |centre| ≤ wing.hi`.
pub fn estimate_accidentals(h: &CoincidenceHistogram, wing: WingRegion) -> Result<AccidentalEstimate> {
    let eps = 1e-9 * h.bin_width();
    let bins: Vec<usize> = (0..h.binning.len())
        .filter(|&i| {
            let c = h.bin_centers[i].abs();
            c >= wing.lo - eps && c <= wing.hi + eps
        })
        .collect();
    if bins.is_empty() {
        return Err(Error::invalid(
            "wing",
            format!("no bins with |Δt| in [{}, {}] ns", wing.lo, wing.hi),
        ));
    }
    let m = bins.len() as f64;
    let n = h.n_triggers as f64;
    let total: u64 = bins.iter().map(|&i| h.counts[i]).sum();
    Ok(AccidentalEstimate {
        value: bins.iter().map(|&i| h.values[i]).sum::<f64>() / m,
        sigma: (total as f64).sqrt() / (n * m),
        n_bins: bins.len(),
    })
}

/// Accidental floors subtracted before forming the window ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Accidentals {
    None,
    /// One floor for both histograms.
    Shared(AccidentalEstimate),
    PerHistogram {
        parallel: AccidentalEstimate,
        perpendicular: AccidentalEstimate,
    },
}

impl Accidentals {
    /// Floors estimated separately from each histogram's wings.
    pub fn from_wings(par: &CoincidenceHistogram, perp: &CoincidenceHistogram, wing: WingRegion) -> Result<Self> {
        Ok(Accidentals::PerHistogram {
            parallel: estimate_accidentals(par, wing)?,
            perpendicular: estimate_accidentals(perp, wing)?,
        })
    }

    fn parts(&self) -> (AccidentalEstimate, AccidentalEstimate, bool) {
        match *self {
            Accidentals::None => (AccidentalEstimate::default(), AccidentalEstimate::default(), false),
            Accidentals::Shared(g) => (g, g, true),
            Accidentals::PerHistogram {
                parallel,
                perpendicular,
            } => (parallel, perpendicular, false),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioEstimate {
    pub ratio: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisibilityResult {
    pub v: f64,
    pub sigma_v: f64,
    /// Half-width of the coincidence window, ns.
    pub t_c: f64,
    pub g_acc_parallel: f64,
    pub g_acc_perpendicular: f64,
}

/// `Σ(G_|| − g_||) / Σ(G_⊥ − g_⊥)` over the window, with Poisson errors.
pub fn coincidence_ratio(
    h_par: &CoincidenceHistogram,
    h_perp: &CoincidenceHistogram,
    window: CoincidenceWindow,
    accidentals: Accidentals,
) -> Result<RatioEstimate> {
    if h_par.binning != h_perp.binning {
        return Err(Error::invalid("binning", "parallel and perpendicular histograms differ"));
    }
    let bins = h_par.window_bins(window)?;
    let m = bins.len() as f64;
    let (g_par, g_perp, shared) = accidentals.parts();

    let sum = |h: &CoincidenceHistogram| -> (f64, f64) {
        let counts: u64 = bins.iter().map(|&i| h.counts[i]).sum();
        let n = h.n_triggers as f64;
        (counts as f64 / n, counts as f64 / (n * n))
    };
    let (s_par, var_par) = sum(h_par);
    let (s_perp, var_perp) = sum(h_perp);
    let num = s_par - m * g_par.value;
    let den = s_perp - m * g_perp.value;
    if !(den > 0.0) {
        return Err(Error::InsufficientStatistics(format!(
            "perpendicular window sum after accidental subtraction is {den:e}"
        )));
    }
    let var_num = var_par + (m * g_par.sigma).powi(2);
    let var_den = var_perp + (m * g_perp.sigma).powi(2);
    let cov = if shared { (m * g_par.sigma).powi(2) } else { 0.0 };
    let ratio = num / den;
    let var = (var_num + ratio * ratio * var_den - 2.0 * ratio * cov) / (den * den);
    Ok(RatioEstimate {
        ratio,
        sigma: var.max(0.0).sqrt(),
    })
}

/// `V = 1 − Σ(G_|| − g)/Σ(G_⊥ − g)` over the window.
pub fn visibility(
    h_par: &CoincidenceHistogram,
    h_perp: &CoincidenceHistogram,
    window: CoincidenceWindow,
    accidentals: Accidentals,
) -> Result<VisibilityResult> {
    let r = coincidence_ratio(h_par, h_perp, window, accidentals)?;
    let (g_par, g_perp, _) = accidentals.parts();
    Ok(VisibilityResult {
        v: 1.0 - r.ratio,
        sigma_v: r.sigma,
        t_c: window.half_width,
        g_acc_parallel: g_par.value,
        g_acc_perpendicular: g_perp.value,
    })
}

/// Parallel and perpendicular histograms taken at one delay.
#[derive(Debug, Clone, PartialEq)]
pub struct DipRun {
    pub delta_t: f64,
    pub parallel: CoincidenceHistogram,
    pub perpendicular: CoincidenceHistogram,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AccidentalHandling {
    None,
    /// Subtract each histogram's own wing mean.
    Wings(WingRegion),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DipPoint {
    pub delta_t: f64,
    pub ratio: f64,
    pub sigma: f64,
}

/// Default dip window: `Δt_ab ∈ [−150, 150]` ns.
pub const DIP_WINDOW: CoincidenceWindow = CoincidenceWindow { half_width: 150.0 };

/// `P_||/P_⊥` per delay.
pub fn dip_curve(runs: &[DipRun], window: CoincidenceWindow, handling: AccidentalHandling) -> Result<Vec<DipPoint>> {
    if let Some(first) = runs.first() {
        if runs.iter().any(|r| r.parallel.binning != first.parallel.binning) {
            return Err(Error::invalid("binning", "dip runs use different bins"));
        }
    }
    runs.iter()
        .map(|run| {
            let acc = match handling {
                AccidentalHandling::None => Accidentals::None,
                AccidentalHandling::Wings(w) => Accidentals::from_wings(&run.parallel, &run.perpendicular, w)?,
            };
            let r = coincidence_ratio(&run.parallel, &run.perpendicular, window, acc)?;
            Ok(DipPoint {
                delta_t: run.delta_t,
                ratio: r.ratio,
                sigma: r.sigma,
            })
        })
        .collect()
}

/// Least-squares `data ≈ offset + scale·model`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleFit {
    pub scale: f64,
    pub offset: f64,
}

impl ScaleFit {
    pub fn eval(&self, model_value: f64) -> f64 {
        self.offset + self.scale * model_value
    }
}

/// Fits the scale factor of `model` to `(x, y)` points, with a constant
/// offset when `with_offset` is set and through the origin otherwise.
pub fn fit_scale<M: Fn(f64) -> f64>(model: M, points: &[(f64, f64)], with_offset: bool) -> Result<ScaleFit> {
    if points.len() < 2 {
        return Err(Error::InsufficientStatistics("fit needs at least two points".into()));
    }
    let m: Vec<f64> = points.iter().map(|&(x, _)| model(x)).collect();
    let y: Vec<f64> = points.iter().map(|&(_, y)| y).collect();
    let n = m.len() as f64;
    let scale_of_model = m.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if with_offset {
        let mean_m = m.iter().sum::<f64>() / n;
        let mean_y = y.iter().sum::<f64>() / n;
        let sxx: f64 = m.iter().map(|v| (v - mean_m).powi(2)).sum();
        let sxy: f64 = m.iter().zip(&y).map(|(a, b)| (a - mean_m) * (b - mean_y)).sum();
        if !(sxx > 1e-24 * scale_of_model * scale_of_model * n) {
            return Err(Error::invalid("model", "model is constant over the data; scale and offset are degenerate"));
        }
        let scale = sxy / sxx;
        Ok(ScaleFit {
            scale,
            offset: mean_y - scale * mean_m,
        })
    } else {
        let smm: f64 = m.iter().map(|v| v * v).sum();
        if !(smm > 0.0) {
            return Err(Error::invalid("model", "model vanishes at every data point"));
        }
        let smy: f64 = m.iter().zip(&y).map(|(a, b)| a * b).sum();
        Ok(ScaleFit {
            scale: smy / smm,
            offset: 0.0,
        })
    }
}
