use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use hom_core::analysis::{
    analyze_stream, dip_curve, estimate_accidentals, simulate_histogram, visibility, AccidentalEstimate,
    AccidentalHandling, Accidentals, CoincidenceHistogram, DipRun, VisibilityResult,
};
use hom_core::interference::{coincidence_density, dip_ratio, dip_ratio_integrated, visibility_closed_form, SourcePair};
use hom_core::io::{config_hash, load_events, save_events, write_histogram, write_json};
use hom_core::montecarlo::{simulate, Execution, ExperimentConfig};
use serde::Serialize;

use crate::config::RunConfigFile;
use crate::{CliError, OracleArgs};

fn prepare_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Output {
        path: dir.to_path_buf(),
        source,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|source| CliError::Output {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, CliError> {
    Ok(csv::Writer::from_writer(create(path)?))
}

fn csv_failed(path: &Path) -> impl FnOnce(csv::Error) -> CliError + '_ {
    move |e| CliError::Output {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    }
}

fn json_out<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    write_json(path, value).map_err(CliError::output(path))
}

fn grid(lo: f64, hi: f64, step: f64, name: &str) -> Result<Vec<f64>, CliError> {
    if !(step > 0.0 && step.is_finite() && lo.is_finite() && hi.is_finite() && hi >= lo) {
        return Err(CliError::Config(format!("invalid {name} grid [{lo}, {hi}] step {step}")));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| lo + k as f64 * step).collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleSummary {
    pub config_hash: String,
    pub tau_s: f64,
    pub tau_f: f64,
    pub xi: f64,
    pub detuning: f64,
    pub visibility_closed_form: f64,
    pub density_rows: usize,
    pub dip_rows: usize,
}

/// Writes `oracle_density.csv` (`x_ns, g_perp, g_par`), `oracle_dip.csv`
/// (`delta_t_ns, dip_ratio, dip_ratio_closed_form, visibility`) and
/// `oracle.json`.
///
/// `dip_ratio` integrates the densities numerically for the requested `xi`
/// and detuning; the closed-form column is filled only for `xi = 1` at zero
/// detuning, where it applies.
pub fn cmd_oracle(args: &OracleArgs, out: &Path) -> Result<OracleSummary, CliError> {
    let pair = SourcePair::with_delay(args.tau_f, args.tau_s, 0.0, args.xi, args.detuning)?;
    let perp = pair.with_xi(0.0)?;
    let v_closed = visibility_closed_form(args.tau_s, args.tau_f)?;
    let xs = grid(-args.x_range, args.x_range, args.x_step, "x")?;
    let dts = grid(args.dt_min, args.dt_max, args.dt_step, "delta_t")?;
    prepare_dir(out)?;

    let hash = config_hash(&(
        "oracle",
        args.tau_s,
        args.tau_f,
        args.xi,
        args.detuning,
        [args.dt_min, args.dt_max, args.dt_step, args.x_range, args.x_step],
    ))?;

    let path = out.join("oracle_density.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["x_ns", "g_perp", "g_par"]).map_err(csv_failed(&path))?;
    for &x in &xs {
        w.serialize((x, coincidence_density(&perp, x), coincidence_density(&pair, x)))
            .map_err(csv_failed(&path))?;
    }
    w.flush().map_err(|source| CliError::Output { path: path.clone(), source })?;

    let closed_applies = args.xi == 1.0 && args.detuning == 0.0;
    let path = out.join("oracle_dip.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["delta_t_ns", "dip_ratio", "dip_ratio_closed_form", "visibility"])
        .map_err(csv_failed(&path))?;
    for &dt in &dts {
        let ratio = dip_ratio_integrated(&pair.delayed(dt));
        let closed = if closed_applies {
            Some(dip_ratio(dt, args.tau_s, args.tau_f)?)
        } else {
            None
        };
        w.serialize((dt, ratio, closed, 1.0 - ratio)).map_err(csv_failed(&path))?;
    }
    w.flush().map_err(|source| CliError::Output { path: path.clone(), source })?;

    let summary = OracleSummary {
        config_hash: hash,
        tau_s: args.tau_s,
        tau_f: args.tau_f,
        xi: args.xi,
        detuning: args.detuning,
        visibility_closed_form: v_closed,
        density_rows: xs.len(),
        dip_rows: dts.len(),
    };
    json_out(&out.join("oracle.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateSummary {
    pub events: PathBuf,
    pub sidecar: PathBuf,
    pub n_records: usize,
    pub config_hash: String,
}

/// Writes `events.csv` and `events.json` into `out`.
pub fn cmd_simulate(cfg: &RunConfigFile, seed: Option<u64>, out: &Path) -> Result<SimulateSummary, CliError> {
    let experiment = cfg.experiment(seed)?;
    prepare_dir(out)?;
    let records = simulate(&experiment)?;
    let events = out.join("events.csv");
    let sidecar = save_events(&events, &records, &experiment).map_err(CliError::output(&events))?;
    Ok(SimulateSummary {
        sidecar: hom_core::io::sidecar_path(&events),
        events,
        n_records: sidecar.n_records,
        config_hash: sidecar.config_hash,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AccidentalFloors {
    pub parallel: AccidentalEstimate,
    pub perpendicular: AccidentalEstimate,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub config_hash: String,
    pub parallel_config_hash: String,
    pub perpendicular_config_hash: String,
    pub n_triggers_parallel: u64,
    pub n_triggers_perpendicular: u64,
    pub raw: VisibilityResult,
    pub corrected: VisibilityResult,
    pub g_acc: AccidentalFloors,
}

fn load_histogram(
    path: &Path,
    settings: &hom_core::analysis::AnalysisSettings,
) -> Result<(CoincidenceHistogram, String), CliError> {
    let (records, sidecar) = load_events(path).map_err(CliError::input(path))?;
    let h = analyze_stream(&records, sidecar.timestamp_resolution, settings).map_err(CliError::input(path))?;
    Ok((h, sidecar.config_hash))
}

/// Histograms both event files and writes `histogram_parallel.csv`,
/// `histogram_perpendicular.csv` and `visibility.json` into `out`.
pub fn cmd_analyze(cfg: &RunConfigFile, par: &Path, perp: &Path, out: &Path) -> Result<AnalysisReport, CliError> {
    let settings = cfg.analysis()?;
    let (h_par, par_hash) = load_histogram(par, &settings)?;
    let (h_perp, perp_hash) = load_histogram(perp, &settings)?;
    prepare_dir(out)?;
    let hash = config_hash(&(&settings, cfg.t_c, cfg.t_c_corrected, &par_hash, &perp_hash))?;

    for (name, h) in [("histogram_parallel.csv", &h_par), ("histogram_perpendicular.csv", &h_perp)] {
        let path = out.join(name);
        let mut w = create(&path)?;
        write_histogram(&mut w, h, &hash).map_err(CliError::output(&path))?;
        w.flush().map_err(|source| CliError::Output { path, source })?;
    }

    let raw = visibility(&h_par, &h_perp, cfg.raw_window(), Accidentals::None)?;
    let floors = AccidentalFloors {
        parallel: estimate_accidentals(&h_par, settings.wing)?,
        perpendicular: estimate_accidentals(&h_perp, settings.wing)?,
    };
    let acc = Accidentals::PerHistogram {
        parallel: floors.parallel,
        perpendicular: floors.perpendicular,
    };
    let corrected = visibility(&h_par, &h_perp, cfg.corrected_window(), acc)?;
    let report = AnalysisReport {
        config_hash: hash,
        parallel_config_hash: par_hash,
        perpendicular_config_hash: perp_hash,
        n_triggers_parallel: h_par.n_triggers,
        n_triggers_perpendicular: h_perp.n_triggers,
        raw,
        corrected,
        g_acc: floors,
    };
    json_out(&out.join("visibility.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct DipRow {
    pub delta_t: f64,
    pub ratio: f64,
    pub sigma: f64,
    /// Full-range `P_||/P_⊥` of the oracle for the configured sources.
    pub model: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DipReport {
    pub config_hash: String,
    pub t_c: f64,
    pub accidentals_subtracted: bool,
    pub points: Vec<DipRow>,
}

/// Runs both polarizations at every delay and writes `dip.csv` and
/// `dip.json`. Delay `k` of the list uses seeds `seed + 2k` (parallel) and
/// `seed + 2k + 1` (orthogonal).
pub fn cmd_dip(cfg: &RunConfigFile, seed: Option<u64>, out: &Path) -> Result<DipReport, CliError> {
    if cfg.delta_t_list.is_empty() {
        return Err(CliError::Config("`delta_t_list` must list at least one delay".into()));
    }
    let base = cfg.experiment(seed)?;
    let settings = cfg.analysis()?;
    let mut runs = Vec::with_capacity(cfg.delta_t_list.len());
    let mut models = Vec::with_capacity(cfg.delta_t_list.len());
    for (k, &delta_t) in cfg.delta_t_list.iter().enumerate() {
        let at = |xi: f64, offset: u64| ExperimentConfig {
            delta_t,
            xi,
            seed: base.seed.wrapping_add(2 * k as u64 + offset),
            ..base.clone()
        };
        let (par, perp) = (at(base.xi, 0), at(0.0, 1));
        par.validate()?;
        models.push(dip_ratio_integrated(&par.source_pair()?));
        runs.push(DipRun {
            delta_t,
            parallel: simulate_histogram(&par, &settings, Execution::default())?,
            perpendicular: simulate_histogram(&perp, &settings, Execution::default())?,
        });
    }
    let handling = if cfg.dip_subtract_accidentals {
        AccidentalHandling::Wings(settings.wing)
    } else {
        AccidentalHandling::None
    };
    let points = dip_curve(&runs, cfg.dip_window(), handling)?;
    let resolved = RunConfigFile {
        seed: Some(base.seed),
        out_dir: None,
        ..cfg.clone()
    };
    let report = DipReport {
        config_hash: config_hash(&resolved)?,
        t_c: cfg.dip_t_c,
        accidentals_subtracted: cfg.dip_subtract_accidentals,
        points: points
            .iter()
            .zip(&models)
            .map(|(p, &model)| DipRow {
                delta_t: p.delta_t,
                ratio: p.ratio,
                sigma: p.sigma,
                model,
            })
            .collect(),
    };

    prepare_dir(out)?;
    let path = out.join("dip.csv");
    let mut w = create(&path)?;
    writeln!(w, "# config_hash={}", report.config_hash).map_err(|source| CliError::Output {
        path: path.clone(),
        source,
    })?;
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["delta_t_ns", "ratio", "sigma", "model"]).map_err(csv_failed(&path))?;
    for p in &report.points {
        w.serialize((p.delta_t, p.ratio, p.sigma, p.model)).map_err(csv_failed(&path))?;
    }
    w.flush().map_err(|source| CliError::Output { path: path.clone(), source })?;
    json_out(&out.join("dip.json"), &report)?;
    Ok(report)
}
