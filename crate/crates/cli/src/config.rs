//! Flat TOML run configuration shared by all subcommands.

use std::path::{Path, PathBuf};

use hom_core::analysis::{AnalysisSettings, CoincidenceWindow, WingRegion};
use hom_core::montecarlo::ExperimentConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Every key is optional except `n_triggers` (simulate, dip) and `seed`
/// (simulate, dip, unless `--seed` is given). Units: ns, MHz, ps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfigFile {
    pub n_triggers: Option<u64>,
    pub seed: Option<u64>,
    pub trigger_period: f64,
    pub eta_f: f64,
    pub eta_s: f64,
    pub tau_f: f64,
    pub tau_s: f64,
    pub delta_t: f64,
    pub excitation_jitter_sigma: f64,
    pub detuning: f64,
    pub xi: f64,
    pub bg_rate_a: f64,
    pub bg_rate_b: f64,
    pub window_length: f64,
    pub pre_trigger_window: f64,
    pub timestamp_resolution: f64,
    pub emission_delay: f64,
    pub offset_a: f64,
    pub offset_b: f64,

    pub valid_window: f64,
    pub bin_width: f64,
    pub histogram_range: f64,
    /// Half-width of the raw-visibility window.
    pub t_c: f64,
    /// Half-width of the accidental-corrected visibility window.
    pub t_c_corrected: f64,
    pub wing_lo: f64,
    pub wing_hi: f64,

    pub delta_t_list: Vec<f64>,
    pub dip_t_c: f64,
    pub dip_subtract_accidentals: bool,

    /// Output directory, overridden by `--out`.
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfigFile {
    fn default() -> Self {
        let e = ExperimentConfig::default();
        let a = AnalysisSettings::default();
        Self {
            n_triggers: None,
            seed: None,
            trigger_period: e.trigger_period,
            eta_f: e.eta_f,
            eta_s: e.eta_s,
            tau_f: e.tau_f,
            tau_s: e.tau_s,
            delta_t: e.delta_t,
            excitation_jitter_sigma: e.excitation_jitter_sigma,
            detuning: e.detuning,
            xi: e.xi,
            bg_rate_a: e.bg_rate_a,
            bg_rate_b: e.bg_rate_b,
            window_length: e.window_length,
            pre_trigger_window: e.pre_trigger_window,
            timestamp_resolution: e.timestamp_resolution,
            emission_delay: e.emission_delay,
            offset_a: e.offset_a,
            offset_b: e.offset_b,
            valid_window: a.valid_window,
            bin_width: a.bin_width,
            histogram_range: a.histogram_range,
            t_c: 25.0,
            t_c_corrected: 75.0,
            wing_lo: a.wing.lo,
            wing_hi: a.wing.hi,
            delta_t_list: Vec::new(),
            dip_t_c: hom_core::analysis::DIP_WINDOW.half_width,
            dip_subtract_accidentals: false,
            out_dir: None,
        }
    }
}

impl RunConfigFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Seed after applying a command-line override.
    pub fn resolved_seed(&self, cli_seed: Option<u64>) -> Result<u64, CliError> {
        cli_seed
            .or(self.seed)
            .ok_or_else(|| CliError::Config("missing key `seed` (or pass --seed)".into()))
    }

    pub fn experiment(&self, cli_seed: Option<u64>) -> Result<ExperimentConfig, CliError> {
        let n_triggers = self
            .n_triggers
            .ok_or_else(|| CliError::Config("missing key `n_triggers`".into()))?;
        let config = ExperimentConfig {
            n_triggers,
            seed: self.resolved_seed(cli_seed)?,
            trigger_period: self.trigger_period,
            eta_f: self.eta_f,
            eta_s: self.eta_s,
            tau_f: self.tau_f,
            tau_s: self.tau_s,
            delta_t: self.delta_t,
            excitation_jitter_sigma: self.excitation_jitter_sigma,
            detuning: self.detuning,
            xi: self.xi,
            bg_rate_a: self.bg_rate_a,
            bg_rate_b: self.bg_rate_b,
            window_length: self.window_length,
            pre_trigger_window: self.pre_trigger_window,
            timestamp_resolution: self.timestamp_resolution,
            emission_delay: self.emission_delay,
            offset_a: self.offset_a,
            offset_b: self.offset_b,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn analysis(&self) -> Result<AnalysisSettings, CliError> {
        let settings = AnalysisSettings {
            valid_window: self.valid_window,
            bin_width: self.bin_width,
            histogram_range: self.histogram_range,
            wing: WingRegion {
                lo: self.wing_lo,
                hi: self.wing_hi,
            },
            pre_trigger_window: self.pre_trigger_window,
            offset_a: self.offset_a,
            offset_b: self.offset_b,
        };
        settings.validate()?;
        Ok(settings)
    }

    pub fn raw_window(&self) -> CoincidenceWindow {
        CoincidenceWindow::symmetric(self.t_c)
    }

    pub fn corrected_window(&self) -> CoincidenceWindow {
        CoincidenceWindow::symmetric(self.t_c_corrected)
    }

    pub fn dip_window(&self) -> CoincidenceWindow {
        CoincidenceWindow::symmetric(self.dip_t_c)
    }

    /// `--out` if given, else `out_dir`, else the working directory.
    pub fn output_dir(&self, cli_out: Option<&Path>) -> PathBuf {
        cli_out
            .map(Path::to_path_buf)
            .or_else(|| self.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("."))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file() {
        let cfg = RunConfigFile::parse("n_triggers = 10\nseed = 3\n").unwrap();
        let e = cfg.experiment(None).unwrap();
        assert_eq!(e.n_triggers, 10);
        assert_eq!(e.seed, 3);
        assert_eq!(e.tau_s, 26.18);
        assert_eq!(cfg.experiment(Some(9)).unwrap().seed, 9);
    }

    #[test]
    fn rejects_unknown_and_missing_keys() {
        assert!(matches!(RunConfigFile::parse("n_trigger = 10"), Err(CliError::Config(_))));
        let cfg = RunConfigFile::parse("seed = 1").unwrap();
        assert!(matches!(cfg.experiment(None), Err(CliError::Config(m)) if m.contains("n_triggers")));
        let cfg = RunConfigFile::parse("n_triggers = 5").unwrap();
        assert!(cfg.experiment(None).is_err());
        assert!(cfg.experiment(Some(1)).is_ok());
    }

    #[test]
    fn invalid_values_name_the_key() {
        let cfg = RunConfigFile::parse("n_triggers = 5\nseed = 1\neta_f = 2.0").unwrap();
        let err = cfg.experiment(None).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("eta_f"), "{err}");
    }
}
