//! Experiment description read from a TOML file.
//!
//! Every section is optional and falls back to the library defaults. Unknown
//! keys are rejected so that a misspelt tunable cannot silently run with its
//! default.

use std::path::Path;

use noisegain::dsp::butterworth2_lowpass;
use noisegain::rbf::DEFAULT_CUTOFF_DIVISOR;
use noisegain::{
    NoiseSpec, NonlinearityKind, NonlinearityModel, PwlConfig, PwlPipeline, RbfConfig, RbfPipeline,
    RbfPipelineConfig,
};
use serde::Deserialize;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub sample_rate_hz: f64,
    /// Samples per run.
    pub duration: usize,
    pub stimulus: StimulusSection,
    pub nonlinearity: NonlinearitySection,
    pub noise: NoiseSection,
    pub pipeline: PipelineSection,
    pub rbf: RbfSection,
    pub pwl: PwlConfigSection,
    pub offline: OfflineSection,
    pub sweep: SweepSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 1.55e6,
            duration: 1_000_000,
            stimulus: StimulusSection::default(),
            nonlinearity: NonlinearitySection::default(),
            noise: NoiseSection::default(),
            pipeline: PipelineSection::default(),
            rbf: RbfSection::default(),
            pwl: PwlConfigSection::default(),
            offline: OfflineSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StimulusKind {
    Sine,
    Triangle,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StimulusSection {
    pub kind: StimulusKind,
    pub freq_hz: f64,
    pub amplitude: f64,
}

impl Default for StimulusSection {
    fn default() -> Self {
        Self {
            kind: StimulusKind::Sine,
            freq_hz: 1000.0,
            amplitude: 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonlinearityName {
    Identity,
    Tanh,
    OddPolynomial,
    HardClip,
    Table,
}

/// Only the parameters of the selected kind are read.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NonlinearitySection {
    pub kind: NonlinearityName,
    pub drive: f64,
    pub coefficients: Vec<f64>,
    pub threshold: f64,
    /// `[[x, y], ...]`
    pub breakpoints: Vec<[f64; 2]>,
}

impl Default for NonlinearitySection {
    fn default() -> Self {
        Self {
            kind: NonlinearityName::Tanh,
            drive: 2.0,
            coefficients: vec![1.0],
            threshold: 1.0,
            breakpoints: vec![[-1.0, -1.0], [1.0, 1.0]],
        }
    }
}

impl NonlinearitySection {
    pub fn kind(&self) -> NonlinearityKind {
        match self.kind {
            NonlinearityName::Identity => NonlinearityKind::Identity,
            NonlinearityName::Tanh => NonlinearityKind::ScaledTanh { drive: self.drive },
            NonlinearityName::OddPolynomial => NonlinearityKind::OddPolynomial {
                coefficients: self.coefficients.clone(),
            },
            NonlinearityName::HardClip => NonlinearityKind::HardClip {
                threshold: self.threshold,
            },
            NonlinearityName::Table => NonlinearityKind::MonotoneTable {
                breakpoints: self.breakpoints.iter().map(|p| (p[0], p[1])).collect(),
            },
        }
    }

    pub fn model(&self) -> noisegain::Result<NonlinearityModel> {
        NonlinearityModel::new(self.kind())
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    pub sigma_i: f64,
    pub seed: u64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            sigma_i: 0.01,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineKind {
    Rbf,
    Pwl,
    Offline,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineSection {
    pub kind: PipelineKind,
}

impl Default for PipelineSection {
    fn default() -> Self {
        Self {
            kind: PipelineKind::Rbf,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RbfSection {
    /// Absent means `fs / 64`.
    pub cutoff_hz: Option<f64>,
    pub block_size: usize,
    pub block_interval: usize,
    pub n_pieces: usize,
    pub alpha: f64,
    pub reintegrate_period: usize,
    pub y_min: f64,
    pub y_max: f64,
    pub epsilon_floor: f64,
    pub sigma_floor: f64,
    pub sigma_ref_alpha: f64,
}

impl Default for RbfSection {
    fn default() -> Self {
        let p = RbfPipelineConfig::default();
        Self {
            cutoff_hz: p.cutoff_hz,
            block_size: p.block_size,
            block_interval: p.block_interval,
            n_pieces: p.model.n_pieces,
            alpha: p.model.alpha,
            reintegrate_period: p.model.reintegrate_period,
            y_min: p.model.y_min,
            y_max: p.model.y_max,
            epsilon_floor: p.model.epsilon_floor,
            sigma_floor: p.model.sigma_floor,
            sigma_ref_alpha: p.model.sigma_ref_alpha,
        }
    }
}

impl RbfSection {
    pub fn pipeline_config(&self) -> RbfPipelineConfig {
        RbfPipelineConfig {
            cutoff_hz: self.cutoff_hz,
            block_size: self.block_size,
            block_interval: self.block_interval,
            model: RbfConfig {
                y_min: self.y_min,
                y_max: self.y_max,
                n_pieces: self.n_pieces,
                alpha: self.alpha,
                reintegrate_period: self.reintegrate_period,
                epsilon_floor: self.epsilon_floor,
                sigma_floor: self.sigma_floor,
                sigma_ref_alpha: self.sigma_ref_alpha,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PwlConfigSection {
    pub n_ranges: usize,
    pub input_bits: u32,
    pub output_bits: u32,
    pub ref_shift: u32,
    pub deadband_shift: u32,
    pub boxcar_log2: u32,
    pub block_log2: u32,
    pub block_interval: usize,
    pub w_max_factor: u32,
    pub max_redraws: u32,
    /// Seeds the span reallocation generator, not the noise.
    pub seed: u64,
    pub telemetry_period: u64,
}

impl Default for PwlConfigSection {
    fn default() -> Self {
        let c = PwlConfig::default();
        Self {
            n_ranges: c.n_ranges,
            input_bits: c.input_bits,
            output_bits: c.output_bits,
            ref_shift: c.ref_shift,
            deadband_shift: c.deadband_shift,
            boxcar_log2: c.boxcar_log2,
            block_log2: c.block_log2,
            block_interval: c.block_interval,
            w_max_factor: c.w_max_factor,
            max_redraws: c.max_redraws,
            seed: c.seed,
            telemetry_period: c.telemetry_period,
        }
    }
}

impl PwlConfigSection {
    pub fn config(&self) -> PwlConfig {
        PwlConfig {
            n_ranges: self.n_ranges,
            input_bits: self.input_bits,
            output_bits: self.output_bits,
            ref_shift: self.ref_shift,
            deadband_shift: self.deadband_shift,
            boxcar_log2: self.boxcar_log2,
            block_log2: self.block_log2,
            block_interval: self.block_interval,
            w_max_factor: self.w_max_factor,
            max_redraws: self.max_redraws,
            seed: self.seed,
            telemetry_period: self.telemetry_period,
        }
    }
}

/// Batch identification settings, shared by `identify` and the offline
/// compensator.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OfflineSection {
    pub cutoff_hz: Option<f64>,
    pub block_size: usize,
    pub block_interval: usize,
    pub n_bins: usize,
    pub min_count: usize,
    pub y_min: f64,
    pub y_max: f64,
    /// Leading samples skipped while the low-pass settles.
    pub settle: usize,
    /// Scale the table with `noise.sigma_i` instead of pinning the endpoints.
    pub known_sigma: bool,
    /// Resolution of the histogram used for DNL and INL.
    pub dnl_bits: u32,
}

impl Default for OfflineSection {
    fn default() -> Self {
        Self {
            cutoff_hz: None,
            block_size: 16,
            block_interval: 16,
            n_bins: 256,
            min_count: noisegain::ident::DEFAULT_MIN_COUNT,
            y_min: -1.0,
            y_max: 1.0,
            settle: 2000,
            known_sigma: false,
            dnl_bits: 8,
        }
    }
}

impl OfflineSection {
    pub fn cutoff(&self, fs: f64) -> f64 {
        self.cutoff_hz.unwrap_or(fs / DEFAULT_CUTOFF_DIVISOR)
    }
}

/// Sweep axes. An absent axis holds the single value from the rest of the
/// config; an empty list is an error.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub drives: Option<Vec<f64>>,
    pub freqs_hz: Option<Vec<f64>>,
    pub block_sizes: Option<Vec<usize>>,
    /// Trailing samples fed to the THD measurement.
    pub analysis_samples: usize,
    pub harmonics: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            drives: None,
            freqs_hz: None,
            block_sizes: None,
            analysis_samples: 1 << 18,
            harmonics: noisegain::metrics::DEFAULT_HARMONICS,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::invalid(e.to_string().trim_end().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        toml::from_str(&text).map_err(|e| {
            CliError::invalid(format!("{}: {}", path.display(), e.to_string().trim_end()))
        })
    }

    /// Checks every parameter and reports all failures at once.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let fs = self.sample_rate_hz;
        let mut check = |ok: bool, msg: String| {
            if !ok {
                errs.push(msg);
            }
        };
        check(
            fs > 0.0 && fs.is_finite(),
            format!("sample_rate_hz: must be positive, got {fs}"),
        );
        check(
            self.duration > 0,
            "duration: must be at least one sample".into(),
        );

        let s = &self.stimulus;
        check(
            s.freq_hz > 0.0 && s.freq_hz < fs / 2.0,
            format!("stimulus.freq_hz: must lie in (0, fs/2), got {}", s.freq_hz),
        );
        check(
            s.amplitude > 0.0 && s.amplitude.is_finite(),
            format!("stimulus.amplitude: must be positive, got {}", s.amplitude),
        );

        if let Err(e) = self.nonlinearity.model() {
            errs.push(format!("nonlinearity: {e}"));
        }
        if let Err(e) = NoiseSpec::new(self.noise.sigma_i, self.noise.seed) {
            errs.push(format!("noise: {e}"));
        }
        if fs > 0.0 && fs.is_finite() {
            if let Err(e) = RbfPipeline::new(&self.rbf.pipeline_config(), fs) {
                errs.push(format!("rbf: {e}"));
            }
            if let Err(e) = butterworth2_lowpass(self.offline.cutoff(fs), fs) {
                errs.push(format!("offline: {e}"));
            }
        }
        if let Err(e) = PwlPipeline::new(self.pwl.config()) {
            errs.push(format!("pwl: {e}"));
        }

        let o = &self.offline;
        let mut check = |ok: bool, msg: &str| {
            if !ok {
                errs.push(msg.to_string());
            }
        };
        check(o.block_size >= 2, "offline.block_size: must be at least 2");
        check(
            o.block_interval >= o.block_size,
            "offline.block_interval: must be at least offline.block_size",
        );
        check(o.n_bins >= 2, "offline.n_bins: must be at least 2");
        check(
            o.y_max > o.y_min,
            "offline.y_max: must exceed offline.y_min",
        );
        check(
            (2..=16).contains(&o.dnl_bits),
            "offline.dnl_bits: must lie in 2..=16",
        );

        let w = &self.sweep;
        check(
            w.analysis_samples > 0,
            "sweep.analysis_samples: must be positive",
        );
        check(w.harmonics >= 2, "sweep.harmonics: must be at least 2");
        if let Some(d) = &w.drives {
            check(!d.is_empty(), "sweep.drives: must not be empty");
            check(
                self.nonlinearity.kind == NonlinearityName::Tanh,
                "sweep.drives: needs nonlinearity.kind = \"tanh\"",
            );
            check(
                d.iter().all(|&g| g > 0.0 && g.is_finite()),
                "sweep.drives: every drive must be positive",
            );
        }
        if let Some(f) = &w.freqs_hz {
            check(!f.is_empty(), "sweep.freqs_hz: must not be empty");
            check(
                f.iter().all(|&v| v > 0.0 && v < fs / 2.0),
                "sweep.freqs_hz: every frequency must lie in (0, fs/2)",
            );
        }
        if let Some(b) = &w.block_sizes {
            check(!b.is_empty(), "sweep.block_sizes: must not be empty");
            if self.pipeline.kind == PipelineKind::Pwl {
                check(
                    b.iter().all(|v| v.is_power_of_two()),
                    "sweep.block_sizes: pwl block sizes must be powers of two",
                );
            }
        }

        if errs.is_empty() {
            Ok(())
        } else {
            Err(CliError::Validation(errs))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(
            ExperimentConfig::from_toml("").unwrap(),
            ExperimentConfig::default()
        );
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn defaults_match_the_library() {
        let c = ExperimentConfig::default();
        assert_eq!(c.rbf.pipeline_config(), RbfPipelineConfig::default());
        assert_eq!(c.pwl.config(), PwlConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::from_toml("[rbf]\nalpah = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("alpah"), "{err}");
        assert!(ExperimentConfig::from_toml("durration = 5\n").is_err());
    }

    #[test]
    fn errors_are_aggregated() {
        let c = ExperimentConfig::from_toml(
            "duration = 0\n[rbf]\nalpha = 2.0\n[noise]\nsigma_i = -1.0\n[sweep]\nblock_sizes = []\n",
        )
        .unwrap();
        match c.validate().unwrap_err() {
            CliError::Validation(e) => {
                assert_eq!(e.len(), 4, "{e:?}");
                assert!(e[0].starts_with("duration"));
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn nonlinearity_kinds_parse() {
        let c = ExperimentConfig::from_toml(
            "[nonlinearity]\nkind = \"table\"\nbreakpoints = [[-1.0, -1.0], [0.0, 0.0], [0.5, 0.7], [1.0, 1.0]]\n",
        )
        .unwrap();
        c.validate().unwrap();
        let m = c.nonlinearity.model().unwrap();
        assert!((m.eval(0.5) - 0.7).abs() < 1e-12);
    }
}
