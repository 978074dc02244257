//! Run configuration: a TOML file with one section per pipeline stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use trajstate::calibration::FitOptions;
use trajstate::correction::CvSplit;
use trajstate::synthetic::SpeedWave;
use trajstate::{
    BinGridSpec, ColumnMap, DensityTruth, ExperimentPlan, Frame, LaneFilter, Models, PtmParams,
    Quantity, Scheme, SyntheticMode, SyntheticSpec, VehicleConfig, VelocityChoice,
};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    /// `vehicle_id,time_s,position_ft` as written by `generate` and `ingest`.
    #[default]
    Corpus,
    /// Raw trajectory table read through the `[ingest]` column map.
    Ngsim,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Trajectory file. Commands other than `ingest` fall back to a synthetic
    /// corpus built from `[synthetic]` when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    pub input_format: InputFormat,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            input: None,
            input_format: InputFormat::Corpus,
            output_dir: PathBuf::from("out"),
        }
    }
}

/// Synthetic corpus settings; the seed and model constants come from the
/// top level and `[ptm]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSection {
    pub mode: SyntheticMode,
    pub vehicle_count: usize,
    pub duration: f64,
    pub native_period: f64,
    pub road_length: f64,
    pub lanes: u32,
    pub cruise_speed: [f64; 2],
    pub oscillation_amplitude: f64,
    pub oscillation_period: f64,
    pub period_jitter: f64,
    pub base_speed: f64,
    pub waves: Vec<SpeedWave>,
}

impl From<SyntheticSpec> for SyntheticSection {
    fn from(s: SyntheticSpec) -> Self {
        Self {
            mode: s.mode,
            vehicle_count: s.vehicle_count,
            duration: s.duration,
            native_period: s.native_period,
            road_length: s.road_length,
            lanes: s.lanes,
            cruise_speed: s.cruise_speed,
            oscillation_amplitude: s.oscillation_amplitude,
            oscillation_period: s.oscillation_period,
            period_jitter: s.period_jitter,
            base_speed: s.base_speed,
            waves: s.waves,
        }
    }
}

impl Default for SyntheticSection {
    fn default() -> Self {
        SyntheticSpec::dense().into()
    }
}

impl SyntheticSection {
    pub fn oscillatory() -> Self {
        SyntheticSpec::oscillatory().into()
    }

    pub fn spec(&self, seed: u64, params: PtmParams) -> SyntheticSpec {
        SyntheticSpec {
            mode: self.mode,
            vehicle_count: self.vehicle_count,
            duration: self.duration,
            native_period: self.native_period,
            road_length: self.road_length,
            lanes: self.lanes,
            seed,
            cruise_speed: self.cruise_speed,
            oscillation_amplitude: self.oscillation_amplitude,
            oscillation_period: self.oscillation_period,
            period_jitter: self.period_jitter,
            params,
            base_speed: self.base_speed,
            waves: self.waves.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateSection {
    pub frame: Frame,
    pub scheme: Scheme,
    pub velocity_choice: VelocityChoice,
    pub sampling_factor: usize,
    pub penetration_rate: f64,
    pub offset: usize,
}

impl Default for EstimateSection {
    fn default() -> Self {
        Self {
            frame: Frame::Lagrangian,
            scheme: Scheme::StronglyStable,
            velocity_choice: VelocityChoice::Backward,
            sampling_factor: 1,
            penetration_rate: 1.0,
            offset: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub frames: Vec<Frame>,
    pub sampling_factors: Vec<usize>,
    pub penetration_rates: Vec<f64>,
    pub scheme: Scheme,
    pub velocity_choice: VelocityChoice,
    pub quantities: Vec<Quantity>,
    pub offset: usize,
    pub density_truth: DensityTruth,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        let p = ExperimentPlan::default();
        Self {
            frames: vec![Frame::Lagrangian, Frame::Eulerian],
            sampling_factors: p.sampling_factors,
            penetration_rates: p.penetration_rates,
            scheme: p.scheme,
            velocity_choice: p.velocity_choice,
            quantities: p.quantities,
            offset: p.offset,
            density_truth: p.density_truth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrateSection {
    pub lanes: LaneFilter,
    pub fit: FitOptions,
    /// Densities sampled along the exported envelopes.
    pub envelope_samples: usize,
}

impl Default for CalibrateSection {
    fn default() -> Self {
        Self {
            lanes: LaneFilter::default(),
            fit: FitOptions::default(),
            envelope_samples: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorrectSection {
    pub k: usize,
    pub split: CvSplit,
    pub sampling_factor: usize,
    pub penetration_rate: f64,
    pub quantities: Vec<Quantity>,
}

impl Default for CorrectSection {
    fn default() -> Self {
        Self {
            k: 10,
            split: CvSplit::Inverted,
            sampling_factor: 30,
            penetration_rate: 0.1,
            quantities: vec![Quantity::HcRate, Quantity::FcRate],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub ptm: PtmParams,
    pub grid: BinGridSpec,
    pub vehicle: VehicleConfig,
    pub synthetic: SyntheticSection,
    pub ingest: ColumnMap,
    pub estimate: EstimateSection,
    pub experiment: ExperimentSection,
    pub calibrate: CalibrateSection,
    pub correct: CorrectSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 2015,
            paths: Paths::default(),
            ptm: PtmParams::default(),
            grid: BinGridSpec::default(),
            vehicle: VehicleConfig::default(),
            synthetic: SyntheticSection::default(),
            ingest: ColumnMap::default(),
            estimate: EstimateSection::default(),
            experiment: ExperimentSection::default(),
            calibrate: CalibrateSection::default(),
            correct: CorrectSection::default(),
        }
    }
}

impl RunConfig {
    /// Parses TOML text. Errors carry the dotted path of the offending key.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = toml::Deserializer::parse(text).map_err(|e| CliError::Config {
            key: String::new(),
            message: e.to_string(),
        })?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            CliError::Config {
                key: if key == "." { String::new() } else { key },
                message: e.into_inner().to_string(),
            }
        })
    }

    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(input) = &cfg.paths.input {
            if input.is_relative() {
                cfg.paths.input = Some(base.join(input));
            }
        }
        if cfg.paths.output_dir.is_relative() {
            cfg.paths.output_dir = base.join(&cfg.paths.output_dir);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    /// Checks value ranges, naming the section at fault.
    pub fn validate(&self) -> Result<(), CliError> {
        let at = |key: &str| {
            let key = key.to_string();
            move |e: trajstate::Error| CliError::Config {
                key: key.clone(),
                message: e.to_string(),
            }
        };
        self.ptm.validate().map_err(at("ptm"))?;
        self.vehicle.validate().map_err(at("vehicle"))?;
        self.synthetic_spec().validate().map_err(at("synthetic"))?;
        self.plan().validate().map_err(at("experiment"))?;
        let bad = |key: &str, message: &str| {
            Err(CliError::Config {
                key: key.into(),
                message: message.into(),
            })
        };
        let e = &self.estimate;
        if e.sampling_factor == 0 || e.offset >= e.sampling_factor {
            return bad(
                "estimate.sampling_factor",
                "must be at least 1 and above estimate.offset",
            );
        }
        if !(e.penetration_rate > 0.0 && e.penetration_rate <= 1.0) {
            return bad("estimate.penetration_rate", "must be in (0, 1]");
        }
        if self.experiment.frames.is_empty() {
            return bad("experiment.frames", "must list at least one frame");
        }
        let c = &self.correct;
        if c.k < 2 {
            return bad("correct.k", "must be at least 2");
        }
        if c.sampling_factor == 0 {
            return bad("correct.sampling_factor", "must be at least 1");
        }
        if !(c.penetration_rate > 0.0 && c.penetration_rate <= 1.0) {
            return bad("correct.penetration_rate", "must be in (0, 1]");
        }
        if let Some(q) = c
            .quantities
            .iter()
            .find(|q| !matches!(q, Quantity::HcRate | Quantity::FcRate))
        {
            return bad(
                "correct.quantities",
                &format!("`{}` is not a segment rate", q.as_str()),
            );
        }
        if self.calibrate.envelope_samples == 0 {
            return bad("calibrate.envelope_samples", "must be at least 1");
        }
        if let Some(input) = &self.paths.input {
            if !input.is_file() {
                return bad(
                    "paths.input",
                    &format!("`{}` is not a readable file", input.display()),
                );
            }
        }
        Ok(())
    }

    pub fn models(&self) -> Models {
        Models {
            params: self.ptm,
            vehicle: self.vehicle,
        }
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        self.synthetic.spec(self.seed, self.ptm)
    }

    pub fn plan(&self) -> ExperimentPlan {
        let e = &self.experiment;
        ExperimentPlan {
            sampling_factors: e.sampling_factors.clone(),
            penetration_rates: e.penetration_rates.clone(),
            scheme: e.scheme,
            velocity_choice: e.velocity_choice,
            seed: self.seed,
            grid: self.grid,
            quantities: e.quantities.clone(),
            offset: e.offset,
            density_truth: e.density_truth,
        }
    }
}
