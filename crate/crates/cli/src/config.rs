use std::path::{Path, PathBuf};

use pitchcal::estimation::{CellSpec, Subset};
use pitchcal::field_model::{FieldDims, FieldModel};
use pitchcal::pipeline::PipelineConfig;
use pitchcal::synth::{DegradationConfig, PoseSamplerConfig, ViewPreset};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Template {
    #[default]
    #[serde(rename = "105x68m")]
    Meters105x68,
    #[serde(rename = "115x74yd")]
    Yards115x74,
}

impl std::str::FromStr for Template {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "105x68m" => Ok(Template::Meters105x68),
            "115x74yd" => Ok(Template::Yards115x74),
            other => Err(format!("unknown template `{other}` (expected 105x68m or 115x74yd)")),
        }
    }
}

impl Template {
    pub fn dims(self) -> FieldDims {
        match self {
            Template::Meters105x68 => FieldDims::fifa_meters(),
            Template::Yards115x74 => FieldDims::template_yards(),
        }
    }
}

/// Synthetic batch settings for `synth` and `sweep-alpha`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSettings {
    pub count: usize,
    pub preset: ViewPreset,
    /// Overrides the preset ranges when present.
    pub sampler: Option<PoseSamplerConfig>,
    pub degradation: DegradationConfig,
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self { count: 100, preset: ViewPreset::Main, sampler: None, degradation: DegradationConfig::default() }
    }
}

impl SynthSettings {
    pub fn sampler(&self) -> PoseSamplerConfig {
        self.sampler.unwrap_or_else(|| PoseSamplerConfig::preset(self.preset))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    /// Ground-truth directory for `evaluate`.
    pub gt: Option<PathBuf>,
    /// Existing records for `refine`.
    pub records: Option<PathBuf>,
    pub template: Template,
    pub pipeline: PipelineConfig,
    pub gammas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub seed: u64,
    /// Worker threads, 0 for all cores.
    pub jobs: usize,
    pub synth: SynthSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: None,
            output: None,
            gt: None,
            records: None,
            template: Template::default(),
            pipeline: PipelineConfig::default(),
            gammas: vec![5.0, 10.0, 20.0],
            alphas: vec![0.3, 0.4, 0.5, 0.6, 0.7],
            seed: 0,
            jobs: 0,
            synth: SynthSettings::default(),
        }
    }
}

/// Flag values that override the config file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub records: Option<PathBuf>,
    pub alpha: Option<f64>,
    pub alphas: Option<Vec<f64>>,
    pub no_pnl: bool,
    pub subsets: Option<Vec<Subset>>,
    pub ransac_grid: Option<Vec<Option<f64>>>,
    pub gammas: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub template: Option<Template>,
    pub count: Option<usize>,
    pub preset: Option<ViewPreset>,
    pub sigma: Option<f64>,
    pub dropout: Option<f64>,
    pub outlier_rate: Option<f64>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(Self::default()) };
        let bytes = std::fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_slice(&bytes).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn apply(&mut self, o: Overrides) {
        macro_rules! set {
            ($field:expr, $value:expr) => {
                if let Some(v) = $value {
                    $field = v;
                }
            };
        }
        self.input = o.input.or(self.input.take());
        self.output = o.output.or(self.output.take());
        self.gt = o.gt.or(self.gt.take());
        self.records = o.records.or(self.records.take());
        set!(self.pipeline.refinement.alpha, o.alpha);
        set!(self.alphas, o.alphas);
        if o.no_pnl {
            self.pipeline.pnl = false;
        }
        if o.subsets.is_some() || o.ransac_grid.is_some() {
            let subsets = o.subsets.unwrap_or_else(|| {
                let mut s: Vec<Subset> = self.pipeline.vote.cells.iter().map(|c| c.subset).collect();
                s.dedup();
                s
            });
            let grid = o.ransac_grid.unwrap_or_else(|| {
                let mut g: Vec<Option<f64>> = vec![];
                for c in &self.pipeline.vote.cells {
                    if !g.contains(&c.threshold) {
                        g.push(c.threshold);
                    }
                }
                g
            });
            self.pipeline.vote.cells =
                subsets.iter().flat_map(|&subset| grid.iter().map(move |&threshold| CellSpec { subset, threshold })).collect();
        }
        set!(self.gammas, o.gammas);
        set!(self.seed, o.seed);
        set!(self.jobs, o.jobs);
        set!(self.template, o.template);
        set!(self.synth.count, o.count);
        set!(self.synth.preset, o.preset);
        if let Some(s) = o.sigma {
            self.synth.degradation.keypoint_sigma = s;
            self.synth.degradation.line_sigma = s;
        }
        set!(self.synth.degradation.dropout, o.dropout);
        set!(self.synth.degradation.outlier_rate, o.outlier_rate);
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if self.gammas.is_empty() || self.gammas.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
            return bad("gammas must be a non-empty list of positive values");
        }
        let unit = |a: f64| (0.0..=1.0).contains(&a);
        if !unit(self.pipeline.refinement.alpha) || self.alphas.iter().any(|a| !unit(*a)) {
            return bad("alpha must lie in [0, 1]");
        }
        if self.pipeline.vote.cells.is_empty() {
            return bad("empty voting grid");
        }
        if self.pipeline.vote.cells.iter().any(|c| c.threshold.is_some_and(|t| !(t > 0.0))) {
            return bad("RANSAC thresholds must be positive");
        }
        let paths = [&self.input, &self.output, &self.gt, &self.records];
        for (i, a) in paths.iter().enumerate() {
            for b in &paths[i + 1..] {
                if let (Some(a), Some(b)) = (a, b) {
                    if a == b {
                        return bad(&format!("path {} used twice", a.display()));
                    }
                }
            }
        }
        self.synth.degradation.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.synth.sampler().validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn model(&self) -> Result<FieldModel, CliError> {
        FieldModel::new(self.template.dims()).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn require_input(&self) -> Result<&Path, CliError> {
        self.input.as_deref().ok_or_else(|| CliError::Config("--input is required".into()))
    }

    pub fn require_output(&self) -> Result<&Path, CliError> {
        self.output.as_deref().ok_or_else(|| CliError::Config("--output is required".into()))
    }
}

/// Comma-separated flag value. Wrapped so that clap treats it as one
/// argument.
#[derive(Debug, Clone, PartialEq)]
pub struct List<T>(pub Vec<T>);

pub fn parse_list<T: std::str::FromStr>(s: &str) -> Result<List<T>, String>
where
    T::Err: std::fmt::Display,
{
    let v: Vec<T> = s
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<T>().map_err(|e| format!("`{t}`: {e}")))
        .collect::<Result<_, _>>()?;
    if v.is_empty() {
        return Err("empty list".into());
    }
    Ok(List(v))
}

pub fn parse_grid(s: &str) -> Result<List<Option<f64>>, String> {
    let v: Vec<Option<f64>> = s
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| match t {
            "none" => Ok(None),
            t => t.parse::<f64>().map(Some).map_err(|e| format!("`{t}`: {e}")),
        })
        .collect::<Result<_, _>>()?;
    if v.is_empty() {
        return Err("empty list".into());
    }
    Ok(List(v))
}

pub fn parse_preset(s: &str) -> Result<ViewPreset, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown preset `{s}` (main, offside, behind-goal, random)"))
}
