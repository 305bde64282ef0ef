//! Run configuration: one JSON document holding every hyperparameter and
//! path of a train/generate/validate workflow.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use scoregen::data::{self, CsvOptions, ReturnKind, ReturnsDataset};
use scoregen::dsde::{DsdeKind, DsdeSpec};
use scoregen::objective::ObjectiveConfig;
use scoregen::sampler::PathConfig;
use scoregen::stats::ValidationOptions;
use scoregen::trainer::TrainConfig;

pub const CONFIG_HELP: &str = "\
CONFIGURATION
  A run is described by one JSON object. Unknown keys anywhere are errors.
  Omitted keys take the defaults shown.

  input.path               data CSV (required for train and generate)
  input.format             \"prices\" (date,<tickers...> closing prices) or
                           \"returns\" (returns already computed)  [prices]
  input.return_kind        \"simple\" or \"log\", prices only  [simple]
  input.delimiter          single-character field separator  [,]
  input.window             {\"start\": s, \"length\": n}: rows s..s+n of the
                           returns; all rows when absent  [absent]

  dsde.kind                \"VP\", \"SubVP\" or \"VE\" (lower case accepted)  [VP]
  dsde.a                   a >= 0 for vp/sub_vp, a > 1 for ve  [0]
  dsde.b                   positive scale, a number shared by every asset or
                           one number per asset  [0.1]

  objective.lambda0        constant time weight lambda_0 >= 0  [1]
  objective.gh_order       Gauss-Hermite order D, 1..=64  [8]
  objective.simpson_subintervals
                           even number S of Simpson subintervals  [8]
  objective.residual_mode  \"consistent\" or \"paper_literal_ve\"  [consistent]

  train.epochs             passes over the data  [2000]
  train.batch_size         rows per Adam step, at most n  [32]
  train.learning_rate      Adam step size in (0, 1)  [0.001]
  train.adam_beta1         [0.9]
  train.adam_beta2         [0.999]
  train.adam_eps           [1e-8]
  train.seed               initialisation and shuffling seed  [0]
  train.shuffle            reshuffle rows every epoch  [true]
  train.hidden             hidden width h  [16]
  train.checkpoint_every   rewrite the checkpoint every k epochs, 0 = off  [100]
  train.frozen             blocks held fixed: \"w\", \"b\", \"c\", \"d_out\"  [[]]

  path.steps               time steps K  [256]
  path.scheme              forward encoding, \"euler_maruyama\" or
                           \"exact_transition\"  [euler_maruyama]
  path.seed                scenario seed  [0]

  m                        number of scenarios to generate  [1024]

  validation.permutations  permutations B for the CvM p-value, >= 99  [1000]
  validation.seed          permutation seed  [0]
  validation.bins          histogram bins  [50]
  validation.qq_levels     Q-Q probability levels  [99]
  validation.weights       portfolio weights; equal weights when absent

  output.checkpoint        trained parameters  [checkpoint.json]
  output.loss              loss history CSV  [loss.csv]
  output.scenarios         scenario CSV  [scenarios.csv]
  output.provenance        scenario provenance JSON  [scenarios.json]
  output.report            validation report JSON  [report.json]
  output.qq                Q-Q CSV  [qq.csv]
  output.histogram         histogram CSV  [histogram.csv]

  Relative paths are taken from the working directory. All paths must be
  distinct.";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputFormat {
    #[default]
    Prices,
    Returns,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReturnKindConfig {
    #[default]
    Simple,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Window {
    pub start: usize,
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub format: InputFormat,
    #[serde(default)]
    pub return_kind: ReturnKindConfig,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    #[serde(default)]
    pub window: Option<Window>,
}

fn default_delimiter() -> char {
    ','
}

impl Default for InputConfig {
    fn default() -> Self {
        Self {
            path: None,
            format: InputFormat::default(),
            return_kind: ReturnKindConfig::default(),
            delimiter: default_delimiter(),
            window: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scale {
    Shared(f64),
    PerAsset(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DsdeConfig {
    pub kind: DsdeKind,
    pub a: f64,
    pub b: Scale,
}

impl Default for DsdeConfig {
    fn default() -> Self {
        Self {
            kind: DsdeKind::Vp,
            a: 0.0,
            b: Scale::Shared(0.1),
        }
    }
}

impl DsdeConfig {
    pub fn build(&self, d: usize) -> scoregen::Result<DsdeSpec> {
        match &self.b {
            Scale::Shared(b) => DsdeSpec::uniform(self.kind, self.a, *b, d),
            Scale::PerAsset(b) => {
                if b.len() != d {
                    return Err(scoregen::Error::DimensionMismatch {
                        expected: d,
                        found: b.len(),
                    });
                }
                DsdeSpec::new(self.kind, self.a, b.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub checkpoint: PathBuf,
    pub loss: PathBuf,
    pub scenarios: PathBuf,
    pub provenance: PathBuf,
    pub report: PathBuf,
    pub qq: PathBuf,
    pub histogram: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            checkpoint: "checkpoint.json".into(),
            loss: "loss.csv".into(),
            scenarios: "scenarios.csv".into(),
            provenance: "scenarios.json".into(),
            report: "report.json".into(),
            qq: "qq.csv".into(),
            histogram: "histogram.csv".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub input: InputConfig,
    pub dsde: DsdeConfig,
    pub objective: ObjectiveConfig,
    pub train: TrainConfig,
    pub path: PathConfig,
    pub m: usize,
    pub validation: ValidationOptions,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: InputConfig::default(),
            dsde: DsdeConfig::default(),
            objective: ObjectiveConfig::default(),
            train: TrainConfig::default(),
            path: PathConfig::default(),
            m: 1024,
            validation: ValidationOptions::default(),
            output: OutputConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// Component checks that do not need the data.
    pub fn validate(&self) -> Result<(), String> {
        self.objective.validate().map_err(|e| format!("objective: {e}"))?;
        self.train.validate().map_err(|e| format!("train: {e}"))?;
        self.path.validate().map_err(|e| format!("path: {e}"))?;
        if !self.input.delimiter.is_ascii() {
            return Err("input.delimiter must be a single ASCII character".into());
        }
        if self.validation.permutations < 99 {
            return Err("validation.permutations must be at least 99".into());
        }
        if self.validation.bins == 0 || self.validation.qq_levels == 0 {
            return Err("validation.bins and validation.qq_levels must be positive".into());
        }
        let o = &self.output;
        let mut paths: Vec<&Path> = vec![
            &o.checkpoint,
            &o.loss,
            &o.scenarios,
            &o.provenance,
            &o.report,
            &o.qq,
            &o.histogram,
        ];
        if let Some(p) = &self.input.path {
            paths.push(p);
        }
        for (i, a) in paths.iter().enumerate() {
            if paths[..i].contains(a) {
                return Err(format!("path {} is used twice", a.display()));
            }
        }
        Ok(())
    }

    /// Training returns: the configured file, converted and windowed.
    pub fn load_returns(&self) -> scoregen::Result<ReturnsDataset> {
        let path = self
            .input
            .path
            .as_ref()
            .ok_or_else(|| scoregen::Error::InvalidArgument("input.path is not set".into()))?;
        let ds = match self.input.format {
            InputFormat::Returns => ReturnsDataset::load_csv(path)?,
            InputFormat::Prices => {
                let opts = CsvOptions {
                    delimiter: self.input.delimiter as u8,
                };
                let kind = match self.input.return_kind {
                    ReturnKindConfig::Simple => ReturnKind::Simple,
                    ReturnKindConfig::Log => ReturnKind::Log,
                };
                data::to_returns_with(&data::load_prices(path, opts)?, kind)
            }
        };
        match self.input.window {
            Some(w) => ds.select_window(w.start, w.length),
            None => Ok(ds),
        }
    }
}
