//! Mini-batch Adam training of the score network, loss history output and
//! JSON checkpoints.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{format_float, ReturnsDataset};
use crate::dsde::DsdeSpec;
use crate::error::{Error, Result};
use crate::objective::{DsmObjective, ObjectiveConfig};
use crate::rng::{self, Domain};
use crate::score_net::ScoreParams;

/// Parameter groups that can be held fixed during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamBlock {
    W,
    B,
    C,
    DOut,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub shuffle: bool,
    /// Hidden width `h` of the network.
    pub hidden: usize,
    /// Checkpoint period in epochs; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    pub frozen: Vec<ParamBlock>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            batch_size: 32,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            shuffle: true,
            hidden: 16,
            checkpoint_every: 100,
            frozen: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must lie in (0, 1), got {v}")))
            }
        };
        unit("learning_rate", self.learning_rate)?;
        unit("adam_beta1", self.adam_beta1)?;
        unit("adam_beta2", self.adam_beta2)?;
        if !(self.adam_eps > 0.0 && self.adam_eps.is_finite()) {
            return Err(Error::invalid(format!("adam_eps must be positive, got {}", self.adam_eps)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if self.hidden == 0 {
            return Err(Error::invalid("hidden must be at least 1"));
        }
        Ok(())
    }
}

/// Adam moment estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first: ScoreParams,
    pub second: ScoreParams,
    pub step: u64,
}

impl AdamState {
    pub fn new(like: &ScoreParams) -> Self {
        let zero = ScoreParams::zeros(like.dim(), like.hidden());
        Self {
            first: zero.clone(),
            second: zero,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(theta: &mut ScoreParams, grad: &ScoreParams, state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    if !theta.same_shape(grad) || !theta.same_shape(&state.first) || !theta.same_shape(&state.second) {
        return Err(Error::invalid("Adam update needs parameters, gradient and state of one shape"));
    }
    state.step += 1;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for (((th, g), m), v) in theta
        .values_mut()
        .zip(grad.values())
        .zip(state.first.values_mut())
        .zip(state.second.values_mut())
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        *th -= cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + cfg.adam_eps);
    }
    Ok(())
}

fn zero_frozen(grad: &mut ScoreParams, frozen: &[ParamBlock]) {
    for block in frozen {
        match block {
            ParamBlock::W => grad.w_mut().fill(0.0),
            ParamBlock::B => grad.b_mut().fill(0.0),
            ParamBlock::C => grad.c_mut().fill(0.0),
            ParamBlock::DOut => grad.d_out_mut().fill(0.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub theta: ScoreParams,
    /// Full-data objective at initialisation and after every epoch.
    pub loss_history: Vec<f64>,
    pub state: AdamState,
}

/// Initialise from `cfg.seed` and train.
pub fn train(ds: &ReturnsDataset, spec: &DsdeSpec, obj_cfg: &ObjectiveConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let theta0 = ScoreParams::init(ds.dim(), cfg.hidden, cfg.seed)?;
    train_from(theta0, ds, spec, obj_cfg, cfg, |_, _, _| Ok(()))
}

/// Train from `theta0`; `on_epoch(epoch, theta, loss)` runs after each epoch.
pub fn train_from(
    theta0: ScoreParams,
    ds: &ReturnsDataset,
    spec: &DsdeSpec,
    obj_cfg: &ObjectiveConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &ScoreParams, f64) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.batch_size > ds.len() {
        return Err(Error::invalid(format!(
            "batch_size {} exceeds the {} training rows",
            cfg.batch_size,
            ds.len()
        )));
    }
    let obj = DsmObjective::new(spec, obj_cfg)?;
    let mut theta = theta0;
    let mut state = AdamState::new(&theta);
    let mut history = Vec::with_capacity(cfg.epochs + 1);
    let initial = checked(obj.value(&theta, ds, None)?, 0)?;
    history.push(initial);

    let mut order: Vec<usize> = (0..ds.len()).collect();
    for epoch in 1..=cfg.epochs {
        if cfg.shuffle {
            order.sort_unstable();
            order.shuffle(&mut rng::stream(cfg.seed, Domain::Shuffle, epoch as u64));
        }
        for batch in order.chunks(cfg.batch_size) {
            let (_, mut grad) = obj.value_and_gradient(&theta, ds, Some(batch))?;
            zero_frozen(&mut grad, &cfg.frozen);
            adam_step(&mut theta, &grad, &mut state, cfg)?;
        }
        let loss = checked(obj.value(&theta, ds, None)?, epoch)?;
        history.push(loss);
        on_epoch(epoch, &theta, loss)?;
    }
    Ok(TrainOutcome {
        theta,
        loss_history: history,
        state,
    })
}

fn checked(loss: f64, epoch: usize) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFinite(format!("training loss at epoch {epoch}")))
    }
}

/// `epoch,loss` CSV.
pub fn write_loss_csv<W: Write>(writer: W, history: &[f64]) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["epoch", "loss"])?;
    for (epoch, loss) in history.iter().enumerate() {
        out.write_record([epoch.to_string(), format_float(*loss)])?;
    }
    out.flush().map_err(|e| Error::Io {
        path: "<loss csv>".into(),
        source: e,
    })?;
    Ok(())
}

/// Trained parameters together with everything needed to reuse them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub epoch: usize,
    pub loss: f64,
    pub dsde: DsdeSpec,
    pub objective: ObjectiveConfig,
    pub train: TrainConfig,
    pub params: ScoreParams,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n").map_err(io)?;
        w.flush().map_err(io)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let ck: Checkpoint = serde_json::from_reader(std::io::BufReader::new(file))?;
        if ck.params.dim() != ck.dsde.dim() {
            return Err(Error::DimensionMismatch {
                expected: ck.dsde.dim(),
                found: ck.params.dim(),
            });
        }
        Ok(ck)
    }
}
