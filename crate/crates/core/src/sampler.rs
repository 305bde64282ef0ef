//! Forward (encoding) and reverse-time (decoding) SDE paths, and scenario
//! generation by encode/decode of resampled training rows.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{format_float, ReturnsDataset};
use crate::dsde::DsdeSpec;
use crate::error::{ensure_dim, Error, Result};
use crate::rng::{self, Domain};
use crate::score_net::{ScoreParams, Softplus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForwardScheme {
    #[default]
    EulerMaruyama,
    ExactTransition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathConfig {
    /// Number of time steps `K`; the step is `1 / K`.
    pub steps: usize,
    pub scheme: ForwardScheme,
    pub seed: u64,
}

impl Default for PathConfig {
    fn default() -> Self {
        Self {
            steps: 256,
            scheme: ForwardScheme::EulerMaruyama,
            seed: 0,
        }
    }
}

impl PathConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 2 {
            return Err(Error::invalid(format!("path needs at least 2 steps, got {}", self.steps)));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.steps as f64
    }

    /// `t_j = j / K`.
    pub fn time(&self, j: usize) -> f64 {
        if j == self.steps {
            1.0
        } else {
            j as f64 / self.steps as f64
        }
    }
}

/// Source of standard normal increments.
pub trait NoiseSource {
    fn fill(&mut self, out: &mut [f64]);
}

pub struct GaussianNoise<R>(pub R);

impl<R: Rng> NoiseSource for GaussianNoise<R> {
    fn fill(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.0.sample(StandardNormal);
        }
    }
}

/// Deterministic paths: every increment is zero.
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn fill(&mut self, out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// A score `s(t, x) ≈ grad log p_t(x)`.
pub trait ScoreModel: Sync {
    fn dim(&self) -> usize;
    fn score_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()>;
}

/// Trained network: `K(x) / C(t)`.
pub struct NetworkScore<'a> {
    params: &'a ScoreParams,
    spec: &'a DsdeSpec,
}

impl<'a> NetworkScore<'a> {
    pub fn new(params: &'a ScoreParams, spec: &'a DsdeSpec) -> Result<Self> {
        ensure_dim(spec.dim(), params.dim())?;
        Ok(Self { params, spec })
    }
}

impl ScoreModel for NetworkScore<'_> {
    fn dim(&self) -> usize {
        self.params.dim()
    }

    fn score_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        let var = self.spec.marginal(t)?.var;
        if var.iter().any(|&v| v <= 0.0) {
            return Err(Error::Singular(format!("zero marginal variance at t={t}")));
        }
        let mut hidden = vec![0.0; self.params.hidden()];
        self.params.k_forward_into(&Softplus, x, &mut hidden, out);
        for (o, v) in out.iter_mut().zip(&var) {
            *o /= v;
        }
        Ok(())
    }
}

/// Exact marginal score when the data are `N(mean, diag(var))`.
pub struct GaussianScore<'a> {
    mean: Vec<f64>,
    var: Vec<f64>,
    spec: &'a DsdeSpec,
}

impl<'a> GaussianScore<'a> {
    pub fn new(mean: Vec<f64>, var: Vec<f64>, spec: &'a DsdeSpec) -> Result<Self> {
        ensure_dim(spec.dim(), mean.len())?;
        ensure_dim(spec.dim(), var.len())?;
        Ok(Self { mean, var, spec })
    }
}

impl ScoreModel for GaussianScore<'_> {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn score_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        let m = self.spec.marginal(t)?;
        for k in 0..out.len() {
            let s = m.mean_scale[k];
            let v = s * s * self.var[k] + m.var[k];
            out[k] = -(x[k] - s * self.mean[k]) / v;
        }
        Ok(())
    }
}

/// `s ≡ 0`.
pub struct ZeroScore(pub usize);

impl ScoreModel for ZeroScore {
    fn dim(&self) -> usize {
        self.0
    }

    fn score_into(&self, _t: f64, _x: &[f64], out: &mut [f64]) -> Result<()> {
        out.fill(0.0);
        Ok(())
    }
}

/// Euler–Maruyama from `t = 0` for `n_steps` steps of size `1 / cfg.steps`.
pub fn euler_forward(
    spec: &DsdeSpec,
    x_init: &[f64],
    cfg: &PathConfig,
    n_steps: usize,
    noise: &mut dyn NoiseSource,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    ensure_dim(spec.dim(), x_init.len())?;
    if n_steps > cfg.steps {
        return Err(Error::invalid(format!("{n_steps} steps exceed the grid of {}", cfg.steps)));
    }
    let dt = cfg.dt();
    let sq = dt.sqrt();
    let mut x = x_init.to_vec();
    let mut xi = vec![0.0; x.len()];
    for j in 0..n_steps {
        let co = spec.coefficients(cfg.time(j))?;
        noise.fill(&mut xi);
        for k in 0..x.len() {
            x[k] += co.drift_rate[k] * x[k] * dt + co.sigma[k] * sq * xi[k];
        }
    }
    Ok(x)
}

/// Encode `x_init` to `t = 1`.
pub fn forward_path(spec: &DsdeSpec, x_init: &[f64], cfg: &PathConfig, noise: &mut dyn NoiseSource) -> Result<Vec<f64>> {
    match cfg.scheme {
        ForwardScheme::EulerMaruyama => euler_forward(spec, x_init, cfg, cfg.steps, noise),
        ForwardScheme::ExactTransition => {
            let m = spec.transition_moments(0.0, 1.0, x_init)?;
            let mut xi = vec![0.0; x_init.len()];
            noise.fill(&mut xi);
            Ok(m.mean.iter().zip(&m.var).zip(&xi).map(|((mu, v), z)| mu + v.sqrt() * z).collect())
        }
    }
}

/// Decode `x_term` from `t = 1` back to `t = 0` with the reverse-time SDE.
///
/// Step `j` uses coefficients and score at `t_{j-1}`, except the last step,
/// which uses `t_1` because `C(0) = 0` makes the score undefined.
pub fn reverse_path(
    spec: &DsdeSpec,
    score: &dyn ScoreModel,
    x_term: &[f64],
    cfg: &PathConfig,
    noise: &mut dyn NoiseSource,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    ensure_dim(spec.dim(), x_term.len())?;
    ensure_dim(spec.dim(), score.dim())?;
    let dt = cfg.dt();
    let sq = dt.sqrt();
    let mut x = x_term.to_vec();
    let mut s = vec![0.0; x.len()];
    let mut xi = vec![0.0; x.len()];
    for j in (1..=cfg.steps).rev() {
        let t = cfg.time((j - 1).max(1));
        let co = spec.coefficients(t)?;
        score.score_into(t, &x, &mut s)?;
        noise.fill(&mut xi);
        for k in 0..x.len() {
            let g2 = co.sigma[k] * co.sigma[k];
            x[k] += -(co.drift_rate[k] * x[k] - g2 * s[k]) * dt + co.sigma[k] * sq * xi[k];
        }
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("decoded scenario".into()));
    }
    Ok(x)
}

/// Generated scenarios with their provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSet {
    pub samples: Vec<Vec<f64>>,
    pub source_indices: Vec<usize>,
    pub seed: u64,
    pub checkpoint: Option<String>,
}

impl ScenarioSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// CSV with one column per ticker.
    pub fn write_csv<W: Write>(&self, writer: W, tickers: &[String]) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(tickers)?;
        for row in &self.samples {
            ensure_dim(tickers.len(), row.len())?;
            out.write_record(row.iter().map(|v| format_float(*v)))?;
        }
        out.flush().map_err(|e| Error::Io {
            path: "<scenario csv>".into(),
            source: e,
        })?;
        Ok(())
    }

    /// As a dataset, for validation.
    pub fn to_dataset(&self, tickers: Vec<String>) -> Result<ReturnsDataset> {
        let dates = (0..self.len()).map(|k| k.to_string()).collect();
        ReturnsDataset::new(tickers, dates, self.samples.clone())
    }
}

/// Scenario `k`: resample a training row, encode it, decode it with fresh
/// noise. Each phase draws from its own stream keyed by `k`.
pub fn generate_one(
    ds: &ReturnsDataset,
    spec: &DsdeSpec,
    score: &dyn ScoreModel,
    cfg: &PathConfig,
    k: usize,
) -> Result<(usize, Vec<f64>)> {
    let i = rng::stream(cfg.seed, Domain::ScenarioIndex, k as u64).random_range(0..ds.len());
    let mut fwd = GaussianNoise(rng::stream(cfg.seed, Domain::Forward, k as u64));
    let x1 = forward_path(spec, ds.row(i), cfg, &mut fwd)?;
    let mut rev = GaussianNoise(rng::stream(cfg.seed, Domain::Reverse, k as u64));
    Ok((i, reverse_path(spec, score, &x1, cfg, &mut rev)?))
}

pub fn generate_scenarios(
    ds: &ReturnsDataset,
    spec: &DsdeSpec,
    score: &dyn ScoreModel,
    m: usize,
    cfg: &PathConfig,
) -> Result<ScenarioSet> {
    cfg.validate()?;
    ensure_dim(spec.dim(), ds.dim())?;
    if ds.is_empty() {
        return Err(Error::invalid("cannot resample an empty dataset"));
    }
    let rows: Vec<(usize, Vec<f64>)> = (0..m)
        .into_par_iter()
        .map(|k| generate_one(ds, spec, score, cfg, k))
        .collect::<Result<_>>()?;
    let (source_indices, samples) = rows.into_iter().unzip();
    Ok(ScenarioSet {
        samples,
        source_indices,
        seed: cfg.seed,
        checkpoint: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsde::DsdeKind;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vp(d: usize) -> DsdeSpec {
        DsdeSpec::uniform(DsdeKind::Vp, 0.0, 0.1, d).unwrap()
    }

    #[test]
    fn zero_noise_forward_follows_the_mean() {
        let spec = vp(1);
        let cfg = PathConfig::default();
        let tau = spec.tau(1.0 - cfg.dt()).unwrap()[0];
        let x = euler_forward(&spec, &[1.0], &cfg, cfg.steps - 1, &mut ZeroNoise).unwrap()[0];
        // Left-endpoint rates under-count tau by about (b/2)(pi^2/6 - 1)
        // because beta blows up at t = 1; the gap does not shrink with dt.
        let exact = (-0.5 * tau).exp();
        let gap = (x / exact).ln();
        assert!(gap > 0.0 && gap < 0.05 * (std::f64::consts::PI.powi(2) / 6.0 - 1.0) * 1.2, "{x} vs {exact}");
        // the last step runs at beta(1 - dt) = b / dt and shrinks by 1 - b / 2
        let terminal = forward_path(&spec, &[1.0], &cfg, &mut ZeroNoise).unwrap()[0];
        assert_relative_eq!(terminal, x * 0.95, max_relative = 1e-12);
        assert_eq!(forward_path(&spec, &[0.0], &cfg, &mut ZeroNoise).unwrap(), [0.0]);
    }

    #[test]
    fn zero_score_reverse_inverts_the_drift() {
        let spec = vp(2);
        let cfg = PathConfig::default();
        let x0 = [0.7, -1.2];
        let x1 = forward_path(&spec, &x0, &cfg, &mut ZeroNoise).unwrap();
        let back = reverse_path(&spec, &ZeroScore(2), &x1, &cfg, &mut ZeroNoise).unwrap();
        for (a, b) in back.iter().zip(&x0) {
            assert!((a - b).abs() < 10.0 * cfg.dt() * b.abs(), "{a} vs {b}");
        }
    }

    #[test]
    fn exact_transition_is_standard_normal_for_vp() {
        let spec = vp(1);
        let cfg = PathConfig {
            scheme: ForwardScheme::ExactTransition,
            ..Default::default()
        };
        let mut noise = GaussianNoise(ChaCha8Rng::seed_from_u64(1));
        let draws: Vec<f64> = (0..4000)
            .map(|_| forward_path(&spec, &[3.0], &cfg, &mut noise).unwrap()[0])
            .collect();
        let mean = draws.iter().sum::<f64>() / 4000.0;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 3999.0;
        assert!(mean.abs() < 0.07 && (var - 1.0).abs() < 0.1, "{mean} {var}");
    }

    #[test]
    fn gaussian_score_matches_definition() {
        let spec = vp(2);
        let g = GaussianScore::new(vec![0.5, -0.2], vec![0.3, 2.0], &spec).unwrap();
        let mut out = [0.0; 2];
        g.score_into(0.5, &[0.1, 0.4], &mut out).unwrap();
        let m = spec.marginal_moments(0.5, &[0.5, -0.2]).unwrap();
        let s = (-0.05 * 2f64.ln()).exp();
        for k in 0..2 {
            let v = s * s * [0.3, 2.0][k] + m.var[k];
            assert_relative_eq!(out[k], -([0.1, 0.4][k] - m.mean[k]) / v, max_relative = 1e-12);
        }
    }

    #[test]
    fn network_score_divides_by_variance() {
        let spec = vp(2);
        let th = ScoreParams::init(2, 3, 0).unwrap();
        let net = NetworkScore::new(&th, &spec).unwrap();
        let mut out = [0.0; 2];
        net.score_into(0.5, &[0.1, 0.2], &mut out).unwrap();
        assert_eq!(out.to_vec(), th.score_eval(&spec, 0.5, &[0.1, 0.2]).unwrap());
        assert!(net.score_into(0.0, &[0.1, 0.2], &mut out).is_err());
    }

    #[test]
    fn scenarios_are_reproducible_per_index() {
        let spec = vp(2);
        let ds = ReturnsDataset::from_rows(vec![vec![0.1, 0.2], vec![-0.3, 0.0], vec![0.5, 0.5]]).unwrap();
        let th = ScoreParams::init(2, 3, 0).unwrap();
        let net = NetworkScore::new(&th, &spec).unwrap();
        let cfg = PathConfig {
            steps: 32,
            seed: 5,
            ..Default::default()
        };
        let a = generate_scenarios(&ds, &spec, &net, 6, &cfg).unwrap();
        let b = generate_scenarios(&ds, &spec, &net, 6, &cfg).unwrap();
        assert_eq!(a, b);
        let (i, row) = generate_one(&ds, &spec, &net, &cfg, 4).unwrap();
        assert_eq!((i, &row), (a.source_indices[4], &a.samples[4]));
        assert!(generate_scenarios(&ds, &spec, &net, 0, &cfg).unwrap().is_empty());
        let mut buf = Vec::new();
        a.write_csv(&mut buf, ds.tickers()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 7);
        assert!(text.starts_with("A1,A2\n"));
    }
}
