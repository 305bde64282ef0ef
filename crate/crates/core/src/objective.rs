//! Quadrature evaluation of the denoising score-matching objective, its
//! exact gradient, and a Monte Carlo estimator of the same integrand.
//!
//! For a data point `x_i` and time `t`, the integrand is
//! `E[ |K(X) + r_i(t)|^2 / 2 ]` with `X ~ N(mu(t, x_i), C(t))`. Expanding the
//! square leaves three kinds of terms: a constant in `X`, single-activation
//! expectations `I1` and pairwise expectations `I2`, each reduced to Gauss–
//! Hermite sums by [`crate::quadrature`].

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ReturnsDataset;
use crate::dsde::{DsdeKind, DsdeSpec};
use crate::error::{ensure_dim, Error, Result};
use crate::quadrature::{pair_terms, pair_value, GaussHermite, PairGeometry, QuadRule, SimpsonGrid};
use crate::rng::{self, Domain};
use crate::score_net::{Activation, ScoreParams, Softplus};

/// What the residual `r_i(t)` is for the VE family, whose mean never moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualMode {
    /// `x_i - mu(t, x_i)`, which is zero for VE.
    #[default]
    Consistent,
    /// `x_i` for VE, as in the expanded VE objective.
    PaperLiteralVe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveConfig {
    /// Constant time weight `lambda_0`.
    pub lambda0: f64,
    pub gh_order: usize,
    pub simpson_subintervals: usize,
    pub residual_mode: ResidualMode,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            lambda0: 1.0,
            gh_order: 8,
            simpson_subintervals: 8,
            residual_mode: ResidualMode::Consistent,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda0 >= 0.0 && self.lambda0.is_finite()) {
            return Err(Error::invalid(format!("lambda0 must be finite and >= 0, got {}", self.lambda0)));
        }
        GaussHermite::new(self.gh_order)?;
        SimpsonGrid::new(self.simpson_subintervals)?;
        Ok(())
    }
}

fn residual_factors(spec: &DsdeSpec, t: f64, mode: ResidualMode) -> Result<Vec<f64>> {
    Ok(match spec.kind() {
        DsdeKind::Vp | DsdeKind::SubVp => spec.tau(t)?.iter().map(|tau| -(-0.5 * tau).exp_m1()).collect(),
        DsdeKind::Ve => {
            let f = match mode {
                ResidualMode::Consistent => 0.0,
                ResidualMode::PaperLiteralVe => 1.0,
            };
            vec![f; spec.dim()]
        }
    })
}

/// `r_i(t) = x_i - mu(t, x_i)`, or `x_i` for VE under
/// [`ResidualMode::PaperLiteralVe`].
pub fn residual(spec: &DsdeSpec, t: f64, x_i: &[f64], mode: ResidualMode) -> Result<Vec<f64>> {
    ensure_dim(spec.dim(), x_i.len())?;
    let f = residual_factors(spec, t, mode)?;
    Ok(x_i.iter().zip(&f).map(|(x, f)| x * f).collect())
}

#[derive(Debug, Clone)]
struct TimeNode {
    /// Simpson weight times `lambda_0`.
    weight: f64,
    mean_scale: Vec<f64>,
    var: Vec<f64>,
    resid: Vec<f64>,
}

/// Objective bound to a diffusion and a quadrature configuration.
#[derive(Debug, Clone)]
pub struct DsmObjective {
    spec: DsdeSpec,
    cfg: ObjectiveConfig,
    rule: QuadRule,
    nodes: Vec<TimeNode>,
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
}

/// θ-dependent quantities shared by every data point.
struct Prepared {
    /// `sigma[s][j] = |w_j|_C(t_s)`.
    sigma: Vec<Vec<f64>>,
    /// `geom[s][pair(j, k)]` for `j < k`.
    geom: Vec<Vec<PairGeometry>>,
    /// `G = c^T c`, row-major `h×h`.
    gram: Vec<f64>,
}

#[derive(Clone)]
struct Accum {
    value: f64,
    g_w: Vec<f64>,
    g_b: Vec<f64>,
    g_c: Vec<f64>,
    g_d: Vec<f64>,
    /// dL/dP_j per time node, `P_j = sigma_j^2`.
    g_p: Vec<Vec<f64>>,
    /// dL/drho_jk per time node, pair-indexed.
    g_rho: Vec<Vec<f64>>,
}

impl Accum {
    fn new(d: usize, h: usize, nodes: usize, grad: bool) -> Self {
        if !grad {
            return Self {
                value: 0.0,
                g_w: Vec::new(),
                g_b: Vec::new(),
                g_c: Vec::new(),
                g_d: Vec::new(),
                g_p: Vec::new(),
                g_rho: Vec::new(),
            };
        }
        let pairs = h * h.saturating_sub(1) / 2;
        Self {
            value: 0.0,
            g_w: vec![0.0; h * d],
            g_b: vec![0.0; h],
            g_c: vec![0.0; d * h],
            g_d: vec![0.0; d],
            g_p: vec![vec![0.0; h]; nodes],
            g_rho: vec![vec![0.0; pairs]; nodes],
        }
    }

    fn add(&mut self, other: &Accum) {
        self.value += other.value;
        let add = |a: &mut [f64], b: &[f64]| a.iter_mut().zip(b).for_each(|(a, b)| *a += b);
        add(&mut self.g_w, &other.g_w);
        add(&mut self.g_b, &other.g_b);
        add(&mut self.g_c, &other.g_c);
        add(&mut self.g_d, &other.g_d);
        for (a, b) in self.g_p.iter_mut().zip(&other.g_p) {
            add(a, b);
        }
        for (a, b) in self.g_rho.iter_mut().zip(&other.g_rho) {
            add(a, b);
        }
    }
}

/// Per-point scratch buffers.
struct Scratch {
    mu: Vec<f64>,
    e: Vec<f64>,
    m: Vec<f64>,
    act: Vec<f64>,
    dact: Vec<f64>,
    i1: Vec<f64>,
    a_coef: Vec<f64>,
    i2: Vec<f64>,
    gm: Vec<f64>,
}

/// Data points handled by one task; partial sums are combined in index
/// order, so results do not depend on the thread count.
const CHUNK: usize = 8;

impl DsmObjective {
    pub fn new(spec: &DsdeSpec, cfg: &ObjectiveConfig) -> Result<Self> {
        cfg.validate()?;
        let rule = QuadRule::new(cfg.gh_order, cfg.simpson_subintervals)?;
        let mut nodes = Vec::with_capacity(rule.simpson.nodes().len());
        for (&t, &w) in rule.simpson.nodes().iter().zip(rule.simpson.weights()) {
            let marg = spec.marginal(t)?;
            nodes.push(TimeNode {
                weight: w * cfg.lambda0,
                mean_scale: marg.mean_scale,
                var: marg.var,
                resid: residual_factors(spec, t, cfg.residual_mode)?,
            });
        }
        Ok(Self {
            spec: spec.clone(),
            cfg: cfg.clone(),
            rule,
            nodes,
        })
    }

    pub fn spec(&self) -> &DsdeSpec {
        &self.spec
    }

    pub fn config(&self) -> &ObjectiveConfig {
        &self.cfg
    }

    pub fn rule(&self) -> &QuadRule {
        &self.rule
    }

    fn check(&self, theta: &ScoreParams, ds: &ReturnsDataset, batch: Option<&[usize]>) -> Result<Vec<usize>> {
        ensure_dim(self.spec.dim(), theta.dim())?;
        ensure_dim(self.spec.dim(), ds.dim())?;
        let idx: Vec<usize> = match batch {
            Some(b) => {
                if let Some(&bad) = b.iter().find(|&&i| i >= ds.len()) {
                    return Err(Error::invalid(format!("batch index {bad} out of range for {} rows", ds.len())));
                }
                b.to_vec()
            }
            None => (0..ds.len()).collect(),
        };
        if idx.is_empty() {
            return Err(Error::invalid("objective needs at least one data point"));
        }
        Ok(idx)
    }

    fn prepare(&self, theta: &ScoreParams) -> Prepared {
        let (d, h) = (theta.dim(), theta.hidden());
        let mut gram = vec![0.0; h * h];
        for j in 0..h {
            for k in 0..h {
                gram[j * h + k] = (0..d).map(|l| theta.c_at(l, j) * theta.c_at(l, k)).sum();
            }
        }
        let mut sigma = Vec::with_capacity(self.nodes.len());
        let mut geom = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let p: Vec<f64> = (0..h)
                .map(|j| theta.w_row(j).iter().zip(&node.var).map(|(w, v)| w * w * v).sum())
                .collect();
            let mut g = Vec::with_capacity(h * h.saturating_sub(1) / 2);
            for j in 0..h {
                for k in j + 1..h {
                    let rho: f64 = theta
                        .w_row(j)
                        .iter()
                        .zip(theta.w_row(k))
                        .zip(&node.var)
                        .map(|((a, b), v)| a * b * v)
                        .sum();
                    g.push(PairGeometry::new(p[j], rho, p[k]));
                }
            }
            sigma.push(p.iter().map(|p| p.sqrt()).collect());
            geom.push(g);
        }
        Prepared { sigma, geom, gram }
    }

    fn point<A: Activation>(
        &self,
        act: &A,
        theta: &ScoreParams,
        prep: &Prepared,
        x: &[f64],
        scale: f64,
        acc: &mut Accum,
        sc: &mut Scratch,
        grad: bool,
    ) {
        let (d, h) = (theta.dim(), theta.hidden());
        let gh = &self.rule.gh;
        let nq = gh.order();
        let wts = gh.weights();
        let y = gh.scaled_nodes();
        let c = theta.c();
        let gram = &prep.gram;

        for (s, node) in self.nodes.iter().enumerate() {
            let omega = node.weight * scale;
            if omega == 0.0 {
                continue;
            }
            for l in 0..d {
                sc.mu[l] = x[l] * node.mean_scale[l];
                sc.e[l] = x[l] * node.resid[l] + theta.d_out()[l];
            }
            let sigma = &prep.sigma[s];

            let mut value = 0.5 * sc.e.iter().map(|e| e * e).sum::<f64>();
            for j in 0..h {
                let mj = theta.w_row(j).iter().zip(&sc.mu).map(|(w, m)| w * m).sum::<f64>() + theta.b()[j];
                sc.m[j] = mj;
                let row = &mut sc.act[j * nq..(j + 1) * nq];
                let drow = &mut sc.dact[j * nq..(j + 1) * nq];
                let (mut i1, mut i2) = (0.0, 0.0);
                let (mut di1_m, mut di1_s, mut di2_m, mut di2_s) = (0.0, 0.0, 0.0, 0.0);
                for p in 0..nq {
                    let (v, dv) = if grad {
                        act.value_and_derivative(mj + sigma[j] * y[p])
                    } else {
                        (act.value(mj + sigma[j] * y[p]), 0.0)
                    };
                    row[p] = v;
                    drow[p] = dv;
                    i1 += wts[p] * v;
                    i2 += wts[p] * v * v;
                    if grad {
                        di1_m += wts[p] * dv;
                        di1_s += wts[p] * dv * y[p];
                        di2_m += 2.0 * wts[p] * v * dv;
                        di2_s += 2.0 * wts[p] * v * dv * y[p];
                    }
                }
                sc.i1[j] = i1;
                sc.i2[j * h + j] = i2;
                let aj: f64 = (0..d).map(|l| c[l * h + j] * sc.e[l]).sum();
                sc.a_coef[j] = aj;
                let gjj = gram[j * h + j];
                value += aj * i1 + 0.5 * gjj * i2;
                if grad {
                    sc.gm[j] = omega * (aj * di1_m + 0.5 * gjj * di2_m);
                    if sigma[j] > 0.0 {
                        let gs = omega * (aj * di1_s + 0.5 * gjj * di2_s);
                        acc.g_p[s][j] += gs / (2.0 * sigma[j]);
                    }
                }
            }

            let mut pair = 0;
            for j in 0..h {
                let first = &sc.act[j * nq..(j + 1) * nq];
                let first_d = &sc.dact[j * nq..(j + 1) * nq];
                for k in j + 1..h {
                    let geom = &prep.geom[s][pair];
                    let gjk = gram[j * h + k];
                    let v = if grad {
                        let t = pair_terms(gh, act, geom, first, first_d, sc.m[k]);
                        let g = omega * gjk;
                        sc.gm[j] += g * t.d_m1;
                        sc.gm[k] += g * t.d_m2;
                        let pj = sigma[j] * sigma[j];
                        let (dp, drho, dq) = geom.chain(t.d_sigma1, t.d_along, t.d_across, pj);
                        acc.g_p[s][j] += g * dp;
                        acc.g_p[s][k] += g * dq;
                        acc.g_rho[s][pair] += g * drho;
                        t.value
                    } else {
                        pair_value(gh, act, geom, first, sc.m[k])
                    };
                    sc.i2[j * h + k] = v;
                    sc.i2[k * h + j] = v;
                    value += gjk * v;
                    pair += 1;
                }
            }
            acc.value += omega * value;

            if grad {
                for l in 0..d {
                    let ci1: f64 = (0..h).map(|j| c[l * h + j] * sc.i1[j]).sum();
                    acc.g_d[l] += omega * (sc.e[l] + ci1);
                    for j in 0..h {
                        let ci2: f64 = (0..h).map(|b| c[l * h + b] * sc.i2[j * h + b]).sum();
                        acc.g_c[l * h + j] += omega * (sc.e[l] * sc.i1[j] + ci2);
                    }
                }
                for j in 0..h {
                    let gm = sc.gm[j];
                    acc.g_b[j] += gm;
                    for (gw, mu) in acc.g_w[j * d..(j + 1) * d].iter_mut().zip(&sc.mu) {
                        *gw += gm * mu;
                    }
                }
            }
        }
    }

    fn evaluate(&self, theta: &ScoreParams, ds: &ReturnsDataset, batch: Option<&[usize]>, grad: bool) -> Result<Accum> {
        let idx = self.check(theta, ds, batch)?;
        let (d, h) = (theta.dim(), theta.hidden());
        let prep = self.prepare(theta);
        let scale = 1.0 / idx.len() as f64;
        let nq = self.rule.gh.order();
        let nodes = self.nodes.len();
        let act = Softplus;

        let partials: Vec<Accum> = idx
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut acc = Accum::new(d, h, nodes, grad);
                let mut sc = Scratch {
                    mu: vec![0.0; d],
                    e: vec![0.0; d],
                    m: vec![0.0; h],
                    act: vec![0.0; h * nq],
                    dact: vec![0.0; h * nq],
                    i1: vec![0.0; h],
                    a_coef: vec![0.0; h],
                    i2: vec![0.0; h * h],
                    gm: vec![0.0; h],
                };
                for &i in chunk {
                    self.point(&act, theta, &prep, ds.row(i), scale, &mut acc, &mut sc, grad);
                }
                acc
            })
            .collect();
        let mut total = Accum::new(d, h, nodes, grad);
        for p in &partials {
            total.add(p);
        }

        if grad {
            // Chain the variance-side partials through |w_j|_C and <w_j, w_k>_C.
            let w = theta.w();
            for (s, node) in self.nodes.iter().enumerate() {
                for j in 0..h {
                    let gp = total.g_p[s][j];
                    if gp != 0.0 {
                        for l in 0..d {
                            total.g_w[j * d + l] += gp * 2.0 * node.var[l] * w[j * d + l];
                        }
                    }
                }
                let mut pair = 0;
                for j in 0..h {
                    for k in j + 1..h {
                        let gr = total.g_rho[s][pair];
                        if gr != 0.0 {
                            for l in 0..d {
                                total.g_w[j * d + l] += gr * node.var[l] * w[k * d + l];
                                total.g_w[k * d + l] += gr * node.var[l] * w[j * d + l];
                            }
                        }
                        pair += 1;
                    }
                }
            }
        }
        Ok(total)
    }

    /// Objective over `batch` (all rows when `None`).
    pub fn value(&self, theta: &ScoreParams, ds: &ReturnsDataset, batch: Option<&[usize]>) -> Result<f64> {
        Ok(self.evaluate(theta, ds, batch, false)?.value)
    }

    /// Objective and its gradient with respect to every parameter.
    pub fn value_and_gradient(
        &self,
        theta: &ScoreParams,
        ds: &ReturnsDataset,
        batch: Option<&[usize]>,
    ) -> Result<(f64, ScoreParams)> {
        let acc = self.evaluate(theta, ds, batch, true)?;
        let grad = ScoreParams::from_parts(theta.dim(), theta.hidden(), acc.g_w, acc.g_b, acc.g_c, acc.g_d)?;
        Ok((acc.value, grad))
    }

    /// Monte Carlo estimate of [`Self::value`] over all rows with
    /// `samples` draws per (data point, time node) pair.
    pub fn mc_estimate(&self, theta: &ScoreParams, ds: &ReturnsDataset, samples: usize, seed: u64) -> Result<McEstimate> {
        if samples < 100 {
            return Err(Error::invalid(format!("Monte Carlo needs at least 100 samples, got {samples}")));
        }
        let idx = self.check(theta, ds, None)?;
        let (d, h) = (theta.dim(), theta.hidden());
        let n = idx.len() as f64;
        let nodes = self.nodes.len();
        let parts: Vec<(f64, f64)> = idx
            .par_iter()
            .map(|&i| {
                let x = ds.row(i);
                let mut hidden = vec![0.0; h];
                let mut out = vec![0.0; d];
                let mut draw = vec![0.0; d];
                let (mut est, mut var) = (0.0, 0.0);
                for (s, node) in self.nodes.iter().enumerate() {
                    let coef = node.weight / n;
                    if coef == 0.0 {
                        continue;
                    }
                    let sd: Vec<f64> = node.var.iter().map(|v| v.sqrt()).collect();
                    let mut rng = rng::stream(seed, Domain::MonteCarlo, (i * nodes + s) as u64);
                    let (mut sum, mut sum_sq) = (0.0, 0.0);
                    for _ in 0..samples {
                        for l in 0..d {
                            let z: f64 = rng.sample(StandardNormal);
                            draw[l] = x[l] * node.mean_scale[l] + sd[l] * z;
                        }
                        theta.k_forward_into(&Softplus, &draw, &mut hidden, &mut out);
                        let f: f64 = 0.5
                            * out
                                .iter()
                                .zip(x)
                                .zip(&node.resid)
                                .map(|((k, x), r)| (k + x * r).powi(2))
                                .sum::<f64>();
                        sum += f;
                        sum_sq += f * f;
                    }
                    let ns = samples as f64;
                    let mean = sum / ns;
                    let sample_var = ((sum_sq - ns * mean * mean) / (ns - 1.0)).max(0.0);
                    est += coef * mean;
                    var += coef * coef * sample_var / ns;
                }
                (est, var)
            })
            .collect();
        let (estimate, var) = parts.iter().fold((0.0, 0.0), |(a, b), (e, v)| (a + e, b + v));
        Ok(McEstimate {
            estimate,
            stderr: var.sqrt(),
        })
    }
}

/// Quadrature objective value.
pub fn objective(
    theta: &ScoreParams,
    ds: &ReturnsDataset,
    spec: &DsdeSpec,
    cfg: &ObjectiveConfig,
    batch: Option<&[usize]>,
) -> Result<f64> {
    DsmObjective::new(spec, cfg)?.value(theta, ds, batch)
}

/// Exact gradient of [`objective`].
pub fn gradient(
    theta: &ScoreParams,
    ds: &ReturnsDataset,
    spec: &DsdeSpec,
    cfg: &ObjectiveConfig,
    batch: Option<&[usize]>,
) -> Result<ScoreParams> {
    Ok(DsmObjective::new(spec, cfg)?.value_and_gradient(theta, ds, batch)?.1)
}

/// Monte Carlo estimate of [`objective`] over all rows.
pub fn mc_oracle(
    theta: &ScoreParams,
    ds: &ReturnsDataset,
    spec: &DsdeSpec,
    cfg: &ObjectiveConfig,
    samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    DsmObjective::new(spec, cfg)?.mc_estimate(theta, ds, samples, seed)
}
