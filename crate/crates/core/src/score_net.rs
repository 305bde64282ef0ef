//! Single-hidden-layer score network.
//!
//! `K(x) = c · a(w x + b) + d_out` with `w: h×d`, `c: d×h`, and the fitted
//! score is `s(t, x) = K(x) / C(t)` where `C(t)` is the marginal variance of
//! the denoising SDE. Matrices are stored row-major: `w[j * d + k]` is the
//! weight of input `k` into hidden unit `j`, and `c[k * h + j]` is the weight
//! of hidden unit `j` into output `k`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dsde::DsdeSpec;
use crate::error::{ensure_dim, Error, Result};
use crate::rng::{self, Domain};

/// A smooth, positive activation with its derivative.
pub trait Activation: Sync {
    fn value(&self, u: f64) -> f64;
    fn derivative(&self, u: f64) -> f64;

    fn value_and_derivative(&self, u: f64) -> (f64, f64) {
        (self.value(u), self.derivative(u))
    }
}

/// `ln(1 + e^u)`, evaluated without overflow.
#[derive(Debug, Clone, Copy, Default)]
pub struct Softplus;

impl Activation for Softplus {
    #[inline]
    fn value(&self, u: f64) -> f64 {
        u.max(0.0) + (-u.abs()).exp().ln_1p()
    }

    #[inline]
    fn derivative(&self, u: f64) -> f64 {
        let e = (-u.abs()).exp();
        if u >= 0.0 {
            1.0 / (1.0 + e)
        } else {
            e / (1.0 + e)
        }
    }

    #[inline]
    fn value_and_derivative(&self, u: f64) -> (f64, f64) {
        let e = (-u.abs()).exp();
        let value = u.max(0.0) + e.ln_1p();
        let inv = 1.0 / (1.0 + e);
        (value, if u >= 0.0 { inv } else { e * inv })
    }
}

/// Network parameters `θ = (w, b, c, d_out)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams")]
pub struct ScoreParams {
    d: usize,
    h: usize,
    w: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    d_out: Vec<f64>,
}

#[derive(Deserialize)]
struct RawParams {
    d: usize,
    h: usize,
    w: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    d_out: Vec<f64>,
}

impl TryFrom<RawParams> for ScoreParams {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        ScoreParams::from_parts(raw.d, raw.h, raw.w, raw.b, raw.c, raw.d_out)
    }
}

impl ScoreParams {
    pub fn zeros(d: usize, h: usize) -> Self {
        Self {
            d,
            h,
            w: vec![0.0; h * d],
            b: vec![0.0; h],
            c: vec![0.0; d * h],
            d_out: vec![0.0; d],
        }
    }

    pub fn from_parts(
        d: usize,
        h: usize,
        w: Vec<f64>,
        b: Vec<f64>,
        c: Vec<f64>,
        d_out: Vec<f64>,
    ) -> Result<Self> {
        if d == 0 || h == 0 {
            return Err(Error::invalid(format!("network dims must be positive, got d={d}, h={h}")));
        }
        ensure_dim(h * d, w.len())?;
        ensure_dim(h, b.len())?;
        ensure_dim(d * h, c.len())?;
        ensure_dim(d, d_out.len())?;
        let p = Self { d, h, w, b, c, d_out };
        if p.values().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network parameter".into()));
        }
        Ok(p)
    }

    /// Gaussian initialisation: `w ~ N(0, 1/d)`, `c ~ N(0, 1/h)`, zero biases.
    pub fn init(d: usize, h: usize, seed: u64) -> Result<Self> {
        if d == 0 || h == 0 {
            return Err(Error::invalid(format!("network dims must be positive, got d={d}, h={h}")));
        }
        let mut rng = rng::stream(seed, Domain::Init, 0);
        let mut p = Self::zeros(d, h);
        let sw = (1.0 / d as f64).sqrt();
        for v in &mut p.w {
            *v = sw * rng.sample::<f64, _>(StandardNormal);
        }
        let sc = (1.0 / h as f64).sqrt();
        for v in &mut p.c {
            *v = sc * rng.sample::<f64, _>(StandardNormal);
        }
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn hidden(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    /// Row `j` of `w`, the input weights of hidden unit `j`.
    pub fn w_row(&self, j: usize) -> &[f64] {
        &self.w[j * self.d..(j + 1) * self.d]
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    /// `c[k][j]`: hidden unit `j` into output `k`.
    pub fn c_at(&self, k: usize, j: usize) -> f64 {
        self.c[k * self.h + j]
    }

    pub fn d_out(&self) -> &[f64] {
        &self.d_out
    }

    pub fn w_mut(&mut self) -> &mut [f64] {
        &mut self.w
    }

    pub fn b_mut(&mut self) -> &mut [f64] {
        &mut self.b
    }

    pub fn c_mut(&mut self) -> &mut [f64] {
        &mut self.c
    }

    pub fn d_out_mut(&mut self) -> &mut [f64] {
        &mut self.d_out
    }

    pub fn num_values(&self) -> usize {
        self.w.len() + self.b.len() + self.c.len() + self.d_out.len()
    }

    /// All entries in the order `w, b, c, d_out`.
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.w.iter().chain(&self.b).chain(&self.c).chain(&self.d_out)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w
            .iter_mut()
            .chain(&mut self.b)
            .chain(&mut self.c)
            .chain(&mut self.d_out)
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.d == other.d && self.h == other.h
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Self) {
        assert!(self.same_shape(other), "shape mismatch in axpy");
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for v in self.values_mut() {
            *v *= alpha;
        }
    }

    /// `K(x)`, writing hidden pre-activations into `hidden` (len h).
    pub fn k_forward_into<A: Activation>(&self, act: &A, x: &[f64], hidden: &mut [f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.d);
        for (j, hj) in hidden.iter_mut().enumerate() {
            let pre: f64 = self.w_row(j).iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + self.b[j];
            *hj = act.value(pre);
        }
        for (k, ok) in out.iter_mut().enumerate() {
            let row = &self.c[k * self.h..(k + 1) * self.h];
            *ok = row.iter().zip(hidden.iter()).map(|(c, a)| c * a).sum::<f64>() + self.d_out[k];
        }
    }

    /// `K(x; θ)` with softplus activation.
    pub fn k_forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        ensure_dim(self.d, x.len())?;
        let mut hidden = vec![0.0; self.h];
        let mut out = vec![0.0; self.d];
        self.k_forward_into(&Softplus, x, &mut hidden, &mut out);
        Ok(out)
    }

    /// Fitted score `K(x) / C(t)`; rejects times where some `C_i(t) = 0`.
    pub fn score_eval(&self, spec: &DsdeSpec, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        ensure_dim(self.d, spec.dim())?;
        let var = spec.marginal(t)?.var;
        if var.iter().any(|&v| v <= 0.0) {
            return Err(Error::Singular(format!("zero marginal variance at t={t}")));
        }
        let mut k = self.k_forward(x)?;
        for (ki, vi) in k.iter_mut().zip(&var) {
            *ki /= vi;
        }
        Ok(k)
    }
}

/// Score of `N(mu, diag(var))` at `x`: `-(x - mu) / var`.
pub fn true_gaussian_score(mu: &[f64], var: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    ensure_dim(mu.len(), var.len())?;
    ensure_dim(mu.len(), x.len())?;
    if var.iter().any(|&v| v <= 0.0) {
        return Err(Error::Singular("Gaussian score needs positive variance".into()));
    }
    Ok(x.iter()
        .zip(mu)
        .zip(var)
        .map(|((x, m), v)| -(x - m) / v)
        .collect())
}
