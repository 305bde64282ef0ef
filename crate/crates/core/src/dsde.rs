//! Denoising SDE families (VP, sub-VP, VE) and their Gaussian transitions.
//!
//! Every quantity is per component: `beta`, `tau` and the moments are
//! d-vectors, one entry per asset, driven by the per-asset scale `b[i]`.
//!
//! For VP and sub-VP the clock `tau(t)` diverges at `t = 1`. It is returned
//! as `f64::INFINITY` there, and the moment formulas are written so that
//! `exp(-tau)` underflows to exactly zero, giving the white-noise limit
//! without special cases.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DsdeKind {
    #[serde(rename = "VP", alias = "vp")]
    Vp,
    #[serde(rename = "SubVP", alias = "subvp", alias = "sub_vp", alias = "sub-VP")]
    SubVp,
    #[serde(rename = "VE", alias = "ve")]
    Ve,
}

/// A denoising SDE with hyperparameters `a` and per-asset scales `b`.
///
/// VP/sub-VP use `beta_i(t) = b_i (1 - t)^-(1 + a)` with `a >= 0`; VE uses
/// `v_i(t) = b_i a^t` with `a > 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDsdeSpec", deny_unknown_fields)]
pub struct DsdeSpec {
    kind: DsdeKind,
    a: f64,
    b: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDsdeSpec {
    kind: DsdeKind,
    a: f64,
    b: Vec<f64>,
}

impl TryFrom<RawDsdeSpec> for DsdeSpec {
    type Error = Error;

    fn try_from(raw: RawDsdeSpec) -> Result<Self> {
        DsdeSpec::new(raw.kind, raw.a, raw.b)
    }
}

/// Diagonal Gaussian: mean and per-component variance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussMoments {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl GaussMoments {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Linear SDE coefficients at one instant: drift is `drift_rate ⊙ x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    pub drift_rate: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// Marginal law at time `t` given `X_0 = x0`: mean `mean_scale ⊙ x0`,
/// variance `var`. Shared by all data points.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginal {
    pub t: f64,
    pub mean_scale: Vec<f64>,
    pub var: Vec<f64>,
}

impl DsdeSpec {
    pub fn new(kind: DsdeKind, a: f64, b: Vec<f64>) -> Result<Self> {
        if b.is_empty() {
            return Err(Error::invalid("b must have at least one component"));
        }
        if let Some(bad) = b.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::invalid(format!("b components must be positive, found {bad}")));
        }
        match kind {
            DsdeKind::Vp | DsdeKind::SubVp if !(a.is_finite() && a >= 0.0) => {
                Err(Error::invalid(format!("VP/sub-VP require a >= 0, found {a}")))
            }
            DsdeKind::Ve if !(a.is_finite() && a > 1.0) => {
                Err(Error::invalid(format!("VE requires a > 1, found {a}")))
            }
            _ => Ok(Self { kind, a, b }),
        }
    }

    /// Same `a` and `b` for every one of `d` components.
    pub fn uniform(kind: DsdeKind, a: f64, b: f64, d: usize) -> Result<Self> {
        Self::new(kind, a, vec![b; d])
    }

    pub fn kind(&self) -> DsdeKind {
        self.kind
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if (0.0..=1.0).contains(&t) {
            Ok(())
        } else {
            Err(Error::invalid(format!("time {t} outside [0, 1]")))
        }
    }

    fn beta_scalar(&self, bi: f64, t: f64) -> f64 {
        match self.kind {
            DsdeKind::Vp | DsdeKind::SubVp => bi * (-(1.0 + self.a) * (-t).ln_1p()).exp(),
            DsdeKind::Ve => bi * self.a.ln() * self.a.powf(t),
        }
    }

    fn tau_scalar(&self, bi: f64, t: f64) -> f64 {
        match self.kind {
            DsdeKind::Vp | DsdeKind::SubVp => {
                let log_surv = (-t).ln_1p();
                if self.a == 0.0 {
                    -bi * log_surv
                } else {
                    bi * (-self.a * log_surv).exp_m1() / self.a
                }
            }
            DsdeKind::Ve => bi * self.a.powf(t),
        }
    }

    /// Instantaneous rate `beta(t)`; for VE this is `dv/dt`.
    ///
    /// VP and sub-VP are singular at `t = 1`.
    pub fn beta(&self, t: f64) -> Result<Vec<f64>> {
        self.check_time(t)?;
        if t >= 1.0 && self.kind != DsdeKind::Ve {
            return Err(Error::Singular(format!("beta({t}) diverges")));
        }
        Ok(self.b.iter().map(|&bi| self.beta_scalar(bi, t)).collect())
    }

    /// Time change `tau(t)`; `+inf` at `t = 1` for VP/sub-VP.
    pub fn tau(&self, t: f64) -> Result<Vec<f64>> {
        self.check_time(t)?;
        Ok(self.b.iter().map(|&bi| self.tau_scalar(bi, t)).collect())
    }

    /// Law of `X_t` given `X_u = y`.
    pub fn transition_moments(&self, u: f64, t: f64, y: &[f64]) -> Result<GaussMoments> {
        self.check_time(u)?;
        self.check_time(t)?;
        if u > t {
            return Err(Error::invalid(format!("transition needs u <= t, got u={u}, t={t}")));
        }
        ensure_dim(self.dim(), y.len())?;
        let mut mean = Vec::with_capacity(y.len());
        let mut var = Vec::with_capacity(y.len());
        for (&bi, &yi) in self.b.iter().zip(y) {
            if u == t {
                mean.push(yi);
                var.push(0.0);
                continue;
            }
            let (scale, v) = self.transition_scalar(bi, u, t);
            mean.push(scale * yi);
            var.push(v);
        }
        Ok(GaussMoments { mean, var })
    }

    /// `(mean scale, variance)` of one component over `u < t`.
    fn transition_scalar(&self, bi: f64, u: f64, t: f64) -> (f64, f64) {
        let tu = self.tau_scalar(bi, u);
        let tt = self.tau_scalar(bi, t);
        match self.kind {
            DsdeKind::Vp => {
                let delta = tt - tu;
                ((-0.5 * delta).exp(), -(-delta).exp_m1())
            }
            DsdeKind::SubVp => {
                // Var = (1 - e^-(tt-tu)) (1 - e^-(tt+tu)); reduces to
                // (1 - e^-tt)^2 from the origin.
                let delta = tt - tu;
                let v = -(-delta).exp_m1() * -(-(tt + tu)).exp_m1();
                ((-0.5 * delta).exp(), v)
            }
            DsdeKind::Ve => (1.0, tt - tu),
        }
    }

    /// Marginal moments from `X_0 = x0`.
    pub fn marginal_moments(&self, t: f64, x0: &[f64]) -> Result<GaussMoments> {
        self.transition_moments(0.0, t, x0)
    }

    /// Data-independent part of the marginal law at `t`.
    pub fn marginal(&self, t: f64) -> Result<Marginal> {
        self.check_time(t)?;
        let (mean_scale, var) = if t == 0.0 {
            (vec![1.0; self.dim()], vec![0.0; self.dim()])
        } else {
            self.b.iter().map(|&bi| self.transition_scalar(bi, 0.0, t)).unzip()
        };
        Ok(Marginal { t, mean_scale, var })
    }

    /// Drift rate and diffusion coefficient at `t`.
    pub fn coefficients(&self, t: f64) -> Result<Coefficients> {
        let beta = self.beta(t)?;
        let (drift_rate, sigma) = match self.kind {
            DsdeKind::Vp => beta.iter().map(|&be| (-0.5 * be, be.sqrt())).unzip(),
            DsdeKind::SubVp => beta
                .iter()
                .zip(&self.b)
                .map(|(&be, &bi)| {
                    let tau = self.tau_scalar(bi, t);
                    (-0.5 * be, (be * -(-2.0 * tau).exp_m1()).sqrt())
                })
                .unzip(),
            DsdeKind::Ve => (vec![0.0; self.dim()], beta.iter().map(|be| be.sqrt()).collect()),
        };
        Ok(Coefficients { drift_rate, sigma })
    }

    /// `(alpha(t, x), sigma(t))`.
    pub fn drift_diffusion(&self, t: f64, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        ensure_dim(self.dim(), x.len())?;
        let co = self.coefficients(t)?;
        let drift = co.drift_rate.iter().zip(x).map(|(r, xi)| r * xi).collect();
        Ok((drift, co.sigma))
    }
}
