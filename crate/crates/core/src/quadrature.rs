//! Gauss–Hermite and Simpson rules, and the Gaussian integrals of one and
//! two activations that the training objective is built from.
//!
//! For `X ~ N(mean, diag(var))`, a projection `<w|X> + b` is a scalar normal
//! with standard deviation `|w|_C = sqrt(sum_k w_k^2 var_k)`, so
//! `E[a(<w|X> + b)]` is a one-dimensional integral. Two projections form a
//! bivariate normal whose covariance is factored by Gram–Schmidt in the
//! `sqrt(C)` metric, which turns `E[a(<w1|X> + b1) a(<w2|X> + b2)]` into a
//! two-dimensional tensor rule.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::dsde::GaussMoments;
use crate::error::{ensure_dim, Error, Result};
use crate::score_net::{Activation, Softplus};

pub const MAX_GH_ORDER: usize = 64;

/// Below this `|sin|` between two projections the pair is integrated as a
/// one-dimensional rule along the common direction.
pub const PARALLEL_SINE: f64 = 1e-7;

/// Gauss–Hermite rule normalised to the standard normal:
/// `sum_p weights[p] f(sqrt(2) nodes[p]) ≈ E[f(Z)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// `sqrt(2) * nodes`, the standard-normal abscissae.
    scaled: Vec<f64>,
}

impl GaussHermite {
    /// Rule of order `order`: roots of the physicists' Hermite polynomial
    /// `H_order`, weights divided by `sqrt(pi)`.
    pub fn new(order: usize) -> Result<Self> {
        if !(1..=MAX_GH_ORDER).contains(&order) {
            return Err(Error::invalid(format!(
                "Gauss-Hermite order must be in 1..={MAX_GH_ORDER}, got {order}"
            )));
        }
        // Golub–Welsch: eigenvalues of the Jacobi matrix give the roots.
        let jacobi = DMatrix::from_fn(order, order, |i, j| {
            if i.abs_diff(j) == 1 {
                (i.max(j) as f64 / 2.0).sqrt()
            } else {
                0.0
            }
        });
        let mut roots: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().copied().collect();
        roots.sort_by(f64::total_cmp);

        // Newton polish on the orthonormal recurrence, which also yields
        // weights with full relative accuracy in the tails.
        let mut nodes = Vec::with_capacity(order);
        let mut weights = Vec::with_capacity(order);
        for &z0 in &roots {
            let mut z = z0;
            let mut deriv = 0.0;
            for _ in 0..100 {
                let (p, pd) = orthonormal_hermite(order, z);
                deriv = pd;
                let dz = p / pd;
                z -= dz;
                if dz.abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            let (_, pd) = orthonormal_hermite(order, z);
            if pd.is_finite() {
                deriv = pd;
            }
            nodes.push(z);
            weights.push(2.0 / (deriv * deriv));
        }

        // Enforce exact symmetry and unit mass.
        for p in 0..order / 2 {
            let q = order - 1 - p;
            let z = 0.5 * (nodes[q] - nodes[p]);
            let w = 0.5 * (weights[p] + weights[q]);
            nodes[p] = -z;
            nodes[q] = z;
            weights[p] = w;
            weights[q] = w;
        }
        if order % 2 == 1 {
            nodes[order / 2] = 0.0;
        }
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        let scaled = nodes.iter().map(|z| std::f64::consts::SQRT_2 * z).collect();
        Ok(Self {
            nodes,
            weights,
            scaled,
        })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Hermite roots `z_p`.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Normalised weights, summing to one.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Standard-normal abscissae `sqrt(2) z_p`.
    pub fn scaled_nodes(&self) -> &[f64] {
        &self.scaled
    }

    /// `E[f(Z)]` for `Z ~ N(0, 1)`.
    pub fn expect(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.scaled)
            .map(|(w, &y)| w * f(y))
            .sum()
    }
}

/// Value and derivative of the orthonormal Hermite function recurrence at `z`
/// (the polynomial part, as in the classic `gauher` routine).
fn orthonormal_hermite(order: usize, z: f64) -> (f64, f64) {
    let mut p1 = std::f64::consts::PI.powf(-0.25);
    let mut p2 = 0.0;
    for j in 1..=order {
        let p3 = p2;
        p2 = p1;
        let jf = j as f64;
        p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
    }
    (p1, (2.0 * order as f64).sqrt() * p2)
}

/// Composite Simpson grid on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimpsonGrid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl SimpsonGrid {
    /// `subintervals` must be even and at least 2.
    pub fn new(subintervals: usize) -> Result<Self> {
        if subintervals < 2 || subintervals % 2 != 0 {
            return Err(Error::invalid(format!(
                "Simpson rule needs an even number of subintervals >= 2, got {subintervals}"
            )));
        }
        let s = subintervals as f64;
        let nodes = (0..=subintervals)
            .map(|k| if k == subintervals { 1.0 } else { k as f64 / s })
            .collect();
        let weights = (0..=subintervals)
            .map(|k| {
                let m = if k == 0 || k == subintervals {
                    1.0
                } else if k % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                m / (3.0 * s)
            })
            .collect();
        Ok(Self { nodes, weights })
    }

    pub fn subintervals(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&t, w)| w * f(t)).sum()
    }
}

/// `∫_0^1 f(t) dt` by composite Simpson with `subintervals` panels.
pub fn simpson_integrate(subintervals: usize, f: impl FnMut(f64) -> f64) -> Result<f64> {
    Ok(SimpsonGrid::new(subintervals)?.integrate(f))
}

/// Space and time rules used by the objective.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadRule {
    pub gh: GaussHermite,
    pub simpson: SimpsonGrid,
}

impl QuadRule {
    pub fn new(gh_order: usize, simpson_subintervals: usize) -> Result<Self> {
        Ok(Self {
            gh: GaussHermite::new(gh_order)?,
            simpson: SimpsonGrid::new(simpson_subintervals)?,
        })
    }
}

/// `E[a(mean + sd Z)]`.
#[inline]
pub fn expect_activation<A: Activation>(gh: &GaussHermite, act: &A, mean: f64, sd: f64) -> f64 {
    gh.expect(|y| act.value(sd * y + mean))
}

/// Factorisation of the bivariate normal `(U1, U2)` with variances `p, q`
/// and covariance `rho`: `U1 = m1 + s1 Y1`, `U2 = m2 + along Y1 + across Y2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairGeometry {
    pub sigma1: f64,
    pub along: f64,
    pub across: f64,
    /// Second projection is (numerically) a multiple of the first.
    pub parallel: bool,
}

impl PairGeometry {
    pub fn new(p: f64, rho: f64, q: f64) -> Self {
        let sigma1 = p.max(0.0).sqrt();
        let q = q.max(0.0);
        let along = if sigma1 > 0.0 { rho / sigma1 } else { 0.0 };
        let across = (q - along * along).max(0.0).sqrt();
        let parallel = across <= PARALLEL_SINE * q.sqrt();
        Self {
            sigma1,
            along,
            across,
            parallel,
        }
    }

    /// `(cos, |sin|)` of the angle between the two projections.
    pub fn angle(&self) -> (f64, f64) {
        let sigma2 = (self.along * self.along + self.across * self.across).sqrt();
        if sigma2 == 0.0 {
            return (1.0, 0.0);
        }
        (self.along / sigma2, self.across / sigma2)
    }

    /// Chain partials in `(sigma1, along, across)` to `(p, rho, q)`.
    pub fn chain(&self, d_sigma1: f64, d_along: f64, d_across: f64, p: f64) -> (f64, f64, f64) {
        if self.sigma1 <= 0.0 {
            let dq = if self.parallel { 0.0 } else { d_across / (2.0 * self.across) };
            return (0.0, 0.0, dq);
        }
        let s1 = self.sigma1;
        let a = self.along;
        let mut dp = d_sigma1 / (2.0 * s1) - d_along * a / (2.0 * p);
        let mut drho = d_along / s1;
        let mut dq = 0.0;
        if !self.parallel {
            let b = self.across;
            dp += d_across * a * a / (2.0 * p * b);
            drho -= d_across * a / (s1 * b);
            dq = d_across / (2.0 * b);
        }
        (dp, drho, dq)
    }
}

/// Partial derivatives of `E[a(U1) a(U2)]`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PairTerms {
    pub value: f64,
    pub d_m1: f64,
    pub d_m2: f64,
    pub d_sigma1: f64,
    pub d_along: f64,
    pub d_across: f64,
}

/// `E[a(U1) a(U2)]` given the first coordinate's activation values at the
/// rule nodes, `first[p] = a(m1 + sigma1 y_p)`.
#[inline]
pub fn pair_value<A: Activation>(
    gh: &GaussHermite,
    act: &A,
    geom: &PairGeometry,
    first: &[f64],
    m2: f64,
) -> f64 {
    let w = gh.weights();
    let y = gh.scaled_nodes();
    let mut total = 0.0;
    if geom.parallel {
        for p in 0..w.len() {
            total += w[p] * first[p] * act.value(m2 + geom.along * y[p]);
        }
    } else {
        for p in 0..w.len() {
            let base = m2 + geom.along * y[p];
            let mut inner = 0.0;
            for q in 0..w.len() {
                inner += w[q] * act.value(base + geom.across * y[q]);
            }
            total += w[p] * first[p] * inner;
        }
    }
    total
}

/// Value and partials of `E[a(U1) a(U2)]`; `first` and `first_deriv` hold
/// `a` and `a'` at `m1 + sigma1 y_p`.
#[inline]
pub fn pair_terms<A: Activation>(
    gh: &GaussHermite,
    act: &A,
    geom: &PairGeometry,
    first: &[f64],
    first_deriv: &[f64],
    m2: f64,
) -> PairTerms {
    let w = gh.weights();
    let y = gh.scaled_nodes();
    let mut t = PairTerms::default();
    for p in 0..w.len() {
        let base = m2 + geom.along * y[p];
        // inner sums over q of a(u2), a'(u2), a'(u2) y_q
        let (s0, s1, s2) = if geom.parallel {
            let (v, dv) = act.value_and_derivative(base);
            (v, dv, 0.0)
        } else {
            let mut s = (0.0, 0.0, 0.0);
            for q in 0..w.len() {
                let (v, dv) = act.value_and_derivative(base + geom.across * y[q]);
                s.0 += w[q] * v;
                s.1 += w[q] * dv;
                s.2 += w[q] * dv * y[q];
            }
            s
        };
        let wa = w[p] * first[p];
        let wd = w[p] * first_deriv[p];
        t.value += wa * s0;
        t.d_m1 += wd * s0;
        t.d_sigma1 += wd * y[p] * s0;
        t.d_m2 += wa * s1;
        t.d_along += wa * s1 * y[p];
        t.d_across += wa * s2;
    }
    t
}

/// Scale and offset of `<w|X> + bias` under `X ~ N(m.mean, diag(m.var))`.
fn projection(w: &[f64], bias: f64, m: &GaussMoments) -> (f64, f64) {
    let mean = w.iter().zip(&m.mean).map(|(w, mu)| w * mu).sum::<f64>() + bias;
    let var = w.iter().zip(&m.var).map(|(w, v)| w * w * v).sum::<f64>();
    (mean, var)
}

fn check_moments(w: &[f64], m: &GaussMoments) -> Result<()> {
    ensure_dim(m.mean.len(), w.len())?;
    ensure_dim(m.mean.len(), m.var.len())?;
    if m.var.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::invalid("variances must be nonnegative"));
    }
    Ok(())
}

/// `E[softplus(<w|X> + bias)]`, `X ~ N(m.mean, diag(m.var))`.
pub fn int_i1(gh: &GaussHermite, w: &[f64], bias: f64, m: &GaussMoments) -> Result<f64> {
    int_i1_with(gh, &Softplus, w, bias, m)
}

pub fn int_i1_with<A: Activation>(
    gh: &GaussHermite,
    act: &A,
    w: &[f64],
    bias: f64,
    m: &GaussMoments,
) -> Result<f64> {
    check_moments(w, m)?;
    let (mean, var) = projection(w, bias, m);
    Ok(expect_activation(gh, act, mean, var.sqrt()))
}

/// `E[softplus(<w1|X> + b1) softplus(<w2|X> + b2)]`.
///
/// The pair is ordered canonically before the Gram–Schmidt step, so the
/// result is exactly symmetric in its two arguments.
pub fn int_i2(
    gh: &GaussHermite,
    w1: &[f64],
    b1: f64,
    w2: &[f64],
    b2: f64,
    m: &GaussMoments,
) -> Result<f64> {
    int_i2_with(gh, &Softplus, w1, b1, w2, b2, m)
}

pub fn int_i2_with<A: Activation>(
    gh: &GaussHermite,
    act: &A,
    w1: &[f64],
    b1: f64,
    w2: &[f64],
    b2: f64,
    m: &GaussMoments,
) -> Result<f64> {
    check_moments(w1, m)?;
    check_moments(w2, m)?;
    if w1.iter().all(|&v| v == 0.0) || w2.iter().all(|&v| v == 0.0) {
        return Err(Error::invalid("int_i2 needs nonzero weight vectors"));
    }
    let (m1, p1) = projection(w1, b1, m);
    let (m2, p2) = projection(w2, b2, m);
    let rho = w1
        .iter()
        .zip(w2)
        .zip(&m.var)
        .map(|((a, b), v)| a * b * v)
        .sum::<f64>();
    let ((ma, pa), (mb, pb)) = if (p1, m1) >= (p2, m2) {
        ((m1, p1), (m2, p2))
    } else {
        ((m2, p2), (m1, p1))
    };
    let geom = PairGeometry::new(pa, rho, pb);
    let first: Vec<f64> = gh
        .scaled_nodes()
        .iter()
        .map(|y| act.value(ma + geom.sigma1 * y))
        .collect();
    Ok(pair_value(gh, act, &geom, &first, mb))
}
