//! Comparison of historical and synthetic returns: portfolio projection,
//! two-sample Cramér–von Mises test, covariance conditioning, Q-Q pairs and
//! histograms.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{format_float, ReturnsDataset};
use crate::error::{ensure_dim, Error, Result};
use crate::rng::{self, Domain};

/// Row-wise `<g|x_i>`; `g` must be a long-only, fully invested weight vector.
pub fn portfolio_project(rows: &[Vec<f64>], g: &[f64]) -> Result<Vec<f64>> {
    if g.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::invalid("portfolio weights must be nonnegative"));
    }
    let total: f64 = g.iter().sum();
    if (total - 1.0).abs() > 1e-10 {
        return Err(Error::invalid(format!("portfolio weights must sum to 1, got {total}")));
    }
    rows.iter()
        .map(|r| {
            ensure_dim(g.len(), r.len())?;
            Ok(r.iter().zip(g).map(|(x, w)| x * w).sum())
        })
        .collect()
}

pub fn equal_weights(d: usize) -> Vec<f64> {
    vec![1.0 / d as f64; d]
}

/// 1-based ranks with ties sharing their average rank.
fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// `T` from the pooled ranks of each sample.
fn cvm_from_ranks(first: &mut [f64], second: &mut [f64]) -> f64 {
    first.sort_by(f64::total_cmp);
    second.sort_by(f64::total_cmp);
    let (n, m) = (first.len() as f64, second.len() as f64);
    let dev = |r: &[f64]| -> f64 {
        r.iter()
            .enumerate()
            .map(|(i, r)| (r - (i + 1) as f64).powi(2))
            .sum()
    };
    let u = n * dev(first) + m * dev(second);
    u / (n * m * (n + m)) - (4.0 * n * m - 1.0) / (6.0 * (n + m))
}

fn pooled_ranks(p: &[f64], q: &[f64]) -> Result<Vec<f64>> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::invalid("Cramer-von Mises test needs two nonempty samples"));
    }
    if p.iter().chain(q).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Cramer-von Mises sample".into()));
    }
    let pooled: Vec<f64> = p.iter().chain(q).copied().collect();
    Ok(midranks(&pooled))
}

/// Two-sample Cramér–von Mises statistic (rank form, midranks for ties).
pub fn cvm_statistic(p: &[f64], q: &[f64]) -> Result<f64> {
    let ranks = pooled_ranks(p, q)?;
    let (a, b) = ranks.split_at(p.len());
    Ok(cvm_from_ranks(&mut a.to_vec(), &mut b.to_vec()))
}

fn at_least(t: f64, observed: f64) -> bool {
    t >= observed - 1e-12 * observed.abs().max(1e-12)
}

/// Permutation p-value `(1 + #{T_b >= T}) / (B + 1)` over `permutations`
/// random relabelings, each drawn from its own stream.
pub fn cvm_pvalue(p: &[f64], q: &[f64], permutations: usize, seed: u64) -> Result<f64> {
    if permutations < 99 {
        return Err(Error::invalid(format!("need at least 99 permutations, got {permutations}")));
    }
    let ranks = pooled_ranks(p, q)?;
    let n = p.len();
    let observed = {
        let (a, b) = ranks.split_at(n);
        cvm_from_ranks(&mut a.to_vec(), &mut b.to_vec())
    };
    let exceed: usize = (0..permutations)
        .into_par_iter()
        .map(|b| {
            let mut r = ranks.clone();
            r.shuffle(&mut rng::stream(seed, Domain::Permutation, b as u64));
            let (x, y) = r.split_at_mut(n);
            usize::from(at_least(cvm_from_ranks(x, y), observed))
        })
        .sum();
    Ok((1 + exceed) as f64 / (permutations + 1) as f64)
}

/// Exact permutation p-value over all `C(n+m, n)` labelings.
pub fn cvm_pvalue_exhaustive(p: &[f64], q: &[f64]) -> Result<f64> {
    let ranks = pooled_ranks(p, q)?;
    let (n, total) = (p.len(), ranks.len());
    if total > 24 {
        return Err(Error::invalid("exhaustive enumeration limited to 24 pooled values"));
    }
    let observed = cvm_statistic(p, q)?;
    let (mut hits, mut count) = (0u64, 0u64);
    for mask in 0u32..(1u32 << total) {
        if mask.count_ones() as usize != n {
            continue;
        }
        let (mut x, mut y) = (Vec::with_capacity(n), Vec::with_capacity(total - n));
        for (i, r) in ranks.iter().enumerate() {
            if mask & (1 << i) != 0 {
                x.push(*r);
            } else {
                y.push(*r);
            }
        }
        count += 1;
        hits += u64::from(at_least(cvm_from_ranks(&mut x, &mut y), observed));
    }
    Ok(hits as f64 / count as f64)
}

/// Unbiased covariance, divisor `rows - 1`.
pub fn sample_covariance(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if rows.len() < 2 {
        return Err(Error::invalid("covariance needs at least two rows"));
    }
    let d = rows[0].len();
    for r in rows {
        ensure_dim(d, r.len())?;
    }
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..d).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / n).collect();
    let mut s = DMatrix::zeros(d, d);
    for a in 0..d {
        for b in a..d {
            let v = rows.iter().map(|r| (r[a] - mean[a]) * (r[b] - mean[b])).sum::<f64>() / (n - 1.0);
            s[(a, b)] = v;
            s[(b, a)] = v;
        }
    }
    Ok(s)
}

/// `lambda_max / lambda_min`, or infinity when `lambda_min <= 1e-300`.
pub fn condition_number(s: &DMatrix<f64>) -> Result<f64> {
    if !s.is_square() || s.nrows() == 0 {
        return Err(Error::invalid("condition number needs a nonempty square matrix"));
    }
    let scale = s.amax().max(f64::MIN_POSITIVE);
    for a in 0..s.nrows() {
        for b in a + 1..s.ncols() {
            if (s[(a, b)] - s[(b, a)]).abs() > 1e-10 * scale {
                return Err(Error::invalid("matrix is not symmetric"));
            }
        }
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("covariance matrix".into()));
    }
    let eig = SymmetricEigen::new(s.clone()).eigenvalues;
    let max = eig.max();
    let min = eig.min();
    if min <= 1e-300 {
        return Ok(f64::INFINITY);
    }
    Ok(max / min)
}

/// Quantile of sorted data by linear interpolation at position `(N-1) prob`.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * prob;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QqPair {
    pub prob: f64,
    pub hist_q: f64,
    pub synth_q: f64,
}

/// Matched quantiles at `k / (levels + 1)`, `k = 1..=levels`.
pub fn qq_pairs(p: &[f64], q: &[f64], levels: usize) -> Result<Vec<QqPair>> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::invalid("Q-Q pairs need two nonempty samples"));
    }
    if levels == 0 {
        return Err(Error::invalid("Q-Q pairs need at least one level"));
    }
    let sort = |v: &[f64]| {
        let mut v = v.to_vec();
        v.sort_by(f64::total_cmp);
        v
    };
    let (sp, sq) = (sort(p), sort(q));
    Ok((1..=levels)
        .map(|k| {
            let prob = k as f64 / (levels + 1) as f64;
            QqPair {
                prob,
                hist_q: quantile_sorted(&sp, prob),
                synth_q: quantile_sorted(&sq, prob),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistBin {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub hist_count: usize,
    pub synth_count: usize,
}

/// Equal-width bins spanning both samples.
pub fn histogram(p: &[f64], q: &[f64], bins: usize) -> Result<Vec<HistBin>> {
    if bins == 0 {
        return Err(Error::invalid("histogram needs at least one bin"));
    }
    if p.is_empty() || q.is_empty() {
        return Err(Error::invalid("histogram needs two nonempty samples"));
    }
    let lo = p.iter().chain(q).copied().fold(f64::INFINITY, f64::min);
    let mut hi = p.iter().chain(q).copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        hi = lo + 1.0;
    }
    let width = (hi - lo) / bins as f64;
    let mut out: Vec<HistBin> = (0..bins)
        .map(|b| HistBin {
            bin_lo: lo + b as f64 * width,
            bin_hi: if b + 1 == bins { hi } else { lo + (b + 1) as f64 * width },
            hist_count: 0,
            synth_count: 0,
        })
        .collect();
    let slot = |v: f64| (((v - lo) / width) as usize).min(bins - 1);
    for &v in p {
        out[slot(v)].hist_count += 1;
    }
    for &v in q {
        out[slot(v)].synth_count += 1;
    }
    Ok(out)
}

/// JSON for floats that may be infinite (an ill-conditioned covariance).
mod extended_float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("nan")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) if t == "nan" => Ok(f64::NAN),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("unexpected number text {t:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidationOptions {
    /// Permutations for the CvM p-value.
    pub permutations: usize,
    pub seed: u64,
    pub bins: usize,
    pub qq_levels: usize,
    /// Portfolio weights; equal weights when absent.
    pub weights: Option<Vec<f64>>,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            permutations: 1000,
            seed: 0,
            bins: 50,
            qq_levels: 99,
            weights: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationReport {
    pub t_cvm: f64,
    pub p_cvm: f64,
    #[serde(with = "extended_float")]
    pub kappa_hist: f64,
    #[serde(with = "extended_float")]
    pub kappa_synth: f64,
    pub qq_pairs: Vec<QqPair>,
    pub weights: Vec<f64>,
    pub n: usize,
    pub m: usize,
    pub histogram: Vec<HistBin>,
}

pub fn build_report(hist: &ReturnsDataset, synth: &[Vec<f64>], opts: &ValidationOptions) -> Result<ValidationReport> {
    if synth.is_empty() {
        return Err(Error::invalid("synthetic sample is empty"));
    }
    let d = hist.dim();
    let weights = opts.weights.clone().unwrap_or_else(|| equal_weights(d));
    ensure_dim(d, weights.len())?;
    let hp = portfolio_project(hist.returns(), &weights)?;
    let sp = portfolio_project(synth, &weights)?;
    Ok(ValidationReport {
        t_cvm: cvm_statistic(&hp, &sp)?,
        p_cvm: cvm_pvalue(&hp, &sp, opts.permutations, opts.seed)?,
        kappa_hist: condition_number(&sample_covariance(hist.returns())?)?,
        kappa_synth: condition_number(&sample_covariance(synth)?)?,
        qq_pairs: qq_pairs(&hp, &sp, opts.qq_levels)?,
        weights,
        n: hp.len(),
        m: sp.len(),
        histogram: histogram(&hp, &sp, opts.bins)?,
    })
}

fn flush<W: Write>(mut out: csv::Writer<W>) -> Result<()> {
    out.flush().map_err(|e| Error::Io {
        path: "<csv output>".into(),
        source: e,
    })
}

/// `prob,hist_q,synth_q` CSV.
pub fn write_qq_csv<W: Write>(writer: W, pairs: &[QqPair]) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["prob", "hist_q", "synth_q"])?;
    for p in pairs {
        out.write_record([format_float(p.prob), format_float(p.hist_q), format_float(p.synth_q)])?;
    }
    flush(out)
}

/// `bin_lo,bin_hi,hist_count,synth_count` CSV.
pub fn write_histogram_csv<W: Write>(writer: W, bins: &[HistBin]) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["bin_lo", "bin_hi", "hist_count", "synth_count"])?;
    for b in bins {
        out.write_record([
            format_float(b.bin_lo),
            format_float(b.bin_hi),
            b.hist_count.to_string(),
            b.synth_count.to_string(),
        ])?;
    }
    flush(out)
}
