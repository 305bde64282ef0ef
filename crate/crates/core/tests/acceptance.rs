//! Acceptance suite. Runs every criterion and prints one PASS/FAIL line per
//! criterion followed by a summary. Set `SCOREGEN_STRICT_ACCEPTANCE=1` to
//! exit with a failure status when any criterion fails.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use scoregen::data::ReturnsDataset;
use scoregen::dsde::{DsdeKind, DsdeSpec, GaussMoments};
use scoregen::objective::{mc_oracle, DsmObjective, ObjectiveConfig};
use scoregen::quadrature::{int_i1, int_i2, GaussHermite};
use scoregen::rng::{self, Domain};
use scoregen::sampler::{
    euler_forward, forward_path, generate_scenarios, reverse_path, ForwardScheme, GaussianNoise, GaussianScore,
    NetworkScore, PathConfig,
};
use scoregen::score_net::{Activation, ScoreParams, Softplus};
use scoregen::stats::{
    condition_number, cvm_pvalue, cvm_pvalue_exhaustive, cvm_statistic, equal_weights, portfolio_project,
    sample_covariance,
};
use scoregen::trainer::{train, TrainConfig};

// Tolerances, fixed by the criteria.
const C1_I1_REL: f64 = 1e-6;
const C1_I2_SE: f64 = 4.0;
const C1_WIDTH_MAX: f64 = 10.0;
const C2_REL: f64 = 1e-3;
const C3_SE: f64 = 3.0;
const C3_MIN_PASS: usize = 95;
const C4_REL: f64 = 1e-4;
const C4_FLOOR: f64 = 1e-6;
const C5_SE: f64 = 4.0;
const C5_MEAN_ABS: f64 = 0.05;
const C5_VAR_BAND: (f64, f64) = (0.9, 1.1);
const C6_MEAN_ABS: f64 = 0.05;
const C6_VAR_REL: f64 = 0.10;
const C7_P_MIN: f64 = 0.01;
const C7_FROB_REL: f64 = 0.20;
const C8_MIN_RUNS: usize = 8;
const C9_REL: f64 = 1e-12;
const C9_RATE: (f64, f64) = (0.02, 0.08);
const C10_SPEEDUP: f64 = 10.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn vp(d: usize) -> DsdeSpec {
    DsdeSpec::uniform(DsdeKind::Vp, 0.0, 0.1, d).unwrap()
}

fn normal_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

fn c_norm(w: &[f64], m: &GaussMoments) -> f64 {
    w.iter().zip(&m.var).map(|(w, v)| w * w * v).sum::<f64>().sqrt()
}

struct QuadCase {
    w1: Vec<f64>,
    b1: f64,
    w2: Vec<f64>,
    b2: f64,
    m: GaussMoments,
    width1: f64,
}

/// Random projections with `|w|_C sqrt(2)` uniform on `(0, 10]`, under the
/// marginal law of a random per-component VP diffusion at a random time.
fn quad_cases() -> Vec<QuadCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    (0..100)
        .map(|_| {
            let d = rng.random_range(1..=8);
            let b: Vec<f64> = (0..d).map(|_| rng.random_range(0.05..2.0)).collect();
            let spec = DsdeSpec::new(DsdeKind::Vp, rng.random_range(0.0..1.0), b).unwrap();
            let t = rng.random_range(0.05..1.0);
            let x0 = normal_vec(&mut rng, d);
            let m = spec.marginal_moments(t, &x0).unwrap();
            let draw = |rng: &mut ChaCha8Rng| {
                let w = normal_vec(rng, d);
                let target = C1_WIDTH_MAX * (1.0 - rng.random::<f64>());
                let s = target / (std::f64::consts::SQRT_2 * c_norm(&w, &m));
                (w.iter().map(|v| v * s).collect::<Vec<f64>>(), target)
            };
            let (w1, width1) = draw(&mut rng);
            let (w2, _) = draw(&mut rng);
            QuadCase {
                w1,
                b1: rng.random_range(-2.0..2.0),
                w2,
                b2: rng.random_range(-2.0..2.0),
                m,
                width1,
            }
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| a * b).sum()
}

/// `E[softplus(mean + sd Z)]` by the trapezoid rule on 10^6 points.
fn trapezoid_i1(mean: f64, sd: f64) -> f64 {
    let n = 1_000_000;
    let (lo, hi) = (-12.0, 12.0);
    let h = (hi - lo) / n as f64;
    let f = |z: f64| Softplus.value(mean + sd * z) * (-0.5 * z * z).exp();
    let mut s = 0.5 * (f(lo) + f(hi));
    for i in 1..n {
        s += f(lo + i as f64 * h);
    }
    s * h / (2.0 * std::f64::consts::PI).sqrt()
}

/// Monte Carlo `E[softplus(<w1|X> + b1) softplus(<w2|X> + b2)]` with its
/// standard error, drawing `X` in full dimension.
fn mc_i2(case: &QuadCase, n: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd: Vec<f64> = case.m.var.iter().map(|v| v.sqrt()).collect();
    let d = sd.len();
    let mut x = vec![0.0; d];
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..n {
        for k in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            x[k] = case.m.mean[k] + sd[k] * z;
        }
        let v = Softplus.value(dot(&case.w1, &x) + case.b1) * Softplus.value(dot(&case.w2, &x) + case.b2);
        s += v;
        s2 += v * v;
    }
    let mean = s / n as f64;
    let var = (s2 / n as f64 - mean * mean) * n as f64 / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

fn criterion_1(cases: &[QuadCase]) -> Outcome {
    let gh = GaussHermite::new(8).unwrap();
    let (mut ok1, mut ok2) = (0, 0);
    let mut worst: f64 = 0.0;
    let mut first_bad_width = f64::INFINITY;
    let mut worst_z: f64 = 0.0;
    for (c, case) in cases.iter().enumerate() {
        let q = int_i1(&gh, &case.w1, case.b1, &case.m).unwrap();
        let mean = dot(&case.w1, &case.m.mean) + case.b1;
        let oracle = trapezoid_i1(mean, c_norm(&case.w1, &case.m));
        let rel = (q - oracle).abs() / oracle.abs();
        worst = worst.max(rel);
        if rel <= C1_I1_REL {
            ok1 += 1;
        } else {
            first_bad_width = first_bad_width.min(case.width1);
        }
        let q2 = int_i2(&gh, &case.w1, case.b1, &case.w2, case.b2, &case.m).unwrap();
        let (mc, se) = mc_i2(case, 1_000_000, 7000 + c as u64);
        let z = (q2 - mc).abs() / se;
        worst_z = worst_z.max(z);
        if z <= C1_I2_SE {
            ok2 += 1;
        }
    }
    Outcome {
        pass: ok1 == cases.len() && ok2 == cases.len(),
        detail: format!(
            "I1 within {C1_I1_REL:e} rel in {ok1}/{n} (worst {worst:.2e}, smallest failing width {first_bad_width:.2}); \
             I2 within {C1_I2_SE} SE in {ok2}/{n} (worst {worst_z:.1} SE)",
            n = cases.len()
        ),
    }
}

fn criterion_2(cases: &[QuadCase]) -> Outcome {
    let lo = GaussHermite::new(4).unwrap();
    let hi = GaussHermite::new(16).unwrap();
    let (mut ok, mut worst) = (0, 0.0f64);
    let mut within_2 = (0, 0);
    for case in cases {
        let r1 = {
            let a = int_i1(&lo, &case.w1, case.b1, &case.m).unwrap();
            let b = int_i1(&hi, &case.w1, case.b1, &case.m).unwrap();
            (a - b).abs() / b.abs()
        };
        let r2 = {
            let a = int_i2(&lo, &case.w1, case.b1, &case.w2, case.b2, &case.m).unwrap();
            let b = int_i2(&hi, &case.w1, case.b1, &case.w2, case.b2, &case.m).unwrap();
            (a - b).abs() / b.abs()
        };
        let r = r1.max(r2);
        worst = worst.max(r);
        if r < C2_REL {
            ok += 1;
        }
        if case.width1 <= 2.0 {
            within_2.1 += 1;
            if r1 < C2_REL {
                within_2.0 += 1;
            }
        }
    }
    Outcome {
        pass: ok == cases.len(),
        detail: format!(
            "D=4 vs D=16 below {C2_REL:e} in {ok}/{} (worst {worst:.2e}); I1 passes {}/{} of cases with width <= 2",
            cases.len(),
            within_2.0,
            within_2.1
        ),
    }
}

fn random_theta(d: usize, h: usize, rng: &mut ChaCha8Rng) -> ScoreParams {
    let mut th = ScoreParams::init(d, h, rng.random()).unwrap();
    for v in th.b_mut() {
        *v = 0.5 * rng.sample::<f64, _>(StandardNormal);
    }
    for v in th.d_out_mut() {
        *v = 0.5 * rng.sample::<f64, _>(StandardNormal);
    }
    th
}

fn random_data(n: usize, d: usize, rng: &mut ChaCha8Rng) -> ReturnsDataset {
    ReturnsDataset::from_rows((0..n).map(|_| normal_vec(rng, d)).collect()).unwrap()
}

/// Returns the outcome and the median relative gap `|quad - mc| / quad`.
fn criterion_3() -> (Outcome, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let spec = vp(5);
    let cfg = ObjectiveConfig::default();
    let obj = DsmObjective::new(&spec, &cfg).unwrap();
    let mut ok = 0;
    let mut gaps = Vec::new();
    let mut worst: f64 = 0.0;
    for c in 0..100u64 {
        let th = random_theta(5, 4, &mut rng);
        let ds = random_data(16, 5, &mut rng);
        let q = obj.value(&th, &ds, None).unwrap();
        let mc = mc_oracle(&th, &ds, &spec, &cfg, 100_000, c).unwrap();
        let z = (q - mc.estimate).abs() / mc.stderr;
        worst = worst.max(z);
        if z <= C3_SE {
            ok += 1;
        }
        gaps.push((q - mc.estimate).abs() / q.abs());
    }
    gaps.sort_by(f64::total_cmp);
    let median = 0.5 * (gaps[49] + gaps[50]);
    (
        Outcome {
            pass: ok >= C3_MIN_PASS,
            detail: format!("{ok}/100 within {C3_SE} SE (worst {worst:.2} SE); median relative gap {median:.2e}"),
        },
        median,
    )
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let spec = vp(3);
    let obj = DsmObjective::new(&spec, &ObjectiveConfig::default()).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..25 {
        let th = random_theta(3, 4, &mut rng);
        let ds = random_data(8, 3, &mut rng);
        let (_, g) = obj.value_and_gradient(&th, &ds, None).unwrap();
        let analytic: Vec<f64> = g.values().copied().collect();
        let base: Vec<f64> = th.values().copied().collect();
        for (i, &v) in base.iter().enumerate() {
            let h = 1e-5 * (1.0 + v.abs());
            let shifted = |delta: f64| {
                let mut p = th.clone();
                *p.values_mut().nth(i).unwrap() = v + delta;
                obj.value(&p, &ds, None).unwrap()
            };
            let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
            let rel = (analytic[i] - fd).abs() / fd.abs().max(analytic[i].abs()).max(C4_FLOOR);
            worst = worst.max(rel);
        }
    }
    Outcome {
        pass: worst < C4_REL,
        detail: format!("max relative error {worst:.2e} over 25 configurations"),
    }
}

fn moments(xs: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    (mean, var, m4)
}

fn criterion_5() -> Outcome {
    let spec = vp(1);
    let cfg = PathConfig {
        steps: 256,
        seed: 5,
        ..Default::default()
    };
    let n = 10_000;
    let ends: Vec<f64> = (0..n)
        .map(|k| {
            let mut noise = GaussianNoise(rng::stream(cfg.seed, Domain::Forward, k));
            euler_forward(&spec, &[1.0], &cfg, cfg.steps - 1, &mut noise).unwrap()[0]
        })
        .collect();
    let t = cfg.time(cfg.steps - 1);
    let exact = spec.transition_moments(0.0, t, &[1.0]).unwrap();
    let (mean, var, m4) = moments(&ends);
    let z_mean = (mean - exact.mean[0]) / (var / n as f64).sqrt();
    let z_var = (var - exact.var[0]) / ((m4 - var * var) / n as f64).sqrt();

    let exact_cfg = PathConfig {
        scheme: ForwardScheme::ExactTransition,
        seed: 55,
        ..cfg.clone()
    };
    let spec2 = vp(2);
    let draws: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            let mut noise = GaussianNoise(rng::stream(exact_cfg.seed, Domain::Forward, k));
            forward_path(&spec2, &[1.0, -2.0], &exact_cfg, &mut noise).unwrap()
        })
        .collect();
    let mut normal_ok = true;
    let mut normal_detail = Vec::new();
    for k in 0..2 {
        let col: Vec<f64> = draws.iter().map(|r| r[k]).collect();
        let (m, v, _) = moments(&col);
        normal_ok &= m.abs() <= C5_MEAN_ABS && (C5_VAR_BAND.0..=C5_VAR_BAND.1).contains(&v);
        normal_detail.push(format!("({m:.3}, {v:.3})"));
    }
    Outcome {
        pass: z_mean.abs() <= C5_SE && z_var.abs() <= C5_SE && normal_ok,
        detail: format!(
            "EM at t_(K-1): mean {mean:.4} vs {:.4} ({z_mean:+.2} SE), var {var:.4} vs {:.4} ({z_var:+.2} SE); \
             exact terminal (mean, var) {}",
            exact.mean[0],
            exact.var[0],
            normal_detail.join(" ")
        ),
    }
}

fn criterion_6() -> Outcome {
    let spec = vp(2);
    let mu0 = vec![0.5, -1.0];
    let v0 = vec![0.25, 1.5];
    let score = GaussianScore::new(mu0.clone(), v0.clone(), &spec).unwrap();
    let cfg = PathConfig {
        seed: 6,
        ..Default::default()
    };
    let n = 10_000;
    let mut data_rng = ChaCha8Rng::seed_from_u64(66);
    let out: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            let x0: Vec<f64> = (0..2)
                .map(|j| mu0[j] + v0[j].sqrt() * data_rng.sample::<f64, _>(StandardNormal))
                .collect();
            let mut fwd = GaussianNoise(rng::stream(cfg.seed, Domain::Forward, k));
            let x1 = forward_path(&spec, &x0, &cfg, &mut fwd).unwrap();
            let mut rev = GaussianNoise(rng::stream(cfg.seed, Domain::Reverse, k));
            reverse_path(&spec, &score, &x1, &cfg, &mut rev).unwrap()
        })
        .collect();
    let mut pass = true;
    let mut parts = Vec::new();
    for j in 0..2 {
        let col: Vec<f64> = out.iter().map(|r| r[j]).collect();
        let (m, v, _) = moments(&col);
        pass &= (m - mu0[j]).abs() <= C6_MEAN_ABS && (v / v0[j] - 1.0).abs() <= C6_VAR_REL;
        parts.push(format!("mean {m:.3} (target {}), var {v:.3} (target {})", mu0[j], v0[j]));
    }
    Outcome {
        pass,
        detail: parts.join("; "),
    }
}

fn correlated_gaussian(n: usize, std: [f64; 2], rho: f64, seed: u64) -> ReturnsDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..n)
        .map(|_| {
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            vec![std[0] * z1, std[1] * (rho * z1 + (1.0 - rho * rho).sqrt() * z2)]
        })
        .collect();
    ReturnsDataset::from_rows(rows).unwrap()
}

fn paper_objective() -> ObjectiveConfig {
    ObjectiveConfig {
        lambda0: 1.0,
        gh_order: 4,
        simpson_subintervals: 8,
        ..Default::default()
    }
}

fn frobenius_rel(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let sa = sample_covariance(a).unwrap();
    let sb = sample_covariance(b).unwrap();
    (sa - &sb).norm() / sb.norm()
}

fn criterion_7() -> Outcome {
    let ds = correlated_gaussian(512, [0.01, 0.02], 0.6, 7);
    let spec = vp(2);
    let tcfg = TrainConfig {
        epochs: 2000,
        seed: 7,
        ..Default::default()
    };
    let fit = match train(&ds, &spec, &paper_objective(), &tcfg) {
        Ok(fit) => fit,
        Err(e) => return failed(format!("training failed: {e}")),
    };
    let loss = format!(
        "loss {:.4e} -> {:.4e}",
        fit.loss_history[0],
        fit.loss_history.last().copied().unwrap_or(f64::NAN)
    );
    let pcfg = PathConfig {
        seed: 77,
        ..Default::default()
    };
    let set = match NetworkScore::new(&fit.theta, &spec)
        .and_then(|net| generate_scenarios(&ds, &spec, &net, 2048, &pcfg))
    {
        Ok(set) => set,
        Err(e) => return failed(format!("{loss}; generation failed: {e}")),
    };
    let g = equal_weights(2);
    let hp = portfolio_project(ds.returns(), &g).unwrap();
    let sp = portfolio_project(&set.samples, &g).unwrap();
    let p = cvm_pvalue(&hp, &sp, 1000, 7).unwrap();
    let frob = frobenius_rel(&set.samples, ds.returns());
    let sc = sample_covariance(&set.samples).unwrap();
    Outcome {
        pass: p >= C7_P_MIN && frob <= C7_FROB_REL,
        detail: format!(
            "{loss}; CvM p {p:.4}; covariance rel. Frobenius error {frob:.3}; \
             synthetic stds ({:.4}, {:.4}), corr {:.3}",
            sc[(0, 0)].sqrt(),
            sc[(1, 1)].sqrt(),
            sc[(0, 1)] / (sc[(0, 0)] * sc[(1, 1)]).sqrt()
        ),
    }
}

fn failed(detail: String) -> Outcome {
    Outcome { pass: false, detail }
}

/// One-factor returns: `r = beta f + e`, daily-return scale.
fn factor_returns(n: usize, d: usize, seed: u64) -> ReturnsDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta: Vec<f64> = (0..d).map(|_| rng.random_range(0.5..1.5)).collect();
    let idio: Vec<f64> = (0..d).map(|_| rng.random_range(0.003..0.008)).collect();
    let rows = (0..n)
        .map(|_| {
            let f = 0.01 * rng.sample::<f64, _>(StandardNormal);
            (0..d)
                .map(|k| beta[k] * f + idio[k] * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    ReturnsDataset::from_rows(rows).unwrap()
}

fn criterion_8() -> Outcome {
    let spec = vp(8);
    let (mut lower, mut shrink) = (0, 0);
    let mut rows = Vec::new();
    for run in 0..10u64 {
        let ds = factor_returns(64, 8, 800 + run);
        let tcfg = TrainConfig {
            epochs: 1000,
            seed: run,
            ..Default::default()
        };
        let pcfg = PathConfig {
            seed: 8000 + run,
            ..Default::default()
        };
        let set = match train(&ds, &spec, &paper_objective(), &tcfg).and_then(|fit| {
            let net = NetworkScore::new(&fit.theta, &spec)?;
            generate_scenarios(&ds, &spec, &net, 4096, &pcfg)
        }) {
            Ok(set) => set,
            Err(e) => {
                rows.push(format!("error({e})"));
                continue;
            }
        };
        let k_hist = condition_number(&sample_covariance(ds.returns()).unwrap()).unwrap();
        let k_4096 = condition_number(&sample_covariance(&set.samples).unwrap()).unwrap();
        let k_512 = condition_number(&sample_covariance(&set.samples[..512]).unwrap()).unwrap();
        lower += usize::from(k_4096 < k_hist);
        shrink += usize::from(k_4096 <= k_512);
        rows.push(format!("{k_hist:.1}/{k_512:.1}/{k_4096:.1}"));
    }
    Outcome {
        pass: lower >= C8_MIN_RUNS && shrink >= C8_MIN_RUNS,
        detail: format!(
            "kappa_synth < kappa_hist in {lower}/10, kappa(4096) <= kappa(512) in {shrink}/10; \
             hist/512/4096 per run: {}",
            rows.join(" ")
        ),
    }
}

fn ecdf_cvm(p: &[f64], q: &[f64]) -> f64 {
    let (n, m) = (p.len() as f64, q.len() as f64);
    let f = |s: &[f64], x: f64| s.iter().filter(|&&v| v <= x).count() as f64 / s.len() as f64;
    n * m / (n + m).powi(2) * p.iter().chain(q).map(|&x| (f(p, x) - f(q, x)).powi(2)).sum::<f64>()
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let n = rng.random_range(1..=6);
        let p = normal_vec(&mut rng, n);
        let q = normal_vec(&mut rng, n);
        let a = cvm_statistic(&p, &q).unwrap();
        let b = ecdf_cvm(&p, &q);
        worst = worst.max((a - b).abs() / b.abs().max(1e-300));
    }

    let mut exact_ok = true;
    for _ in 0..50 {
        let p = normal_vec(&mut rng, 3);
        let q = normal_vec(&mut rng, 3);
        let pooled: Vec<f64> = p.iter().chain(&q).copied().collect();
        let obs = ecdf_cvm(&p, &q);
        let mut hits = 0;
        for mask in 0u32..64 {
            if mask.count_ones() != 3 {
                continue;
            }
            let x: Vec<f64> = (0..6).filter(|i| mask & (1 << i) != 0).map(|i| pooled[i]).collect();
            let y: Vec<f64> = (0..6).filter(|i| mask & (1 << i) == 0).map(|i| pooled[i]).collect();
            if ecdf_cvm(&x, &y) >= obs * (1.0 - 1e-12) {
                hits += 1;
            }
        }
        exact_ok &= cvm_pvalue_exhaustive(&p, &q).unwrap() == hits as f64 / 20.0;
    }

    let reps = 200;
    let rejections = (0..reps)
        .filter(|&r| {
            let p = normal_vec(&mut rng, 50);
            let q = normal_vec(&mut rng, 50);
            cvm_pvalue(&p, &q, 999, r).unwrap() <= 0.05
        })
        .count();
    let rate = rejections as f64 / reps as f64;
    Outcome {
        pass: worst <= C9_REL && exact_ok && (C9_RATE.0..=C9_RATE.1).contains(&rate),
        detail: format!(
            "rank form vs ECDF max rel diff {worst:.1e}; exhaustive p-values match: {exact_ok}; \
             null rejection rate at 0.05: {rate:.3}"
        ),
    }
}

fn criterion_10(rel_gap: f64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (d, h) = (33, 16);
    let spec = vp(d);
    let cfg = paper_objective();
    let obj = DsmObjective::new(&spec, &cfg).unwrap();
    let th = random_theta(d, h, &mut rng);
    let ds = random_data(256, d, &mut rng);

    let mut quad_time = f64::INFINITY;
    let mut q = 0.0;
    for _ in 0..3 {
        let start = Instant::now();
        q = obj.value(&th, &ds, None).unwrap();
        quad_time = quad_time.min(start.elapsed().as_secs_f64());
    }

    // Pilot run, then the sample size whose standard error reaches the gap.
    let pilot_n = 200;
    let start = Instant::now();
    let pilot = obj.mc_estimate(&th, &ds, pilot_n, 1).unwrap();
    let pilot_time = start.elapsed().as_secs_f64();
    let target_se = rel_gap * q.abs();
    let needed = ((pilot_n as f64) * (pilot.stderr / target_se).powi(2)).ceil() as usize;
    let budget = (60.0 / pilot_time * pilot_n as f64) as usize;
    let run_n = needed.clamp(pilot_n, budget.max(pilot_n));
    let start = Instant::now();
    let mc = obj.mc_estimate(&th, &ds, run_n, 2).unwrap();
    let mc_time = start.elapsed().as_secs_f64();
    let reached = mc.stderr <= target_se;
    // Below the needed size the measured time is a lower bound.
    let speedup = mc_time / quad_time;
    Outcome {
        pass: speedup >= C10_SPEEDUP,
        detail: format!(
            "quadrature {quad_time:.3}s (value {q:.5}); MC with {run_n} draws per node {mc_time:.2}s, stderr {:.2e} \
             (target {target_se:.2e}, needs ~{needed}, reached: {reached}); speedup {speedup:.0}x",
            mc.stderr
        ),
    }
}

fn report(id: usize, name: &str, start: Instant, outcome: &Outcome) {
    println!(
        "criterion {id:>2} [{name}]: {} ({:.1}s) {}",
        if outcome.pass { "PASS" } else { "FAIL" },
        start.elapsed().as_secs_f64(),
        outcome.detail
    );
}

fn main() {
    let mut results = Vec::new();
    let mut run = |id: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let out = std::panic::catch_unwind(std::panic::AssertUnwindSafe(&mut *f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            failed(format!("panicked: {msg}"))
        });
        report(id, name, start, &out);
        results.push((id, out.pass));
    };

    let cases = quad_cases();
    run(1, "quadrature correctness", &mut || criterion_1(&cases));
    run(2, "D=4 adequacy", &mut || criterion_2(&cases));
    let mut gap = 0.0;
    run(3, "objective equivalence", &mut || {
        let (out, g) = criterion_3();
        gap = g;
        out
    });
    run(4, "gradient exactness", &mut criterion_4);
    run(5, "SDE moment fidelity", &mut criterion_5);
    run(6, "Gaussian end-to-end", &mut criterion_6);
    run(7, "round-trip recovery", &mut criterion_7);
    run(8, "condition-number regularization", &mut criterion_8);
    run(9, "CvM implementation", &mut criterion_9);
    run(10, "quadrature vs Monte Carlo speed", &mut || criterion_10(gap));

    let failed: Vec<String> = results.iter().filter(|r| !r.1).map(|r| r.0.to_string()).collect();
    println!(
        "acceptance: {}/{} criteria passed{}",
        results.len() - failed.len(),
        results.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!("; failed: {}", failed.join(", "))
        }
    );
    if !failed.is_empty() && std::env::var_os("SCOREGEN_STRICT_ACCEPTANCE").is_some_and(|v| v == "1") {
        std::process::exit(1);
    }
}
