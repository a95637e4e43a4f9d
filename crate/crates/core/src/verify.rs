//! Falsifiable checks: sampled midpoint convexity, gradients against central
//! differences, and the max-affine ↔ ICNN constructions.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::icnn::IcnnModel;
use crate::icrnn::IcrnnModel;
use crate::maxaffine::{compile_to_icnn, enumerate_pieces, MaxAffine};
use crate::numeric::{finite_difference_gradient_scaled, relative_error, RngStream};

/// Samples per independent random stream, so results do not depend on thread count.
const CHUNK: usize = 1024;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Offending {
    pub index: usize,
    pub point: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub other: Option<Vec<f64>>,
    pub component: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub suite: String,
    pub target: String,
    pub passed: bool,
    pub samples: usize,
    pub tolerance: f64,
    pub max_violation: f64,
    pub offending: Option<Offending>,
    /// Location of a negative constrained weight, if any.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_issue: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl VerifyReport {
    fn new(suite: &str, target: &str, samples: usize, tolerance: f64) -> Self {
        Self {
            suite: suite.into(),
            target: target.into(),
            passed: true,
            samples,
            tolerance,
            max_violation: 0.0,
            offending: None,
            weight_issue: None,
            notes: Vec::new(),
        }
    }

    fn absorb(&mut self, v: f64, off: Offending) {
        if v > self.max_violation || (v.is_nan() && !self.max_violation.is_nan()) {
            self.max_violation = v;
            self.offending = Some(off);
        }
    }

    fn finish(mut self) -> Self {
        self.passed = self.passed && self.max_violation <= self.tolerance && self.weight_issue.is_none();
        self
    }

    pub fn line(&self) -> String {
        format!(
            "{} {} on {}: max violation {:.3e} (tol {:.1e}, {} samples)",
            if self.passed { "PASS" } else { "FAIL" },
            self.suite,
            self.target,
            self.max_violation,
            self.tolerance,
            self.samples
        )
    }
}

fn chunks(samples: usize) -> Vec<(usize, usize)> {
    (0..samples.div_ceil(CHUNK))
        .map(|c| (c * CHUNK, ((c + 1) * CHUNK).min(samples)))
        .collect()
}

/// Largest `f((a+b)/2) - (f(a)+f(b))/2` over sampled pairs in `[lo, hi]^dim`,
/// checked per output component.
pub fn midpoint_check<F>(dim: usize, lo: f64, hi: f64, samples: usize, seed: u64, tol: f64, f: F) -> Result<VerifyReport>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    if !(lo < hi) {
        return Err(invalid("sampling box is empty"));
    }
    let parts: Vec<VerifyReport> = chunks(samples)
        .into_par_iter()
        .enumerate()
        .map(|(c, (s, e))| -> Result<VerifyReport> {
            let mut rng = RngStream::new(seed, c as u64);
            let mut r = VerifyReport::new("convexity", "", 0, tol);
            for i in s..e {
                let a: Vec<f64> = (0..dim).map(|_| rng.uniform(lo, hi)).collect();
                let b: Vec<f64> = (0..dim).map(|_| rng.uniform(lo, hi)).collect();
                let m: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
                let (fa, fb, fm) = (f(&a)?, f(&b)?, f(&m)?);
                for k in 0..fm.len() {
                    let v = fm[k] - 0.5 * (fa[k] + fb[k]);
                    r.absorb(
                        v,
                        Offending {
                            index: i,
                            point: a.clone(),
                            other: Some(b.clone()),
                            component: k,
                        },
                    );
                }
            }
            Ok(r)
        })
        .collect::<Result<_>>()?;
    let mut out = VerifyReport::new("convexity", "", samples, tol);
    out.max_violation = f64::NEG_INFINITY;
    for p in parts {
        if let Some(o) = p.offending {
            out.absorb(p.max_violation, o);
        }
    }
    if out.max_violation < 0.0 {
        out.max_violation = out.max_violation.max(0.0);
    }
    Ok(out.finish())
}

/// Midpoint convexity of an ICNN over `[-2, 2]^arg_dim`, plus a weight-sign scan.
pub fn convexity_icnn(model: &IcnnModel, samples: usize, seed: u64) -> Result<VerifyReport> {
    let mut r = midpoint_check(model.arg_dim(), -2.0, 2.0, samples, seed, 1e-8, |x| model.forward(x))?;
    r.target = "icnn".into();
    if let Some((l, which, i, j, v)) = model.most_negative_weight() {
        r.weight_issue = Some(format!("layer {l} {which}[{i}][{j}] = {v:e}"));
    }
    Ok(r.finish())
}

/// Midpoint convexity of every output of an unrolled ICRNN in the flattened
/// sequence of `len` frames.
pub fn convexity_icrnn(model: &IcrnnModel, len: usize, samples: usize, seed: u64) -> Result<VerifyReport> {
    if len == 0 {
        return Err(invalid("sequence length must be positive"));
    }
    let d = model.arg_dim();
    let mut r = midpoint_check(len * d, -2.0, 2.0, samples, seed, 1e-8, |x| {
        let frames: Vec<Vec<f64>> = x.chunks(d).map(<[f64]>::to_vec).collect();
        Ok(model.outputs(&frames)?.concat())
    })?;
    r.target = format!("icrnn (sequence length {len})");
    if let Some((name, i, j, v)) = model.most_negative_weight() {
        r.weight_issue = Some(format!("{name}[{i}][{j}] = {v:e}"));
    }
    Ok(r.finish())
}

/// Sublevel-set convexity: pairs with `f <= level` at both ends must have
/// `f(midpoint) <= level + tol`. Rejection-samples until `samples` pairs are kept.
pub fn sublevel_check(model: &IcnnModel, level: f64, lo: f64, hi: f64, samples: usize, seed: u64) -> Result<VerifyReport> {
    let mut rng = RngStream::new(seed, 0);
    let mut r = VerifyReport::new("sublevel", "icnn", samples, 1e-8);
    let mut kept = 0;
    let d = model.arg_dim();
    let mut tries = 0usize;
    while kept < samples {
        tries += 1;
        if tries > samples.saturating_mul(1000).max(1000) {
            return Err(invalid(format!("sublevel set {{f <= {level}}} too small to sample")));
        }
        let a: Vec<f64> = (0..d).map(|_| rng.uniform(lo, hi)).collect();
        let b: Vec<f64> = (0..d).map(|_| rng.uniform(lo, hi)).collect();
        if model.eval_scalar(&a)? > level || model.eval_scalar(&b)? > level {
            continue;
        }
        let m: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
        r.absorb(
            model.eval_scalar(&m)? - level,
            Offending {
                index: kept,
                point: a,
                other: Some(b),
                component: 0,
            },
        );
        kept += 1;
    }
    r.max_violation = r.max_violation.max(0.0);
    Ok(r.finish())
}

/// Relative step: each coordinate moves by `FD_STEP * max(1, |x_i|)`.
const FD_STEP: f64 = 1e-5;
const FD_FLOOR: f64 = 1e-6;
/// Central differences straddle a ReLU kink when a pre-activation is this close
/// to zero, so such samples are redrawn.
const KINK_MARGIN: f64 = 1e-3;
const MAX_REDRAWS: usize = 1000;

/// Draws from `sample` until `smooth` accepts, giving up after [`MAX_REDRAWS`].
fn draw_smooth<T>(mut sample: impl FnMut() -> T, smooth: impl Fn(&T) -> Result<bool>) -> Result<T> {
    let mut v = sample();
    for _ in 0..MAX_REDRAWS {
        if smooth(&v)? {
            break;
        }
        v = sample();
    }
    Ok(v)
}

fn grad_report(name: &str, target: &str, points: usize, errs: Vec<(f64, Vec<f64>)>) -> VerifyReport {
    let mut r = VerifyReport::new(name, target, points, 1e-4);
    for (i, (e, p)) in errs.into_iter().enumerate() {
        r.absorb(
            e,
            Offending {
                index: i,
                point: p,
                other: None,
                component: 0,
            },
        );
    }
    r.finish()
}

/// Input and parameter gradients of an ICNN against central differences at
/// `points` random inputs (parameter checks use a batch of 4 random pairs).
/// Inputs within [`KINK_MARGIN`] of a ReLU kink are redrawn.
pub fn gradients_icnn(model: &IcnnModel, points: usize, seed: u64) -> Result<Vec<VerifyReport>> {
    let d = model.arg_dim();
    let o = model.output_dim();
    let per_point = |i: usize| -> Result<((f64, Vec<f64>), (f64, Vec<f64>))> {
        let mut rng = RngStream::new(seed, i as u64);
        let smooth = |x: &Vec<f64>| Ok(model.kink_distance(x)? > KINK_MARGIN);
        let x: Vec<f64> = draw_smooth(|| (0..d).map(|_| rng.uniform(-2.0, 2.0)).collect(), smooth)?;
        let w: Vec<f64> = (0..o).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let (_, g) = model.input_vjp(&x, &w)?;
        let fd = finite_difference_gradient_scaled(
            |p| model.forward(p).map(|y| y.iter().zip(&w).map(|(a, b)| a * b).sum()).unwrap_or(f64::NAN),
            &x,
            FD_STEP,
        )?;
        let e_in = relative_error(&g, &fd, FD_FLOOR);
        let xs: Vec<Vec<f64>> = (0..4)
            .map(|_| draw_smooth(|| (0..d).map(|_| rng.uniform(-2.0, 2.0)).collect(), smooth))
            .collect::<Result<_>>()?;
        let ys: Vec<Vec<f64>> = (0..4).map(|_| (0..o).map(|_| rng.uniform(-1.0, 1.0)).collect()).collect();
        let (_, gp) = model.grad_params(&xs, &ys)?;
        let theta = model.params();
        let fdp = finite_difference_gradient_scaled(
            |p| {
                let mut m = model.clone();
                m.set_params(p).and_then(|_| m.mse(&xs, &ys)).unwrap_or(f64::NAN)
            },
            &theta,
            FD_STEP,
        )?;
        Ok(((e_in, x.clone()), (relative_error(&gp, &fdp, FD_FLOOR), x)))
    };
    let res: Vec<_> = (0..points).into_par_iter().map(per_point).collect::<Result<_>>()?;
    let (a, b): (Vec<_>, Vec<_>) = res.into_iter().unzip();
    Ok(vec![
        grad_report("gradients/input", "icnn", points, a),
        grad_report("gradients/params", "icnn", points, b),
    ])
}

/// Input-sequence and full-BPTT parameter gradients of an ICRNN on random
/// sequences of `len` frames, redrawn when they pass within [`KINK_MARGIN`] of a kink.
pub fn gradients_icrnn(model: &IcrnnModel, len: usize, points: usize, seed: u64) -> Result<Vec<VerifyReport>> {
    if len == 0 {
        return Err(invalid("sequence length must be positive"));
    }
    let d = model.arg_dim();
    let o = model.output_dim();
    let per_point = |i: usize| -> Result<((f64, Vec<f64>), (f64, Vec<f64>))> {
        let mut rng = RngStream::new(seed, i as u64);
        let smooth = |f: &Vec<Vec<f64>>| Ok(model.forward(f, None)?.kink_distance() > KINK_MARGIN);
        let mut seq = || -> Vec<Vec<f64>> { (0..len).map(|_| (0..d).map(|_| rng.uniform(-2.0, 2.0)).collect()).collect() };
        let frames = draw_smooth(&mut seq, smooth)?;
        let other = draw_smooth(&mut seq, smooth)?;
        let w: Vec<Vec<f64>> = (0..len).map(|_| (0..o).map(|_| rng.uniform(-1.0, 1.0)).collect()).collect();
        let flat = frames.concat();
        let (_, g) = model.input_vjp(&frames, &w)?;
        let fd = finite_difference_gradient_scaled(
            |x| {
                let fr: Vec<Vec<f64>> = x.chunks(d).map(<[f64]>::to_vec).collect();
                model
                    .outputs(&fr)
                    .map(|ys| ys.iter().zip(&w).flat_map(|(y, w)| y.iter().zip(w).map(|(a, b)| a * b)).sum())
                    .unwrap_or(f64::NAN)
            },
            &flat,
            FD_STEP,
        )?;
        let e_in = relative_error(&g.concat(), &fd, FD_FLOOR);
        let seqs = vec![frames.clone(), other];
        let tg: Vec<Vec<Vec<f64>>> = (0..2)
            .map(|_| (0..len).map(|_| (0..o).map(|_| rng.uniform(-1.0, 1.0)).collect()).collect())
            .collect();
        let (_, gp) = model.bptt(&seqs, &tg, None)?;
        let fdp = finite_difference_gradient_scaled(
            |p| {
                let mut m = model.clone();
                m.set_params(p).and_then(|_| m.bptt(&seqs, &tg, None)).map(|(l, _)| l).unwrap_or(f64::NAN)
            },
            &model.params(),
            FD_STEP,
        )?;
        Ok(((e_in, flat.clone()), (relative_error(&gp, &fdp, FD_FLOOR), flat)))
    };
    let res: Vec<_> = (0..points).into_par_iter().map(per_point).collect::<Result<_>>()?;
    let (a, b): (Vec<_>, Vec<_>) = res.into_iter().unzip();
    Ok(vec![
        grad_report("gradients/input", "icrnn", points, a),
        grad_report("gradients/bptt", "icrnn", points, b),
    ])
}

/// Max |compiled - reference| of a max-affine function on `points` samples of
/// `[-3, 3]^d`, together with the ReLU count check.
pub fn check_compiled(m: &MaxAffine, points: usize, seed: u64) -> Result<(f64, usize, Option<Vec<f64>>)> {
    let net = compile_to_icnn(m);
    let mut rng = RngStream::new(seed, 0);
    let mut worst = 0.0;
    let mut at = None;
    for _ in 0..points {
        let x: Vec<f64> = (0..m.dim()).map(|_| rng.uniform(-3.0, 3.0)).collect();
        let e = (net.eval_scalar(&x)? - m.eval(&x)?).abs();
        if e > worst || e.is_nan() {
            worst = e;
            at = Some(x);
        }
    }
    Ok((worst, net.relu_count(), at))
}

/// Compiles `instances` random max-affine functions (K ≤ `max_k`, d ≤ `max_d`)
/// and checks exact agreement plus `K - 1` ReLUs.
pub fn theorem1_suite(instances: usize, max_k: usize, max_d: usize, points: usize, seed: u64) -> Result<VerifyReport> {
    if max_k == 0 || max_d == 0 {
        return Err(invalid("K and d bounds must be positive"));
    }
    let res: Vec<(usize, usize, f64, usize, Option<Vec<f64>>)> = (0..instances)
        .into_par_iter()
        .map(|i| -> Result<_> {
            let mut rng = RngStream::new(seed, i as u64);
            let k = 1 + rng.index(max_k);
            let d = 1 + rng.index(max_d);
            let m = MaxAffine::random(k, d, &mut rng)?;
            let (err, relus, at) = check_compiled(&m, points, seed ^ (i as u64 + 1).wrapping_mul(0x9e37_79b9))?;
            Ok((k, d, err, relus, at))
        })
        .collect::<Result<_>>()?;
    let mut r = VerifyReport::new("theorem1", "random max-affine", instances * points, 1e-9);
    for (i, (k, d, err, relus, at)) in res.into_iter().enumerate() {
        if relus != k - 1 {
            r.passed = false;
            r.notes.push(format!("instance {i} (K={k}, d={d}) compiled to {relus} ReLUs"));
        }
        if let Some(p) = at {
            r.absorb(
                err,
                Offending {
                    index: i,
                    point: p,
                    other: None,
                    component: 0,
                },
            );
        }
    }
    Ok(r.finish())
}

/// Evenly spaced grid of about `n` points over `[lo, hi]^d`.
pub fn grid(d: usize, lo: f64, hi: f64, n: usize) -> Vec<Vec<f64>> {
    let per = ((n as f64).powf(1.0 / d.max(1) as f64).round() as usize).max(2);
    let total = per.pow(d as u32);
    (0..total)
        .map(|mut idx| {
            (0..d)
                .map(|_| {
                    let k = idx % per;
                    idx /= per;
                    lo + (hi - lo) * k as f64 / (per - 1) as f64
                })
                .collect()
        })
        .collect()
}

/// One-hidden-layer ICNN of width `k` over `d` inputs with random biases and
/// no output passthrough, the class the enumeration covers.
pub fn random_one_layer(k: usize, d: usize, rng: &mut RngStream) -> Result<IcnnModel> {
    let mut m = IcnnModel::random(0, d, &[k, 1], rng)?;
    let layers = m.layers_mut();
    for b in &mut layers[0].b {
        *b = rng.gaussian(0.0, 1.0);
    }
    if let Some(dm) = &mut layers[1].d {
        dm.data_mut().fill(0.0);
    }
    layers[1].b[0] = rng.gaussian(0.0, 1.0);
    Ok(m)
}

/// Enumerates the pieces of one random width-`k` network per `k`, checking the
/// count `2^k` and agreement on a grid of about `grid_points` points in `[-2, 2]^2`.
pub fn theorem2_suite(ks: &[usize], grid_points: usize, seed: u64) -> Result<VerifyReport> {
    let pts = grid(2, -2.0, 2.0, grid_points);
    let mut r = VerifyReport::new("theorem2", "random one-hidden-layer icnn", ks.len() * pts.len(), 1e-9);
    for (i, &k) in ks.iter().enumerate() {
        let mut rng = RngStream::new(seed, i as u64);
        let net = random_one_layer(k, 2, &mut rng)?;
        let ma = enumerate_pieces(&net)?;
        if ma.len() != 1 << k {
            r.passed = false;
            r.notes.push(format!("K={k}: {} pieces instead of {}", ma.len(), 1u64 << k));
        }
        let errs: Vec<f64> = pts
            .par_iter()
            .map(|x| Ok((net.eval_scalar(x)? - ma.eval(x)?).abs()))
            .collect::<Result<_>>()?;
        for (j, e) in errs.into_iter().enumerate() {
            if e > r.max_violation || e.is_nan() {
                r.absorb(
                    e,
                    Offending {
                        index: i,
                        point: pts[j].clone(),
                        other: None,
                        component: k,
                    },
                );
            }
        }
    }
    Ok(r.finish())
}
