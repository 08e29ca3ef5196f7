//! Analytic gradients against central differences at random interior points.
//!
//! Functions whose graph contains `detach` are checked against a surrogate
//! in plain `f64` that freezes the detached factors at the base point; the
//! fake quantizer is checked against its rounding-free surrogate.
//!
//! Each group records the worst relative error per check name instead of
//! panicking, so callers can report every result.

use std::cell::RefCell;
use std::collections::BTreeMap;

use hqlab::detector::boxes::{giou_tensor, iou_tensor, BoxTensors};
use hqlab::loss::{focal_cls_loss, hiou_loss, reg_loss, task_correlation, tcorr_loss};
use hqlab::quant::{fake_quantize_with_step, lsq_grad_scale, QuantMode, QuantParams};
use hqlab::tensor::{finite_diff_check, reduce, ReduceOp};
use hqlab::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
pub const POINTS: usize = 100;

thread_local! {
    static WORST: RefCell<BTreeMap<String, f64>> = RefCell::new(BTreeMap::new());
}

fn record(name: &str, err: f64) {
    WORST.with(|w| {
        let mut w = w.borrow_mut();
        let e = w.entry(name.to_string()).or_insert(0.0);
        // NaN must register as a failure.
        if !(err <= *e) {
            *e = err;
        }
    });
}

/// Worst relative error of each check run by `group`.
pub fn run(group: fn()) -> BTreeMap<String, f64> {
    WORST.with(|w| w.borrow_mut().clear());
    group();
    WORST.with(|w| std::mem::take(&mut *w.borrow_mut()))
}

/// Checks whose worst error exceeds the tolerance.
pub fn failures(worst: &BTreeMap<String, f64>) -> Vec<(String, f64)> {
    worst.iter().filter(|(_, &e)| !(e <= TOL)).map(|(n, &e)| (n.clone(), e)).collect()
}

pub const GROUPS: [(&str, fn()); 8] = [
    ("unary ops", unary_ops),
    ("binary ops", binary_ops),
    ("reductions and indexing", reductions_and_indexing),
    ("matmul and conv2d", matmul_and_conv),
    ("fake-quantize STE", fake_quantize_ste),
    ("harmony losses", harmony_losses),
    ("focal loss", focal_loss),
    ("box geometry", box_geometry),
];

fn rng(tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0x6772_6164 ^ tag)
}

fn uniform(r: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(lo..hi)).collect()
}

/// Uniform values whose magnitude is at least `margin`.
fn away_from_zero(r: &mut ChaCha8Rng, n: usize, hi: f64, margin: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m = r.random_range(margin..hi);
            if r.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect()
}

/// `Σ w ⊙ out` with fixed random weights, so the whole Jacobian is exercised.
fn weighted(out: Tensor, w: &[f64]) -> Result<Tensor> {
    Ok(out.mul(&Tensor::new(w.to_vec(), out.shape())?)?.sum_all())
}

fn check<F>(name: &str, x: &[f64], shape: &[usize], f: F)
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let r = finite_diff_check(f, x, shape, STEP, TOL).unwrap();
    record(name, r.max_rel_error);
}

/// Implementation gradient vs central differences of `surrogate`.
fn check_surrogate<F, S>(name: &str, x: &[f64], shape: &[usize], f: F, surrogate: S)
where
    F: Fn(&Tensor) -> Result<Tensor>,
    S: Fn(&[f64]) -> f64,
{
    let leaf = Tensor::param(x.to_vec(), shape).unwrap();
    f(&leaf).unwrap().backward().unwrap();
    let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; x.len()]);
    for i in 0..x.len() {
        let mut plus = x.to_vec();
        plus[i] += STEP;
        let mut minus = x.to_vec();
        minus[i] -= STEP;
        let numeric = (surrogate(&plus) - surrogate(&minus)) / (2.0 * STEP);
        record(name, (analytic[i] - numeric).abs() / numeric.abs().max(1.0));
    }
}

fn unary_case<F>(name: &str, tag: u64, gen: impl Fn(&mut ChaCha8Rng) -> Vec<f64>, op: F)
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let mut r = rng(tag);
    for _ in 0..POINTS {
        let x = gen(&mut r);
        let w = uniform(&mut r, x.len(), -1.0, 1.0);
        check(name, &x, &[2, 3], |t| weighted(op(t)?, &w));
    }
}

pub fn unary_ops() {
    unary_case("exp", 1, |r| uniform(r, 6, -2.0, 2.0), |t| Ok(t.exp()));
    unary_case("ln", 2, |r| uniform(r, 6, 0.2, 3.0), |t| t.ln());
    unary_case("abs", 3, |r| away_from_zero(r, 6, 2.0, 1e-2), |t| Ok(t.abs()));
    unary_case("sigmoid", 4, |r| uniform(r, 6, -4.0, 4.0), |t| Ok(t.sigmoid()));
    unary_case("relu", 5, |r| away_from_zero(r, 6, 2.0, 1e-2), |t| Ok(t.relu()));
    unary_case("clamp", 6, |r| {
        // Keep clear of the clamp corners at -0.5 and 0.5.
        away_from_zero(r, 6, 1.5, 1e-2).into_iter().map(|v| if (v.abs() - 0.5).abs() < 1e-2 { v * 1.1 } else { v }).collect()
    }, |t| t.clamp(-0.5, 0.5));
    unary_case("affine", 7, |r| uniform(r, 6, -2.0, 2.0), |t| Ok(t.affine(-1.7, 0.3)));
    unary_case("neg", 8, |r| uniform(r, 6, -2.0, 2.0), |t| Ok(t.neg()));
    unary_case("powf", 9, |r| uniform(r, 6, 0.2, 2.0), |t| t.powf(0.8));
    unary_case("reshape", 10, |r| uniform(r, 6, -2.0, 2.0), |t| t.reshape(&[3, 2]));
}

fn binary_case<F>(name: &str, tag: u64, gen: impl Fn(&mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>), op: F)
where
    F: Fn(&Tensor, &Tensor) -> Result<Tensor>,
{
    let mut r = rng(tag);
    for _ in 0..POINTS {
        let (a, b) = gen(&mut r);
        let w = uniform(&mut r, a.len(), -1.0, 1.0);
        let (ta, tb) = (Tensor::new(a.clone(), &[2, 3]).unwrap(), Tensor::new(b.clone(), &[2, 3]).unwrap());
        check(&format!("{name} lhs"), &a, &[2, 3], |t| weighted(op(t, &tb)?, &w));
        check(&format!("{name} rhs"), &b, &[2, 3], |t| weighted(op(&ta, t)?, &w));
    }
    // Broadcast against a scalar in both positions.
    let mut r = rng(tag + 100);
    for _ in 0..POINTS {
        let (a, b) = gen(&mut r);
        let s = Tensor::scalar(b[0]);
        let w = uniform(&mut r, a.len(), -1.0, 1.0);
        let ta = Tensor::new(a.clone(), &[2, 3]).unwrap();
        check(&format!("{name} broadcast lhs"), &a, &[2, 3], |t| weighted(op(t, &s)?, &w));
        check(&format!("{name} broadcast scalar"), &b[..1], &[], |t| weighted(op(&ta, t)?, &w));
    }
}

/// Operand pairs whose elementwise differences, and the differences of
/// every `a` against `b[0]`, are at least `margin` in size.
fn separated(r: &mut ChaCha8Rng, margin: f64) -> (Vec<f64>, Vec<f64>) {
    loop {
        let a = uniform(r, 6, -2.0, 2.0);
        let b = uniform(r, 6, -2.0, 2.0);
        let apart = a.iter().zip(&b).all(|(x, y)| (x - y).abs() >= margin);
        if apart && a.iter().all(|x| (x - b[0]).abs() >= margin) {
            return (a, b);
        }
    }
}

pub fn binary_ops() {
    binary_case("add", 11, |r| (uniform(r, 6, -2.0, 2.0), uniform(r, 6, -2.0, 2.0)), |a, b| a.add(b));
    binary_case("sub", 12, |r| (uniform(r, 6, -2.0, 2.0), uniform(r, 6, -2.0, 2.0)), |a, b| a.sub(b));
    binary_case("mul", 13, |r| (uniform(r, 6, -2.0, 2.0), uniform(r, 6, -2.0, 2.0)), |a, b| a.mul(b));
    binary_case("div", 14, |r| (uniform(r, 6, -2.0, 2.0), uniform(r, 6, 0.5, 2.0)), |a, b| a.div(b));
    binary_case("pow", 15, |r| (uniform(r, 6, 0.2, 2.0), uniform(r, 6, -1.5, 1.5)), |a, b| a.pow(b));
    binary_case("maximum", 16, |r| separated(r, 1e-2), |a, b| a.maximum(b));
    binary_case("minimum", 17, |r| separated(r, 1e-2), |a, b| a.minimum(b));
}

pub fn reductions_and_indexing() {
    let mut r = rng(20);
    for _ in 0..POINTS {
        let x = uniform(&mut r, 12, -2.0, 2.0);
        let w = uniform(&mut r, 4, -1.0, 1.0);
        check("sum_all", &x, &[3, 4], |t| Ok(t.sum_all()));
        check("mean_all", &x, &[3, 4], |t| Ok(t.mean_all()));
        check("sum axis 0", &x, &[3, 4], |t| weighted(t.sum_axes(&[0])?, &w));
        check("mean axis 0", &x, &[3, 4], |t| weighted(reduce(ReduceOp::Mean, t, &[0])?, &w));
        let w3 = uniform(&mut r, 3, -1.0, 1.0);
        // Distinct values keep the max away from ties.
        let mut distinct = x.clone();
        distinct.sort_by(f64::total_cmp);
        for (i, v) in distinct.iter_mut().enumerate() {
            *v += 0.05 * i as f64;
        }
        let perm: Vec<f64> = (0..12).map(|i| distinct[(i * 5) % 12]).collect();
        check("max axis 1", &perm, &[3, 4], |t| weighted(reduce(ReduceOp::Max, t, &[1])?, &w3));
        let idx = [3, 0, 7, 7, 11];
        let wg = uniform(&mut r, idx.len(), -1.0, 1.0);
        check("gather", &x, &[12], |t| weighted(t.gather(&idx)?, &wg));
    }
}

pub fn matmul_and_conv() {
    let mut r = rng(30);
    for _ in 0..POINTS {
        let a = uniform(&mut r, 6, -1.0, 1.0);
        let b = uniform(&mut r, 12, -1.0, 1.0);
        let w = uniform(&mut r, 8, -1.0, 1.0);
        let (ta, tb) = (Tensor::new(a.clone(), &[2, 3]).unwrap(), Tensor::new(b.clone(), &[3, 4]).unwrap());
        check("matmul lhs", &a, &[2, 3], |t| weighted(t.matmul(&tb)?, &w));
        check("matmul rhs", &b, &[3, 4], |t| weighted(ta.matmul(t)?, &w));
    }
    let mut r = rng(31);
    for i in 0..POINTS {
        let stride = 1 + i % 2;
        let x = uniform(&mut r, 2 * 2 * 5 * 5, -1.0, 1.0);
        let k = uniform(&mut r, 3 * 2 * 3 * 3, -1.0, 1.0);
        let bias = uniform(&mut r, 3, -1.0, 1.0);
        let tx = Tensor::new(x.clone(), &[2, 2, 5, 5]).unwrap();
        let tk = Tensor::new(k.clone(), &[3, 2, 3, 3]).unwrap();
        let tb = Tensor::vector(bias.clone()).unwrap();
        let out_len = tx.conv2d(&tk, Some(&tb), stride, 1).unwrap().len();
        let w = uniform(&mut r, out_len, -1.0, 1.0);
        check("conv2d input", &x, &[2, 2, 5, 5], |t| weighted(t.conv2d(&tk, Some(&tb), stride, 1)?, &w));
        check("conv2d weight", &k, &[3, 2, 3, 3], |t| weighted(tx.conv2d(t, Some(&tb), stride, 1)?, &w));
        check("conv2d bias", &bias, &[3], |t| weighted(tx.conv2d(&tk, Some(t), stride, 1)?, &w));
    }
}

fn quant_point(r: &mut ChaCha8Rng, s: f64, n_min: i64, n_max: i64) -> f64 {
    // Away from rounding midpoints and from the clip edges.
    loop {
        let v = r.random_range((n_min as f64 - 1.5) * s..(n_max as f64 + 1.5) * s);
        let q = v / s;
        let frac = q - q.floor();
        let near_mid = (frac - 0.5).abs() < 1e-3;
        let near_edge = (q - n_min as f64).abs() < 1e-3 || (q - n_max as f64).abs() < 1e-3;
        if !near_mid && !near_edge {
            return v;
        }
    }
}

pub fn fake_quantize_ste() {
    let mut r = rng(40);
    for i in 0..POINTS {
        let (bits, signed) = [(2, true), (2, false), (4, true), (8, false)][i % 4];
        let s = r.random_range(0.05..0.5);
        let qp = QuantParams::new(bits, signed, QuantMode::Lsq, s).unwrap();
        let (n_min, n_max) = (qp.n_min(), qp.n_max());
        let v: Vec<f64> = (0..6).map(|_| quant_point(&mut r, s, n_min, n_max)).collect();
        let w = uniform(&mut r, 6, -1.0, 1.0);
        let (lo, hi) = (n_min as f64, n_max as f64);

        // Value path: the de-rounded surrogate is s·clip(v/s).
        let step = Tensor::scalar(s);
        let v_sur = |x: &[f64]| x.iter().zip(&w).map(|(x, w)| w * s * (x / s).clamp(lo, hi)).sum::<f64>();
        check_surrogate("fake_quantize value", &v, &[6], |t| weighted(fake_quantize_with_step(t, &step, &qp)?, &w), v_sur);

        // Step path: rounding frozen at the base step, scaled by g.
        let g = lsq_grad_scale(v.len(), n_max);
        let codes: Vec<f64> = v.iter().map(|x| (x / s).round_ties_even()).collect();
        let tv = Tensor::new(v.clone(), &[6]).unwrap();
        let s_sur = |x: &[f64]| {
            let st = s + (x[0] - s) * g;
            v.iter()
                .zip(&codes)
                .zip(&w)
                .map(|((&vi, &c), wi)| {
                    let q = vi / s;
                    let out = if q < lo {
                        st * lo
                    } else if q > hi {
                        st * hi
                    } else {
                        st * c - st * q + vi
                    };
                    wi * out
                })
                .sum()
        };
        check_surrogate("fake_quantize step", &[s], &[], |t| weighted(fake_quantize_with_step(&tv, t, &qp)?, &w), s_sur);
    }
}

fn corr_surrogate(p: f64, u: f64, p0: f64, u0: f64) -> f64 {
    p.powf(u0) * u.powf(p0)
}

pub fn harmony_losses() {
    let mut r = rng(50);
    for _ in 0..POINTS {
        let pu = uniform(&mut r, 2, 0.02, 0.98);
        let (p0, u0) = (pu[0], pu[1]);
        let split = |f: fn(&Tensor, &Tensor, f64) -> Result<Tensor>| {
            move |t: &Tensor| {
                let p = t.gather(&[0])?;
                let u = t.gather(&[1])?;
                Ok(f(&p, &u, 1e-6)?.sum_all())
            }
        };
        check_surrogate("task_correlation", &pu, &[2], split(task_correlation), |x| {
            corr_surrogate(x[0], x[1], p0, u0)
        });
        let alpha = 1.0 + (p0 - u0).abs();
        check_surrogate("tcorr_loss", &pu, &[2], split(tcorr_loss), |x| {
            alpha * ((-corr_surrogate(x[0], x[1], p0, u0)).exp() - (-1f64).exp())
        });
        let u = uniform(&mut r, 4, 0.01, 0.99);
        let w = uniform(&mut r, 4, -1.0, 1.0);
        check("hiou_loss", &u, &[4], |t| weighted(hiou_loss(t, 0.8)?, &w));
    }
}

pub fn focal_loss() {
    let mut r = rng(60);
    for _ in 0..POINTS {
        let s = uniform(&mut r, 6, 0.02, 0.98);
        let targets: Vec<f64> = (0..6).map(|_| if r.random_bool(0.3) { 1.0 } else { 0.0 }).collect();
        check("focal_cls_loss", &s, &[6], |t| focal_cls_loss(t, &targets, 2.0, 0.25));
    }
}

/// A random box with corners in `[0, 64]` and sides of at least 4.
fn random_box(r: &mut ChaCha8Rng) -> [f64; 4] {
    let x1 = r.random_range(0.0..40.0);
    let y1 = r.random_range(0.0..40.0);
    [x1, y1, x1 + r.random_range(4.0..24.0), y1 + r.random_range(4.0..24.0)]
}

/// Whether any pair of corresponding edges, or an edge against the other
/// box's opposite edge, coincide within `margin`, which would put the point
/// on a kink of min/max/relu.
fn near_kink(a: &[f64; 4], b: &[f64; 4], margin: f64) -> bool {
    let xs = [a[0], a[2], b[0], b[2]];
    let ys = [a[1], a[3], b[1], b[3]];
    let close = |v: &[f64; 4]| (0..4).any(|i| (i + 1..4).any(|j| (v[i] - v[j]).abs() < margin));
    close(&xs) || close(&ys)
}

fn box_pair(r: &mut ChaCha8Rng, overlapping: bool) -> ([f64; 4], [f64; 4]) {
    loop {
        let a = random_box(r);
        let b = random_box(r);
        let inter = (a[2].min(b[2]) - a[0].max(b[0])).min(a[3].min(b[3]) - a[1].max(b[1]));
        if near_kink(&a, &b, 1e-2) || (overlapping && inter < 1e-2) {
            continue;
        }
        return (a, b);
    }
}

fn boxes(t: &Tensor) -> Result<BoxTensors> {
    Ok(BoxTensors {
        x1: t.gather(&[0])?,
        y1: t.gather(&[1])?,
        x2: t.gather(&[2])?,
        y2: t.gather(&[3])?,
    })
}

pub fn box_geometry() {
    let mut r = rng(70);
    for i in 0..POINTS {
        let (a, b) = box_pair(&mut r, true);
        let gt = boxes(&Tensor::vector(b.to_vec()).unwrap()).unwrap();
        check("iou", &a, &[4], |t| Ok(iou_tensor(&boxes(t)?, &gt)?.sum_all()));
        let (a, b) = box_pair(&mut r, i % 2 == 0);
        let gt = boxes(&Tensor::vector(b.to_vec()).unwrap()).unwrap();
        check("giou", &a, &[4], |t| Ok(giou_tensor(&boxes(t)?, &gt)?.sum_all()));
        check("reg_loss", &a, &[4], |t| Ok(reg_loss(&boxes(t)?, &gt)?.sum_all()));

        // Distance decoding around a constant center.
        let d = uniform(&mut r, 4, 1.0, 20.0);
        let w = uniform(&mut r, 4, -1.0, 1.0);
        let (cx, cy) = (Tensor::vector(vec![r.random_range(0.0..64.0)]).unwrap(), Tensor::vector(vec![r.random_range(0.0..64.0)]).unwrap());
        check("decode", &d, &[4], |t| {
            let l = |k| t.gather(&[k]);
            let bx = BoxTensors::decode(&cx, &cy, &l(0)?, &l(1)?, &l(2)?, &l(3)?)?;
            let stacked = [bx.x1, bx.y1, bx.x2, bx.y2];
            let mut total = Tensor::scalar(0.0);
            for (c, wi) in stacked.iter().zip(&w) {
                total = total.add(&c.sum_all().scale(*wi))?;
            }
            Ok(total)
        });
    }
}
