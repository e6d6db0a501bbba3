//! Central-difference verification of tape gradients.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

use crate::tensor::{LrnParams, Tape, Tensor, Var};
use crate::SeededRng;

/// Denominator floor for relative errors so near-zero gradients compare on
/// absolute terms.
pub const REL_ERROR_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Flat index of the element with the largest relative error.
    pub worst_index: usize,
    pub pass: bool,
}

fn eval_scalar<T, F>(f: &F, x: &Tensor<T>) -> Result<(T, Tape<T>, Var, Var)>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone())?;
    let out = f(&mut tape, xv)?;
    let value = tape
        .value(out)
        .item()
        .ok_or_else(|| Error::invalid("finite_diff_check", "function must return a scalar"))?;
    if !value.is_finite() {
        return Err(Error::NonFinite {
            op: "finite_diff_check",
        });
    }
    Ok((value, tape, xv, out))
}

/// Compare the tape gradient of `f` at `x` against central differences with
/// step `h`, element by element.
pub fn finite_diff_check<T, F>(f: F, x: &Tensor<T>, h: f64, tol: f64) -> Result<CheckReport>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    if h.is_nan() || h <= 0.0 {
        return Err(Error::invalid("finite_diff_check", "step must be positive"));
    }
    let (_, tape, xv, out) = eval_scalar(&f, x)?;
    let grads = tape.backward(out)?;
    let analytic = grads.get(xv)?.clone();

    let step = T::of(h);
    let mut probe = x.clone();
    let mut report = CheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst_index: 0,
        pass: true,
    };
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let (plus, ..) = eval_scalar(&f, &probe)?;
        probe.data_mut()[i] = orig - step;
        let (minus, ..) = eval_scalar(&f, &probe)?;
        probe.data_mut()[i] = orig;

        let numeric = (plus - minus).as_f64() / (2.0 * h);
        let a = analytic.data()[i].as_f64();
        let abs = (a - numeric).abs();
        let rel = abs / a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
        report.max_abs_error = report.max_abs_error.max(abs);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = i;
        }
    }
    report.pass = report.max_rel_error <= tol;
    Ok(report)
}

/// Outcome of the random-shape checks for one op kind.
#[derive(Clone, Debug, PartialEq)]
pub struct OpCheck {
    pub op: &'static str,
    pub cases: usize,
    pub max_rel_error: f64,
    pub pass: bool,
}

/// Op kinds covered by [`op_suite`].
pub const SUITE_OPS: &[&str] = &[
    "matmul_lhs",
    "matmul_rhs",
    "add",
    "add_bias",
    "scale",
    "sum",
    "conv2d_input",
    "conv2d_weight",
    "relu",
    "max_pool2d",
    "lrn",
    "flatten",
    "dropout",
    "softmax",
    "cross_entropy",
    "softmax_cross_entropy",
];

fn uniform(rng: &mut SeededRng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Values bounded away from zero, so relu kinks stay outside the
/// difference stencil.
fn off_zero(rng: &mut SeededRng, shape: Vec<usize>) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(0.05..1.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Distinct values spaced far beyond the difference step, so pooling
/// windows have a unique maximum.
fn distinct(rng: &mut SeededRng, shape: Vec<usize>) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.01 + rng.gen_range(0.0..0.001)).collect();
    v.shuffle(rng);
    Tensor::new(shape, v).expect("shape")
}

/// Contract an arbitrary output with fixed random weights to a scalar, so
/// every output element carries a distinct upstream gradient.
fn contract(t: &mut Tape<f64>, y: Var, weights: &Tensor<f64>) -> Result<Var> {
    let n = t.value(y).numel();
    let flat = t.reshape(y, vec![1, n])?;
    let w = t.constant(weights.clone().reshape(vec![n, 1])?)?;
    let z = t.matmul(flat, w)?;
    t.sum(z)
}

fn weights_for(rng: &mut SeededRng, n: usize) -> Tensor<f64> {
    uniform(rng, vec![n], -1.0, 1.0)
}

/// Run `cases` random-shape finite-difference checks of `op` (one of
/// [`SUITE_OPS`]) in double precision.
pub fn check_op(op: &'static str, cases: usize, seed: u64, h: f64, tol: f64) -> Result<OpCheck> {
    let mut rng = SeededRng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let d = |rng: &mut SeededRng, lo: usize, hi: usize| rng.gen_range(lo..=hi);
        let report = match op {
            "matmul_lhs" | "matmul_rhs" => {
                let (m, k, n) = (d(&mut rng, 1, 5), d(&mut rng, 1, 6), d(&mut rng, 1, 5));
                let a = uniform(&mut rng, vec![m, k], -1.0, 1.0);
                let b = uniform(&mut rng, vec![k, n], -1.0, 1.0);
                let w = weights_for(&mut rng, m * n);
                if op == "matmul_lhs" {
                    finite_diff_check(
                        |t, x| {
                            let b = t.constant(b.clone())?;
                            let y = t.matmul(x, b)?;
                            contract(t, y, &w)
                        },
                        &a,
                        h,
                        tol,
                    )?
                } else {
                    finite_diff_check(
                        |t, x| {
                            let a = t.constant(a.clone())?;
                            let y = t.matmul(a, x)?;
                            contract(t, y, &w)
                        },
                        &b,
                        h,
                        tol,
                    )?
                }
            }
            "add" => {
                let shape = vec![d(&mut rng, 1, 4), d(&mut rng, 1, 5)];
                let other = uniform(&mut rng, shape.clone(), -1.0, 1.0);
                let x = uniform(&mut rng, shape.clone(), -1.0, 1.0);
                let w = weights_for(&mut rng, x.numel());
                finite_diff_check(
                    |t, x| {
                        let o = t.constant(other.clone())?;
                        let y = t.add(x, o)?;
                        contract(t, y, &w)
                    },
                    &x,
                    h,
                    tol,
                )?
            }
            "add_bias" => {
                let shape = vec![
                    d(&mut rng, 1, 3),
                    d(&mut rng, 1, 4),
                    d(&mut rng, 1, 3),
                    d(&mut rng, 1, 3),
                ];
                let x = uniform(&mut rng, shape.clone(), -1.0, 1.0);
                let b = uniform(&mut rng, vec![shape[1]], -1.0, 1.0);
                let w = weights_for(&mut rng, x.numel());
                finite_diff_check(
                    |t, bv| {
                        let xv = t.constant(x.clone())?;
                        let y = t.add_bias(xv, bv)?;
                        contract(t, y, &w)
                    },
                    &b,
                    h,
                    tol,
                )?
            }
            "scale" => {
                let shape = vec![d(&mut rng, 1, 6)];
                let x = uniform(&mut rng, shape, -1.0, 1.0);
                let c = rng.gen_range(-2.0..2.0);
                let w = weights_for(&mut rng, x.numel());
                finite_diff_check(
                    |t, x| {
                        let y = t.scale(x, c)?;
                        contract(t, y, &w)
                    },
                    &x,
                    h,
                    tol,
                )?
            }
            "sum" => {
                let shape = vec![d(&mut rng, 1, 4), d(&mut rng, 1, 4)];
                let x = uniform(&mut rng, shape, -1.0, 1.0);
                finite_diff_check(|t, x| t.sum(x), &x, h, tol)?
            }
            "conv2d_input" | "conv2d_weight" => {
                let (n, c, f, k) = (
                    d(&mut rng, 1, 2),
                    d(&mut rng, 1, 3),
                    d(&mut rng, 1, 3),
                    d(&mut rng, 1, 3),
                );
                let (stride, pad) = (d(&mut rng, 1, 2), d(&mut rng, 0, 2));
                let hw = d(&mut rng, k, k + 4);
                let x = uniform(&mut rng, vec![n, c, hw, hw], -1.0, 1.0);
                let kw = uniform(&mut rng, vec![f, c, k, k], -1.0, 1.0);
                let mut probe = Tape::new();
                let (xa, wa) = (probe.constant(x.clone())?, probe.constant(kw.clone())?);
                let out = probe.conv2d(xa, wa, stride, pad)?;
                let w = weights_for(&mut rng, probe.value(out).numel());
                if op == "conv2d_input" {
                    finite_diff_check(
                        |t, xv| {
                            let wv = t.constant(kw.clone())?;
                            let y = t.conv2d(xv, wv, stride, pad)?;
                            contract(t, y, &w)
                        },
                        &x,
                        h,
                        tol,
                    )?
                } else {
                    finite_diff_check(
                        |t, wv| {
                            let xv = t.constant(x.clone())?;
                            let y = t.conv2d(xv, wv, stride, pad)?;
                            contract(t, y, &w)
                        },
                        &kw,
                        h,
                        tol,
                    )?
                }
            }
            "relu" => {
                let shape = vec![d(&mut rng, 1, 4), d(&mut rng, 1, 6)];
                let x = off_zero(&mut rng, shape);
                let w = weights_for(&mut rng, x.numel());
                finite_diff_check(
                    |t, x| {
                        let y = t.relu(x)?;
                        contract(t, y, &w)
                    },
                    &x,
                    h,
                    tol,
                )?
            }
            "max_pool2d" => {
                let (window, stride) = (d(&mut rng, 1, 3), d(&mut rng, 1, 3));
                let hw = d(&mut rng, window, window + 4);
                let shape = vec![d(&mut rng, 1, 2), d(&mut rng, 1, 3), hw, hw];
                let x = distinct(&mut rng, shape);
                let mut probe = Tape::new();
                let xa = probe.constant(x.clone())?;
                let out = probe.max_pool2d(xa, window, stride)?;
                let w = weights_for(&mut rng, probe.value(out).numel());
                finite_diff_check(
                    |t, x| {
                        let y = t.max_pool2d(x, window, stride)?;
                        contract(t, y, &w)
                    },
                    &x,
                    h,
                    tol,
                )?
            }
            "lrn" => {
                let params = LrnParams {
                    size: [1, 3, 5][rng.gen_range(0..3)],
                    alpha: rng.gen_range(0.05..1.0),
                    beta: rng.gen_range(0.5..0.9),
                    k: rng.gen_range(1.0..2.0),
                };
                let shape = vec![
                    d(&mut rng, 1, 2),
                    d(&mut rng, 1, 7),
                    d(&mut rng, 1, 3),
                    d(&mut rng, 1, 3),
                ];
                let x = uniform(&mut rng, shape, -1.5, 1.5);
                let w = weights_for(&mut rng, x.numel());
                finite_diff_check(
                    |t, x| {
                        let y = t.lrn(x, params)?;
                        contract(t, y, &w)
                    },
                    &x,
                    h,
                    tol,
                )?
            }
            "flatten" => {
                let shape = vec![d(&mut rng, 1, 3), d(&mut rng, 1, 3), d(&mut rng, 1, 3)];
                let x = uniform(&mut rng, shape, -1.0, 1.0);
                let w = weights_for(&mut rng, x.numel());
                finite_diff_check(
                    |t, x| {
                        let y = t.flatten(x)?;
                        contract(t, y, &w)
                    },
                    &x,
                    h,
                    tol,
                )?
            }
            "dropout" => {
                let shape = vec![d(&mut rng, 1, 4), d(&mut rng, 1, 8)];
                let x = uniform(&mut rng, shape, -1.0, 1.0);
                let keep = rng.gen_range(0.3..1.0);
                let mask_seed = rng.gen::<u64>();
                let w = weights_for(&mut rng, x.numel());
                finite_diff_check(
                    |t, x| {
                        let mut r = SeededRng::seed_from_u64(mask_seed);
                        let y = t.dropout(x, keep, &mut r)?;
                        contract(t, y, &w)
                    },
                    &x,
                    h,
                    tol,
                )?
            }
            "softmax" => {
                let shape = vec![d(&mut rng, 1, 4), d(&mut rng, 2, 6)];
                let x = uniform(&mut rng, shape, -2.0, 2.0);
                let w = weights_for(&mut rng, x.numel());
                finite_diff_check(
                    |t, x| {
                        let y = t.softmax(x)?;
                        contract(t, y, &w)
                    },
                    &x,
                    h,
                    tol,
                )?
            }
            "cross_entropy" | "softmax_cross_entropy" => {
                let (n, k) = (d(&mut rng, 1, 4), d(&mut rng, 2, 6));
                let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
                if op == "cross_entropy" {
                    let p = uniform(&mut rng, vec![n, k], 0.05, 1.0);
                    finite_diff_check(|t, p| t.cross_entropy(p, &labels), &p, h, tol)?
                } else {
                    let z = uniform(&mut rng, vec![n, k], -2.0, 2.0);
                    finite_diff_check(|t, z| t.softmax_cross_entropy(z, &labels), &z, h, tol)?
                }
            }
            _ => return Err(Error::invalid("check_op", format!("unknown op kind {op:?}"))),
        };
        worst = worst.max(report.max_rel_error);
    }
    Ok(OpCheck {
        op,
        cases,
        max_rel_error: worst,
        pass: worst <= tol,
    })
}

/// [`check_op`] over every op in [`SUITE_OPS`].
pub fn op_suite(cases: usize, seed: u64, h: f64, tol: f64) -> Result<Vec<OpCheck>> {
    SUITE_OPS
        .iter()
        .enumerate()
        .map(|(i, op)| check_op(op, cases, seed.wrapping_add(i as u64), h, tol))
        .collect()
}

/// Deliberately wrong backward rule (`d/dx x^2` reported as `2.1 x`); a
/// working checker must reject it.
pub fn negative_control(h: f64, tol: f64) -> Result<CheckReport> {
    let x = Tensor::from_fn(vec![6], |i| 0.3 + 0.2 * i as f64);
    finite_diff_check(
        |t, x| {
            let y = t.unary(x, |v| v * v, |v, _| 2.1 * v)?;
            t.sum(y)
        },
        &x,
        h,
        tol,
    )
}
