//! Gradient-sign adversaries: FGS (untargeted) and T-FGS (least-likely
//! target), with iteration, early stopping and distortion measurement.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Label};
use crate::error::{Error, Result};
use crate::nn::{argmax, Model};
use crate::parallel::map_ranges;
use crate::scalar::{sgn, Scalar};
use crate::tensor::{Tape, Tensor};
use crate::train::label_targets;

/// Samples per attack batch. Shards are aligned to it so results do not
/// depend on the thread count.
pub const ATTACK_CHUNK: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Fgs,
    Tfgs,
}

impl std::str::FromStr for AttackKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fgs" => Ok(Self::Fgs),
            "tfgs" | "t-fgs" => Ok(Self::Tfgs),
            _ => Err(Error::invalid(
                "attack kind",
                format!("unknown kind {s:?} (fgs | tfgs)"),
            )),
        }
    }
}

impl std::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Fgs => "fgs",
            Self::Tfgs => "tfgs",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuccessRule {
    /// Prediction is neither the true class nor the dustbin.
    UntargetedEscape,
    /// Prediction equals the target chosen at the first iteration.
    TargetedHit,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub epsilon: f64,
    pub max_iters: usize,
    pub clip: bool,
    pub forbid_dustbin_target: bool,
    pub success_rule: SuccessRule,
}

impl AttackConfig {
    pub fn fgs(epsilon: f64, max_iters: usize) -> Self {
        Self {
            kind: AttackKind::Fgs,
            epsilon,
            max_iters,
            clip: true,
            forbid_dustbin_target: false,
            success_rule: SuccessRule::UntargetedEscape,
        }
    }

    pub fn tfgs(epsilon: f64, max_iters: usize, forbid_dustbin_target: bool) -> Self {
        Self {
            kind: AttackKind::Tfgs,
            epsilon,
            max_iters,
            clip: true,
            forbid_dustbin_target,
            success_rule: SuccessRule::TargetedHit,
        }
    }

    /// Default configuration for `kind`.
    pub fn of_kind(kind: AttackKind, epsilon: f64, max_iters: usize, forbid_dustbin_target: bool) -> Self {
        match kind {
            AttackKind::Fgs => Self::fgs(epsilon, max_iters),
            AttackKind::Tfgs => Self::tfgs(epsilon, max_iters, forbid_dustbin_target),
        }
    }

    pub fn validate<T: Scalar>(&self, model: &Model<T>) -> Result<()> {
        let bad = |r: &str| Err(Error::invalid("attack config", r.to_string()));
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be finite and >= 0");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1");
        }
        if self.kind == AttackKind::Fgs && self.success_rule == SuccessRule::TargetedHit {
            return bad("FGS has no target to hit");
        }
        if self.kind == AttackKind::Tfgs {
            if model.num_classes() < 2 {
                return bad("T-FGS needs at least two outputs");
            }
            if self.forbid_dustbin_target && !model.is_augmented() {
                return bad("forbidding the dustbin target needs an augmented model");
            }
        }
        Ok(())
    }
}

/// Per-sample attack outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub index: usize,
    pub true_label: Label,
    pub target: Option<usize>,
    pub iterations: usize,
    pub predicted: usize,
    pub confidence: f64,
    pub distortion: f64,
    pub success: bool,
}

/// Single-sample result including the adversarial input.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackResult<T> {
    pub x_adv: Tensor<T>,
    pub outcome: AttackOutcome,
}

/// Adversarial inputs (paired with the original labels) and per-sample
/// outcomes.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackBatch<T> {
    pub adversarial: Dataset<T>,
    pub outcomes: Vec<AttackOutcome>,
}

/// Root mean square of `x_adv - x`: `||x_adv - x||_2 / sqrt(d)`.
pub fn distortion<T: Scalar>(x: &[T], x_adv: &[T]) -> Result<f64> {
    if x.len() != x_adv.len() || x.is_empty() {
        return Err(Error::Shape {
            op: "distortion",
            lhs: vec![x.len()],
            rhs: vec![x_adv.len()],
        });
    }
    let ss: f64 = x
        .iter()
        .zip(x_adv)
        .map(|(a, b)| (b.as_f64() - a.as_f64()).powi(2))
        .sum();
    Ok((ss / x.len() as f64).sqrt())
}

/// Least likely class of a probability row, optionally skipping one index.
/// Ties resolve to the lowest index.
pub fn least_likely<T: Scalar>(probs: &[T], exclude: Option<usize>) -> usize {
    probs
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude)
        .fold((usize::MAX, T::infinity()), |(bi, bv), (i, &v)| {
            if v < bv || bi == usize::MAX {
                (i, v)
            } else {
                (bi, bv)
            }
        })
        .0
}

/// Eval-mode probabilities at `x` (a batch) and the gradient of the mean
/// cross-entropy towards the targets picked from those probabilities.
fn input_gradient<T: Scalar>(
    model: &Model<T>,
    x: Tensor<T>,
    pick: impl FnOnce(&[T], usize) -> Vec<usize>,
) -> Result<(Vec<usize>, Tensor<T>)> {
    let mut tape = Tape::new();
    let xv = tape.leaf(x)?;
    let fwd = model.forward(&mut tape, xv, false, None)?;
    let k = model.num_classes();
    let mut probs = tape.value(fwd.logits).data().to_vec();
    for row in probs.chunks_mut(k) {
        crate::tensor::softmax_rows(row);
    }
    let targets = pick(&probs, k);
    let loss = tape.softmax_cross_entropy(fwd.logits, &targets)?;
    let grads = tape.backward(loss)?;
    let g = grads.get(xv)?.clone();
    if !g.is_finite() {
        return Err(Error::NonFinite { op: "input gradient" });
    }
    Ok((targets, g))
}

fn apply_sign<T: Scalar>(x: &Tensor<T>, g: &Tensor<T>, step: T, clip: bool) -> Tensor<T> {
    let data = x
        .data()
        .iter()
        .zip(g.data())
        .map(|(&v, &d)| {
            let y = v + step * sgn(d);
            if clip {
                y.max(T::zero()).min(T::one())
            } else {
                y
            }
        })
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

/// One FGS step on a batch: `clip(x + eps * sgn(dL(h(x), y)/dx))`.
pub fn fgs_step<T: Scalar>(
    model: &Model<T>,
    x: &Tensor<T>,
    y: &[usize],
    epsilon: f64,
    clip: bool,
) -> Result<Tensor<T>> {
    if y.len() != x.shape()[0] {
        return Err(Error::Shape {
            op: "fgs_step",
            lhs: x.shape().to_vec(),
            rhs: vec![y.len()],
        });
    }
    let (_, g) = input_gradient(model, x.clone(), |_, _| y.to_vec())?;
    Ok(apply_sign(x, &g, T::of(epsilon), clip))
}

/// One T-FGS step on a batch: targets are the least likely classes of
/// `h(x)` (skipping the dustbin when `forbid_dustbin`), and
/// `x' = clip(x - eps * sgn(dL(h(x), y')/dx))`.
pub fn tfgs_step<T: Scalar>(
    model: &Model<T>,
    x: &Tensor<T>,
    epsilon: f64,
    clip: bool,
    forbid_dustbin: bool,
) -> Result<(Tensor<T>, Vec<usize>)> {
    if forbid_dustbin && !model.is_augmented() {
        return Err(Error::invalid(
            "tfgs_step",
            "forbidding the dustbin target needs an augmented model",
        ));
    }
    let exclude = if forbid_dustbin { model.dustbin_index() } else { None };
    let (targets, g) = input_gradient(model, x.clone(), |p, k| {
        p.chunks(k).map(|row| least_likely(row, exclude)).collect()
    })?;
    Ok((apply_sign(x, &g, -T::of(epsilon), clip), targets))
}

fn targeted_step<T: Scalar>(
    model: &Model<T>,
    x: &Tensor<T>,
    targets: &[usize],
    epsilon: f64,
    clip: bool,
) -> Result<Tensor<T>> {
    let (_, g) = input_gradient(model, x.clone(), |_, _| targets.to_vec())?;
    Ok(apply_sign(x, &g, -T::of(epsilon), clip))
}

fn is_success(rule: SuccessRule, pred: usize, truth: usize, target: Option<usize>, dustbin: Option<usize>) -> bool {
    match rule {
        SuccessRule::UntargetedEscape => pred != truth && Some(pred) != dustbin,
        SuccessRule::TargetedHit => Some(pred) == target,
    }
}

fn stack_rows<T: Scalar>(rows: &[&[T]], sample_shape: &[usize]) -> Tensor<T> {
    let mut shape = vec![rows.len()];
    shape.extend_from_slice(sample_shape);
    Tensor::new(shape, rows.concat()).expect("consistent rows")
}

/// Attack one contiguous block of samples. Returns adversarial inputs
/// (flattened) and outcomes.
fn attack_block<T: Scalar>(
    model: &Model<T>,
    data: &Dataset<T>,
    truths: &[usize],
    range: std::ops::Range<usize>,
    config: &AttackConfig,
) -> Result<(Vec<T>, Vec<AttackOutcome>)> {
    let n = range.len();
    let w = data.sample_width();
    let shape = data.sample_shape();
    let dustbin = model.dustbin_index();
    let mut cur: Vec<T> = data.raw()[range.start * w..range.end * w].to_vec();
    let mut targets: Vec<Option<usize>> = vec![None; n];
    let mut done: Vec<Option<(usize, usize, f64, bool)>> = vec![None; n];
    let mut active: Vec<usize> = (0..n).collect();
    let mut last_pred: Vec<(usize, f64)> = vec![(0, 0.0); n];

    for it in 1..=config.max_iters {
        if active.is_empty() {
            break;
        }
        let x = stack_rows(
            &active.iter().map(|&i| &cur[i * w..(i + 1) * w]).collect::<Vec<_>>(),
            shape,
        );
        let stepped = match config.kind {
            AttackKind::Fgs => {
                let y: Vec<usize> = active.iter().map(|&i| truths[range.start + i]).collect();
                fgs_step(model, &x, &y, config.epsilon, config.clip)?
            }
            AttackKind::Tfgs if it == 1 => {
                let (xs, t) = tfgs_step(model, &x, config.epsilon, config.clip, config.forbid_dustbin_target)?;
                for (&i, t) in active.iter().zip(t) {
                    targets[i] = Some(t);
                }
                xs
            }
            AttackKind::Tfgs => {
                let t: Vec<usize> = active.iter().map(|&i| targets[i].expect("fixed target")).collect();
                targeted_step(model, &x, &t, config.epsilon, config.clip)?
            }
        };
        let probs = model.probabilities(&stepped)?;
        let mut still = Vec::with_capacity(active.len());
        for ((&i, row), adv) in active.iter().zip(probs.rows()).zip(stepped.data().chunks(w)) {
            cur[i * w..(i + 1) * w].copy_from_slice(adv);
            let (pred, conf) = argmax(row);
            last_pred[i] = (pred, conf.as_f64());
            if is_success(config.success_rule, pred, truths[range.start + i], targets[i], dustbin) {
                done[i] = Some((it, pred, conf.as_f64(), true));
            } else {
                still.push(i);
            }
        }
        active = still;
    }

    let mut outcomes = Vec::with_capacity(n);
    for i in 0..n {
        let (iterations, predicted, confidence, success) =
            done[i].unwrap_or((config.max_iters, last_pred[i].0, last_pred[i].1, false));
        let idx = range.start + i;
        outcomes.push(AttackOutcome {
            index: idx,
            true_label: data.labels()[idx],
            target: targets[i],
            iterations,
            predicted,
            confidence,
            distortion: distortion(data.input(idx), &cur[i * w..(i + 1) * w])?,
            success,
        });
    }
    Ok((cur, outcomes))
}

/// Attack every sample of `data`, recomputing gradients at each iterate and
/// stopping per sample on success. Samples are processed in blocks of
/// [`ATTACK_CHUNK`] spread over `threads` workers.
pub fn run_attack_batch<T: Scalar>(
    model: &Model<T>,
    data: &Dataset<T>,
    config: &AttackConfig,
    threads: usize,
) -> Result<AttackBatch<T>> {
    config.validate(model)?;
    if data.is_empty() {
        return Err(Error::Data("cannot attack an empty dataset".into()));
    }
    let truths = label_targets(model, data.labels())?;
    let parts = map_ranges(data.len(), ATTACK_CHUNK, threads, |r| {
        let mut xs = Vec::new();
        let mut outs = Vec::new();
        for start in r.clone().step_by(ATTACK_CHUNK) {
            let (x, o) = attack_block(model, data, &truths, start..(start + ATTACK_CHUNK).min(r.end), config)?;
            xs.extend(x);
            outs.extend(o);
        }
        Ok((xs, outs))
    })?;
    let (mut xs, mut outcomes) = (Vec::with_capacity(data.raw().len()), Vec::with_capacity(data.len()));
    for (x, o) in parts {
        xs.extend(x);
        outcomes.extend(o);
    }
    let adversarial = data.with_inputs(xs)?.with_provenance(format!(
        "{}-{}-eps{}-it{}",
        data.provenance(),
        config.kind,
        config.epsilon,
        config.max_iters
    ));
    Ok(AttackBatch { adversarial, outcomes })
}

/// Attack a single input `x` (without batch axis) with true label `y`.
pub fn run_attack<T: Scalar>(
    model: &Model<T>,
    x: &Tensor<T>,
    y: Label,
    config: &AttackConfig,
) -> Result<AttackResult<T>> {
    let ds = Dataset::new(
        x.shape().to_vec(),
        x.data().to_vec(),
        vec![y],
        model.in_classes().max(1),
        "single",
    )?;
    let batch = run_attack_batch(model, &ds, config, 1)?;
    Ok(AttackResult {
        x_adv: Tensor::new(x.shape().to_vec(), batch.adversarial.raw().to_vec())?,
        outcome: batch.outcomes.into_iter().next().expect("one outcome"),
    })
}

/// Single-step adversaries against a (non-augmented) generator network, one
/// per input sample, labeled with the original labels.
pub fn generate_blackbox_set<T: Scalar>(
    generator: &Model<T>,
    data: &Dataset<T>,
    config: &AttackConfig,
    threads: usize,
) -> Result<AttackBatch<T>> {
    if generator.is_augmented() {
        return Err(Error::invalid(
            "generate_blackbox_set",
            "generator must not have a dustbin output",
        ));
    }
    if config.max_iters != 1 {
        return Err(Error::invalid(
            "generate_blackbox_set",
            format!(
                "black-box sets use single-step attacks, got max_iters = {}",
                config.max_iters
            ),
        ));
    }
    run_attack_batch(generator, data, config, threads)
}

/// CSV `index,true_label,target_label,pred_label,distortion,success`.
pub fn write_sidecar_csv(outcomes: &[AttackOutcome], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("index,true_label,target_label,pred_label,distortion,success\n");
    for o in outcomes {
        let target = o.target.map(|t| t.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            o.index,
            o.true_label,
            target,
            o.predicted,
            o.distortion,
            u8::from(o.success)
        ));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn least_likely_respects_exclusion() {
        let p = [0.7, 0.2, 0.1];
        assert_eq!(least_likely(&p, Some(2)), 1);
        assert_eq!(least_likely(&p, None), 2);
        assert_eq!(least_likely(&[0.5, 0.25, 0.25], None), 1);
    }

    #[test]
    fn distortion_is_rms() {
        assert_eq!(distortion(&[0.5f64, 0.5], &[0.5, 0.5]).unwrap(), 0.0);
        let d = distortion(&[0.5f64; 4], &[0.7, 0.3, 0.7, 0.3]).unwrap();
        assert!((d - 0.2).abs() < 1e-12);
        assert!(distortion(&[0.0f64], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn success_rules() {
        use SuccessRule::*;
        assert!(is_success(UntargetedEscape, 1, 0, None, Some(3)));
        assert!(!is_success(UntargetedEscape, 3, 0, None, Some(3)));
        assert!(!is_success(UntargetedEscape, 0, 0, None, None));
        assert!(is_success(TargetedHit, 2, 0, Some(2), None));
        assert!(!is_success(TargetedHit, 1, 0, Some(2), None));
    }

    #[test]
    fn kind_parses() {
        assert_eq!("T-FGS".parse::<AttackKind>().unwrap(), AttackKind::Tfgs);
        assert!("pgd".parse::<AttackKind>().is_err());
    }
}
