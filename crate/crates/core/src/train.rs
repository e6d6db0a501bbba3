//! Mini-batch SGD training and classification metrics.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Label};
use crate::error::{Error, Result};
use crate::nn::{argmax, Model, INFERENCE_CHUNK};
use crate::parallel::map_ranges;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor};
use crate::SeededRng;

/// Optimizer and schedule settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Learning rate multiplier applied once `decay_at` epochs have completed.
    pub lr_decay: f64,
    /// Fraction of `epochs` after which the decay applies.
    pub decay_at: f64,
    pub momentum: f64,
    /// L2 penalty added to weight gradients (biases excluded).
    pub weight_decay: f64,
    pub seed: u64,
    pub shuffle: bool,
    /// Apply dropout layers during training.
    pub dropout: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            batch_size: 64,
            learning_rate: 0.01,
            lr_decay: 0.1,
            decay_at: 2.0 / 3.0,
            momentum: 0.9,
            weight_decay: 0.0,
            seed: 0,
            shuffle: true,
            dropout: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |r: String| Err(Error::invalid("train config", r));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch size must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0,1)", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.lr_decay > 0.0 && (0.0..=1.0).contains(&self.decay_at)) {
            return bad("weight decay, lr decay or decay point out of range".into());
        }
        Ok(())
    }

    /// Learning rate used during (zero-based) `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let boundary = (self.decay_at * self.epochs as f64).round() as usize;
        if self.lr_decay != 1.0 && boundary > 0 && epoch >= boundary {
            self.learning_rate * self.lr_decay
        } else {
            self.learning_rate
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
}

/// SGD with classical momentum: `v = mu*v + g + wd*w`, `w -= lr*v`.
pub struct Sgd<T> {
    momentum: T,
    weight_decay: T,
    velocity: Vec<Vec<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<T>>, momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum: T::of(momentum),
            weight_decay: T::of(weight_decay),
            velocity: params.into_iter().map(|p| vec![T::zero(); p.numel()]).collect(),
        }
    }

    /// Update parameter `i` in place with gradient `grad`. Weight decay only
    /// applies when `decay` is set.
    pub fn step(&mut self, i: usize, param: &mut Tensor<T>, grad: &Tensor<T>, lr: f64, decay: bool) {
        let lr = T::of(lr);
        let wd = if decay { self.weight_decay } else { T::zero() };
        for ((w, v), &g) in param
            .data_mut()
            .iter_mut()
            .zip(self.velocity[i].iter_mut())
            .zip(grad.data())
        {
            *v = self.momentum * *v + g + wd * *w;
            *w = *w - lr * *v;
        }
    }
}

/// Output indices for `labels` on `model`, rejecting labels it cannot emit.
pub fn label_targets<T: Scalar>(model: &Model<T>, labels: &[Label]) -> Result<Vec<usize>> {
    labels
        .iter()
        .map(|&l| match l {
            Label::Dustbin => model.dustbin_index().ok_or_else(|| {
                Error::Data("dataset contains dustbin labels but the model has no dustbin output".into())
            }),
            Label::Class(c) if c < model.in_classes() => Ok(c),
            Label::Class(c) => Err(Error::Data(format!(
                "label {c} outside the model's {} classes",
                model.in_classes()
            ))),
        })
        .collect()
}

pub fn train<T: Scalar>(model: &mut Model<T>, data: &Dataset<T>, config: &TrainConfig) -> Result<Vec<EpochRecord>> {
    train_with_observer(model, data, config, |_| {})
}

/// Train in place, calling `observe` after each epoch.
pub fn train_with_observer<T: Scalar>(
    model: &mut Model<T>,
    data: &Dataset<T>,
    config: &TrainConfig,
    mut observe: impl FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let targets = label_targets(model, data.labels())?;
    let mut order_rng = SeededRng::seed_from_u64(config.seed);
    order_rng.set_stream(1);
    let mut dropout_rng = SeededRng::seed_from_u64(config.seed);
    dropout_rng.set_stream(2);
    let mut opt = Sgd::new(
        model.params().iter().map(|p| &p.value),
        config.momentum,
        config.weight_decay,
    );
    let decays: Vec<bool> = model.params().iter().map(|p| p.name.ends_with(".weight")).collect();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        if config.shuffle {
            order.shuffle(&mut order_rng);
        }
        let lr = config.lr_at(epoch);
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let diverged = |loss: f64| Error::Diverged {
                epoch: epoch + 1,
                batch: b + 1,
                loss,
            };
            let (x, _) = data.batch(idx);
            let y: Vec<usize> = idx.iter().map(|&i| targets[i]).collect();
            let mut tape = Tape::new();
            let step = (|| {
                let xv = tape.constant(x)?;
                let rng = if config.dropout { Some(&mut dropout_rng) } else { None };
                let fwd = model.forward(&mut tape, xv, true, rng)?;
                let loss = tape.softmax_cross_entropy(fwd.logits, &y)?;
                Ok::<_, Error>((fwd, loss))
            })();
            let (fwd, loss) = match step {
                Ok(v) => v,
                Err(Error::NonFinite { .. }) => return Err(diverged(f64::NAN)),
                Err(e) => return Err(e),
            };
            let loss_v = tape.value(loss).data()[0].as_f64();
            if !loss_v.is_finite() {
                return Err(diverged(loss_v));
            }
            let logits = tape.value(fwd.logits);
            let k = logits.shape()[1];
            correct += logits
                .data()
                .chunks(k)
                .zip(&y)
                .filter(|(row, &t)| argmax(row).0 == t)
                .count();
            loss_sum += loss_v * idx.len() as f64;
            let mut grads = match tape.backward(loss) {
                Ok(g) => g,
                Err(Error::NonFinite { .. }) => return Err(diverged(loss_v)),
                Err(e) => return Err(e),
            };
            for (i, (&pv, param)) in fwd.params.iter().zip(model.params_mut()).enumerate() {
                let g = grads.take(pv)?;
                if !g.is_finite() {
                    return Err(diverged(loss_v));
                }
                opt.step(i, &mut param.value, &g, lr, decays[i]);
            }
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            loss: loss_sum / data.len() as f64,
            train_acc: correct as f64 / data.len() as f64,
        };
        observe(&record);
        history.push(record);
    }
    Ok(history)
}

pub fn write_history_csv(history: &[EpochRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("epoch,loss,train_acc\n");
    for r in history {
        out.push_str(&format!("{},{},{}\n", r.epoch, r.loss, r.train_acc));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

/// Fractions of correctly classified, rejected (dustbin) and misclassified
/// samples. On dustbin-labeled samples a dustbin prediction counts as correct.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub acc: f64,
    pub dust: f64,
    pub err: f64,
    pub n: usize,
}

impl EvalRow {
    pub fn from_counts(correct: usize, dustbin: usize, n: usize) -> Self {
        assert!(n > 0 && correct + dustbin <= n);
        let nf = n as f64;
        Self {
            acc: correct as f64 / nf,
            dust: dustbin as f64 / nf,
            err: (n - correct - dustbin) as f64 / nf,
            n,
        }
    }
}

/// Per-sample predicted class (eval mode), sharded over `threads`.
pub fn predict_classes<T: Scalar>(model: &Model<T>, data: &Dataset<T>, threads: usize) -> Result<Vec<(usize, T)>> {
    let parts = map_ranges(data.len(), INFERENCE_CHUNK, threads, |r| {
        let mut out = Vec::with_capacity(r.len());
        if r.is_empty() {
            return Ok(out);
        }
        let probs = model.probabilities(&data.range_tensor(r))?;
        out.extend(probs.rows().map(|row| argmax(row)));
        Ok(out)
    })?;
    Ok(parts.concat())
}

pub fn evaluate<T: Scalar>(model: &Model<T>, data: &Dataset<T>) -> Result<EvalRow> {
    evaluate_threads(model, data, 1)
}

pub fn evaluate_threads<T: Scalar>(model: &Model<T>, data: &Dataset<T>, threads: usize) -> Result<EvalRow> {
    if data.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty dataset".into()));
    }
    let preds = predict_classes(model, data, threads)?;
    Ok(eval_row(
        model.dustbin_index(),
        data.labels(),
        preds.iter().map(|p| p.0),
    ))
}

/// Tally predictions against labels.
pub fn eval_row(dustbin_index: Option<usize>, labels: &[Label], preds: impl IntoIterator<Item = usize>) -> EvalRow {
    let (mut correct, mut dust) = (0, 0);
    for (&label, pred) in labels.iter().zip(preds) {
        let is_dust = Some(pred) == dustbin_index;
        if label.target_index(dustbin_index) == Some(pred) {
            correct += 1;
        } else if is_dust {
            dust += 1;
        }
    }
    EvalRow::from_counts(correct, dust, labels.len())
}

/// Summary of per-sample max probabilities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceStats {
    /// Samples included in the summary.
    pub n: usize,
    pub mean: f64,
    pub p05: f64,
    pub median: f64,
    pub p95: f64,
    /// Mean probability assigned to the dustbin output over all samples.
    pub mean_dustbin_prob: Option<f64>,
}

/// Max-confidence summary. With `exclude_dustbin_argmax`, samples whose
/// argmax is the dustbin class are left out of the confidence statistics.
pub fn confidence_stats<T: Scalar>(
    model: &Model<T>,
    data: &Dataset<T>,
    exclude_dustbin_argmax: bool,
    threads: usize,
) -> Result<ConfidenceStats> {
    if data.is_empty() {
        return Err(Error::Data("cannot summarize an empty dataset".into()));
    }
    let dustbin = model.dustbin_index();
    let parts = map_ranges(data.len(), INFERENCE_CHUNK, threads, |r| {
        let probs = model.probabilities(&data.range_tensor(r))?;
        Ok(probs
            .rows()
            .map(|row| {
                let (class, conf) = argmax(row);
                (class, conf.as_f64(), dustbin.map(|d| row[d].as_f64()))
            })
            .collect::<Vec<_>>())
    })?;
    let rows = parts.concat();
    let mean_dustbin_prob = dustbin.map(|_| rows.iter().filter_map(|r| r.2).sum::<f64>() / rows.len() as f64);
    let mut conf: Vec<f64> = rows
        .iter()
        .filter(|r| !(exclude_dustbin_argmax && Some(r.0) == dustbin))
        .map(|r| r.1)
        .collect();
    if conf.is_empty() {
        return Err(Error::Data("every sample was assigned to the dustbin".into()));
    }
    conf.sort_by(f64::total_cmp);
    let pct = |q: f64| conf[((q * conf.len() as f64).ceil() as usize).clamp(1, conf.len()) - 1];
    Ok(ConfidenceStats {
        n: conf.len(),
        mean: conf.iter().sum::<f64>() / conf.len() as f64,
        p05: pct(0.05),
        median: pct(0.5),
        p95: pct(0.95),
        mean_dustbin_prob,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_two_moons;
    use crate::nn::{build_mlp, Architecture, LayerSpec, Param};

    #[test]
    fn sgd_first_step_is_minus_lr_grad() {
        // loss = (w - 3)^2 at w = 1: grad = -4.
        let mut w = Tensor::scalar(1.0f64);
        let mut tape = Tape::new();
        let wv = tape.leaf(w.clone()).unwrap();
        let d = tape
            .unary(wv, |x| (x - 3.0) * (x - 3.0), |x, _| 2.0 * (x - 3.0))
            .unwrap();
        let loss = tape.sum(d).unwrap();
        let g = tape.backward(loss).unwrap();
        let grad = g.get(wv).unwrap().clone();
        assert_eq!(grad.data(), &[-4.0]);
        let mut opt = Sgd::new([&w], 0.9, 0.0);
        opt.step(0, &mut w, &grad, 0.01, true);
        assert_eq!(w.data()[0], 1.0 - 0.01 * -4.0);
    }

    #[test]
    fn momentum_accumulates() {
        let mut w = Tensor::scalar(0.0f64);
        let g = Tensor::scalar(1.0f64);
        let mut opt = Sgd::new([&w], 0.5, 0.0);
        opt.step(0, &mut w, &g, 1.0, false);
        opt.step(0, &mut w, &g, 1.0, false);
        assert_eq!(w.data()[0], -1.0 - 1.5);
    }

    #[test]
    fn lr_schedule_decays_at_two_thirds() {
        let c = TrainConfig::default();
        assert_eq!(c.lr_at(9), 0.01);
        assert!((c.lr_at(10) - 0.001).abs() < 1e-15);
    }

    #[test]
    fn eval_row_counts() {
        let labels = [
            Label::Class(0),
            Label::Class(1),
            Label::Dustbin,
            Label::Dustbin,
            Label::Class(2),
        ];
        let row = eval_row(Some(3), &labels, [0, 3, 3, 1, 1]);
        assert_eq!(row, EvalRow::from_counts(2, 1, 5));
        assert!((row.acc + row.dust + row.err - 1.0).abs() < 1e-12);
        let naive = eval_row(None, &labels[..2], [0, 1]);
        assert_eq!((naive.acc, naive.dust, naive.err), (1.0, 0.0, 0.0));
    }

    #[test]
    fn dustbin_labels_need_augmented_model() {
        let mut m = build_mlp::<f64>(2, &[4], 2, false, 1).unwrap();
        let ds = crate::data::make_moons_outdist::<f64>(5, 1, 0.3).unwrap();
        let err = train(&mut m, &ds, &TrainConfig::default()).unwrap_err();
        assert!(err.is_data(), "{err}");
    }

    #[test]
    fn uniform_model_confidence_is_one_over_k() {
        // Zero weights give equal logits.
        let arch = Architecture {
            name: "flat".into(),
            input_shape: vec![2],
            layers: vec![LayerSpec::Dense { units: 4 }, LayerSpec::Softmax],
        };
        let m = Model::<f64>::from_parts(
            arch,
            vec![
                Param {
                    name: "dense1.weight".into(),
                    value: Tensor::zeros(vec![2, 4]),
                },
                Param {
                    name: "dense1.bias".into(),
                    value: Tensor::zeros(vec![4]),
                },
            ],
            None,
        )
        .unwrap();
        let ds = make_two_moons::<f64>(10, 0.1, 2).unwrap();
        let s = confidence_stats(&m, &ds, false, 2).unwrap();
        assert!((s.mean - 0.25).abs() < 1e-12);
        assert_eq!(s.mean_dustbin_prob, None);
    }

    #[test]
    fn divergence_names_epoch_and_batch() {
        let mut m = build_mlp::<f64>(2, &[8], 2, false, 1).unwrap();
        let ds = make_two_moons::<f64>(32, 0.1, 2).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e30,
            epochs: 3,
            batch_size: 16,
            ..Default::default()
        };
        match train(&mut m, &ds, &cfg) {
            Err(Error::Diverged { epoch, batch, .. }) => assert!(epoch >= 1 && batch >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn overfits_small_subset() {
        let mut m = build_mlp::<f64>(2, &[64, 64], 2, false, 3).unwrap();
        let ds = make_two_moons::<f64>(25, 0.05, 4).unwrap();
        let cfg = TrainConfig {
            epochs: 400,
            batch_size: 50,
            learning_rate: 0.1,
            decay_at: 1.0,
            ..Default::default()
        };
        let h = train(&mut m, &ds, &cfg).unwrap();
        assert!(h.last().unwrap().loss < 0.01, "{:?}", h.last());
    }
}
