use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use super::layers::{convnet_layers, Architecture, LayerSpec};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};
use crate::SeededRng;

/// Named parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
}

/// Ordered layer stack with its parameters.
///
/// An augmented model has `num_classes = K + 1` outputs and its dustbin class
/// sits at index `K`.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub(crate) arch: Architecture,
    pub(crate) params: Vec<Param<T>>,
    pub(crate) num_classes: usize,
    pub(crate) dustbin_index: Option<usize>,
}

/// Per-sample classifier output.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction<T> {
    pub probabilities: Vec<T>,
    pub class: usize,
    pub confidence: T,
}

impl<T: Scalar> Prediction<T> {
    pub fn from_probabilities(probabilities: Vec<T>) -> Self {
        let (class, confidence) = argmax(&probabilities);
        Self {
            probabilities,
            class,
            confidence,
        }
    }
}

/// Index and value of the first maximum.
pub fn argmax<T: Scalar>(row: &[T]) -> (usize, T) {
    row.iter().enumerate().fold(
        (0, T::neg_infinity()),
        |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) },
    )
}

/// Vars produced by one forward pass.
pub struct Forward {
    pub logits: Var,
    pub features: Option<Var>,
    /// One var per model parameter, in [`Model::params`] order.
    pub params: Vec<Var>,
}

/// Rows per forward pass in inference helpers.
/// Samples per forward pass in inference helpers.
pub const INFERENCE_CHUNK: usize = 256;

fn truncated_normal<T: Scalar>(rng: &mut SeededRng, std: f64) -> T {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            return T::of(z * std);
        }
    }
}

impl<T: Scalar> Model<T> {
    /// Build a model from an architecture with `std = sqrt(2 / fan_in)`
    /// truncated-normal weights and zero biases.
    pub fn from_architecture(arch: Architecture, augmented: bool, seed: u64) -> Result<Self> {
        let shapes = arch.layer_shapes()?;
        let mut rng = SeededRng::seed_from_u64(seed);
        let mut params = Vec::new();
        let mut prev = arch.input_shape.clone();
        let (mut conv_i, mut dense_i) = (0, 0);
        for (layer, out) in arch.layers.iter().zip(&shapes) {
            match layer {
                LayerSpec::Conv { filters, kernel, .. } => {
                    conv_i += 1;
                    let fan_in = prev[0] * kernel * kernel;
                    let std = (2.0 / fan_in as f64).sqrt();
                    let wshape = vec![*filters, prev[0], *kernel, *kernel];
                    params.push(Param {
                        name: format!("conv{conv_i}.weight"),
                        value: Tensor::from_fn(wshape, |_| truncated_normal(&mut rng, std)),
                    });
                    params.push(Param {
                        name: format!("conv{conv_i}.bias"),
                        value: Tensor::zeros(vec![*filters]),
                    });
                }
                LayerSpec::Dense { units } => {
                    dense_i += 1;
                    let fan_in = prev[0];
                    let std = (2.0 / fan_in as f64).sqrt();
                    params.push(Param {
                        name: format!("dense{dense_i}.weight"),
                        value: Tensor::from_fn(vec![fan_in, *units], |_| truncated_normal(&mut rng, std)),
                    });
                    params.push(Param {
                        name: format!("dense{dense_i}.bias"),
                        value: Tensor::zeros(vec![*units]),
                    });
                }
                _ => {}
            }
            prev = out.clone();
        }
        let num_classes = shapes.last().expect("validated")[0];
        if augmented && num_classes < 2 {
            return Err(Error::invalid("model", "augmented model needs at least 2 outputs"));
        }
        Ok(Self {
            arch,
            params,
            num_classes,
            dustbin_index: augmented.then_some(num_classes - 1),
        })
    }

    /// Assemble a model from an architecture and explicit parameters, which
    /// must match the names and shapes the architecture implies.
    pub fn from_parts(arch: Architecture, params: Vec<Param<T>>, dustbin_index: Option<usize>) -> Result<Self> {
        let template = Model::<T>::from_architecture(arch.clone(), dustbin_index.is_some(), 0)?;
        if template.params.len() != params.len() {
            return Err(Error::Data(format!(
                "expected {} parameter tensors, found {}",
                template.params.len(),
                params.len()
            )));
        }
        for (want, got) in template.params.iter().zip(&params) {
            if want.name != got.name || want.value.shape() != got.value.shape() {
                return Err(Error::Data(format!(
                    "parameter {} {:?} does not match architecture ({} {:?})",
                    got.name,
                    got.value.shape(),
                    want.name,
                    want.value.shape()
                )));
            }
        }
        if let Some(d) = dustbin_index {
            if d + 1 != template.num_classes {
                return Err(Error::Data(format!(
                    "dustbin index {d} is not the last of {} outputs",
                    template.num_classes
                )));
            }
        }
        Ok(Self { params, ..template })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.arch.input_shape
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    /// Output arity (K, or K + 1 when augmented).
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Number of in-distribution classes K.
    pub fn in_classes(&self) -> usize {
        self.num_classes - usize::from(self.dustbin_index.is_some())
    }

    pub fn dustbin_index(&self) -> Option<usize> {
        self.dustbin_index
    }

    pub fn is_augmented(&self) -> bool {
        self.dustbin_index.is_some()
    }

    fn check_batch(&self, batch_shape: &[usize]) -> Result<()> {
        if batch_shape.len() != self.arch.input_shape.len() + 1 || batch_shape[1..] != self.arch.input_shape[..] {
            let mut want = vec![0];
            want.extend_from_slice(&self.arch.input_shape);
            return Err(Error::Shape {
                op: "model input",
                lhs: batch_shape.to_vec(),
                rhs: want,
            });
        }
        Ok(())
    }

    /// Record a forward pass of `x` (a batch) on `tape`.
    ///
    /// Parameters become differentiable leaves when `track_params` is set and
    /// constants otherwise. Dropout is active only when an RNG is supplied.
    /// Stops before the softmax head and returns logits.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        track_params: bool,
        mut dropout_rng: Option<&mut SeededRng>,
    ) -> Result<Forward> {
        self.check_batch(tape.value(x).shape())?;
        let params = self
            .params
            .iter()
            .map(|p| {
                if track_params {
                    tape.leaf(p.value.clone())
                } else {
                    tape.constant(p.value.clone())
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let feature_layer = self.arch.feature_layer();
        let mut next_param = params.iter().copied();
        let mut h = x;
        let mut features = None;
        let mut logits = None;
        for (i, layer) in self.arch.layers.iter().enumerate() {
            h = match layer {
                LayerSpec::Conv { stride, pad, .. } => {
                    let (w, b) = (next_param.next().expect("w"), next_param.next().expect("b"));
                    let y = tape.conv2d(h, w, *stride, *pad)?;
                    tape.add_bias(y, b)?
                }
                LayerSpec::Relu => tape.relu(h)?,
                LayerSpec::MaxPool { window, stride } => tape.max_pool2d(h, *window, *stride)?,
                LayerSpec::Lrn(p) => tape.lrn(h, *p)?,
                LayerSpec::Dropout { keep } => match dropout_rng.as_deref_mut() {
                    Some(rng) if *keep < 1.0 => tape.dropout(h, *keep, rng)?,
                    _ => h,
                },
                LayerSpec::Flatten => tape.flatten(h)?,
                LayerSpec::Dense { .. } => {
                    let (w, b) = (next_param.next().expect("w"), next_param.next().expect("b"));
                    let y = tape.matmul(h, w)?;
                    tape.add_bias(y, b)?
                }
                LayerSpec::Softmax => {
                    logits = Some(h);
                    h
                }
            };
            if Some(i) == feature_layer {
                features = Some(h);
            }
        }
        Ok(Forward {
            logits: logits.expect("validated softmax head"),
            features,
            params,
        })
    }

    fn run_chunks<F>(&self, batch: &Tensor<T>, mut take: F) -> Result<()>
    where
        F: FnMut(&Tape<T>, &Forward) -> Result<()>,
    {
        self.check_batch(batch.shape())?;
        let n = batch.shape()[0];
        let width = batch.numel() / n;
        for start in (0..n).step_by(INFERENCE_CHUNK) {
            let end = (start + INFERENCE_CHUNK).min(n);
            let mut shape = batch.shape().to_vec();
            shape[0] = end - start;
            let chunk = Tensor::new(shape, batch.data()[start * width..end * width].to_vec())?;
            let mut tape = Tape::new();
            let x = tape.constant(chunk)?;
            let fwd = self.forward(&mut tape, x, false, None)?;
            take(&tape, &fwd)?;
        }
        Ok(())
    }

    /// Class probabilities `[N, num_classes]` in eval mode.
    pub fn probabilities(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let mut out = Vec::with_capacity(batch.shape()[0] * self.num_classes);
        self.run_chunks(batch, |tape, fwd| {
            let mut z = tape.value(fwd.logits).data().to_vec();
            for row in z.chunks_mut(self.num_classes) {
                crate::tensor::softmax_rows(row);
            }
            out.extend(z);
            Ok(())
        })?;
        Tensor::new(vec![batch.shape()[0], self.num_classes], out)
    }

    /// Per-sample predictions. With `train_mode` dropout is applied using
    /// `rng`; otherwise the pass is deterministic.
    pub fn predict(
        &self,
        batch: &Tensor<T>,
        train_mode: bool,
        rng: Option<&mut SeededRng>,
    ) -> Result<Vec<Prediction<T>>> {
        let probs = if train_mode {
            let rng = rng.ok_or_else(|| Error::invalid("predict", "train mode needs an rng"))?;
            self.check_batch(batch.shape())?;
            let mut tape = Tape::new();
            let x = tape.constant(batch.clone())?;
            let fwd = self.forward(&mut tape, x, false, Some(rng))?;
            let p = tape.softmax(fwd.logits)?;
            tape.value(p).clone()
        } else {
            self.probabilities(batch)?
        };
        Ok(probs
            .rows()
            .map(|r| Prediction::from_probabilities(r.to_vec()))
            .collect())
    }

    /// Flattened activations at the end of the last convolution block,
    /// `[N, feature_dim]`, dropout disabled.
    pub fn extract_features(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        if self.arch.feature_layer().is_none() {
            return Err(Error::invalid(
                "extract_features",
                "model has no convolution layer; use layer_activations with a hidden layer index",
            ));
        }
        self.collect_rows(batch, |fwd| fwd.features.expect("feature layer"))
    }

    /// Flattened output of layer `index` (dropout disabled).
    pub fn layer_activations(&self, batch: &Tensor<T>, index: usize) -> Result<Tensor<T>> {
        if index >= self.arch.layers.len() {
            return Err(Error::invalid(
                "layer_activations",
                format!("layer {index} out of range ({} layers)", self.arch.layers.len()),
            ));
        }
        let truncated = Model {
            arch: Architecture {
                name: self.arch.name.clone(),
                input_shape: self.arch.input_shape.clone(),
                layers: self.arch.layers[..=index]
                    .iter()
                    .cloned()
                    .chain([LayerSpec::Flatten, LayerSpec::Softmax])
                    .collect(),
            },
            params: self.params.clone(),
            num_classes: self.num_classes,
            dustbin_index: self.dustbin_index,
        };
        truncated.collect_rows(batch, |fwd| fwd.logits)
    }

    fn collect_rows(&self, batch: &Tensor<T>, pick: impl Fn(&Forward) -> Var) -> Result<Tensor<T>> {
        let n = batch.shape()[0];
        let mut data = Vec::new();
        let mut width = 0;
        self.run_chunks(batch, |tape, fwd| {
            let v = tape.value(pick(fwd));
            width = v.numel() / v.shape()[0];
            data.extend_from_slice(v.data());
            Ok(())
        })?;
        Tensor::new(vec![n, width], data)
    }
}

/// Victim CNN: three 5x5 convolution blocks with 32, 32 and 64 filters and a
/// dropout + dense softmax head of `num_classes` (+1 when augmented) outputs.
pub fn build_victim_cnn<T: Scalar>(
    input_shape: &[usize],
    num_classes: usize,
    augmented: bool,
    seed: u64,
) -> Result<Model<T>> {
    build_convnet("victim", &[32, 32, 64], input_shape, num_classes, augmented, seed)
}

/// Generator CNN used to craft transferable adversaries: same block family as
/// the victim with 16, 16 and 32 filters; never augmented.
pub fn build_generator_cnn<T: Scalar>(input_shape: &[usize], num_classes: usize, seed: u64) -> Result<Model<T>> {
    build_convnet("generator", &[16, 16, 32], input_shape, num_classes, false, seed)
}

fn build_convnet<T: Scalar>(
    name: &str,
    filters: &[usize],
    input_shape: &[usize],
    num_classes: usize,
    augmented: bool,
    seed: u64,
) -> Result<Model<T>> {
    if input_shape.len() != 3 {
        return Err(Error::invalid(
            "build_convnet",
            format!("expected a [C,H,W] input shape, got {input_shape:?}"),
        ));
    }
    if num_classes == 0 {
        return Err(Error::invalid("build_convnet", "num_classes must be positive"));
    }
    let outputs = num_classes + usize::from(augmented);
    let arch = Architecture {
        name: name.to_string(),
        input_shape: input_shape.to_vec(),
        layers: convnet_layers(filters, outputs, 0.5),
    };
    Model::from_architecture(arch, augmented, seed)
}

/// Dense relu stack with a softmax head.
pub fn build_mlp<T: Scalar>(
    input_dim: usize,
    hidden: &[usize],
    num_classes: usize,
    augmented: bool,
    seed: u64,
) -> Result<Model<T>> {
    if hidden.is_empty() {
        return Err(Error::invalid("build_mlp", "hidden layout must not be empty"));
    }
    let mut layers = Vec::new();
    for &units in hidden {
        layers.push(LayerSpec::Dense { units });
        layers.push(LayerSpec::Relu);
    }
    layers.push(LayerSpec::Dense {
        units: num_classes + usize::from(augmented),
    });
    layers.push(LayerSpec::Softmax);
    let arch = Architecture {
        name: "mlp".into(),
        input_shape: vec![input_dim],
        layers,
    };
    Model::from_architecture(arch, augmented, seed)
}
