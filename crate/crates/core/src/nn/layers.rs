use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::LrnParams;

/// One stage of a layer stack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        filters: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Relu,
    MaxPool {
        window: usize,
        stride: usize,
    },
    Lrn(LrnParams),
    Dropout {
        keep: f64,
    },
    Flatten,
    Dense {
        units: usize,
    },
    Softmax,
}

impl LayerSpec {
    fn is_conv_block_tail(&self) -> bool {
        matches!(self, LayerSpec::Relu | LayerSpec::MaxPool { .. } | LayerSpec::Lrn(_))
    }
}

/// Layer stack plus the per-sample input shape it expects.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub name: String,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl Architecture {
    /// Per-sample output shape of every layer, validating that consecutive
    /// layers chain.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let bad = |i: usize, reason: String| Error::invalid("architecture", format!("layer {i}: {reason}"));
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::invalid(
                "architecture",
                format!("invalid input shape {:?}", self.input_shape),
            ));
        }
        let mut shape = self.input_shape.clone();
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = match layer {
                LayerSpec::Conv {
                    filters,
                    kernel,
                    stride,
                    pad,
                } => {
                    if shape.len() != 3 {
                        return Err(bad(i, format!("conv needs [C,H,W] input, got {shape:?}")));
                    }
                    if *filters == 0 || *kernel == 0 || *stride == 0 {
                        return Err(bad(i, "conv attributes must be positive".into()));
                    }
                    let extent = |s: usize| {
                        let padded = s + 2 * pad;
                        (padded >= *kernel).then(|| (padded - kernel) / stride + 1)
                    };
                    match (extent(shape[1]), extent(shape[2])) {
                        (Some(h), Some(w)) => vec![*filters, h, w],
                        _ => return Err(bad(i, format!("kernel {kernel} larger than input {shape:?}"))),
                    }
                }
                LayerSpec::MaxPool { window, stride } => {
                    if shape.len() != 3 || *window == 0 || *stride == 0 {
                        return Err(bad(i, format!("pool needs [C,H,W] input, got {shape:?}")));
                    }
                    if shape[1] < *window || shape[2] < *window {
                        return Err(bad(i, format!("window {window} larger than input {shape:?}")));
                    }
                    vec![
                        shape[0],
                        (shape[1] - window) / stride + 1,
                        (shape[2] - window) / stride + 1,
                    ]
                }
                LayerSpec::Lrn(p) => {
                    if p.size == 0 || p.k <= 0.0 {
                        return Err(bad(i, "lrn size and k must be positive".into()));
                    }
                    shape
                }
                LayerSpec::Dropout { keep } => {
                    if !(*keep > 0.0 && *keep <= 1.0) {
                        return Err(bad(i, format!("keep probability {keep} outside (0, 1]")));
                    }
                    shape
                }
                LayerSpec::Relu | LayerSpec::Softmax => shape,
                LayerSpec::Flatten => vec![shape.iter().product()],
                LayerSpec::Dense { units } => {
                    if shape.len() != 1 {
                        return Err(bad(i, format!("dense needs a flat input, got {shape:?}")));
                    }
                    if *units == 0 {
                        return Err(bad(i, "dense units must be positive".into()));
                    }
                    vec![*units]
                }
            };
            out.push(shape.clone());
        }
        match self.layers.last() {
            Some(LayerSpec::Softmax) if out.last().map(Vec::len) == Some(1) => Ok(out),
            _ => Err(Error::invalid(
                "architecture",
                "layer stack must end in a flat softmax head",
            )),
        }
    }

    /// Index of the layer whose output is the feature space: the end of the
    /// last convolution block (after its relu/pool/normalization).
    pub fn feature_layer(&self) -> Option<usize> {
        let last_conv = self.layers.iter().rposition(|l| matches!(l, LayerSpec::Conv { .. }))?;
        let mut end = last_conv;
        while self.layers.get(end + 1).is_some_and(LayerSpec::is_conv_block_tail) {
            end += 1;
        }
        Some(end)
    }
}

/// cuda-convnet style stack: `[conv5x5 -> relu -> maxpool 3/2 -> lrn] x n`,
/// flatten, dropout, dense softmax head.
pub fn convnet_layers(filters: &[usize], outputs: usize, keep: f64) -> Vec<LayerSpec> {
    let mut layers = Vec::new();
    for &f in filters {
        layers.push(LayerSpec::Conv {
            filters: f,
            kernel: 5,
            stride: 1,
            pad: 2,
        });
        layers.push(LayerSpec::Relu);
        layers.push(LayerSpec::MaxPool { window: 3, stride: 2 });
        layers.push(LayerSpec::Lrn(LrnParams::default()));
    }
    layers.push(LayerSpec::Flatten);
    layers.push(LayerSpec::Dropout { keep });
    layers.push(LayerSpec::Dense { units: outputs });
    layers.push(LayerSpec::Softmax);
    layers
}
