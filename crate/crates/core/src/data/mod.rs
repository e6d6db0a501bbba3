//! Labeled datasets, file-format readers and synthetic generators.

mod cifar;
mod idx;
mod moons;

pub use cifar::{
    add_mean, load_cifar10, load_cifar100, mean_image, subtract_mean, CIFAR100_EXCLUDED_SUPERCLASSES,
    CIFAR100_SUPERCLASSES, CIFAR_RECORD_PIXELS,
};
pub use idx::{
    load_idx, load_notmnist, load_outdist_images, read_idx_images, read_idx_labels, save_idx, write_idx_images_u8,
    write_idx_labels, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC,
};
pub use moons::{
    distance_to_moons, make_moons_outdist, make_two_moons, moons_bounding_box, write_points_csv, MOONS_BOX_SCALE,
};

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::SeededRng;

/// Class label: an in-distribution class or the reject class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Class(usize),
    Dustbin,
}

/// Byte used for [`Label::Dustbin`] in IDX label files.
pub const DUSTBIN_BYTE: u8 = 255;

impl Label {
    pub fn to_byte(self) -> Result<u8> {
        match self {
            Label::Dustbin => Ok(DUSTBIN_BYTE),
            Label::Class(c) if c < DUSTBIN_BYTE as usize => Ok(c as u8),
            Label::Class(c) => Err(Error::Data(format!("class {c} does not fit an IDX label byte"))),
        }
    }

    pub fn from_byte(b: u8) -> Self {
        if b == DUSTBIN_BYTE {
            Label::Dustbin
        } else {
            Label::Class(b as usize)
        }
    }

    /// Output index for a model with an optional dustbin output.
    pub fn target_index(self, dustbin_index: Option<usize>) -> Option<usize> {
        match self {
            Label::Class(c) => Some(c),
            Label::Dustbin => dustbin_index,
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Label::Class(c) => write!(f, "{c}"),
            Label::Dustbin => f.write_str("dustbin"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample<T> {
    pub input: Tensor<T>,
    pub label: Label,
}

/// Immutable collection of equally shaped samples stored contiguously.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    sample_shape: Vec<usize>,
    data: Vec<T>,
    labels: Vec<Label>,
    num_in_classes: usize,
    provenance: String,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(
        sample_shape: Vec<usize>,
        data: Vec<T>,
        labels: Vec<Label>,
        num_in_classes: usize,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let width: usize = sample_shape.iter().product();
        if sample_shape.is_empty() || width == 0 {
            return Err(Error::Data(format!("invalid sample shape {sample_shape:?}")));
        }
        if data.len() != width * labels.len() {
            return Err(Error::Data(format!(
                "{} scalars do not hold {} samples of shape {sample_shape:?}",
                data.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels
            .iter()
            .find(|l| matches!(l, Label::Class(c) if *c >= num_in_classes))
        {
            return Err(Error::Data(format!(
                "label {bad} outside {num_in_classes} in-distribution classes"
            )));
        }
        Ok(Self {
            sample_shape,
            data,
            labels,
            num_in_classes,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.sample_shape
    }

    pub fn sample_width(&self) -> usize {
        self.sample_shape.iter().product()
    }

    pub fn num_in_classes(&self) -> usize {
        self.num_in_classes
    }

    pub fn has_dustbin(&self) -> bool {
        self.labels.contains(&Label::Dustbin)
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn with_provenance(mut self, provenance: impl Into<String>) -> Self {
        self.provenance = provenance.into();
        self
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn raw(&self) -> &[T] {
        &self.data
    }

    pub fn input(&self, i: usize) -> &[T] {
        let w = self.sample_width();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn sample(&self, i: usize) -> LabeledSample<T> {
        LabeledSample {
            input: Tensor::new(self.sample_shape.clone(), self.input(i).to_vec()).expect("consistent shape"),
            label: self.labels[i],
        }
    }

    /// Inputs at `indices` stacked into `[B, ...sample_shape]`.
    pub fn batch(&self, indices: &[usize]) -> (Tensor<T>, Vec<Label>) {
        let w = self.sample_width();
        let mut data = Vec::with_capacity(indices.len() * w);
        for &i in indices {
            data.extend_from_slice(self.input(i));
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(&self.sample_shape);
        (
            Tensor::new(shape, data).expect("consistent shape"),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    /// Contiguous range of samples as a batch tensor.
    pub fn range_tensor(&self, range: std::ops::Range<usize>) -> Tensor<T> {
        let w = self.sample_width();
        let mut shape = vec![range.len()];
        shape.extend_from_slice(&self.sample_shape);
        Tensor::new(shape, self.data[range.start * w..range.end * w].to_vec()).expect("consistent shape")
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.sample_width());
        for &i in indices {
            data.extend_from_slice(self.input(i));
        }
        Self {
            sample_shape: self.sample_shape.clone(),
            data,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_in_classes: self.num_in_classes,
            provenance: self.provenance.clone(),
        }
    }

    pub fn take(&self, n: usize) -> Self {
        self.subset(&(0..n.min(self.len())).collect::<Vec<_>>())
    }

    pub fn relabel_all(mut self, label: Label) -> Self {
        self.labels.iter_mut().for_each(|l| *l = label);
        self
    }

    /// Replace the inputs, keeping labels and metadata.
    pub fn with_inputs(&self, data: Vec<T>) -> Result<Self> {
        Self::new(
            self.sample_shape.clone(),
            data,
            self.labels.clone(),
            self.num_in_classes,
            self.provenance.clone(),
        )
    }

    pub fn histogram(&self) -> BTreeMap<Label, usize> {
        let mut h = BTreeMap::new();
        for &l in &self.labels {
            *h.entry(l).or_insert(0) += 1;
        }
        h
    }

    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.sample_shape != other.sample_shape {
            return Err(Error::Shape {
                op: "concat",
                lhs: self.sample_shape.clone(),
                rhs: other.sample_shape.clone(),
            });
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Self::new(
            self.sample_shape.clone(),
            data,
            labels,
            self.num_in_classes,
            format!("{}+{}", self.provenance, other.provenance),
        )
    }

    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        Dataset {
            sample_shape: self.sample_shape.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
            labels: self.labels.clone(),
            num_in_classes: self.num_in_classes,
            provenance: self.provenance.clone(),
        }
    }
}

/// First `n` entries of a seeded permutation of `0..len`, plus the rest.
pub fn select_indices(len: usize, n: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n > len {
        return Err(Error::Data(format!("cannot select {n} of {len} samples")));
    }
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut SeededRng::seed_from_u64(seed));
    let rest = idx.split_off(n);
    Ok((idx, rest))
}

/// Split an out-distribution set into the `n_out` samples that
/// [`assemble_augmented`] uses for training (with the same `seed`) and the
/// held-out remainder.
pub fn split_out<T: Scalar>(out: &Dataset<T>, n_out: usize, seed: u64) -> Result<(Dataset<T>, Dataset<T>)> {
    let (chosen, rest) = select_indices(out.len(), n_out, seed)?;
    Ok((out.subset(&chosen), out.subset(&rest)))
}

/// In-distribution set plus `n_out` seeded-uniform out-distribution samples
/// labeled dustbin, shuffled. With `n_out = 0` the input set is returned
/// unchanged.
pub fn assemble_augmented<T: Scalar>(
    in_set: &Dataset<T>,
    out_set: &Dataset<T>,
    n_out: usize,
    seed: u64,
) -> Result<Dataset<T>> {
    if n_out > out_set.len() {
        return Err(Error::Data(format!(
            "requested {n_out} out-distribution samples, only {} available",
            out_set.len()
        )));
    }
    if n_out == 0 {
        return Ok(in_set.clone());
    }
    let (chosen, _) = split_out(out_set, n_out, seed)?;
    let chosen = chosen.relabel_all(Label::Dustbin);
    let mut union = in_set.concat(&Dataset {
        num_in_classes: in_set.num_in_classes,
        ..chosen
    })?;
    let mut order: Vec<usize> = (0..union.len()).collect();
    order.shuffle(&mut SeededRng::seed_from_u64(seed ^ 0x5eed_5eed_5eed_5eed));
    union = union.subset(&order);
    Ok(union.with_provenance(format!("{}+{}x{}", in_set.provenance, out_set.provenance, n_out)))
}
