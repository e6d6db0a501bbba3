//! Two-moons over-generalization experiment with naive and augmented MLPs.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{make_moons_outdist, make_two_moons, moons_bounding_box, Dataset};
use crate::error::{Error, Result};
use crate::nn::{argmax, build_mlp, Model};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::train::{confidence_stats, evaluate, train, EvalRow, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoonsConfig {
    pub n_per_class: usize,
    pub noise: f64,
    pub n_out: usize,
    pub exclusion_radius: f64,
    pub hidden: Vec<usize>,
    pub n_test_per_class: usize,
    pub n_far_test: usize,
    pub grid: usize,
    pub train: TrainConfig,
}

impl Default for MoonsConfig {
    fn default() -> Self {
        Self {
            n_per_class: 500,
            noise: 0.1,
            n_out: 1000,
            exclusion_radius: 0.3,
            hidden: vec![64, 64],
            n_test_per_class: 500,
            n_far_test: 1000,
            grid: 200,
            train: TrainConfig {
                epochs: 150,
                batch_size: 32,
                learning_rate: 0.05,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoonsSummary {
    pub naive_clean: EvalRow,
    pub augmented_clean: EvalRow,
    /// Augmented model on held-out far-background points: `acc` is the
    /// dustbin rate.
    pub augmented_far: EvalRow,
    /// Mean max-confidence of the naive model on the far-background points.
    pub naive_far_confidence: f64,
}

pub struct MoonsRun<T> {
    pub train_set: Dataset<T>,
    pub naive: Model<T>,
    pub augmented: Model<T>,
    pub summary: MoonsSummary,
}

/// Train both MLPs from `seed` and measure clean accuracy and far-background
/// behavior on freshly sampled held-out points.
pub fn run_moons<T: Scalar>(config: &MoonsConfig, seed: u64) -> Result<MoonsRun<T>> {
    let moons = make_two_moons::<T>(config.n_per_class, config.noise, seed)?;
    let out = make_moons_outdist::<T>(config.n_out, seed.wrapping_add(1), config.exclusion_radius)?;
    let aug_set = crate::data::assemble_augmented(&moons, &out, config.n_out, seed.wrapping_add(2))?;
    let test = make_two_moons::<T>(config.n_test_per_class, config.noise, seed.wrapping_add(3))?;
    let far = make_moons_outdist::<T>(config.n_far_test, seed.wrapping_add(4), config.exclusion_radius)?;

    let cfg = TrainConfig {
        seed: seed.wrapping_add(5),
        ..config.train.clone()
    };
    let mut naive = build_mlp::<T>(2, &config.hidden, 2, false, seed.wrapping_add(6))?;
    train(&mut naive, &moons, &cfg)?;
    let mut augmented = build_mlp::<T>(2, &config.hidden, 2, true, seed.wrapping_add(7))?;
    train(&mut augmented, &aug_set, &cfg)?;

    let summary = MoonsSummary {
        naive_clean: evaluate(&naive, &test)?,
        augmented_clean: evaluate(&augmented, &test)?,
        augmented_far: evaluate(&augmented, &far)?,
        naive_far_confidence: confidence_stats(&naive, &far, false, 1)?.mean,
    };
    Ok(MoonsRun {
        train_set: aug_set,
        naive,
        augmented,
        summary,
    })
}

/// Argmax and confidence over a `res x res` lattice covering the moons
/// bounding box scaled by `scale`. Rows are `(x, y, class, confidence)`.
pub fn decision_raster<T: Scalar>(model: &Model<T>, res: usize, scale: f64) -> Result<Vec<(f64, f64, usize, f64)>> {
    if res < 2 {
        return Err(Error::invalid("decision_raster", "resolution must be at least 2"));
    }
    let (x0, x1, y0, y1) = moons_bounding_box(scale);
    let coord = |i: usize, lo: f64, hi: f64| lo + (hi - lo) * i as f64 / (res - 1) as f64;
    let mut pts = Vec::with_capacity(res * res);
    for j in 0..res {
        for i in 0..res {
            pts.push((coord(i, x0, x1), coord(j, y0, y1)));
        }
    }
    let batch = Tensor::new(
        vec![pts.len(), 2],
        pts.iter().flat_map(|&(x, y)| [T::of(x), T::of(y)]).collect(),
    )?;
    let probs = model.probabilities(&batch)?;
    Ok(pts
        .iter()
        .zip(probs.rows())
        .map(|(&(x, y), row)| {
            let (c, p) = argmax(row);
            (x, y, c, p.as_f64())
        })
        .collect())
}

/// CSV `x,y,class,confidence`; the dustbin output index is written as
/// `dustbin`.
pub fn write_raster_csv(rows: &[(f64, f64, usize, f64)], dustbin: Option<usize>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("x,y,class,confidence\n");
    for &(x, y, c, p) in rows {
        if Some(c) == dustbin {
            out.push_str(&format!("{x},{y},dustbin,{p}\n"));
        } else {
            out.push_str(&format!("{x},{y},{c},{p}\n"));
        }
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}
