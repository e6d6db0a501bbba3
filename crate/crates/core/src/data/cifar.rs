//! CIFAR-10/100 binary batches.

use std::path::Path;

use super::{Dataset, Label};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CIFAR_RECORD_PIXELS: usize = 3 * 32 * 32;

/// Coarse label names of CIFAR-100, indexed by coarse label byte.
pub const CIFAR100_SUPERCLASSES: [&str; 20] = [
    "aquatic_mammals",
    "fish",
    "flowers",
    "food_containers",
    "fruit_and_vegetables",
    "household_electrical_devices",
    "household_furniture",
    "insects",
    "large_carnivores",
    "large_man-made_outdoor_things",
    "large_natural_outdoor_scenes",
    "large_omnivores_and_herbivores",
    "medium_mammals",
    "non-insect_invertebrates",
    "people",
    "reptiles",
    "small_mammals",
    "trees",
    "vehicles_1",
    "vehicles_2",
];

/// Superclasses overlapping CIFAR-10 concepts (carnivores, medium and small
/// mammals, both vehicle groups); dropped when CIFAR-100 serves as
/// out-distribution data for a CIFAR-10 model.
pub const CIFAR100_EXCLUDED_SUPERCLASSES: [usize; 5] = [8, 12, 16, 18, 19];

fn read_records(path: &Path, label_bytes: usize) -> Result<Vec<u8>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let rec = label_bytes + CIFAR_RECORD_PIXELS;
    if bytes.is_empty() || bytes.len() % rec != 0 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: (bytes.len() - bytes.len() % rec) as u64,
            reason: format!("file size {} is not a multiple of the {rec}-byte record", bytes.len()),
        });
    }
    Ok(bytes)
}

fn scale<T: Scalar>(pixels: &[u8], out: &mut Vec<T>) {
    let s = T::one() / T::of(255.0);
    out.extend(pixels.iter().map(|&b| T::of(b as f64) * s));
}

/// CIFAR-10 batches (`1 label byte + 3072 pixel bytes` per record), scaled to
/// [0,1], samples shaped `[3, 32, 32]`.
pub fn load_cifar10<T: Scalar, P: AsRef<Path>>(paths: &[P]) -> Result<Dataset<T>> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for p in paths {
        let p = p.as_ref();
        let bytes = read_records(p, 1)?;
        for (r, rec) in bytes.chunks_exact(1 + CIFAR_RECORD_PIXELS).enumerate() {
            if rec[0] >= 10 {
                return Err(Error::Format {
                    path: p.to_path_buf(),
                    offset: (r * (1 + CIFAR_RECORD_PIXELS)) as u64,
                    reason: format!("label {} out of range", rec[0]),
                });
            }
            labels.push(Label::Class(rec[0] as usize));
            scale(&rec[1..], &mut data);
        }
    }
    Dataset::new(vec![3, 32, 32], data, labels, 10, "cifar10")
}

/// CIFAR-100 batches (`coarse byte, fine byte, 3072 pixel bytes`), dropping
/// records whose coarse label is in `excluded_superclasses`. Labels are the
/// fine classes.
pub fn load_cifar100<T: Scalar, P: AsRef<Path>>(paths: &[P], excluded_superclasses: &[usize]) -> Result<Dataset<T>> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for p in paths {
        let p = p.as_ref();
        let bytes = read_records(p, 2)?;
        for (r, rec) in bytes.chunks_exact(2 + CIFAR_RECORD_PIXELS).enumerate() {
            if rec[0] >= 20 || rec[1] >= 100 {
                return Err(Error::Format {
                    path: p.to_path_buf(),
                    offset: (r * (2 + CIFAR_RECORD_PIXELS)) as u64,
                    reason: format!("labels ({}, {}) out of range", rec[0], rec[1]),
                });
            }
            if excluded_superclasses.contains(&(rec[0] as usize)) {
                continue;
            }
            labels.push(Label::Class(rec[1] as usize));
            scale(&rec[2..], &mut data);
        }
    }
    Dataset::new(vec![3, 32, 32], data, labels, 100, "cifar100")
}

/// Per-pixel mean image of a dataset.
pub fn mean_image<T: Scalar>(ds: &Dataset<T>) -> Result<Vec<T>> {
    if ds.is_empty() {
        return Err(Error::Data("mean of an empty dataset".into()));
    }
    let w = ds.sample_width();
    let mut acc = vec![0f64; w];
    for i in 0..ds.len() {
        for (a, v) in acc.iter_mut().zip(ds.input(i)) {
            *a += v.as_f64();
        }
    }
    Ok(acc.into_iter().map(|a| T::of(a / ds.len() as f64)).collect())
}

fn shift<T: Scalar>(ds: &Dataset<T>, mean: &[T], sign: T) -> Result<Dataset<T>> {
    let w = ds.sample_width();
    if mean.len() != w {
        return Err(Error::Shape {
            op: "mean_shift",
            lhs: ds.sample_shape().to_vec(),
            rhs: vec![mean.len()],
        });
    }
    let data = ds
        .raw()
        .chunks_exact(w)
        .flat_map(|s| s.iter().zip(mean).map(move |(&v, &m)| v + sign * m))
        .collect();
    ds.with_inputs(data)
}

pub fn subtract_mean<T: Scalar>(ds: &Dataset<T>, mean: &[T]) -> Result<Dataset<T>> {
    shift(ds, mean, -T::one())
}

pub fn add_mean<T: Scalar>(ds: &Dataset<T>, mean: &[T]) -> Result<Dataset<T>> {
    shift(ds, mean, T::one())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn pixels(seed: usize) -> Vec<u8> {
        (0..CIFAR_RECORD_PIXELS)
            .map(|i| ((i * 7 + seed * 13) % 256) as u8)
            .collect()
    }

    #[test]
    fn cifar10_records_and_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.bin");
        let mut bytes = Vec::new();
        for r in 0..4 {
            bytes.push(r as u8);
            bytes.extend(pixels(r));
        }
        std::fs::write(&path, &bytes).unwrap();
        let ds = load_cifar10::<f64, _>(&[&path]).unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.sample_shape(), &[3, 32, 32]);
        assert_eq!(ds.labels()[3], Label::Class(3));
        assert_eq!(ds.input(1)[0], 13.0 / 255.0);

        std::fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(load_cifar10::<f64, _>(&[&path]), Err(Error::Format { .. })));
    }

    #[test]
    fn superclass_exclusion_drops_their_fine_classes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.bin");
        let mut bytes = Vec::new();
        // Synthetic grouping: five fine classes per coarse class.
        for fine in 0..100u8 {
            bytes.extend([fine % 20, fine]);
            bytes.extend(pixels(fine as usize));
        }
        std::fs::write(&path, &bytes).unwrap();
        let all = load_cifar100::<f32, _>(&[&path], &[]).unwrap();
        assert_eq!(all.len(), 100);
        let kept = load_cifar100::<f32, _>(&[&path], &CIFAR100_EXCLUDED_SUPERCLASSES).unwrap();
        let classes: BTreeSet<_> = kept.labels().iter().collect();
        assert_eq!(classes.len(), 75);
    }

    #[test]
    fn mean_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.bin");
        let mut bytes = Vec::new();
        for r in 0..3 {
            bytes.push(0);
            bytes.extend(pixels(r));
        }
        std::fs::write(&path, &bytes).unwrap();
        let ds = load_cifar10::<f64, _>(&[&path]).unwrap();
        let mean = mean_image(&ds).unwrap();
        let centered = subtract_mean(&ds, &mean).unwrap();
        let back = add_mean(&centered, &mean).unwrap();
        for (a, b) in back.raw().iter().zip(ds.raw()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(subtract_mean(&ds, &mean[1..]).is_err());
    }
}
