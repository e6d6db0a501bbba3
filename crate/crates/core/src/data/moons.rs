//! Two interleaving half-circles and a background sampler around them.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};

use super::{Dataset, Label};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::SeededRng;

/// Background box size relative to the noiseless moons' bounding box.
pub const MOONS_BOX_SCALE: f64 = 1.5;

const ATTEMPTS_PER_POINT: usize = 1000;

/// `n_per_class` points on each moon: class 0 is the upper arc
/// `(cos t, sin t)`, class 1 the lower arc `(1 - cos t, 0.5 - sin t)`,
/// `t` evenly spaced over `[0, pi]`, plus isotropic Gaussian noise.
pub fn make_two_moons<T: Scalar>(n_per_class: usize, noise: f64, seed: u64) -> Result<Dataset<T>> {
    if n_per_class == 0 {
        return Err(Error::invalid("make_two_moons", "n must be positive"));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::invalid(
            "make_two_moons",
            format!("noise {noise} must be finite and >= 0"),
        ));
    }
    let mut rng = SeededRng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).expect("valid std");
    let step = if n_per_class > 1 {
        PI / (n_per_class - 1) as f64
    } else {
        0.0
    };
    let mut data = Vec::with_capacity(4 * n_per_class);
    let mut labels = Vec::with_capacity(2 * n_per_class);
    for class in 0..2 {
        for i in 0..n_per_class {
            let t = i as f64 * step;
            let (x, y) = if class == 0 {
                (t.cos(), t.sin())
            } else {
                (1.0 - t.cos(), 0.5 - t.sin())
            };
            let (dx, dy) = if noise > 0.0 {
                (normal.sample(&mut rng), normal.sample(&mut rng))
            } else {
                (0.0, 0.0)
            };
            data.push(T::of(x + dx));
            data.push(T::of(y + dy));
            labels.push(Label::Class(class));
        }
    }
    Dataset::new(vec![2], data, labels, 2, "moons")
}

/// `(x_min, x_max, y_min, y_max)` of the noiseless moons scaled by `scale`
/// about their center.
pub fn moons_bounding_box(scale: f64) -> (f64, f64, f64, f64) {
    let (cx, cy, hx, hy) = (0.5, 0.25, 1.5, 0.75);
    (cx - scale * hx, cx + scale * hx, cy - scale * hy, cy + scale * hy)
}

fn arc_distance(px: f64, py: f64, cx: f64, cy: f64, upper: bool) -> f64 {
    let (dx, dy) = (px - cx, py - cy);
    let on_side = if upper { dy >= 0.0 } else { dy <= 0.0 };
    if on_side {
        ((dx * dx + dy * dy).sqrt() - 1.0).abs()
    } else {
        let a = ((dx - 1.0).powi(2) + dy * dy).sqrt();
        let b = ((dx + 1.0).powi(2) + dy * dy).sqrt();
        a.min(b)
    }
}

/// Euclidean distance from a point to the nearest noiseless moon curve.
pub fn distance_to_moons(x: f64, y: f64) -> f64 {
    arc_distance(x, y, 0.0, 0.0, true).min(arc_distance(x, y, 1.0, 0.5, false))
}

/// `n` points uniform over the moons' bounding box scaled by
/// [`MOONS_BOX_SCALE`], rejecting any within `exclusion_radius` of either
/// moon curve. Labeled dustbin.
pub fn make_moons_outdist<T: Scalar>(n: usize, seed: u64, exclusion_radius: f64) -> Result<Dataset<T>> {
    if n == 0 {
        return Err(Error::invalid("make_moons_outdist", "n must be positive"));
    }
    if !(exclusion_radius >= 0.0 && exclusion_radius.is_finite()) {
        return Err(Error::invalid(
            "make_moons_outdist",
            format!("exclusion radius {exclusion_radius} must be finite and >= 0"),
        ));
    }
    let (x0, x1, y0, y1) = moons_bounding_box(MOONS_BOX_SCALE);
    let mut rng = SeededRng::seed_from_u64(seed);
    let budget = n.saturating_mul(ATTEMPTS_PER_POINT);
    let mut data = Vec::with_capacity(2 * n);
    let mut attempts = 0usize;
    while data.len() < 2 * n {
        if attempts == budget {
            return Err(Error::invalid(
                "make_moons_outdist",
                format!(
                    "accepted {} of {n} points after {budget} draws; exclusion radius {exclusion_radius} too large",
                    data.len() / 2
                ),
            ));
        }
        attempts += 1;
        let (x, y) = (rng.gen_range(x0..x1), rng.gen_range(y0..y1));
        if distance_to_moons(x, y) >= exclusion_radius {
            data.push(T::of(x));
            data.push(T::of(y));
        }
    }
    Dataset::new(vec![2], data, vec![Label::Dustbin; n], 2, "moons-outdist")
}

/// CSV `x,y,label` for 2-D datasets; the dustbin label is written as
/// `dustbin`.
pub fn write_points_csv<T: Scalar>(ds: &Dataset<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if ds.sample_width() != 2 {
        return Err(Error::Data(format!(
            "points CSV needs 2-D samples, found {:?}",
            ds.sample_shape()
        )));
    }
    let mut out = String::from("x,y,label\n");
    for i in 0..ds.len() {
        let p = ds.input(i);
        out.push_str(&format!("{},{},{}\n", p[0], p[1], ds.labels()[i]));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_points_lie_on_unit_arcs() {
        let ds = make_two_moons::<f64>(50, 0.0, 1).unwrap();
        assert_eq!(ds.len(), 100);
        for i in 0..ds.len() {
            let p = ds.input(i);
            let (cx, cy) = if ds.labels()[i] == Label::Class(0) {
                (0.0, 0.0)
            } else {
                (1.0, 0.5)
            };
            let r = ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt();
            assert!((r - 1.0).abs() < 1e-12);
            assert!(distance_to_moons(p[0], p[1]) < 1e-12);
        }
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        assert_eq!(
            make_two_moons::<f64>(30, 0.1, 4).unwrap(),
            make_two_moons::<f64>(30, 0.1, 4).unwrap()
        );
        assert_ne!(
            make_two_moons::<f64>(30, 0.1, 4).unwrap(),
            make_two_moons::<f64>(30, 0.1, 5).unwrap()
        );
        assert_eq!(
            make_moons_outdist::<f64>(30, 4, 0.3).unwrap(),
            make_moons_outdist::<f64>(30, 4, 0.3).unwrap()
        );
    }

    #[test]
    fn outdist_respects_exclusion_against_dense_curve_samples() {
        let ds = make_moons_outdist::<f64>(500, 9, 0.3).unwrap();
        let curve = make_two_moons::<f64>(20_000, 0.0, 0).unwrap();
        let (x0, x1, y0, y1) = moons_bounding_box(MOONS_BOX_SCALE);
        for i in 0..ds.len() {
            let p = ds.input(i);
            assert!(p[0] >= x0 && p[0] < x1 && p[1] >= y0 && p[1] < y1);
            let nearest = (0..curve.len())
                .map(|j| {
                    let q = curve.input(j);
                    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
                })
                .fold(f64::INFINITY, f64::min);
            // Curve sampling spacing bounds the brute-force overestimate.
            assert!(nearest >= 0.3 - 1e-12, "point {p:?} at {nearest}");
            assert!((nearest - distance_to_moons(p[0], p[1])).abs() < 2e-4);
        }
    }

    #[test]
    fn impossible_exclusion_fails_after_bounded_attempts() {
        let err = make_moons_outdist::<f64>(10, 1, 50.0).unwrap_err();
        assert!(err.to_string().contains("too large"));
    }

    #[test]
    fn csv_has_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let ds = make_two_moons::<f64>(2, 0.0, 1)
            .unwrap()
            .concat(&make_moons_outdist(1, 1, 0.3).unwrap())
            .unwrap();
        write_points_csv(&ds, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "x,y,label");
        assert_eq!(lines.len(), 6);
        assert!(lines[5].ends_with(",dustbin"));
    }
}
