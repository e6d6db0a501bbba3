//! Feature-space views: PCA, labeled point clouds and a separation score.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Label};
use crate::error::{Error, Result};
use crate::nn::{Model, INFERENCE_CHUNK};
use crate::parallel::map_ranges;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Eigen-decomposition of a symmetric `d x d` row-major matrix by cyclic
/// Jacobi rotations. Returns eigenvalues in descending order and the matching
/// unit eigenvectors as rows.
pub fn symmetric_eigen(a: &[f64], d: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if a.len() != d * d || d == 0 {
        return Err(Error::Shape {
            op: "symmetric_eigen",
            lhs: vec![a.len()],
            rhs: vec![d, d],
        });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "symmetric_eigen" });
    }
    let mut m = a.to_vec();
    // v holds eigenvectors as columns.
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    let total: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let off: f64 = (0..d)
            .flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * d + j] * m[i * d + j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * total || off == 0.0 {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = m[p * d + q];
                if apq == 0.0 {
                    continue;
                }
                let (app, aqq) = (m[p * d + p], m[q * d + q]);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let (mkp, mkq) = (m[k * d + p], m[k * d + q]);
                    m[k * d + p] = c * mkp - s * mkq;
                    m[k * d + q] = s * mkp + c * mkq;
                }
                for k in 0..d {
                    let (mpk, mqk) = (m[p * d + k], m[q * d + k]);
                    m[p * d + k] = c * mpk - s * mqk;
                    m[q * d + k] = s * mpk + c * mqk;
                }
                for k in 0..d {
                    let (vkp, vkq) = (v[k * d + p], v[k * d + q]);
                    v[k * d + p] = c * vkp - s * vkq;
                    v[k * d + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| m[j * d + j].total_cmp(&m[i * d + i]));
    let values = order.iter().map(|&i| m[i * d + i]).collect();
    let vectors = order.iter().map(|&i| (0..d).map(|k| v[k * d + i]).collect()).collect();
    Ok((values, vectors))
}

/// Mean and top principal directions of a feature matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `k` orthonormal rows of length `d`; the largest-magnitude element of
    /// each row is positive.
    pub components: Vec<Vec<f64>>,
    /// Sample covariance eigenvalues of the components (non-increasing).
    pub explained_variance: Vec<f64>,
}

/// Fit a `k`-component PCA to the rows of `features` (`[n, d]`).
///
/// Fails when the covariance cannot have rank `k` (`n - 1 < k` or `d < k`)
/// or is identically zero. Directions beyond the data's numerical rank are
/// returned with near-zero variance.
pub fn pca_fit<T: Scalar>(features: &Tensor<T>, k: usize) -> Result<PcaModel> {
    if features.rank() != 2 {
        return Err(Error::invalid(
            "pca_fit",
            format!("expected [n, d] features, got {:?}", features.shape()),
        ));
    }
    let (n, d) = (features.shape()[0], features.shape()[1]);
    if k == 0 {
        return Err(Error::invalid("pca_fit", "k must be positive"));
    }
    let rank_bound = (n.saturating_sub(1)).min(d);
    if rank_bound < k {
        return Err(Error::invalid(
            "pca_fit",
            format!("covariance of {n} samples in {d} dimensions has rank at most {rank_bound} < {k}"),
        ));
    }
    let x: Vec<f64> = features.data().iter().map(|v| v.as_f64()).collect();
    let mut mean = vec![0.0; d];
    for row in x.chunks(d) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered: Vec<f64> = x
        .chunks(d)
        .flat_map(|r| r.iter().zip(&mean).map(|(v, m)| v - m))
        .collect();
    let mut cov = vec![0.0; d * d];
    f64::gemm(
        d,
        n,
        d,
        1.0 / (n - 1) as f64,
        &centered,
        (1, d as isize),
        &centered,
        (d as isize, 1),
        0.0,
        &mut cov,
        (d as isize, 1),
    );
    // Symmetrize against rounding in the product.
    for i in 0..d {
        for j in i + 1..d {
            let s = 0.5 * (cov[i * d + j] + cov[j * d + i]);
            cov[i * d + j] = s;
            cov[j * d + i] = s;
        }
    }
    let (values, vectors) = symmetric_eigen(&cov, d)?;
    if values[0] <= 0.0 {
        return Err(Error::invalid(
            "pca_fit",
            "covariance has rank 0 (all samples identical)",
        ));
    }
    let components = vectors
        .into_iter()
        .take(k)
        .map(|mut c| {
            let lead = c
                .iter()
                .fold(0.0f64, |best, &v| if v.abs() > best.abs() { v } else { best });
            if lead < 0.0 {
                c.iter_mut().for_each(|v| *v = -*v);
            }
            c
        })
        .collect();
    Ok(PcaModel {
        mean,
        components,
        explained_variance: values.into_iter().take(k).map(|v| v.max(0.0)).collect(),
    })
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn project(&self, row: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.iter().zip(row).zip(&self.mean).map(|((c, x), m)| c * (x - m)).sum())
            .collect()
    }

    pub fn reconstruct(&self, coords: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, &z) in self.components.iter().zip(coords) {
            for (o, v) in out.iter_mut().zip(c) {
                *o += z * v;
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("serializable");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let pca: Self = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            reason: e.to_string(),
        })?;
        if pca.components.iter().any(|c| c.len() != pca.mean.len())
            || pca.components.len() != pca.explained_variance.len()
        {
            return Err(Error::Data(format!("{}: inconsistent PCA dimensions", path.display())));
        }
        Ok(pca)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    InDist(usize),
    OutDist,
    Fgs,
    Tfgs,
}

impl std::fmt::Display for Category {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Category::InDist(k) => write!(f, "class_{k}"),
            Category::OutDist => f.write_str("outdist"),
            Category::Fgs => f.write_str("fgs"),
            Category::Tfgs => f.write_str("tfgs"),
        }
    }
}

impl std::str::FromStr for Category {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "outdist" => Ok(Category::OutDist),
            "fgs" => Ok(Category::Fgs),
            "tfgs" => Ok(Category::Tfgs),
            _ => s
                .strip_prefix("class_")
                .and_then(|k| k.parse().ok())
                .map(Category::InDist)
                .ok_or_else(|| Error::Data(format!("unknown category {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CloudPoint {
    pub coords: [f64; 3],
    pub category: Category,
    pub source_index: usize,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<CloudPoint>,
}

/// Full-dimensional feature rows with their categories.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledFeatures {
    pub dim: usize,
    pub rows: Vec<f64>,
    pub categories: Vec<Category>,
    pub source_index: Vec<usize>,
}

impl LabeledFeatures {
    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_tensor(&self) -> Result<Tensor<f64>> {
        Tensor::new(vec![self.len(), self.dim], self.rows.clone())
    }
}

/// Last-conv-block features of every sample, sharded over `threads`.
pub fn dataset_features<T: Scalar>(model: &Model<T>, data: &Dataset<T>, threads: usize) -> Result<Tensor<T>> {
    let parts = map_ranges(data.len(), INFERENCE_CHUNK, threads, |r| {
        model.extract_features(&data.range_tensor(r)).map(Tensor::into_data)
    })?;
    let flat = parts.concat();
    let width = flat.len() / data.len().max(1);
    Tensor::new(vec![data.len(), width], flat)
}

/// Features of clean (categorized by true class), out-distribution, FGS and
/// T-FGS sets.
pub fn collect_features<T: Scalar>(
    model: &Model<T>,
    clean: &Dataset<T>,
    outdist: &Dataset<T>,
    fgs: &Dataset<T>,
    tfgs: &Dataset<T>,
    threads: usize,
) -> Result<LabeledFeatures> {
    let mut out = LabeledFeatures {
        dim: 0,
        rows: Vec::new(),
        categories: Vec::new(),
        source_index: Vec::new(),
    };
    for (set, fixed) in [
        (clean, None),
        (outdist, Some(Category::OutDist)),
        (fgs, Some(Category::Fgs)),
        (tfgs, Some(Category::Tfgs)),
    ] {
        if set.is_empty() {
            continue;
        }
        let f = dataset_features(model, set, threads)?;
        out.dim = f.shape()[1];
        out.rows.extend(f.data().iter().map(|v| v.as_f64()));
        for (i, label) in set.labels().iter().enumerate() {
            let cat = match (fixed, label) {
                (Some(c), _) => c,
                (None, Label::Class(k)) => Category::InDist(*k),
                (None, Label::Dustbin) => Category::OutDist,
            };
            out.categories.push(cat);
            out.source_index.push(i);
        }
    }
    if out.is_empty() {
        return Err(Error::Data("no samples to embed".into()));
    }
    Ok(out)
}

/// PCA-3 point cloud of a labeled feature set; PCA is fit on all rows.
pub fn embed(features: &LabeledFeatures) -> Result<(PointCloud, PcaModel)> {
    let pca = pca_fit(&features.as_tensor()?, 3)?;
    let points = (0..features.len())
        .map(|i| {
            let p = pca.project(features.row(i));
            CloudPoint {
                coords: [p[0], p[1], p[2]],
                category: features.categories[i],
                source_index: features.source_index[i],
            }
        })
        .collect();
    Ok((PointCloud { points }, pca))
}

/// Features, 3-D point cloud and PCA model for the four sample groups.
pub fn build_pointcloud<T: Scalar>(
    model: &Model<T>,
    clean: &Dataset<T>,
    outdist: &Dataset<T>,
    fgs: &Dataset<T>,
    tfgs: &Dataset<T>,
    threads: usize,
) -> Result<(PointCloud, PcaModel, LabeledFeatures)> {
    let features = collect_features(model, clean, outdist, fgs, tfgs, threads)?;
    let (cloud, pca) = embed(&features)?;
    Ok((cloud, pca, features))
}

fn centroid(rows: &[&[f64]], dim: usize) -> Vec<f64> {
    let mut c = vec![0.0; dim];
    for r in rows {
        for (a, v) in c.iter_mut().zip(r.iter()) {
            *a += v;
        }
    }
    c.iter_mut().for_each(|a| *a /= rows.len() as f64);
    c
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Distance from the centroid of `category` to the nearest in-distribution
/// class centroid, divided by the mean (over classes) of the average distance
/// of class members to their centroid. Computed in the full feature space.
pub fn separation_score(features: &LabeledFeatures, category: Category) -> Result<f64> {
    let mut groups: std::collections::BTreeMap<Category, Vec<&[f64]>> = Default::default();
    for i in 0..features.len() {
        groups.entry(features.categories[i]).or_default().push(features.row(i));
    }
    let target = groups
        .get(&category)
        .ok_or_else(|| Error::Data(format!("no samples in category {category}")))?;
    let c_target = centroid(target, features.dim);
    let classes: Vec<(Vec<f64>, f64)> = groups
        .iter()
        .filter(|(c, _)| matches!(c, Category::InDist(_)) && **c != category)
        .map(|(_, rows)| {
            let c = centroid(rows, features.dim);
            let spread = rows.iter().map(|r| dist(r, &c)).sum::<f64>() / rows.len() as f64;
            (c, spread)
        })
        .collect();
    if classes.is_empty() {
        return Err(Error::Data("no in-distribution class to compare against".into()));
    }
    let spread = classes.iter().map(|c| c.1).sum::<f64>() / classes.len() as f64;
    if spread <= 0.0 {
        return Err(Error::Data("in-distribution classes have zero spread".into()));
    }
    let nearest = classes
        .iter()
        .map(|(c, _)| dist(c, &c_target))
        .fold(f64::INFINITY, f64::min);
    Ok(nearest / spread)
}

/// CSV `pc1,pc2,pc3,category,source_index`, coordinates written in
/// shortest round-trip form.
pub fn write_pointcloud_csv(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("pc1,pc2,pc3,category,source_index\n");
    for p in &cloud.points {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            p.coords[0], p.coords[1], p.coords[2], p.category, p.source_index
        ));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

pub fn read_pointcloud_csv(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "pc1,pc2,pc3,category,source_index")) => {}
        _ => return Err(Error::Data(format!("{}: missing point cloud header", path.display()))),
    }
    let bad = |n: usize| Error::Data(format!("{}: malformed line {}", path.display(), n + 1));
    let mut points = Vec::new();
    for (n, line) in lines.filter(|(_, l)| !l.is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad(n));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(n));
        points.push(CloudPoint {
            coords: [num(f[0])?, num(f[1])?, num(f[2])?],
            category: f[3].parse()?,
            source_index: f[4].parse().map_err(|_| bad(n))?,
        });
    }
    Ok(PointCloud { points })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_diagonalizes_known_matrix() {
        // Eigenvalues 3 and 1 with eigenvectors (1,1)/sqrt2 and (1,-1)/sqrt2.
        let (vals, vecs) = symmetric_eigen(&[2.0, 1.0, 1.0, 2.0], 2).unwrap();
        assert!((vals[0] - 3.0).abs() < 1e-14 && (vals[1] - 1.0).abs() < 1e-14);
        assert!((vecs[0][0].abs() - 0.5f64.sqrt()).abs() < 1e-14);
        assert!((vecs[0][0] - vecs[0][1]).abs() < 1e-14);
    }

    #[test]
    fn category_strings_roundtrip() {
        for c in [Category::InDist(7), Category::OutDist, Category::Fgs, Category::Tfgs] {
            assert_eq!(c.to_string().parse::<Category>().unwrap(), c);
        }
        assert!("class_x".parse::<Category>().is_err());
    }

    #[test]
    fn structural_rank_is_checked() {
        let x = Tensor::<f64>::from_fn(vec![3, 5], |i| i as f64);
        let err = pca_fit(&x, 3).unwrap_err();
        assert!(err.to_string().contains("rank at most 2"), "{err}");
        let same = Tensor::<f64>::full(vec![10, 4], 1.0);
        assert!(pca_fit(&same, 3).unwrap_err().to_string().contains("rank 0"));
    }
}
