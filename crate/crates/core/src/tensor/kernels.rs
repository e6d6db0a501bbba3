//! Raw loops behind the convolution, pooling and normalization ops.

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    /// Output extent of a window sweep, `None` when the window does not fit.
    pub fn out_extent(size: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
        let padded = size + 2 * pad;
        (padded >= k && stride > 0).then(|| (padded - k) / stride + 1)
    }

    pub fn patch_len(&self) -> usize {
        self.c * self.k * self.k
    }

    pub fn plane(&self) -> usize {
        self.ho * self.wo
    }
}

/// Output columns `ow` whose input column `ow*stride + kj - pad` lies inside
/// `[0, w)`.
fn valid_cols(g: &ConvGeom, kj: usize) -> std::ops::Range<usize> {
    let lo = if g.pad > kj { (g.pad - kj).div_ceil(g.stride) } else { 0 };
    // largest ow with ow*stride + kj - pad <= w - 1
    let top = g.w + g.pad;
    let hi = if top > kj {
        ((top - kj - 1) / g.stride + 1).min(g.wo)
    } else {
        0
    };
    lo..hi.max(lo)
}

/// Unfold one sample `x[C,H,W]` into `cols[C*K*K, Ho*Wo]` (overwrites `cols`).
pub(crate) fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let plane = g.ho * g.wo;
    cols.fill(T::zero());
    for c in 0..g.c {
        let src = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let valid = valid_cols(g, kj);
                if valid.is_empty() {
                    continue;
                }
                let first = valid.start * g.stride + kj - g.pad;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oh in 0..g.ho {
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    let src_row = &src[ih as usize * g.w..(ih as usize + 1) * g.w];
                    let dst_row = &mut dst[oh * g.wo..(oh + 1) * g.wo];
                    if g.stride == 1 {
                        dst_row[valid.clone()].copy_from_slice(&src_row[first..first + valid.len()]);
                    } else {
                        for (i, d) in dst_row[valid.clone()].iter_mut().enumerate() {
                            *d = src_row[first + i * g.stride];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add `cols` into one sample `dx[C,H,W]`.
pub(crate) fn col2im_add<T: Scalar>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let plane = g.ho * g.wo;
    for c in 0..g.c {
        let dst = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let valid = valid_cols(g, kj);
                if valid.is_empty() {
                    continue;
                }
                let first = valid.start * g.stride + kj - g.pad;
                let src = &cols[row * plane..(row + 1) * plane];
                for oh in 0..g.ho {
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    let dst_row = &mut dst[ih as usize * g.w..(ih as usize + 1) * g.w];
                    let src_seg = &src[oh * g.wo + valid.start..oh * g.wo + valid.end];
                    if g.stride == 1 {
                        for (d, &s) in dst_row[first..first + valid.len()].iter_mut().zip(src_seg) {
                            *d = *d + s;
                        }
                    } else {
                        for (i, &s) in src_seg.iter().enumerate() {
                            let d = &mut dst_row[first + i * g.stride];
                            *d = *d + s;
                        }
                    }
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct PoolGeom {
    pub planes: usize,
    pub h: usize,
    pub w: usize,
    pub window: usize,
    pub stride: usize,
    pub ho: usize,
    pub wo: usize,
}

/// Max pooling without padding; returns outputs and the flat input index of
/// each selected maximum (first maximum wins on ties).
pub(crate) fn maxpool<T: Scalar>(x: &[T], g: &PoolGeom) -> (Vec<T>, Vec<u32>) {
    let out_len = g.planes * g.ho * g.wo;
    let mut out = Vec::with_capacity(out_len);
    let mut arg = Vec::with_capacity(out_len);
    for p in 0..g.planes {
        let base = p * g.h * g.w;
        for oh in 0..g.ho {
            for ow in 0..g.wo {
                let mut best = T::neg_infinity();
                let mut best_idx = 0usize;
                for i in 0..g.window {
                    let row = base + (oh * g.stride + i) * g.w + ow * g.stride;
                    for j in 0..g.window {
                        let v = x[row + j];
                        if v > best {
                            best = v;
                            best_idx = row + j;
                        }
                    }
                }
                out.push(best);
                arg.push(best_idx as u32);
            }
        }
    }
    (out, arg)
}

/// Cross-channel normalization `y = x * (k + alpha * sum_window x^2)^(-beta)`.
/// Returns outputs and the per-element denominator base.
#[allow(clippy::too_many_arguments)]
pub(crate) fn lrn_forward<T: Scalar>(
    x: &[T],
    n: usize,
    c: usize,
    plane: usize,
    size: usize,
    alpha: T,
    beta: T,
    k: T,
) -> (Vec<T>, Vec<T>) {
    let half = size / 2;
    let mut scale = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    for ni in 0..n {
        let sample = ni * c * plane;
        for ci in 0..c {
            let lo = ci.saturating_sub(half);
            let hi = (ci + half).min(c - 1);
            for p in 0..plane {
                let mut acc = T::zero();
                for cj in lo..=hi {
                    let v = x[sample + cj * plane + p];
                    acc = acc + v * v;
                }
                let idx = sample + ci * plane + p;
                let s = k + alpha * acc;
                scale[idx] = s;
                out[idx] = x[idx] * s.powf(-beta);
            }
        }
    }
    (out, scale)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn lrn_backward<T: Scalar>(
    x: &[T],
    scale: &[T],
    dy: &[T],
    n: usize,
    c: usize,
    plane: usize,
    size: usize,
    alpha: T,
    beta: T,
) -> Vec<T> {
    let half = size / 2;
    let two = T::of(2.0);
    // t_i = dy_i * x_i * s_i^(-beta-1)
    let t: Vec<T> = (0..x.len())
        .map(|i| dy[i] * x[i] * scale[i].powf(-beta - T::one()))
        .collect();
    let mut dx = vec![T::zero(); x.len()];
    for ni in 0..n {
        let sample = ni * c * plane;
        for cj in 0..c {
            let lo = cj.saturating_sub(half);
            let hi = (cj + half).min(c - 1);
            for p in 0..plane {
                let j = sample + cj * plane + p;
                let mut acc = T::zero();
                for ci in lo..=hi {
                    acc = acc + t[sample + ci * plane + p];
                }
                dx[j] = dy[j] * scale[j].powf(-beta) - two * alpha * beta * x[j] * acc;
            }
        }
    }
    dx
}
