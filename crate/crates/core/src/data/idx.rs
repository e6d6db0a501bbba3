//! IDX container: big-endian header `00 00 <type> <rank>`, `rank` u32 dims,
//! then row-major payload.

use std::path::Path;

use super::{Dataset, Label};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

const TYPE_U8: u8 = 0x08;
const TYPE_F32: u8 = 0x0D;
const TYPE_F64: u8 = 0x0E;

struct Header {
    elem: u8,
    dims: Vec<usize>,
    payload: usize,
}

fn format_err(path: &Path, offset: usize, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        reason: reason.into(),
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<Header> {
    if bytes.len() < 4 {
        return Err(format_err(path, bytes.len(), "truncated magic number"));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(format_err(
            path,
            0,
            format!(
                "bad magic {:02x}{:02x}{:02x}{:02x}",
                bytes[0], bytes[1], bytes[2], bytes[3]
            ),
        ));
    }
    let elem = bytes[2];
    if !matches!(elem, TYPE_U8 | TYPE_F32 | TYPE_F64) {
        return Err(format_err(path, 2, format!("unsupported element type 0x{elem:02x}")));
    }
    let rank = bytes[3] as usize;
    if rank == 0 {
        return Err(format_err(path, 3, "rank 0"));
    }
    let mut dims = Vec::with_capacity(rank);
    for i in 0..rank {
        let at = 4 + 4 * i;
        let chunk = bytes
            .get(at..at + 4)
            .ok_or_else(|| format_err(path, bytes.len(), format!("truncated dimension {i}")))?;
        dims.push(u32::from_be_bytes(chunk.try_into().unwrap()) as usize);
    }
    let payload = 4 + 4 * rank;
    let width = match elem {
        TYPE_U8 => 1,
        TYPE_F32 => 4,
        _ => 8,
    };
    let expected = dims.iter().product::<usize>() * width;
    let have = bytes.len() - payload;
    if have < expected {
        return Err(format_err(
            path,
            bytes.len(),
            format!("truncated payload: {have} of {expected} bytes"),
        ));
    }
    if have > expected {
        return Err(format_err(path, payload + expected, "trailing bytes after payload"));
    }
    Ok(Header { elem, dims, payload })
}

/// Image array: returns per-sample shape and scalars. Byte images are scaled
/// to [0,1]; float arrays must already lie in [0,1].
///
/// A rank-3 file `[N, H, W]` yields samples of shape `[1, H, W]`; other ranks
/// keep their trailing dimensions.
pub fn read_idx_images<T: Scalar>(path: impl AsRef<Path>) -> Result<(usize, Vec<usize>, Vec<T>)> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let h = parse_header(&bytes, path)?;
    if h.dims.len() < 2 {
        return Err(format_err(
            path,
            3,
            format!("expected an image array, found rank {} (labels file?)", h.dims.len()),
        ));
    }
    if h.dims.contains(&0) && h.dims[0] != 0 {
        return Err(format_err(path, 4, "zero-sized sample dimension"));
    }
    let n = h.dims[0];
    let mut shape = h.dims[1..].to_vec();
    if shape.len() == 2 {
        shape.insert(0, 1);
    }
    let body = &bytes[h.payload..];
    let data: Vec<T> = match h.elem {
        TYPE_U8 => {
            let scale = T::one() / T::of(255.0);
            body.iter().map(|&b| T::of(b as f64) * scale).collect()
        }
        TYPE_F32 => body
            .chunks_exact(4)
            .map(|c| T::of(f32::from_be_bytes(c.try_into().unwrap()) as f64))
            .collect(),
        _ => body
            .chunks_exact(8)
            .map(|c| T::of(f64::from_be_bytes(c.try_into().unwrap())))
            .collect(),
    };
    if let Some(i) = data.iter().position(|v| !(*v >= T::zero() && *v <= T::one())) {
        let width = if h.elem == TYPE_F32 { 4 } else { 8 };
        return Err(format_err(
            path,
            h.payload + i * width,
            format!("value {} outside [0,1]", data[i]),
        ));
    }
    Ok((n, shape, data))
}

/// Label vector; byte 255 decodes to [`Label::Dustbin`].
pub fn read_idx_labels(path: impl AsRef<Path>) -> Result<Vec<Label>> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    if bytes.len() >= 4 {
        let magic = u32::from_be_bytes(bytes[..4].try_into().unwrap());
        if magic != IDX_LABELS_MAGIC {
            return Err(format_err(
                path,
                0,
                format!("bad label magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"),
            ));
        }
    }
    let h = parse_header(&bytes, path)?;
    Ok(bytes[h.payload..].iter().map(|&b| Label::from_byte(b)).collect())
}

/// Images and labels as a dataset. The class count is 10, or one more than
/// the largest class label if that is larger.
pub fn load_idx<T: Scalar>(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset<T>> {
    let (images, labels) = (images.as_ref(), labels.as_ref());
    let (n, shape, data) = read_idx_images::<T>(images)?;
    let labels_v = read_idx_labels(labels)?;
    if labels_v.len() != n {
        return Err(format_err(
            labels,
            4,
            format!("{} labels for {n} images in {}", labels_v.len(), images.display()),
        ));
    }
    let k = labels_v
        .iter()
        .filter_map(|l| match l {
            Label::Class(c) => Some(c + 1),
            Label::Dustbin => None,
        })
        .max()
        .unwrap_or(0)
        .max(10);
    Dataset::new(shape, data, labels_v, k, provenance_of(images))
}

/// NotMNIST in IDX form; with `relabel_to_dustbin` every label becomes
/// [`Label::Dustbin`].
pub fn load_notmnist<T: Scalar>(
    images: impl AsRef<Path>,
    labels: impl AsRef<Path>,
    relabel_to_dustbin: bool,
) -> Result<Dataset<T>> {
    let images = images.as_ref();
    let ds = load_idx::<T>(images, labels)?;
    if ds.sample_shape() != [1, 28, 28] {
        return Err(format_err(
            images,
            4,
            format!("expected 28x28 images, found {:?}", ds.sample_shape()),
        ));
    }
    Ok(if relabel_to_dustbin {
        ds.relabel_all(Label::Dustbin)
    } else {
        ds
    })
}

/// An IDX image file used as out-distribution data: every sample is labeled
/// [`Label::Dustbin`] and the dataset is declared over `num_in_classes`
/// in-distribution classes so it can be concatenated with the training set.
pub fn load_outdist_images<T: Scalar>(images: impl AsRef<Path>, num_in_classes: usize) -> Result<Dataset<T>> {
    let images = images.as_ref();
    let (n, shape, data) = read_idx_images::<T>(images)?;
    Dataset::new(
        shape,
        data,
        vec![Label::Dustbin; n],
        num_in_classes,
        provenance_of(images),
    )
}

fn provenance_of(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn header(elem: u8, dims: &[usize]) -> Result<Vec<u8>> {
    let mut out = vec![0, 0, elem, dims.len() as u8];
    for &d in dims {
        let d = u32::try_from(d).map_err(|_| Error::Data(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_be_bytes());
    }
    Ok(out)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Byte images `[n, rows, cols]`.
pub fn write_idx_images_u8(path: impl AsRef<Path>, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    if rows == 0 || cols == 0 || !pixels.len().is_multiple_of(rows * cols) {
        return Err(Error::Data(format!(
            "{} bytes do not form {rows}x{cols} images",
            pixels.len()
        )));
    }
    let mut out = header(TYPE_U8, &[pixels.len() / (rows * cols), rows, cols])?;
    out.extend_from_slice(pixels);
    write_file(path.as_ref(), &out)
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[Label]) -> Result<()> {
    let mut out = header(TYPE_U8, &[labels.len()])?;
    for l in labels {
        out.push(l.to_byte()?);
    }
    write_file(path.as_ref(), &out)
}

/// Dataset as a float IDX image file (element type of `T`) plus label file.
/// Single-channel image samples are written as rank-3 arrays.
pub fn save_idx<T: Scalar>(ds: &Dataset<T>, images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<()> {
    let mut dims = vec![ds.len()];
    match ds.sample_shape() {
        [1, h, w] => dims.extend_from_slice(&[*h, *w]),
        s => dims.extend_from_slice(s),
    }
    let mut out = header(T::IDX_TYPE, &dims)?;
    out.reserve(ds.raw().len() * T::BYTES);
    for &v in ds.raw() {
        v.write_be(&mut out);
    }
    write_file(images.as_ref(), &out)?;
    write_idx_labels(labels, ds.labels())
}
