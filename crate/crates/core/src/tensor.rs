//! Dense row-major tensors and their on-disk container.
//!
//! A [`Tensor`] is plain data: a shape and a contiguous `f64` buffer. Gradient
//! tracking lives on the [`crate::autodiff::Tape`], which wraps tensors in
//! graph nodes.
//!
//! The binary container written by [`Tensor::write_to`] is
//!
//! ```text
//! magic  "SCKT"            4 bytes
//! version u32 LE           currently 1
//! dtype   u32 LE           0 = f64, 1 = f32
//! rank    u32 LE
//! dims    rank x u64 LE
//! values  product(dims) x dtype, LE
//! ```

use std::fmt;
use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};

pub const CONTAINER_MAGIC: &[u8; 4] = b"SCKT";
pub const CONTAINER_VERSION: u32 = 1;

/// Storage precision used by the tensor container.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DType {
    #[default]
    F64,
    F32,
}

impl DType {
    pub fn tag(self) -> u32 {
        match self {
            DType::F64 => 0,
            DType::F32 => 1,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(DType::F64),
            1 => Some(DType::F32),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F64 => 8,
            DType::F32 => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::F64 => "f64",
            DType::F32 => "f32",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "f64" => Some(DType::F64),
            "f32" => Some(DType::F32),
            _ => None,
        }
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const PREVIEW: usize = 8;
        write!(f, "Tensor{:?} ", self.shape)?;
        if self.data.len() <= PREVIEW {
            write!(f, "{:?}", self.data)
        } else {
            write!(f, "{:?}..", &self.data[..PREVIEW])
        }
    }
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        let n = numel(&shape);
        if n != data.len() {
            return Err(Error::shape("Tensor::new", &shape, &[data.len()]));
        }
        Ok(Tensor { shape, data })
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        let n = numel(&shape);
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 1.0)
    }

    /// `n x n` identity matrix.
    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros([n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> f64) -> Self {
        let shape = shape.into();
        let data = (0..numel(&shape)).map(&mut f).collect();
        Tensor { shape, data }
    }

    pub fn randn<R: Rng + ?Sized>(shape: impl Into<Vec<usize>>, std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std).expect("finite std");
        Self::from_fn(shape, |_| normal.sample(rng))
    }

    pub fn rand_uniform<R: Rng + ?Sized>(
        shape: impl Into<Vec<usize>>,
        lo: f64,
        hi: f64,
        rng: &mut R,
    ) -> Self {
        let dist = Uniform::new(lo, hi).expect("lo < hi");
        Self::from_fn(shape, |_| dist.sample(rng))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn at(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let o = self.offset(index);
        self.data[o] = value;
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &d)| {
                assert!(i < d, "index {index:?} out of bounds for {:?}", self.shape);
                acc * d + i
            })
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Tensor> {
        let shape = shape.into();
        if numel(&shape) != self.data.len() {
            return Err(Error::shape("reshape", &self.shape, &shape));
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::shape("zip_map", &self.shape, &other.shape));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest elementwise absolute difference; infinite on shape mismatch.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        if self.shape != other.shape {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn add_assign_scaled(&mut self, other: &Tensor, scale: f64) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    /// Serializes into the `SCKT` container.
    pub fn write_to<W: Write>(&self, w: &mut W, dtype: DType) -> std::io::Result<()> {
        w.write_all(CONTAINER_MAGIC)?;
        w.write_all(&CONTAINER_VERSION.to_le_bytes())?;
        w.write_all(&dtype.tag().to_le_bytes())?;
        w.write_all(&(self.shape.len() as u32).to_le_bytes())?;
        for &d in &self.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        match dtype {
            DType::F64 => {
                for v in &self.data {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            DType::F32 => {
                for v in &self.data {
                    w.write_all(&(*v as f32).to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self, dtype: DType) -> Vec<u8> {
        let mut buf = Vec::with_capacity(self.container_len(dtype));
        self.write_to(&mut buf, dtype).expect("writing to Vec");
        buf
    }

    /// Byte length of this tensor's container.
    pub fn container_len(&self, dtype: DType) -> usize {
        16 + 8 * self.shape.len() + dtype.size() * self.data.len()
    }

    /// Parses one container; returns the tensor and its stored dtype.
    pub fn read_from<R: Read>(r: &mut R) -> std::result::Result<(Tensor, DType), String> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|e| e.to_string())?;
        if &magic != CONTAINER_MAGIC {
            return Err(format!("bad magic {magic:?}"));
        }
        let version = read_u32(r)?;
        if version != CONTAINER_VERSION {
            return Err(format!("unsupported container version {version}"));
        }
        let tag = read_u32(r)?;
        let dtype = DType::from_tag(tag).ok_or_else(|| format!("unknown dtype tag {tag}"))?;
        let rank = read_u32(r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut b = [0u8; 8];
            r.read_exact(&mut b).map_err(|e| e.to_string())?;
            shape.push(u64::from_le_bytes(b) as usize);
        }
        let n = numel(&shape);
        let mut data = Vec::with_capacity(n);
        match dtype {
            DType::F64 => {
                let mut b = [0u8; 8];
                for _ in 0..n {
                    r.read_exact(&mut b).map_err(|e| e.to_string())?;
                    data.push(f64::from_le_bytes(b));
                }
            }
            DType::F32 => {
                let mut b = [0u8; 4];
                for _ in 0..n {
                    r.read_exact(&mut b).map_err(|e| e.to_string())?;
                    data.push(f32::from_le_bytes(b) as f64);
                }
            }
        }
        Ok((Tensor { shape, data }, dtype))
    }
}

fn read_u32<R: Read>(r: &mut R) -> std::result::Result<u32, String> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| e.to_string())?;
    Ok(u32::from_le_bytes(b))
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major strides.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Trailing-axis broadcast of two shapes. Axes must match or one must be 1.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(Error::shape("broadcast", a, b)),
        };
    }
    Ok(out)
}

/// For every flat index of `out_shape`, the flat index of the broadcast source
/// element in `src_shape`. `src_shape` must broadcast to `out_shape`.
pub(crate) fn broadcast_index_map(src_shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let offset = rank - src_shape.len();
    let src_strides = strides(src_shape);
    // effective stride per output axis (0 on broadcast axes)
    let eff: Vec<usize> = (0..rank)
        .map(|i| {
            if i < offset || src_shape[i - offset] == 1 {
                0
            } else {
                src_strides[i - offset]
            }
        })
        .collect();
    let n = numel(out_shape);
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut cur = 0usize;
    for _ in 0..n {
        map.push(cur);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            cur += eff[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            cur -= eff[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_length_mismatch() {
        assert!(Tensor::new([2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new([2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn strides_are_row_major() {
        assert_eq!(strides(&[2, 3, 4]), vec![12, 4, 1]);
        assert_eq!(strides(&[]), Vec::<usize>::new());
    }

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape(&[4, 3], &[3]).unwrap(), vec![4, 3]);
        assert_eq!(broadcast_shape(&[4, 1], &[1, 5]).unwrap(), vec![4, 5]);
        assert_eq!(broadcast_shape(&[2, 1, 3], &[4, 3]).unwrap(), vec![2, 4, 3]);
        assert!(broadcast_shape(&[4, 3], &[4]).is_err());
    }

    #[test]
    fn broadcast_map_matches_manual() {
        let map = broadcast_index_map(&[3, 1], &[2, 3, 2]);
        let expected: Vec<usize> = (0..2)
            .flat_map(|_| (0..3).flat_map(move |j| [j, j]))
            .collect();
        assert_eq!(map, expected);
        assert_eq!(broadcast_index_map(&[], &[2, 2]), vec![0; 4]);
    }

    #[test]
    fn container_round_trip_and_header() {
        let t = Tensor::new([2, 3], vec![1.0, -2.5, 3.25, 0.0, 1e-300, 7.0]).unwrap();
        let bytes = t.to_bytes(DType::F64);
        assert_eq!(&bytes[..4], b"SCKT");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 0);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[24..32].try_into().unwrap()), 3);
        assert_eq!(bytes.len(), t.container_len(DType::F64));
        let (back, dtype) = Tensor::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(dtype, DType::F64);
        assert_eq!(back, t);
    }

    #[test]
    fn container_f32_is_lossy_but_close() {
        let t = Tensor::new([3], vec![0.1, 1.0 / 3.0, 2.0]).unwrap();
        let bytes = t.to_bytes(DType::F32);
        let (back, dtype) = Tensor::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(dtype, DType::F32);
        assert!(back.max_abs_diff(&t) < 1e-7);
    }

    #[test]
    fn container_rejects_bad_magic() {
        let mut bytes = Tensor::scalar(1.0).to_bytes(DType::F64);
        bytes[0] = b'X';
        assert!(Tensor::read_from(&mut bytes.as_slice()).is_err());
    }
}
