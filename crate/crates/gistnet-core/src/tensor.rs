//! Dense row-major tensors and the primitive numeric ops everything else
//! builds on. No implicit broadcasting: shape mismatches are hard errors, and
//! every reduction uses a fixed summation order so reruns are bitwise
//! reproducible.

use crate::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Element type tag, used by checkpoints and reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    /// Checkpoint dtype code (1 = f32, 2 = f64).
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 1,
            DType::F64 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(DType::F32),
            2 => Some(DType::F64),
            _ => None,
        }
    }
}

/// Scalar element of a [`Tensor`]: `f32` for training, `f64` for
/// gradient-check mode.
pub trait Scalar: num_traits::Float + Send + Sync + std::fmt::Debug + 'static {
    const DTYPE: DType;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
    /// Bytes per element in the checkpoint encoding.
    const SIZE: usize;
}

impl Scalar for f32 {
    const DTYPE: DType = DType::F32;
    const SIZE: usize = 4;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])
    }
}

impl Scalar for f64 {
    const DTYPE: DType = DType::F64;
    const SIZE: usize = 8;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes([
            bytes[0], bytes[1], bytes[2], bytes[3], bytes[4], bytes[5], bytes[6], bytes[7],
        ])
    }
}

/// Ordered list of positive extents. Rank >= 1, every dim >= 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        if dims.is_empty() {
            return Err(Error::Shape("shape must have rank >= 1".into()));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("every dim must be >= 1, got {dims:?}")));
        }
        let mut count: u64 = 1;
        for &d in &dims {
            count = count
                .checked_mul(d as u64)
                .ok_or_else(|| Error::Shape(format!("element count overflows u64: {dims:?}")))?;
        }
        Ok(Shape(dims))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn len(&self) -> usize {
        self.0.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false // every dim >= 1, so a shape always has at least one element
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, "x")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, "]")
    }
}

/// Axis-aligned pixel rectangle, `x` rightward and `y` downward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Rect { x, y, w, h }
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }
}

/// Dense row-major numeric array with explicit shape. Immutable after
/// construction (ops return new tensors), safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Scalar> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    /// Builds a tensor owning a copy of `values` in row-major order.
    pub fn from_vec(shape: Shape, values: Vec<T>) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(Error::Shape(format!(
                "data length {} does not match shape {} ({} elements)",
                values.len(),
                shape,
                shape.len()
            )));
        }
        Ok(Tensor { shape, data: values })
    }

    pub fn zeros(shape: Shape) -> Self {
        let n = shape.len();
        Tensor {
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn full(shape: Shape, value: T) -> Self {
        let n = shape.len();
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Reinterprets the same data under a new shape with equal element count.
    pub fn reshape(self, shape: Shape) -> Result<Self> {
        if shape.len() != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {} ({} elements) to {} ({} elements)",
                self.shape,
                self.data.len(),
                shape,
                shape.len()
            )));
        }
        Ok(Tensor {
            shape,
            data: self.data,
        })
    }

    /// Value at a rank-2 position.
    pub fn at2(&self, i: usize, j: usize) -> T {
        debug_assert_eq!(self.shape.rank(), 2);
        self.data[i * self.shape.dims()[1] + j]
    }

    /// Value at a rank-3 (channel, row, col) position.
    pub fn at3(&self, c: usize, y: usize, x: usize) -> T {
        debug_assert_eq!(self.shape.rank(), 3);
        let d = self.shape.dims();
        self.data[(c * d[1] + y) * d[2] + x]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.data.iter()
    }

    /// Sum in ascending index order.
    pub fn sum(&self) -> T {
        let mut acc = T::zero();
        for &v in &self.data {
            acc = acc + v;
        }
        acc
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise addition; shapes must match exactly.
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_with(other, |a, b| a + b)
    }

    /// Elementwise subtraction; shapes must match exactly.
    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_with(other, |a, b| a - b)
    }

    /// Elementwise (Hadamard) product; shapes must match exactly.
    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_with(other, |a, b| a * b)
    }

    /// Scale by a constant.
    pub fn scale(&self, c: T) -> Tensor<T> {
        self.map(|v| v * c)
    }

    /// Unary map over all elements.
    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_with(&self, other: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "elementwise op requires identical shapes, got {} vs {}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Converts elements to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
        }
    }
}

/// Minimum work (m * k * n) before matmul rows are fanned out to rayon.
/// Each output element is an independent ascending-k sum, so the result is
/// bitwise identical regardless of thread count.
const PAR_MATMUL_THRESHOLD: usize = 64 * 1024;

/// Row-major GEMM on raw slices: `out[m,n] = a[m,k] * b[k,n]`. Each output
/// element accumulates in ascending k, so the result is bitwise identical
/// whether rows run serially or on rayon.
pub(crate) fn gemm<T: Scalar>(a: &[T], m: usize, k: usize, b: &[T], n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![T::zero(); m * n];
    let run_row = |i: usize, row_out: &mut [T]| {
        for kk in 0..k {
            let a_ik = a[i * k + kk];
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in row_out.iter_mut().zip(b_row.iter()) {
                *o = *o + a_ik * bv;
            }
        }
    };
    if m * k * n >= PAR_MATMUL_THRESHOLD && m > 1 {
        out.par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, row)| run_row(i, row));
    } else {
        for (i, row) in out.chunks_mut(n).enumerate() {
            run_row(i, row);
        }
    }
    out
}

/// Standard matrix product of rank-2 tensors, accumulation in `T` with a
/// fixed summation order (ascending k per output element).
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape.rank() != 2 || b.shape.rank() != 2 {
        return Err(Error::Shape(format!(
            "matmul requires rank-2 tensors, got {} and {}",
            a.shape, b.shape
        )));
    }
    let (m, k) = (a.dims()[0], a.dims()[1]);
    let (kb, n) = (b.dims()[0], b.dims()[1]);
    if k != kb {
        return Err(Error::Shape(format!(
            "matmul inner dims disagree: {} vs {}",
            a.shape, b.shape
        )));
    }
    let out = gemm(&a.data, m, k, &b.data, n);
    Tensor::from_vec(Shape::new([m, n])?, out)
}

/// Materialised transpose of a rank-2 tensor.
pub fn transpose<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape.rank() != 2 {
        return Err(Error::Shape(format!(
            "transpose requires a rank-2 tensor, got {}",
            a.shape
        )));
    }
    let (m, n) = (a.dims()[0], a.dims()[1]);
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.data[i * n + j];
        }
    }
    Tensor::from_vec(Shape::new([n, m])?, out)
}

/// Copy of a rank-3 `[C,H,W]` tensor with all channels of `rect` set to
/// `value`; every other element is bit-identical to the input.
pub fn region_fill<T: Scalar>(t: &Tensor<T>, rect: Rect, value: T) -> Result<Tensor<T>> {
    if t.shape.rank() != 3 {
        return Err(Error::Shape(format!(
            "region_fill requires a rank-3 [C,H,W] tensor, got {}",
            t.shape
        )));
    }
    let (c, h, w) = (t.dims()[0], t.dims()[1], t.dims()[2]);
    if rect.w == 0 || rect.h == 0 || rect.x + rect.w > w || rect.y + rect.h > h {
        return Err(Error::Bounds(format!(
            "rect x={} y={} w={} h={} outside image {}x{}",
            rect.x, rect.y, rect.w, rect.h, w, h
        )));
    }
    let mut out = t.clone();
    for ch in 0..c {
        for y in rect.y..rect.y + rect.h {
            let base = (ch * h + y) * w;
            for x in rect.x..rect.x + rect.w {
                out.data[base + x] = value;
            }
        }
    }
    Ok(out)
}

/// Indices of the `k` largest values of a rank-1 tensor, descending by
/// value, ties broken by ascending index.
pub fn topk_indices<T: Scalar>(v: &Tensor<T>, k: usize) -> Result<Vec<usize>> {
    if v.shape.rank() != 1 {
        return Err(Error::Shape(format!(
            "topk_indices requires a rank-1 tensor, got {}",
            v.shape
        )));
    }
    let n = v.len();
    if k == 0 || k > n {
        return Err(Error::Argument(format!(
            "k must satisfy 1 <= k <= {n}, got {k}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    // Stable sort keeps ascending-index order among equal values.
    idx.sort_by(|&a, &b| {
        v.data[b]
            .partial_cmp(&v.data[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    idx.truncate(k);
    Ok(idx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(dims: &[usize], vals: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(Shape::new(dims.to_vec()).unwrap(), vals.to_vec()).unwrap()
    }

    #[test]
    fn create_row_major() {
        let x = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(x.at2(1, 0), 3.0);
    }

    #[test]
    fn create_zero_tensor() {
        let x = t(&[3], &[0.0, 0.0, 0.0]);
        assert_eq!(x.sum(), 0.0);
    }

    #[test]
    fn create_length_mismatch() {
        let r = Tensor::from_vec(Shape::new([2, 3]).unwrap(), vec![0.0f64; 5]);
        assert!(matches!(r, Err(Error::Shape(_))));
    }

    #[test]
    fn shape_rejects_zero_dim() {
        assert!(Shape::new([2, 0]).is_err());
        assert!(Shape::new(Vec::<usize>::new()).is_err());
    }

    #[test]
    fn matmul_identity() {
        let i2 = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let b = t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]);
        assert_eq!(matmul(&i2, &b).unwrap(), b);
        assert_eq!(matmul(&b, &i2).unwrap(), b);
    }

    #[test]
    fn matmul_hand_case() {
        // [[1,2],[3,4]] x [[5,6],[7,8]] = [[19,22],[43,50]]
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]);
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_dim_mismatch() {
        let a = t(&[2, 3], &[0.0; 6]);
        let b = t(&[2, 2], &[0.0; 4]);
        assert!(matches!(matmul(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn matmul_parallel_matches_serial() {
        // Big enough to cross the rayon threshold; compare against the
        // serial path on the transposed problem (C^T = B^T A^T).
        let mut rng = crate::rng::SeededRng::new(7, 0);
        let a = rng.normal_tensor::<f64>(Shape::new([64, 48]).unwrap(), 0.0, 1.0).unwrap();
        let b = rng.normal_tensor::<f64>(Shape::new([48, 64]).unwrap(), 0.0, 1.0).unwrap();
        let c = matmul(&a, &b).unwrap();
        let c2 = transpose(&matmul(&transpose(&b).unwrap(), &transpose(&a).unwrap()).unwrap()).unwrap();
        for (x, y) in c.data().iter().zip(c2.data().iter()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn elementwise_ops() {
        let a = t(&[2], &[1.0, 2.0]);
        let b = t(&[2], &[3.0, 4.0]);
        assert_eq!(a.add(&b).unwrap().data(), &[4.0, 6.0]);
        assert_eq!(t(&[2], &[1.0, -2.0]).scale(0.0).data(), &[0.0, 0.0]);
        let c = t(&[3], &[0.0; 3]);
        assert!(matches!(a.add(&c), Err(Error::Shape(_))));
    }

    #[test]
    fn region_fill_cases() {
        let ones = Tensor::<f64>::full(Shape::new([1, 2, 2]).unwrap(), 1.0);
        let full = region_fill(&ones, Rect::new(0, 0, 2, 2), 0.0).unwrap();
        assert_eq!(full.sum(), 0.0);

        let one = region_fill(&ones, Rect::new(0, 0, 1, 1), 0.0).unwrap();
        assert_eq!(one.data(), &[0.0, 1.0, 1.0, 1.0]);

        assert!(matches!(
            region_fill(&ones, Rect::new(1, 0, 2, 1), 0.0),
            Err(Error::Bounds(_))
        ));
    }

    #[test]
    fn region_fill_idempotent() {
        let mut rng = crate::rng::SeededRng::new(3, 0);
        let x = rng
            .normal_tensor::<f64>(Shape::new([3, 8, 8]).unwrap(), 0.0, 1.0)
            .unwrap();
        let r = Rect::new(2, 1, 4, 5);
        let once = region_fill(&x, r, 0.5).unwrap();
        let twice = region_fill(&once, r, 0.5).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn topk_cases() {
        let v = t(&[3], &[0.1, 0.7, 0.2]);
        assert_eq!(topk_indices(&v, 1).unwrap(), vec![1]);

        let ties = t(&[3], &[5.0, 5.0, 1.0]);
        assert_eq!(topk_indices(&ties, 2).unwrap(), vec![0, 1]);

        let uniform = Tensor::<f64>::full(Shape::new([80]).unwrap(), 1.0 / 80.0);
        assert_eq!(topk_indices(&uniform, 3).unwrap(), vec![0, 1, 2]);

        assert!(matches!(topk_indices(&v, 4), Err(Error::Argument(_))));
    }

    #[test]
    fn topk_full_is_sorted_permutation() {
        let v = t(&[6], &[3.0, 1.0, 4.0, 1.0, 5.0, 9.0]);
        let idx = topk_indices(&v, 6).unwrap();
        let mut seen = idx.clone();
        seen.sort_unstable();
        assert_eq!(seen, vec![0, 1, 2, 3, 4, 5]);
        for w in idx.windows(2) {
            assert!(v.data()[w[0]] >= v.data()[w[1]]);
        }
    }
}
