//! Dense rank-4 tensors in row-major NCHW layout.
//!
//! A [`Tensor`] is immutable once built: every operation returns a new value.
//! The element type is a type parameter, so mixing `f32` and `f64` operands
//! is rejected at compile time; [`Tensor::cast`] converts explicitly.

mod io;
mod resize;
mod rng;

use std::fmt;
use std::iter::Sum;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use io::{read_jt, read_jt_from, write_jt, write_jt_to, JT_MAGIC};
pub use resize::{bilinear_resize, bilinear_resize_backward, source_coordinate};
pub use rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    /// Code used in the `.jt` header.
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<DType> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size_of(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        })
    }
}

/// Floating-point element of a [`Tensor`].
pub trait Element:
    Copy
    + Default
    + PartialOrd
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + Sum
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
    + 'static
{
    const DTYPE: DType;
    const ZERO: Self;
    const ONE: Self;
    /// Tolerance for identities that hold exactly in real arithmetic.
    const EQUIV_TOL: f64;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    fn abs(self) -> Self {
        if self < Self::ZERO {
            -self
        } else {
            self
        }
    }

    fn is_finite(self) -> bool {
        self.to_f64().is_finite()
    }
}

impl Element for f32 {
    const DTYPE: DType = DType::F32;
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    const EQUIV_TOL: f64 = 1e-5;

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
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Element for f64 {
    const DTYPE: DType = DType::F64;
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    const EQUIV_TOL: f64 = 1e-12;

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
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

/// `(n, c, h, w)` with every dimension at least 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Result<Shape> {
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidShape([n, c, h, w]));
        }
        Ok(Shape { n, c, h, w })
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }

    #[inline]
    pub fn index(&self, offset: usize) -> (usize, usize, usize, usize) {
        let x = offset % self.w;
        let rest = offset / self.w;
        let y = rest % self.h;
        let rest = rest / self.h;
        (rest / self.c, rest % self.c, y, x)
    }

    pub fn with_channels(self, c: usize) -> Shape {
        Shape { c, ..self }
    }

    pub fn with_spatial(self, h: usize, w: usize) -> Shape {
        Shape { h, w, ..self }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

impl TryFrom<[usize; 4]> for Shape {
    type Error = Error;

    fn try_from(d: [usize; 4]) -> Result<Shape> {
        Shape::new(d[0], d[1], d[2], d[3])
    }
}

/// Anything a tensor constructor accepts as a shape.
pub trait IntoShape {
    fn into_shape(self) -> Result<Shape>;
}

impl IntoShape for Shape {
    fn into_shape(self) -> Result<Shape> {
        Shape::new(self.n, self.c, self.h, self.w)
    }
}

impl IntoShape for [usize; 4] {
    fn into_shape(self) -> Result<Shape> {
        Shape::try_from(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Element> Tensor<T> {
    pub fn from_vec(shape: impl IntoShape, data: Vec<T>) -> Result<Self> {
        let shape = shape.into_shape()?;
        if data.len() != shape.numel() {
            return Err(Error::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub(crate) fn from_parts(shape: Shape, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.numel(), data.len());
        Tensor { shape, data }
    }

    pub fn full(shape: impl IntoShape, value: T) -> Result<Self> {
        let shape = shape.into_shape()?;
        Ok(Tensor {
            data: vec![value; shape.numel()],
            shape,
        })
    }

    pub fn zeros(shape: impl IntoShape) -> Result<Self> {
        Self::full(shape, T::ZERO)
    }

    pub fn ones(shape: impl IntoShape) -> Result<Self> {
        Self::full(shape, T::ONE)
    }

    /// Elements drawn uniformly from `[lo, hi)`. Draws that round up to `hi`
    /// in the target precision are redrawn.
    pub fn random_uniform(
        shape: impl IntoShape,
        rng: &mut Rng,
        lo: f64,
        hi: f64,
    ) -> Result<Self> {
        // Written so that NaN bounds are rejected too.
        if !(lo < hi) {
            return Err(Error::InvalidRange { lo, hi });
        }
        let shape = shape.into_shape()?;
        let (lo_t, hi_t) = (T::from_f64(lo), T::from_f64(hi));
        let data = (0..shape.numel())
            .map(|_| loop {
                let v = T::from_f64(lo + (hi - lo) * rng.next_f64());
                if v >= lo_t && v < hi_t {
                    break v;
                }
            })
            .collect();
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn dtype(&self) -> DType {
        T::DTYPE
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.shape.offset(n, c, y, x)]
    }

    /// The `(n, c)` spatial plane as a slice of length `h * w`.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_shape(other.shape)?;
        Ok(Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|v| v * k)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    /// Sum of squares, accumulated in `f64`.
    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v.to_f64() * v.to_f64()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn expect_shape(&self, expected: Shape) -> Result<()> {
        if self.shape != expected {
            return Err(Error::ShapeMismatch {
                expected,
                actual: self.shape,
            });
        }
        Ok(())
    }

    /// Channels `range` of every batch item.
    pub fn slice_channels(&self, range: Range<usize>) -> Result<Self> {
        let s = self.shape;
        if range.start >= range.end || range.end > s.c {
            return Err(Error::incompatible(
                "slice_channels",
                format!("range {range:?} out of bounds for {} channels", s.c),
            ));
        }
        let p = s.plane();
        let mut data = Vec::with_capacity(s.n * range.len() * p);
        for n in 0..s.n {
            let base = n * s.c * p;
            data.extend_from_slice(&self.data[base + range.start * p..base + range.end * p]);
        }
        Ok(Tensor::from_parts(s.with_channels(range.len()), data))
    }

    /// Batch items `range`.
    pub fn slice_batch(&self, range: Range<usize>) -> Result<Self> {
        let s = self.shape;
        if range.start >= range.end || range.end > s.n {
            return Err(Error::incompatible(
                "slice_batch",
                format!("range {range:?} out of bounds for batch {}", s.n),
            ));
        }
        let item = s.c * s.plane();
        let data = self.data[range.start * item..range.end * item].to_vec();
        Ok(Tensor::from_parts(Shape { n: range.len(), ..s }, data))
    }

    /// Every `step`-th row and column, starting at `(row0, col0)`.
    pub fn subsample(&self, row0: usize, col0: usize, step: usize) -> Result<Self> {
        let s = self.shape;
        if step == 0 || row0 >= s.h || col0 >= s.w {
            return Err(Error::incompatible(
                "subsample",
                format!("start ({row0}, {col0}) step {step} invalid for {s}"),
            ));
        }
        let (oh, ow) = ((s.h - row0).div_ceil(step), (s.w - col0).div_ceil(step));
        let mut data = Vec::with_capacity(s.n * s.c * oh * ow);
        for n in 0..s.n {
            for c in 0..s.c {
                let plane = self.plane(n, c);
                for i in 0..oh {
                    let row = &plane[(row0 + i * step) * s.w..];
                    data.extend((0..ow).map(|j| row[col0 + j * step]));
                }
            }
        }
        Ok(Tensor::from_parts(s.with_spatial(oh, ow), data))
    }
}

/// Concatenate along the channel axis; blocks appear in argument order.
pub fn concat_channels<T: Element>(xs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = xs
        .first()
        .ok_or_else(|| Error::incompatible("concat_channels", "no inputs"))?
        .shape;
    for x in xs {
        let s = x.shape;
        if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
            return Err(Error::incompatible(
                "concat_channels",
                format!("{s} does not match {first} outside the channel axis"),
            ));
        }
    }
    let c_total = xs.iter().map(|x| x.shape.c).sum();
    let out_shape = first.with_channels(c_total);
    let p = first.plane();
    let mut data = Vec::with_capacity(out_shape.numel());
    for n in 0..first.n {
        for x in xs {
            let item = x.shape.c * p;
            data.extend_from_slice(&x.data[n * item..(n + 1) * item]);
        }
    }
    Ok(Tensor::from_parts(out_shape, data))
}

/// Split the channel axis into consecutive blocks of the given widths (the
/// inverse of [`concat_channels`]).
pub fn split_channels<T: Element>(x: &Tensor<T>, widths: &[usize]) -> Result<Vec<Tensor<T>>> {
    if widths.iter().sum::<usize>() != x.shape.c {
        return Err(Error::incompatible(
            "split_channels",
            format!("widths {widths:?} do not sum to {} channels", x.shape.c),
        ));
    }
    let mut start = 0;
    widths
        .iter()
        .map(|&w| {
            let t = x.slice_channels(start..start + w);
            start += w;
            t
        })
        .collect()
}

/// Concatenate along the batch axis.
pub fn concat_batch<T: Element>(xs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = xs
        .first()
        .ok_or_else(|| Error::incompatible("concat_batch", "no inputs"))?
        .shape;
    let mut data = Vec::new();
    for x in xs {
        if (x.shape.c, x.shape.h, x.shape.w) != (first.c, first.h, first.w) {
            return Err(Error::incompatible(
                "concat_batch",
                format!("{} does not match {first}", x.shape),
            ));
        }
        data.extend_from_slice(&x.data);
    }
    let n = xs.iter().map(|x| x.shape.n).sum();
    Ok(Tensor::from_parts(Shape { n, ..first }, data))
}

/// `max |a - b|` over all elements, in `f64`.
pub fn max_abs_diff<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    a.expect_shape(b.shape)?;
    Ok(a.data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| (x.to_f64() - y.to_f64()).abs())
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use super::Rng;

    #[test]
    fn zeros_has_product_length_and_zero_sum() {
        let t = Tensor::<f64>::zeros([2, 3, 4, 5]).unwrap();
        assert_eq!(t.len(), 120);
        assert_eq!(t.sum(), 0.0);
        let t = Tensor::<f32>::zeros([1, 1, 2, 2]).unwrap();
        assert_eq!(t.data(), &[0.0; 4]);
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(matches!(
            Tensor::<f64>::zeros([1, 0, 2, 2]),
            Err(Error::InvalidShape(_))
        ));
        assert!(Tensor::<f64>::from_vec([1, 1, 2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn random_uniform_is_seeded_and_in_range() {
        let a = Tensor::<f64>::random_uniform([2, 3, 4, 4], &mut Rng::new(0), 0.0, 1.0).unwrap();
        let b = Tensor::<f64>::random_uniform([2, 3, 4, 4], &mut Rng::new(0), 0.0, 1.0).unwrap();
        assert_eq!(a.data(), b.data());
        let one = Tensor::<f32>::random_uniform([1, 1, 1, 1], &mut Rng::new(5), 0.0, 1.0).unwrap();
        assert!((0.0..1.0).contains(&one.data()[0]));
        assert!(Tensor::<f64>::random_uniform([1, 1, 1, 1], &mut Rng::new(0), 1.0, 1.0).is_err());
        assert!(Tensor::<f64>::random_uniform([1, 1, 1, 1], &mut Rng::new(0), 2.0, 1.0).is_err());
    }

    #[test]
    fn random_uniform_mean() {
        let t = Tensor::<f64>::random_uniform([1, 1, 1, 100_000], &mut Rng::new(11), 0.0, 1.0)
            .unwrap();
        let mean = t.sum() / 1e5;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn f32_draws_never_reach_hi() {
        // A narrow range just below 1.0 makes rounding up to `hi` likely.
        let t = Tensor::<f32>::random_uniform([1, 1, 64, 64], &mut Rng::new(1), 0.99999, 1.0)
            .unwrap();
        assert!(t.data().iter().all(|&v| v < 1.0));
    }

    #[test]
    fn concat_block_layout() {
        let mut rng = Rng::new(1);
        let a = Tensor::<f64>::random_uniform([2, 8, 4, 4], &mut rng, -1.0, 1.0).unwrap();
        let b = Tensor::<f64>::random_uniform([2, 16, 4, 4], &mut rng, -1.0, 1.0).unwrap();
        let c = Tensor::<f64>::random_uniform([2, 32, 4, 4], &mut rng, -1.0, 1.0).unwrap();
        let y = concat_channels(&[&a, &b, &c]).unwrap();
        assert_eq!(y.shape().dims(), [2, 56, 4, 4]);
        assert_eq!(y.slice_channels(8..24).unwrap(), b);
        assert_eq!(concat_channels(&[&a]).unwrap(), a);
        let nested = concat_channels(&[&a, &concat_channels(&[&b, &c]).unwrap()]).unwrap();
        assert_eq!(nested, y);
        let parts = split_channels(&y, &[8, 16, 32]).unwrap();
        assert_eq!(parts, vec![a, b, c]);
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let a = Tensor::<f64>::zeros([1, 1, 4, 4]).unwrap();
        let b = Tensor::<f64>::zeros([1, 1, 4, 2]).unwrap();
        assert!(concat_channels(&[&a, &b]).is_err());
        assert!(concat_channels::<f64>(&[]).is_err());
    }

    #[test]
    fn max_abs_diff_cases() {
        let z = Tensor::<f64>::zeros([1, 2, 3, 3]).unwrap();
        let o = Tensor::<f64>::ones([1, 2, 3, 3]).unwrap();
        assert_eq!(max_abs_diff(&z, &z).unwrap(), 0.0);
        assert_eq!(max_abs_diff(&z, &o).unwrap(), 1.0);
        assert!(max_abs_diff(&z, &Tensor::zeros([1, 2, 3, 2]).unwrap()).is_err());

        let mut rng = Rng::new(2);
        let a = Tensor::<f64>::random_uniform([2, 2, 3, 3], &mut rng, -5.0, 5.0).unwrap();
        let b = Tensor::<f64>::random_uniform([2, 2, 3, 3], &mut rng, -5.0, 5.0).unwrap();
        let mut oracle = 0.0f64;
        for i in 0..a.len() {
            let d = (a.data()[i] - b.data()[i]).abs();
            if d > oracle {
                oracle = d;
            }
        }
        assert_eq!(max_abs_diff(&a, &b).unwrap(), oracle);
    }

    #[test]
    fn subsample_matches_index_loop() {
        let mut rng = Rng::new(4);
        let x = Tensor::<f64>::random_uniform([1, 2, 8, 6], &mut rng, -1.0, 1.0).unwrap();
        let s = x.subsample(1, 0, 2).unwrap();
        assert_eq!(s.shape().dims(), [1, 2, 4, 3]);
        for c in 0..2 {
            for i in 0..4 {
                for j in 0..3 {
                    assert_eq!(s.at(0, c, i, j), x.at(0, c, 2 * i + 1, 2 * j));
                }
            }
        }
    }

    proptest! {
        #[test]
        fn offset_index_round_trip(n in 1usize..4, c in 1usize..5, h in 1usize..7, w in 1usize..7, pick in 0usize..10_000) {
            let s = Shape::new(n, c, h, w).unwrap();
            let off = pick % s.numel();
            let (a, b, y, x) = s.index(off);
            prop_assert_eq!(s.offset(a, b, y, x), off);
            prop_assert_eq!(off, ((a * c + b) * h + y) * w + x);
        }
    }
}
