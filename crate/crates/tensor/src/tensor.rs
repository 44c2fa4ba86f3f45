use std::fmt;

use crate::{Real, Result, TensorError};

/// Dimensions of a 4-D tensor in (batch, channels, height, width) order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn scalar() -> Self {
        Shape::new(1, 1, 1, 1)
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Number of values in one `h × w` plane.
    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Number of values belonging to one batch item.
    pub const fn item(&self) -> usize {
        self.c * self.h * self.w
    }

    pub const fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}×{}×{}×{}", self.n, self.c, self.h, self.w)
    }
}

impl From<[usize; 4]> for Shape {
    fn from(d: [usize; 4]) -> Self {
        Shape::new(d[0], d[1], d[2], d[3])
    }
}

/// Dense row-major 4-D array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<Real>,
}

impl Tensor {
    pub fn zeros(shape: impl Into<Shape>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: impl Into<Shape>) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: impl Into<Shape>, value: Real) -> Self {
        let shape = shape.into();
        Tensor {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn scalar(value: Real) -> Self {
        Tensor {
            shape: Shape::scalar(),
            data: vec![value],
        }
    }

    pub fn from_vec(shape: impl Into<Shape>, data: Vec<Real>) -> Result<Self> {
        let shape = shape.into();
        if data.len() != shape.numel() {
            return Err(TensorError::DataLength {
                len: data.len(),
                shape,
            });
        }
        Ok(Tensor { shape, data })
    }

    /// Builds a tensor by evaluating `f(n, c, y, x)` for every element.
    pub fn from_fn(
        shape: impl Into<Shape>,
        mut f: impl FnMut(usize, usize, usize, usize) -> Real,
    ) -> Self {
        let shape = shape.into();
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Real] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Real] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<Real> {
        self.data
    }

    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        let s = self.shape;
        debug_assert!(n < s.n && c < s.c && y < s.h && x < s.w);
        ((n * s.c + c) * s.h + y) * s.w + x
    }

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> Real {
        self.data[self.index(n, c, y, x)]
    }

    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: Real) {
        let i = self.index(n, c, y, x);
        self.data[i] = v;
    }

    /// The `h × w` plane of channel `c` in batch item `n`.
    pub fn plane(&self, n: usize, c: usize) -> &[Real] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    /// All values of batch item `n`.
    pub fn item(&self, n: usize) -> &[Real] {
        let k = self.shape.item();
        &self.data[n * k..(n + 1) * k]
    }

    /// The single value of a one-element tensor.
    pub fn item_value(&self) -> Option<Real> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn sum(&self) -> Real {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> Real {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(Real) -> Real) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Same data viewed under a new shape with the same element count.
    pub fn reshaped(mut self, shape: impl Into<Shape>) -> Result<Tensor> {
        let shape = shape.into();
        if shape.numel() != self.shape.numel() {
            return Err(TensorError::DataLength {
                len: self.data.len(),
                shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    /// Batch item `n` as a standalone tensor with batch size 1.
    pub fn slice_batch(&self, n: usize) -> Tensor {
        Tensor {
            shape: Shape::new(1, self.shape.c, self.shape.h, self.shape.w),
            data: self.item(n).to_vec(),
        }
    }

    /// Stacks tensors with batch size 1 (or more) along the batch axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| TensorError::arg("stack", "no tensors"))?
            .shape;
        let mut n = 0;
        let mut data = Vec::new();
        for t in items {
            let s = t.shape;
            if (s.c, s.h, s.w) != (first.c, first.h, first.w) {
                return Err(TensorError::shape(
                    "stack",
                    format!("expected _×{}×{}×{}, got {s}", first.c, first.h, first.w),
                ));
            }
            n += s.n;
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor {
            shape: Shape::new(n, first.c, first.h, first.w),
            data,
        })
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}
