//! Dense 2D multi-channel scalar fields.
//!
//! Data is stored channel-major: `data[c * h * w + y * w + x]`. All solver
//! arithmetic uses 64-bit reals.

/// Dense 2D field with one or more channel planes.
#[derive(Debug, Clone, PartialEq)]
pub struct Field2D {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Field2D {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Field2D {
            height,
            width,
            channels,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn constant(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Field2D {
            height,
            width,
            channels,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            channels * height * width,
            "data length must equal channels * height * width"
        );
        Field2D {
            height,
            width,
            channels,
            data,
        }
    }

    /// Build a single-channel field from a function of (y, x).
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Field2D {
            height,
            width,
            channels: 1,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_shape(&self, other: &Field2D) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f64 {
        &mut self.data[(c * self.height + y) * self.width + x]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Extract one channel as a new single-channel field.
    pub fn channel(&self, c: usize) -> Field2D {
        Field2D::from_vec(1, self.height, self.width, self.plane(c).to_vec())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn inner(&self, other: &Field2D) -> f64 {
        assert!(self.same_shape(other), "inner product shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm2(&self) -> f64 {
        self.inner(self).sqrt()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field2D {
        Field2D {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add(&self, other: &Field2D) -> Field2D {
        assert!(self.same_shape(other), "add shape mismatch");
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Field2D) -> Field2D {
        assert!(self.same_shape(other), "sub shape mismatch");
        self.zip(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Field2D {
        self.map(|v| v * s)
    }

    fn zip(&self, other: &Field2D, f: impl Fn(f64, f64) -> f64) -> Field2D {
        Field2D {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// In-place `self += s * other`.
    pub fn axpy(&mut self, s: f64, other: &Field2D) {
        assert!(self.same_shape(other), "axpy shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }
}
