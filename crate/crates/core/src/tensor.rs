//! Dense multi-band rasters.
//!
//! Storage is planar: band-major, then row-major within a band, so a band is
//! one contiguous slice of `height * width` samples.

use crate::error::{Error, Result};
use crate::rng::SeededGaussian;

#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    bands: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

pub type Shape = (usize, usize, usize);

macro_rules! debug_finite {
    ($t:expr) => {
        debug_assert!(
            $t.data.iter().all(|v| v.is_finite()),
            "non-finite value in tensor"
        )
    };
}

impl ImageTensor {
    pub fn new(bands: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if bands == 0 || height == 0 || width == 0 {
            return Err(Error::config("tensor", "dimensions must be >= 1"));
        }
        if data.len() != bands * height * width {
            return Err(Error::config(
                "tensor",
                format!("data length {} != {bands}x{height}x{width}", data.len()),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::config("tensor", format!("non-finite value at {i}")));
        }
        Ok(Self {
            bands,
            height,
            width,
            data,
        })
    }

    pub fn filled(bands: usize, height: usize, width: usize, value: f32) -> Self {
        assert!(bands > 0 && height > 0 && width > 0 && value.is_finite());
        Self {
            bands,
            height,
            width,
            data: vec![value; bands * height * width],
        }
    }

    pub fn zeros(bands: usize, height: usize, width: usize) -> Self {
        Self::filled(bands, height, width, 0.0)
    }

    pub fn zeros_like(other: &Self) -> Self {
        Self::zeros(other.bands, other.height, other.width)
    }

    /// Builds a tensor from `f(band, row, col)`.
    pub fn from_fn(
        bands: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        assert!(bands > 0 && height > 0 && width > 0);
        let mut data = Vec::with_capacity(bands * height * width);
        for c in 0..bands {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        let t = Self {
            bands,
            height,
            width,
            data,
        };
        debug_finite!(t);
        t
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> Shape {
        (self.bands, self.height, self.width)
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn band(&self, c: usize) -> &[f32] {
        let n = self.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Applies `f` to every element. Panics in debug builds if `f` produces
    /// a non-finite value.
    pub fn map(&self, mut f: impl FnMut(f32) -> f32) -> Self {
        let t = Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..self.empty_like()
        };
        debug_finite!(t);
        t
    }

    /// Elementwise combination of two equally shaped tensors.
    pub fn zip_map(
        &self,
        other: &Self,
        op: &'static str,
        mut f: impl FnMut(f32, f32) -> f32,
    ) -> Result<Self> {
        self.check_same(other, op)?;
        let t = Self {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            ..self.empty_like()
        };
        debug_finite!(t);
        Ok(t)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn scale(&self, k: f32) -> Self {
        self.map(|v| v * k)
    }

    pub fn clamp(&self, lo: f32, hi: f32) -> Self {
        self.map(|v| v.clamp(lo, hi))
    }

    pub fn band_mean(&self) -> Vec<f64> {
        (0..self.bands)
            .map(|c| self.band(c).iter().map(|&v| v as f64).sum::<f64>() / self.pixels() as f64)
            .collect()
    }

    pub fn band_min(&self) -> Vec<f32> {
        (0..self.bands)
            .map(|c| self.band(c).iter().copied().fold(f32::INFINITY, f32::min))
            .collect()
    }

    pub fn band_max(&self) -> Vec<f32> {
        (0..self.bands)
            .map(|c| {
                self.band(c)
                    .iter()
                    .copied()
                    .fold(f32::NEG_INFINITY, f32::max)
            })
            .collect()
    }

    pub fn min(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    /// Mean squared error over all elements, accumulated in f64.
    pub fn mse(&self, other: &Self) -> Result<f64> {
        self.check_same(other, "mse")?;
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| {
                let d = a as f64 - b as f64;
                d * d
            })
            .sum();
        Ok(sum / self.len() as f64)
    }

    /// Stacks tensors of equal spatial size along the band axis.
    pub fn concat_bands(parts: &[&ImageTensor]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::config("tensor", "concat of zero tensors"))?;
        let (h, w) = (first.height, first.width);
        let mut data = Vec::new();
        let mut bands = 0;
        for p in parts {
            if p.height != h || p.width != w {
                return Err(Error::Shape {
                    op: "concat_bands",
                    expected: (p.bands, h, w),
                    got: p.shape(),
                });
            }
            bands += p.bands;
            data.extend_from_slice(&p.data);
        }
        Ok(Self {
            bands,
            height: h,
            width: w,
            data,
        })
    }

    /// Copies out bands `start..start + count`.
    pub fn slice_bands(&self, start: usize, count: usize) -> Self {
        assert!(count > 0 && start + count <= self.bands);
        let n = self.pixels();
        Self {
            bands: count,
            height: self.height,
            width: self.width,
            data: self.data[start * n..(start + count) * n].to_vec(),
        }
    }

    pub fn check_same(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape {
                op,
                expected: self.shape(),
                got: other.shape(),
            });
        }
        Ok(())
    }

    /// Rebuilds from f64 values (rounded to f32).
    pub(crate) fn from_f64(shape: Shape, values: impl IntoIterator<Item = f64>) -> Self {
        let data: Vec<f32> = values.into_iter().map(|v| v as f32).collect();
        assert_eq!(data.len(), shape.0 * shape.1 * shape.2);
        let t = Self {
            bands: shape.0,
            height: shape.1,
            width: shape.2,
            data,
        };
        debug_finite!(t);
        t
    }

    fn empty_like(&self) -> Self {
        Self {
            bands: self.bands,
            height: self.height,
            width: self.width,
            data: Vec::new(),
        }
    }

    /// Draws i.i.d. `mean + std * N(0, 1)` samples.
    pub fn gaussian(rng: &mut SeededGaussian, shape: Shape, mean: f64, std: f64) -> Result<Self> {
        gaussian_field(rng, shape, mean, std)
    }
}

/// Field of i.i.d. draws `mean + std * xi`, `xi ~ N(0, 1)`.
pub fn gaussian_field(
    rng: &mut SeededGaussian,
    shape: Shape,
    mean: f64,
    std: f64,
) -> Result<ImageTensor> {
    let (c, h, w) = shape;
    if c == 0 || h == 0 || w == 0 {
        return Err(Error::config("tensor", "dimensions must be >= 1"));
    }
    if !(std >= 0.0) || !mean.is_finite() || !std.is_finite() {
        return Err(Error::config("tensor", format!("invalid std {std}")));
    }
    let n = c * h * w;
    Ok(ImageTensor::from_f64(
        shape,
        (0..n).map(|_| mean + std * rng.normal()),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn clamp_bounds() {
        let t = ImageTensor::new(1, 1, 2, vec![-0.2, 1.3]).unwrap();
        assert_eq!(t.clamp(0.0, 1.0).data(), &[0.0, 1.0]);
    }

    #[test]
    fn mse_self_is_zero() {
        let mut g = SeededGaussian::new(1);
        let t = gaussian_field(&mut g, (3, 4, 5), 0.0, 1.0).unwrap();
        assert_eq!(t.mse(&t).unwrap(), 0.0);
    }

    #[test]
    fn residual_of_constants() {
        let x0 = ImageTensor::filled(2, 3, 3, 0.8);
        let xt = ImageTensor::filled(2, 3, 3, 0.3);
        let e0 = x0.sub(&xt).unwrap();
        assert!(e0.data().iter().all(|&v| (v - 0.5).abs() < 1e-7));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let a = ImageTensor::zeros(1, 2, 2);
        let b = ImageTensor::zeros(1, 2, 3);
        assert!(matches!(a.add(&b), Err(Error::Shape { op: "add", .. })));
        assert!(a.mse(&b).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        assert!(ImageTensor::new(1, 1, 1, vec![f32::NAN]).is_err());
        assert!(ImageTensor::new(1, 1, 2, vec![0.0]).is_err());
    }

    #[test]
    fn band_stats() {
        let t = ImageTensor::new(2, 1, 2, vec![0.0, 1.0, -2.0, 4.0]).unwrap();
        assert_eq!(t.band_mean(), vec![0.5, 1.0]);
        assert_eq!(t.band_min(), vec![0.0, -2.0]);
        assert_eq!(t.band_max(), vec![1.0, 4.0]);
    }

    #[test]
    fn zero_std_field_is_constant() {
        let mut g = SeededGaussian::new(0);
        let t = gaussian_field(&mut g, (2, 3, 3), 0.25, 0.0).unwrap();
        assert!(t.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn field_moments() {
        let mut g = SeededGaussian::new(7);
        let t = gaussian_field(&mut g, (1, 100, 1000), 0.0, 2.0).unwrap();
        let n = t.len() as f64;
        let mean = t.data().iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = t
            .data()
            .iter()
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / n;
        // 3 sigma of the estimators for n = 1e5: 3*2/sqrt(n) ~ 0.019.
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var.sqrt() - 2.0).abs() < 0.02, "std {}", var.sqrt());
    }

    #[test]
    fn same_seed_same_field() {
        let a = gaussian_field(&mut SeededGaussian::new(5), (2, 4, 4), 0.0, 1.0).unwrap();
        let b = gaussian_field(&mut SeededGaussian::new(5), (2, 4, 4), 0.0, 1.0).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn add_undoes_sub(a in prop::collection::vec(-10.0f32..10.0, 12),
                          b in prop::collection::vec(-10.0f32..10.0, 12)) {
            let ta = ImageTensor::new(3, 2, 2, a.clone()).unwrap();
            let tb = ImageTensor::new(3, 2, 2, b.clone()).unwrap();
            let back = ta.sub(&tb).unwrap().add(&tb).unwrap();
            for i in 0..12 {
                // Two roundings, each at most half an ulp of |a| + |b|.
                let ulp = 2.0 * f32::EPSILON * a[i].abs().max(b[i].abs());
                prop_assert!((back.data()[i] - a[i]).abs() <= ulp);
            }
        }
    }
}
