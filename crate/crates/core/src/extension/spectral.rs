//! Fourier-multiplier realisation of `(-Δ)^γ` on a periodic box.
//!
//! Used as an oracle for the boundary operator, independent of the
//! extension quadrature.

use rustfft::num_complex::Complex;
use rustfft::{FftNum, FftPlanner};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Periodic lattice `[-L, L)^n` with `N` nodes per axis and the table of
/// `|ξ|^{2γ}` on the dual lattice.
#[derive(Clone, Debug)]
pub struct SpectralOracle<T: Real> {
    dim: usize,
    half_width: T,
    resolution: usize,
    gamma: T,
    multiplier: Vec<T>,
}

impl<T: Real + FftNum> SpectralOracle<T> {
    pub fn new(dim: usize, gamma: T, half_width: T, resolution: usize) -> Result<Self> {
        if dim == 0 || resolution < 2 {
            return Err(Error::InvalidInput(
                "spectral lattice needs n >= 1 and N >= 2".into(),
            ));
        }
        if !(half_width > T::zero()) {
            return Err(Error::InvalidInput(
                "box half-width must be positive".into(),
            ));
        }
        let total = resolution
            .checked_pow(dim as u32)
            .ok_or_else(|| Error::InvalidInput("lattice too large".into()))?;
        let freq: Vec<T> = (0..resolution)
            .map(|k| {
                let signed = if k <= resolution / 2 {
                    k as f64
                } else {
                    k as f64 - resolution as f64
                };
                T::lit(signed) * T::PI() / half_width
            })
            .collect();
        let mut multiplier = Vec::with_capacity(total);
        for flat in 0..total {
            let mut rem = flat;
            let mut xi2 = T::zero();
            for _ in 0..dim {
                let k = rem % resolution;
                rem /= resolution;
                xi2 = xi2 + freq[k] * freq[k];
            }
            multiplier.push(if xi2 > T::zero() {
                xi2.powf(gamma)
            } else {
                T::zero()
            });
        }
        Ok(Self {
            dim,
            half_width,
            resolution,
            gamma,
            multiplier,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn half_width(&self) -> T {
        self.half_width
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }

    pub fn spacing(&self) -> T {
        T::lit(2.0) * self.half_width / T::from_usize_lossy(self.resolution)
    }

    pub fn len(&self) -> usize {
        self.multiplier.len()
    }

    pub fn is_empty(&self) -> bool {
        self.multiplier.is_empty()
    }

    /// Coordinates of lattice node `flat`; axis 0 varies fastest.
    pub fn point(&self, flat: usize) -> Vec<T> {
        let h = self.spacing();
        let mut rem = flat;
        (0..self.dim)
            .map(|_| {
                let k = rem % self.resolution;
                rem /= self.resolution;
                -self.half_width + T::from_usize_lossy(k) * h
            })
            .collect()
    }

    /// Applies the multiplier `|ξ|^{2γ}` to a real field sampled on the lattice.
    pub fn apply(&self, field: &[T]) -> Result<Vec<T>> {
        if field.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: field.len(),
            });
        }
        let mut data: Vec<Complex<T>> = field.iter().map(|&v| Complex::new(v, T::zero())).collect();
        let mut planner = FftPlanner::<T>::new();
        let fwd = planner.plan_fft_forward(self.resolution);
        let inv = planner.plan_fft_inverse(self.resolution);
        self.transform_axes(&mut data, fwd.as_ref());
        for (d, &m) in data.iter_mut().zip(&self.multiplier) {
            *d = *d * m;
        }
        self.transform_axes(&mut data, inv.as_ref());
        let scale = T::one() / T::from_usize_lossy(self.len());
        Ok(data.into_iter().map(|c| c.re * scale).collect())
    }

    fn transform_axes(&self, data: &mut [Complex<T>], fft: &dyn rustfft::Fft<T>) {
        let n = self.resolution;
        let mut line = vec![Complex::new(T::zero(), T::zero()); n];
        let mut stride = 1;
        for _ in 0..self.dim {
            let block = stride * n;
            for base in (0..data.len()).step_by(block) {
                for offset in 0..stride {
                    let start = base + offset;
                    if stride == 1 {
                        fft.process(&mut data[start..start + n]);
                        continue;
                    }
                    for (j, slot) in line.iter_mut().enumerate() {
                        *slot = data[start + j * stride];
                    }
                    fft.process(&mut line);
                    for (j, v) in line.iter().enumerate() {
                        data[start + j * stride] = *v;
                    }
                }
            }
            stride *= n;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_field_maps_to_zero() {
        let o = SpectralOracle::new(2, 0.3f64, 5.0, 16).unwrap();
        let out = o.apply(&vec![2.5; o.len()]).unwrap();
        assert!(out.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn fourier_mode_is_eigenfunction() {
        let gamma = 0.35f64;
        let l = 3.0;
        let o = SpectralOracle::new(2, gamma, l, 32).unwrap();
        let (k1, k2) = (3.0, -2.0);
        let xi = [k1 * std::f64::consts::PI / l, k2 * std::f64::consts::PI / l];
        let field: Vec<f64> = (0..o.len())
            .map(|i| {
                let p = o.point(i);
                (xi[0] * p[0] + xi[1] * p[1]).cos()
            })
            .collect();
        let out = o.apply(&field).unwrap();
        let eig = (xi[0] * xi[0] + xi[1] * xi[1]).powf(gamma);
        for (a, b) in out.iter().zip(&field) {
            assert!((a - eig * b).abs() < 1e-10);
        }
    }

    #[test]
    fn self_adjoint() {
        let o = SpectralOracle::new(1, 0.4f64, 2.0, 64).unwrap();
        let f: Vec<f64> = (0..64).map(|i| ((i * 7 % 13) as f64).sin()).collect();
        let g: Vec<f64> = (0..64).map(|i| ((i * 5 % 11) as f64).cos()).collect();
        let af = o.apply(&f).unwrap();
        let ag = o.apply(&g).unwrap();
        let lhs: f64 = af.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = f.iter().zip(&ag).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn dimension_mismatch() {
        let o = SpectralOracle::new(1, 0.4f64, 2.0, 8).unwrap();
        assert!(matches!(
            o.apply(&[1.0; 7]),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
