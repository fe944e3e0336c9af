//! Weighted-harmonic (Caffarelli–Silvestre) extension of boundary data by
//! Poisson-kernel quadrature, and the weighted conormal derivative.

pub mod spectral;

use serde::Serialize;

use crate::bubble::Bubble;
use crate::error::{Error, Result};
use crate::params::FracParams;
use crate::quadrature::{integrate_pieces, QuadResult, Tolerance};
use crate::scalar::Real;
use crate::special::{gamma as gamma_fn, sphere_area};

/// `P(x, y) = p_{n,γ} y^{2γ} / (|x|² + y²)^{(n+2γ)/2}` with `p_{n,γ}` fixed by
/// unit mass in `x`: `p = Γ(n/2 + γ) / (π^{n/2} Γ(γ))`.
#[derive(Clone, Debug, Serialize)]
pub struct PoissonKernel<T: Real> {
    pub n: usize,
    pub gamma: T,
    pub normalization: T,
    /// Relative tolerance for each nested quadrature.
    #[serde(skip)]
    pub rel_tol: T,
}

impl<T: Real> PoissonKernel<T> {
    pub fn new(p: &FracParams<T>) -> Self {
        Self::for_order(p.n, p.gamma)
    }

    pub fn for_order(n: usize, gamma: T) -> Self {
        let half_n = T::from_usize_lossy(n) * T::lit(0.5);
        let normalization = gamma_fn(half_n + gamma) / (T::PI().powf(half_n) * gamma_fn(gamma));
        Self {
            n,
            gamma,
            normalization,
            rel_tol: T::lit(1e-8),
        }
    }

    pub fn with_tolerance(mut self, rel: f64) -> Self {
        self.rel_tol = T::lit(rel);
        self
    }

    /// Kernel value at horizontal offset of squared length `x2` and height `y`.
    pub fn kernel(&self, x2: T, y: T) -> T {
        let expo = (T::from_usize_lossy(self.n) + T::lit(2.0) * self.gamma) * T::lit(0.5);
        self.normalization * y.powf(T::lit(2.0) * self.gamma) / (x2 + y * y).powf(expo)
    }

    /// Extends a trace that is radial about `center`, given as a function of
    /// the squared distance to `center`.
    ///
    /// Polar coordinates about the target `x` with radius `s = y tan θ` turn the
    /// kernel into the bounded weight `sin^{n-1}θ cos^{2γ-1}θ` on `(0, π/2)`;
    /// the remaining angle between the ray and `x - center` carries the weight
    /// `sin^{n-2}φ`.
    pub fn extend_radial<F>(&self, center: &[T], profile: F, x: &[T], y: T) -> Result<QuadResult<T>>
    where
        F: Fn(T) -> T,
    {
        let rho2 = self.check_point(center, x, y)?;
        let rho = rho2.sqrt();
        let two = T::lit(2.0);
        let tol = self.tolerance(profile(T::zero()));
        if self.n == 1 {
            let signed = x[0] - center[0];
            return self.outer(rho, y, tol, |s| {
                let a = signed + s;
                let b = signed - s;
                Ok(profile(a * a) + profile(b * b))
            });
        }
        let sphere_lower = sphere_area::<T>(self.n - 1);
        let phi_pow = (self.n - 2) as i32;
        self.outer(rho, y, tol, |s| {
            let r = crate::quadrature::integrate(
                |phi: T| {
                    let d2 = rho2 + s * s + two * rho * s * phi.cos();
                    phi.sin().powi(phi_pow) * profile(d2.max(T::zero()))
                },
                T::zero(),
                T::PI(),
                tol,
            );
            if !r.converged {
                return Err(Error::QuadratureNonConvergence {
                    value: r.value.as_f64(),
                    error: r.error.as_f64(),
                });
            }
            Ok(sphere_lower * r.value)
        })
    }

    fn check_point(&self, center: &[T], x: &[T], y: T) -> Result<T> {
        if center.len() != self.n || x.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: x.len(),
            });
        }
        if !(y > T::zero()) {
            return Err(Error::InvalidInput(
                "extension height must be positive".into(),
            ));
        }
        Ok(center.iter().zip(x).map(|(&a, &b)| (b - a) * (b - a)).sum())
    }

    fn tolerance(&self, scale: T) -> Tolerance<T> {
        Tolerance::relative(self.rel_tol.as_f64())
            .with_abs(1e-15 * scale.abs().as_f64().max(1e-300))
    }

    /// `p ∫_0^{π/2} sin^{n-1}θ cos^{2γ-1}θ · shell(y tan θ) dθ`, where `shell(s)`
    /// integrates the trace over the sphere of radius `s` about the target.
    fn outer<G>(&self, rho: T, y: T, tol: Tolerance<T>, mut shell: G) -> Result<QuadResult<T>>
    where
        G: FnMut(T) -> Result<T>,
    {
        let cos_pow = T::lit(2.0) * self.gamma - T::one();
        let sin_pow = (self.n - 1) as i32;
        let half_pi = T::FRAC_PI_2();
        // breakpoint where the ray passes closest to the centre
        let theta_star = (rho / y).atan();
        let mut pieces = vec![T::zero()];
        if theta_star > T::lit(1e-12) && theta_star < half_pi - T::lit(1e-12) {
            pieces.push(theta_star);
        }
        pieces.push(half_pi);
        let mut failure = None;
        let r = integrate_pieces(
            |theta: T| {
                let weight = theta.sin().powi(sin_pow) * theta.cos().powf(cos_pow);
                if weight == T::zero() || !weight.is_finite() {
                    return T::zero();
                }
                match shell(y * theta.tan()) {
                    Ok(v) => weight * v,
                    Err(e) => {
                        failure.get_or_insert(e);
                        T::zero()
                    }
                }
            },
            &pieces,
            tol,
        );
        if let Some(e) = failure {
            return Err(e);
        }
        let value = self.normalization * r.value;
        let error = self.normalization * r.error;
        if !r.converged {
            return Err(Error::QuadratureNonConvergence {
                value: value.as_f64(),
                error: error.as_f64(),
            });
        }
        Ok(QuadResult {
            value,
            error,
            evaluations: r.evaluations,
            converged: true,
        })
    }

    /// Extension `U(x, y)` of a bubble trace. At `y = 0` returns the trace.
    ///
    /// For `n = 3` the shell average of a bubble is elementary and only the
    /// radial integral is done numerically.
    pub fn extend(&self, b: &Bubble<T>, x: &[T], y: T) -> Result<QuadResult<T>> {
        let decay = (T::from_usize_lossy(self.n) - T::lit(2.0) * self.gamma) * T::lit(0.5);
        if y == T::zero() {
            return Ok(QuadResult {
                value: b.eval(x, decay),
                error: T::zero(),
                evaluations: 0,
                converged: true,
            });
        }
        if self.n != 3 {
            return self.extend_radial(&b.center, |d2| b.profile(d2, decay), x, y);
        }
        let rho2 = self.check_point(&b.center, x, y)?;
        let rho = rho2.sqrt();
        let two = T::lit(2.0);
        let l2 = b.lambda * b.lambda;
        let scale = b.amplitude * b.lambda.powf(decay);
        let one_minus = T::one() - decay;
        // antiderivative of (u + λ²)^{-β} in u
        let anti = |u: T| {
            if one_minus.abs() < T::lit(1e-12) {
                (u + l2).ln()
            } else {
                (u + l2).powf(one_minus) / one_minus
            }
        };
        let tol = self.tolerance(b.amplitude);
        self.outer(rho, y, tol, |s| {
            let c = rho2 + s * s;
            let w = two * rho * s;
            let base = c + l2;
            let avg = if w < T::lit(1e-4) * base {
                let f = base.powf(-decay);
                let f2 = decay * (decay + T::one()) * base.powf(-decay - two);
                two * f + w * w / T::lit(3.0) * f2
            } else {
                (anti(c + w) - anti(c - w)) / w
            };
            Ok(two * T::PI() * scale * avg)
        })
    }
}

/// `t = y^{2γ} / (2γ)`, the variable in which `y^{1-2γ} ∂_y = ∂_t`.
pub fn conormal_variable<T: Real>(y: T, gamma: T) -> T {
    y.powf(T::lit(2.0) * gamma) / (T::lit(2.0) * gamma)
}

/// First-order weighted conormal derivative `-lim y^{1-2γ} ∂_y u` from the
/// trace `u0` and the value `u1` at height `y1`.
pub fn conormal_derivative<T: Real>(u0: T, u1: T, y1: T, gamma: T) -> Result<T> {
    if !(y1 > T::zero()) {
        return Err(Error::InvalidInput(
            "first layer height must be positive".into(),
        ));
    }
    Ok(-(u1 - u0) / conormal_variable(y1, gamma))
}

/// Two-layer variant: fits `u0 + b t + c y²` through the layers at `y1 < y2`,
/// removing the leading smooth correction of the extension, and returns `-b`.
pub fn conormal_derivative_two_layer<T: Real>(
    u0: T,
    u1: T,
    y1: T,
    u2: T,
    y2: T,
    gamma: T,
) -> Result<T> {
    if !(y1 > T::zero()) || !(y2 > y1) {
        return Err(Error::InvalidInput(
            "layers must satisfy 0 < y1 < y2".into(),
        ));
    }
    let (t1, t2) = (conormal_variable(y1, gamma), conormal_variable(y2, gamma));
    let (q1, q2) = (y1 * y1, y2 * y2);
    let (d1, d2) = (u1 - u0, u2 - u0);
    let det = t1 * q2 - t2 * q1;
    let b = (d1 * q2 - d2 * q1) / det;
    Ok(-b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate;

    #[test]
    fn kernel_has_unit_mass() {
        for &(n, g) in &[(1usize, 0.25f64), (3, 0.5), (2, 0.3), (3, 0.75)] {
            let k = PoissonKernel::for_order(n, g);
            for &y in &[0.1, 1.0, 10.0] {
                // r = y u/(1-u) maps [0,1) onto [0,∞)
                let r = integrate(
                    |u: f64| {
                        let r = y * u / (1.0 - u);
                        let jac = y / ((1.0 - u) * (1.0 - u));
                        let v = k.kernel(r * r, y) * r.powi(n as i32 - 1) * jac;
                        if v.is_finite() {
                            v
                        } else {
                            0.0
                        }
                    },
                    0.0,
                    1.0,
                    Tolerance::relative(1e-12),
                );
                let mass = sphere_area::<f64>(n) * r.value;
                assert!((mass - 1.0).abs() < 1e-4, "n={n} γ={g} y={y}: {mass}");
            }
        }
    }

    #[test]
    fn constant_trace_extends_to_constant() {
        for &(n, g) in &[(1usize, 0.25f64), (3, 0.5), (2, 0.4)] {
            let k = PoissonKernel::for_order(n, g);
            let c = vec![0.0; n];
            let x: Vec<f64> = (0..n).map(|i| 0.3 * i as f64 - 0.2).collect();
            for &y in &[0.01, 1.0, 50.0] {
                let u = k.extend_radial(&c, |_| 1.0, &x, y).unwrap();
                assert!((u.value - 1.0).abs() < 1e-7, "n={n} y={y}: {}", u.value);
            }
        }
    }

    #[test]
    fn approximate_identity_as_y_vanishes() {
        let p = FracParams::with_kappa(3, 0.5, 2.0).unwrap();
        let k = PoissonKernel::new(&p);
        let b = Bubble::centered(3, 1.0, 1.0).unwrap();
        let y = 1e-3;
        let u = k.extend(&b, &[0.0f64; 3], y).unwrap();
        // U(0,y) = w(0) - c t + O(y²) with conormal coefficient c = 2 for A = 1
        assert!((u.value - 1.0).abs() < 2.5e-3, "{}", u.value);
        assert!((u.value - (1.0 - 2.0 * y)).abs() < 1e-5, "{}", u.value);
        assert_eq!(k.extend(&b, &[0.0; 3], 0.0).unwrap().value, 1.0);
    }

    #[test]
    fn extension_is_positive_and_decreasing_in_height() {
        let p = FracParams::with_kappa(1, 0.25, 0.478).unwrap();
        let k = PoissonKernel::new(&p);
        let b = Bubble::centered(1, 0.5, 1.0).unwrap();
        let mut last = f64::INFINITY;
        for j in 1..12 {
            let y = 0.01 * 2f64.powi(j);
            let u = k.extend(&b, &[0.0], y).unwrap().value;
            assert!(u > 0.0 && u < last);
            last = u;
        }
    }

    #[test]
    fn rejects_nonpositive_height() {
        let k = PoissonKernel::for_order(1, 0.25f64);
        assert!(k.extend_radial(&[0.0], |_| 1.0, &[0.0], -1.0).is_err());
    }

    #[test]
    fn conormal_examples() {
        let g = 0.3f64;
        assert_eq!(conormal_derivative(1.0, 1.0, 0.2, g).unwrap(), 0.0);
        let slope = -1.7;
        let y1 = 0.05;
        let u1 = 2.0 + slope * conormal_variable(y1, g);
        let d = conormal_derivative(2.0, u1, y1, g).unwrap();
        assert!((d + slope).abs() < 1e-12);
        assert!(conormal_derivative(1.0, 1.0, 0.0, g).is_err());
        let y2 = 0.1;
        let u = |y: f64| 2.0 + slope * conormal_variable(y, g) + 0.4 * y * y;
        let d2 = conormal_derivative_two_layer(u(0.0), u(y1), y1, u(y2), y2, g).unwrap();
        assert!((d2 + slope).abs() < 1e-10);
    }
}
