//! Dimension, fractional order, and the closed-form constants derived from them.

use rustfft::FftNum;
use serde::Serialize;

use crate::bubble::{calibrate_amplitude, Calibration};
use crate::error::{Error, Result};
use crate::quadrature::{integrate, Tolerance};
use crate::scalar::Real;
use crate::special::{gamma as gamma_fn, sphere_area};

/// Critical trace exponent `2n/(n-2γ)`.
pub fn critical_exponent<T: Real>(n: usize, gamma: T) -> Result<T> {
    let nn = T::from_usize_lossy(n);
    let gap = nn - T::lit(2.0) * gamma;
    if gap <= T::zero() {
        return Err(Error::InvalidParams(format!(
            "n - 2γ = {} must be positive",
            gap.as_f64()
        )));
    }
    Ok(T::lit(2.0) * nn / gap)
}

/// `d_γ = 2^{2γ} Γ(γ) / Γ(-γ)`; negative on `(0, 1)`.
pub fn d_gamma<T: Real>(gamma: T) -> T {
    T::lit(2.0).powf(T::lit(2.0) * gamma) * gamma_fn(gamma) / gamma_fn(-gamma)
}

/// `d*_γ = -d_γ / (2γ) = 2^{2γ-1} Γ(γ) / Γ(1-γ)`; positive on `(0, 1)`.
pub fn d_star<T: Real>(gamma: T) -> T {
    let two = T::lit(2.0);
    two.powf(two * gamma - T::one()) * gamma_fn(gamma) / gamma_fn(T::one() - gamma)
}

/// Sharp constant of the weighted trace Sobolev inequality
/// `‖u(·,0)‖²_{2*} ≤ S ∫ y^{1-2γ}|∇u|²`.
pub fn sobolev_constant<T: Real>(n: usize, gamma: T) -> T {
    let nn = T::from_usize_lossy(n);
    let two = T::lit(2.0);
    let one = T::one();
    one / (two * T::PI().powf(gamma)) * gamma_fn(gamma) / gamma_fn(one - gamma)
        * gamma_fn((nn - two * gamma) / two)
        / gamma_fn((nn + two * gamma) / two)
        * (gamma_fn(nn) / gamma_fn(nn / two)).powf(two * gamma / nn)
}

/// Threshold `(γ/n) S^{-n/(2γ)}` below which Palais–Smale sequences are compact.
///
/// On the flat half-space the γ-Yamabe constant equals `d*_γ / S`, which
/// removes `d*_γ` from the general expression.
pub fn beta_zero<T: Real>(n: usize, gamma: T) -> T {
    let nn = T::from_usize_lossy(n);
    gamma / nn * sobolev_constant(n, gamma).powf(-nn / (T::lit(2.0) * gamma))
}

/// `C_n = ∫_{R^n} (1+|z|²)^{-n} dz`, the `2*`-mass of the unit bubble with unit
/// amplitude. Evaluated by radial quadrature after `r = tan θ`.
pub fn unit_bubble_mass<T: Real>(n: usize) -> T {
    let p = n as i32 - 1;
    let r = integrate(
        |t: T| (t.sin() * t.cos()).powi(p),
        T::zero(),
        T::FRAC_PI_2(),
        Tolerance::relative(1e-12),
    );
    sphere_area::<T>(n) * r.value
}

pub fn validate<T: Real>(n: usize, gamma: T) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidParams(
            "dimension n must be at least 1".into(),
        ));
    }
    if !(gamma > T::zero() && gamma < T::one()) {
        return Err(Error::InvalidParams(format!(
            "γ = {} must lie in (0, 1)",
            gamma.as_f64()
        )));
    }
    critical_exponent(n, gamma).map(|_| ())
}

/// `(n, γ)` together with every derived constant.
///
/// Immutable after construction. `kappa` is the measured amplitude making the
/// unit bubble an exact solution of the boundary equation with unit
/// coefficient; `energy_quantum = (γ/n) κ^{2*} C_n` is the energy of one bubble.
#[derive(Clone, Debug, Serialize)]
pub struct FracParams<T: Real> {
    pub n: usize,
    pub gamma: T,
    pub two_star: T,
    pub d_gamma: T,
    pub d_star: T,
    pub sobolev_s: T,
    pub unit_mass: T,
    pub kappa: T,
    pub energy_quantum: T,
    pub beta_zero: T,
    #[serde(skip)]
    pub calibration: Option<Calibration<T>>,
}

impl<T: Real> FracParams<T> {
    /// Builds the constants with a caller-supplied amplitude (e.g. read back
    /// from a report).
    pub fn with_kappa(n: usize, gamma: T, kappa: T) -> Result<Self> {
        validate(n, gamma)?;
        if !(kappa > T::zero()) {
            return Err(Error::InvalidParams("amplitude κ must be positive".into()));
        }
        let two_star = critical_exponent(n, gamma)?;
        let unit_mass = unit_bubble_mass::<T>(n);
        let nn = T::from_usize_lossy(n);
        Ok(Self {
            n,
            gamma,
            two_star,
            d_gamma: d_gamma(gamma),
            d_star: d_star(gamma),
            sobolev_s: sobolev_constant(n, gamma),
            unit_mass,
            kappa,
            energy_quantum: gamma / nn * kappa.powf(two_star) * unit_mass,
            beta_zero: beta_zero(n, gamma),
            calibration: None,
        })
    }

    /// `(n - 2γ) / 2`, the homogeneity of bubbles under dilation.
    pub fn decay_exponent(&self) -> T {
        (T::from_usize_lossy(self.n) - T::lit(2.0) * self.gamma) * T::lit(0.5)
    }

    /// `γ / n`.
    pub fn energy_factor(&self) -> T {
        self.gamma / T::from_usize_lossy(self.n)
    }

    /// The trace `2*`-mass of one calibrated bubble, `κ^{2*} C_n`.
    pub fn bubble_mass(&self) -> T {
        self.kappa.powf(self.two_star) * self.unit_mass
    }

    /// `n < 3` is outside the range treated by the theory and is admitted as
    /// a low-dimensional numerical regime only.
    pub fn is_low_dimensional(&self) -> bool {
        self.n < 3
    }
}

impl<T: Real + FftNum> FracParams<T> {
    /// Builds the constants and measures `κ` with the spectral oracle.
    pub fn new(n: usize, gamma: T) -> Result<Self> {
        validate(n, gamma)?;
        let cal = calibrate_amplitude(n, gamma)?;
        let mut p = Self::with_kappa(n, gamma, cal.kappa)?;
        p.calibration = Some(cal);
        Ok(p)
    }
}
