//! Bubbles `A (λ / (|x-a|² + λ²))^{(n-2γ)/2}`: evaluation, dilations, trace
//! masses, and the measured amplitude calibration.

use rustfft::FftNum;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extension::spectral::SpectralOracle;
use crate::params::{critical_exponent, d_star, validate, FracParams};
use crate::scalar::Real;
use crate::special::gamma as gamma_fn;

/// One bubble on the boundary `R^n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bubble<T> {
    pub center: Vec<T>,
    pub lambda: T,
    pub amplitude: T,
}

impl<T: Real> Bubble<T> {
    pub fn new(center: Vec<T>, lambda: T, amplitude: T) -> Result<Self> {
        if !(lambda > T::zero()) || !(amplitude > T::zero()) {
            return Err(Error::InvalidInput(
                "bubble scale and amplitude must be positive".into(),
            ));
        }
        Ok(Self {
            center,
            lambda,
            amplitude,
        })
    }

    /// Bubble centred at the origin of `R^n`.
    pub fn centered(n: usize, lambda: T, amplitude: T) -> Result<Self> {
        Self::new(vec![T::zero(); n], lambda, amplitude)
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn dist2(&self, x: &[T]) -> T {
        self.center
            .iter()
            .zip(x)
            .map(|(&a, &b)| (b - a) * (b - a))
            .sum()
    }

    /// Trace value as a function of the squared distance to the centre.
    #[inline]
    pub fn profile(&self, dist2: T, decay: T) -> T {
        self.amplitude * (self.lambda / (dist2 + self.lambda * self.lambda)).powf(decay)
    }

    /// Trace value at `x`; `decay = (n - 2γ)/2`.
    #[inline]
    pub fn eval(&self, x: &[T], decay: T) -> T {
        self.profile(self.dist2(x), decay)
    }

    pub fn eval_trace(&self, p: &FracParams<T>, x: &[T]) -> T {
        self.eval(x, p.decay_exponent())
    }

    /// Pullback `x ↦ μ^{(n-2γ)/2} w(μx + shift)`, which is again a bubble.
    pub fn rescale(&self, mu: T, shift: &[T]) -> Result<Self> {
        if !(mu > T::zero()) {
            return Err(Error::InvalidInput(
                "dilation factor must be positive".into(),
            ));
        }
        let center = self
            .center
            .iter()
            .zip(shift)
            .map(|(&a, &s)| (a - s) / mu)
            .collect();
        Ok(Self {
            center,
            lambda: self.lambda / mu,
            amplitude: self.amplitude,
        })
    }

    /// Inverse of [`Bubble::rescale`]: `x ↦ μ^{-(n-2γ)/2} w((x - shift)/μ)`.
    pub fn push_forward(&self, mu: T, shift: &[T]) -> Result<Self> {
        if !(mu > T::zero()) {
            return Err(Error::InvalidInput(
                "dilation factor must be positive".into(),
            ));
        }
        let center = self
            .center
            .iter()
            .zip(shift)
            .map(|(&a, &s)| mu * a + s)
            .collect();
        Ok(Self {
            center,
            lambda: self.lambda * mu,
            amplitude: self.amplitude,
        })
    }

    /// `∫_{R^n} w^{2*}` in closed form, `A^{2*} C_n`; independent of `λ` and `a`.
    pub fn trace_mass(&self, p: &FracParams<T>) -> T {
        self.amplitude.powf(p.two_star) * p.unit_mass
    }
}

/// Outcome of the amplitude calibration.
#[derive(Clone, Debug, Serialize)]
pub struct Calibration<T> {
    /// Measured `c` in `(-Δ)^γ w = c w^{2*-1}` for the unit bubble, `A = 1`.
    pub coefficient: T,
    /// `c / d*_γ`, the coefficient for the weighted conormal derivative.
    pub conormal_coefficient: T,
    /// `2^{2γ} Γ((n+2γ)/2) / Γ((n-2γ)/2)`, reported next to the measurement.
    pub candidate_closed_form: T,
    pub kappa: T,
    /// Largest relative deviation of the corrected pointwise ratio from `c`.
    pub max_ratio_deviation: T,
    /// Fitted far-field periodisation correction `e0 + e2 |x|²`.
    pub far_field: [T; 2],
    pub method: String,
    pub half_width: T,
    pub resolution: usize,
}

/// Candidate closed form for the `(-Δ)^γ` coefficient of the unit bubble.
pub fn candidate_coefficient<T: Real>(n: usize, gamma: T) -> T {
    let nn = T::from_usize_lossy(n);
    let two = T::lit(2.0);
    two.powf(two * gamma) * gamma_fn((nn + two * gamma) / two) / gamma_fn((nn - two * gamma) / two)
}

const FIT_RADIUS: f64 = 2.0;
const CONSTANCY_TOL: f64 = 1e-2;

/// Samples of `(-Δ)^γ w` for the unit bubble near the origin as
/// `(radius, w(radius), value)` triples.
fn spectral_samples<T: Real + FftNum>(
    n: usize,
    gamma: T,
) -> Result<(Vec<(T, T, T)>, String, T, usize)> {
    let decay = (T::from_usize_lossy(n) - T::lit(2.0) * gamma) * T::lit(0.5);
    let unit = |r2: T| (T::one() / (r2 + T::one())).powf(decay);
    let fit_r = T::lit(FIT_RADIUS);
    match n {
        1 | 3 => {
            // n = 3 uses the radial identity (-Δ_3)^γ u(r) = r^{-1} (-Δ_1)^γ [r u](r).
            let (l, res) = (T::lit(100.0), 4096usize);
            let oracle = SpectralOracle::new(1, gamma, l, res)?;
            let field: Vec<T> = (0..res)
                .map(|i| {
                    let x = oracle.point(i)[0];
                    if n == 1 {
                        unit(x * x)
                    } else {
                        x * unit(x * x)
                    }
                })
                .collect();
            let out = oracle.apply(&field)?;
            let mut samples = Vec::new();
            for (i, &v) in out.iter().enumerate() {
                let x = oracle.point(i)[0];
                if x.abs() > fit_r || (n == 3 && x.abs() < oracle.spacing() * T::lit(0.5)) {
                    continue;
                }
                let value = if n == 1 { v } else { v / x };
                samples.push((x.abs(), unit(x * x), value));
            }
            let method = if n == 1 {
                "lattice-1d"
            } else {
                "radial-odd-reduction"
            };
            Ok((samples, method.to_string(), l, res))
        }
        _ => {
            let res = match n {
                2 => 512usize,
                _ => {
                    let r = (4_194_304f64).powf(1.0 / n as f64).floor() as usize;
                    r - r % 2
                }
            };
            let l = T::from_usize_lossy(res) * T::lit(0.0625);
            let oracle = SpectralOracle::new(n, gamma, l, res)?;
            let field: Vec<T> = (0..oracle.len())
                .map(|i| unit(oracle.point(i).iter().map(|&x| x * x).sum()))
                .collect();
            let out = oracle.apply(&field)?;
            let mut samples = Vec::new();
            for (i, &v) in out.iter().enumerate() {
                let r2: T = oracle.point(i).iter().map(|&x| x * x).sum();
                if r2 <= fit_r * fit_r {
                    samples.push((r2.sqrt(), unit(r2), v));
                }
            }
            Ok((samples, "lattice-nd".to_string(), l, res))
        }
    }
}

/// Measures the amplitude `κ` making `κ w^1_0` satisfy
/// `-lim y^{1-2γ} ∂_y U = U^{2*-1}` on the boundary.
///
/// The spectral oracle gives `(-Δ)^γ w` up to a smooth far-field error from
/// periodisation, which near the centre is fitted as `e0 + e2|x|²` together
/// with `c`. Since `-lim y^{1-2γ}∂_y U = (-Δ)^γ u / d*_γ`, the amplitude is
/// `κ = (c/d*)^{(n-2γ)/(4γ)}`.
pub fn calibrate_amplitude<T: Real + FftNum>(n: usize, gamma: T) -> Result<Calibration<T>> {
    validate(n, gamma)?;
    let two_star = critical_exponent(n, gamma)?;
    let (samples, method, half_width, resolution) = spectral_samples(n, gamma)?;
    if samples.len() < 4 {
        return Err(Error::Calibration(
            "too few lattice samples near the centre".into(),
        ));
    }
    // normal equations for value ≈ c·w^{2*-1} + e0 + e2 r²
    let mut ata = [[0.0f64; 3]; 3];
    let mut atb = [0.0f64; 3];
    for &(r, w, v) in &samples {
        let row = [w.powf(two_star - T::one()).as_f64(), 1.0, (r * r).as_f64()];
        for i in 0..3 {
            for j in 0..3 {
                ata[i][j] += row[i] * row[j];
            }
            atb[i] += row[i] * v.as_f64();
        }
    }
    let sol =
        solve3(ata, atb).ok_or_else(|| Error::Calibration("singular calibration fit".into()))?;
    let c = T::lit(sol[0]);
    let (e0, e2) = (T::lit(sol[1]), T::lit(sol[2]));
    let mut max_dev = T::zero();
    for &(r, w, v) in &samples {
        let ratio = (v - e0 - e2 * r * r) / w.powf(two_star - T::one());
        max_dev = max_dev.max(((ratio - c) / c).abs());
    }
    if !(c > T::zero()) || max_dev > T::lit(CONSTANCY_TOL) {
        return Err(Error::Calibration(format!(
            "ratio (-Δ)^γ w / w^(2*-1) not constant: coefficient {}, spread {:e}",
            c.as_f64(),
            max_dev.as_f64()
        )));
    }
    let conormal = c / d_star(gamma);
    let decay = (T::from_usize_lossy(n) - T::lit(2.0) * gamma) * T::lit(0.5);
    let kappa = conormal.powf(decay / (T::lit(2.0) * gamma));
    Ok(Calibration {
        coefficient: c,
        conormal_coefficient: conormal,
        candidate_closed_form: candidate_coefficient(n, gamma),
        kappa,
        max_ratio_deviation: max_dev,
        far_field: [e0, e2],
        method,
        half_width,
        resolution,
    })
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p3() -> FracParams<f64> {
        FracParams::with_kappa(3, 0.5, 2.0).unwrap()
    }

    #[test]
    fn eval_examples() {
        let p = p3();
        let b = Bubble::centered(3, 1.0, 1.0).unwrap();
        assert_eq!(b.eval_trace(&p, &[0.0, 0.0, 0.0]), 1.0);
        assert!((b.eval_trace(&p, &[1.0, 0.0, 0.0]) - 0.5).abs() < 1e-15);
        let b4 = Bubble::centered(3, 4.0, 1.0).unwrap();
        assert!((b4.eval_trace(&p, &[0.0; 3]) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn rescale_identity_and_value() {
        let p = p3();
        let b = Bubble::centered(3, 1.0, 1.0).unwrap();
        assert_eq!(b.rescale(1.0, &[0.0; 3]).unwrap(), b);
        let r = b.rescale(0.5, &[0.0; 3]).unwrap();
        // μ^{(n-2γ)/2} w(0) with (n-2γ)/2 = 1
        assert!((r.eval_trace(&p, &[0.0; 3]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rescale_matches_pullback_definition() {
        let p = p3();
        let b = Bubble::new(vec![0.3, -1.0, 2.0], 0.7, 1.3).unwrap();
        let (mu, shift) = (0.37, [1.0, 0.5, -0.25]);
        let r = b.rescale(mu, &shift).unwrap();
        for k in 0..20 {
            let x = [k as f64 * 0.1 - 1.0, 0.2 * k as f64, -0.05 * k as f64];
            let moved: Vec<f64> = x.iter().zip(&shift).map(|(xi, s)| mu * xi + s).collect();
            let want = mu.powf(p.decay_exponent()) * b.eval_trace(&p, &moved);
            assert!((r.eval_trace(&p, &x) - want).abs() < 1e-12 * want);
        }
        let back = r.push_forward(mu, &shift).unwrap();
        assert!((back.lambda - b.lambda).abs() < 1e-15);
        for (a, c) in back.center.iter().zip(&b.center) {
            assert!((a - c).abs() < 1e-14);
        }
    }

    #[test]
    fn rescale_composes() {
        let p = p3();
        let b = Bubble::new(vec![0.2, 0.1, -0.3], 1.1, 2.0).unwrap();
        let z = [0.0; 3];
        let two_step = b.rescale(0.6, &z).unwrap().rescale(0.3, &z).unwrap();
        let one_step = b.rescale(0.18, &z).unwrap();
        for k in 0..20 {
            let x = [0.3 * k as f64, -0.1 * k as f64, 0.05];
            let (a, c) = (two_step.eval_trace(&p, &x), one_step.eval_trace(&p, &x));
            assert!((a - c).abs() < 1e-12 * c);
        }
    }

    #[test]
    fn trace_mass_invariance_and_scaling() {
        let p = p3();
        let pi2 = std::f64::consts::PI.powi(2);
        let unit = Bubble::centered(3, 0.3, 1.0).unwrap();
        assert!((unit.trace_mass(&p) - pi2 / 4.0).abs() < 1e-11);
        let wide = Bubble::new(vec![5.0, 1.0, 0.0], 7.0, 1.0).unwrap();
        assert!((unit.trace_mass(&p) - wide.trace_mass(&p)).abs() <= 1e-12 * wide.trace_mass(&p));
        let calibrated = Bubble::centered(3, 1.0, 2.0).unwrap();
        assert!((calibrated.trace_mass(&p) - 2.0 * pi2).abs() < 1e-10);
    }

    #[test]
    fn rejects_nonpositive() {
        assert!(Bubble::centered(1, 0.0, 1.0f64).is_err());
        assert!(Bubble::centered(1, 1.0, -1.0f64).is_err());
        let b = Bubble::centered(1, 1.0, 1.0f64).unwrap();
        assert!(b.rescale(0.0, &[0.0]).is_err());
    }

    #[test]
    fn calibration_n3_half() {
        let cal = calibrate_amplitude(3, 0.5f64).unwrap();
        assert!((cal.coefficient - 2.0).abs() < 1e-8, "{cal:?}");
        assert!((cal.kappa - 2.0).abs() < 1e-8);
        assert!((cal.candidate_closed_form - 2.0).abs() < 1e-12);
    }

    #[test]
    fn calibration_n1_quarter() {
        let cal = calibrate_amplitude(1, 0.25f64).unwrap();
        // mpmath: 2^{1/2} Γ(3/4)/Γ(1/4) = 0.47798879748612499536
        assert!(
            (cal.coefficient - 0.477_988_797_486_125).abs() < 1e-8,
            "{cal:?}"
        );
        assert!(cal.max_ratio_deviation < 1e-6);
    }
}
