//! Gamma and Beta functions.

use crate::scalar::Real;

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Euler Gamma function.
///
/// Lanczos approximation for `x >= 1/2`, reflection formula below. Returns
/// NaN at the poles `0, -1, -2, ...`.
pub fn gamma<T: Real>(x: T) -> T {
    let half = T::lit(0.5);
    if x < half {
        if x == x.floor() {
            return T::nan();
        }
        let pi = T::PI();
        return pi / ((pi * x).sin() * gamma(T::one() - x));
    }
    let x = x - T::one();
    let mut acc = T::lit(LANCZOS_COEF[0]);
    for (k, &c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc = acc + T::lit(c) / (x + T::from_usize_lossy(k));
    }
    let t = x + T::lit(LANCZOS_G) + half;
    let sqrt_two_pi = (T::lit(2.0) * T::PI()).sqrt();
    sqrt_two_pi * ((x + half) * t.ln() - t).exp() * acc
}

/// Euler Beta function `B(a, b) = Γ(a)Γ(b)/Γ(a+b)` for positive arguments.
pub fn beta<T: Real>(a: T, b: T) -> T {
    gamma(a) * gamma(b) / gamma(a + b)
}

/// Surface area of the unit sphere `S^{d-1}` in `R^d`; `|S^0| = 2`.
pub fn sphere_area<T: Real>(d: usize) -> T {
    let half_d = T::from_usize_lossy(d) * T::lit(0.5);
    T::lit(2.0) * T::PI().powf(half_d) / gamma(half_d)
}
