//! Globally adaptive Gauss–Kronrod (7/15) quadrature on finite intervals.

#![allow(clippy::excessive_precision)]

use crate::scalar::Real;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_5,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_48,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224,
    0.063_092_092_629_978_56,
    0.104_790_010_322_250_19,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_42,
    0.204_432_940_075_298_89,
    0.209_482_141_084_727_82,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_64,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Stopping rule for [`integrate`].
#[derive(Clone, Copy, Debug)]
pub struct Tolerance<T> {
    pub abs: T,
    pub rel: T,
    pub max_intervals: usize,
}

impl<T: Real> Tolerance<T> {
    pub fn relative(rel: f64) -> Self {
        Self {
            abs: T::lit(1e-300).max(T::min_positive_value()),
            rel: T::lit(rel),
            max_intervals: 2000,
        }
    }

    pub fn with_abs(mut self, abs: f64) -> Self {
        self.abs = T::lit(abs);
        self
    }

    pub fn with_max_intervals(mut self, n: usize) -> Self {
        self.max_intervals = n;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadResult<T> {
    pub value: T,
    pub error: T,
    pub evaluations: usize,
    pub converged: bool,
}

#[derive(Clone, Copy)]
struct Segment<T> {
    a: T,
    b: T,
    value: T,
    error: T,
}

fn kronrod<T: Real, F: FnMut(T) -> T>(f: &mut F, a: T, b: T) -> (T, T) {
    let center = (a + b) * T::lit(0.5);
    let half = (b - a) * T::lit(0.5);
    let fc = f(center);
    let mut res_k = fc * T::lit(WGK[7]);
    let mut res_g = fc * T::lit(WG[3]);
    for j in 0..7 {
        let dx = half * T::lit(XGK[j]);
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        res_k = res_k + T::lit(WGK[j]) * (f1 + f2);
        if j % 2 == 1 {
            res_g = res_g + T::lit(WG[j / 2]) * (f1 + f2);
        }
    }
    let value = res_k * half;
    let err = ((res_k - res_g) * half).abs();
    (value, err)
}

/// Integrates `f` over `[a, b]` with interval bisection driven by the
/// largest local error estimate.
///
/// Integrable endpoint singularities are fine as long as `f` stays finite at
/// the interior Kronrod nodes.
pub fn integrate<T: Real, F: FnMut(T) -> T>(
    mut f: F,
    a: T,
    b: T,
    tol: Tolerance<T>,
) -> QuadResult<T> {
    if a == b {
        return QuadResult {
            value: T::zero(),
            error: T::zero(),
            evaluations: 0,
            converged: true,
        };
    }
    let (v, e) = kronrod(&mut f, a, b);
    let mut segs = vec![Segment {
        a,
        b,
        value: v,
        error: e,
    }];
    let mut evals = 15;
    loop {
        let total: T = segs.iter().map(|s| s.value).sum();
        let err: T = segs.iter().map(|s| s.error).sum();
        let target = tol.abs.max(tol.rel * total.abs());
        if err <= target {
            return QuadResult {
                value: total,
                error: err,
                evaluations: evals,
                converged: true,
            };
        }
        if segs.len() >= tol.max_intervals {
            return QuadResult {
                value: total,
                error: err,
                evaluations: evals,
                converged: false,
            };
        }
        let (worst, _) = segs
            .iter()
            .enumerate()
            .fold((0, T::neg_infinity()), |acc, (i, s)| {
                if s.error > acc.1 {
                    (i, s.error)
                } else {
                    acc
                }
            });
        let s = segs.swap_remove(worst);
        let mid = (s.a + s.b) * T::lit(0.5);
        if mid <= s.a || mid >= s.b {
            // interval exhausted at machine resolution
            let total: T = segs.iter().map(|s| s.value).sum::<T>() + s.value;
            let err: T = segs.iter().map(|s| s.error).sum::<T>() + s.error;
            return QuadResult {
                value: total,
                error: err,
                evaluations: evals,
                converged: false,
            };
        }
        let (v1, e1) = kronrod(&mut f, s.a, mid);
        let (v2, e2) = kronrod(&mut f, mid, s.b);
        evals += 30;
        segs.push(Segment {
            a: s.a,
            b: mid,
            value: v1,
            error: e1,
        });
        segs.push(Segment {
            a: mid,
            b: s.b,
            value: v2,
            error: e2,
        });
    }
}

/// Integrates over consecutive pieces `[p0, p1], [p1, p2], ...`, splitting the
/// error budget evenly.
pub fn integrate_pieces<T: Real, F: FnMut(T) -> T>(
    mut f: F,
    points: &[T],
    tol: Tolerance<T>,
) -> QuadResult<T> {
    let mut out = QuadResult {
        value: T::zero(),
        error: T::zero(),
        evaluations: 0,
        converged: true,
    };
    for w in points.windows(2) {
        let r = integrate(&mut f, w[0], w[1], tol);
        out.value = out.value + r.value;
        out.error = out.error + r.error;
        out.evaluations += r.evaluations;
        out.converged &= r.converged;
    }
    out
}
