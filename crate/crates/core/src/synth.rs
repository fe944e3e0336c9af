//! Synthetic Palais–Smale families "background plus cut-off bubbles", their
//! energy ledgers and bubble separations.

use std::path::PathBuf;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Num, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bubble::Bubble;
use crate::error::{Error, Result};
use crate::extension::PoissonKernel;
use crate::halfspace::{functional_i, ps_residual, Field, Geometry, GridSpec, HalfSpaceGrid};
use crate::params::{validate, FracParams};
use crate::scalar::Real;

/// Grid block of a configuration file; `n` and `γ` come from the enclosing
/// config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock<T> {
    #[serde(rename = "L")]
    pub half_width: T,
    #[serde(rename = "N")]
    pub resolution: usize,
    #[serde(rename = "Y")]
    pub height: T,
    #[serde(rename = "M", default = "default_layers")]
    pub layers: usize,
    #[serde(default)]
    pub q: Option<T>,
    #[serde(default = "default_geometry")]
    pub geometry: Geometry,
}

fn default_layers() -> usize {
    64
}

fn default_geometry() -> Geometry {
    Geometry::Cartesian
}

impl<T: Real> GridBlock<T> {
    pub fn spec(&self, n: usize, gamma: T) -> GridSpec<T> {
        GridSpec {
            n,
            gamma,
            geometry: self.geometry,
            half_width: self.half_width,
            resolution: self.resolution,
            height: self.height,
            layers: self.layers,
            q: self.q,
            origin: None,
        }
    }
}

/// `"zero"` or the path of a field snapshot.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum Background {
    Zero,
    File(PathBuf),
}

impl From<String> for Background {
    fn from(s: String) -> Self {
        if s == "zero" {
            Self::Zero
        } else {
            Self::File(PathBuf::from(s))
        }
    }
}

impl From<Background> for String {
    fn from(b: Background) -> Self {
        match b {
            Background::Zero => "zero".into(),
            Background::File(p) => p.to_string_lossy().into_owned(),
        }
    }
}

/// Potential schedule `Q_α = Q_∞ + α^{-1} P` with a fixed bump `P`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
#[derive(Default)]
pub enum PotentialSpec<T> {
    #[default]
    Zero,
    Constant {
        value: T,
    },
    /// `Q_∞ = base`, `P = amplitude (1 - |x-c|²/radius²)³₊`.
    Perturbed {
        base: T,
        amplitude: T,
        center: Vec<T>,
        radius: T,
    },
}

impl<T: Real> PotentialSpec<T> {
    fn at(&self, x: &[T], alpha: Option<usize>) -> T {
        match self {
            Self::Zero => T::zero(),
            Self::Constant { value } => *value,
            Self::Perturbed {
                base,
                amplitude,
                center,
                radius,
            } => {
                let Some(a) = alpha else { return *base };
                let r2: T = x
                    .iter()
                    .zip(center)
                    .map(|(&u, &c)| (u - c) * (u - c))
                    .sum::<T>()
                    / (*radius * *radius);
                let bump = if r2 < T::one() {
                    (T::one() - r2).powi(3)
                } else {
                    T::zero()
                };
                *base + *amplitude * bump / T::from_usize_lossy(a)
            }
        }
    }

    /// Uniform bound on `|Q_α|`.
    pub fn bound(&self) -> T {
        match self {
            Self::Zero => T::zero(),
            Self::Constant { value } => value.abs(),
            Self::Perturbed {
                base, amplitude, ..
            } => base.abs() + amplitude.abs(),
        }
    }
}

/// One planted bubble: a reference bubble `(λ, A)` at `center`, dilated by
/// the scale schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound(deserialize = "T: Real"))]
pub struct BubbleEntry<T> {
    pub center: Vec<T>,
    pub mu_schedule: Vec<T>,
    /// Cutoff radius; `None` disables the cutoff.
    #[serde(default)]
    pub r0: Option<T>,
    #[serde(default = "one")]
    pub lambda: T,
    /// Amplitude; the calibrated `κ` when absent.
    #[serde(default)]
    pub amplitude: Option<T>,
}

fn one<T: Real>() -> T {
    T::one()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound(deserialize = "T: Real"))]
pub struct BubbleConfig<T> {
    pub n: usize,
    pub gamma: T,
    pub grid: GridBlock<T>,
    #[serde(default = "zero_background")]
    pub background: Background,
    pub bubbles: Vec<BubbleEntry<T>>,
    #[serde(rename = "Q", default)]
    pub potential: PotentialSpec<T>,
}

fn zero_background() -> Background {
    Background::Zero
}

impl<T: Real> BubbleConfig<T> {
    pub fn validate(&self) -> Result<()> {
        validate(self.n, self.gamma)?;
        self.grid.spec(self.n, self.gamma).check()?;
        let bad = |m: String| Err(Error::InvalidInput(m));
        let steps = self.steps();
        for (j, b) in self.bubbles.iter().enumerate() {
            if b.center.len() != self.n {
                return bad(format!("bubbles[{j}].center must have {} entries", self.n));
            }
            if b.mu_schedule.len() != steps || steps == 0 {
                return bad(format!(
                    "bubbles[{j}].mu_schedule must be nonempty and as long as the others"
                ));
            }
            if b.mu_schedule.iter().any(|&m| !(m > T::zero()))
                || b.mu_schedule.windows(2).any(|w| !(w[1] < w[0]))
            {
                return bad(format!(
                    "bubbles[{j}].mu_schedule must be positive and strictly decreasing"
                ));
            }
            if let Some(r0) = b.r0 {
                if !(r0 > T::zero()) || T::lit(2.0) * r0 > self.grid.half_width / T::lit(4.0) {
                    return bad(format!("bubbles[{j}].r0 must satisfy 0 < 2 r0 <= L/4"));
                }
            }
            if !(b.lambda > T::zero()) || b.amplitude.is_some_and(|a| !(a >= T::zero())) {
                return bad(format!("bubbles[{j}] needs lambda > 0 and amplitude >= 0"));
            }
            if self.grid.geometry == Geometry::Radial && b.center.iter().any(|&c| c != T::zero()) {
                return bad(format!(
                    "bubbles[{j}].center must be the origin on radial grids"
                ));
            }
        }
        if !self.potential.bound().is_finite() {
            return bad("Q must be bounded".into());
        }
        if let PotentialSpec::Perturbed { center, radius, .. } = &self.potential {
            if center.len() != self.n || !(*radius > T::zero()) {
                return bad("Q.center must have n entries and Q.radius must be positive".into());
            }
        }
        Ok(())
    }

    /// Number of scheduled indices; `α` runs over `1..=steps()`.
    pub fn steps(&self) -> usize {
        self.bubbles.first().map_or(0, |b| b.mu_schedule.len())
    }

    pub fn m(&self) -> usize {
        self.bubbles.len()
    }

    pub fn grid_spec(&self) -> GridSpec<T> {
        self.grid.spec(self.n, self.gamma)
    }

    fn check_alpha(&self, alpha: usize) -> Result<()> {
        if self.bubbles.is_empty() {
            return Ok(());
        }
        if alpha == 0 || alpha > self.steps() {
            return Err(Error::InvalidInput(format!(
                "alpha must lie in 1..={}",
                self.steps()
            )));
        }
        Ok(())
    }

    pub fn scale(&self, j: usize, alpha: usize) -> T {
        self.bubbles[j].mu_schedule[alpha - 1]
    }

    /// Bubble `j` at index `α`: `μ^{-(n-2γ)/2} w((x - x^j)/μ)`.
    pub fn bubble_at(&self, j: usize, alpha: usize, p: &FracParams<T>) -> Result<Bubble<T>> {
        self.check_alpha(alpha)?;
        let e = &self.bubbles[j];
        let reference = Bubble::new(
            vec![T::zero(); self.n],
            e.lambda,
            e.amplitude.unwrap_or(p.kappa),
        )?;
        reference.push_forward(self.scale(j, alpha), &e.center)
    }

    /// `Q_α` on the boundary nodes of `grid`.
    pub fn potential(&self, alpha: usize, grid: &HalfSpaceGrid<T>) -> Vec<T> {
        (0..grid.boundary_len())
            .map(|i| self.potential.at(&grid.point(i), Some(alpha)))
            .collect()
    }

    /// The limit potential `Q_∞`.
    pub fn potential_limit(&self, grid: &HalfSpaceGrid<T>) -> Vec<T> {
        (0..grid.boundary_len())
            .map(|i| self.potential.at(&grid.point(i), None))
            .collect()
    }
}

/// `1` on `[0, r0]`, `0` beyond `2 r0`, quintic smoothstep in between.
pub fn cutoff<T: Real>(dist: T, r0: Option<T>) -> T {
    let Some(r0) = r0 else { return T::one() };
    let s = ((dist - r0) / r0).max(T::zero()).min(T::one());
    T::one() - s * s * s * (T::lit(10.0) - T::lit(15.0) * s + T::lit(6.0) * s * s)
}

fn check_scales<T: Real>(cfg: &BubbleConfig<T>, alpha: usize, cell: T) -> Result<()> {
    for j in 0..cfg.m() {
        let mu = cfg.scale(j, alpha) * cfg.bubbles[j].lambda;
        if mu < T::lit(4.0) * cell {
            return Err(Error::ScaleBelowGrid {
                mu: mu.as_f64(),
                cell: cell.as_f64(),
                min_cells: 4,
            });
        }
    }
    Ok(())
}

/// `u0 + Σ_j η^j U^j_α` on every node of `grid`, with the extensions
/// evaluated by Poisson quadrature.
pub fn synthesize<T: Real>(
    cfg: &BubbleConfig<T>,
    alpha: usize,
    grid: &std::sync::Arc<HalfSpaceGrid<T>>,
    p: &FracParams<T>,
    u0: Option<&Field<T>>,
) -> Result<Field<T>> {
    cfg.check_alpha(alpha)?;
    if grid.spec().n != cfg.n || grid.gamma() != cfg.gamma {
        return Err(Error::InvalidInput(
            "grid order differs from the configuration".into(),
        ));
    }
    check_scales(cfg, alpha, grid.spacing())?;
    let mut values = match u0 {
        Some(f) => {
            if f.grid().spec() != grid.spec() {
                return Err(Error::InvalidInput(
                    "background lives on a different grid".into(),
                ));
            }
            f.values().to_vec()
        }
        None => vec![T::zero(); grid.len()],
    };
    let kernel = PoissonKernel::new(p);
    let nb = grid.boundary_len();
    for j in 0..cfg.m() {
        let b = cfg.bubble_at(j, alpha, p)?;
        let r0 = cfg.bubbles[j].r0;
        let add: Vec<T> = (0..grid.len())
            .into_par_iter()
            .map(|idx| {
                let (i, k) = (idx % nb, idx / nb);
                let y = grid.y()[k];
                let x = grid.point(i);
                let eta = cutoff((grid.dist2(i, &b.center) + y * y).sqrt(), r0);
                if eta == T::zero() {
                    return Ok(T::zero());
                }
                Ok(eta * kernel.extend(&b, &x, y)?.value)
            })
            .collect::<Result<_>>()?;
        for (v, a) in values.iter_mut().zip(add) {
            *v = *v + a;
        }
    }
    Field::new(grid.clone(), values)
}

/// Boundary values of the synthesized family at arbitrary points, with the
/// background `u0` given by its values at those points.
pub fn synthesize_trace<T: Real>(
    cfg: &BubbleConfig<T>,
    alpha: usize,
    p: &FracParams<T>,
    points: &[Vec<T>],
    cell: T,
    u0: Option<&[T]>,
) -> Result<Vec<T>> {
    cfg.check_alpha(alpha)?;
    check_scales(cfg, alpha, cell)?;
    let mut values = match u0 {
        Some(u) if u.len() != points.len() => {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                got: u.len(),
            })
        }
        Some(u) => u.to_vec(),
        None => vec![T::zero(); points.len()],
    };
    for j in 0..cfg.m() {
        let b = cfg.bubble_at(j, alpha, p)?;
        let r0 = cfg.bubbles[j].r0;
        for (v, x) in values.iter_mut().zip(points) {
            let d2 = b.dist2(x);
            *v = *v + cutoff(d2.sqrt(), r0) * b.eval_trace(p, x);
        }
    }
    Ok(values)
}

/// `μᵢ/μⱼ + μⱼ/μᵢ + d²/(μᵢμⱼ)` in any exact or inexact number type.
pub fn separation_value<N: Num + Clone>(mu_i: N, mu_j: N, d2: N) -> N {
    mu_i.clone() / mu_j.clone() + mu_j.clone() / mu_i.clone() + d2 / (mu_i * mu_j)
}

/// Exact rational value of a finite float.
pub fn exact<T: Real>(x: T) -> Result<BigRational> {
    BigRational::from_float(x.as_f64())
        .ok_or_else(|| Error::InvalidInput("non-finite value in exact arithmetic".into()))
}

/// Pairwise separations, evaluated exactly and rounded for reporting.
#[derive(Clone, Debug, Serialize)]
pub struct SeparationMatrix<T> {
    pub entries: Vec<Vec<T>>,
    #[serde(skip)]
    pub exact: Vec<Vec<BigRational>>,
}

impl<T: Real> SeparationMatrix<T> {
    /// From scales and centres; the diagonal is 2 by convention.
    pub fn from_pairs(scales: &[T], centers: &[Vec<T>]) -> Result<Self> {
        let m = scales.len();
        let mus = scales
            .iter()
            .map(|&s| exact(s))
            .collect::<Result<Vec<_>>>()?;
        let cs = centers
            .iter()
            .map(|c| c.iter().map(|&v| exact(v)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let two = BigRational::from_integer(BigInt::from(2));
        let mut ex = vec![vec![two.clone(); m]; m];
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    let d2 = cs[i]
                        .iter()
                        .zip(&cs[j])
                        .fold(BigRational::zero(), |acc, (a, b)| acc + (a - b) * (a - b));
                    ex[i][j] = separation_value(mus[i].clone(), mus[j].clone(), d2);
                }
            }
        }
        let entries = ex
            .iter()
            .map(|row| {
                row.iter()
                    .map(|v| T::from_f64(ratio_to_f64(v)).unwrap_or_else(T::infinity))
                    .collect()
            })
            .collect();
        Ok(Self { entries, exact: ex })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Smallest off-diagonal entry, `None` for fewer than two bubbles.
    pub fn min_off_diagonal(&self) -> Option<T> {
        let mut best: Option<T> = None;
        for i in 0..self.len() {
            for j in 0..self.len() {
                if i != j {
                    let v = self.entries[i][j];
                    best = Some(best.map_or(v, |b: T| b.min(v)));
                }
            }
        }
        best
    }
}

fn ratio_to_f64(r: &BigRational) -> f64 {
    use num_traits::ToPrimitive;
    r.to_f64().unwrap_or(f64::INFINITY)
}

/// Separation matrix of the planted bubbles at index `α` (`m ≥ 2`).
pub fn separation<T: Real>(cfg: &BubbleConfig<T>, alpha: usize) -> Result<SeparationMatrix<T>> {
    if cfg.m() < 2 {
        return Err(Error::InvalidInput(
            "separation needs at least two bubbles".into(),
        ));
    }
    cfg.check_alpha(alpha)?;
    let scales: Vec<T> = (0..cfg.m())
        .map(|j| cfg.scale(j, alpha) * cfg.bubbles[j].lambda)
        .collect();
    let centers: Vec<Vec<T>> = cfg.bubbles.iter().map(|b| b.center.clone()).collect();
    SeparationMatrix::from_pairs(&scales, &centers)
}

/// Column names of the ledger CSV.
pub const LEDGER_COLUMNS: [&str; 7] = [
    "alpha",
    "I_total",
    "I_background",
    "quantum_sum",
    "defect",
    "residual",
    "min_separation",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerRecord<T> {
    pub alpha: usize,
    #[serde(rename = "I_total")]
    pub i_total: T,
    #[serde(rename = "I_background")]
    pub i_background: T,
    pub quantum_sum: T,
    pub defect: T,
    pub residual: T,
    /// Smallest off-diagonal separation; `None` for `m < 2`.
    pub min_separation: Option<T>,
}

impl<T: Real> LedgerRecord<T> {
    pub fn csv_row(&self) -> Vec<String> {
        let f = |v: T| crate::io::format_float(v.as_f64());
        vec![
            self.alpha.to_string(),
            f(self.i_total),
            f(self.i_background),
            f(self.quantum_sum),
            f(self.defect),
            f(self.residual),
            self.min_separation.map_or_else(String::new, f),
        ]
    }
}

/// `(I_total, I_background, m E*, defect)` at index `α`, plus the residual
/// of the synthesized field and the smallest separation.
pub fn energy_ledger<T: Real>(
    cfg: &BubbleConfig<T>,
    alpha: usize,
    grid: &std::sync::Arc<HalfSpaceGrid<T>>,
    p: &FracParams<T>,
    u0: Option<&Field<T>>,
) -> Result<(LedgerRecord<T>, Field<T>)> {
    let u = synthesize(cfg, alpha, grid, p, u0)?;
    let q_alpha = cfg.potential(alpha, grid);
    let q_inf = cfg.potential_limit(grid);
    let i_total = functional_i(&u, Some(&q_alpha))?;
    let i_background = match u0 {
        Some(f) => functional_i(f, Some(&q_inf))?,
        None => T::zero(),
    };
    let quantum_sum = T::from_usize_lossy(cfg.m()) * p.energy_quantum;
    let residual = ps_residual(&u, Some(&q_alpha))?.riesz;
    let min_separation = if cfg.m() >= 2 {
        separation(cfg, alpha)?.min_off_diagonal()
    } else {
        None
    };
    let rec = LedgerRecord {
        alpha,
        i_total,
        i_background,
        quantum_sum,
        defect: i_total - i_background - quantum_sum,
        residual,
        min_separation,
    };
    Ok((rec, u))
}
