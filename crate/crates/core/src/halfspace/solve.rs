//! Linear solves on the grid: discrete weighted-harmonic extension, the
//! Riesz representative of the functional's derivative, and a fixed-point
//! iteration for discrete critical points.

use std::sync::Arc;

use serde::Serialize;

use super::energy::{
    check_potential, grid_exponent, stiffness_apply, trace_l2, weighted_dirichlet,
};
use super::field::Field;
use super::grid::{FarField, Geometry, HalfSpaceGrid, SystemKind};
use super::linalg::{dot, SolveStats};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Relative residual every linear solve is driven to.
pub const SOLVER_TOLERANCE: f64 = 1e-8;

/// Discrete weighted-harmonic extension of `trace` with homogeneous
/// conormal condition on the sides and top.
pub fn harmonic_extension<T: Real>(trace: &[T], grid: &Arc<HalfSpaceGrid<T>>) -> Result<Field<T>> {
    let data = Field::from_trace(grid.clone(), trace)?;
    Ok(extend_with(&data, FarField::Natural)?.0)
}

/// Minimizes the discrete energy over the nodes left free by `far`, taking
/// the prescribed values (bottom layer, plus sides and top for
/// [`FarField::Dirichlet`]) from `data`.
pub fn extend_with<T: Real>(data: &Field<T>, far: FarField) -> Result<(Field<T>, SolveStats<T>)> {
    let grid = data.grid();
    let sys = grid.system(SystemKind::Extension(far))?;
    let mut u = data.values().to_vec();
    for &f in &sys.free {
        u[f] = T::zero();
    }
    let au = stiffness_apply(grid, &u);
    let rhs: Vec<T> = sys.free.iter().map(|&f| -au[f]).collect();
    let (x, stats) = sys.solver.solve(&rhs, T::lit(SOLVER_TOLERANCE))?;
    for (&f, v) in sys.free.iter().zip(x) {
        u[f] = v;
    }
    Ok((Field::new(grid.clone(), u)?, stats))
}

/// Gradient of the discrete functional: `A u + μ (Q u - |u|^{2*-2} u)` on the
/// bottom layer.
pub fn functional_gradient<T: Real>(u: &Field<T>, q: Option<&[T]>) -> Result<Vec<T>> {
    let grid = u.grid();
    check_potential(grid, q)?;
    let ts = grid_exponent(grid);
    let mut r = stiffness_apply(grid, u.values());
    for (i, (&w, &v)) in grid.measure().iter().zip(u.trace()).enumerate() {
        let qv = q.map_or(T::zero(), |q| q[i]);
        r[i] = r[i] + w * (qv * v - v.abs().powf(ts - T::lit(2.0)) * v);
    }
    Ok(r)
}

/// Squared norm `D(φ) + ∫ φ²` of the space in which residuals are measured.
pub fn space_norm_sq<T: Real>(phi: &Field<T>) -> T {
    weighted_dirichlet(phi) + trace_l2(phi.grid(), phi.trace())
}

#[derive(Clone, Debug, Serialize)]
pub struct PsResidual<T> {
    /// Dual norm via the Riesz representative.
    pub riesz: T,
    /// Largest normalized pairing over the fixed dictionary of test fields.
    pub dictionary: T,
    pub solver_iterations: usize,
    pub solver_residual: T,
}

impl<T: Real> PsResidual<T> {
    pub fn value(&self) -> T {
        self.riesz
    }
}

/// Dual norm of `φ ↦ ∫ y^{1-2γ}∇u·∇φ + ∫ Q u φ - ∫ |u|^{2*-2} u φ`.
pub fn ps_residual<T: Real>(u: &Field<T>, q: Option<&[T]>) -> Result<PsResidual<T>> {
    let grid = u.grid();
    let r = functional_gradient(u, q)?;
    let (riesz, stats) = riesz_norm(grid, &r)?;
    let mut dictionary = T::zero();
    for phi in test_dictionary(grid, &r)? {
        let nrm = space_norm_sq(&phi);
        if nrm > T::zero() {
            dictionary = dictionary.max(dot(&r, phi.values()).abs() / nrm.sqrt());
        }
    }
    Ok(PsResidual {
        riesz,
        dictionary,
        solver_iterations: stats.iterations,
        solver_residual: stats.relative_residual,
    })
}

/// `sqrt(r·K⁻¹r)` with `K` the Gram matrix of the space norm.
pub fn riesz_norm<T: Real>(grid: &HalfSpaceGrid<T>, r: &[T]) -> Result<(T, SolveStats<T>)> {
    let sys = grid.system(SystemKind::Riesz)?;
    let (z, stats) = sys.solver.solve(r, T::lit(SOLVER_TOLERANCE))?;
    Ok((dot(r, &z).max(T::zero()).sqrt(), stats))
}

/// 32 test fields: bubble-like and Gaussian bumps at 8 scales, each in an
/// isotropic and a boundary-layer variant. On Cartesian grids the
/// boundary-layer variant sits where the gradient `r` peaks on the bottom.
pub fn test_dictionary<T: Real>(grid: &Arc<HalfSpaceGrid<T>>, r: &[T]) -> Result<Vec<Field<T>>> {
    let n = grid.n();
    let h = grid.spacing();
    let big = grid.spec().half_width * T::lit(0.5);
    let origin = match grid.geometry() {
        Geometry::Radial => grid.origin(),
        Geometry::Cartesian => vec![T::zero(); n],
    };
    let peak = match grid.geometry() {
        Geometry::Radial => origin.clone(),
        Geometry::Cartesian => {
            let nb = grid.boundary_len();
            let mut best = 0;
            for i in 0..nb {
                if r[i].abs() > r[best].abs() {
                    best = i;
                }
            }
            grid.point(best)
        }
    };
    let beta = (T::from_usize_lossy(n) - T::lit(2.0) * grid.gamma()) * T::lit(0.5);
    let mut out = Vec::with_capacity(32);
    for s_idx in 0..8 {
        let frac = T::from_usize_lossy(s_idx) / T::lit(7.0);
        let s = (T::lit(2.0) * h) * (big / (T::lit(2.0) * h)).max(T::one()).powf(frac);
        for variant in 0..2 {
            let c = if variant == 0 {
                origin.clone()
            } else {
                peak.clone()
            };
            let d2 = |x: &[T]| -> T { x.iter().zip(&c).map(|(&a, &b)| (a - b) * (a - b)).sum() };
            out.push(Field::from_fn(grid.clone(), |x, y| {
                let yy = if variant == 0 { y + s } else { s };
                let damp = if variant == 0 {
                    T::one()
                } else {
                    (-y / s).exp()
                };
                damp * (s / (d2(x) + yy * yy)).powf(beta)
            })?);
            out.push(Field::from_fn(grid.clone(), |x, y| {
                let yy = if variant == 0 { y * y / (s * s) } else { y / s };
                (-(d2(x) / (s * s)) - yy).exp()
            })?);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct CriticalPoint<T: Real> {
    #[serde(skip)]
    pub field: Field<T>,
    pub iterations: usize,
    pub residual: T,
}

/// Settings of [`critical_point`].
#[derive(Clone, Copy, Debug)]
pub struct DescentSettings<T> {
    pub max_iter: usize,
    /// Stop once the Riesz residual is below this.
    pub tolerance: T,
}

impl<T: Real> Default for DescentSettings<T> {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tolerance: T::lit(1e-9),
        }
    }
}

/// Positive critical point of the discrete functional with potential
/// `Q ≥ 0, Q ≢ 0`, by normalized inverse iteration
/// `v ← K_Q^{-1}(μ|v|^{2*-2}v)` started from `start`, followed by the
/// rescaling that turns the fixed point into a solution.
pub fn critical_point<T: Real>(
    start: &Field<T>,
    q: &[T],
    settings: DescentSettings<T>,
) -> Result<CriticalPoint<T>> {
    let grid = start.grid();
    check_potential(grid, Some(q))?;
    if q.iter().any(|&v| v < T::zero()) || q.iter().all(|&v| v == T::zero()) {
        return Err(Error::InvalidInput(
            "critical point iteration needs Q >= 0, Q != 0".into(),
        ));
    }
    let shift: Vec<T> = grid.measure().iter().zip(q).map(|(&w, &v)| w * v).collect();
    let sys = grid.build_system(SystemKind::Riesz, Some(shift))?;
    let ts = grid_exponent(grid);
    let nb = grid.boundary_len();
    let tol = T::lit(SOLVER_TOLERANCE * 1e-3);
    let k_norm = |v: &[T]| dot(v, &sys.solver.matrix().matvec(v)).sqrt();
    let mut v = start.values().to_vec();
    let n0 = k_norm(&v);
    if !(n0 > T::zero()) {
        return Err(Error::InvalidInput(
            "critical point iteration needs a nonzero start".into(),
        ));
    }
    v.iter_mut().for_each(|x| *x = *x / n0);
    let mut last = T::infinity();
    for it in 1..=settings.max_iter {
        let mut f = vec![T::zero(); grid.len()];
        for i in 0..nb {
            f[i] = grid.measure()[i] * v[i].abs().powf(ts - T::lit(2.0)) * v[i];
        }
        let (w, _) = sys.solver.solve(&f, tol)?;
        // K v = f(v)/c with c = ‖w‖_K at the fixed point; u = c^{-1/(2*-2)} v.
        let c = k_norm(&w);
        v = w.iter().map(|&x| x / c).collect();
        let s = c.powf(-T::one() / (ts - T::lit(2.0)));
        let u = Field::new(grid.clone(), v.iter().map(|&x| s * x).collect())?;
        let (res, _) = riesz_norm(grid, &functional_gradient(&u, Some(q))?)?;
        last = res;
        if res <= settings.tolerance {
            return Ok(CriticalPoint {
                field: u,
                iterations: it,
                residual: res,
            });
        }
    }
    Err(Error::SolverNonConvergence {
        iterations: settings.max_iter,
        residual: last.as_f64(),
    })
}
