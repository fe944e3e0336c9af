//! Discrete weighted energy, trace integrals and the functional
//! `I(u) = ½ ∫ y^{1-2γ}|∇u|² + ½ ∫ Q u² - (1/2*) ∫ |u|^{2*}`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::field::Field;
use super::grid::HalfSpaceGrid;
use crate::error::{Error, Result};
use crate::params::critical_exponent;
use crate::scalar::Real;

/// Summary of a field's energy pieces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport<T> {
    /// `∫ y^{1-2γ} |∇u|²`.
    pub dirichlet: T,
    /// `∫ u²` over the boundary.
    pub trace_l2: T,
    /// `∫ |u|^{2*}` over the boundary.
    pub trace_mass_2star: T,
    pub functional_value: T,
    /// Dual norm of the functional's derivative.
    pub residual_dual: T,
}

fn layer_sums<T: Real, F>(grid: &HalfSpaceGrid<T>, f: F) -> T
where
    F: Fn(usize) -> T + Sync + Send,
{
    let parts: Vec<T> = (0..=grid.layers()).into_par_iter().map(f).collect();
    parts.into_iter().sum()
}

/// `Σ c (Δu)²` over every grid edge; nonnegative.
pub fn weighted_dirichlet<T: Real>(u: &Field<T>) -> T {
    let grid = u.grid();
    let nb = grid.boundary_len();
    let m = grid.layers();
    let vals = u.values();
    let mu = grid.measure();
    layer_sums(grid, |k| {
        let row = &vals[k * nb..(k + 1) * nb];
        let mut s = T::zero();
        let nu = grid.layer_weight()[k];
        for &(i, j, c) in grid.edges() {
            let d = row[i] - row[j];
            s = s + nu * c * d * d;
        }
        if k < m {
            let up = &vals[(k + 1) * nb..(k + 2) * nb];
            let g = grid.vertical_conductance()[k];
            for i in 0..nb {
                let d = up[i] - row[i];
                s = s + mu[i] * g * d * d;
            }
        }
        s
    })
}

/// `A u`, the gradient of `½ D(u)`.
pub fn stiffness_apply<T: Real>(grid: &HalfSpaceGrid<T>, u: &[T]) -> Vec<T> {
    let nb = grid.boundary_len();
    let m = grid.layers();
    let mu = grid.measure();
    let rows: Vec<Vec<T>> = (0..=m)
        .into_par_iter()
        .map(|k| {
            let row = &u[k * nb..(k + 1) * nb];
            let mut out = vec![T::zero(); nb];
            let nu = grid.layer_weight()[k];
            for &(i, j, c) in grid.edges() {
                let f = nu * c * (row[i] - row[j]);
                out[i] = out[i] + f;
                out[j] = out[j] - f;
            }
            if k < m {
                let up = &u[(k + 1) * nb..(k + 2) * nb];
                let g = grid.vertical_conductance()[k];
                for i in 0..nb {
                    out[i] = out[i] + mu[i] * g * (row[i] - up[i]);
                }
            }
            if k > 0 {
                let down = &u[(k - 1) * nb..k * nb];
                let g = grid.vertical_conductance()[k - 1];
                for i in 0..nb {
                    out[i] = out[i] + mu[i] * g * (row[i] - down[i]);
                }
            }
            out
        })
        .collect();
    rows.concat()
}

/// `∫ u²` by the boundary quadrature.
pub fn trace_l2<T: Real>(grid: &HalfSpaceGrid<T>, trace: &[T]) -> T {
    grid.measure()
        .iter()
        .zip(trace)
        .map(|(&w, &v)| w * v * v)
        .sum()
}

/// `∫ |u|^p` by the boundary quadrature.
pub fn trace_power<T: Real>(grid: &HalfSpaceGrid<T>, trace: &[T], p: T) -> T {
    grid.measure()
        .iter()
        .zip(trace)
        .map(|(&w, &v)| w * v.abs().powf(p))
        .sum()
}

/// `2* = 2n/(n-2γ)` of the grid's order.
pub fn grid_exponent<T: Real>(grid: &HalfSpaceGrid<T>) -> T {
    critical_exponent(grid.n(), grid.gamma()).expect("grid parameters validated at construction")
}

pub(crate) fn check_potential<T: Real>(grid: &HalfSpaceGrid<T>, q: Option<&[T]>) -> Result<()> {
    if let Some(q) = q {
        if q.len() != grid.boundary_len() {
            return Err(Error::DimensionMismatch {
                expected: grid.boundary_len(),
                got: q.len(),
            });
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("potential must be finite".into()));
        }
    }
    Ok(())
}

/// `½ D(u) + ½ ∫ Q u² - (1/2*) ∫ |u|^{2*}`; `None` means `Q ≡ 0`.
pub fn functional_i<T: Real>(u: &Field<T>, q: Option<&[T]>) -> Result<T> {
    let grid = u.grid();
    check_potential(grid, q)?;
    let half = T::lit(0.5);
    let ts = grid_exponent(grid);
    let tr = u.trace();
    let pot = match q {
        Some(q) => grid
            .measure()
            .iter()
            .zip(tr)
            .zip(q)
            .map(|((&w, &v), &qq)| w * qq * v * v)
            .sum(),
        None => T::zero(),
    };
    Ok(half * weighted_dirichlet(u) + half * pot - trace_power(grid, tr, ts) / ts)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::halfspace::grid::GridSpec;

    fn grid(spec: GridSpec<f64>) -> Arc<HalfSpaceGrid<f64>> {
        Arc::new(HalfSpaceGrid::new(spec).unwrap())
    }

    #[test]
    fn constant_has_zero_energy() {
        let g = grid(GridSpec::cartesian(2, 0.3, 1.0, 8, 1.0, 10));
        let u = Field::constant(g, 2.5);
        assert_eq!(weighted_dirichlet(&u), 0.0);
    }

    #[test]
    fn linear_in_y_matches_closed_form() {
        for (gamma, geom) in [(0.25, 0), (0.75, 0), (0.1, 1), (0.5, 1)] {
            let spec = if geom == 0 {
                GridSpec::cartesian(2, gamma, 2.0, 16, 1.5, 64)
            } else {
                GridSpec::radial(3, gamma, 2.0, 16, 1.5, 64)
            };
            let g = grid(spec);
            let vol = g.boundary_volume();
            let u = Field::from_fn(g, |_, y| y).unwrap();
            let e = 2.0 - 2.0 * gamma;
            let exact = vol * 1.5f64.powf(e) / e;
            let d = weighted_dirichlet(&u);
            assert!((d / exact - 1.0).abs() < 1e-3, "γ={gamma}: {d} vs {exact}");
        }
    }

    #[test]
    fn radial_measure_is_ball_volume() {
        let g = grid(GridSpec::radial(3, 0.5, 2.0, 40, 1.0, 8));
        let exact = 4.0 / 3.0 * std::f64::consts::PI * 8.0;
        assert!((g.boundary_volume() / exact - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stiffness_is_energy_gradient() {
        let g = grid(GridSpec::cartesian(2, 0.4, 1.0, 6, 1.0, 6));
        let u = Field::from_fn(g.clone(), |x, y| {
            (x[0] + 2.0 * x[1]).sin() * (1.0 - y).exp()
        })
        .unwrap();
        let au = stiffness_apply(&g, u.values());
        let uau: f64 = u.values().iter().zip(&au).map(|(a, b)| a * b).sum();
        assert!((uau - weighted_dirichlet(&u)).abs() < 1e-10 * uau);
        let a = g.stiffness();
        let au2 = a.matvec(u.values());
        for (x, y) in au.iter().zip(&au2) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn functional_of_zero_is_zero() {
        let g = grid(GridSpec::cartesian(1, 0.25, 1.0, 8, 1.0, 8));
        let q = vec![3.0; g.boundary_len()];
        assert_eq!(functional_i(&Field::zeros(g), Some(&q)).unwrap(), 0.0);
    }

    #[test]
    fn grading_invariant_enforced() {
        let spec = GridSpec::cartesian(1, 0.25, 1.0, 8, 1.0, 8).with_grading(0.6);
        assert!(HalfSpaceGrid::new(spec).is_err());
        let spec = GridSpec::cartesian(1, 0.25, 1.0, 8, 1.0, 8).with_grading(0.7);
        assert!(HalfSpaceGrid::new(spec).is_ok());
    }
}
