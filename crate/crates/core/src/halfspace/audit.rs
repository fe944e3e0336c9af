//! Local energy audit: compares `∫_{B+_r} y^{1-2γ}|∇v|²` with
//! `r^{-2} ∫_{B+_{2r}} y^{1-2γ} v² + ∫_{D_{2r}} v²` around a boundary point.

use serde::{Deserialize, Serialize};

use super::energy::grid_exponent;
use super::field::Field;
use super::grid::{Geometry, HalfSpaceGrid};
use crate::error::{Error, Result};
use crate::params::FracParams;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AuditSettings<T> {
    /// Admissible local `2*`-mass as a fraction of one bubble's mass.
    pub eps_fraction: T,
    /// Ceiling the fitted constant is compared against.
    pub c_max: T,
}

impl<T: Real> Default for AuditSettings<T> {
    fn default() -> Self {
        Self {
            eps_fraction: T::lit(0.25),
            c_max: T::lit(1e3),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuditStatus {
    Ok,
    MassTooLarge,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AuditRecord<T> {
    pub center: Vec<T>,
    pub radius: T,
    /// `∫_{D_{2r}} |v|^{2*}`.
    pub local_mass: T,
    pub threshold: T,
    pub lhs: T,
    /// `r^{-2} ∫_{B+_{2r}} y^{1-2γ} v²`.
    pub rhs_volume: T,
    /// `∫_{D_{2r}} v²`.
    pub rhs_boundary: T,
    /// Smallest `C` with `lhs ≤ C (rhs_volume + rhs_boundary)`.
    pub fitted_constant: T,
    pub status: AuditStatus,
}

impl<T: Real> AuditRecord<T> {
    pub fn within_ceiling(&self, c_max: T) -> bool {
        self.status == AuditStatus::Ok && self.fitted_constant <= c_max
    }
}

pub fn eps_regularity_audit<T: Real>(
    v: &Field<T>,
    center: &[T],
    r: T,
    p: &FracParams<T>,
    settings: &AuditSettings<T>,
) -> Result<AuditRecord<T>> {
    let grid: &HalfSpaceGrid<T> = v.grid();
    if center.len() != grid.n() {
        return Err(Error::DimensionMismatch {
            expected: grid.n(),
            got: center.len(),
        });
    }
    if grid.geometry() == Geometry::Radial && grid.origin().as_slice() != center {
        return Err(Error::InvalidInput(
            "radial grids only audit windows at their origin".into(),
        ));
    }
    if !(r > T::zero()) {
        return Err(Error::InvalidInput("audit radius must be positive".into()));
    }
    let nb = grid.boundary_len();
    let m = grid.layers();
    let two = T::lit(2.0);
    let r2 = r * r;
    let big2 = two * two * r2;
    let ys = grid.y();
    let mu = grid.measure();
    let ts = grid_exponent(grid);
    let d2: Vec<T> = (0..nb).map(|i| grid.dist2(i, center)).collect();
    let vals = v.values();

    let mut local_mass = T::zero();
    let mut rhs_boundary = T::zero();
    for i in 0..nb {
        if d2[i] <= big2 {
            let t = vals[i];
            local_mass = local_mass + mu[i] * t.abs().powf(ts);
            rhs_boundary = rhs_boundary + mu[i] * t * t;
        }
    }
    let threshold = settings.eps_fraction * p.bubble_mass();

    let mut lhs = T::zero();
    let mut vol = T::zero();
    for k in 0..=m {
        let y = ys[k];
        let row = &vals[k * nb..(k + 1) * nb];
        for i in 0..nb {
            if d2[i] + y * y <= big2 {
                vol = vol + mu[i] * grid.layer_weight()[k] * row[i] * row[i];
            }
        }
        let nu = grid.layer_weight()[k];
        for &(i, j, c) in grid.edges() {
            let mid = match grid.geometry() {
                Geometry::Radial => {
                    let rm = (grid.coords(i)[0] + grid.coords(j)[0]) / two;
                    rm * rm
                }
                Geometry::Cartesian => grid
                    .coords(i)
                    .iter()
                    .zip(grid.coords(j))
                    .zip(center)
                    .map(|((&a, &b), &cc)| {
                        let x = (a + b) / two - cc;
                        x * x
                    })
                    .sum(),
            };
            if mid + y * y <= r2 {
                let d = row[i] - row[j];
                lhs = lhs + nu * c * d * d;
            }
        }
        if k < m {
            let ym = (y + ys[k + 1]) / two;
            let g = grid.vertical_conductance()[k];
            let up = &vals[(k + 1) * nb..(k + 2) * nb];
            for i in 0..nb {
                if d2[i] + ym * ym <= r2 {
                    let d = up[i] - row[i];
                    lhs = lhs + mu[i] * g * d * d;
                }
            }
        }
    }
    let rhs_volume = vol / r2;
    let denom = rhs_volume + rhs_boundary;
    let fitted_constant = if lhs == T::zero() {
        T::zero()
    } else if denom > T::zero() {
        lhs / denom
    } else {
        T::infinity()
    };
    let status = if local_mass <= threshold {
        AuditStatus::Ok
    } else {
        AuditStatus::MassTooLarge
    };
    Ok(AuditRecord {
        center: center.to_vec(),
        radius: r,
        local_mass,
        threshold,
        lhs,
        rhs_volume,
        rhs_boundary,
        fitted_constant,
        status,
    })
}
