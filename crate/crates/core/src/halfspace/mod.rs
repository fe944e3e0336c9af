//! Weighted Sobolev machinery on a truncated half-space `Ω × (0, Y)`.

pub mod audit;
pub mod energy;
pub mod field;
pub mod grid;
pub mod linalg;
pub mod solve;

pub use audit::{eps_regularity_audit, AuditRecord, AuditSettings, AuditStatus};
pub use energy::{
    functional_i, stiffness_apply, trace_l2, trace_power, weighted_dirichlet, EnergyReport,
};
pub use field::Field;
pub use grid::{FarField, Geometry, GridSpec, HalfSpaceGrid};
pub use solve::{
    critical_point, extend_with, functional_gradient, harmonic_extension, ps_residual, riesz_norm,
    space_norm_sq, CriticalPoint, DescentSettings, PsResidual, SOLVER_TOLERANCE,
};

use crate::error::Result;
use crate::scalar::Real;

/// All energy pieces of `u` under the potential `q` (`None` for `Q ≡ 0`).
pub fn energy_report<T: Real>(u: &Field<T>, q: Option<&[T]>) -> Result<EnergyReport<T>> {
    let grid = u.grid();
    let ts = energy::grid_exponent(grid);
    Ok(EnergyReport {
        dirichlet: weighted_dirichlet(u),
        trace_l2: trace_l2(grid, u.trace()),
        trace_mass_2star: trace_power(grid, u.trace(), ts),
        functional_value: functional_i(u, q)?,
        residual_dual: ps_residual(u, q)?.riesz,
    })
}
