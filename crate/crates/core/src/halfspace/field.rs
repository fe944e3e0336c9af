use std::sync::Arc;

use rayon::prelude::*;

use super::grid::HalfSpaceGrid;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Samples of a function on every node of a [`HalfSpaceGrid`].
#[derive(Clone, Debug)]
pub struct Field<T: Real> {
    grid: Arc<HalfSpaceGrid<T>>,
    values: Vec<T>,
}

impl<T: Real> Field<T> {
    pub fn new(grid: Arc<HalfSpaceGrid<T>>, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite field value at node {k}"
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Arc<HalfSpaceGrid<T>>) -> Self {
        let values = vec![T::zero(); grid.len()];
        Self { grid, values }
    }

    pub fn constant(grid: Arc<HalfSpaceGrid<T>>, c: T) -> Self {
        let values = vec![c; grid.len()];
        Self { grid, values }
    }

    /// Samples `f(x, y)` with `x` the boundary point of the node.
    pub fn from_fn<F>(grid: Arc<HalfSpaceGrid<T>>, f: F) -> Result<Self>
    where
        F: Fn(&[T], T) -> T + Sync,
    {
        Self::try_from_fn(grid, |x, y| Ok(f(x, y)))
    }

    pub fn try_from_fn<F>(grid: Arc<HalfSpaceGrid<T>>, f: F) -> Result<Self>
    where
        F: Fn(&[T], T) -> Result<T> + Sync,
    {
        let nb = grid.boundary_len();
        let points: Vec<Vec<T>> = (0..nb).map(|i| grid.point(i)).collect();
        let values = (0..grid.len())
            .into_par_iter()
            .map(|idx| f(&points[idx % nb], grid.y()[idx / nb]))
            .collect::<Result<Vec<T>>>()?;
        Self::new(grid, values)
    }

    /// Field that equals `trace` on layer 0 and vanishes elsewhere.
    pub fn from_trace(grid: Arc<HalfSpaceGrid<T>>, trace: &[T]) -> Result<Self> {
        if trace.len() != grid.boundary_len() {
            return Err(Error::DimensionMismatch {
                expected: grid.boundary_len(),
                got: trace.len(),
            });
        }
        let mut values = vec![T::zero(); grid.len()];
        values[..trace.len()].copy_from_slice(trace);
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Arc<HalfSpaceGrid<T>> {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    /// The `y = 0` slice.
    pub fn trace(&self) -> &[T] {
        self.layer(0)
    }

    pub fn layer(&self, k: usize) -> &[T] {
        let nb = self.grid.boundary_len();
        &self.values[k * nb..(k + 1) * nb]
    }

    pub fn at(&self, i: usize, k: usize) -> T {
        self.values[self.grid.index(i, k)]
    }

    fn same_grid(&self, other: &Self) -> Result<()> {
        if Arc::ptr_eq(&self.grid, &other.grid) || self.grid.spec() == other.grid.spec() {
            Ok(())
        } else {
            Err(Error::InvalidInput("fields live on different grids".into()))
        }
    }

    /// `a·self + b·other`.
    pub fn combine(&self, a: T, other: &Self, b: T) -> Result<Self> {
        self.same_grid(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&u, &v)| a * u + b * v)
            .collect();
        Self::new(self.grid.clone(), values)
    }

    pub fn scaled(&self, a: T) -> Self {
        let values = self.values.iter().map(|&u| a * u).collect();
        Self {
            grid: self.grid.clone(),
            values,
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.values
            .iter()
            .zip(&other.values)
            .fold(T::zero(), |m, (&u, &v)| m.max((u - v).abs()))
    }
}
