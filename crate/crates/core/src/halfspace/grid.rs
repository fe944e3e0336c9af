//! Truncated half-space grids: a boundary lattice (tensor or radial) times
//! graded layers in `y`.

use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use super::linalg::{Csr, SpdSolver};
use crate::error::{Error, Result};
use crate::params::validate;
use crate::scalar::Real;
use crate::special::sphere_area;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Geometry {
    /// Tensor lattice on the cube `[-L, L]^n`, `N + 1` nodes per axis.
    Cartesian,
    /// Radial nodes `r_i = i L / N` on the ball of radius `L` about the
    /// grid origin; fields are radial about that point.
    Radial,
}

/// Side and top conditions of the discrete extension problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FarField {
    /// Homogeneous conormal condition on the sides and on the top.
    Natural,
    /// Values prescribed on the sides and on the top.
    Dirichlet,
}

/// Grid description; everything else is derived from it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec<T> {
    pub n: usize,
    pub gamma: T,
    pub geometry: Geometry,
    /// Box half-width (radius for radial grids).
    #[serde(rename = "L")]
    pub half_width: T,
    /// Boundary cells per axis.
    #[serde(rename = "N")]
    pub resolution: usize,
    #[serde(rename = "Y")]
    pub height: T,
    /// Number of layers `M`.
    #[serde(rename = "M")]
    pub layers: usize,
    /// Grading exponent `q`; defaults to `2/(2-2γ) + 1/2`.
    #[serde(default)]
    pub q: Option<T>,
    /// Centre of a radial grid; the origin when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<Vec<T>>,
}

impl<T: Real> GridSpec<T> {
    pub fn cartesian(
        n: usize,
        gamma: T,
        half_width: T,
        resolution: usize,
        height: T,
        layers: usize,
    ) -> Self {
        Self {
            n,
            gamma,
            geometry: Geometry::Cartesian,
            half_width,
            resolution,
            height,
            layers,
            q: None,
            origin: None,
        }
    }

    pub fn radial(
        n: usize,
        gamma: T,
        radius: T,
        resolution: usize,
        height: T,
        layers: usize,
    ) -> Self {
        Self {
            n,
            gamma,
            geometry: Geometry::Radial,
            half_width: radius,
            resolution,
            height,
            layers,
            q: None,
            origin: None,
        }
    }

    pub fn with_grading(mut self, q: T) -> Self {
        self.q = Some(q);
        self
    }

    /// Moves the centre of a radial grid.
    pub fn centered_at(mut self, origin: Vec<T>) -> Self {
        self.origin = Some(origin);
        self
    }

    pub fn origin(&self) -> Vec<T> {
        self.origin
            .clone()
            .unwrap_or_else(|| vec![T::zero(); self.n])
    }

    pub fn default_grading(gamma: T) -> T {
        T::lit(2.0) / (T::lit(2.0) - T::lit(2.0) * gamma) + T::lit(0.5)
    }

    pub fn grading(&self) -> T {
        self.q.unwrap_or_else(|| Self::default_grading(self.gamma))
    }

    pub fn spacing(&self) -> T {
        match self.geometry {
            Geometry::Cartesian => {
                T::lit(2.0) * self.half_width / T::from_usize_lossy(self.resolution)
            }
            Geometry::Radial => self.half_width / T::from_usize_lossy(self.resolution),
        }
    }

    pub fn check(&self) -> Result<()> {
        validate(self.n, self.gamma)?;
        let bad = |m: &str| Err(Error::InvalidInput(m.into()));
        if !(self.half_width > T::zero()) || !(self.height > T::zero()) {
            return bad("grid half-width and height must be positive");
        }
        if self.resolution < 2 || self.layers < 2 {
            return bad("grid needs at least 2 boundary cells and 2 layers");
        }
        if self.geometry == Geometry::Radial && self.n < 2 {
            return bad("radial grids need n >= 2");
        }
        if let Some(o) = &self.origin {
            if self.geometry != Geometry::Radial {
                return bad("only radial grids carry an origin");
            }
            if o.len() != self.n || o.iter().any(|v| !v.is_finite()) {
                return bad("radial origin must be a finite point of R^n");
            }
        }
        let q = self.grading();
        if !(q * (T::lit(2.0) - T::lit(2.0) * self.gamma) > T::one()) {
            return bad("grading exponent violates q(2-2γ) > 1");
        }
        let nodes = (self.resolution as f64 + 1.0).powi(if self.geometry == Geometry::Radial {
            1
        } else {
            self.n as i32
        }) * (self.layers as f64 + 1.0);
        if nodes > 5.0e7 {
            return bad("grid too large");
        }
        Ok(())
    }
}

/// Discretization of `∫ y^{1-2γ} |∇u|² dx dy` on `Ω × (0, Y)`.
///
/// Node `(i, k)` (boundary node `i`, layer `k`) has flat index `k·NB + i`.
/// The energy is `Σ_k ν_k Σ_{edges ij} c_ij (u_ik - u_jk)² + Σ_k Σ_i μ_i g_k (u_{i,k+1} - u_ik)²`
/// with `μ_i` the boundary dual-cell measure, `c_ij` the boundary edge
/// coefficient, `ν_k = ∫ y^{1-2γ}` over the dual layer and
/// `g_k = 1 / (t_{k+1} - t_k)` in the flux variable `t = y^{2γ}/(2γ)`.
#[derive(Debug)]
pub struct HalfSpaceGrid<T: Real> {
    spec: GridSpec<T>,
    shape: Vec<usize>,
    coords: Vec<T>,
    coord_dim: usize,
    measure: Vec<T>,
    edges: Vec<(usize, usize, T)>,
    y: Vec<T>,
    g: Vec<T>,
    nu: Vec<T>,
    solvers: [OnceLock<Arc<Constrained<T>>>; 3],
}

/// Linear system on the unknowns left free by a set of prescribed nodes.
#[derive(Debug)]
pub(crate) struct Constrained<T> {
    pub free: Vec<usize>,
    pub solver: SpdSolver<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum SystemKind {
    Extension(FarField),
    /// Energy plus trace `L²` norm, all nodes free.
    Riesz,
}

impl<T: Real> HalfSpaceGrid<T> {
    pub fn new(spec: GridSpec<T>) -> Result<Self> {
        spec.check()?;
        let n = spec.n;
        let nn = T::from_usize_lossy(n);
        let big_n = spec.resolution;
        let h = spec.spacing();
        let half = T::lit(0.5);
        let (shape, coords, coord_dim, measure, edges) = match spec.geometry {
            Geometry::Cartesian => {
                let shape = vec![big_n + 1; n];
                let nb = (big_n + 1).pow(n as u32);
                let mut coords = Vec::with_capacity(nb * n);
                let mut measure = Vec::with_capacity(nb);
                let mut edges = Vec::with_capacity(nb * n);
                let end = |j: usize| if j == 0 || j == big_n { half } else { T::one() };
                let mut multi = vec![0usize; n];
                for i in 0..nb {
                    let mut rem = i;
                    for m in multi.iter_mut() {
                        *m = rem % (big_n + 1);
                        rem /= big_n + 1;
                    }
                    let mut w = h.powi(n as i32);
                    for &j in &multi {
                        coords.push(-spec.half_width + T::from_usize_lossy(j) * h);
                        w = w * end(j);
                    }
                    measure.push(w);
                    let mut stride = 1;
                    for a in 0..n {
                        if multi[a] < big_n {
                            let mut c = h.powi(n as i32 - 2);
                            for (b, &j) in multi.iter().enumerate() {
                                if b != a {
                                    c = c * end(j);
                                }
                            }
                            edges.push((i, i + stride, c));
                        }
                        stride *= big_n + 1;
                    }
                }
                (shape, coords, n, measure, edges)
            }
            Geometry::Radial => {
                let area = sphere_area::<T>(n);
                let r: Vec<T> = (0..=big_n).map(|i| T::from_usize_lossy(i) * h).collect();
                let measure = r
                    .iter()
                    .map(|&ri| {
                        let lo = (ri - half * h).max(T::zero());
                        let hi = (ri + half * h).min(spec.half_width);
                        area * (hi.powi(n as i32) - lo.powi(n as i32)) / nn
                    })
                    .collect();
                let edges = (0..big_n)
                    .map(|i| {
                        let avg = (r[i + 1].powi(n as i32) - r[i].powi(n as i32)) / (nn * h);
                        (i, i + 1, area * avg / h)
                    })
                    .collect();
                (vec![big_n + 1], r, 1, measure, edges)
            }
        };

        let m = spec.layers;
        let q = spec.grading();
        let two_g = T::lit(2.0) * spec.gamma;
        let e = T::lit(2.0) - two_g;
        let y: Vec<T> = (0..=m)
            .map(|k| spec.height * (T::from_usize_lossy(k) / T::from_usize_lossy(m)).powf(q))
            .collect();
        let t: Vec<T> = y.iter().map(|&v| v.powf(two_g) / two_g).collect();
        let g = t.windows(2).map(|w| T::one() / (w[1] - w[0])).collect();
        let nu = (0..=m)
            .map(|k| {
                let lo = if k == 0 {
                    T::zero()
                } else {
                    half * (y[k - 1] + y[k])
                };
                let hi = if k == m {
                    spec.height
                } else {
                    half * (y[k] + y[k + 1])
                };
                (hi.powf(e) - lo.powf(e)) / e
            })
            .collect();
        Ok(Self {
            spec,
            shape,
            coords,
            coord_dim,
            measure,
            edges,
            y,
            g,
            nu,
            solvers: [OnceLock::new(), OnceLock::new(), OnceLock::new()],
        })
    }

    pub fn spec(&self) -> &GridSpec<T> {
        &self.spec
    }

    pub fn n(&self) -> usize {
        self.spec.n
    }

    pub fn gamma(&self) -> T {
        self.spec.gamma
    }

    pub fn geometry(&self) -> Geometry {
        self.spec.geometry
    }

    pub fn spacing(&self) -> T {
        self.spec.spacing()
    }

    /// Nodes per boundary axis (one axis for radial grids).
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn boundary_len(&self) -> usize {
        self.measure.len()
    }

    pub fn layers(&self) -> usize {
        self.spec.layers
    }

    pub fn len(&self) -> usize {
        self.boundary_len() * (self.spec.layers + 1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i: usize, k: usize) -> usize {
        k * self.boundary_len() + i
    }

    /// Lattice coordinates of boundary node `i` (the radius for radial grids).
    pub fn coords(&self, i: usize) -> &[T] {
        &self.coords[i * self.coord_dim..(i + 1) * self.coord_dim]
    }

    /// Boundary node `i` as a point of `R^n`; radial nodes lie on the ray
    /// from the origin along the first axis.
    pub fn point(&self, i: usize) -> Vec<T> {
        match self.spec.geometry {
            Geometry::Cartesian => self.coords(i).to_vec(),
            Geometry::Radial => {
                let mut p = self.spec.origin();
                p[0] = p[0] + self.coords(i)[0];
                p
            }
        }
    }

    /// Squared distance from boundary node `i` to `a`.
    pub fn dist2(&self, i: usize, a: &[T]) -> T {
        match self.spec.geometry {
            Geometry::Cartesian => self
                .coords(i)
                .iter()
                .zip(a)
                .map(|(&x, &c)| (x - c) * (x - c))
                .sum(),
            Geometry::Radial => self
                .point(i)
                .iter()
                .zip(a)
                .map(|(&x, &c)| (x - c) * (x - c))
                .sum(),
        }
    }

    /// Centre of a radial grid (the origin of `R^n` for Cartesian grids).
    pub fn origin(&self) -> Vec<T> {
        self.spec.origin()
    }

    pub fn measure(&self) -> &[T] {
        &self.measure
    }

    /// `(i, j, c_ij)` boundary edges.
    pub fn edges(&self) -> &[(usize, usize, T)] {
        &self.edges
    }

    pub fn y(&self) -> &[T] {
        &self.y
    }

    /// Vertical conductances `g_k`, one per layer gap.
    pub fn vertical_conductance(&self) -> &[T] {
        &self.g
    }

    /// Layer weights `ν_k = ∫ y^{1-2γ}` over the dual layer.
    pub fn layer_weight(&self) -> &[T] {
        &self.nu
    }

    pub fn boundary_volume(&self) -> T {
        self.measure.iter().copied().sum()
    }

    /// Whether boundary node `i` lies on the lateral boundary of the box.
    pub fn is_lateral(&self, i: usize) -> bool {
        let big_n = self.spec.resolution;
        match self.spec.geometry {
            Geometry::Radial => i == big_n,
            Geometry::Cartesian => {
                let mut rem = i;
                for _ in 0..self.spec.n {
                    let j = rem % (big_n + 1);
                    if j == 0 || j == big_n {
                        return true;
                    }
                    rem /= big_n + 1;
                }
                false
            }
        }
    }

    /// Nodes prescribed for the given system: the bottom layer, and for the
    /// Dirichlet far field also the sides and top.
    pub(crate) fn fixed_mask(&self, kind: SystemKind) -> Vec<bool> {
        let nb = self.boundary_len();
        let m = self.spec.layers;
        let mut mask = vec![false; self.len()];
        match kind {
            SystemKind::Riesz => {}
            SystemKind::Extension(ff) => {
                mask[..nb].iter_mut().for_each(|v| *v = true);
                if ff == FarField::Dirichlet {
                    for k in 0..=m {
                        for i in 0..nb {
                            if k == m || self.is_lateral(i) {
                                mask[self.index(i, k)] = true;
                            }
                        }
                    }
                }
            }
        }
        mask
    }

    /// Stiffness matrix `A` with `u·Au` equal to the discrete energy.
    pub fn stiffness(&self) -> Csr<T> {
        self.stiffness_with_bottom(&vec![T::zero(); self.boundary_len()])
    }

    /// `A + diag(bottom)` where `bottom` acts on layer 0.
    pub fn stiffness_with_bottom(&self, bottom: &[T]) -> Csr<T> {
        let nb = self.boundary_len();
        let m = self.spec.layers;
        let mut trips = Vec::with_capacity(self.len() * (2 * self.spec.n + 3));
        let mut push = |a: usize, b: usize, c: T| {
            trips.push((a, a, c));
            trips.push((b, b, c));
            trips.push((a, b, -c));
            trips.push((b, a, -c));
        };
        for k in 0..=m {
            for &(i, j, c) in &self.edges {
                push(self.index(i, k), self.index(j, k), c * self.nu[k]);
            }
        }
        for k in 0..m {
            for i in 0..nb {
                push(
                    self.index(i, k),
                    self.index(i, k + 1),
                    self.measure[i] * self.g[k],
                );
            }
        }
        for (i, &b) in bottom.iter().enumerate() {
            if b != T::zero() {
                trips.push((i, i, b));
            }
        }
        Csr::from_triplets(self.len(), trips)
    }

    /// Band-friendly orderings and vertical lines restricted to `free`.
    pub(crate) fn orderings(&self, free: &[usize]) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
        let mut local = vec![usize::MAX; self.len()];
        for (l, &g) in free.iter().enumerate() {
            local[g] = l;
        }
        let nb = self.boundary_len();
        let m = self.spec.layers;
        let layer_major: Vec<usize> = (0..free.len()).collect();
        let mut column_major = Vec::with_capacity(free.len());
        let mut lines = Vec::with_capacity(nb);
        for i in 0..nb {
            let mut line = Vec::new();
            for k in 0..=m {
                let l = local[self.index(i, k)];
                if l != usize::MAX {
                    column_major.push(l);
                    line.push(l);
                }
            }
            if !line.is_empty() {
                lines.push(line);
            }
        }
        (vec![layer_major, column_major], lines)
    }

    pub(crate) fn system(&self, kind: SystemKind) -> Result<Arc<Constrained<T>>> {
        let slot = match kind {
            SystemKind::Extension(FarField::Natural) => 0,
            SystemKind::Extension(FarField::Dirichlet) => 1,
            SystemKind::Riesz => 2,
        };
        if let Some(s) = self.solvers[slot].get() {
            return Ok(s.clone());
        }
        let built = Arc::new(self.build_system(kind, None)?);
        Ok(self.solvers[slot].get_or_init(|| built).clone())
    }

    /// Builds a constrained system; `bottom` overrides the layer-0 diagonal
    /// shift (the trace `L²` measure for the Riesz system).
    pub(crate) fn build_system(
        &self,
        kind: SystemKind,
        bottom: Option<Vec<T>>,
    ) -> Result<Constrained<T>> {
        let mask = self.fixed_mask(kind);
        let free: Vec<usize> = (0..self.len()).filter(|&i| !mask[i]).collect();
        let bottom = match (kind, bottom) {
            (_, Some(b)) => b,
            (SystemKind::Riesz, None) => self.measure.clone(),
            _ => vec![T::zero(); self.boundary_len()],
        };
        let a = self.stiffness_with_bottom(&bottom).submatrix(&free);
        let (orders, lines) = self.orderings(&free);
        let solver = SpdSolver::new(a, orders, lines)?;
        Ok(Constrained { free, solver })
    }
}
