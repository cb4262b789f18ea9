//! Embedded/chart manifolds: retraction, tangent projection, uniform
//! sampling and equal-area cell grids.
//!
//! Three variants are supported. The 2-torus is a flat chart `[0,1)^2` with
//! wrap-around; the unit sphere `S^n` lives in `R^{n+1}`; `SL(2,R)` is
//! flattened row-major into `R^4` with constraint `det = 1`. SL(2,R) is
//! non-compact and exists only for bracket-level verification; ergodic and
//! occupation runs reject it.

use crate::error::{Error, Result};
use crate::rng::RandomStream;
use arrayvec::ArrayVec;
use serde::{Deserialize, Serialize};
use std::ops::{Index, IndexMut};

/// Hard cap on the ambient dimension (spheres up to S^7).
pub const MAX_AMBIENT_DIM: usize = 8;

/// Constraint tolerance for points and tangent vectors.
pub const CONSTRAINT_TOL: f64 = 1e-9;

/// A small fixed-capacity ambient coordinate vector. All manifolds here
/// embed in dimension at most [`MAX_AMBIENT_DIM`], so arithmetic never
/// allocates.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct AmbientVector(ArrayVec<f64, MAX_AMBIENT_DIM>);

impl AmbientVector {
    pub fn from_slice(xs: &[f64]) -> Self {
        assert!(xs.len() <= MAX_AMBIENT_DIM, "ambient dimension over cap");
        AmbientVector(xs.iter().copied().collect())
    }

    pub fn zeros(n: usize) -> Self {
        assert!(n <= MAX_AMBIENT_DIM);
        AmbientVector((0..n).map(|_| 0.0).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.0.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.0.iter().zip(other.0.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scaled(&self, c: f64) -> Self {
        AmbientVector(self.0.iter().map(|x| c * x).collect())
    }

    pub fn plus(&self, other: &Self) -> Self {
        debug_assert_eq!(self.dim(), other.dim());
        AmbientVector(self.0.iter().zip(other.0.iter()).map(|(a, b)| a + b).collect())
    }

    pub fn minus(&self, other: &Self) -> Self {
        debug_assert_eq!(self.dim(), other.dim());
        AmbientVector(self.0.iter().zip(other.0.iter()).map(|(a, b)| a - b).collect())
    }

    /// `self += a * v`, in place.
    pub fn axpy(&mut self, a: f64, v: &Self) {
        debug_assert_eq!(self.dim(), v.dim());
        for (x, y) in self.0.iter_mut().zip(v.0.iter()) {
            *x += a * y;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.to_vec()
    }
}

impl Index<usize> for AmbientVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for AmbientVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

/// Manifold selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ManifoldId {
    /// Flat chart `[0,1)^2` with wrap-around.
    Torus2,
    /// Unit sphere `S^n` in `R^{n+1}`, `1 <= n <= 7`.
    Sphere(usize),
    /// `SL(2,R)` flattened row-major into `R^4`; non-compact, bracket checks only.
    SpecialLinear2,
}

impl ManifoldId {
    pub fn sphere(n: usize) -> Result<Self> {
        if n < 1 || n + 1 > MAX_AMBIENT_DIM {
            return Err(Error::BadParams(format!(
                "sphere dimension must be in 1..={}, got {n}",
                MAX_AMBIENT_DIM - 1
            )));
        }
        Ok(ManifoldId::Sphere(n))
    }

    pub fn ambient_dim(&self) -> usize {
        match self {
            ManifoldId::Torus2 => 2,
            ManifoldId::Sphere(n) => n + 1,
            ManifoldId::SpecialLinear2 => 4,
        }
    }

    /// Intrinsic dimension.
    pub fn dim(&self) -> usize {
        match self {
            ManifoldId::Torus2 => 2,
            ManifoldId::Sphere(n) => *n,
            ManifoldId::SpecialLinear2 => 3,
        }
    }

    pub fn is_compact(&self) -> bool {
        !matches!(self, ManifoldId::SpecialLinear2)
    }

    pub fn name(&self) -> String {
        match self {
            ManifoldId::Torus2 => "torus2".into(),
            ManifoldId::Sphere(n) => format!("sphere({n})"),
            ManifoldId::SpecialLinear2 => "sl2".into(),
        }
    }

    /// Distance of `x` from the constraint set, in the sense checked by the
    /// `Point` invariant.
    pub fn constraint_residual(&self, x: &AmbientVector) -> f64 {
        match self {
            ManifoldId::Torus2 => {
                let mut r = 0.0f64;
                for &c in x.iter() {
                    if !(0.0..1.0).contains(&c) {
                        r = r.max((c - c.rem_euclid(1.0)).abs());
                    }
                }
                r
            }
            ManifoldId::Sphere(_) => (x.dot(x) - 1.0).abs(),
            ManifoldId::SpecialLinear2 => (det2(x) - 1.0).abs(),
        }
    }

    /// Retraction onto the constraint set: normalization for the sphere,
    /// coordinate-wise mod 1 for the torus, determinant scaling for SL(2,R).
    pub fn retract(&self, x: &AmbientVector) -> Result<Point> {
        if x.dim() != self.ambient_dim() {
            return Err(Error::InvalidInput(format!(
                "expected ambient dim {}, got {}",
                self.ambient_dim(),
                x.dim()
            )));
        }
        if !x.is_finite() {
            return Err(Error::DegenerateInput("non-finite ambient vector".into()));
        }
        let coords = match self {
            ManifoldId::Torus2 => {
                AmbientVector(x.iter().map(|c| c.rem_euclid(1.0)).collect())
            }
            ManifoldId::Sphere(_) => {
                let n = x.norm();
                if n <= 1e-12 {
                    return Err(Error::DegenerateInput(
                        "near-zero ambient vector cannot be normalized onto the sphere".into(),
                    ));
                }
                x.scaled(1.0 / n)
            }
            ManifoldId::SpecialLinear2 => {
                let d = det2(x);
                if d <= 0.0 {
                    return Err(Error::DegenerateInput(format!(
                        "determinant {d} not positive; cannot rescale onto SL(2,R)"
                    )));
                }
                x.scaled(1.0 / d.sqrt())
            }
        };
        Ok(Point {
            manifold: *self,
            coords,
        })
    }

    /// Orthogonal projection of an ambient vector onto the tangent space at `p`.
    pub fn tangent_project(&self, p: &Point, v: &AmbientVector) -> TangentVector {
        debug_assert_eq!(p.manifold, *self);
        let coords = match self {
            // Flat chart: the tangent space is the whole plane.
            ManifoldId::Torus2 => v.clone(),
            ManifoldId::Sphere(_) => {
                let mut w = v.clone();
                w.axpy(-v.dot(&p.coords), &p.coords);
                w
            }
            ManifoldId::SpecialLinear2 => {
                // Normal direction of {det = 1} at g is grad det = cofactor(g).
                let n = sl2_normal(&p.coords);
                let nn = n.dot(&n);
                let mut w = v.clone();
                w.axpy(-v.dot(&n) / nn, &n);
                w
            }
        };
        TangentVector {
            base: p.clone(),
            coords,
        }
    }

    /// Size of the normal component of `v` at `p` (0 means tangent).
    pub fn normal_residual(&self, p: &Point, v: &AmbientVector) -> f64 {
        match self {
            ManifoldId::Torus2 => 0.0,
            ManifoldId::Sphere(_) => v.dot(&p.coords).abs(),
            ManifoldId::SpecialLinear2 => {
                let n = sl2_normal(&p.coords);
                v.dot(&n).abs() / n.norm()
            }
        }
    }

    /// Uniform sample w.r.t. the Riemannian volume. Errors on SL(2,R); use
    /// [`ManifoldId::random_group_point`] there.
    pub fn random_point(&self, rng: &mut RandomStream) -> Result<Point> {
        match self {
            ManifoldId::Torus2 => {
                let x = rng.uniform();
                let y = rng.uniform();
                Ok(Point {
                    manifold: *self,
                    coords: AmbientVector::from_slice(&[x, y]),
                })
            }
            ManifoldId::Sphere(n) => {
                // Normalized Gaussian vector; rejection only guards the
                // astronomically unlikely near-zero draw.
                loop {
                    let mut v = AmbientVector::zeros(n + 1);
                    for i in 0..n + 1 {
                        v[i] = rng.gaussian();
                    }
                    if v.norm() > 1e-6 {
                        return self.retract(&v);
                    }
                }
            }
            ManifoldId::SpecialLinear2 => Err(Error::NonCompactManifold(
                "sl2 has no uniform probability measure; use random_group_point".into(),
            )),
        }
    }

    /// Bounded-entry sampler near the identity of SL(2,R): `retract(I + E)`
    /// with `E` uniform entrywise in `[-0.4, 0.4]`, rejecting `det <= 0.1`.
    pub fn random_group_point(&self, rng: &mut RandomStream) -> Result<Point> {
        if *self != ManifoldId::SpecialLinear2 {
            return Err(Error::InvalidInput(
                "random_group_point applies to sl2 only".into(),
            ));
        }
        loop {
            let g = AmbientVector::from_slice(&[
                1.0 + rng.uniform_range(-0.4, 0.4),
                rng.uniform_range(-0.4, 0.4),
                rng.uniform_range(-0.4, 0.4),
                1.0 + rng.uniform_range(-0.4, 0.4),
            ]);
            if det2(&g) > 0.1 {
                return self.retract(&g);
            }
        }
    }
}

/// Determinant of a row-major flattened 2x2 matrix.
pub fn det2(g: &AmbientVector) -> f64 {
    g[0] * g[3] - g[1] * g[2]
}

/// Gradient of det at `g`: the cofactor matrix `(d, -c, -b, a)`.
fn sl2_normal(g: &AmbientVector) -> AmbientVector {
    AmbientVector::from_slice(&[g[3], -g[2], -g[1], g[0]])
}

/// Row-major 2x2 matrix product, flattened.
pub fn matmul2(a: &AmbientVector, b: &AmbientVector) -> AmbientVector {
    AmbientVector::from_slice(&[
        a[0] * b[0] + a[1] * b[2],
        a[0] * b[1] + a[1] * b[3],
        a[2] * b[0] + a[3] * b[2],
        a[2] * b[1] + a[3] * b[3],
    ])
}

/// A point on a manifold; the constructor enforces the constraint residual.
#[derive(Clone, Debug, PartialEq)]
pub struct Point {
    pub manifold: ManifoldId,
    coords: AmbientVector,
}

impl Point {
    pub fn new(manifold: ManifoldId, coords: AmbientVector) -> Result<Self> {
        if coords.dim() != manifold.ambient_dim() {
            return Err(Error::InvalidInput(format!(
                "expected ambient dim {}, got {}",
                manifold.ambient_dim(),
                coords.dim()
            )));
        }
        if !coords.is_finite() {
            return Err(Error::DegenerateInput("non-finite coordinates".into()));
        }
        let r = manifold.constraint_residual(&coords);
        if r > CONSTRAINT_TOL {
            return Err(Error::DegenerateInput(format!(
                "constraint residual {r:.3e} exceeds {CONSTRAINT_TOL:.0e} on {}",
                manifold.name()
            )));
        }
        Ok(Point { manifold, coords })
    }

    pub fn coords(&self) -> &AmbientVector {
        &self.coords
    }
}

/// A tangent vector anchored at a base point.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentVector {
    pub base: Point,
    pub coords: AmbientVector,
}

impl TangentVector {
    pub fn zero(base: &Point) -> Self {
        TangentVector {
            base: base.clone(),
            coords: AmbientVector::zeros(base.manifold.ambient_dim()),
        }
    }
}

/// Cell index into a [`CellGrid`].
pub type CellId = usize;

/// Equal-area cell grid over a compact manifold. Torus cells are uniform
/// rectangles; sphere cells are equal-area rectangles in `(z, phi)` via the
/// Archimedes projection (S^2 only).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellGrid {
    pub manifold: ManifoldId,
    pub resolution: (usize, usize),
    pub cell_count: usize,
}

impl CellGrid {
    pub fn new(manifold: ManifoldId, resolution: (usize, usize)) -> Result<Self> {
        if resolution.0 == 0 || resolution.1 == 0 {
            return Err(Error::BadParams("grid resolution must be positive".into()));
        }
        match manifold {
            ManifoldId::Torus2 => {}
            ManifoldId::Sphere(2) => {}
            ManifoldId::Sphere(n) => {
                return Err(Error::BadParams(format!(
                    "equal-area grids are implemented for S^2 only, got S^{n}"
                )))
            }
            ManifoldId::SpecialLinear2 => {
                return Err(Error::NonCompactManifold(
                    "cell grids require a compact manifold".into(),
                ))
            }
        }
        Ok(CellGrid {
            manifold,
            resolution,
            cell_count: resolution.0 * resolution.1,
        })
    }

    /// Map a point to its cell. Torus: `floor(coord * res)` after wrap.
    /// Sphere: bands uniform in `z = x3`, sectors uniform in `phi`.
    pub fn cell_index(&self, p: &Point) -> Result<CellId> {
        if p.manifold != self.manifold {
            return Err(Error::ManifoldMismatch(format!(
                "point on {} binned on a {} grid",
                p.manifold.name(),
                self.manifold.name()
            )));
        }
        let (r0, r1) = self.resolution;
        match self.manifold {
            ManifoldId::Torus2 => {
                let ix = cell_coord(p.coords()[0], r0);
                let iy = cell_coord(p.coords()[1], r1);
                Ok(ix * r1 + iy)
            }
            ManifoldId::Sphere(_) => {
                let c = p.coords();
                let z = c[2].clamp(-1.0, 1.0);
                let iz = cell_coord((z + 1.0) / 2.0, r0);
                let phi = c[1].atan2(c[0]); // in [-pi, pi]
                let u = (phi + std::f64::consts::PI) / (2.0 * std::f64::consts::PI);
                let iphi = cell_coord(u, r1);
                Ok(iz * r1 + iphi)
            }
            ManifoldId::SpecialLinear2 => unreachable!("rejected at construction"),
        }
    }

    /// Compose a torus cell index from per-axis cell coordinates.
    pub fn torus_cell(&self, ix: usize, iy: usize) -> CellId {
        ix * self.resolution.1 + iy
    }

    /// Per-axis cell coordinates of a torus cell index.
    pub fn torus_cell_coords(&self, id: CellId) -> (usize, usize) {
        (id / self.resolution.1, id % self.resolution.1)
    }

    /// Representative center point of a cell.
    pub fn cell_center(&self, id: CellId) -> Result<Point> {
        let (r0, r1) = self.resolution;
        let i0 = id / r1;
        let i1 = id % r1;
        match self.manifold {
            ManifoldId::Torus2 => Point::new(
                self.manifold,
                AmbientVector::from_slice(&[
                    (i0 as f64 + 0.5) / r0 as f64,
                    (i1 as f64 + 0.5) / r1 as f64,
                ]),
            ),
            ManifoldId::Sphere(_) => {
                let z = -1.0 + 2.0 * (i0 as f64 + 0.5) / r0 as f64;
                let phi = -std::f64::consts::PI
                    + 2.0 * std::f64::consts::PI * (i1 as f64 + 0.5) / r1 as f64;
                let r = (1.0 - z * z).max(0.0).sqrt();
                Point::new(
                    self.manifold,
                    AmbientVector::from_slice(&[r * phi.cos(), r * phi.sin(), z]),
                )
            }
            ManifoldId::SpecialLinear2 => unreachable!("rejected at construction"),
        }
    }
}

fn cell_coord(u: f64, res: usize) -> usize {
    // u is in [0,1] up to the constraint tolerance; the upper edge belongs
    // to the last cell.
    ((u * res as f64).floor() as isize).clamp(0, res as isize - 1) as usize
}
