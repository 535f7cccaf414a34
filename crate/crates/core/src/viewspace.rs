//! Normalized view parameterization space.
//!
//! A grid of `rows x cols` discrete views is addressed by 1-based
//! [`GridIndex`]es. Continuous coordinates live in `[1/rows, 1] x [1/cols, 1]`
//! so that cell `k` sits at `k / n`. Learning treats the space as a bounded
//! box; [`Metric::Toroidal`] is available for experiments that want the
//! wrap-around of the underlying view circle.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_GRID: usize = 12;

/// Continuous viewpoint coordinate (row, column).
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Location<S> {
    pub r: S,
    pub c: S,
}

impl<S: Scalar> Location<S> {
    pub fn new(r: S, c: S) -> Self {
        Self { r, c }
    }

    pub fn to_array(self) -> [S; 2] {
        [self.r, self.c]
    }

    pub fn from_slice(xs: &[S]) -> Self {
        Self { r: xs[0], c: xs[1] }
    }
}

/// 1-based discrete cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridIndex {
    pub row: usize,
    pub col: usize,
}

impl GridIndex {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Metric {
    #[default]
    Euclidean,
    Toroidal,
}

/// Grid geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewSpace {
    pub rows: usize,
    pub cols: usize,
}

impl Default for ViewSpace {
    fn default() -> Self {
        Self {
            rows: DEFAULT_GRID,
            cols: DEFAULT_GRID,
        }
    }
}

impl ViewSpace {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidConfig(format!("grid {rows}x{cols} is empty")));
        }
        Ok(Self { rows, cols })
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    /// Lower bounds `(1/rows, 1/cols)`; the upper bound is 1 on both axes.
    pub fn lower<S: Scalar>(&self) -> [S; 2] {
        [
            S::one() / S::lit(self.rows as f64),
            S::one() / S::lit(self.cols as f64),
        ]
    }

    /// Spacing between adjacent cells along the finer axis.
    pub fn cell_spacing(&self) -> f64 {
        1.0 / self.rows.max(self.cols) as f64
    }

    /// Nearest cell, ties rounded up, clamped into the grid.
    pub fn to_grid<S: Scalar>(&self, l: Location<S>) -> GridIndex {
        let snap = |x: S, n: usize| {
            let k = (x * S::lit(n as f64) + S::lit(0.5)).floor();
            let k = k.to_f64().unwrap_or(1.0);
            (k.max(1.0) as usize).clamp(1, n)
        };
        GridIndex {
            row: snap(l.r, self.rows),
            col: snap(l.c, self.cols),
        }
    }

    /// Continuous coordinate at a cell's center.
    pub fn center<S: Scalar>(&self, g: GridIndex) -> Location<S> {
        Location {
            r: S::lit(g.row as f64) / S::lit(self.rows as f64),
            c: S::lit(g.col as f64) / S::lit(self.cols as f64),
        }
    }

    pub fn clamp<S: Scalar>(&self, l: Location<S>) -> Location<S> {
        let [lr, lc] = self.lower::<S>();
        Location {
            r: l.r.max(lr).min(S::one()),
            c: l.c.max(lc).min(S::one()),
        }
    }

    pub fn contains<S: Scalar>(&self, l: Location<S>) -> bool {
        let [lr, lc] = self.lower::<S>();
        l.r >= lr && l.r <= S::one() && l.c >= lc && l.c <= S::one()
    }

    /// Checked constructor for a location inside the space.
    pub fn location<S: Scalar>(&self, r: S, c: S) -> Result<Location<S>> {
        let l = Location::new(r, c);
        if self.contains(l) {
            Ok(l)
        } else {
            Err(Error::InvalidConfig(format!(
                "location ({r}, {c}) outside view space {}x{}",
                self.rows, self.cols
            )))
        }
    }

    pub fn is_border(&self, g: GridIndex) -> bool {
        g.row == 1 || g.row == self.rows || g.col == 1 || g.col == self.cols
    }

    /// All cells in row-major order.
    pub fn all_cells(&self) -> impl Iterator<Item = GridIndex> + '_ {
        (1..=self.rows).flat_map(move |r| (1..=self.cols).map(move |c| GridIndex::new(r, c)))
    }

    /// Row-major offset of a cell, `(row-1)*cols + (col-1)`.
    pub fn offset(&self, g: GridIndex) -> usize {
        (g.row - 1) * self.cols + (g.col - 1)
    }

    /// Gaussian draw around `u` with explicit standard-normal noise `z`.
    ///
    /// Returns `(raw, clamped)`.
    pub fn perturb<S: Scalar>(&self, u: Location<S>, delta: S, z: [S; 2]) -> (Location<S>, Location<S>) {
        let raw = Location::new(u.r + delta * z[0], u.c + delta * z[1]);
        (raw, self.clamp(raw))
    }

    /// Independent `N(u, delta^2)` draw per coordinate, clamped into the space.
    pub fn sample_location<S: Scalar, R: Rng + ?Sized>(
        &self,
        u: Location<S>,
        delta: S,
        rng: &mut R,
    ) -> Location<S> {
        self.sample_location_raw(u, delta, rng).1
    }

    /// Like [`ViewSpace::sample_location`] but also returns the unclamped draw.
    pub fn sample_location_raw<S: Scalar, R: Rng + ?Sized>(
        &self,
        u: Location<S>,
        delta: S,
        rng: &mut R,
    ) -> (Location<S>, Location<S>) {
        let z0: f64 = rng.sample(StandardNormal);
        let z1: f64 = rng.sample(StandardNormal);
        self.perturb(u, delta, [S::lit(z0), S::lit(z1)])
    }

    /// Is `x` on the lower or upper boundary of axis `axis`.
    pub fn boundary_side<S: Scalar>(&self, axis: usize, x: S) -> Boundary {
        let lo = self.lower::<S>()[axis];
        if x <= lo {
            Boundary::Lower
        } else if x >= S::one() {
            Boundary::Upper
        } else {
            Boundary::Interior
        }
    }

    /// Sign rule for one coordinate (see [`boundary_sign`]).
    pub fn boundary_sign<S: Scalar>(&self, axis: usize, u: S, l: S, correct: bool) -> S {
        boundary_sign(u, l, self.boundary_side(axis, l), correct)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Boundary {
    Lower,
    Interior,
    Upper,
}

/// Multiplier applied to the policy gradient of one coordinate.
///
/// `+1` when the episode was classified correctly or `l` is interior;
/// `-1` when misclassified with `l` clamped on a boundary and the mean `u`
/// lying beyond it, so that `u` is pulled back into range instead of pushed
/// further out.
pub fn boundary_sign<S: Scalar>(u: S, l: S, side: Boundary, correct: bool) -> S {
    if correct {
        return S::one();
    }
    match side {
        Boundary::Lower if u < l => -S::one(),
        Boundary::Upper if u > l => -S::one(),
        _ => S::one(),
    }
}

/// `d/du ln N(l; u, delta^2) = (l - u) / delta^2`
pub fn gauss_logpdf_grad<S: Scalar>(u: S, l: S, delta: S) -> S {
    (l - u) / (delta * delta)
}

pub fn pair_distance<S: Scalar>(a: Location<S>, b: Location<S>) -> S {
    let (dr, dc) = (a.r - b.r, a.c - b.c);
    (dr * dr + dc * dc).sqrt()
}

/// Distance on the unit torus (both axes have period 1).
pub fn toroidal_distance<S: Scalar>(a: Location<S>, b: Location<S>) -> S {
    let wrap = |d: S| {
        let d = d.abs() % S::one();
        d.min(S::one() - d)
    };
    let (dr, dc) = (wrap(a.r - b.r), wrap(a.c - b.c));
    (dr * dr + dc * dc).sqrt()
}

impl Metric {
    pub fn distance<S: Scalar>(self, a: Location<S>, b: Location<S>) -> S {
        match self {
            Metric::Euclidean => pair_distance(a, b),
            Metric::Toroidal => toroidal_distance(a, b),
        }
    }

    /// Gradient of the distance with respect to `a` (zero when coincident).
    pub fn distance_grad<S: Scalar>(self, a: Location<S>, b: Location<S>) -> [S; 2] {
        let d = self.distance(a, b);
        if d <= S::zero() {
            return [S::zero(), S::zero()];
        }
        let delta = |x: S, y: S| match self {
            Metric::Euclidean => x - y,
            Metric::Toroidal => {
                let mut v = (x - y) % S::one();
                let half = S::lit(0.5);
                if v > half {
                    v -= S::one();
                } else if v < -half {
                    v += S::one();
                }
                v
            }
        };
        [delta(a.r, b.r) / d, delta(a.c, b.c) / d]
    }
}
