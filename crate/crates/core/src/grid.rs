//! Discretization of the risk-level dimensions and value interpolation over it.
//!
//! Risk levels move multiplicatively (`x → x/ξ`, `y → y·ξ`), so nodes are spaced
//! geometrically and interpolation works in `log x` / `log y`. From `(x₀, y₀)`
//! the reachable levels satisfy `x·y = x₀·y₀ =: c` and `x ∈ [c, 1]`, which is
//! what [`GridMode::Manifold1D`] stores. [`GridMode::Full2D`] keeps an
//! independent geometric axis on `[c, 1]` per dimension.

use serde::{Deserialize, Serialize};

use crate::config::{GridMode, Interpolation};
use crate::error::{Error, Result};
use crate::risk::RiskLevels;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskGrid {
    mode: GridMode,
    /// Ascending `x` nodes.
    xs: Vec<f64>,
    /// Full2D: ascending `y` axis. Manifold1D: `y` paired with each `x` node.
    ys: Vec<f64>,
    manifold_constant: f64,
    #[serde(skip)]
    log_xs: Vec<f64>,
    #[serde(skip)]
    log_ys: Vec<f64>,
}

/// Interpolation stencil: up to four `(node, weight)` pairs.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Stencil {
    pub nodes: [usize; 4],
    pub weights: [f64; 4],
    pub len: usize,
}

impl Stencil {
    fn single(node: usize) -> Self {
        Self {
            nodes: [node, 0, 0, 0],
            weights: [1.0, 0.0, 0.0, 0.0],
            len: 1,
        }
    }

    #[inline]
    pub fn apply(&self, values: &[f64]) -> f64 {
        let mut acc = 0.0;
        for k in 0..self.len {
            acc += self.weights[k] * values[self.nodes[k]];
        }
        acc
    }
}

fn geometric(lo: f64, n: usize) -> Vec<f64> {
    // n ≥ 2 nodes from lo to 1, equally spaced in log.
    let llo = lo.ln();
    let mut pts: Vec<f64> = (0..n)
        .map(|j| (llo * (1.0 - j as f64 / (n - 1) as f64)).exp())
        .collect();
    pts[0] = lo;
    pts[n - 1] = 1.0;
    pts
}

/// Places `target` on an ascending axis: replaces the nearest interior node, or
/// inserts it when the nearest node is an endpoint. Returns the node index.
fn snap_axis(axis: &mut Vec<f64>, target: f64) -> usize {
    let lt = target.ln();
    let (nearest, dist) = axis
        .iter()
        .enumerate()
        .map(|(i, &v)| (i, (v.ln() - lt).abs()))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("axis is nonempty");
    if dist <= 1e-12 {
        axis[nearest] = target;
        return nearest;
    }
    if nearest > 0 && nearest + 1 < axis.len() {
        axis[nearest] = target;
        return nearest;
    }
    let pos = axis.partition_point(|&v| v < target);
    axis.insert(pos, target);
    pos
}

impl RiskGrid {
    fn from_parts(mode: GridMode, xs: Vec<f64>, ys: Vec<f64>, c: f64) -> Self {
        let log_xs = xs.iter().map(|v| v.ln()).collect();
        let log_ys = ys.iter().map(|v| v.ln()).collect();
        Self {
            mode,
            xs,
            ys,
            manifold_constant: c,
            log_xs,
            log_ys,
        }
    }

    /// Reassembles a grid from stored axes, checking the grid invariants.
    pub fn from_axes(mode: GridMode, xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        let bad = |m: &str| Err(Error::Format(format!("risk grid: {m}")));
        if xs.is_empty() || ys.is_empty() {
            return bad("empty axis");
        }
        let in_range = |v: &f64| *v > 0.0 && *v <= 1.0 && v.is_finite();
        if !xs.iter().all(in_range) || !ys.iter().all(in_range) {
            return bad("levels outside (0,1]");
        }
        if !xs.windows(2).all(|w| w[0] < w[1]) {
            return bad("x axis not strictly increasing");
        }
        let c = match mode {
            GridMode::Manifold1D => {
                if xs.len() != ys.len() {
                    return bad("manifold x/y length mismatch");
                }
                let c = xs[0] * ys[0];
                if xs.iter().zip(&ys).any(|(x, y)| (x * y - c).abs() > 1e-12) {
                    return bad("manifold nodes do not share one x·y product");
                }
                c
            }
            GridMode::Full2D => {
                if !ys.windows(2).all(|w| w[0] < w[1]) {
                    return bad("y axis not strictly increasing");
                }
                xs[0] * ys[ys.len() - 1]
            }
        };
        Ok(Self::from_parts(mode, xs, ys, c))
    }

    pub fn mode(&self) -> GridMode {
        self.mode
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn manifold_constant(&self) -> f64 {
        self.manifold_constant
    }

    pub fn len(&self) -> usize {
        match self.mode {
            GridMode::Manifold1D => self.xs.len(),
            GridMode::Full2D => self.xs.len() * self.ys.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn node(&self, idx: usize) -> RiskLevels {
        match self.mode {
            GridMode::Manifold1D => RiskLevels {
                x: self.xs[idx],
                y: self.ys[idx],
            },
            GridMode::Full2D => {
                let ny = self.ys.len();
                RiskLevels {
                    x: self.xs[idx / ny],
                    y: self.ys[idx % ny],
                }
            }
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = RiskLevels> + '_ {
        (0..self.len()).map(|i| self.node(i))
    }

    /// Returns a copy of the grid that contains `levels` as an exact node.
    pub fn snapped(&self, levels: RiskLevels) -> RiskGrid {
        let mut xs = self.xs.clone();
        let mut ys = self.ys.clone();
        match self.mode {
            GridMode::Manifold1D => {
                let before = xs.len();
                let at = snap_axis(&mut xs, levels.x);
                if xs.len() > before {
                    ys.insert(at, levels.y);
                } else {
                    ys[at] = levels.y;
                }
            }
            GridMode::Full2D => {
                snap_axis(&mut xs, levels.x);
                snap_axis(&mut ys, levels.y);
            }
        }
        Self::from_parts(self.mode, xs, ys, self.manifold_constant)
    }

    /// Index of the node with exactly these levels, if any.
    pub fn find_node(&self, levels: RiskLevels) -> Option<usize> {
        (0..self.len()).find(|&i| self.node(i) == levels)
    }

    /// Nearest node in log-distance.
    pub fn nearest_node(&self, levels: RiskLevels) -> usize {
        let lx = levels.x.ln();
        match self.mode {
            GridMode::Manifold1D => nearest_on_axis(&self.log_xs, lx),
            GridMode::Full2D => {
                let ix = nearest_on_axis(&self.log_xs, lx);
                let iy = nearest_on_axis(&self.log_ys, levels.y.ln());
                ix * self.ys.len() + iy
            }
        }
    }

    /// Interpolates per-node `values` at `levels`, clamping outside the grid.
    pub fn interpolate(
        &self,
        values: &[f64],
        levels: RiskLevels,
        method: Interpolation,
    ) -> Result<f64> {
        if values.is_empty() || values.len() != self.len() {
            return Err(Error::Domain(format!(
                "value slice of length {} for a grid of {} nodes",
                values.len(),
                self.len()
            )));
        }
        Ok(self
            .stencil(levels.x.ln(), levels.y.ln(), method)
            .apply(values))
    }

    /// Stencil for a query given in log coordinates.
    #[inline]
    pub(crate) fn stencil(&self, lx: f64, ly: f64, method: Interpolation) -> Stencil {
        match self.mode {
            GridMode::Manifold1D => match method {
                Interpolation::NearestNode => Stencil::single(nearest_on_axis(&self.log_xs, lx)),
                Interpolation::LogBilinear => {
                    let (i, t) = bracket(&self.log_xs, lx);
                    if t == 0.0 {
                        Stencil::single(i)
                    } else {
                        Stencil {
                            nodes: [i, i + 1, 0, 0],
                            weights: [1.0 - t, t, 0.0, 0.0],
                            len: 2,
                        }
                    }
                }
            },
            GridMode::Full2D => {
                let ny = self.ys.len();
                match method {
                    Interpolation::NearestNode => {
                        let ix = nearest_on_axis(&self.log_xs, lx);
                        let iy = nearest_on_axis(&self.log_ys, ly);
                        Stencil::single(ix * ny + iy)
                    }
                    Interpolation::LogBilinear => {
                        let (ix, tx) = bracket(&self.log_xs, lx);
                        let (iy, ty) = bracket(&self.log_ys, ly);
                        let ix1 = (ix + 1).min(self.xs.len() - 1);
                        let iy1 = (iy + 1).min(ny - 1);
                        Stencil {
                            nodes: [ix * ny + iy, ix * ny + iy1, ix1 * ny + iy, ix1 * ny + iy1],
                            weights: [
                                (1.0 - tx) * (1.0 - ty),
                                (1.0 - tx) * ty,
                                tx * (1.0 - ty),
                                tx * ty,
                            ],
                            len: 4,
                        }
                    }
                }
            }
        }
    }
}

/// Segment `[i, i+1]` holding `t` and the fractional position in it; clamps at the ends.
#[inline]
fn bracket(axis: &[f64], t: f64) -> (usize, f64) {
    let n = axis.len();
    if n == 1 || t <= axis[0] {
        return (0, 0.0);
    }
    if t >= axis[n - 1] {
        return (n - 1, 0.0);
    }
    let hi = axis.partition_point(|&v| v <= t);
    let i = hi - 1;
    let frac = (t - axis[i]) / (axis[i + 1] - axis[i]);
    (i, frac)
}

#[inline]
fn nearest_on_axis(axis: &[f64], t: f64) -> usize {
    let (i, frac) = bracket(axis, t);
    if frac > 0.5 {
        i + 1
    } else {
        i
    }
}

/// Geometric risk-level grid for initial levels `levels0`, before snapping.
///
/// When either level is 1 the envelope admits only `ξ ≡ 1`, the levels never
/// move, and the grid is the single node `levels0`.
pub fn build_risk_grid(levels0: RiskLevels, n_points: usize, mode: GridMode) -> Result<RiskGrid> {
    if n_points < 2 {
        return Err(Error::Domain(format!(
            "risk grid needs at least 2 points, got {n_points}"
        )));
    }
    let c = levels0.x * levels0.y;
    if levels0.is_degenerate() {
        return Ok(RiskGrid::from_parts(
            mode,
            vec![levels0.x],
            vec![levels0.y],
            c,
        ));
    }
    let xs = geometric(c, n_points);
    let ys = match mode {
        GridMode::Manifold1D => xs.iter().map(|&x| c / x).collect(),
        GridMode::Full2D => geometric(c, n_points),
    };
    Ok(RiskGrid::from_parts(mode, xs, ys, c))
}
