//! Grid world with overlaid Gaussian resource maps and internal stats.
//!
//! Coordinates: `x` grows to the East, `y` grows to the North. Cell `(x, y)`
//! of layer `i` is stored at `values[i * height * width + y * width + x]`.
//!
//! Observation layout (length `10 * N`): for each layer in order, the 3x3
//! window around the agent in row-major order, rows running from the northern
//! row (`dy = +1`) to the southern row (`dy = -1`) and columns from West
//! (`dx = -1`) to East (`dx = +1`). Cells outside the grid read 0. The `N`
//! stat levels follow the resource readings.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// A 2D Gaussian resource source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResourceKernel {
    pub mean_x: f64,
    pub mean_y: f64,
    /// Row-major 2x2 covariance `[sxx, sxy, syx, syy]`.
    pub covariance: [f64; 4],
}

impl ResourceKernel {
    pub fn isotropic(mean_x: f64, mean_y: f64, variance: f64) -> Self {
        Self {
            mean_x,
            mean_y,
            covariance: [variance, 0.0, 0.0, variance],
        }
    }

    fn determinant(&self) -> f64 {
        let [a, b, c, d] = self.covariance;
        a * d - b * c
    }

    pub fn is_positive_definite(&self) -> bool {
        let [a, b, c, d] = self.covariance;
        a > 0.0 && d > 0.0 && b == c && self.determinant() > 0.0
    }

    /// Unit-integral bivariate normal density at `(x, y)`.
    pub fn density(&self, x: f64, y: f64) -> f64 {
        let [a, b, _, d] = self.covariance;
        let det = self.determinant();
        let dx = x - self.mean_x;
        let dy = y - self.mean_y;
        // (dx, dy) Σ⁻¹ (dx, dy)ᵀ with Σ⁻¹ = [d, -b; -b, a] / det
        let mahalanobis = (d * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det;
        (-0.5 * mahalanobis).exp() / (2.0 * PI * det.sqrt())
    }
}

/// `N` overlaid resource maps. Resources never deplete.
#[derive(Debug, Clone, PartialEq)]
pub struct ResourceGrid {
    width: usize,
    height: usize,
    n_resources: usize,
    values: Vec<f64>,
}

impl ResourceGrid {
    /// Samples each kernel's density at the integer cell coordinates.
    pub fn build(kernels: &[ResourceKernel], width: usize, height: usize) -> Result<Self> {
        if kernels.is_empty() {
            return Err(Error::Config("at least one resource kernel is required".into()));
        }
        if width < 3 || height < 3 {
            return Err(Error::Config(format!(
                "grid must be at least 3x3, got {width}x{height}"
            )));
        }
        if let Some(index) = kernels.iter().position(|k| !k.is_positive_definite()) {
            return Err(Error::KernelCovariance { index });
        }
        let mut values = Vec::with_capacity(kernels.len() * width * height);
        for kernel in kernels {
            for y in 0..height {
                for x in 0..width {
                    values.push(kernel.density(x as f64, y as f64));
                }
            }
        }
        Ok(Self {
            width,
            height,
            n_resources: kernels.len(),
            values,
        })
    }

    /// Grid from explicit layer values, laid out as described in the module docs.
    pub fn from_values(
        width: usize,
        height: usize,
        n_resources: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        if values.len() != width * height * n_resources {
            return Err(Error::Shape(format!(
                "expected {} grid values, got {}",
                width * height * n_resources,
                values.len()
            )));
        }
        if values.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Config("resource values must be nonnegative".into()));
        }
        Ok(Self {
            width,
            height,
            n_resources,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn n_resources(&self) -> usize {
        self.n_resources
    }

    #[inline]
    pub fn value(&self, layer: usize, x: usize, y: usize) -> f64 {
        self.values[(layer * self.height + y) * self.width + x]
    }

    /// Like [`value`](Self::value) but zero outside the grid.
    #[inline]
    pub fn value_padded(&self, layer: usize, x: i64, y: i64) -> f64 {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            0.0
        } else {
            self.value(layer, x as usize, y as usize)
        }
    }

    pub fn layer(&self, layer: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.values[layer * n..(layer + 1) * n]
    }
}

/// Movement directions. The index mapping is fixed: Q-network output `k`
/// is the value of `Action::from_index(k)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    North = 0,
    South = 1,
    East = 2,
    West = 3,
}

impl Action {
    pub const COUNT: usize = 4;
    pub const ALL: [Action; 4] = [Action::North, Action::South, Action::East, Action::West];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn delta(self) -> (i64, i64) {
        match self {
            Action::North => (0, 1),
            Action::South => (0, -1),
            Action::East => (1, 0),
            Action::West => (-1, 0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InternalStats {
    pub h: Vec<f64>,
    pub setpoints: Vec<f64>,
    pub clamped: Vec<bool>,
    pub clamp_values: Vec<f64>,
}

impl InternalStats {
    pub fn new(initial: Vec<f64>, setpoints: Vec<f64>) -> Self {
        let n = initial.len();
        Self {
            h: initial,
            setpoints,
            clamped: vec![false; n],
            clamp_values: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub pos_x: usize,
    pub pos_y: usize,
    pub stats: InternalStats,
    pub t: usize,
}

impl EnvState {
    /// Agent at the grid center, stats at `initial`, no clamps.
    pub fn initial(grid: &ResourceGrid, initial: &[f64], setpoints: &[f64]) -> Result<Self> {
        if initial.len() != grid.n_resources() || setpoints.len() != grid.n_resources() {
            return Err(Error::Shape(format!(
                "{} resources but {} initial stats and {} set-points",
                grid.n_resources(),
                initial.len(),
                setpoints.len()
            )));
        }
        Ok(Self {
            pos_x: grid.width() / 2,
            pos_y: grid.height() / 2,
            stats: InternalStats::new(initial.to_vec(), setpoints.to_vec()),
            t: 0,
        })
    }

    /// Moves the agent, then applies intake at the new cell and depletion.
    /// Off-grid moves leave the agent in place; clamped stats are untouched.
    pub fn step(&mut self, action: Action, grid: &ResourceGrid, depletion: f64) {
        let (dx, dy) = action.delta();
        let nx = self.pos_x as i64 + dx;
        let ny = self.pos_y as i64 + dy;
        if nx >= 0 && ny >= 0 && (nx as usize) < grid.width() && (ny as usize) < grid.height() {
            self.pos_x = nx as usize;
            self.pos_y = ny as usize;
        }
        let stats = &mut self.stats;
        for i in 0..stats.h.len() {
            if stats.clamped[i] {
                stats.h[i] = stats.clamp_values[i];
            } else {
                stats.h[i] = stats.h[i] + grid.value(i, self.pos_x, self.pos_y) - depletion;
            }
        }
        self.t += 1;
    }

    /// Freezes stat `index` at `value`, effective immediately.
    pub fn apply_clamp(&mut self, index: usize, value: f64) -> Result<()> {
        let n = self.stats.len();
        if index >= n {
            return Err(Error::StatIndex { index, n });
        }
        self.stats.clamped[index] = true;
        self.stats.clamp_values[index] = value;
        self.stats.h[index] = value;
        Ok(())
    }

    pub fn observe(&self, grid: &ResourceGrid) -> Vec<f64> {
        let mut obs = Vec::with_capacity(observation_len(grid.n_resources()));
        self.observe_into(grid, &mut obs);
        obs
    }

    pub fn observe_into(&self, grid: &ResourceGrid, obs: &mut Vec<f64>) {
        obs.clear();
        let (x, y) = (self.pos_x as i64, self.pos_y as i64);
        for layer in 0..grid.n_resources() {
            for dy in [1i64, 0, -1] {
                for dx in [-1i64, 0, 1] {
                    obs.push(grid.value_padded(layer, x + dx, y + dy));
                }
            }
        }
        obs.extend_from_slice(&self.stats.h);
    }
}

pub fn observation_len(n_resources: usize) -> usize {
    10 * n_resources
}
