use serde::{Deserialize, Serialize};

use crate::{Error, Point, Result};

/// Hard cap on the total node count (keeps accidental huge grids out).
pub const NODE_CAP: usize = 1 << 24;

/// Uniform tensor-product grid over an axis-aligned box in 1, 2 or 3
/// dimensions. Balls and other curved domains are represented as masked
/// sub-regions of the box.
///
/// Node multi-indices are ordered lexicographically with the first axis
/// major; the flat index used throughout the crate follows that order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    lo: [f64; 3],
    hi: [f64; 3],
    n_cells: [usize; 3],
}

impl Grid {
    pub fn new(dim: usize, extent: &[[f64; 2]], n_cells: &[usize]) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::config(format!("dim = {dim} must be 1, 2 or 3")));
        }
        if extent.len() != dim || n_cells.len() != dim {
            return Err(Error::config(
                "extent and n_cells must have one entry per axis".to_string(),
            ));
        }
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        let mut nc = [0usize; 3];
        for a in 0..dim {
            let [l, h] = extent[a];
            if !l.is_finite() || !h.is_finite() || !(h > l) {
                return Err(Error::config(format!(
                    "axis {a}: extent [{l}, {h}] must be a nonempty finite interval"
                )));
            }
            if n_cells[a] < 4 {
                return Err(Error::config(format!(
                    "axis {a}: n_cells = {} must be at least 4",
                    n_cells[a]
                )));
            }
            lo[a] = l;
            hi[a] = h;
            nc[a] = n_cells[a];
        }
        let grid = Grid {
            dim,
            lo,
            hi,
            n_cells: nc,
        };
        if grid.node_count() > NODE_CAP {
            return Err(Error::config(format!(
                "grid has {} nodes, above the cap {NODE_CAP}",
                grid.node_count()
            )));
        }
        Ok(grid)
    }

    /// Symmetric box [-half, half]^dim with the same resolution per axis.
    pub fn centered(dim: usize, half: f64, n_cells: usize) -> Result<Self> {
        let ext: Vec<[f64; 2]> = (0..dim).map(|_| [-half, half]).collect();
        let nc: Vec<usize> = (0..dim).map(|_| n_cells).collect();
        Grid::new(dim, &ext, &nc)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lo(&self) -> &[f64; 3] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64; 3] {
        &self.hi
    }

    pub fn n_cells(&self, axis: usize) -> usize {
        self.n_cells[axis]
    }

    pub fn n_nodes(&self, axis: usize) -> usize {
        if axis < self.dim {
            self.n_cells[axis] + 1
        } else {
            1
        }
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / self.n_cells[axis] as f64
    }

    pub fn max_spacing(&self) -> f64 {
        (0..self.dim).map(|a| self.spacing(a)).fold(0.0, f64::max)
    }

    pub fn min_spacing(&self) -> f64 {
        (0..self.dim)
            .map(|a| self.spacing(a))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn diameter(&self) -> f64 {
        (0..self.dim)
            .map(|a| (self.hi[a] - self.lo[a]).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn node_count(&self) -> usize {
        (0..self.dim).map(|a| self.n_cells[a] + 1).product()
    }

    pub fn cell_count(&self) -> usize {
        (0..self.dim).map(|a| self.n_cells[a]).product()
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim).map(|a| self.spacing(a)).product()
    }

    /// Flat index of the node with multi-index `c` (first axis major).
    pub fn flat(&self, c: [usize; 3]) -> usize {
        let mut idx = 0;
        for a in 0..self.dim {
            idx = idx * (self.n_cells[a] + 1) + c[a];
        }
        idx
    }

    /// Multi-index of the node with flat index `idx`.
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let mut c = [0usize; 3];
        let mut rem = idx;
        for a in (0..self.dim).rev() {
            let n = self.n_cells[a] + 1;
            c[a] = rem % n;
            rem /= n;
        }
        c
    }

    pub fn node_pos(&self, c: [usize; 3]) -> Point {
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = self.lo[a] + c[a] as f64 * self.spacing(a);
        }
        x
    }

    pub fn node_pos_flat(&self, idx: usize) -> Point {
        self.node_pos(self.coords(idx))
    }

    pub fn is_boundary(&self, c: [usize; 3]) -> bool {
        (0..self.dim).any(|a| c[a] == 0 || c[a] == self.n_cells[a])
    }

    /// True when the closed ball B_r(x0) lies inside the box.
    pub fn contains_ball(&self, x0: &Point, r: f64) -> bool {
        (0..self.dim).all(|a| x0[a] - r >= self.lo[a] - 1e-12 && x0[a] + r <= self.hi[a] + 1e-12)
    }

    /// Largest ball radius around `x0` that stays inside the box.
    pub fn max_ball_radius(&self, x0: &Point) -> f64 {
        (0..self.dim)
            .map(|a| (x0[a] - self.lo[a]).min(self.hi[a] - x0[a]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Flat indices of all nodes inside the closed ball B_r(x0).
    pub fn nodes_in_ball(&self, x0: &Point, r: f64) -> Vec<usize> {
        let mut out = Vec::new();
        let mut lo_i = [0usize; 3];
        let mut hi_i = [0usize; 3];
        for a in 0..self.dim {
            let h = self.spacing(a);
            lo_i[a] = (((x0[a] - r - self.lo[a]) / h).floor().max(0.0)) as usize;
            hi_i[a] = (((x0[a] + r - self.lo[a]) / h).ceil() as usize).min(self.n_cells[a]);
        }
        let r2 = r * r;
        self.for_each_box(lo_i, hi_i, |c| {
            let x = self.node_pos(c);
            let d2: f64 = (0..self.dim).map(|a| (x[a] - x0[a]).powi(2)).sum();
            if d2 <= r2 + 1e-14 * (1.0 + r2) {
                out.push(self.flat(c));
            }
        });
        out
    }

    fn for_each_box(&self, lo: [usize; 3], hi: [usize; 3], mut f: impl FnMut([usize; 3])) {
        match self.dim {
            1 => {
                for i in lo[0]..=hi[0] {
                    f([i, 0, 0]);
                }
            }
            2 => {
                for i in lo[0]..=hi[0] {
                    for j in lo[1]..=hi[1] {
                        f([i, j, 0]);
                    }
                }
            }
            _ => {
                for i in lo[0]..=hi[0] {
                    for j in lo[1]..=hi[1] {
                        for k in lo[2]..=hi[2] {
                            f([i, j, k]);
                        }
                    }
                }
            }
        }
    }

    /// Visit every node multi-index.
    pub fn for_each_node(&self, f: impl FnMut([usize; 3])) {
        let mut hi = [0usize; 3];
        for a in 0..self.dim {
            hi[a] = self.n_cells[a];
        }
        self.for_each_box([0, 0, 0], hi, f);
    }

    /// Visit every cell multi-index (cell c spans nodes c..c+1 per axis).
    pub fn for_each_cell(&self, f: impl FnMut([usize; 3])) {
        let mut hi = [0usize; 3];
        for a in 0..self.dim {
            hi[a] = self.n_cells[a] - 1;
        }
        self.for_each_box([0, 0, 0], hi, f);
    }
}

/// Scalar values on the nodes of a [`Grid`] together with a Dirichlet mask.
///
/// The mask always covers the topological boundary of the box; masked
/// interior nodes carve out masked sub-domains (annuli and the like).
/// Fields are immutable value data once built; solvers clone and write
/// through dedicated constructors.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
    boundary_mask: Vec<bool>,
}

impl std::fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScalarField")
            .field("grid", &self.grid)
            .field("nodes", &self.values.len())
            .finish()
    }
}

impl ScalarField {
    /// Constant field with the default (box-boundary) mask.
    pub fn constant(grid: Grid, value: f64) -> Self {
        let n = grid.node_count();
        let mut mask = vec![false; n];
        grid.for_each_node(|c| {
            if grid.is_boundary(c) {
                mask[grid.flat(c)] = true;
            }
        });
        ScalarField {
            grid,
            values: vec![value; n],
            boundary_mask: mask,
        }
    }

    /// Field sampled from a function of position, default mask.
    pub fn from_fn(grid: Grid, f: impl Fn(&Point) -> f64) -> Self {
        let mut field = ScalarField::constant(grid, 0.0);
        grid.for_each_node(|c| {
            field.values[grid.flat(c)] = f(&grid.node_pos(c));
        });
        field
    }

    /// Assemble from raw parts. The mask must cover the box boundary.
    pub fn from_parts(grid: Grid, values: Vec<f64>, boundary_mask: Vec<bool>) -> Result<Self> {
        let field = ScalarField {
            grid,
            values,
            boundary_mask,
        };
        field.validate()?;
        Ok(field)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.grid.node_count();
        if self.values.len() != n || self.boundary_mask.len() != n {
            return Err(Error::domain(format!(
                "field length {} does not match grid node count {n}",
                self.values.len()
            )));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!(
                "non-finite value at node {i} ({:?})",
                self.grid.node_pos_flat(i)
            )));
        }
        let mut ok = true;
        self.grid.for_each_node(|c| {
            if self.grid.is_boundary(c) && !self.boundary_mask[self.grid.flat(c)] {
                ok = false;
            }
        });
        if !ok {
            return Err(Error::domain(
                "boundary mask must cover every box-boundary node".to_string(),
            ));
        }
        Ok(())
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn value(&self, idx: usize) -> f64 {
        self.values[idx]
    }

    pub fn mask(&self) -> &[bool] {
        &self.boundary_mask
    }

    pub fn is_dirichlet(&self, idx: usize) -> bool {
        self.boundary_mask[idx]
    }

    /// Mark a node as Dirichlet and pin its value.
    pub fn set_dirichlet(&mut self, idx: usize, value: f64) {
        self.boundary_mask[idx] = true;
        self.values[idx] = value;
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Sup of |value| over Dirichlet nodes.
    pub fn max_abs_dirichlet(&self) -> f64 {
        self.values
            .iter()
            .zip(&self.boundary_mask)
            .filter(|(_, m)| **m)
            .fold(0.0, |m, (v, _)| m.max(v.abs()))
    }

    /// Multilinear interpolation at `x`; the point is clamped to the box.
    pub fn interpolate(&self, x: &Point) -> f64 {
        let g = &self.grid;
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..g.dim {
            let h = g.spacing(a);
            let t = ((x[a] - g.lo[a]) / h).clamp(0.0, g.n_cells[a] as f64);
            let i = (t.floor() as usize).min(g.n_cells[a] - 1);
            base[a] = i;
            frac[a] = t - i as f64;
        }
        let mut acc = 0.0;
        let corners = 1usize << g.dim;
        for corner in 0..corners {
            let mut c = base;
            let mut w = 1.0;
            for a in 0..g.dim {
                if corner >> a & 1 == 1 {
                    c[a] += 1;
                    w *= frac[a];
                } else {
                    w *= 1.0 - frac[a];
                }
            }
            if w != 0.0 {
                acc += w * self.values[g.flat(c)];
            }
        }
        acc
    }

    /// Mean of the 2^dim corner values of cell `c`.
    pub fn cell_mean(&self, c: [usize; 3]) -> f64 {
        let g = &self.grid;
        let corners = 1usize << g.dim;
        let mut acc = 0.0;
        for corner in 0..corners {
            let mut cc = c;
            for a in 0..g.dim {
                if corner >> a & 1 == 1 {
                    cc[a] += 1;
                }
            }
            acc += self.values[g.flat(cc)];
        }
        acc / corners as f64
    }

    /// Cell-centered gradient: per axis, the average of the one-sided
    /// differences over the 2^(dim-1) edges along that axis.
    pub fn cell_gradient(&self, c: [usize; 3]) -> Point {
        cell_gradient_of(&self.grid, &self.values, c)
    }

    /// Max |corner value| of cell `c`.
    pub fn cell_max_abs(&self, c: [usize; 3]) -> f64 {
        let g = &self.grid;
        let corners = 1usize << g.dim;
        let mut m = 0.0f64;
        for corner in 0..corners {
            let mut cc = c;
            for a in 0..g.dim {
                if corner >> a & 1 == 1 {
                    cc[a] += 1;
                }
            }
            m = m.max(self.values[g.flat(cc)].abs());
        }
        m
    }
}

/// Cell-centered gradient over a raw value slice (shared with solver loops).
pub(crate) fn cell_gradient_of(g: &Grid, values: &[f64], c: [usize; 3]) -> Point {
    let mut grad = [0.0f64; 3];
    let dim = g.dim();
    let edges = 1usize << (dim - 1);
    for a in 0..dim {
        let h = g.spacing(a);
        let mut acc = 0.0;
        // Enumerate corners with coordinate 0 along axis `a`.
        for e in 0..edges {
            let mut cc = c;
            let mut bit = 0;
            for b in 0..dim {
                if b == a {
                    continue;
                }
                if e >> bit & 1 == 1 {
                    cc[b] += 1;
                }
                bit += 1;
            }
            let lo = g.flat(cc);
            let mut ch = cc;
            ch[a] += 1;
            let hi = g.flat(ch);
            acc += (values[hi] - values[lo]) / h;
        }
        grad[a] = acc / edges as f64;
    }
    grad
}

/// The zoomed field u_{x0,r}(y) = u(x0 + r·y)/r on a reference grid over the
/// unit ball's bounding box, sampled by multilinear interpolation.
///
/// The reference resolution matches the source resolution (2r/h cells per
/// axis, clamped to [8, 512]). Sample points in the box corners outside the
/// ball may fall outside the source domain; they are clamped to it, so only
/// values on |y| <= 1 are meaningful to consumers.
pub fn rescale(u: &ScalarField, x0: &Point, r: f64) -> Result<ScalarField> {
    let g = u.grid();
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::domain(format!("rescale radius r = {r} must be positive")));
    }
    if !g.contains_ball(x0, r) {
        return Err(Error::domain(format!(
            "ball of radius {r} around {:?} exits the domain (max radius {:.6})",
            &x0[..g.dim()],
            g.max_ball_radius(x0)
        )));
    }
    let dim = g.dim();
    let mut ext = Vec::with_capacity(dim);
    let mut nc = Vec::with_capacity(dim);
    for a in 0..dim {
        ext.push([-1.0, 1.0]);
        let n = (2.0 * r / g.spacing(a)).round() as usize;
        nc.push(n.clamp(8, 512));
    }
    let ref_grid = Grid::new(dim, &ext, &nc)?;
    let out = ScalarField::from_fn(ref_grid, |y| {
        let mut x = *x0;
        for a in 0..dim {
            x[a] = (x0[a] + r * y[a]).clamp(g.lo()[a], g.hi()[a]);
        }
        u.interpolate(&x) / r
    });
    Ok(out)
}
