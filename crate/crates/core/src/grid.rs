//! Grid-map shape representation.
//!
//! Every cell holds a real score; higher means the tool surface is more
//! likely to pass through that cell. The grid induces a density over contact
//! positions, `p(c | s) = exp(score(c)) / Σ exp(score)·cell_area`, whose
//! normalizer is cached and maintained incrementally as scores change.
//!
//! Cells store `exp(score)` rather than the score, so a fixed score step is a
//! single multiplication and the normalizer update needs no `exp` call.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::geometry::{point_in_double_cone, ContactPoint, Vec2, FORCE_EPSILON};

/// `floor` for index arithmetic. Truncation is exact for the magnitudes that
/// occur here and avoids a software `floor` on baseline x86-64.
#[inline]
fn floor_idx(x: f64) -> f64 {
    if !(x.abs() < 1e15) {
        return x.floor();
    }
    let t = x as i64 as f64;
    if t > x {
        t - 1.0
    } else {
        t
    }
}

#[inline]
fn ceil_idx(x: f64) -> f64 {
    -floor_idx(-x)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridGeometry {
    /// Lower-left corner of cell (0, 0).
    pub origin: Vec2,
    pub cell_size: f64,
    pub nx: usize,
    pub ny: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CellIndex {
    pub ix: usize,
    pub iy: usize,
}

impl GridGeometry {
    pub fn new(origin: Vec2, cell_size: f64, nx: usize, ny: usize) -> Result<Self> {
        let g = Self { origin, cell_size, nx, ny };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) {
            return Err(Error::config(format!("cell_size must be positive, got {}", self.cell_size)));
        }
        if self.nx == 0 || self.ny == 0 {
            return Err(Error::config("grid needs at least one cell per axis"));
        }
        if !self.origin.iter().all(|v| v.is_finite()) {
            return Err(Error::config("grid origin must be finite"));
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn cell_area(&self) -> f64 {
        self.cell_size * self.cell_size
    }

    pub fn area(&self) -> f64 {
        self.n_cells() as f64 * self.cell_area()
    }

    pub fn lo(&self) -> Vec2 {
        self.origin
    }

    pub fn hi(&self) -> Vec2 {
        self.origin + Vec2::new(self.nx as f64, self.ny as f64) * self.cell_size
    }

    pub fn contains(&self, p: &Vec2) -> bool {
        self.cell_index_of(p).is_some()
    }

    /// Containing cell; points on an interior edge belong to the higher-index
    /// cell, points outside `[origin, origin + size)` have none.
    pub fn cell_index_of(&self, p: &Vec2) -> Option<CellIndex> {
        let fx = floor_idx((p.x - self.origin.x) / self.cell_size);
        let fy = floor_idx((p.y - self.origin.y) / self.cell_size);
        if !(fx >= 0.0 && fy >= 0.0) || fx >= self.nx as f64 || fy >= self.ny as f64 {
            return None;
        }
        Some(CellIndex { ix: fx as usize, iy: fy as usize })
    }

    pub fn flat(&self, idx: CellIndex) -> usize {
        idx.iy * self.nx + idx.ix
    }

    pub fn center_x(&self, ix: usize) -> f64 {
        self.origin.x + (ix as f64 + 0.5) * self.cell_size
    }

    pub fn center_y(&self, iy: usize) -> f64 {
        self.origin.y + (iy as f64 + 0.5) * self.cell_size
    }

    pub fn cell_center(&self, idx: CellIndex) -> Vec2 {
        Vec2::new(self.center_x(idx.ix), self.center_y(idx.iy))
    }

    /// Inclusive range of indices along one axis whose centers may fall in
    /// `[lo, hi]`, clamped to the grid. `None` when empty.
    fn index_span(&self, lo: f64, hi: f64, origin: f64, n: usize) -> Option<(usize, usize)> {
        let a = floor_idx((lo - origin) / self.cell_size - 0.5).max(0.0);
        let b = ceil_idx((hi - origin) / self.cell_size - 0.5).min(n as f64 - 1.0);
        if !(a <= b) {
            return None;
        }
        Some((a as usize, b as usize))
    }
}

/// Thresholds and step sizes of the deterministic shape update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeUpdateParams {
    /// Radius around the contact whose cells are raised (m).
    pub d_th: f64,
    /// Half-angle of the lowering cone along the force (rad).
    pub theta_th: f64,
    pub ds_inc: f64,
    pub ds_dec: f64,
}

impl ShapeUpdateParams {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.d_th, self.theta_th, self.ds_inc, self.ds_dec]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite());
        if !ok {
            return Err(Error::config("shape update parameters must all be positive"));
        }
        if self.theta_th >= std::f64::consts::FRAC_PI_2 {
            return Err(Error::config("theta_th must be below pi/2"));
        }
        Ok(())
    }
}

/// Safety range for cell scores; only guards `exp` against overflow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreBounds {
    pub lo: f64,
    pub hi: f64,
}

impl Default for ScoreBounds {
    fn default() -> Self {
        Self { lo: -20.0, hi: 20.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeGrid {
    geom: GridGeometry,
    /// `exp(score)` per cell, row-major, row 0 is the lowest y.
    weights: Vec<f64>,
    bounds: ScoreBounds,
    weight_lo: f64,
    weight_hi: f64,
    /// Σ exp(value)·cell_area.
    partition_sum: f64,
    // largest partition sum since the last full recomputation; a large drop
    // relative to it triggers a resum to bound cancellation error
    partition_peak: f64,
}

/// Outcome of one shape update, for diagnostics and tests.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct UpdateFootprint {
    pub raised: Vec<usize>,
    pub lowered: Vec<usize>,
}

impl ShapeGrid {
    pub fn new(geom: GridGeometry) -> Self {
        Self::with_bounds(geom, ScoreBounds::default())
    }

    pub fn with_bounds(geom: GridGeometry, bounds: ScoreBounds) -> Self {
        let z = geom.area();
        Self {
            geom,
            weights: vec![1.0; geom.n_cells()],
            bounds,
            weight_lo: bounds.lo.exp(),
            weight_hi: bounds.hi.exp(),
            partition_sum: z,
            partition_peak: z,
        }
    }

    pub fn from_values(geom: GridGeometry, values: Vec<f64>) -> Result<Self> {
        if values.len() != geom.n_cells() {
            return Err(Error::Snapshot(format!(
                "expected {} cells, got {}",
                geom.n_cells(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Snapshot("non-finite cell value".into()));
        }
        let mut grid = Self::new(geom);
        let b = grid.bounds;
        for (w, v) in grid.weights.iter_mut().zip(values) {
            *w = v.clamp(b.lo, b.hi).exp();
        }
        grid.recompute_partition_sum();
        Ok(grid)
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geom
    }

    /// Scores of all cells, row-major.
    pub fn values(&self) -> Vec<f64> {
        self.weights.iter().map(|w| w.ln()).collect()
    }

    /// `exp(score)` of all cells, row-major.
    pub fn exp_values(&self) -> &[f64] {
        &self.weights
    }

    pub fn bounds(&self) -> ScoreBounds {
        self.bounds
    }

    pub fn set_bounds(&mut self, bounds: ScoreBounds) {
        self.bounds = bounds;
        self.weight_lo = bounds.lo.exp();
        self.weight_hi = bounds.hi.exp();
        for w in &mut self.weights {
            *w = w.clamp(self.weight_lo, self.weight_hi);
        }
        self.recompute_partition_sum();
    }

    pub fn partition_sum(&self) -> f64 {
        self.partition_sum
    }

    pub fn value(&self, idx: CellIndex) -> f64 {
        self.weights[self.geom.flat(idx)].ln()
    }

    /// Score of the cell containing `p`; 0 outside the grid.
    pub fn grid_value(&self, p: &Vec2) -> f64 {
        self.grid_exp_value(p).ln()
    }

    /// `exp` of [`ShapeGrid::grid_value`].
    pub fn grid_exp_value(&self, p: &Vec2) -> f64 {
        match self.geom.cell_index_of(p) {
            Some(idx) => self.weights[self.geom.flat(idx)],
            None => 1.0,
        }
    }

    pub fn direct_partition_sum(&self) -> f64 {
        self.weights.iter().sum::<f64>() * self.geom.cell_area()
    }

    pub fn recompute_partition_sum(&mut self) {
        self.partition_sum = self.direct_partition_sum();
        self.partition_peak = self.partition_sum;
    }

    /// Adds `delta` to one cell (clamped) and keeps the normalizer in sync.
    pub fn add_to_cell(&mut self, flat: usize, delta: f64) {
        self.scale_cell(flat, delta.exp());
        self.partition_peak = self.partition_peak.max(self.partition_sum);
    }

    #[inline]
    fn scale_cell(&mut self, flat: usize, factor: f64) {
        let old = self.weights[flat];
        let new = (old * factor).clamp(self.weight_lo, self.weight_hi);
        self.weights[flat] = new;
        self.partition_sum += (new - old) * self.geom.cell_area();
    }

    fn settle_partition_sum(&mut self) {
        if !(self.partition_sum > 1e-6 * self.partition_peak) {
            self.recompute_partition_sum();
        }
    }

    /// Log density of a contact at `c` under this grid's shape prior.
    pub fn shape_log_prior(&self, c: &ContactPoint) -> f64 {
        self.grid_value(c) - self.partition_sum.ln()
    }

    /// Applies the deterministic shape update for a contact at `c_prev`
    /// pushed with force `f_prev`:
    ///
    /// * cells whose center is closer than `d_th` to the contact, and the
    ///   cell containing the contact, gain `ds_inc`;
    /// * other cells whose center lies in the double cone with apex `c_prev`,
    ///   axis `f_prev` and half-angle `theta_th` lose `ds_dec`.
    pub fn shape_update(
        &mut self,
        c_prev: &ContactPoint,
        f_prev: &Vec2,
        params: &ShapeUpdateParams,
    ) -> Result<UpdateFootprint> {
        let mut footprint = UpdateFootprint::default();
        self.shape_update_inner(c_prev, f_prev, params, Some(&mut footprint))?;
        Ok(footprint)
    }

    /// Same as [`ShapeGrid::shape_update`] without recording the footprint.
    pub fn apply_shape_update(&mut self, c_prev: &ContactPoint, f_prev: &Vec2, params: &ShapeUpdateParams) -> Result<()> {
        self.shape_update_inner(c_prev, f_prev, params, None)
    }

    fn shape_update_inner(
        &mut self,
        c: &ContactPoint,
        f: &Vec2,
        params: &ShapeUpdateParams,
        mut footprint: Option<&mut UpdateFootprint>,
    ) -> Result<()> {
        let norm = f.norm();
        if !(norm > FORCE_EPSILON) {
            return Err(Error::DegenerateWrench { norm });
        }
        let g = self.geom;
        let d2 = params.d_th * params.d_th;
        let up = params.ds_inc.exp();
        let down = (-params.ds_dec).exp();
        let home = g.cell_index_of(c).map(|i| g.flat(i));

        // cells near the contact, and the one holding it, are raised
        if let Some(h) = home {
            self.scale_cell(h, up);
            if let Some(fp) = footprint.as_deref_mut() {
                fp.raised.push(h);
            }
        }
        let xs = g.index_span(c.x - params.d_th, c.x + params.d_th, g.origin.x, g.nx);
        let ys = g.index_span(c.y - params.d_th, c.y + params.d_th, g.origin.y, g.ny);
        if let (Some((x0, x1)), Some((y0, y1))) = (xs, ys) {
            for iy in y0..=y1 {
                let dy = g.center_y(iy) - c.y;
                for ix in x0..=x1 {
                    let dx = g.center_x(ix) - c.x;
                    let flat = iy * g.nx + ix;
                    if dx * dx + dy * dy < d2 && Some(flat) != home {
                        self.scale_cell(flat, up);
                        if let Some(fp) = footprint.as_deref_mut() {
                            fp.raised.push(flat);
                        }
                    }
                }
            }
        }

        // cells farther out in the double cone are lowered, scanned line by
        // line; only cells near a cone edge need the exact membership test
        let axis = f / norm;
        let normal = Vec2::new(-axis.y, axis.x);
        let (sin_t, cos_t) = params.theta_th.sin_cos();
        let edges = [axis * cos_t + normal * sin_t, axis * cos_t - normal * sin_t];
        let by_rows = axis.y.abs() >= axis.x.abs();
        let (n_lines, n_along) = if by_rows { (g.ny, g.nx) } else { (g.nx, g.ny) };
        let (across, along) = if by_rows { (1, 0) } else { (0, 1) };
        let along_origin = g.origin[along];
        let margin = 1e-6 * g.cell_size;
        let home_line = home.map(|h| if by_rows { h / g.nx } else { h % g.nx });
        let stride = if by_rows { 1 } else { g.nx };
        let flat_of = |line: usize, k: usize| if by_rows { line * g.nx + k } else { k * g.nx + line };
        for line in 0..n_lines {
            let offset = g.origin[across] + (line as f64 + 0.5) * g.cell_size - c[across];
            let (span, sure) = if edges[0][across] * edges[1][across] > 0.0 {
                let a = c[along] + offset / edges[0][across] * edges[0][along];
                let b = c[along] + offset / edges[1][across] * edges[1][along];
                let (lo, hi) = (a.min(b), a.max(b));
                // cells whose centers lie within the crossing interval
                let k0 = ceil_idx((lo - margin - along_origin) / g.cell_size - 0.5).max(0.0);
                let k1 = floor_idx((hi + margin - along_origin) / g.cell_size - 0.5).min(n_along as f64 - 1.0);
                let span = (k0 <= k1).then(|| (k0 as usize, k1 as usize));
                let sure_lo = ceil_idx((lo + margin - along_origin) / g.cell_size - 0.5);
                let sure_hi = floor_idx((hi - margin - along_origin) / g.cell_size - 0.5);
                (span, (sure_lo, sure_hi))
            } else {
                (Some((0, n_along - 1)), (1.0, 0.0))
            };
            let Some((k0, k1)) = span else { continue };
            // cells that need individual checks: near the contact, or the
            // contact's own cell, on this line
            let careful = offset.abs() < params.d_th + g.cell_size || home_line == Some(line);
            let (s0, s1) = if careful || !(sure.0 <= sure.1) {
                (k1 + 1, k1)
            } else {
                let s0 = sure.0.max(k0 as f64);
                let s1 = sure.1.min(k1 as f64);
                if s0 <= s1 { (s0 as usize, s1 as usize) } else { (k1 + 1, k1) }
            };
            let edge_cells = if s0 <= s1 { (k0..s0).chain(s1 + 1..k1 + 1) } else { (k0..k1 + 1).chain(0..0) };
            for k in edge_cells {
                let (ix, iy) = if by_rows { (k, line) } else { (line, k) };
                let flat = flat_of(line, k);
                if Some(flat) == home {
                    continue;
                }
                let center = Vec2::new(g.center_x(ix), g.center_y(iy));
                if (center - c).norm_squared() < d2 {
                    continue;
                }
                let kf = k as f64;
                if (kf >= sure.0 && kf <= sure.1) || point_in_double_cone(&center, c, &axis, params.theta_th) {
                    self.scale_cell(flat, down);
                    if let Some(fp) = footprint.as_deref_mut() {
                        fp.lowered.push(flat);
                    }
                }
            }
            if s0 <= s1 {
                let first = flat_of(line, s0);
                let floor = self.weight_lo;
                let last = first + (s1 - s0) * stride;
                let mut dz = 0.0;
                for w in self.weights[first..=last].iter_mut().step_by(stride) {
                    let old = *w;
                    let new = (old * down).max(floor);
                    *w = new;
                    dz += new - old;
                }
                self.partition_sum += dz * g.cell_area();
                if let Some(fp) = footprint.as_deref_mut() {
                    fp.lowered.extend((0..=(s1 - s0)).map(|n| first + n * stride));
                }
            }
        }
        self.partition_peak = self.partition_peak.max(self.partition_sum);
        self.settle_partition_sum();
        Ok(())
    }

    /// Per column, the center of the highest-scoring cell (lowest row on ties).
    pub fn surface_profile(&self) -> Vec<Vec2> {
        let g = &self.geom;
        (0..g.nx)
            .map(|ix| {
                let mut best = 0;
                let mut best_v = self.weights[ix];
                for iy in 1..g.ny {
                    let v = self.weights[iy * g.nx + ix];
                    if v > best_v {
                        best = iy;
                        best_v = v;
                    }
                }
                Vec2::new(g.center_x(ix), g.center_y(best))
            })
            .collect()
    }

    /// Cell-wise weighted mean of several grids sharing one geometry.
    pub fn weighted_mean<'a>(grids: impl IntoIterator<Item = (&'a ShapeGrid, f64)>) -> Result<ShapeGrid> {
        let mut iter = grids.into_iter();
        let (first, w0) = iter.next().ok_or(Error::EmptyInput)?;
        let mut acc: Vec<f64> = first.weights.iter().map(|v| v.ln() * w0).collect();
        let mut total = w0;
        for (grid, w) in iter {
            if grid.geom != first.geom {
                return Err(Error::config("cannot average grids with different geometry"));
            }
            total += w;
            if w == 0.0 {
                continue;
            }
            for (a, v) in acc.iter_mut().zip(&grid.weights) {
                *a += v.ln() * w;
            }
        }
        if !(total > 0.0) {
            return Err(Error::EmptyInput);
        }
        if (total - 1.0).abs() > 1e-9 {
            acc.iter_mut().for_each(|a| *a /= total);
        }
        let mut out = ShapeGrid::from_values(first.geom, acc)?;
        out.set_bounds(first.bounds);
        Ok(out)
    }

    pub fn write_snapshot<W: Write>(&self, mut out: W) -> Result<()> {
        let g = &self.geom;
        writeln!(out, "shape-grid v1 {} {} {} {} {}", g.nx, g.ny, g.cell_size, g.origin.x, g.origin.y)?;
        let mut line = String::new();
        for row in self.values().chunks(g.nx) {
            line.clear();
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    line.push(' ');
                }
                write!(line, "{v:.8e}").expect("writing to a String");
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn read_snapshot<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| Error::Snapshot("empty file".into()))??;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 7 || fields[0] != "shape-grid" || fields[1] != "v1" {
            return Err(Error::Snapshot(format!("bad header {header:?}")));
        }
        let bad = |what: &str| Error::Snapshot(format!("bad {what} in header"));
        let nx: usize = fields[2].parse().map_err(|_| bad("n_x"))?;
        let ny: usize = fields[3].parse().map_err(|_| bad("n_y"))?;
        let cell: f64 = fields[4].parse().map_err(|_| bad("cell_size"))?;
        let ox: f64 = fields[5].parse().map_err(|_| bad("origin_x"))?;
        let oy: f64 = fields[6].parse().map_err(|_| bad("origin_y"))?;
        let geom = GridGeometry::new(Vec2::new(ox, oy), cell, nx, ny).map_err(|e| Error::Snapshot(e.to_string()))?;
        let mut values = Vec::with_capacity(geom.n_cells());
        for (row, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let before = values.len();
            for tok in line.split_whitespace() {
                values.push(
                    tok.parse::<f64>()
                        .map_err(|_| Error::Snapshot(format!("row {row}: cannot parse {tok:?}")))?,
                );
            }
            if values.len() - before != nx {
                return Err(Error::Snapshot(format!("row {row}: expected {nx} values")));
            }
        }
        Self::from_values(geom, values)
    }
}
