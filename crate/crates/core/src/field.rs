//! The grid field: plot layout, ground truth, dataset ingestion and the
//! seeded measurement simulator.
//!
//! Fields are rectangular cell grids where plot cells form vertical arrays
//! (crop columns) separated by free corridors; free crossing rows let the
//! agent switch corridors. Grids load from an ASCII format (`P` plot,
//! `.` free, `#` obstacle) or are synthesized around a per-plot dataset
//! table. Ground truth and features never change after load; sampling
//! draws noisy readings from a seeded stream owned by [`SensorSim`].

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::fusion::{Measurement, MeasurementKind};
use crate::gp::{sample_prior, FeatureVector, KernelParams};

/// Dense plot index, assigned row-major over plot cells at load time.
/// All downstream tie-breaks use this ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PlotId(pub usize);

impl fmt::Display for PlotId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "plot {}", self.0)
    }
}

/// Grid cell coordinates; ordering is row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pos {
    pub row: usize,
    pub col: usize,
}

impl Pos {
    pub fn new(row: usize, col: usize) -> Self {
        Pos { row, col }
    }

    /// Manhattan distance in cells.
    pub fn manhattan(&self, other: &Pos) -> usize {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col)
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Dir {
    North,
    East,
    South,
    West,
}

impl Dir {
    pub const ALL: [Dir; 4] = [Dir::North, Dir::East, Dir::South, Dir::West];

    pub fn opposite(&self) -> Dir {
        match self {
            Dir::North => Dir::South,
            Dir::East => Dir::West,
            Dir::South => Dir::North,
            Dir::West => Dir::East,
        }
    }

    pub fn delta(&self) -> (isize, isize) {
        match self {
            Dir::North => (-1, 0),
            Dir::East => (0, 1),
            Dir::South => (1, 0),
            Dir::West => (0, -1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cell {
    Free,
    Obstacle,
    Plot(PlotId),
}

/// The field topology: cells, plus the registry of plot cells.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrid {
    width: usize,
    height: usize,
    cells: Vec<Cell>,
    plot_cells: Vec<Pos>,
}

impl FieldGrid {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn n_plots(&self) -> usize {
        self.plot_cells.len()
    }

    pub fn cell(&self, pos: Pos) -> Cell {
        self.cells[pos.row * self.width + pos.col]
    }

    pub fn is_free(&self, pos: Pos) -> bool {
        matches!(self.cell(pos), Cell::Free)
    }

    pub fn plot_pos(&self, plot: PlotId) -> Pos {
        self.plot_cells[plot.0]
    }

    pub fn plot_at(&self, pos: Pos) -> Option<PlotId> {
        match self.cell(pos) {
            Cell::Plot(id) => Some(id),
            _ => None,
        }
    }

    pub fn plot_ids(&self) -> impl Iterator<Item = PlotId> {
        (0..self.plot_cells.len()).map(PlotId)
    }

    pub fn neighbor(&self, pos: Pos, dir: Dir) -> Option<Pos> {
        let (dr, dc) = dir.delta();
        let row = pos.row.checked_add_signed(dr)?;
        let col = pos.col.checked_add_signed(dc)?;
        (row < self.height && col < self.width).then_some(Pos::new(row, col))
    }

    pub fn free_neighbor(&self, pos: Pos, dir: Dir) -> Option<Pos> {
        self.neighbor(pos, dir).filter(|&p| self.is_free(p))
    }

    /// The corridor cell a plot is measured from when sampled statically:
    /// the free cell to its West if present, otherwise to its East.
    pub fn waypoint_for(&self, plot: PlotId) -> Pos {
        let pos = self.plot_pos(plot);
        self.free_neighbor(pos, Dir::West)
            .or_else(|| self.free_neighbor(pos, Dir::East))
            .expect("validated grids have a measurement cell for every plot")
    }

    /// Plots horizontally adjacent to a free cell — the plots measured
    /// while the agent traverses it.
    pub fn plots_beside(&self, pos: Pos) -> Vec<PlotId> {
        let mut out = Vec::with_capacity(2);
        for dir in [Dir::West, Dir::East] {
            if let Some(p) = self.neighbor(pos, dir).and_then(|q| self.plot_at(q)) {
                out.push(p);
            }
        }
        out
    }

    /// Plot ids grouped by grid column, columns in ascending col order and
    /// each column's plots in ascending row order.
    pub fn plot_columns(&self) -> Vec<Vec<PlotId>> {
        let mut cols: Vec<usize> = self.plot_cells.iter().map(|p| p.col).collect();
        cols.sort_unstable();
        cols.dedup();
        cols.iter()
            .map(|&c| {
                let mut ids: Vec<PlotId> = self
                    .plot_ids()
                    .filter(|id| self.plot_pos(*id).col == c)
                    .collect();
                ids.sort_by_key(|id| self.plot_pos(*id).row);
                ids
            })
            .collect()
    }

    pub fn free_cells(&self) -> impl Iterator<Item = Pos> + '_ {
        (0..self.height).flat_map(move |r| {
            (0..self.width)
                .map(move |c| Pos::new(r, c))
                .filter(|&p| self.is_free(p))
        })
    }

    fn validate(&self) -> Result<()> {
        // crop columns: no two plots side by side
        for &pos in &self.plot_cells {
            for dir in [Dir::West, Dir::East] {
                if let Some(n) = self.neighbor(pos, dir) {
                    if matches!(self.cell(n), Cell::Plot(_)) {
                        return Err(Error::parse(
                            format!("row {}, col {}", pos.row + 1, pos.col + 1),
                            "plot cell horizontally adjacent to another plot; \
                             plots must form vertical arrays separated by corridors",
                        ));
                    }
                }
            }
        }
        // every plot is measurable from a corridor cell
        for (i, &pos) in self.plot_cells.iter().enumerate() {
            if self.free_neighbor(pos, Dir::West).is_none()
                && self.free_neighbor(pos, Dir::East).is_none()
            {
                return Err(Error::parse(
                    format!("row {}, col {}", pos.row + 1, pos.col + 1),
                    format!("plot {i} has no adjacent corridor cell"),
                ));
            }
        }
        // free space is connected under the no-U-turn movement rules
        let free: Vec<Pos> = self.free_cells().collect();
        if free.is_empty() {
            if !self.plot_cells.is_empty() {
                return Err(Error::parse("grid", "plots present but no free cells"));
            }
            return Ok(());
        }
        let mut reached: BTreeSet<Pos> = BTreeSet::new();
        let mut seen_states: BTreeSet<(Pos, Dir)> = BTreeSet::new();
        let mut queue = VecDeque::new();
        reached.insert(free[0]);
        for dir in Dir::ALL {
            if let Some(n) = self.free_neighbor(free[0], dir) {
                if seen_states.insert((n, dir)) {
                    queue.push_back((n, dir));
                }
            }
        }
        while let Some((pos, heading)) = queue.pop_front() {
            reached.insert(pos);
            for dir in Dir::ALL {
                if dir == heading.opposite() {
                    continue;
                }
                if let Some(n) = self.free_neighbor(pos, dir) {
                    if seen_states.insert((n, dir)) {
                        queue.push_back((n, dir));
                    }
                }
            }
        }
        if let Some(unreached) = free.iter().find(|p| !reached.contains(p)) {
            return Err(Error::parse(
                format!("row {}, col {}", unreached.row + 1, unreached.col + 1),
                "free cell unreachable from the rest of the field",
            ));
        }
        Ok(())
    }
}

/// Parses the ASCII grid format: one row per line, `P` plot, `.` free,
/// `#` obstacle. Plot ids are assigned row-major.
pub fn load_grid(text: &str) -> Result<FieldGrid> {
    let lines: Vec<&str> = text.trim_end().lines().map(str::trim_end).collect();
    if lines.is_empty() {
        return Err(Error::parse("line 1", "empty grid"));
    }
    let width = lines[0].chars().count();
    if width == 0 {
        return Err(Error::parse("line 1", "empty grid row"));
    }
    let height = lines.len();
    let mut cells = Vec::with_capacity(width * height);
    let mut plot_cells = Vec::new();
    for (r, line) in lines.iter().enumerate() {
        let row: Vec<char> = line.chars().collect();
        if row.len() != width {
            return Err(Error::parse(
                format!("line {}", r + 1),
                format!("ragged row: expected {width} cells, found {}", row.len()),
            ));
        }
        for (c, ch) in row.iter().enumerate() {
            let cell = match ch {
                '.' => Cell::Free,
                '#' => Cell::Obstacle,
                'P' => {
                    let id = PlotId(plot_cells.len());
                    plot_cells.push(Pos::new(r, c));
                    Cell::Plot(id)
                }
                other => {
                    return Err(Error::parse(
                        format!("line {}, col {}", r + 1, c + 1),
                        format!("unknown character '{other}' (expected P, . or #)"),
                    ))
                }
            };
            cells.push(cell);
        }
    }
    let grid = FieldGrid {
        width,
        height,
        cells,
        plot_cells,
    };
    grid.validate()?;
    Ok(grid)
}

/// Renders a grid back to the ASCII format; `load_grid` of the result
/// reproduces the grid.
pub fn serialize_grid(grid: &FieldGrid) -> String {
    let mut out = String::with_capacity((grid.width + 1) * grid.height);
    for r in 0..grid.height {
        for c in 0..grid.width {
            out.push(match grid.cell(Pos::new(r, c)) {
                Cell::Free => '.',
                Cell::Obstacle => '#',
                Cell::Plot(_) => 'P',
            });
        }
        out.push('\n');
    }
    out
}

/// The standard layout: `plot_rows x plot_cols` plots in vertical arrays
/// with a one-cell corridor on both sides of every array and free crossing
/// rows above and below.
pub fn standard_layout(plot_rows: usize, plot_cols: usize) -> FieldGrid {
    let width = 2 * plot_cols + 1;
    let height = plot_rows + 2;
    let mut cells = vec![Cell::Free; width * height];
    let mut plot_cells = Vec::with_capacity(plot_rows * plot_cols);
    for r in 0..plot_rows {
        for pc in 0..plot_cols {
            let pos = Pos::new(r + 1, 2 * pc + 1);
            let id = PlotId(plot_cells.len());
            plot_cells.push(pos);
            cells[pos.row * width + pos.col] = Cell::Plot(id);
        }
    }
    let grid = FieldGrid {
        width,
        height,
        cells,
        plot_cells,
    };
    debug_assert!(grid.validate().is_ok());
    grid
}

/// Per-plot true target values (mean stalk height, cm).
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthField {
    values: Vec<f64>,
}

impl GroundTruthField {
    pub fn new(values: Vec<f64>, band: Option<(f64, f64)>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite ground truth value"));
        }
        if let Some((low, high)) = band {
            if let Some(v) = values.iter().find(|v| **v < low || **v > high) {
                return Err(Error::invalid(format!(
                    "ground truth value {v} outside plausible band [{low}, {high}]"
                )));
            }
        }
        Ok(GroundTruthField { values })
    }

    pub fn value(&self, plot: PlotId) -> f64 {
        self.values[plot.0]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Raw per-plot leaf features, known ahead of the sampling mission (they
/// come from aerial imagery, not the ground robot).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlotFeatures {
    pub vegetation_index: f64,
    pub leaf_angle_density: f64,
}

/// A complete environment: topology, per-plot features and ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub grid: FieldGrid,
    pub features: Vec<PlotFeatures>,
    pub truth: GroundTruthField,
}

impl Field {
    pub fn n_plots(&self) -> usize {
        self.grid.n_plots()
    }

    /// Serializes the per-plot table in the dataset CSV format, using
    /// plot-grid coordinates (row index within the plot array, index of
    /// the array).
    pub fn to_dataset_csv(&self) -> String {
        let mut out = String::from("row,col,vegetation_index,leaf_angle_density,stalk_height\n");
        let columns = self.grid.plot_columns();
        for id in self.grid.plot_ids() {
            let col_idx = columns
                .iter()
                .position(|col| col.contains(&id))
                .expect("plot belongs to one column");
            let row_idx = columns[col_idx]
                .iter()
                .position(|p| *p == id)
                .expect("plot belongs to its column");
            let f = self.features[id.0];
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                row_idx,
                col_idx,
                f.vegetation_index,
                f.leaf_angle_density,
                self.truth.value(id)
            ));
        }
        out
    }
}

/// Standardization of raw plot features into GP inputs: locations scaled
/// by the grid extent, leaf features shifted to zero mean and unit
/// variance using the full field table.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureNormalizer {
    row_scale: f64,
    col_scale: f64,
    veg_mean: f64,
    veg_std: f64,
    leaf_mean: f64,
    leaf_std: f64,
}

impl FeatureNormalizer {
    pub fn from_field(field: &Field) -> Self {
        let n = field.n_plots().max(1) as f64;
        let veg_mean = field.features.iter().map(|f| f.vegetation_index).sum::<f64>() / n;
        let leaf_mean = field.features.iter().map(|f| f.leaf_angle_density).sum::<f64>() / n;
        let veg_var = field
            .features
            .iter()
            .map(|f| (f.vegetation_index - veg_mean).powi(2))
            .sum::<f64>()
            / n;
        let leaf_var = field
            .features
            .iter()
            .map(|f| (f.leaf_angle_density - leaf_mean).powi(2))
            .sum::<f64>()
            / n;
        FeatureNormalizer {
            row_scale: (field.grid.height().saturating_sub(1)).max(1) as f64,
            col_scale: (field.grid.width().saturating_sub(1)).max(1) as f64,
            veg_mean,
            veg_std: veg_var.sqrt().max(1e-9),
            leaf_mean,
            leaf_std: leaf_var.sqrt().max(1e-9),
        }
    }

    pub fn feature_vector(&self, field: &Field, plot: PlotId) -> FeatureVector {
        let pos = field.grid.plot_pos(plot);
        let f = field.features[plot.0];
        FeatureVector {
            location: [
                pos.row as f64 / self.row_scale,
                pos.col as f64 / self.col_scale,
            ],
            vegetation_index: (f.vegetation_index - self.veg_mean) / self.veg_std,
            leaf_angle_density: (f.leaf_angle_density - self.leaf_mean) / self.leaf_std,
        }
    }
}

/// Parses the dataset CSV (`row,col,vegetation_index,leaf_angle_density,
/// stalk_height`, 0-based plot coordinates) and synthesizes the standard
/// corridor layout around it. Grid dimensions come from the maximum
/// indices; every cell of the plot rectangle must appear exactly once.
pub fn load_dataset(text: &str) -> Result<Field> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::parse("header", e.to_string()))?
        .clone();
    let want = [
        "row",
        "col",
        "vegetation_index",
        "leaf_angle_density",
        "stalk_height",
    ];
    let mut idx = [0usize; 5];
    for (k, name) in want.iter().enumerate() {
        idx[k] = headers
            .iter()
            .position(|h| h.trim() == *name)
            .ok_or_else(|| Error::parse("header", format!("missing column '{name}'")))?;
    }
    let mut rows: Vec<(usize, usize, f64, f64, f64)> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2; // header is line 1
        let record = record.map_err(|e| Error::parse(format!("row {line}"), e.to_string()))?;
        let get = |k: usize| -> Result<&str> {
            record
                .get(idx[k])
                .ok_or_else(|| Error::parse(format!("row {line}"), "missing field"))
        };
        let parse_usize = |s: &str, name: &str| -> Result<usize> {
            s.trim().parse().map_err(|_| {
                Error::parse(format!("row {line}"), format!("non-numeric {name} '{s}'"))
            })
        };
        let parse_f64 = |s: &str, name: &str| -> Result<f64> {
            let v: f64 = s.trim().parse().map_err(|_| {
                Error::parse(format!("row {line}"), format!("non-numeric {name} '{s}'"))
            })?;
            if !v.is_finite() {
                return Err(Error::parse(
                    format!("row {line}"),
                    format!("non-finite {name}"),
                ));
            }
            Ok(v)
        };
        let r = parse_usize(get(0)?, "row")?;
        let c = parse_usize(get(1)?, "col")?;
        let veg = parse_f64(get(2)?, "vegetation_index")?;
        if !(0.0..=1.0).contains(&veg) {
            return Err(Error::parse(
                format!("row {line}"),
                format!("vegetation_index {veg} outside [0, 1]"),
            ));
        }
        let leaf = parse_f64(get(3)?, "leaf_angle_density")?;
        let height = parse_f64(get(4)?, "stalk_height")?;
        rows.push((r, c, veg, leaf, height));
    }
    if rows.is_empty() {
        return Err(Error::parse("row 2", "dataset has no plots"));
    }
    let plot_rows = rows.iter().map(|r| r.0).max().unwrap() + 1;
    let plot_cols = rows.iter().map(|r| r.1).max().unwrap() + 1;
    let mut seen = vec![false; plot_rows * plot_cols];
    let mut features = vec![
        PlotFeatures {
            vegetation_index: 0.0,
            leaf_angle_density: 0.0
        };
        plot_rows * plot_cols
    ];
    let mut truth = vec![0.0; plot_rows * plot_cols];
    for (r, c, veg, leaf, height) in rows {
        let k = r * plot_cols + c;
        if seen[k] {
            return Err(Error::parse(
                "dataset",
                format!("duplicate plot coordinates ({r}, {c})"),
            ));
        }
        seen[k] = true;
        features[k] = PlotFeatures {
            vegetation_index: veg,
            leaf_angle_density: leaf,
        };
        truth[k] = height;
    }
    if let Some(k) = seen.iter().position(|s| !s) {
        return Err(Error::parse(
            "dataset",
            format!(
                "missing plot ({}, {}) in the {plot_rows}x{plot_cols} rectangle",
                k / plot_cols,
                k % plot_cols
            ),
        ));
    }
    let grid = standard_layout(plot_rows, plot_cols);
    Ok(Field {
        grid,
        features,
        truth: GroundTruthField::new(truth, None)?,
    })
}

fn rescale_to_unit(values: &mut [f64]) {
    rescale_to_band(values, 0.0, 1.0);
}

fn rescale_to_band(values: &mut [f64], low: f64, high: f64) {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    if span < 1e-12 {
        values.iter_mut().for_each(|v| *v = 0.5 * (low + high));
        return;
    }
    let argmin = values.iter().position(|v| *v == min).unwrap();
    let argmax = values.iter().position(|v| *v == max).unwrap();
    for v in values.iter_mut() {
        *v = low + (*v - min) * (high - low) / span;
    }
    // pin the extremes so the band bounds are met exactly
    values[argmin] = low;
    values[argmax] = high;
}

/// Synthesizes a field on the standard layout: vegetation index, leaf
/// angle density and targets are all GP prior samples (the leaf features
/// over location only, the target over the full feature vector), with
/// targets affinely rescaled into `band`. Deterministic per seed.
pub fn generate_synthetic(
    plot_cols: usize,
    plot_rows: usize,
    seed: u64,
    gp_params: &KernelParams,
    band: (f64, f64),
) -> Result<Field> {
    if plot_cols < 2 || plot_rows < 2 {
        return Err(Error::invalid(format!(
            "synthetic fields need at least 2x2 plots, got {plot_rows}x{plot_cols}"
        )));
    }
    if band.0 >= band.1 {
        return Err(Error::invalid(format!(
            "degenerate target band [{}, {}]",
            band.0, band.1
        )));
    }
    let grid = standard_layout(plot_rows, plot_cols);
    attach_synthetic_features(grid, seed, gp_params, band)
}

/// Draws synthetic features and ground truth for an existing grid; used by
/// [`generate_synthetic`] and by tests that build custom ASCII layouts.
pub fn attach_synthetic_features(
    grid: FieldGrid,
    seed: u64,
    gp_params: &KernelParams,
    band: (f64, f64),
) -> Result<Field> {
    let n = grid.n_plots();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let row_scale = (grid.height().saturating_sub(1)).max(1) as f64;
    let col_scale = (grid.width().saturating_sub(1)).max(1) as f64;
    let locs: Vec<FeatureVector> = grid
        .plot_ids()
        .map(|id| {
            let pos = grid.plot_pos(id);
            FeatureVector {
                location: [pos.row as f64 / row_scale, pos.col as f64 / col_scale],
                vegetation_index: 0.0,
                leaf_angle_density: 0.0,
            }
        })
        .collect();
    // smooth spatial fields for the two leaf features
    let spatial = KernelParams::new(1.0, [0.35, 0.35, 1.0, 1.0])?;
    let draw = |pts: &[FeatureVector], params: &KernelParams, rng: &mut ChaCha8Rng| -> Result<Vec<f64>> {
        let z: Vec<f64> = (0..pts.len()).map(|_| rng.sample(StandardNormal)).collect();
        sample_prior(pts, params, &z)
    };
    let mut veg = draw(&locs, &spatial, &mut rng)?;
    rescale_to_unit(&mut veg);
    let mut leaf = draw(&locs, &spatial, &mut rng)?;
    rescale_to_unit(&mut leaf);
    let full: Vec<FeatureVector> = locs
        .iter()
        .enumerate()
        .map(|(i, l)| FeatureVector {
            location: l.location,
            vegetation_index: veg[i],
            leaf_angle_density: leaf[i],
        })
        .collect();
    let mut targets = draw(&full, gp_params, &mut rng)?;
    rescale_to_band(&mut targets, band.0, band.1);
    let features = (0..n)
        .map(|i| PlotFeatures {
            vegetation_index: veg[i],
            leaf_angle_density: leaf[i],
        })
        .collect();
    Ok(Field {
        grid,
        features,
        truth: GroundTruthField::new(targets, Some((band.0, band.1)))?,
    })
}

/// Number of plot columns in the default experiment layout.
pub const DEFAULT_PLOT_COLS: usize = 15;
/// Number of plot rows in the default experiment layout.
pub const DEFAULT_PLOT_ROWS: usize = 25;
/// Default synthetic target band (stalk height, cm).
pub const DEFAULT_BAND: (f64, f64) = (20.0, 85.0);

/// Kernel used to draw synthetic ground truth, over scaled features.
/// The short location scales give the field enough roughness that no
/// sampling strategy can drive the prediction error to zero, which keeps
/// the strategy comparisons meaningful.
pub fn default_synthetic_params() -> KernelParams {
    KernelParams::new(1.0, [0.15, 0.15, 0.6, 0.6]).expect("constants are valid")
}

/// Default field for experiments: the 25x15 layout with synthetic data.
pub fn default_field(seed: u64) -> Result<Field> {
    generate_synthetic(
        DEFAULT_PLOT_COLS,
        DEFAULT_PLOT_ROWS,
        seed,
        &default_synthetic_params(),
        DEFAULT_BAND,
    )
}

/// The agent's default start: the measurement cell of the first plot —
/// the top-left corner of the plot area.
pub fn default_start(grid: &FieldGrid) -> Pos {
    grid.waypoint_for(PlotId(0))
}

/// Uniformly random disjoint train/test split of the plot ids,
/// deterministic per seed.
pub fn test_split(grid: &FieldGrid, n_test: usize, seed: u64) -> Result<(Vec<PlotId>, Vec<PlotId>)> {
    let n = grid.n_plots();
    if n_test >= n {
        return Err(Error::invalid(format!(
            "test size {n_test} must be smaller than the plot count {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test: Vec<usize> = rand::seq::index::sample(&mut rng, n, n_test).into_vec();
    test.sort_unstable();
    let test_set: BTreeSet<usize> = test.iter().copied().collect();
    let train: Vec<PlotId> = (0..n).filter(|i| !test_set.contains(i)).map(PlotId).collect();
    Ok((train, test.into_iter().map(PlotId).collect()))
}

/// Simulated sensor: readings are the ground truth plus Gaussian noise of
/// the sampling mode, drawn from a seeded stream. Zero stds are allowed
/// here (unlike [`crate::gp::NoiseModel`]) so degenerate setups can be
/// simulated in tests.
#[derive(Debug, Clone)]
pub struct SensorSim {
    static_std: f64,
    mobile_std: f64,
    rng: ChaCha8Rng,
}

impl SensorSim {
    pub fn new(static_std: f64, mobile_std: f64, seed: u64) -> Result<Self> {
        if !(static_std.is_finite() && mobile_std.is_finite() && static_std >= 0.0 && mobile_std >= 0.0)
        {
            return Err(Error::invalid("sensor stds must be finite and non-negative"));
        }
        Ok(SensorSim {
            static_std,
            mobile_std,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    fn sample(&mut self, field: &Field, plot: PlotId, std: f64, kind: MeasurementKind) -> Result<Measurement> {
        if plot.0 >= field.n_plots() {
            return Err(Error::invalid(format!("unknown {plot}")));
        }
        let truth = field.truth.value(plot);
        let dist = Normal::new(truth, std)
            .map_err(|e| Error::invalid(format!("invalid sensor distribution: {e}")))?;
        Ok(Measurement {
            plot,
            value: dist.sample(&mut self.rng),
            kind,
        })
    }

    /// Accurate reading taken while stopped at the plot's measurement cell.
    pub fn sample_static(&mut self, field: &Field, plot: PlotId) -> Result<Measurement> {
        self.sample(field, plot, self.static_std, MeasurementKind::Static)
    }

    /// Noisy reading taken while driving past the plot.
    pub fn sample_mobile(&mut self, field: &Field, plot: PlotId) -> Result<Measurement> {
        self.sample(field, plot, self.mobile_std, MeasurementKind::Mobile)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_grid_parses() {
        let grid = load_grid("P.P\nP.P\nP.P\n").unwrap();
        assert_eq!(grid.n_plots(), 6);
        assert_eq!(grid.plot_columns().len(), 2);
        // exactly one corridor column
        let corridor_cols: Vec<usize> = (0..grid.width())
            .filter(|&c| (0..grid.height()).all(|r| grid.is_free(Pos::new(r, c))))
            .collect();
        assert_eq!(corridor_cols, vec![1]);
        // left plots are measured from the East, right plots from the West
        assert_eq!(grid.waypoint_for(PlotId(0)), Pos::new(0, 1));
        assert_eq!(grid.waypoint_for(PlotId(1)), Pos::new(0, 1));
    }

    #[test]
    fn horizontally_adjacent_plots_rejected() {
        let err = load_grid(".PP.\n....\n").unwrap_err();
        assert!(err.to_string().contains("adjacent"), "{err}");
    }

    #[test]
    fn unknown_character_rejected_with_position() {
        let err = load_grid("P.P\nP.X\n").unwrap_err();
        assert!(err.to_string().contains("line 2, col 3"), "{err}");
    }

    #[test]
    fn ragged_rows_rejected() {
        let err = load_grid("P.P\nP.\n").unwrap_err();
        assert!(err.to_string().contains("ragged"), "{err}");
    }

    #[test]
    fn disconnected_free_space_rejected() {
        let err = load_grid(".#.\n.#.\n").unwrap_err();
        assert!(err.to_string().contains("unreachable"), "{err}");
    }

    #[test]
    fn default_layout_has_375_plots() {
        let grid = standard_layout(DEFAULT_PLOT_ROWS, DEFAULT_PLOT_COLS);
        assert_eq!(grid.n_plots(), 375);
        assert_eq!(grid.width(), 31);
        assert_eq!(grid.height(), 27);
        assert_eq!(grid.plot_columns().len(), 15);
        assert_eq!(default_start(&grid), Pos::new(1, 0));
    }

    #[test]
    fn serialize_round_trips() {
        let grid = standard_layout(4, 3);
        let text = serialize_grid(&grid);
        let reloaded = load_grid(&text).unwrap();
        assert_eq!(grid, reloaded);
        // and an ASCII grid with obstacles
        let custom = ".......\n#.P.P.#\n#.P.P.#\n.......\n";
        let grid2 = load_grid(custom).unwrap();
        assert_eq!(serialize_grid(&grid2), custom);
    }

    #[test]
    fn plot_ids_are_row_major() {
        let grid = standard_layout(2, 2);
        assert_eq!(grid.plot_pos(PlotId(0)), Pos::new(1, 1));
        assert_eq!(grid.plot_pos(PlotId(1)), Pos::new(1, 3));
        assert_eq!(grid.plot_pos(PlotId(2)), Pos::new(2, 1));
        assert_eq!(grid.plot_pos(PlotId(3)), Pos::new(2, 3));
    }

    #[test]
    fn dataset_round_trip_recovers_dimensions() {
        let field = default_field(3).unwrap();
        let csv = field.to_dataset_csv();
        let loaded = load_dataset(&csv).unwrap();
        assert_eq!(loaded.grid.n_plots(), 375);
        assert_eq!(loaded.grid, field.grid);
        for id in field.grid.plot_ids() {
            assert!((loaded.truth.value(id) - field.truth.value(id)).abs() < 1e-12);
        }
    }

    #[test]
    fn toy_dataset_parses() {
        let text = "row,col,vegetation_index,leaf_angle_density,stalk_height\n\
                    0,0,0.5,1.2,30\n0,1,0.6,1.1,40\n1,0,0.7,0.9,50\n1,1,0.8,0.8,60\n";
        let field = load_dataset(text).unwrap();
        assert_eq!(field.n_plots(), 4);
        assert_eq!(field.grid.plot_columns().len(), 2);
        assert_eq!(field.truth.value(PlotId(3)), 60.0);
    }

    #[test]
    fn dataset_rejects_duplicates_missing_and_garbage() {
        let dup = "row,col,vegetation_index,leaf_angle_density,stalk_height\n\
                   0,0,0.5,1.2,30\n0,0,0.6,1.1,40\n";
        let err = load_dataset(dup).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
        assert!(err.to_string().contains("(0, 0)"), "{err}");

        let missing = "row,col,vegetation_index,leaf_angle_density,stalk_height\n\
                       0,0,0.5,1.2,30\n1,1,0.6,1.1,40\n";
        let err = load_dataset(missing).unwrap_err();
        assert!(err.to_string().contains("missing plot"), "{err}");

        let garbage = "row,col,vegetation_index,leaf_angle_density,stalk_height\n\
                       0,0,0.5,abc,30\n";
        let err = load_dataset(garbage).unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");
    }

    #[test]
    fn synthetic_fields_are_deterministic() {
        let a = generate_synthetic(4, 5, 99, &default_synthetic_params(), (20.0, 85.0)).unwrap();
        let b = generate_synthetic(4, 5, 99, &default_synthetic_params(), (20.0, 85.0)).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(4, 5, 100, &default_synthetic_params(), (20.0, 85.0)).unwrap();
        assert_ne!(a.truth, c.truth);
    }

    #[test]
    fn synthetic_band_is_hit_exactly() {
        let f = generate_synthetic(5, 6, 1, &default_synthetic_params(), (20.0, 85.0)).unwrap();
        let min = f.truth.values().iter().copied().fold(f64::INFINITY, f64::min);
        let max = f.truth.values().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(min, 20.0);
        assert_eq!(max, 85.0);
        assert!(f
            .features
            .iter()
            .all(|p| (0.0..=1.0).contains(&p.vegetation_index)));
    }

    #[test]
    fn synthetic_rejects_degenerate_inputs() {
        assert!(generate_synthetic(1, 5, 0, &default_synthetic_params(), (20.0, 85.0)).is_err());
        assert!(generate_synthetic(5, 5, 0, &default_synthetic_params(), (85.0, 20.0)).is_err());
    }

    #[test]
    fn long_length_scale_raises_lag1_autocorrelation() {
        // sample-correlation oracle: vertically adjacent plots should be
        // more correlated when the location length scale is larger
        let smooth = KernelParams::new(1.0, [0.6, 0.6, 5.0, 5.0]).unwrap();
        let rough = KernelParams::new(1.0, [0.02, 0.02, 5.0, 5.0]).unwrap();
        let mut mean_smooth = 0.0;
        let mut mean_rough = 0.0;
        for seed in 0..10 {
            mean_smooth += lag1_autocorr(&generate_synthetic(6, 10, seed, &smooth, (0.0, 1.0)).unwrap());
            mean_rough += lag1_autocorr(&generate_synthetic(6, 10, seed, &rough, (0.0, 1.0)).unwrap());
        }
        assert!(
            mean_smooth > mean_rough,
            "smooth {mean_smooth} rough {mean_rough}"
        );
    }

    fn lag1_autocorr(field: &Field) -> f64 {
        let mut pairs: Vec<(f64, f64)> = Vec::new();
        for col in field.grid.plot_columns() {
            for w in col.windows(2) {
                pairs.push((field.truth.value(w[0]), field.truth.value(w[1])));
            }
        }
        let n = pairs.len() as f64;
        let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
        let cov = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / n;
        let sx = (pairs.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>() / n).sqrt();
        let sy = (pairs.iter().map(|p| (p.1 - my).powi(2)).sum::<f64>() / n).sqrt();
        cov / (sx * sy).max(1e-12)
    }

    #[test]
    fn zero_noise_sensor_returns_truth() {
        let field = default_field(0).unwrap();
        let mut sim = SensorSim::new(0.0, 0.0, 7).unwrap();
        let m = sim.sample_static(&field, PlotId(10)).unwrap();
        assert_eq!(m.value, field.truth.value(PlotId(10)));
        assert_eq!(m.kind, MeasurementKind::Static);
        let m = sim.sample_mobile(&field, PlotId(10)).unwrap();
        assert_eq!(m.value, field.truth.value(PlotId(10)));
        assert_eq!(m.kind, MeasurementKind::Mobile);
    }

    #[test]
    fn sensor_noise_matches_configured_stds() {
        let field = default_field(0).unwrap();
        let mut sim = SensorSim::new(0.5, 2.5, 123).unwrap();
        let truth = field.truth.value(PlotId(0));
        let static_std = empirical_std(
            (0..10_000).map(|_| sim.sample_static(&field, PlotId(0)).unwrap().value - truth),
        );
        assert!((static_std - 0.5).abs() < 0.02, "static std {static_std}");
        let mobile_std = empirical_std(
            (0..10_000).map(|_| sim.sample_mobile(&field, PlotId(0)).unwrap().value - truth),
        );
        assert!((mobile_std - 2.5).abs() < 0.1, "mobile std {mobile_std}");
    }

    fn empirical_std(values: impl Iterator<Item = f64>) -> f64 {
        let vals: Vec<f64> = values.collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    }

    #[test]
    fn sensor_streams_are_reproducible() {
        let field = default_field(0).unwrap();
        let read = |seed: u64| -> Vec<f64> {
            let mut sim = SensorSim::new(0.5, 2.5, seed).unwrap();
            (0..20)
                .map(|i| {
                    if i % 2 == 0 {
                        sim.sample_static(&field, PlotId(i)).unwrap().value
                    } else {
                        sim.sample_mobile(&field, PlotId(i)).unwrap().value
                    }
                })
                .collect()
        };
        assert_eq!(read(42), read(42));
        assert_ne!(read(42), read(43));
    }

    #[test]
    fn sensor_rejects_unknown_plot() {
        let field = default_field(0).unwrap();
        let mut sim = SensorSim::new(0.5, 2.5, 1).unwrap();
        assert!(sim.sample_static(&field, PlotId(9999)).is_err());
    }

    #[test]
    fn split_is_disjoint_and_deterministic() {
        let grid = standard_layout(DEFAULT_PLOT_ROWS, DEFAULT_PLOT_COLS);
        let (train, test) = test_split(&grid, 40, 5).unwrap();
        assert_eq!(test.len(), 40);
        assert_eq!(train.len(), 335);
        let t: BTreeSet<_> = test.iter().collect();
        assert!(train.iter().all(|p| !t.contains(p)));
        let (train2, test2) = test_split(&grid, 40, 5).unwrap();
        assert_eq!(train, train2);
        assert_eq!(test, test2);
        let (_, test3) = test_split(&grid, 40, 6).unwrap();
        assert_ne!(test, test3);
    }

    #[test]
    fn split_edge_cases() {
        let grid = standard_layout(3, 2);
        let (train, test) = test_split(&grid, 0, 0).unwrap();
        assert!(test.is_empty());
        assert_eq!(train.len(), 6);
        assert!(test_split(&grid, 6, 0).is_err());
    }

    #[test]
    fn normalizer_standardizes_leaf_features() {
        let field = default_field(11).unwrap();
        let norm = FeatureNormalizer::from_field(&field);
        let n = field.n_plots() as f64;
        let feats: Vec<FeatureVector> = field
            .grid
            .plot_ids()
            .map(|id| norm.feature_vector(&field, id))
            .collect();
        let mean_veg = feats.iter().map(|f| f.vegetation_index).sum::<f64>() / n;
        let var_veg = feats
            .iter()
            .map(|f| (f.vegetation_index - mean_veg).powi(2))
            .sum::<f64>()
            / n;
        assert!(mean_veg.abs() < 1e-9);
        assert!((var_veg - 1.0).abs() < 1e-9);
        assert!(feats
            .iter()
            .all(|f| f.location[0] >= 0.0 && f.location[0] <= 1.0));
    }
}
