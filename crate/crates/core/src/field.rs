//! Dense speed fields, sparse fixed-sensor observations and min-max normalization.
//!
//! Grid convention: cell `c` of `n_cells` sits at normalized position
//! `c / (n_cells - 1)` and step `k` of `n_steps` at `k / (n_steps - 1)`, so the
//! grid spans the unit square exactly. `x_min`/`x_max` are the physical
//! positions of the first and last cell.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Percentile used for the free-flow speed estimate.
pub const FREE_FLOW_PERCENTILE: f64 = 0.95;

#[derive(Debug, Clone, PartialEq)]
pub struct SpeedField {
    /// Speeds in mph, indexed `(cell, step)`.
    pub values: Array2<f64>,
    /// ft
    pub x_min: f64,
    /// ft
    pub x_max: f64,
    /// s
    pub t_range: f64,
}

impl SpeedField {
    pub fn new(values: Array2<f64>, x_min: f64, x_max: f64, t_range: f64) -> Result<Self> {
        let (n_cells, n_steps) = values.dim();
        if n_cells < 2 || n_steps < 2 {
            return Err(Error::InvalidInput(format!(
                "speed field needs at least 2x2 grid, got {n_cells}x{n_steps}"
            )));
        }
        if !(x_max > x_min) {
            return Err(Error::InvalidInput(format!("x_max ({x_max}) must exceed x_min ({x_min})")));
        }
        if !(t_range > 0.0) {
            return Err(Error::InvalidInput(format!("t_range must be positive, got {t_range}")));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidInput(format!("speeds must be finite and >= 0, found {bad}")));
        }
        Ok(Self { values, x_min, x_max, t_range })
    }

    pub fn n_cells(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_steps(&self) -> usize {
        self.values.ncols()
    }

    pub fn x_range(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn cell_position(&self, cell: usize) -> f64 {
        cell as f64 / (self.n_cells() - 1) as f64
    }

    pub fn step_time(&self, step: usize) -> f64 {
        step as f64 / (self.n_steps() - 1) as f64
    }

    /// All grid points in normalized coordinates, row-major over `(cell, step)`.
    pub fn grid_points(&self) -> Array2<f64> {
        grid_points(self.n_cells(), self.n_steps())
    }

    /// Reads the `# x_min_ft,x_max_ft,t_range_s,n_cells,n_steps` CSV layout.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut lines = BufReader::new(reader).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty speed field file".into()))??;
        let header = header
            .trim()
            .strip_prefix('#')
            .ok_or_else(|| Error::Parse("missing '#' metadata header".into()))?;
        let meta: Vec<&str> = header.split(',').map(str::trim).collect();
        if meta.len() != 5 {
            return Err(Error::Parse(format!("metadata header needs 5 fields, got {}", meta.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("{s:?}: {e}")));
        let int = |s: &str| s.parse::<usize>().map_err(|e| Error::Parse(format!("{s:?}: {e}")));
        let (x_min, x_max, t_range) = (num(meta[0])?, num(meta[1])?, num(meta[2])?);
        let (n_cells, n_steps) = (int(meta[3])?, int(meta[4])?);

        let mut values = Array2::zeros((n_cells, n_steps));
        let mut row = 0;
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            if row >= n_cells {
                return Err(Error::Parse(format!("more than {n_cells} data rows")));
            }
            let mut col = 0;
            for tok in line.split(',') {
                if col >= n_steps {
                    return Err(Error::Parse(format!("row {row} has more than {n_steps} values")));
                }
                values[[row, col]] = num(tok.trim())?;
                col += 1;
            }
            if col != n_steps {
                return Err(Error::Parse(format!("row {row} has {col} values, expected {n_steps}")));
            }
            row += 1;
        }
        if row != n_cells {
            return Err(Error::Parse(format!("found {row} data rows, expected {n_cells}")));
        }
        Self::new(values, x_min, x_max, t_range)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "# {},{},{},{},{}",
            self.x_min,
            self.x_max,
            self.t_range,
            self.n_cells(),
            self.n_steps()
        )?;
        let mut line = String::new();
        for row in self.values.rows() {
            line.clear();
            for (k, v) in row.iter().enumerate() {
                if k > 0 {
                    line.push(',');
                }
                write!(line, "{v}").expect("write to string");
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(file)
    }
}

/// Normalized `(x, t)` coordinates of an `n_cells x n_steps` grid, row-major.
pub fn grid_points(n_cells: usize, n_steps: usize) -> Array2<f64> {
    let mut pts = Array2::zeros((n_cells * n_steps, 2));
    let dx = 1.0 / (n_cells.max(2) - 1) as f64;
    let dt = 1.0 / (n_steps.max(2) - 1) as f64;
    for c in 0..n_cells {
        for k in 0..n_steps {
            let i = c * n_steps + k;
            pts[[i, 0]] = c as f64 * dx;
            pts[[i, 1]] = k as f64 * dt;
        }
    }
    pts
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub u_min: f64,
    pub u_max: f64,
    pub v_f: f64,
}

impl NormStats {
    pub fn new(u_min: f64, u_max: f64, v_f: f64) -> Result<Self> {
        if !(u_max > u_min) {
            return Err(Error::DegenerateField(u_min));
        }
        if !(u_min..=u_max).contains(&v_f) {
            return Err(Error::InvalidInput(format!("v_f {v_f} outside [{u_min}, {u_max}]")));
        }
        Ok(Self { u_min, u_max, v_f })
    }

    pub fn span(&self) -> f64 {
        self.u_max - self.u_min
    }

    #[inline]
    pub fn normalize(&self, u: f64) -> f64 {
        (u - self.u_min) / (self.u_max - self.u_min)
    }

    #[inline]
    pub fn denormalize(&self, u_hat: f64) -> f64 {
        self.u_min + u_hat * (self.u_max - self.u_min)
    }
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(values: &[f64], fraction: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("percentile of empty sample"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidInput(format!("percentile fraction {fraction} not in (0, 1]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = fraction * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    Ok(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

pub fn compute_stats(field: &SpeedField, fraction: f64) -> Result<NormStats> {
    let vals: Vec<f64> = field.values.iter().copied().collect();
    let u_min = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let u_max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if u_max == u_min {
        return Err(Error::DegenerateField(u_min));
    }
    let v_f = percentile(&vals, fraction)?;
    NormStats::new(u_min, u_max, v_f)
}

pub fn normalize(field: &SpeedField, stats: &NormStats) -> Result<Array2<f64>> {
    if !(stats.u_max > stats.u_min) {
        return Err(Error::DegenerateField(stats.u_min));
    }
    Ok(field.values.mapv(|u| stats.normalize(u)))
}

pub fn denormalize(values: &Array2<f64>, stats: &NormStats) -> Array2<f64> {
    values.mapv(|u| stats.denormalize(u))
}

/// Equally spaced interior sensor cells: `linspace(0, n_cells-1, n_s+2)` with
/// the endpoints dropped and ties rounded half-to-even.
pub fn place_sensors(n_cells: usize, n_s: usize) -> Result<Vec<usize>> {
    if n_s == 0 {
        return Err(Error::InvalidInput("need at least one sensor".into()));
    }
    if n_cells < n_s + 2 {
        return Err(Error::InvalidInput(format!(
            "{n_s} interior sensors need at least {} cells, got {n_cells}",
            n_s + 2
        )));
    }
    let step = (n_cells - 1) as f64 / (n_s + 1) as f64;
    let cells: Vec<usize> = (1..=n_s)
        .map(|i| (i as f64 * step).round_ties_even() as usize)
        .collect();
    let valid = cells.windows(2).all(|w| w[0] < w[1])
        && cells.first().is_some_and(|&c| c > 0)
        && cells.last().is_some_and(|&c| c < n_cells - 1);
    if !valid {
        return Err(Error::SensorCollision { n_cells, n_sensors: n_s });
    }
    Ok(cells)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub sensors: Vec<usize>,
    pub stats: NormStats,
    /// `(cell, step, mph)` sorted by `(cell, step)`.
    pub records: Vec<(usize, usize, f64)>,
    pub n_cells: usize,
    pub n_steps: usize,
}

impl ObservationSet {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Normalized `(x, t)` points and normalized speeds of every record.
    pub fn normalized(&self) -> (Array2<f64>, Array1<f64>) {
        let n = self.records.len();
        let mut pts = Array2::zeros((n, 2));
        let mut u = Array1::zeros(n);
        let dx = 1.0 / (self.n_cells - 1) as f64;
        let dt = 1.0 / (self.n_steps - 1) as f64;
        for (i, &(c, k, mph)) in self.records.iter().enumerate() {
            pts[[i, 0]] = c as f64 * dx;
            pts[[i, 1]] = k as f64 * dt;
            u[i] = self.stats.normalize(mph);
        }
        (pts, u)
    }

    /// Time series of one sensor in record order.
    pub fn series(&self, cell: usize) -> Vec<(usize, f64)> {
        self.records
            .iter()
            .filter(|r| r.0 == cell)
            .map(|&(_, k, u)| (k, u))
            .collect()
    }

    /// Copy with every speed multiplied by `factor` (stats scaled alike).
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for r in &mut out.records {
            r.2 *= factor;
        }
        out.stats.u_min *= factor;
        out.stats.u_max *= factor;
        out.stats.v_f *= factor;
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let obs: Self = serde_json::from_reader(BufReader::new(std::fs::File::open(path)?))?;
        Ok(obs)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, self)?;
        Ok(())
    }
}

/// One record per (sensor, step); normalization stats come from the full field.
pub fn extract_observations(field: &SpeedField, sensors: &[usize]) -> Result<ObservationSet> {
    let stats = compute_stats(field, FREE_FLOW_PERCENTILE)?;
    extract_observations_with_stats(field, sensors, stats)
}

pub fn extract_observations_with_stats(
    field: &SpeedField,
    sensors: &[usize],
    stats: NormStats,
) -> Result<ObservationSet> {
    let n_cells = field.n_cells();
    if let Some(&bad) = sensors.iter().find(|&&c| c == 0 || c >= n_cells - 1) {
        return Err(Error::InvalidInput(format!("sensor cell {bad} is not interior to {n_cells} cells")));
    }
    if sensors.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput("sensor cells must be strictly increasing".into()));
    }
    let mut records = Vec::with_capacity(sensors.len() * field.n_steps());
    for &c in sensors {
        for (k, &u) in field.values.row(c).iter().enumerate() {
            records.push((c, k, u));
        }
    }
    Ok(ObservationSet {
        sensors: sensors.to_vec(),
        stats,
        records,
        n_cells,
        n_steps: field.n_steps(),
    })
}
