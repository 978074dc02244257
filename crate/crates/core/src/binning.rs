//! Temporal-spatial bins and the Eulerian fields assembled on them.
//!
//! Bins are half-open `[t_k, t_k + dt) x [x_l, x_l + dx)`; the last bin in
//! each direction is closed so every point inside the grid maps to exactly
//! one bin.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::sig12;
use crate::stats::ErrorStats;
use crate::trajectory::TrajectoryCorpus;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BinGridSpec {
    pub dt_bin: f64,
    pub dx_bin: f64,
}

impl Default for BinGridSpec {
    fn default() -> Self {
        Self {
            dt_bin: 4.0,
            dx_bin: 400.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinGrid {
    pub t0: f64,
    pub x0: f64,
    pub dt_bin: f64,
    pub dx_bin: f64,
    pub n_t: usize,
    pub n_x: usize,
}

impl BinGrid {
    pub fn new(t0: f64, x0: f64, dt_bin: f64, dx_bin: f64, n_t: usize, n_x: usize) -> Result<Self> {
        if !(dt_bin > 0.0 && dx_bin > 0.0 && dt_bin.is_finite() && dx_bin.is_finite()) {
            return Err(Error::invalid("bin grid", "bin sizes must be positive"));
        }
        if n_t == 0 || n_x == 0 {
            return Err(Error::invalid(
                "bin grid",
                "grid must have at least one bin",
            ));
        }
        Ok(Self {
            t0,
            x0,
            dt_bin,
            dx_bin,
            n_t,
            n_x,
        })
    }

    /// Smallest grid anchored at the lower extents that covers both ranges.
    pub fn covering(
        time_extent: [f64; 2],
        road_extent: [f64; 2],
        spec: BinGridSpec,
    ) -> Result<Self> {
        let count = |lo: f64, hi: f64, d: f64| (((hi - lo) / d).ceil() as usize).max(1);
        Self::new(
            time_extent[0],
            road_extent[0],
            spec.dt_bin,
            spec.dx_bin,
            count(time_extent[0], time_extent[1], spec.dt_bin),
            count(road_extent[0], road_extent[1], spec.dx_bin),
        )
    }

    pub fn for_corpus(corpus: &TrajectoryCorpus, spec: BinGridSpec) -> Result<Self> {
        Self::covering(corpus.time_extent(), corpus.road_extent(), spec)
    }

    pub fn len(&self) -> usize {
        self.n_t * self.n_x
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn t_center(&self, k: usize) -> f64 {
        self.t0 + (k as f64 + 0.5) * self.dt_bin
    }

    pub fn x_center(&self, l: usize) -> f64 {
        self.x0 + (l as f64 + 0.5) * self.dx_bin
    }

    /// Bin `(k, l)` containing `(t, x)`, or `None` outside the grid.
    pub fn locate(&self, t: f64, x: f64) -> Option<(usize, usize)> {
        Some((
            axis_index(t, self.t0, self.dt_bin, self.n_t)?,
            axis_index(x, self.x0, self.dx_bin, self.n_x)?,
        ))
    }

    fn flat(&self, k: usize, l: usize) -> usize {
        k * self.n_x + l
    }
}

fn axis_index(v: f64, origin: f64, width: f64, n: usize) -> Option<usize> {
    let end = origin + n as f64 * width;
    if !(v >= origin && v <= end) {
        return None;
    }
    let i = ((v - origin) / width).floor() as usize;
    Some(i.min(n - 1))
}

/// Scalar per bin; a value is present exactly when the bin is active.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinField {
    grid: BinGrid,
    values: Vec<Option<f64>>,
}

impl BinField {
    pub fn inactive(grid: BinGrid) -> Self {
        Self {
            grid,
            values: vec![None; grid.len()],
        }
    }

    pub fn grid(&self) -> &BinGrid {
        &self.grid
    }

    pub fn get(&self, k: usize, l: usize) -> Option<f64> {
        self.values[self.grid.flat(k, l)]
    }

    pub fn set(&mut self, k: usize, l: usize, value: Option<f64>) {
        let i = self.grid.flat(k, l);
        self.values[i] = value;
    }

    pub fn is_active(&self, k: usize, l: usize) -> bool {
        self.get(k, l).is_some()
    }

    pub fn active_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    /// `((k, l), value)` in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), Option<f64>)> + '_ {
        let n_x = self.grid.n_x;
        self.values
            .iter()
            .enumerate()
            .map(move |(i, v)| ((i / n_x, i % n_x), *v))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> BinField {
        BinField {
            grid: self.grid,
            values: self.values.iter().map(|v| v.map(&f)).collect(),
        }
    }

    /// Writes `k,l,t_center,x_center,value,active` rows with a header.
    pub fn write_csv<W: Write + ?Sized>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "k,l,t_center,x_center,value,active")?;
        for ((k, l), v) in self.iter() {
            writeln!(
                out,
                "{k},{l},{},{},{},{}",
                sig12(self.grid.t_center(k)),
                sig12(self.grid.x_center(l)),
                v.map(sig12).unwrap_or_default(),
                u8::from(v.is_some())
            )?;
        }
        Ok(())
    }

    /// Dense `n_t x n_x` matrix (inactive bins as `null`) plus the grid.
    pub fn to_json_matrix(&self) -> serde_json::Value {
        let rows: Vec<Vec<Option<f64>>> = self
            .values
            .chunks(self.grid.n_x)
            .map(|r| r.to_vec())
            .collect();
        serde_json::json!({ "grid": self.grid, "values": rows })
    }
}

/// A scalar estimate attached to a point in the time-space plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub time: f64,
    pub position: f64,
    pub value: f64,
}

/// Distinct vehicles present in each bin divided by the bin length (veh/ft).
/// Every bin is active.
pub fn ground_truth_density(corpus: &TrajectoryCorpus, grid: &BinGrid) -> BinField {
    let mut counts = vec![0usize; grid.len()];
    for traj in corpus.trajectories() {
        let bins: BTreeSet<usize> = traj
            .samples()
            .iter()
            .filter_map(|s| grid.locate(s.time, s.position))
            .map(|(k, l)| grid.flat(k, l))
            .collect();
        for b in bins {
            counts[b] += 1;
        }
    }
    BinField {
        grid: *grid,
        values: counts
            .into_iter()
            .map(|c| Some(c as f64 / grid.dx_bin))
            .collect(),
    }
}

/// Arithmetic mean of the observations falling in each bin; empty bins are
/// inactive.
pub fn bin_mean_estimate<'a>(
    points: impl IntoIterator<Item = &'a Observation>,
    grid: &BinGrid,
) -> BinField {
    let mut sum = vec![0.0; grid.len()];
    let mut n = vec![0usize; grid.len()];
    for p in points {
        if let Some((k, l)) = grid.locate(p.time, p.position) {
            let i = grid.flat(k, l);
            sum[i] += p.value;
            n[i] += 1;
        }
    }
    BinField {
        grid: *grid,
        values: sum
            .into_iter()
            .zip(n)
            .map(|(s, c)| (c > 0).then(|| s / c as f64))
            .collect(),
    }
}

fn check_same_grid(a: &BinField, b: &BinField) -> Result<()> {
    if a.grid != b.grid {
        return Err(Error::invalid(
            "bin fields",
            "fields live on different grids",
        ));
    }
    Ok(())
}

/// Density times mean velocity on bins active in both fields (veh/s).
pub fn bin_flow(density: &BinField, velocity: &BinField) -> Result<BinField> {
    check_same_grid(density, velocity)?;
    Ok(BinField {
        grid: density.grid,
        values: density
            .values
            .iter()
            .zip(&velocity.values)
            .map(|(r, v)| Some((*r)? * (*v)?))
            .collect(),
    })
}

/// Fraction of bins that are active.
pub fn coverage_rate(field: &BinField) -> f64 {
    field.active_count() as f64 / field.grid.len() as f64
}

/// A point carrying both emission rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateObservation {
    pub time: f64,
    pub position: f64,
    pub hc: f64,
    pub fc: f64,
}

/// Whole-segment emission totals for one time slice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentRates {
    pub k: usize,
    pub t_center: f64,
    /// g/h
    pub hc_total: f64,
    /// L/h
    pub fc_total: f64,
}

/// For each time slice, sums over space of (mean rate in bin) x (vehicles
/// in bin), the vehicle count being `density * dx_bin`. Bins lacking either a
/// density or any rate observation contribute nothing.
pub fn aggregate_segment_rates(
    grid: &BinGrid,
    density: &BinField,
    rates: &[RateObservation],
) -> Result<Vec<SegmentRates>> {
    if density.grid != *grid {
        return Err(Error::invalid(
            "bin fields",
            "density field is on a different grid",
        ));
    }
    let to_obs = |f: fn(&RateObservation) -> f64| -> Vec<Observation> {
        rates
            .iter()
            .map(|r| Observation {
                time: r.time,
                position: r.position,
                value: f(r),
            })
            .collect()
    };
    let hc = bin_mean_estimate(&to_obs(|r| r.hc), grid);
    let fc = bin_mean_estimate(&to_obs(|r| r.fc), grid);
    Ok((0..grid.n_t)
        .map(|k| {
            let (mut hc_total, mut fc_total) = (0.0, 0.0);
            for l in 0..grid.n_x {
                if let Some(rho) = density.get(k, l) {
                    let vehicles = rho * grid.dx_bin;
                    hc_total += hc.get(k, l).map_or(0.0, |r| r * vehicles);
                    fc_total += fc.get(k, l).map_or(0.0, |r| r * vehicles);
                }
            }
            SegmentRates {
                k,
                t_center: grid.t_center(k),
                hc_total,
                fc_total,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldError {
    pub stats: ErrorStats,
    /// Jointly active bins skipped because the reference value is zero.
    pub zero_truth_bins: usize,
}

/// Mean relative error `|truth - est| / |truth|` over bins active in both.
pub fn field_error(truth: &BinField, estimate: &BinField) -> Result<FieldError> {
    check_same_grid(truth, estimate)?;
    let mut errs = Vec::new();
    let mut zero_truth_bins = 0;
    for (t, e) in truth.values.iter().zip(&estimate.values) {
        if let (Some(t), Some(e)) = (t, e) {
            if *t == 0.0 {
                zero_truth_bins += 1;
            } else {
                errs.push((t - e).abs() / t.abs());
            }
        }
    }
    let stats = ErrorStats::from_values(&errs)
        .ok_or_else(|| Error::InsufficientData("no comparable bins".into()))?;
    Ok(FieldError {
        stats,
        zero_truth_bins,
    })
}
