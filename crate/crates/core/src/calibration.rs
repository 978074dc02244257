//! Density-velocity scatter from binned trajectories and the congested-region
//! envelope fit.

use std::collections::{BTreeSet, HashSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::binning::{bin_mean_estimate, ground_truth_density, BinGrid, Observation};
use crate::error::{Error, Result};
use crate::format::sig12;
use crate::kinematics::kinematic_profile;
use crate::ptm::PtmParams;
use crate::stats::percentile_nearest_rank;
use crate::trajectory::{LaneFilter, TrajectoryCorpus};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    /// veh/ft
    pub rho: f64,
    /// ft/s
    pub v_mean: f64,
    /// veh/s
    pub flow: f64,
}

impl ScatterPoint {
    pub fn new(rho: f64, v_mean: f64) -> Self {
        Self {
            rho,
            v_mean,
            flow: rho * v_mean,
        }
    }
}

/// One point per bin holding at least one vehicle and one velocity estimate:
/// counted density, mean central velocity, and their product.
pub fn build_scatter(
    corpus: &TrajectoryCorpus,
    grid: &BinGrid,
    lanes: &LaneFilter,
) -> Vec<ScatterPoint> {
    let keep: HashSet<&str> = corpus
        .trajectories()
        .iter()
        .filter(|t| lanes.accepts(t.lane()))
        .map(|t| t.vehicle_id())
        .collect();
    let corpus = corpus.subset(&keep);
    let density = ground_truth_density(&corpus, grid);
    let speeds: Vec<Observation> = corpus
        .trajectories()
        .iter()
        .flat_map(kinematic_profile)
        .map(|p| Observation {
            time: p.time,
            position: p.position,
            value: p.v_central,
        })
        .collect();
    let velocity = bin_mean_estimate(&speeds, grid);
    density
        .iter()
        .filter_map(|((k, l), rho)| {
            let rho = rho.filter(|r| *r > 0.0)?;
            Some(ScatterPoint::new(rho, velocity.get(k, l)?))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Upper,
    Lower,
}

/// `(A +- B)(rho_jam - rho)`.
pub fn envelope_velocity(params: &PtmParams, rho: f64, side: Side) -> f64 {
    let slope = match side {
        Side::Upper => params.a + params.b,
        Side::Lower => params.a - params.b,
    };
    slope * (params.rho_jam - rho)
}

/// `(A +- B)(rho_jam - rho) rho`.
pub fn envelope_flow(params: &PtmParams, rho: f64, side: Side) -> f64 {
    envelope_velocity(params, rho, side) * rho
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitOptions {
    /// Points with `rho` at or above this are treated as congested (veh/ft).
    pub congestion_threshold: f64,
    /// Quantile of the normalized deviations used for `B`.
    pub percentile: f64,
    pub min_points: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            congestion_threshold: 0.035,
            percentile: 0.98,
            min_points: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeFit {
    /// Fitted `A`, `B`, `rho_jam`; `relax` copied from the base parameters.
    pub params: PtmParams,
    pub intercept: f64,
    pub slope: f64,
    pub congested_points: usize,
    /// Congested points at or beyond the fitted jam density, left out of `B`.
    pub beyond_jam_points: usize,
    /// Fraction of congested points inside the fitted region.
    pub inside_fraction: f64,
}

/// Least-squares line `v = c0 + c1 rho` through the congested points gives
/// `A = -c1` and `rho_jam = c0 / A`; `B` is the chosen percentile of
/// `|v - A(rho_jam - rho)| / (rho_jam - rho)`.
pub fn fit_envelopes(
    scatter: &[ScatterPoint],
    base: &PtmParams,
    options: &FitOptions,
) -> Result<EnvelopeFit> {
    let congested: Vec<&ScatterPoint> = scatter
        .iter()
        .filter(|p| p.rho >= options.congestion_threshold)
        .collect();
    if congested.len() < options.min_points.max(2) {
        return Err(Error::InsufficientData(format!(
            "{} congested points, need {}",
            congested.len(),
            options.min_points.max(2)
        )));
    }
    let n = congested.len() as f64;
    let mean_r = congested.iter().map(|p| p.rho).sum::<f64>() / n;
    let mean_v = congested.iter().map(|p| p.v_mean).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for p in &congested {
        sxy += (p.rho - mean_r) * (p.v_mean - mean_v);
        sxx += (p.rho - mean_r).powi(2);
    }
    if sxx == 0.0 {
        return Err(Error::InsufficientData(
            "congested densities are all equal".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = mean_v - slope * mean_r;
    if slope >= 0.0 {
        return Err(Error::NonCongested { slope });
    }
    let a = -slope;
    let rho_jam = intercept / a;

    let deviations: Vec<f64> = congested
        .iter()
        .filter(|p| rho_jam - p.rho > 0.0)
        .map(|p| (p.v_mean - a * (rho_jam - p.rho)).abs() / (rho_jam - p.rho))
        .collect();
    let beyond_jam_points = congested.len() - deviations.len();
    let b = percentile_nearest_rank(&deviations, options.percentile)
        .ok_or_else(|| Error::InsufficientData("no congested points below jam density".into()))?;

    let params = PtmParams {
        a,
        b,
        rho_jam,
        relax: base.relax,
    };
    let owned: Vec<ScatterPoint> = congested.iter().map(|p| **p).collect();
    let inside_fraction = coverage_fraction(&owned, &params)?;
    Ok(EnvelopeFit {
        params,
        intercept,
        slope,
        congested_points: congested.len(),
        beyond_jam_points,
        inside_fraction,
    })
}

fn inside(params: &PtmParams, p: &ScatterPoint) -> bool {
    if p.rho > params.rho_jam {
        return false;
    }
    let hi = envelope_velocity(params, p.rho, Side::Upper);
    let lo = envelope_velocity(params, p.rho, Side::Lower);
    let tol = 1e-9 * hi.abs().max(1.0);
    p.v_mean >= lo - tol && p.v_mean <= hi + tol
}

/// Fraction of scatter points between the lower and upper velocity envelopes.
pub fn coverage_fraction(scatter: &[ScatterPoint], params: &PtmParams) -> Result<f64> {
    if scatter.is_empty() {
        return Err(Error::InsufficientData("empty scatter".into()));
    }
    let n_in = scatter.iter().filter(|p| inside(params, p)).count();
    Ok(n_in as f64 / scatter.len() as f64)
}

pub fn write_scatter_csv<W: Write + ?Sized>(
    out: &mut W,
    scatter: &[ScatterPoint],
) -> std::io::Result<()> {
    writeln!(out, "rho,v_mean,flow")?;
    for p in scatter {
        writeln!(
            out,
            "{},{},{}",
            sig12(p.rho),
            sig12(p.v_mean),
            sig12(p.flow)
        )?;
    }
    Ok(())
}

/// Envelope curves sampled at `samples + 1` densities over `[0, rho_jam]`.
pub fn write_envelopes_csv<W: Write + ?Sized>(
    out: &mut W,
    params: &PtmParams,
    samples: usize,
) -> std::io::Result<()> {
    writeln!(out, "rho,v_upper,v_lower,flow_upper,flow_lower")?;
    let steps: BTreeSet<usize> = (0..=samples).collect();
    for i in steps {
        let rho = params.rho_jam * i as f64 / samples as f64;
        writeln!(
            out,
            "{},{},{},{},{}",
            sig12(rho),
            sig12(envelope_velocity(params, rho, Side::Upper)),
            sig12(envelope_velocity(params, rho, Side::Lower)),
            sig12(envelope_flow(params, rho, Side::Upper)),
            sig12(envelope_flow(params, rho, Side::Lower)),
        )?;
    }
    Ok(())
}
