//! Probe selection and the sampling-factor x penetration-rate error grids.

use std::collections::HashSet;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binning::{
    aggregate_segment_rates, bin_mean_estimate, coverage_rate, field_error, ground_truth_density,
    BinField, BinGrid, BinGridSpec, Observation, RateObservation, SegmentRates,
};
use crate::correction::PairedSeries;
use crate::emissions::{emission_record, VehicleConfig};
use crate::error::{Error, Result};
use crate::format::sig12;
use crate::kinematics::{kinematic_profile, subsample, KinematicPoint};
use crate::ptm::{invert_point, PtmParams, PtmState, Scheme, SkipReason, VelocityChoice};
use crate::stats::ErrorStats;
use crate::trajectory::{Trajectory, TrajectoryCorpus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Quantity {
    #[serde(rename = "v")]
    Velocity,
    #[serde(rename = "a")]
    Acceleration,
    #[serde(rename = "rho")]
    Density,
    #[serde(rename = "q_hat")]
    Perturbation,
    #[serde(rename = "Z")]
    Power,
    #[serde(rename = "r_HC")]
    HcRate,
    #[serde(rename = "r_FC")]
    FcRate,
}

impl Quantity {
    pub const ALL: [Quantity; 7] = [
        Quantity::Velocity,
        Quantity::Acceleration,
        Quantity::Density,
        Quantity::Perturbation,
        Quantity::Power,
        Quantity::HcRate,
        Quantity::FcRate,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Quantity::Velocity => "v",
            Quantity::Acceleration => "a",
            Quantity::Density => "rho",
            Quantity::Perturbation => "q_hat",
            Quantity::Power => "Z",
            Quantity::HcRate => "r_HC",
            Quantity::FcRate => "r_FC",
        }
    }

    /// Value of this quantity at one point; `None` when the inversion skipped it.
    pub fn value(&self, p: &PointEstimate) -> Option<f64> {
        match self {
            Quantity::Velocity => Some(p.kinematics.v_central),
            Quantity::Acceleration => Some(p.kinematics.accel),
            Quantity::Density => p.state.ok().map(|s| s.rho),
            Quantity::Perturbation => p.state.ok().map(|s| s.q_hat),
            Quantity::Power => Some(p.power_kw),
            Quantity::HcRate => Some(p.hc_rate),
            Quantity::FcRate => Some(p.fc_rate),
        }
    }
}

impl std::str::FromStr for Quantity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Quantity::ALL
            .into_iter()
            .find(|q| q.as_str() == s)
            .ok_or_else(|| Error::invalid("quantity", format!("unknown quantity `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    #[default]
    Lagrangian,
    Eulerian,
}

impl Frame {
    pub fn as_str(&self) -> &'static str {
        match self {
            Frame::Lagrangian => "lagrangian",
            Frame::Eulerian => "eulerian",
        }
    }
}

impl std::str::FromStr for Frame {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lagrangian" => Ok(Frame::Lagrangian),
            "eulerian" => Ok(Frame::Eulerian),
            other => Err(Error::invalid("frame", format!("unknown frame `{other}`"))),
        }
    }
}

/// Reference for the Eulerian density field.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DensityTruth {
    /// Bin means of the inverted density from every vehicle at native sampling.
    #[default]
    Estimator,
    /// Distinct vehicles per bin divided by the bin length.
    Count,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentPlan {
    pub sampling_factors: Vec<usize>,
    pub penetration_rates: Vec<f64>,
    pub scheme: Scheme,
    pub velocity_choice: VelocityChoice,
    pub seed: u64,
    pub grid: BinGridSpec,
    pub quantities: Vec<Quantity>,
    /// Index of the first retained sample when subsampling.
    pub offset: usize,
    pub density_truth: DensityTruth,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            sampling_factors: vec![5, 10, 20, 30],
            penetration_rates: vec![1.0, 0.2, 0.1, 0.05, 0.02],
            scheme: Scheme::StronglyStable,
            velocity_choice: VelocityChoice::Backward,
            seed: 2015,
            grid: BinGridSpec::default(),
            quantities: Quantity::ALL.to_vec(),
            offset: 0,
            density_truth: DensityTruth::Estimator,
        }
    }
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::invalid("experiment plan", reason));
        if self.sampling_factors.is_empty()
            || self.penetration_rates.is_empty()
            || self.quantities.is_empty()
        {
            return bad(
                "sampling_factors, penetration_rates and quantities must be non-empty".into(),
            );
        }
        if let Some(n) = self.sampling_factors.iter().find(|n| **n == 0) {
            return bad(format!("sampling factor {n} must be at least 1"));
        }
        if let Some(r) = self
            .penetration_rates
            .iter()
            .find(|r| !(**r > 0.0 && **r <= 1.0))
        {
            return bad(format!("penetration rate {r} must be in (0, 1]"));
        }
        let min_n = *self.sampling_factors.iter().min().unwrap_or(&1);
        if self.offset >= min_n {
            return bad(format!(
                "offset {} must be below every sampling factor",
                self.offset
            ));
        }
        if !(self.grid.dt_bin > 0.0 && self.grid.dx_bin > 0.0) {
            return bad("bin sizes must be positive".into());
        }
        let distinct = |n: usize, m: usize| n == m;
        if !distinct(
            self.sampling_factors.iter().collect::<HashSet<_>>().len(),
            self.sampling_factors.len(),
        ) || !distinct(
            self.quantities.iter().collect::<HashSet<_>>().len(),
            self.quantities.len(),
        ) || !distinct(
            self.penetration_rates
                .iter()
                .map(|r| r.to_bits())
                .collect::<HashSet<_>>()
                .len(),
            self.penetration_rates.len(),
        ) {
            return bad("duplicate factor, rate or quantity".into());
        }
        Ok(())
    }
}

/// Model constants shared by every estimate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Models {
    pub params: PtmParams,
    pub vehicle: VehicleConfig,
}

/// Every quantity estimated at one interior sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointEstimate {
    pub kinematics: KinematicPoint,
    pub state: std::result::Result<PtmState, SkipReason>,
    pub power_kw: f64,
    pub hc_rate: f64,
    pub fc_rate: f64,
}

impl PointEstimate {
    pub fn time(&self) -> f64 {
        self.kinematics.time
    }

    pub fn position(&self) -> f64 {
        self.kinematics.position
    }
}

pub fn estimate_trajectory(
    traj: &Trajectory,
    scheme: Scheme,
    choice: VelocityChoice,
    models: &Models,
) -> Vec<PointEstimate> {
    kinematic_profile(traj)
        .into_iter()
        .map(|k| {
            let e = emission_record(&k, &models.vehicle);
            PointEstimate {
                kinematics: k,
                state: invert_point(&models.params, scheme, choice, &k),
                power_kw: e.power_kw,
                hc_rate: e.hc_rate_g_per_h,
                fc_rate: e.fc_rate_l_per_h,
            }
        })
        .collect()
}

pub const ESTIMATES_HEADER: &str =
    "vehicle_id,time_s,position_ft,v_fps,a_fps2,rho,q_hat,skip_reason,z_kw,r_hc_gph,r_fc_lph";

pub fn write_estimate_rows<W: Write + ?Sized>(
    out: &mut W,
    vehicle_id: &str,
    points: &[PointEstimate],
) -> std::io::Result<()> {
    for p in points {
        let (rho, q, skip) = match p.state {
            Ok(s) => (sig12(s.rho), sig12(s.q_hat), ""),
            Err(r) => (String::new(), String::new(), r.as_str()),
        };
        writeln!(
            out,
            "{vehicle_id},{},{},{},{},{rho},{q},{skip},{},{},{}",
            sig12(p.kinematics.time),
            sig12(p.kinematics.position),
            sig12(p.kinematics.v_central),
            sig12(p.kinematics.accel),
            sig12(p.power_kw),
            sig12(p.hc_rate),
            sig12(p.fc_rate),
        )?;
    }
    Ok(())
}

/// Probes at `rate`: a seeded permutation of the vehicle ids truncated to
/// `ceil(rate * count)`. One permutation per seed, so lower rates select
/// subsets of higher ones.
pub fn select_probes(corpus: &TrajectoryCorpus, rate: f64, seed: u64) -> Result<TrajectoryCorpus> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::invalid(
            "penetration rate",
            format!("{rate} is not in (0, 1]"),
        ));
    }
    let mut ids: Vec<&str> = corpus
        .trajectories()
        .iter()
        .map(|t| t.vehicle_id())
        .collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let count = ((rate * ids.len() as f64) - 1e-9).ceil().max(0.0) as usize;
    let keep: HashSet<&str> = ids.into_iter().take(count).collect();
    Ok(corpus.subset(&keep))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub quantity: Quantity,
    #[serde(rename = "N")]
    pub n: usize,
    pub rate: f64,
    /// Lagrangian: over vehicles. Eulerian: over jointly active bins, or over
    /// time slices for the segment rates.
    pub stats: Option<ErrorStats>,
    /// Lagrangian only: relative L1 error over all pooled points.
    pub pooled_error: Option<f64>,
    /// Eulerian only.
    pub coverage: Option<f64>,
    pub probes: usize,
    /// Vehicles (Lagrangian) or bins (Eulerian) left out of the statistics.
    pub excluded: usize,
    pub failure: Option<String>,
}

impl ReportCell {
    fn empty(quantity: Quantity, n: usize, rate: f64, probes: usize) -> Self {
        Self {
            quantity,
            n,
            rate,
            stats: None,
            pooled_error: None,
            coverage: None,
            probes,
            excluded: 0,
            failure: None,
        }
    }

    fn key(&self) -> (Quantity, usize, std::cmp::Reverse<u64>) {
        (
            self.quantity,
            self.n,
            std::cmp::Reverse(self.rate.to_bits()),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub frame: Frame,
    pub seed: u64,
    pub corpus_source: String,
    pub period_label: String,
    pub vehicles: usize,
    pub scheme: Scheme,
    pub velocity_choice: VelocityChoice,
    pub offset: usize,
    pub density_truth: Option<DensityTruth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub provenance: Provenance,
    /// Sorted by quantity, then `N` ascending, then rate descending.
    pub cells: Vec<ReportCell>,
}

impl ExperimentReport {
    pub fn cell(&self, quantity: Quantity, n: usize, rate: f64) -> Option<&ReportCell> {
        self.cells
            .iter()
            .find(|c| c.quantity == quantity && c.n == n && c.rate == rate)
    }

    pub const CSV_HEADER: &'static str = "quantity,N,rate,mean_err,std_err,coverage";

    /// One row per cell; failed cells leave the numeric fields empty.
    pub fn write_csv<W: Write + ?Sized>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for c in &self.cells {
            let (mean, std) = c
                .stats
                .map(|s| (sig12(s.mean), sig12(s.std_dev)))
                .unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{mean},{std},{}",
                c.quantity.as_str(),
                c.n,
                sig12(c.rate),
                c.coverage.map(sig12).unwrap_or_default()
            )?;
        }
        Ok(())
    }
}

fn provenance(corpus: &TrajectoryCorpus, plan: &ExperimentPlan, frame: Frame) -> Provenance {
    Provenance {
        frame,
        seed: plan.seed,
        corpus_source: corpus.metadata().source.clone(),
        period_label: corpus.metadata().period_label.clone(),
        vehicles: corpus.len(),
        scheme: plan.scheme,
        velocity_choice: plan.velocity_choice,
        offset: plan.offset,
        density_truth: (frame == Frame::Eulerian).then_some(plan.density_truth),
    }
}

fn probe_sets(
    corpus: &TrajectoryCorpus,
    plan: &ExperimentPlan,
) -> Result<Vec<(f64, TrajectoryCorpus)>> {
    plan.penetration_rates
        .iter()
        .map(|&r| Ok((r, select_probes(corpus, r, plan.seed)?)))
        .collect()
}

fn sort_cells(mut cells: Vec<ReportCell>) -> Vec<ReportCell> {
    cells.sort_by_key(|c| c.key());
    cells
}

/// Per-vehicle relative L1 errors of each quantity between the native-rate
/// profile and the profile after subsampling by each `N`.
pub fn run_lagrangian_experiment(
    corpus: &TrajectoryCorpus,
    plan: &ExperimentPlan,
    models: &Models,
) -> Result<ExperimentReport> {
    plan.validate()?;
    models.params.validate()?;
    models.vehicle.validate()?;
    let truth: Vec<Vec<PointEstimate>> = corpus
        .trajectories()
        .par_iter()
        .map(|t| estimate_trajectory(t, plan.scheme, plan.velocity_choice, models))
        .collect();
    let index: std::collections::HashMap<&str, usize> = corpus
        .trajectories()
        .iter()
        .enumerate()
        .map(|(i, t)| (t.vehicle_id(), i))
        .collect();
    let probes = probe_sets(corpus, plan)?;

    let jobs: Vec<(usize, &(f64, TrajectoryCorpus))> = plan
        .sampling_factors
        .iter()
        .flat_map(|&n| probes.iter().map(move |p| (n, p)))
        .collect();
    let cells: Vec<ReportCell> = jobs
        .par_iter()
        .flat_map_iter(|&(n, (rate, subset))| {
            // (numerator, denominator) per vehicle and quantity
            let mut sums: Vec<Vec<(f64, f64)>> = vec![Vec::new(); plan.quantities.len()];
            let mut excluded = vec![0usize; plan.quantities.len()];
            for traj in subset.trajectories() {
                let reference = &truth[index[traj.vehicle_id()]];
                let Ok(sub) = subsample(traj, n, plan.offset) else {
                    excluded.iter_mut().for_each(|e| *e += 1);
                    continue;
                };
                let est = estimate_trajectory(&sub, plan.scheme, plan.velocity_choice, models);
                for (qi, q) in plan.quantities.iter().enumerate() {
                    let (mut num, mut den) = (0.0, 0.0);
                    for (j, e) in est.iter().enumerate() {
                        // sub sample j + 1 is native sample offset + (j + 1) n,
                        // whose profile point sits one index earlier
                        let t = &reference[plan.offset + (j + 1) * n - 1];
                        if let (Some(tv), Some(ev)) = (q.value(t), q.value(e)) {
                            num += (tv - ev).abs();
                            den += tv.abs();
                        }
                    }
                    if den > 0.0 {
                        sums[qi].push((num, den));
                    } else {
                        excluded[qi] += 1;
                    }
                }
            }
            plan.quantities
                .iter()
                .enumerate()
                .map(|(qi, q)| {
                    let mut cell = ReportCell::empty(*q, n, *rate, subset.len());
                    cell.excluded = excluded[qi];
                    let errs: Vec<f64> = sums[qi].iter().map(|(a, b)| a / b).collect();
                    cell.stats = ErrorStats::from_values(&errs);
                    let (num, den) = sums[qi]
                        .iter()
                        .fold((0.0, 0.0), |acc, x| (acc.0 + x.0, acc.1 + x.1));
                    cell.pooled_error = (den > 0.0).then(|| num / den);
                    if cell.stats.is_none() {
                        cell.failure = Some(format!(
                            "no vehicle usable at N={n} ({} excluded)",
                            cell.excluded
                        ));
                    }
                    cell
                })
                .collect::<Vec<_>>()
        })
        .collect();

    Ok(ExperimentReport {
        provenance: provenance(corpus, plan, Frame::Lagrangian),
        cells: sort_cells(cells),
    })
}

/// Bin fields assembled from a set of point estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct EulerianFields {
    pub velocity: BinField,
    pub acceleration: BinField,
    pub density: BinField,
    pub perturbation: BinField,
    pub power: BinField,
    pub segments: Vec<SegmentRates>,
}

impl EulerianFields {
    pub fn field(&self, q: Quantity) -> Option<&BinField> {
        match q {
            Quantity::Velocity => Some(&self.velocity),
            Quantity::Acceleration => Some(&self.acceleration),
            Quantity::Density => Some(&self.density),
            Quantity::Perturbation => Some(&self.perturbation),
            Quantity::Power => Some(&self.power),
            Quantity::HcRate | Quantity::FcRate => None,
        }
    }
}

/// Bin means of every quantity. `density`, when given, replaces the bin
/// means of the inverted density (both as a field and as the weight of the
/// segment rates).
pub fn eulerian_fields(
    points: &[PointEstimate],
    grid: &BinGrid,
    density: Option<&BinField>,
) -> Result<EulerianFields> {
    let field = |q: Quantity| {
        let obs: Vec<Observation> = points
            .iter()
            .filter_map(|p| {
                Some(Observation {
                    time: p.time(),
                    position: p.position(),
                    value: q.value(p)?,
                })
            })
            .collect();
        bin_mean_estimate(&obs, grid)
    };
    let density = match density {
        Some(d) => d.clone(),
        None => field(Quantity::Density),
    };
    let rates: Vec<RateObservation> = points
        .iter()
        .map(|p| RateObservation {
            time: p.time(),
            position: p.position(),
            hc: p.hc_rate,
            fc: p.fc_rate,
        })
        .collect();
    let segments = aggregate_segment_rates(grid, &density, &rates)?;
    Ok(EulerianFields {
        velocity: field(Quantity::Velocity),
        acceleration: field(Quantity::Acceleration),
        perturbation: field(Quantity::Perturbation),
        power: field(Quantity::Power),
        density,
        segments,
    })
}

/// Point estimates of every trajectory after subsampling by `n`, and the
/// number of trajectories too short to keep.
pub fn estimate_corpus(
    corpus: &TrajectoryCorpus,
    n: usize,
    offset: usize,
    scheme: Scheme,
    choice: VelocityChoice,
    models: &Models,
) -> (Vec<PointEstimate>, usize) {
    let per: Vec<Option<Vec<PointEstimate>>> = corpus
        .trajectories()
        .par_iter()
        .map(|t| {
            let sub = subsample(t, n, offset).ok()?;
            Some(estimate_trajectory(&sub, scheme, choice, models))
        })
        .collect();
    let skipped = per.iter().filter(|p| p.is_none()).count();
    (per.into_iter().flatten().flatten().collect(), skipped)
}

/// Relative error per time slice between two segment-rate series.
fn segment_error(
    truth: &[SegmentRates],
    est: &[SegmentRates],
    pick: fn(&SegmentRates) -> f64,
) -> (Vec<f64>, usize) {
    let mut errs = Vec::new();
    let mut zero = 0;
    for (t, e) in truth.iter().zip(est) {
        let t = pick(t);
        if t == 0.0 {
            zero += 1;
        } else {
            errs.push((t - pick(e)).abs() / t.abs());
        }
    }
    (errs, zero)
}

/// Reference fields at native sampling with every vehicle.
pub fn eulerian_truth(
    corpus: &TrajectoryCorpus,
    grid: &BinGrid,
    plan: &ExperimentPlan,
    models: &Models,
) -> Result<EulerianFields> {
    let (points, _) = estimate_corpus(corpus, 1, 0, plan.scheme, plan.velocity_choice, models);
    let count = match plan.density_truth {
        DensityTruth::Count => Some(ground_truth_density(corpus, grid)),
        DensityTruth::Estimator => None,
    };
    eulerian_fields(&points, grid, count.as_ref())
}

/// Estimated fields for the probes at `rate` subsampled by `n`.
pub fn eulerian_estimate(
    corpus: &TrajectoryCorpus,
    grid: &BinGrid,
    plan: &ExperimentPlan,
    models: &Models,
    n: usize,
    rate: f64,
) -> Result<EulerianFields> {
    let probes = select_probes(corpus, rate, plan.seed)?;
    let (points, _) = estimate_corpus(
        &probes,
        n,
        plan.offset,
        plan.scheme,
        plan.velocity_choice,
        models,
    );
    eulerian_fields(&points, grid, None)
}

/// Pairs of estimated and reference whole-segment totals of one rate.
pub fn segment_rate_pairs(
    truth: &[SegmentRates],
    est: &[SegmentRates],
    q: Quantity,
) -> Result<PairedSeries> {
    let pick: fn(&SegmentRates) -> f64 = match q {
        Quantity::HcRate => |s| s.hc_total,
        Quantity::FcRate => |s| s.fc_total,
        other => {
            return Err(Error::invalid(
                "segment quantity",
                format!("`{}` is not a segment rate", other.as_str()),
            ))
        }
    };
    PairedSeries::new(
        est.iter().map(pick).collect(),
        truth.iter().map(pick).collect(),
    )
}

/// Field errors against the native-rate, all-vehicle reference for each
/// (N, rate), with coverage; the emission rates are compared as whole-segment
/// totals per time slice.
pub fn run_eulerian_experiment(
    corpus: &TrajectoryCorpus,
    plan: &ExperimentPlan,
    models: &Models,
) -> Result<ExperimentReport> {
    plan.validate()?;
    models.params.validate()?;
    models.vehicle.validate()?;
    let grid = BinGrid::for_corpus(corpus, plan.grid)?;
    let truth = eulerian_truth(corpus, &grid, plan, models)?;
    let probes = probe_sets(corpus, plan)?;
    let jobs: Vec<(usize, &(f64, TrajectoryCorpus))> = plan
        .sampling_factors
        .iter()
        .flat_map(|&n| probes.iter().map(move |p| (n, p)))
        .collect();

    let cells: Result<Vec<Vec<ReportCell>>> = jobs
        .par_iter()
        .map(|&(n, (rate, subset))| {
            let (points, _) = estimate_corpus(
                subset,
                n,
                plan.offset,
                plan.scheme,
                plan.velocity_choice,
                models,
            );
            let est = eulerian_fields(&points, &grid, None)?;
            Ok(plan
                .quantities
                .iter()
                .map(|q| {
                    let mut cell = ReportCell::empty(*q, n, *rate, subset.len());
                    match (truth.field(*q), est.field(*q)) {
                        (Some(t), Some(e)) => {
                            cell.coverage = Some(coverage_rate(e));
                            match field_error(t, e) {
                                Ok(fe) => {
                                    cell.stats = Some(fe.stats);
                                    cell.excluded = fe.zero_truth_bins;
                                }
                                Err(err) => cell.failure = Some(err.to_string()),
                            }
                        }
                        _ => {
                            cell.coverage = Some(coverage_rate(&est.density));
                            let pick: fn(&SegmentRates) -> f64 = match q {
                                Quantity::HcRate => |s| s.hc_total,
                                _ => |s| s.fc_total,
                            };
                            let (errs, zero) = segment_error(&truth.segments, &est.segments, pick);
                            cell.excluded = zero;
                            cell.stats = ErrorStats::from_values(&errs);
                            if cell.stats.is_none() {
                                cell.failure = Some("reference segment rates are all zero".into());
                            }
                        }
                    }
                    cell
                })
                .collect())
        })
        .collect();

    Ok(ExperimentReport {
        provenance: provenance(corpus, plan, Frame::Eulerian),
        cells: sort_cells(cells?.into_iter().flatten().collect()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{generate_synthetic, SyntheticSpec};
    use crate::trajectory::{CorpusMetadata, TrajectorySample};

    fn constant_speed_corpus(n: usize) -> TrajectoryCorpus {
        let trajs = (0..n)
            .map(|i| {
                let s = (0..600)
                    .map(|k| {
                        TrajectorySample::new(
                            k as f64 * 0.1,
                            30.0 * i as f64 + 40.0 * k as f64 * 0.1,
                        )
                    })
                    .collect();
                Trajectory::new(format!("{i}"), s, 0.1).unwrap()
            })
            .collect();
        TrajectoryCorpus::new(trajs, CorpusMetadata::default()).unwrap()
    }

    #[test]
    fn probe_selection() {
        let c = constant_speed_corpus(100);
        assert_eq!(select_probes(&c, 1.0, 3).unwrap().len(), 100);
        assert_eq!(select_probes(&c, 0.1, 3).unwrap().len(), 10);
        assert_eq!(select_probes(&c, 0.013, 3).unwrap().len(), 2);
        assert_eq!(
            select_probes(&c, 0.1, 3).unwrap(),
            select_probes(&c, 0.1, 3).unwrap()
        );
        assert_ne!(
            select_probes(&c, 0.1, 3).unwrap(),
            select_probes(&c, 0.1, 4).unwrap()
        );
        assert!(select_probes(&c, 0.0, 3).is_err());
        assert!(select_probes(&c, 1.5, 3).is_err());
        let big: HashSet<String> = select_probes(&c, 0.2, 9)
            .unwrap()
            .trajectories()
            .iter()
            .map(|t| t.vehicle_id().to_string())
            .collect();
        for t in select_probes(&c, 0.05, 9).unwrap().trajectories() {
            assert!(big.contains(t.vehicle_id()));
        }
    }

    #[test]
    fn plan_validation() {
        assert!(ExperimentPlan::default().validate().is_ok());
        let bad = [
            ExperimentPlan {
                sampling_factors: vec![],
                ..Default::default()
            },
            ExperimentPlan {
                penetration_rates: vec![0.0],
                ..Default::default()
            },
            ExperimentPlan {
                sampling_factors: vec![5, 5],
                ..Default::default()
            },
            ExperimentPlan {
                offset: 5,
                ..Default::default()
            },
            ExperimentPlan {
                sampling_factors: vec![0],
                ..Default::default()
            },
        ];
        for p in bad {
            assert!(p.validate().is_err(), "{p:?}");
        }
    }

    #[test]
    fn constant_speed_has_zero_velocity_error() {
        let c = constant_speed_corpus(10);
        let plan = ExperimentPlan {
            quantities: vec![Quantity::Velocity],
            penetration_rates: vec![1.0, 0.5],
            ..Default::default()
        };
        let r = run_lagrangian_experiment(&c, &plan, &Models::default()).unwrap();
        assert_eq!(r.cells.len(), 8);
        for cell in &r.cells {
            let s = cell.stats.unwrap();
            assert!(s.mean < 1e-12, "{cell:?}");
            assert!(cell.coverage.is_none());
        }
        assert!(r.cell(Quantity::Velocity, 7, 1.0).is_none());
    }

    #[test]
    fn cells_are_sorted_and_complete() {
        let c = constant_speed_corpus(20);
        let r =
            run_lagrangian_experiment(&c, &ExperimentPlan::default(), &Models::default()).unwrap();
        assert_eq!(r.cells.len(), 140);
        let keys: Vec<_> = r.cells.iter().map(|c| c.key()).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        // zero acceleration everywhere: no usable reference
        let a = r.cell(Quantity::Acceleration, 5, 1.0).unwrap();
        assert!(a.stats.is_none() && a.failure.is_some());
    }

    #[test]
    fn too_short_vehicles_are_counted() {
        let s = (0..25)
            .map(|k| TrajectorySample::new(k as f64 * 0.1, 40.0 * k as f64 * 0.1))
            .collect();
        let short = Trajectory::new("short", s, 0.1).unwrap();
        let mut trajs = constant_speed_corpus(3).trajectories().to_vec();
        trajs.push(short);
        let c = TrajectoryCorpus::new(trajs, CorpusMetadata::default()).unwrap();
        let plan = ExperimentPlan {
            quantities: vec![Quantity::Velocity],
            penetration_rates: vec![1.0],
            ..Default::default()
        };
        let r = run_lagrangian_experiment(&c, &plan, &Models::default()).unwrap();
        assert_eq!(r.cell(Quantity::Velocity, 5, 1.0).unwrap().excluded, 0);
        assert_eq!(r.cell(Quantity::Velocity, 10, 1.0).unwrap().excluded, 0);
        assert_eq!(r.cell(Quantity::Velocity, 20, 1.0).unwrap().excluded, 1);
        assert_eq!(
            r.cell(Quantity::Velocity, 30, 1.0)
                .unwrap()
                .stats
                .unwrap()
                .count,
            3
        );
    }

    fn small_dense() -> TrajectoryCorpus {
        let spec = SyntheticSpec {
            vehicle_count: 300,
            duration: 80.0,
            ..SyntheticSpec::dense()
        };
        generate_synthetic(&spec).unwrap().corpus
    }

    #[test]
    fn eulerian_diagonal_is_exact() {
        let c = small_dense();
        let plan = ExperimentPlan {
            sampling_factors: vec![1, 10],
            penetration_rates: vec![1.0, 0.05],
            ..Default::default()
        };
        let r = run_eulerian_experiment(&c, &plan, &Models::default()).unwrap();
        assert_eq!(r.cells.len(), 28);
        for q in Quantity::ALL {
            let cell = r.cell(q, 1, 1.0).unwrap();
            assert!(cell.stats.unwrap().mean < 1e-12, "{cell:?}");
            assert_eq!(cell.coverage, Some(1.0));
            let low = r.cell(q, 1, 0.05).unwrap();
            assert!(low.coverage.unwrap() <= 1.0);
        }
        let d10 = r
            .cell(Quantity::Density, 10, 1.0)
            .unwrap()
            .coverage
            .unwrap();
        let d10low = r
            .cell(Quantity::Density, 10, 0.05)
            .unwrap()
            .coverage
            .unwrap();
        assert!(d10low <= d10);
    }

    #[test]
    fn eulerian_count_truth() {
        let c = small_dense();
        let plan = ExperimentPlan {
            sampling_factors: vec![1],
            penetration_rates: vec![1.0],
            quantities: vec![Quantity::Density],
            density_truth: DensityTruth::Count,
            ..Default::default()
        };
        let r = run_eulerian_experiment(&c, &plan, &Models::default()).unwrap();
        let cell = &r.cells[0];
        // counts and inverted densities are different estimators; only the
        // plumbing is checked here
        let grid = BinGrid::for_corpus(&c, plan.grid).unwrap();
        assert_eq!(cell.stats.unwrap().count, grid.len());
        assert_eq!(r.provenance.density_truth, Some(DensityTruth::Count));
    }

    #[test]
    fn report_csv_shape() {
        let c = constant_speed_corpus(5);
        let plan = ExperimentPlan {
            sampling_factors: vec![5],
            penetration_rates: vec![1.0],
            quantities: vec![Quantity::Velocity, Quantity::Acceleration],
            ..Default::default()
        };
        let r = run_lagrangian_experiment(&c, &plan, &Models::default()).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], ExperimentReport::CSV_HEADER);
        assert_eq!(lines[1], "v,5,1,0,0,");
        assert_eq!(lines[2], "a,5,1,,,");
    }

    #[test]
    fn quantity_names_round_trip() {
        for q in Quantity::ALL {
            assert_eq!(q.as_str().parse::<Quantity>().unwrap(), q);
            assert_eq!(
                serde_json::to_string(&q).unwrap(),
                format!("\"{}\"", q.as_str())
            );
        }
    }
}
