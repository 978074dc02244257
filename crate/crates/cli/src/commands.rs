//! The subcommands. Each reads a validated [`RunConfig`] and writes its
//! outputs into the configured directory.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde_json::json;

use trajstate::binning::{bin_flow, coverage_rate, BinField};
use trajstate::calibration::{
    build_scatter, coverage_fraction, fit_envelopes, write_envelopes_csv, write_scatter_csv,
};
use trajstate::correction::k_fold_validate;
use trajstate::emissions::{emission_profile, write_emission_rows, EMISSIONS_HEADER};
use trajstate::experiments::{
    estimate_trajectory, eulerian_estimate, eulerian_truth, run_eulerian_experiment,
    run_lagrangian_experiment, segment_rate_pairs, select_probes, write_estimate_rows,
    ESTIMATES_HEADER,
};
use trajstate::kinematics::{subsample, write_kinematics_rows, KINEMATICS_HEADER};
use trajstate::synthetic::generate_synthetic;
use trajstate::trajectory::{parse_ngsim_csv, read_corpus_csv, write_corpus_csv};
use trajstate::{BinGrid, ExperimentPlan, Frame, IngestReport, Scheme, TrajectoryCorpus};

use crate::config::{InputFormat, RunConfig};
use crate::error::{io_at, CliError};
use crate::output::{OutputDir, Provenance};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Generate,
    Ingest,
    Calibrate,
    Estimate,
    Experiment,
    Correct,
}

impl Command {
    pub fn as_str(&self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Ingest => "ingest",
            Command::Calibrate => "calibrate",
            Command::Estimate => "estimate",
            Command::Experiment => "experiment",
            Command::Correct => "correct",
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub scheme: Option<Scheme>,
    pub frame: Option<Frame>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(out) = &self.out {
            cfg.paths.output_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(scheme) = self.scheme {
            cfg.estimate.scheme = scheme;
            cfg.experiment.scheme = scheme;
        }
        if let Some(frame) = self.frame {
            cfg.estimate.frame = frame;
            cfg.experiment.frames = vec![frame];
        }
    }
}

/// Loads the config (or the defaults), applies overrides and validates.
pub fn prepare(config: Option<&Path>, overrides: &Overrides) -> Result<RunConfig, CliError> {
    let mut cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

/// Hash of the effective config, ignoring where outputs go.
fn provenance(command: Command, cfg: &RunConfig) -> Provenance {
    let mut canonical = cfg.clone();
    canonical.paths.output_dir = PathBuf::new();
    Provenance::new(command.as_str(), canonical.hash(), cfg.seed)
}

/// Runs `command`; returns the files written.
pub fn run(command: Command, cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let mut out = OutputDir::create(&cfg.paths.output_dir, provenance(command, cfg))?;
    match command {
        Command::Generate => cmd_generate(cfg, &mut out)?,
        Command::Ingest => cmd_ingest(cfg, &mut out)?,
        Command::Calibrate => cmd_calibrate(cfg, &mut out)?,
        Command::Estimate => cmd_estimate(cfg, &mut out)?,
        Command::Experiment => cmd_experiment(cfg, &mut out)?,
        Command::Correct => cmd_correct(cfg, &mut out)?,
    }
    Ok(out.written().to_vec())
}

fn to_io(e: trajstate::Error) -> std::io::Error {
    std::io::Error::other(e.to_string())
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    Ok(BufReader::new(File::open(path).map_err(io_at(path))?))
}

/// The configured input, or a synthetic corpus when no input is set.
pub fn load_corpus(cfg: &RunConfig) -> Result<(TrajectoryCorpus, Option<IngestReport>), CliError> {
    match &cfg.paths.input {
        Some(path) => {
            let reader = open(path)?;
            let (corpus, report) = match cfg.paths.input_format {
                InputFormat::Corpus => read_corpus_csv(reader)?,
                InputFormat::Ngsim => parse_ngsim_csv(reader, &cfg.ingest)?,
            };
            Ok((corpus, Some(report)))
        }
        None => Ok((generate_synthetic(&cfg.synthetic_spec())?.corpus, None)),
    }
}

fn write_corpus(out: &mut OutputDir, corpus: &TrajectoryCorpus) -> Result<(), CliError> {
    let meta = corpus.metadata();
    let mut comments = vec![format!("source: {}", meta.source)];
    if !meta.period_label.is_empty() {
        comments.push(format!("period: {}", meta.period_label));
    }
    out.csv("corpus.csv", |w| {
        write_corpus_csv(corpus, w, &comments).map_err(to_io)
    })
}

pub fn cmd_generate(cfg: &RunConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let synth = generate_synthetic(&cfg.synthetic_spec())?;
    write_corpus(out, &synth.corpus)?;
    out.csv("truth.csv", |w| synth.truth.write_csv(w))?;
    Ok(())
}

pub fn cmd_ingest(cfg: &RunConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let path = cfg.paths.input.as_ref().ok_or_else(|| CliError::Config {
        key: "paths.input".into(),
        message: "ingest needs an input file".into(),
    })?;
    let (corpus, report) = parse_ngsim_csv(open(path)?, &cfg.ingest)?;
    write_corpus(out, &corpus)?;
    out.json("ingest_report.json", &report)?;
    Ok(())
}

pub fn cmd_calibrate(cfg: &RunConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let (corpus, _) = load_corpus(cfg)?;
    let grid = BinGrid::for_corpus(&corpus, cfg.grid)?;
    let scatter = build_scatter(&corpus, &grid, &cfg.calibrate.lanes);
    out.csv("scatter.csv", |w| write_scatter_csv(w, &scatter))?;
    let fit = fit_envelopes(&scatter, &cfg.ptm, &cfg.calibrate.fit)?;
    out.csv("envelopes.csv", |w| {
        write_envelopes_csv(w, &fit.params, cfg.calibrate.envelope_samples)
    })?;
    let congested: Vec<_> = scatter
        .iter()
        .filter(|p| p.rho >= cfg.calibrate.fit.congestion_threshold)
        .copied()
        .collect();
    out.json(
        "calibration.json",
        &json!({
            "scatter_points": scatter.len(),
            "fit": fit,
            "configured_params": cfg.ptm,
            "configured_params_inside_fraction": coverage_fraction(&congested, &cfg.ptm).ok(),
        }),
    )?;
    let mut fitted = cfg.clone();
    fitted.ptm = fit.params;
    out.commented_text("calibrated.toml", &fitted.to_toml())?;
    Ok(())
}

fn estimate_plan(cfg: &RunConfig) -> ExperimentPlan {
    let e = &cfg.estimate;
    ExperimentPlan {
        sampling_factors: vec![e.sampling_factor],
        penetration_rates: vec![e.penetration_rate],
        scheme: e.scheme,
        velocity_choice: e.velocity_choice,
        seed: cfg.seed,
        grid: cfg.grid,
        offset: e.offset,
        ..ExperimentPlan::default()
    }
}

pub fn cmd_estimate(cfg: &RunConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let (corpus, _) = load_corpus(cfg)?;
    let e = &cfg.estimate;
    let models = cfg.models();
    match e.frame {
        Frame::Lagrangian => {
            let probes = select_probes(&corpus, e.penetration_rate, cfg.seed)?;
            let mut per_vehicle = Vec::new();
            let mut too_short = Vec::new();
            for t in probes.trajectories() {
                match subsample(t, e.sampling_factor, e.offset) {
                    Ok(sub) => {
                        let est = estimate_trajectory(&sub, e.scheme, e.velocity_choice, &models);
                        per_vehicle.push((t.vehicle_id().to_string(), est));
                    }
                    Err(trajstate::Error::TooShort { vehicle, .. }) => too_short.push(vehicle),
                    Err(other) => return Err(other.into()),
                }
            }
            out.csv("kinematics.csv", |w| {
                writeln!(w, "{KINEMATICS_HEADER}")?;
                for (id, est) in &per_vehicle {
                    let k: Vec<_> = est.iter().map(|p| p.kinematics).collect();
                    write_kinematics_rows(w, id, &k)?;
                }
                Ok(())
            })?;
            out.csv("estimates.csv", |w| {
                writeln!(w, "{ESTIMATES_HEADER}")?;
                for (id, est) in &per_vehicle {
                    write_estimate_rows(w, id, est)?;
                }
                Ok(())
            })?;
            out.csv("emissions.csv", |w| {
                writeln!(w, "{EMISSIONS_HEADER}")?;
                for (id, est) in &per_vehicle {
                    let k: Vec<_> = est.iter().map(|p| p.kinematics).collect();
                    write_emission_rows(w, id, &emission_profile(&k, &models.vehicle))?;
                }
                Ok(())
            })?;
            let mut skipped: BTreeMap<&str, usize> = BTreeMap::new();
            let mut points = 0;
            for (_, est) in &per_vehicle {
                points += est.len();
                for p in est {
                    if let Err(r) = p.state {
                        *skipped.entry(r.as_str()).or_default() += 1;
                    }
                }
            }
            out.json(
                "estimate_summary.json",
                &json!({
                    "frame": e.frame,
                    "scheme": e.scheme,
                    "velocity_choice": e.velocity_choice,
                    "N": e.sampling_factor,
                    "rate": e.penetration_rate,
                    "probes": probes.len(),
                    "too_short": too_short,
                    "points": points,
                    "skipped_points": skipped,
                }),
            )?;
        }
        Frame::Eulerian => {
            let grid = BinGrid::for_corpus(&corpus, cfg.grid)?;
            let plan = estimate_plan(cfg);
            let f = eulerian_estimate(
                &corpus,
                &grid,
                &plan,
                &models,
                e.sampling_factor,
                e.penetration_rate,
            )?;
            let flow = bin_flow(&f.density, &f.velocity)?;
            let fields: [(&str, &BinField); 6] = [
                ("density", &f.density),
                ("velocity", &f.velocity),
                ("flow", &flow),
                ("acceleration", &f.acceleration),
                ("q_hat", &f.perturbation),
                ("power", &f.power),
            ];
            for (name, field) in fields {
                out.csv(&format!("field_{name}.csv"), |w| field.write_csv(w))?;
            }
            out.csv("segment_rates.csv", |w| {
                writeln!(w, "k,t_center,r_hc_total_gph,r_fc_total_lph")?;
                for s in &f.segments {
                    writeln!(
                        w,
                        "{},{},{},{}",
                        s.k,
                        trajstate::format::sig12(s.t_center),
                        trajstate::format::sig12(s.hc_total),
                        trajstate::format::sig12(s.fc_total)
                    )?;
                }
                Ok(())
            })?;
            let matrices: BTreeMap<&str, serde_json::Value> = fields
                .iter()
                .map(|(n, f)| (*n, f.to_json_matrix()))
                .collect();
            out.json(
                "fields.json",
                &json!({
                    "grid": grid,
                    "scheme": e.scheme,
                    "N": e.sampling_factor,
                    "rate": e.penetration_rate,
                    "coverage": coverage_rate(&f.velocity),
                    "fields": matrices,
                }),
            )?;
        }
    }
    Ok(())
}

pub fn cmd_experiment(cfg: &RunConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let (corpus, _) = load_corpus(cfg)?;
    let plan = cfg.plan();
    let models = cfg.models();
    for frame in &cfg.experiment.frames {
        let report = match frame {
            Frame::Lagrangian => run_lagrangian_experiment(&corpus, &plan, &models)?,
            Frame::Eulerian => run_eulerian_experiment(&corpus, &plan, &models)?,
        };
        let stem = format!("report_{}", frame.as_str());
        out.csv(&format!("{stem}.csv"), |w| report.write_csv(w))?;
        out.json(&format!("{stem}.json"), &report)?;
    }
    Ok(())
}

pub fn cmd_correct(cfg: &RunConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let (corpus, _) = load_corpus(cfg)?;
    let plan = cfg.plan();
    let models = cfg.models();
    let c = &cfg.correct;
    let grid = BinGrid::for_corpus(&corpus, cfg.grid)?;
    let truth = eulerian_truth(&corpus, &grid, &plan, &models)?;
    let est = eulerian_estimate(
        &corpus,
        &grid,
        &plan,
        &models,
        c.sampling_factor,
        c.penetration_rate,
    )?;
    out.csv("segment_pairs.csv", |w| {
        writeln!(w, "k,t_center,r_hc_est,r_hc_gt,r_fc_est,r_fc_gt")?;
        for (t, e) in truth.segments.iter().zip(&est.segments) {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                t.k,
                trajstate::format::sig12(t.t_center),
                trajstate::format::sig12(e.hc_total),
                trajstate::format::sig12(t.hc_total),
                trajstate::format::sig12(e.fc_total),
                trajstate::format::sig12(t.fc_total)
            )?;
        }
        Ok(())
    })?;
    for q in &c.quantities {
        let pairs = segment_rate_pairs(&truth.segments, &est.segments, *q)?;
        let report = k_fold_validate(&pairs, c.k, cfg.seed, c.split)?;
        let stem = format!("cv_{}", q.as_str().to_lowercase());
        out.csv(&format!("{stem}_folds.csv"), |w| report.write_folds_csv(w))?;
        out.csv(&format!("{stem}_histogram.csv"), |w| {
            report.histogram.write_csv(w)
        })?;
        out.json(
            &format!("{stem}.json"),
            &json!({
                "quantity": q,
                "N": c.sampling_factor,
                "rate": c.penetration_rate,
                "scheme": plan.scheme,
                "report": report,
            }),
        )?;
    }
    Ok(())
}
