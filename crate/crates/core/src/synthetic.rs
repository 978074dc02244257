//! Seeded synthetic corpora with analytic ground truth.
//!
//! Two generators:
//!
//! * `car_following`: independent vehicles cruising at a constant speed with a
//!   superimposed sinusoidal speed oscillation. The oscillation puts
//!   acceleration content at a time scale that coarse sampling cannot resolve.
//! * `ptm_consistent`: vehicles advected by a smooth Eulerian speed field made
//!   of backward-travelling waves on top of a base speed, integrated with RK4.
//!
//! In both modes every sample carries its exact speed and acceleration, and
//! the sidecar stores the model state each inversion scheme yields from those
//! exact values (the limit of the finite-difference pipeline as the sampling
//! period goes to zero). Along a trajectory the finite-difference spatial
//! gradient tends to `a / v`, which is the gradient stored for the less
//! stable scheme.

use std::f64::consts::TAU;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binning::Observation;
use crate::error::{Error, Result};
use crate::format::sig12;
use crate::ptm::{
    invert_less_stable, invert_no_source, invert_strongly_stable, PtmParams, PtmState, Scheme,
};
use crate::trajectory::{CorpusMetadata, Trajectory, TrajectoryCorpus, TrajectorySample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticMode {
    PtmConsistent,
    CarFollowing,
}

/// A travelling wave `amplitude * sin(2 pi (x + speed t) / wavelength + phase)`
/// in the speed field; positive `speed` travels upstream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeedWave {
    /// ft/s
    pub amplitude: f64,
    /// ft
    pub wavelength: f64,
    /// ft/s, upstream
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub mode: SyntheticMode,
    pub vehicle_count: usize,
    /// Observation window `[0, duration]`, seconds.
    pub duration: f64,
    pub native_period: f64,
    /// Road is `[0, road_length]` feet.
    pub road_length: f64,
    pub lanes: u32,
    pub seed: u64,
    /// Per-vehicle cruise speed range, ft/s (car_following).
    pub cruise_speed: [f64; 2],
    /// Nominal speed oscillation amplitude, ft/s (car_following). Each vehicle
    /// draws its amplitude from +-25 % around it.
    pub oscillation_amplitude: f64,
    /// Nominal oscillation period, s (car_following).
    pub oscillation_period: f64,
    /// Relative spread of per-vehicle oscillation periods.
    pub period_jitter: f64,
    /// Model parameters of the sidecar states (ptm_consistent).
    pub params: PtmParams,
    /// Field base speed, ft/s (ptm_consistent).
    pub base_speed: f64,
    pub waves: Vec<SpeedWave>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self::dense()
    }
}

impl SyntheticSpec {
    /// Dense wave-driven corpus sized so that 10 % of vehicles still populate
    /// nearly every 4 s x 400 ft bin.
    pub fn dense() -> Self {
        Self {
            mode: SyntheticMode::PtmConsistent,
            vehicle_count: 2000,
            duration: 300.0,
            native_period: 0.1,
            road_length: 1600.0,
            lanes: 4,
            seed: 2015,
            cruise_speed: [30.0, 50.0],
            oscillation_amplitude: 4.0,
            oscillation_period: 5.0,
            period_jitter: 0.1,
            params: PtmParams::default(),
            base_speed: 36.0,
            waves: vec![
                SpeedWave {
                    amplitude: 6.0,
                    wavelength: 1200.0,
                    speed: 15.0,
                },
                SpeedWave {
                    amplitude: 2.0,
                    wavelength: 180.0,
                    speed: 10.0,
                },
            ],
        }
    }

    /// Oscillatory corpus for the sampling-period experiments.
    pub fn oscillatory() -> Self {
        Self {
            mode: SyntheticMode::CarFollowing,
            vehicle_count: 200,
            duration: 600.0,
            ..Self::dense()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| Err(Error::invalid("synthetic spec", reason.to_string()));
        if !(self.native_period > 0.0 && self.native_period.is_finite()) {
            return bad("native_period must be positive");
        }
        if self.vehicle_count == 0 {
            return bad("vehicle_count must be at least 1");
        }
        if !(self.duration > 0.0 && self.road_length > 0.0) {
            return bad("duration and road_length must be positive");
        }
        if self.lanes == 0 {
            return bad("lanes must be at least 1");
        }
        match self.mode {
            SyntheticMode::CarFollowing => {
                let [lo, hi] = self.cruise_speed;
                if !(lo > 0.0 && hi >= lo) {
                    return bad("cruise_speed must be an increasing positive range");
                }
                if self.oscillation_amplitude < 0.0 || 1.25 * self.oscillation_amplitude >= lo {
                    return bad(
                        "oscillation_amplitude must be non-negative and keep speeds positive",
                    );
                }
                if !(self.oscillation_period > 0.0) || !(0.0..1.0).contains(&self.period_jitter) {
                    return bad("oscillation_period must be positive and period_jitter in [0, 1)");
                }
            }
            SyntheticMode::PtmConsistent => {
                self.params.validate()?;
                let swing: f64 = self.waves.iter().map(|w| w.amplitude.abs()).sum();
                if self.base_speed - swing <= 0.0 {
                    return bad("waves must keep the field speed positive");
                }
                if self.waves.iter().any(|w| !(w.wavelength > 0.0)) {
                    return bad("wave wavelengths must be positive");
                }
            }
        }
        Ok(())
    }

    fn min_speed(&self) -> f64 {
        match self.mode {
            SyntheticMode::CarFollowing => self.cruise_speed[0] - 1.25 * self.oscillation_amplitude,
            SyntheticMode::PtmConsistent => {
                self.base_speed - self.waves.iter().map(|w| w.amplitude.abs()).sum::<f64>()
            }
        }
    }
}

/// Exact kinematics and model states at one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthPoint {
    pub time: f64,
    pub position: f64,
    pub v: f64,
    pub a: f64,
    pub strong: Option<PtmState>,
    pub less: Option<PtmState>,
    pub nosource: Option<PtmState>,
}

impl TruthPoint {
    fn new(params: &PtmParams, time: f64, position: f64, v: f64, a: f64) -> Self {
        Self {
            time,
            position,
            v,
            a,
            strong: invert_strongly_stable(params, v, a).ok(),
            less: (v > 0.0)
                .then(|| invert_less_stable(params, v, a, a / v).ok())
                .flatten(),
            nosource: invert_no_source(params, v).state().copied(),
        }
    }

    pub fn state(&self, scheme: Scheme) -> Option<&PtmState> {
        match scheme {
            Scheme::StronglyStable => self.strong.as_ref(),
            Scheme::LessStable => self.less.as_ref(),
            Scheme::NoSource => self.nosource.as_ref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthTrack {
    pub vehicle_id: String,
    /// One point per trajectory sample.
    pub points: Vec<TruthPoint>,
}

/// Sidecar ground truth, aligned with the corpus trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub params: PtmParams,
    pub tracks: Vec<TruthTrack>,
}

impl GroundTruth {
    pub fn track(&self, vehicle_id: &str) -> Option<&TruthTrack> {
        self.tracks.iter().find(|t| t.vehicle_id == vehicle_id)
    }

    /// Sidecar densities under `scheme` as binnable observations.
    pub fn density_observations(&self, scheme: Scheme) -> Vec<Observation> {
        self.tracks
            .iter()
            .flat_map(|t| &t.points)
            .filter_map(|p| {
                p.state(scheme).map(|s| Observation {
                    time: p.time,
                    position: p.position,
                    value: s.rho,
                })
            })
            .collect()
    }

    pub fn write_csv<W: Write + ?Sized>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(
            out,
            "vehicle_id,time_s,position_ft,v_fps,a_fps2,rho_strong,q_strong,rho_less,q_less,rho_nosource,q_nosource"
        )?;
        let cols = |s: Option<&PtmState>| match s {
            Some(s) => format!("{},{}", sig12(s.rho), sig12(s.q_hat)),
            None => ",".to_string(),
        };
        for t in &self.tracks {
            for p in &t.points {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    t.vehicle_id,
                    sig12(p.time),
                    sig12(p.position),
                    sig12(p.v),
                    sig12(p.a),
                    cols(p.strong.as_ref()),
                    cols(p.less.as_ref()),
                    cols(p.nosource.as_ref()),
                )?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub corpus: TrajectoryCorpus,
    pub truth: GroundTruth,
}

/// Motion of one vehicle: position, speed and acceleration at time `t`.
trait Motion {
    fn state(&mut self, t: f64) -> (f64, f64, f64);
}

struct Oscillator {
    t_entry: f64,
    cruise: f64,
    amplitude: f64,
    omega: f64,
    phase: f64,
}

impl Motion for Oscillator {
    fn state(&mut self, t: f64) -> (f64, f64, f64) {
        let tau = t - self.t_entry;
        let arg = self.omega * tau + self.phase;
        let x = if self.amplitude == 0.0 {
            self.cruise * tau
        } else {
            self.cruise * tau + self.amplitude / self.omega * (self.phase.cos() - arg.cos())
        };
        (
            x,
            self.cruise + self.amplitude * arg.sin(),
            self.amplitude * self.omega * arg.cos(),
        )
    }
}

struct WaveField {
    base: f64,
    /// (amplitude, wavenumber, upstream speed, phase)
    waves: Vec<(f64, f64, f64, f64)>,
}

impl WaveField {
    /// `(V, V_t, V_x)` at `(t, x)`.
    fn eval(&self, t: f64, x: f64) -> (f64, f64, f64) {
        let (mut v, mut vt, mut vx) = (self.base, 0.0, 0.0);
        for &(amp, k, c, phase) in &self.waves {
            let arg = k * (x + c * t) + phase;
            let (s, co) = arg.sin_cos();
            v += amp * s;
            vx += amp * k * co;
            vt += amp * k * c * co;
        }
        (v, vt, vx)
    }
}

struct Advected<'a> {
    field: &'a WaveField,
    t: f64,
    x: f64,
    substeps: usize,
}

impl Motion for Advected<'_> {
    fn state(&mut self, t: f64) -> (f64, f64, f64) {
        // RK4 from the current (t, x) to t.
        let span = t - self.t;
        if span > 0.0 {
            let h = span / self.substeps as f64;
            let f = |t: f64, x: f64| self.field.eval(t, x).0;
            for i in 0..self.substeps {
                let t0 = self.t + i as f64 * h;
                let x = self.x;
                let k1 = f(t0, x);
                let k2 = f(t0 + 0.5 * h, x + 0.5 * h * k1);
                let k3 = f(t0 + 0.5 * h, x + 0.5 * h * k2);
                let k4 = f(t0 + h, x + h * k3);
                self.x = x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            }
            self.t = t;
        }
        let (v, vt, vx) = self.field.eval(t, self.x);
        (self.x, v, vt + v * vx)
    }
}

/// Deterministic in `spec` (including its seed).
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dt = spec.native_period;
    // Vehicles enter at x = 0 from one fill time before the window opens, so
    // the road is already populated at t = 0.
    let fill = spec.road_length / spec.min_speed();
    let window = spec.duration + fill;
    let headway = window / spec.vehicle_count as f64;
    let last_index = (spec.duration / dt + 1e-9).floor() as i64;

    let field = WaveField {
        base: spec.base_speed,
        waves: spec
            .waves
            .iter()
            .map(|w| {
                (
                    w.amplitude,
                    TAU / w.wavelength,
                    w.speed,
                    rng.random_range(0.0..TAU),
                )
            })
            .collect(),
    };

    let mut trajectories = Vec::with_capacity(spec.vehicle_count);
    let mut tracks = Vec::with_capacity(spec.vehicle_count);
    for i in 0..spec.vehicle_count {
        let jitter = rng.random_range(-0.4..0.4);
        let entry_index = ((-fill + (i as f64 + 0.5 + jitter) * headway) / dt).round() as i64;
        let t_entry = entry_index as f64 * dt;
        let mut motion: Box<dyn Motion + '_> = match spec.mode {
            SyntheticMode::CarFollowing => {
                let cruise = rng.random_range(spec.cruise_speed[0]..=spec.cruise_speed[1]);
                let amplitude = spec.oscillation_amplitude * rng.random_range(0.75..=1.25);
                let j = spec.period_jitter;
                let period = spec.oscillation_period * rng.random_range((1.0 - j)..=(1.0 + j));
                Box::new(Oscillator {
                    t_entry,
                    cruise,
                    amplitude,
                    omega: TAU / period,
                    phase: rng.random_range(0.0..TAU),
                })
            }
            SyntheticMode::PtmConsistent => Box::new(Advected {
                field: &field,
                t: t_entry,
                x: 0.0,
                substeps: 4,
            }),
        };

        let mut samples = Vec::new();
        let mut points = Vec::new();
        for idx in entry_index.max(0)..=last_index {
            let t = idx as f64 * dt;
            let (x, v, a) = motion.state(t);
            if x > spec.road_length {
                break;
            }
            samples.push(TrajectorySample::new(t, x));
            points.push(TruthPoint::new(&spec.params, t, x, v, a));
        }
        if samples.len() < 3 {
            continue;
        }
        let id = format!("v{:05}", i + 1);
        let lane = i64::from(i as u32 % spec.lanes) + 1;
        trajectories.push(Trajectory::new(id.clone(), samples, dt)?.with_lane(Some(lane)));
        tracks.push(TruthTrack {
            vehicle_id: id,
            points,
        });
    }

    let mode = match spec.mode {
        SyntheticMode::PtmConsistent => "ptm_consistent",
        SyntheticMode::CarFollowing => "car_following",
    };
    let corpus = TrajectoryCorpus::with_road_extent(
        trajectories,
        [0.0, spec.road_length],
        CorpusMetadata {
            source: format!("synthetic:{mode}:seed={}", spec.seed),
            period_label: "synthetic".into(),
        },
    )?;
    Ok(SyntheticCorpus {
        corpus,
        truth: GroundTruth {
            params: spec.params,
            tracks,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::kinematic_profile;

    fn small(mode: SyntheticMode) -> SyntheticSpec {
        SyntheticSpec {
            mode,
            vehicle_count: 20,
            duration: 60.0,
            ..SyntheticSpec::dense()
        }
    }

    #[test]
    fn zero_amplitude_means_constant_speed() {
        let spec = SyntheticSpec {
            oscillation_amplitude: 0.0,
            ..small(SyntheticMode::CarFollowing)
        };
        let s = generate_synthetic(&spec).unwrap();
        assert!(!s.corpus.is_empty());
        assert!(s
            .truth
            .tracks
            .iter()
            .flat_map(|t| &t.points)
            .all(|p| p.a == 0.0));
        for t in s.corpus.trajectories() {
            assert!(kinematic_profile(t).iter().all(|p| p.accel.abs() < 1e-9));
        }
    }

    #[test]
    fn deterministic_given_seed() {
        for mode in [SyntheticMode::CarFollowing, SyntheticMode::PtmConsistent] {
            let a = generate_synthetic(&small(mode)).unwrap();
            let b = generate_synthetic(&small(mode)).unwrap();
            assert_eq!(a, b);
            let c = generate_synthetic(&SyntheticSpec {
                seed: 7,
                ..small(mode)
            })
            .unwrap();
            assert_ne!(a.corpus, c.corpus);
        }
    }

    #[test]
    fn constant_speed_gives_zero_strong_perturbation() {
        let spec = SyntheticSpec {
            waves: vec![],
            ..small(SyntheticMode::PtmConsistent)
        };
        let s = generate_synthetic(&spec).unwrap();
        for p in s.truth.tracks.iter().flat_map(|t| &t.points) {
            assert_eq!(p.strong.unwrap().q_hat, 0.0);
        }
    }

    #[test]
    fn trajectories_satisfy_invariants_and_align_with_truth() {
        let s = generate_synthetic(&small(SyntheticMode::PtmConsistent)).unwrap();
        assert_eq!(s.corpus.len(), s.truth.tracks.len());
        for (t, tr) in s.corpus.trajectories().iter().zip(&s.truth.tracks) {
            assert_eq!(t.vehicle_id(), tr.vehicle_id);
            assert!(t.len() >= 3);
            assert_eq!(t.len(), tr.points.len());
            for w in t.samples().windows(2) {
                assert!((w[1].time - w[0].time - 0.1).abs() < 1e-9);
            }
        }
        let [t0, t1] = s.corpus.time_extent();
        assert!(t0 >= 0.0 && t1 <= 60.0 + 1e-9);
    }

    #[test]
    fn advection_matches_exact_speed() {
        // Central differences of the integrated positions track the field speed.
        let s = generate_synthetic(&small(SyntheticMode::PtmConsistent)).unwrap();
        for (t, tr) in s.corpus.trajectories().iter().zip(&s.truth.tracks) {
            for (k, p) in kinematic_profile(t).iter().zip(&tr.points[1..]) {
                assert!(
                    (k.v_central - p.v).abs() < 0.05,
                    "{} vs {}",
                    k.v_central,
                    p.v
                );
                assert!((k.accel - p.a).abs() < 0.1);
            }
        }
    }

    #[test]
    fn less_stable_truth_has_no_perturbation() {
        let s = generate_synthetic(&small(SyntheticMode::PtmConsistent)).unwrap();
        let p = s.truth.tracks[0].points[5];
        let l = p.less.unwrap();
        assert!(l.q_hat.abs() < 1e-12);
        assert!((l.rho_hat - p.v / 350.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(generate_synthetic(&SyntheticSpec {
            native_period: 0.0,
            ..SyntheticSpec::dense()
        })
        .is_err());
        assert!(generate_synthetic(&SyntheticSpec {
            vehicle_count: 0,
            ..SyntheticSpec::dense()
        })
        .is_err());
        let bad = SyntheticSpec {
            oscillation_amplitude: 40.0,
            ..SyntheticSpec::oscillatory()
        };
        assert!(bad.validate().is_err());
    }
}
