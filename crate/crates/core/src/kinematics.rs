//! Finite-difference kinematics from position triples `x(t-dt), x(t), x(t+dt)`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::sig12;
use crate::trajectory::Trajectory;

/// Below this `|x3 - x1|` (ft) the spatial velocity gradient is treated as
/// undefined: the vehicle is (nearly) standing still over the stencil.
pub const EPS_POS: f64 = 1e-6;

/// Backward and forward interval velocities.
#[inline]
pub fn interval_velocities(x1: f64, x2: f64, x3: f64, dt: f64) -> (f64, f64) {
    debug_assert!(dt > 0.0);
    ((x2 - x1) / dt, (x3 - x2) / dt)
}

#[inline]
pub fn central_velocity(x1: f64, x3: f64, dt: f64) -> f64 {
    debug_assert!(dt > 0.0);
    (x3 - x1) / (2.0 * dt)
}

/// Second difference; the material derivative of velocity seen by the vehicle.
#[inline]
pub fn acceleration(x1: f64, x2: f64, x3: f64, dt: f64) -> f64 {
    debug_assert!(dt > 0.0);
    (x3 - 2.0 * x2 + x1) / (dt * dt)
}

/// Eulerian `dv/dx` at the stencil's weighted midpoint, or `None` when the
/// vehicle barely moved (`|x3 - x1| <= EPS_POS`).
#[inline]
pub fn spatial_velocity_gradient(x1: f64, x2: f64, x3: f64, dt: f64) -> Option<f64> {
    debug_assert!(dt > 0.0);
    let span = x3 - x1;
    if span.abs() <= EPS_POS {
        return None;
    }
    Some((2.0 / dt) * (x3 - 2.0 * x2 + x1) / span)
}

/// Kinematic estimates at one interior sample of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KinematicPoint {
    pub time: f64,
    pub position: f64,
    pub v_central: f64,
    pub v_backward: f64,
    pub v_forward: f64,
    pub accel: f64,
    /// `None` marks a degenerate stencil.
    pub v_x: Option<f64>,
}

impl KinematicPoint {
    pub fn from_triple(time: f64, x1: f64, x2: f64, x3: f64, dt: f64) -> Self {
        let (v_backward, v_forward) = interval_velocities(x1, x2, x3, dt);
        Self {
            time,
            position: x2,
            v_central: 0.5 * (v_backward + v_forward),
            v_backward,
            v_forward,
            accel: acceleration(x1, x2, x3, dt),
            v_x: spatial_velocity_gradient(x1, x2, x3, dt),
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.v_x.is_none()
    }
}

/// Keeps every `factor`-th sample starting at `offset`.
pub fn subsample(traj: &Trajectory, factor: usize, offset: usize) -> Result<Trajectory> {
    if factor == 0 {
        return Err(Error::invalid("sampling factor", "must be positive"));
    }
    if offset >= factor {
        return Err(Error::invalid(
            "subsample offset",
            format!("offset {offset} must be below factor {factor}"),
        ));
    }
    let samples: Vec<_> = traj
        .samples()
        .iter()
        .skip(offset)
        .step_by(factor)
        .copied()
        .collect();
    if samples.len() < 3 {
        return Err(Error::TooShort {
            vehicle: traj.vehicle_id().to_string(),
            len: samples.len(),
            factor,
        });
    }
    Ok(Trajectory::new(
        traj.vehicle_id(),
        samples,
        traj.native_period() * factor as f64,
    )?
    .with_lane(traj.lane()))
}

/// One point per interior sample; the end samples have no centred stencil.
pub fn kinematic_profile(traj: &Trajectory) -> Vec<KinematicPoint> {
    let dt = traj.native_period();
    traj.samples()
        .windows(3)
        .map(|w| {
            KinematicPoint::from_triple(w[1].time, w[0].position, w[1].position, w[2].position, dt)
        })
        .collect()
}

/// `sum|truth - estimate| / sum|truth|` over aligned sequences.
pub fn relative_l1_error(truth: &[f64], estimate: &[f64]) -> Result<f64> {
    if truth.is_empty() || truth.len() != estimate.len() {
        return Err(Error::invalid(
            "error sequences",
            format!(
                "lengths {} and {} must match and be nonzero",
                truth.len(),
                estimate.len()
            ),
        ));
    }
    let denom: f64 = truth.iter().map(|t| t.abs()).sum();
    if denom <= 0.0 {
        return Err(Error::ZeroDenominator);
    }
    let num: f64 = truth.iter().zip(estimate).map(|(t, e)| (t - e).abs()).sum();
    Ok(num / denom)
}

pub const KINEMATICS_HEADER: &str =
    "vehicle_id,time_s,position_ft,v_fps,a_fps2,vx_per_s,degenerate_flag";

/// Writes one CSV row per point. `v_fps` is the central velocity; the
/// gradient column is empty for degenerate points.
pub fn write_kinematics_rows<W: Write + ?Sized>(
    out: &mut W,
    vehicle_id: &str,
    points: &[KinematicPoint],
) -> std::io::Result<()> {
    for p in points {
        writeln!(
            out,
            "{vehicle_id},{},{},{},{},{},{}",
            sig12(p.time),
            sig12(p.position),
            sig12(p.v_central),
            sig12(p.accel),
            p.v_x.map(sig12).unwrap_or_default(),
            u8::from(p.is_degenerate()),
        )?;
    }
    Ok(())
}
