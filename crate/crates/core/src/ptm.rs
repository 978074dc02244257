//! Inversion of the congested phase of the phase-transition model: recover
//! density `rho` and the normalized perturbation `q_hat = q - q*` from
//! trajectory kinematics.
//!
//! The congested velocity closure is `v = (rho_jam - rho) (A + B q_hat)` and
//! the perturbation relaxes with a Siebel-Mauser source of time scale
//! `relax = T - tau`. Three regimes are supported:
//!
//! * strongly stable traffic (`rho_t = rho_x = q_x = 0`): needs `v` and `Dv/Dt`;
//! * less stable traffic (`rho_x` retained): additionally needs `v_x`;
//! * no source term: reduces to a quadratic in `q_hat` that depends on `v` only.
//!
//! Nominal `q*` never enters the computation; everything is in `q_hat`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::KinematicPoint;

/// Denominators closer to zero than this are rejected as singular.
pub const SINGULAR_EPS: f64 = 1e-12;

/// Relative tolerance for the `v == 4/9 A rho_jam` branch of the no-source
/// inversion.
pub const THRESHOLD_REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PtmParams {
    /// Free-perturbation velocity slope, ft/s per veh/ft.
    pub a: f64,
    /// Perturbation velocity slope, ft/s per veh/ft per unit `q_hat`.
    pub b: f64,
    /// Jam density, veh/ft.
    pub rho_jam: f64,
    /// `T - tau` in seconds; negative values give stable traffic.
    pub relax: f64,
}

impl Default for PtmParams {
    fn default() -> Self {
        Self {
            a: 350.0,
            b: 160.0,
            rho_jam: 0.14,
            relax: -1.0 / 3.0,
        }
    }
}

impl PtmParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !(positive(self.a) && positive(self.b) && positive(self.rho_jam)) {
            return Err(Error::invalid(
                "ptm params",
                format!("A, B and rho_jam must be positive, got {self:?}"),
            ));
        }
        if !self.relax.is_finite() || self.relax == 0.0 {
            return Err(Error::invalid(
                "ptm params",
                "relax (T - tau) must be nonzero",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "strong")]
    StronglyStable,
    #[serde(rename = "less")]
    LessStable,
    #[serde(rename = "nosource")]
    NoSource,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::StronglyStable, Scheme::LessStable, Scheme::NoSource];

    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::StronglyStable => "strong",
            Scheme::LessStable => "less",
            Scheme::NoSource => "nosource",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strong" => Ok(Scheme::StronglyStable),
            "less" => Ok(Scheme::LessStable),
            "nosource" => Ok(Scheme::NoSource),
            other => Err(Error::invalid(
                "scheme",
                format!("unknown scheme `{other}`"),
            )),
        }
    }
}

/// Which one-sided velocity feeds the less-stable inversion. The central
/// velocity cannot be used: it makes `Dv/Dt - v v_x` vanish identically.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VelocityChoice {
    #[default]
    Backward,
    Forward,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PtmState {
    pub rho: f64,
    pub rho_hat: f64,
    pub q_hat: f64,
    pub scheme: Scheme,
    /// `rho` in `[0, rho_jam]` and `q_hat` in `[-1, 1]`.
    pub in_range: bool,
}

impl PtmState {
    fn new(params: &PtmParams, rho_hat: f64, q_hat: f64, scheme: Scheme) -> Self {
        Self::with_rho(params, params.rho_jam - rho_hat, rho_hat, q_hat, scheme)
    }

    fn with_rho(params: &PtmParams, rho: f64, rho_hat: f64, q_hat: f64, scheme: Scheme) -> Self {
        let in_range = (0.0..=params.rho_jam).contains(&rho) && (-1.0..=1.0).contains(&q_hat);
        Self {
            rho,
            rho_hat,
            q_hat,
            scheme,
            in_range,
        }
    }

    /// Copy with `rho` clamped to `[0, rho_jam]` and `q_hat` to `[-1, 1]`.
    pub fn clamped(&self, params: &PtmParams) -> Self {
        let rho = self.rho.clamp(0.0, params.rho_jam);
        Self {
            rho,
            rho_hat: params.rho_jam - rho,
            q_hat: self.q_hat.clamp(-1.0, 1.0),
            scheme: self.scheme,
            in_range: true,
        }
    }
}

/// Congested-phase velocity `(rho_jam - rho)(A + B q_hat)`.
pub fn velocity_closure(params: &PtmParams, rho: f64, q_hat: f64) -> f64 {
    (params.rho_jam - rho) * (params.a + params.b * q_hat)
}

/// Strongly stable inversion from velocity and acceleration.
pub fn invert_strongly_stable(params: &PtmParams, v: f64, a: f64) -> Result<PtmState> {
    let relaxed = v + params.relax * a;
    if relaxed.abs() <= SINGULAR_EPS {
        return Err(Error::Singular("v + (T - tau) a vanishes"));
    }
    let rho_hat = relaxed / params.a;
    let q_hat = -(params.a * params.relax / params.b) * a / relaxed;
    Ok(PtmState::new(
        params,
        rho_hat,
        q_hat,
        Scheme::StronglyStable,
    ))
}

/// Less stable inversion from a one-sided velocity, acceleration and the
/// spatial velocity gradient.
pub fn invert_less_stable(params: &PtmParams, v: f64, a: f64, v_x: f64) -> Result<PtmState> {
    let relaxed = v + params.relax * a;
    let stretch = 1.0 + params.relax * v_x;
    if stretch.abs() <= SINGULAR_EPS {
        return Err(Error::Singular("1 + (T - tau) v_x vanishes"));
    }
    if relaxed.abs() <= SINGULAR_EPS {
        return Err(Error::Singular("v + (T - tau) a vanishes"));
    }
    let rho_hat = relaxed / (params.a * stretch);
    let q_hat = (params.a / params.b) * params.relax * (v * v_x - a) / relaxed;
    Ok(PtmState::new(params, rho_hat, q_hat, Scheme::LessStable))
}

/// Smallest velocity for which the no-source system has a real solution,
/// `4/9 A rho_jam`.
pub fn feasibility_threshold(params: &PtmParams) -> f64 {
    4.0 / 9.0 * params.a * params.rho_jam
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoSourceOutcome {
    Feasible(PtmState),
    /// `v` is below [`feasibility_threshold`]; no real solution exists.
    Infeasible,
}

impl NoSourceOutcome {
    pub fn state(&self) -> Option<&PtmState> {
        match self {
            NoSourceOutcome::Feasible(s) => Some(s),
            NoSourceOutcome::Infeasible => None,
        }
    }
}

/// No-source inversion. Along a trajectory `(1/v_x) Dv/Dt` equals the central
/// velocity, so the quadratic in `q_hat` depends on `v` alone:
///
/// `B^2 rho_jam q^2 + B (2 A rho_jam - 3 v) q - A (2 v - A rho_jam) = 0`.
///
/// Above `A rho_jam / 2` the roots have opposite signs and the positive one
/// keeps `rho >= 0`; between the feasibility threshold and `A rho_jam / 2` both
/// are non-positive and the more negative root is taken.
pub fn invert_no_source(params: &PtmParams, v: f64) -> NoSourceOutcome {
    let (a, b, jam) = (params.a, params.b, params.rho_jam);
    let threshold = feasibility_threshold(params);
    if (v - threshold).abs() <= THRESHOLD_REL_TOL * threshold {
        let rho = jam / 3.0;
        return NoSourceOutcome::Feasible(PtmState::with_rho(
            params,
            rho,
            jam - rho,
            -a / (3.0 * b),
            Scheme::NoSource,
        ));
    }
    if v < threshold {
        return NoSourceOutcome::Infeasible;
    }
    let root = (9.0 * v * v - 4.0 * a * jam * v).sqrt();
    let lead = 3.0 * v - 2.0 * a * jam;
    let num = if v > 0.5 * a * jam {
        lead + root
    } else {
        lead - root
    };
    let rho = 2.0 * jam * (2.0 * v - a * jam) / num;
    let q_hat = num / (2.0 * b * jam);
    NoSourceOutcome::Feasible(PtmState::with_rho(
        params,
        rho,
        jam - rho,
        q_hat,
        Scheme::NoSource,
    ))
}

/// Why a point produced no state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    /// Spatial gradient undefined (vehicle nearly stationary).
    Degenerate,
    Singular,
    Infeasible,
}

impl SkipReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            SkipReason::Degenerate => "degenerate",
            SkipReason::Singular => "singular",
            SkipReason::Infeasible => "infeasible",
        }
    }
}

/// Applies `scheme` to one kinematic point. The strongly stable and
/// no-source schemes use the central velocity; the less stable scheme uses
/// the one-sided velocity selected by `choice`.
pub fn invert_point(
    params: &PtmParams,
    scheme: Scheme,
    choice: VelocityChoice,
    p: &KinematicPoint,
) -> std::result::Result<PtmState, SkipReason> {
    match scheme {
        Scheme::StronglyStable => {
            invert_strongly_stable(params, p.v_central, p.accel).map_err(|_| SkipReason::Singular)
        }
        Scheme::LessStable => {
            let v_x = p.v_x.ok_or(SkipReason::Degenerate)?;
            let v = match choice {
                VelocityChoice::Backward => p.v_backward,
                VelocityChoice::Forward => p.v_forward,
            };
            invert_less_stable(params, v, p.accel, v_x).map_err(|_| SkipReason::Singular)
        }
        Scheme::NoSource => match invert_no_source(params, p.v_central) {
            NoSourceOutcome::Feasible(s) => Ok(s),
            NoSourceOutcome::Infeasible => Err(SkipReason::Infeasible),
        },
    }
}
