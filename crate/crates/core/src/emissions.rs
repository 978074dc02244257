//! Modal power-demand model for hydrocarbon emission and fuel consumption.
//!
//! The model works in km/h and km/h per second. Trajectory kinematics are in
//! ft/s and ft/s^2 and are converted exactly (1 ft = 0.3048 m), so
//! 1 ft/s = 1.09728 km/h.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::sig12;
use crate::kinematics::KinematicPoint;

/// ft/s to km/h: 0.0003048 km/ft * 3600 s/h.
pub const FPS_TO_KMH: f64 = 1.09728;

pub const HC_IDLE_G_PER_H: f64 = 52.8;
pub const HC_SLOPE: f64 = 4.2;
pub const FC_IDLE_L_PER_H: f64 = 2.35;
pub const FC_SLOPE: f64 = 0.55;

const GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleConfig {
    pub mass_kg: f64,
    /// Road grade angle in radians.
    pub grade_rad: f64,
}

impl Default for VehicleConfig {
    fn default() -> Self {
        Self {
            mass_kg: 1400.0,
            grade_rad: 0.0,
        }
    }
}

impl VehicleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mass_kg.is_finite() && self.mass_kg > 0.0) {
            return Err(Error::invalid("vehicle", "mass must be positive"));
        }
        if !(self.grade_rad.abs() < std::f64::consts::FRAC_PI_2) {
            return Err(Error::invalid("vehicle", "|grade| must be below pi/2"));
        }
        Ok(())
    }
}

/// Instantaneous total power demand in kW.
pub fn power_demand(v_kmh: f64, a_kmh_per_s: f64, vehicle: &VehicleConfig) -> f64 {
    let v = v_kmh;
    let resistive = 0.04 * v + 0.5e-3 * v * v + 10.8e-6 * v * v * v;
    let inertial = vehicle.mass_kg / 1000.0
        * (v / 3.6)
        * (a_kmh_per_s / 3.6 + GRAVITY * vehicle.grade_rad.sin());
    resistive + inertial
}

/// Hydrocarbon emission rate in g/h.
pub fn hc_rate(z_kw: f64) -> f64 {
    if z_kw > 0.0 {
        HC_IDLE_G_PER_H + HC_SLOPE * z_kw
    } else {
        HC_IDLE_G_PER_H
    }
}

/// Fuel consumption rate in L/h.
pub fn fc_rate(z_kw: f64) -> f64 {
    if z_kw > 0.0 {
        FC_IDLE_L_PER_H + FC_SLOPE * z_kw
    } else {
        FC_IDLE_L_PER_H
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmissionRecord {
    pub time: f64,
    pub power_kw: f64,
    pub hc_rate_g_per_h: f64,
    pub fc_rate_l_per_h: f64,
}

/// Rates for a single kinematic point (central velocity, acceleration).
/// Negative speeds, which only arise from position noise, are taken as 0.
pub fn emission_record(p: &KinematicPoint, vehicle: &VehicleConfig) -> EmissionRecord {
    let v_kmh = p.v_central.max(0.0) * FPS_TO_KMH;
    let a_kmh_s = p.accel * FPS_TO_KMH;
    let z = power_demand(v_kmh, a_kmh_s, vehicle);
    EmissionRecord {
        time: p.time,
        power_kw: z,
        hc_rate_g_per_h: hc_rate(z),
        fc_rate_l_per_h: fc_rate(z),
    }
}

pub fn emission_profile(points: &[KinematicPoint], vehicle: &VehicleConfig) -> Vec<EmissionRecord> {
    points.iter().map(|p| emission_record(p, vehicle)).collect()
}

pub const EMISSIONS_HEADER: &str = "vehicle_id,time_s,z_kw,r_hc_gph,r_fc_lph";

pub fn write_emission_rows<W: Write + ?Sized>(
    out: &mut W,
    vehicle_id: &str,
    records: &[EmissionRecord],
) -> std::io::Result<()> {
    for r in records {
        writeln!(
            out,
            "{vehicle_id},{},{},{},{}",
            sig12(r.time),
            sig12(r.power_kw),
            sig12(r.hc_rate_g_per_h),
            sig12(r.fc_rate_l_per_h)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn point(v: f64, a: f64) -> KinematicPoint {
        KinematicPoint {
            time: 0.0,
            position: 0.0,
            v_central: v,
            v_backward: v,
            v_forward: v,
            accel: a,
            v_x: Some(0.0),
        }
    }

    #[test]
    fn power_examples() {
        let veh = VehicleConfig::default();
        assert_eq!(power_demand(0.0, 0.0, &veh), 0.0);
        // 2 + 1.25 + 1.35
        assert!((power_demand(50.0, 0.0, &veh) - 4.6).abs() < 1e-12);
        assert!(power_demand(10.0, -5.0, &veh) < 0.0);
    }

    #[test]
    fn rate_examples() {
        assert_eq!(hc_rate(-3.0), 52.8);
        assert_eq!(hc_rate(0.0), 52.8);
        assert!((hc_rate(10.0) - 94.8).abs() < 1e-12);
        assert_eq!(fc_rate(-1.0), 2.35);
        assert_eq!(fc_rate(0.0), 2.35);
        assert!((fc_rate(4.6) - 4.88).abs() < 1e-12);
    }

    #[test]
    fn profile_examples() {
        let veh = VehicleConfig::default();
        let r = emission_profile(&[point(0.0, 0.0); 3], &veh);
        assert!(r
            .iter()
            .all(|r| r.power_kw == 0.0 && r.hc_rate_g_per_h == 52.8 && r.fc_rate_l_per_h == 2.35));
        let r = emission_record(&point(45.56, 0.0), &veh);
        assert!((r.power_kw - 4.6).abs() < 2e-3);
        assert!(
            emission_record(&point(30.0, 1.0), &veh).power_kw
                > emission_record(&point(30.0, 0.5), &veh).power_kw
        );
    }

    #[test]
    fn feet_conversion_is_exact_definition() {
        assert!((FPS_TO_KMH - 0.3048 * 3.6).abs() < 1e-15);
    }

    #[test]
    fn vehicle_validation() {
        assert!(VehicleConfig::default().validate().is_ok());
        assert!(VehicleConfig {
            mass_kg: 0.0,
            grade_rad: 0.0
        }
        .validate()
        .is_err());
        assert!(VehicleConfig {
            mass_kg: 1.0,
            grade_rad: 2.0
        }
        .validate()
        .is_err());
    }

    proptest! {
        #[test]
        fn rates_monotone_with_floors(z1 in -50.0..50.0f64, z2 in -50.0..50.0f64) {
            let (lo, hi) = if z1 <= z2 { (z1, z2) } else { (z2, z1) };
            prop_assert!(hc_rate(lo) <= hc_rate(hi));
            prop_assert!(fc_rate(lo) <= fc_rate(hi));
            prop_assert!(hc_rate(lo) >= HC_IDLE_G_PER_H && fc_rate(lo) >= FC_IDLE_L_PER_H);
        }

        #[test]
        fn power_increases_with_speed(v in 0.0..150.0f64, dv in 0.01..20.0f64, a in 0.0..10.0f64, g in 0.0..0.3f64) {
            let veh = VehicleConfig { mass_kg: 1400.0, grade_rad: g };
            prop_assert!(power_demand(v + dv, a, &veh) > power_demand(v, a, &veh));
        }
    }
}
