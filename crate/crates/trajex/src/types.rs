//! Shared domain types used across the pipeline.

use serde::{Deserialize, Serialize};

/// Object classes reported by the camera detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VehicleClass {
    Car,
    Bus,
    Truck,
    Motorcycle,
}

impl VehicleClass {
    pub const ALL: [VehicleClass; 4] = [
        VehicleClass::Car,
        VehicleClass::Bus,
        VehicleClass::Truck,
        VehicleClass::Motorcycle,
    ];

    /// Fixed tie-break priority for class voting: car > truck > bus > motorcycle.
    pub fn vote_priority(self) -> u8 {
        match self {
            VehicleClass::Car => 3,
            VehicleClass::Truck => 2,
            VehicleClass::Bus => 1,
            VehicleClass::Motorcycle => 0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            VehicleClass::Car => "car",
            VehicleClass::Bus => "bus",
            VehicleClass::Truck => "truck",
            VehicleClass::Motorcycle => "motorcycle",
        }
    }

    pub fn parse(s: &str) -> Option<VehicleClass> {
        match s {
            "car" => Some(VehicleClass::Car),
            "bus" => Some(VehicleClass::Bus),
            "truck" => Some(VehicleClass::Truck),
            "motorcycle" => Some(VehicleClass::Motorcycle),
            _ => None,
        }
    }
}

/// One timestamped kinematic sample of a trajectory: position, velocity and
/// heading in a 2D plane frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateSample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub theta: f64,
}

impl StateSample {
    pub fn radial_distance(&self) -> f64 {
        (self.x * self.x + self.y * self.y).sqrt()
    }
}

/// Wrap an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut a = a.rem_euclid(2.0 * std::f64::consts::PI);
    if a > std::f64::consts::PI {
        a -= 2.0 * std::f64::consts::PI;
    }
    a
}

/// Signed shortest angular difference a - b, wrapped to (-pi, pi].
pub fn angle_diff(a: f64, b: f64) -> f64 {
    wrap_angle(a - b)
}
