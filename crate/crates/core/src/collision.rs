//! Oriented-rectangle overlap via the separating axis test (exact for
//! rectangles).

use crate::math::{Pose, Vec2};

/// Half-extents of a vehicle's rectangular collision footprint.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Footprint {
    pub half_length: f64,
    pub half_width: f64,
}

impl Footprint {
    pub fn new(half_length: f64, half_width: f64) -> Self {
        Footprint {
            half_length,
            half_width,
        }
    }
}

fn corners(pose: Pose, fp: Footprint) -> [Vec2; 4] {
    [
        Vec2::new(fp.half_length, fp.half_width),
        Vec2::new(fp.half_length, -fp.half_width),
        Vec2::new(-fp.half_length, -fp.half_width),
        Vec2::new(-fp.half_length, fp.half_width),
    ]
    .map(|c| pose.to_world(c))
}

fn project_onto(points: &[Vec2; 4], axis: Vec2) -> (f64, f64) {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for p in points {
        let d = p.dot(axis);
        min = min.min(d);
        max = max.max(d);
    }
    (min, max)
}

/// True when the two oriented rectangles overlap (touching counts as
/// overlap).
pub fn collision_check(pose_a: Pose, fp_a: Footprint, pose_b: Pose, fp_b: Footprint) -> bool {
    let ca = corners(pose_a, fp_a);
    let cb = corners(pose_b, fp_b);
    // Two unique edge normals per rectangle.
    let axes = [
        Vec2::from_angle(pose_a.phi),
        Vec2::from_angle(pose_a.phi).perp(),
        Vec2::from_angle(pose_b.phi),
        Vec2::from_angle(pose_b.phi).perp(),
    ];
    for axis in axes {
        let (min_a, max_a) = project_onto(&ca, axis);
        let (min_b, max_b) = project_onto(&cb, axis);
        if max_a < min_b || max_b < min_a {
            return false;
        }
    }
    true
}
