//! Arc-length parameterized reference path.
//!
//! A global route polyline is interpolated with a centripetal Catmull-Rom
//! spline, resampled at uniform arc-length steps, and then evaluated with
//! linear position interpolation. The heading at a parameter is the tangent
//! of the containing resampled segment, so the sampled heading field follows
//! the piecewise-linear geometry exactly; angle arithmetic at knots uses
//! shortest-arc blending to stay continuous across the +/-pi seam.

use alloc::string::String;
use alloc::vec::Vec;

use crate::lane_graph::CenterPoint;
#[allow(unused_imports)] // trait shim backs no_std float math
use crate::math::{angle_mean, point_segment_distance, FloatExt as _, Vec2};

#[derive(Clone, Debug, PartialEq)]
pub enum PathError {
    InvalidInput(String),
}

impl core::fmt::Display for PathError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            PathError::InvalidInput(m) => write!(f, "invalid input: {m}"),
        }
    }
}

impl core::error::Error for PathError {}

/// Sampled path point.
#[derive(Clone, Copy, Debug)]
pub struct PathSample {
    pub x: f64,
    pub y: f64,
    pub phi: f64,
    /// Set when the query parameter fell outside `[0, total_length]` and was
    /// clamped.
    pub clamped: bool,
}

/// Local path frame used by the planner: position, tangent heading and unit
/// tangent at a progress value.
#[derive(Clone, Copy, Debug)]
pub struct PathFrame {
    pub pos: Vec2,
    pub phi: f64,
    pub tangent: Vec2,
}

/// Default arc-length resampling step in meters.
pub const DEFAULT_RESAMPLE_STEP: f64 = 0.5;

/// Window half-width for hinted projection, in meters.
pub const PROJECTION_HINT_WINDOW: f64 = 20.0;

/// Arc-length parameterized route; immutable after construction.
#[derive(Clone, Debug)]
pub struct ReferencePath {
    /// Strictly increasing knot arc lengths starting at 0; uniform spacing.
    knots: Vec<f64>,
    positions: Vec<Vec2>,
    /// Per-knot headings: shortest-arc mean of the adjacent segment tangents.
    headings: Vec<f64>,
    /// Per-segment chord headings (length = knots.len() - 1).
    seg_phi: Vec<f64>,
    /// Per-segment unit chords.
    seg_unit: Vec<Vec2>,
    step: f64,
    total_length: f64,
}

impl ReferencePath {
    /// Builds a path through `points` using a centripetal Catmull-Rom spline
    /// resampled at (at most) `resample_step` arc-length increments.
    pub fn from_polyline(points: &[Vec2], resample_step: f64) -> Result<Self, PathError> {
        if points.len() < 2 {
            return Err(PathError::InvalidInput("need at least two points".into()));
        }
        if !(resample_step > 0.0) || !resample_step.is_finite() {
            return Err(PathError::InvalidInput(
                "resample_step must be positive".into(),
            ));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(PathError::InvalidInput("non-finite input point".into()));
        }
        if points.windows(2).any(|w| w[0].dist(w[1]) <= 1e-12) {
            return Err(PathError::InvalidInput(
                "duplicate consecutive points".into(),
            ));
        }

        let dense = centripetal_catmull_rom(points, resample_step);
        Ok(Self::resample(&dense, resample_step))
    }

    /// Builds a path from a lane-graph route centerline (positions only; the
    /// spline recomputes headings).
    pub fn from_centerline(
        centerline: &[CenterPoint],
        resample_step: f64,
    ) -> Result<Self, PathError> {
        let mut pts: Vec<Vec2> = Vec::with_capacity(centerline.len());
        for c in centerline {
            let p = c.position();
            // Route concatenation can carry near-duplicate junction points.
            if pts.last().map_or(true, |l: &Vec2| l.dist(p) > 1e-9) {
                pts.push(p);
            }
        }
        Self::from_polyline(&pts, resample_step)
    }

    fn resample(dense: &[Vec2], resample_step: f64) -> Self {
        let mut arc = Vec::with_capacity(dense.len());
        let mut acc = 0.0;
        arc.push(0.0);
        for w in dense.windows(2) {
            acc += w[0].dist(w[1]);
            arc.push(acc);
        }
        let total = acc;
        let n_seg = ((total / resample_step).ceil() as usize).max(1);
        let h = total / n_seg as f64;

        let mut positions = Vec::with_capacity(n_seg + 1);
        let mut cursor = 0;
        for k in 0..=n_seg {
            let s = (k as f64 * h).min(total);
            while cursor + 2 < arc.len() && arc[cursor + 1] < s {
                cursor += 1;
            }
            let span = arc[cursor + 1] - arc[cursor];
            let t = if span > 0.0 {
                (s - arc[cursor]) / span
            } else {
                0.0
            };
            positions.push(dense[cursor].lerp(dense[cursor + 1], t.clamp(0.0, 1.0)));
        }

        let knots: Vec<f64> = (0..=n_seg).map(|k| k as f64 * h).collect();
        let seg_unit: Vec<Vec2> = positions
            .windows(2)
            .map(|w| {
                let d = w[1] - w[0];
                let n = d.norm();
                if n > 0.0 {
                    d.scaled(1.0 / n)
                } else {
                    Vec2::new(1.0, 0.0)
                }
            })
            .collect();
        let seg_phi: Vec<f64> = seg_unit.iter().map(|u| u.angle()).collect();
        let headings: Vec<f64> = (0..positions.len())
            .map(|i| {
                if i == 0 {
                    seg_phi[0]
                } else if i == positions.len() - 1 {
                    seg_phi[i - 1]
                } else {
                    angle_mean(seg_phi[i - 1], seg_phi[i])
                }
            })
            .collect();

        ReferencePath {
            knots,
            positions,
            headings,
            seg_phi,
            seg_unit,
            step: h,
            total_length: total,
        }
    }

    pub fn total_length(&self) -> f64 {
        self.total_length
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn positions(&self) -> &[Vec2] {
        &self.positions
    }

    pub fn headings(&self) -> &[f64] {
        &self.headings
    }

    pub fn resample_step(&self) -> f64 {
        self.step
    }

    fn segment_of(&self, theta: f64) -> (usize, f64) {
        let last = self.seg_phi.len() - 1;
        let idx = ((theta / self.step).floor() as usize).min(last);
        (idx, theta - self.knots[idx])
    }

    /// Samples position and heading at arc length `theta`; out-of-domain
    /// parameters clamp and set the flag.
    pub fn sample(&self, theta: f64) -> Result<PathSample, PathError> {
        if !theta.is_finite() {
            return Err(PathError::InvalidInput("non-finite theta".into()));
        }
        let clamped = !(0.0..=self.total_length).contains(&theta);
        let f = self.frame_at(theta);
        Ok(PathSample {
            x: f.pos.x,
            y: f.pos.y,
            phi: f.phi,
            clamped,
        })
    }

    /// Infallible clamped evaluation used on the solver hot path.
    pub fn frame_at(&self, theta: f64) -> PathFrame {
        let th = theta.clamp(0.0, self.total_length);
        let (idx, t) = self.segment_of(th);
        let pos = self.positions[idx] + self.seg_unit[idx].scaled(t);
        PathFrame {
            pos,
            phi: self.seg_phi[idx],
            tangent: self.seg_unit[idx],
        }
    }

    /// Arc-length parameter of the point on the path closest to the query.
    /// With a hint the search is restricted to a window of
    /// [`PROJECTION_HINT_WINDOW`] meters around it.
    pub fn project(&self, x: f64, y: f64, hint: Option<f64>) -> Result<f64, PathError> {
        if !x.is_finite() || !y.is_finite() {
            return Err(PathError::InvalidInput("non-finite query".into()));
        }
        let q = Vec2::new(x, y);
        let (lo, hi) = match hint {
            Some(h) => {
                let h = h.clamp(0.0, self.total_length);
                let lo = ((h - PROJECTION_HINT_WINDOW) / self.step).floor().max(0.0) as usize;
                let hi = (((h + PROJECTION_HINT_WINDOW) / self.step).floor() as usize)
                    .min(self.seg_phi.len() - 1);
                (lo, hi)
            }
            None => (0, self.seg_phi.len() - 1),
        };
        let mut best = (f64::INFINITY, 0.0);
        for i in lo..=hi {
            let a = self.positions[i];
            let b = self.positions[i + 1];
            let (d, t) = point_segment_distance(q, a, b);
            if d < best.0 {
                best = (d, self.knots[i] + t);
            }
        }
        Ok(best.1)
    }
}

/// Densely samples a centripetal Catmull-Rom spline (alpha = 0.5) through
/// the control points, using reflected ghost endpoints.
fn centripetal_catmull_rom(points: &[Vec2], resample_step: f64) -> Vec<Vec2> {
    let n = points.len();
    let ghost_start = points[0] + (points[0] - points[1]);
    let ghost_end = points[n - 1] + (points[n - 1] - points[n - 2]);

    let ctrl = |i: isize| -> Vec2 {
        if i < 0 {
            ghost_start
        } else if i as usize >= n {
            ghost_end
        } else {
            points[i as usize]
        }
    };

    let mut dense = Vec::new();
    dense.push(points[0]);
    for seg in 0..n - 1 {
        let p0 = ctrl(seg as isize - 1);
        let p1 = ctrl(seg as isize);
        let p2 = ctrl(seg as isize + 1);
        let p3 = ctrl(seg as isize + 2);
        let chord = p1.dist(p2);
        let samples = ((chord / (resample_step * 0.25)).ceil() as usize).clamp(4, 256);
        for k in 1..=samples {
            let t = k as f64 / samples as f64;
            dense.push(catmull_rom_point(p0, p1, p2, p3, t));
        }
    }
    dense
}

/// Barry-Goldman evaluation of one centripetal Catmull-Rom segment at
/// normalized parameter `t` in [0, 1] between `p1` and `p2`.
fn catmull_rom_point(p0: Vec2, p1: Vec2, p2: Vec2, p3: Vec2, t: f64) -> Vec2 {
    // Centripetal knot spacing: sqrt of chord lengths.
    let t0 = 0.0;
    let t1 = t0 + p0.dist(p1).sqrt().max(1e-9);
    let t2 = t1 + p1.dist(p2).sqrt().max(1e-9);
    let t3 = t2 + p2.dist(p3).sqrt().max(1e-9);
    let t = t1 + t * (t2 - t1);

    let lerp = |a: Vec2, b: Vec2, ta: f64, tb: f64, t: f64| -> Vec2 {
        if (tb - ta).abs() < 1e-12 {
            return a;
        }
        let w = (t - ta) / (tb - ta);
        a.scaled(1.0 - w) + b.scaled(w)
    };
    let a1 = lerp(p0, p1, t0, t1, t);
    let a2 = lerp(p1, p2, t1, t2, t);
    let a3 = lerp(p2, p3, t2, t3, t);
    let b1 = lerp(a1, a2, t0, t2, t);
    let b2 = lerp(a2, a3, t1, t3, t);
    lerp(b1, b2, t1, t2, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{angle_diff, normalize_angle};
    use crate::rng::Rng;
    use core::f64::consts::{FRAC_PI_2, PI};

    fn straight(n: usize, step: f64) -> ReferencePath {
        let pts: Vec<Vec2> = (0..n).map(|i| Vec2::new(i as f64 * 5.0, 0.0)).collect();
        ReferencePath::from_polyline(&pts, step).unwrap()
    }

    #[test]
    fn collinear_points_give_zero_heading_and_exact_length() {
        let path = straight(5, 0.5);
        assert!((path.total_length() - 20.0).abs() < 1e-9);
        for k in 0..40 {
            let s = path.sample(k as f64 * 0.5).unwrap();
            assert!(s.phi.abs() < 1e-9, "phi {}", s.phi);
            assert!(s.y.abs() < 1e-9);
        }
    }

    #[test]
    fn two_points_make_a_chord() {
        let path =
            ReferencePath::from_polyline(&[Vec2::new(1.0, 1.0), Vec2::new(4.0, 5.0)], 0.5).unwrap();
        assert!((path.total_length() - 5.0).abs() < 1e-9);
        let want_phi = 4.0f64.atan2(3.0); // atan2 of the chord
        let s = path.sample(2.5).unwrap();
        assert!(angle_diff(s.phi, want_phi).abs() < 1e-9);
    }

    #[test]
    fn quarter_circle_arc_length_within_half_percent() {
        let r = 10.0;
        let pts: Vec<Vec2> = (0..=90)
            .map(|deg| {
                let a = (deg as f64).to_radians();
                Vec2::new(r * a.cos(), r * a.sin())
            })
            .collect();
        let path = ReferencePath::from_polyline(&pts, 0.5).unwrap();
        let want = 0.5 * PI * r;
        let got = path.total_length();
        assert!(
            (got - want).abs() / want < 0.005,
            "arc length {got} vs {want}"
        );
    }

    #[test]
    fn sample_hits_endpoints_exactly() {
        let path = straight(4, 0.5);
        let s0 = path.sample(0.0).unwrap();
        assert_eq!((s0.x, s0.y), (0.0, 0.0));
        assert!(!s0.clamped);
        let s1 = path.sample(path.total_length()).unwrap();
        assert!((s1.x - 15.0).abs() < 1e-9 && s1.y.abs() < 1e-12);
        let over = path.sample(path.total_length() + 3.0).unwrap();
        assert!(over.clamped);
        assert!((over.x - 15.0).abs() < 1e-9);
        assert!(path.sample(f64::NAN).is_err());
    }

    #[test]
    fn straight_midpoint_is_chord_midpoint() {
        let path = straight(2, 0.5);
        let s = path.sample(2.5).unwrap();
        assert!((s.x - 2.5).abs() < 1e-9 && s.y.abs() < 1e-12);
    }

    #[test]
    fn project_recovers_on_path_points() {
        let path = straight(5, 0.5);
        let th = path.project(7.0, 0.0, None).unwrap();
        assert!((th - 7.0).abs() < 1e-9);
        // 1 m lateral offset projects to the perpendicular foot.
        let th = path.project(7.0, 1.0, None).unwrap();
        assert!((th - 7.0).abs() < 1e-6);
        assert!(path.project(f64::NAN, 0.0, None).is_err());
    }

    #[test]
    fn project_matches_dense_oracle_on_curvy_path() {
        let pts: Vec<Vec2> = alloc::vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(10.0, 2.0),
            Vec2::new(18.0, -3.0),
            Vec2::new(30.0, 4.0),
            Vec2::new(42.0, 0.0),
        ];
        let path = ReferencePath::from_polyline(&pts, 0.5).unwrap();
        let mut rng = Rng::new(5);
        for _ in 0..200 {
            let q = Vec2::new(rng.range(-2.0, 44.0), rng.range(-6.0, 6.0));
            let got = path.project(q.x, q.y, None).unwrap();

            // Dense-sampling oracle at 1 mm resolution.
            let mut best = (f64::INFINITY, 0.0);
            let n = (path.total_length() / 0.001) as usize;
            for k in 0..=n {
                let th = k as f64 * 0.001;
                let f = path.frame_at(th);
                let d = f.pos.dist(q);
                if d < best.0 {
                    best = (d, th);
                }
            }
            assert!(
                (got - best.1).abs() <= path.resample_step() + 1e-6,
                "projection {got} oracle {}",
                best.1
            );
        }
    }

    #[test]
    fn projection_hint_window_limits_search() {
        // A hairpin-like path that comes back near itself: with a hint the
        // projection stays on the local branch.
        let mut pts: Vec<Vec2> = (0..=40).map(|i| Vec2::new(i as f64, 0.0)).collect();
        pts.extend((1..=10).map(|i| Vec2::new(40.0, i as f64 * 0.8)));
        pts.extend((1..=40).map(|i| Vec2::new(40.0 - i as f64, 8.0)));
        let path = ReferencePath::from_polyline(&pts, 0.5).unwrap();
        // Query between the two parallel branches, slightly nearer the far
        // one.
        let q = Vec2::new(20.0, 4.3);
        let unhinted = path.project(q.x, q.y, None).unwrap();
        let hinted = path.project(q.x, q.y, Some(18.0)).unwrap();
        assert!(unhinted > 50.0, "global projection picked {unhinted}");
        assert!((hinted - 20.0).abs() < 2.0, "hinted projection {hinted}");
    }

    #[test]
    fn heading_matches_segment_tangent_at_midpoints() {
        let r = 10.0;
        let arc: Vec<Vec2> = (0..=90)
            .map(|deg| {
                let a = (deg as f64).to_radians();
                Vec2::new(r * a.cos(), r * a.sin())
            })
            .collect();
        for path in [
            straight(5, 0.5),
            ReferencePath::from_polyline(&arc, 0.5).unwrap(),
        ] {
            for i in 0..path.positions().len() - 1 {
                let mid = 0.5 * (path.knots()[i] + path.knots()[i + 1]);
                let chord = (path.positions()[i + 1] - path.positions()[i]).angle();
                let s = path.sample(mid).unwrap();
                assert!(
                    angle_diff(s.phi, chord).abs() < 1e-6,
                    "segment {i}: {} vs {}",
                    s.phi,
                    chord
                );
            }
        }
    }

    #[test]
    fn finite_difference_tangent_matches_phi() {
        let pts: Vec<Vec2> = alloc::vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(8.0, 3.0),
            Vec2::new(16.0, -2.0),
            Vec2::new(25.0, 1.0),
        ];
        let path = ReferencePath::from_polyline(&pts, 0.5).unwrap();
        let mut rng = Rng::new(9);
        for _ in 0..500 {
            let th = rng.range(1e-3, path.total_length() - 1e-3);
            // Stay away from knots so the central difference does not
            // straddle a segment boundary.
            let k = (th / path.resample_step()).floor() * path.resample_step();
            if th - k < 2e-3 || k + path.resample_step() - th < 2e-3 {
                continue;
            }
            let h = 1e-4;
            let a = path.frame_at(th - h).pos;
            let b = path.frame_at(th + h).pos;
            let fd = (b - a).angle();
            let phi = path.frame_at(th).phi;
            assert!(
                angle_diff(phi, fd).abs() < 1e-3,
                "theta {th}: phi {phi} fd {fd}"
            );
        }
    }

    #[test]
    fn project_inverts_sample_within_one_step() {
        let pts: Vec<Vec2> = alloc::vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(12.0, 6.0),
            Vec2::new(22.0, 3.0),
            Vec2::new(31.0, 9.0),
        ];
        let path = ReferencePath::from_polyline(&pts, 0.5).unwrap();
        let n = 200;
        for k in 0..=n {
            let th = path.total_length() * k as f64 / n as f64;
            let f = path.frame_at(th);
            let back = path.project(f.pos.x, f.pos.y, None).unwrap();
            assert!(
                (back - th).abs() <= path.resample_step() + 1e-9,
                "theta {th} -> {back}"
            );
        }
    }

    #[test]
    fn duplicate_consecutive_points_rejected() {
        let pts = alloc::vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(0.0, 0.0),
            Vec2::new(5.0, 0.0)
        ];
        assert!(matches!(
            ReferencePath::from_polyline(&pts, 0.5),
            Err(PathError::InvalidInput(_))
        ));
    }

    #[test]
    fn headings_are_normalized() {
        // A path heading west: tangents near +/-pi must stay in (-pi, pi].
        let pts: Vec<Vec2> = (0..10)
            .map(|i| Vec2::new(-(i as f64) * 3.0, 0.1 * i as f64))
            .collect();
        let path = ReferencePath::from_polyline(&pts, 0.5).unwrap();
        for &h in path.headings() {
            assert!(h > -PI && h <= PI + 1e-12);
            assert!((normalize_angle(h) - h).abs() < 1e-12);
        }
        let s = path.sample(3.0).unwrap();
        assert!(s.phi.abs() > FRAC_PI_2, "westbound heading {}", s.phi);
    }
}
