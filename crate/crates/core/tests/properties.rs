//! Property tests over the geometric and probabilistic invariants.

use core::f64::consts::PI;

use proptest::prelude::*;
use riskplan_core::collision::{collision_check, Footprint};
use riskplan_core::math::{angle_diff, normalize_angle, Pose, Vec2};
use riskplan_core::prediction::{predict_constant_speed, HistorySample, HistoryTrack};
use riskplan_core::reference_path::ReferencePath;

proptest! {
    #[test]
    fn normalized_angles_stay_in_half_open_interval(a in -1e4f64..1e4) {
        let n = normalize_angle(a);
        prop_assert!(n > -PI && n <= PI);
        // Idempotent and 2-pi-periodic.
        prop_assert!((normalize_angle(n) - n).abs() < 1e-12);
        prop_assert!(angle_diff(normalize_angle(a + 2.0 * PI), n).abs() < 1e-9);
    }

    #[test]
    fn collision_check_is_symmetric_and_translation_invariant(
        ax in -10.0f64..10.0, ay in -10.0f64..10.0, aphi in -3.2f64..3.2,
        bx in -10.0f64..10.0, by in -10.0f64..10.0, bphi in -3.2f64..3.2,
        tx in -50.0f64..50.0, ty in -50.0f64..50.0,
        al in 0.5f64..3.0, aw in 0.3f64..1.5,
        bl in 0.5f64..3.0, bw in 0.3f64..1.5,
    ) {
        let fa = Footprint::new(al, aw);
        let fb = Footprint::new(bl, bw);
        let pa = Pose::new(ax, ay, aphi);
        let pb = Pose::new(bx, by, bphi);
        let hit = collision_check(pa, fa, pb, fb);
        prop_assert_eq!(hit, collision_check(pb, fb, pa, fa));
        let shift = |p: Pose| Pose::new(p.x + tx, p.y + ty, p.phi);
        prop_assert_eq!(hit, collision_check(shift(pa), fa, shift(pb), fb));
    }

    #[test]
    fn constant_speed_prediction_is_straight_and_normalized(
        x in -100.0f64..100.0, y in -100.0f64..100.0,
        phi in -3.1f64..3.1, v in 0.0f64..15.0,
    ) {
        let h = HistoryTrack::from_sample(HistorySample { t: 0.0, x, y, phi, v, a: 0.0, w: 0.0 });
        let set = predict_constant_speed(&h, 4.0, 0.5);
        prop_assert!((set.probabilities().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let dir = Vec2::from_angle(phi);
        for (k, p) in set.trajectories()[0].poses.iter().enumerate() {
            let d = v * (k + 1) as f64 * 0.5;
            prop_assert!((p.x - (x + d * dir.x)).abs() < 1e-9);
            prop_assert!((p.y - (y + d * dir.y)).abs() < 1e-9);
        }
    }

    #[test]
    fn projection_inverts_sampling(
        seed_pts in proptest::collection::vec((-50.0f64..50.0, -20.0f64..20.0), 3..8),
        frac in 0.0f64..1.0,
    ) {
        // Build a path through x-monotone waypoints (avoids self-crossings,
        // where nearest-point inversion is genuinely ambiguous).
        let mut pts: Vec<Vec2> = seed_pts
            .iter()
            .enumerate()
            .map(|(i, &(dx, y))| Vec2::new(i as f64 * 25.0 + dx * 0.2, y))
            .collect();
        pts.dedup_by(|a, b| a.dist(*b) < 1e-6);
        prop_assume!(pts.len() >= 2);
        let path = ReferencePath::from_polyline(&pts, 0.5).unwrap();
        let theta = frac * path.total_length();
        let f = path.frame_at(theta);
        let back = path.project(f.pos.x, f.pos.y, None).unwrap();
        prop_assert!(
            (back - theta).abs() <= path.resample_step() + 1e-9,
            "theta {} -> {}", theta, back
        );
    }
}
