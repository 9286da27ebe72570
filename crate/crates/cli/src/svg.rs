//! Dependency-free SVG snapshots: lane geometry, a rasterized risk-field
//! layer, predicted trajectories, the planned horizon and vehicle boxes.

use std::fmt::Write as _;

use riskplan_core::math::Vec2;
use riskplan_core::risk_field::{AgentPrediction, RiskField, RiskFieldParams};
use riskplan_core::sim::{MapConfig, StepRecord};

const RASTER_CELL: f64 = 1.5;
const RASTER_THRESHOLD: f64 = 0.02;

fn scene_bounds(map: &MapConfig, record: &StepRecord) -> (Vec2, Vec2) {
    let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut take = |x: f64, y: f64| {
        lo.x = lo.x.min(x);
        lo.y = lo.y.min(y);
        hi.x = hi.x.max(x);
        hi.y = hi.y.max(y);
    };
    for lane in &map.lanes {
        for p in &lane.polyline {
            take(p[0], p[1]);
        }
    }
    for v in &record.vehicles {
        take(v.state.x, v.state.y);
    }
    if !lo.x.is_finite() {
        (Vec2::new(-10.0, -10.0), Vec2::new(10.0, 10.0))
    } else {
        (lo - Vec2::new(8.0, 8.0), hi + Vec2::new(8.0, 8.0))
    }
}

/// Rebuilds the stage-0-aligned risk field from the step's predictions so
/// rendering does not need solver internals.
fn rebuild_field(record: &StepRecord, params: &RiskFieldParams, dt_pred: f64) -> Option<RiskField> {
    if record.predictions.is_empty() {
        return None;
    }
    let agents: Vec<AgentPrediction> = record
        .predictions
        .iter()
        .zip(record.vehicles.iter().skip(1))
        .map(|(set, v)| AgentPrediction {
            current: v.state.pose(),
            set: set.clone(),
        })
        .collect();
    RiskField::build(&agents, *params, 1, 0.05, dt_pred).ok()
}

fn polyline_points(points: impl Iterator<Item = Vec2>) -> String {
    let mut s = String::new();
    for p in points {
        let _ = write!(s, "{:.2},{:.2} ", p.x, p.y);
    }
    s.trim_end().to_string()
}

/// Renders one step as a standalone SVG document (world y-axis up).
pub fn render_scene(
    map: &MapConfig,
    record: &StepRecord,
    risk: &RiskFieldParams,
    dt_pred: f64,
) -> String {
    let (lo, hi) = scene_bounds(map, record);
    let (w, h) = (hi.x - lo.x, hi.y - lo.y);
    let mut doc = String::with_capacity(16 * 1024);
    let _ = write!(
        doc,
        r##"<svg xmlns="http://www.w3.org/2000/svg" viewBox="{:.1} {:.1} {:.1} {:.1}" width="{}" height="{}">"##,
        lo.x,
        -hi.y, // y flipped below
        w,
        h,
        (w * 8.0) as u32,
        (h * 8.0) as u32,
    );
    doc.push_str(r##"<g transform="scale(1,-1)">"##);
    let _ = write!(
        doc,
        r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="#f7f7f2"/>"##,
        lo.x, lo.y, w, h
    );

    // Risk raster under everything else.
    if let Some(field) = rebuild_field(record, risk, dt_pred) {
        let nx = (w / RASTER_CELL) as usize;
        let ny = (h / RASTER_CELL) as usize;
        for i in 0..nx {
            for j in 0..ny {
                let x = lo.x + (i as f64 + 0.5) * RASTER_CELL;
                let y = lo.y + (j as f64 + 0.5) * RASTER_CELL;
                let v = field.value_at(0, x, y);
                if v > RASTER_THRESHOLD {
                    let _ = write!(
                        doc,
                        r##"<rect x="{:.2}" y="{:.2}" width="{RASTER_CELL}" height="{RASTER_CELL}" fill="#c0392b" fill-opacity="{:.3}"/>"##,
                        x - 0.5 * RASTER_CELL,
                        y - 0.5 * RASTER_CELL,
                        (0.75 * v).min(0.75),
                    );
                }
            }
        }
    }

    for lane in &map.lanes {
        let pts = polyline_points(lane.polyline.iter().map(|p| Vec2::new(p[0], p[1])));
        let _ = write!(
            doc,
            r##"<polyline points="{pts}" fill="none" stroke="#9aa0a6" stroke-width="0.25" stroke-dasharray="1.5,1"/>"##,
        );
    }

    // Predicted trajectories, opacity by probability.
    for (set, vehicle) in record
        .predictions
        .iter()
        .zip(record.vehicles.iter().skip(1))
    {
        for (traj, p) in set.iter() {
            let pts = polyline_points(
                std::iter::once(vehicle.state.position())
                    .chain(traj.poses.iter().map(|q| q.position())),
            );
            let _ = write!(
                doc,
                r##"<polyline points="{pts}" fill="none" stroke="#e67e22" stroke-width="0.3" stroke-opacity="{:.3}"/>"##,
                (0.15 + 0.85 * p).min(1.0),
            );
        }
    }

    // Planned ego horizon.
    if !record.planned_horizon.is_empty() {
        let pts = polyline_points(record.planned_horizon.iter().copied());
        let _ = write!(
            doc,
            r##"<polyline points="{pts}" fill="none" stroke="#2471a3" stroke-width="0.4"/>"##,
        );
    }

    // Vehicles last: ego red, agents dark gray.
    for v in &record.vehicles {
        let color = if v.id == 0 { "#c0392b" } else { "#2c3e50" };
        let _ = write!(
            doc,
            r##"<g transform="translate({:.2},{:.2}) rotate({:.2})"><rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{color}" fill-opacity="0.9"/></g>"##,
            v.state.x,
            v.state.y,
            v.state.phi.to_degrees(),
            -v.footprint.half_length,
            -v.footprint.half_width,
            2.0 * v.footprint.half_length,
            2.0 * v.footprint.half_width,
        );
    }

    doc.push_str("</g></svg>\n");
    doc
}

/// Rasterizes one stage of the step's risk field as `x,y,value` CSV rows.
pub fn risk_grid_csv(
    record: &StepRecord,
    risk: &RiskFieldParams,
    dt_pred: f64,
    stage: usize,
    stage_count: usize,
) -> String {
    let mut out = String::from("x,y,value\n");
    let Some(field) = rebuild_field_stages(record, risk, dt_pred, stage_count) else {
        return out;
    };
    let ego = record.vehicles[0].state.position();
    let half = 40.0;
    let cell = 1.0;
    let n = (2.0 * half / cell) as usize;
    for i in 0..=n {
        for j in 0..=n {
            let x = ego.x - half + i as f64 * cell;
            let y = ego.y - half + j as f64 * cell;
            let v = field.value_at(stage.min(field.stage_count() - 1), x, y);
            if v > 1e-4 {
                let _ = writeln!(out, "{x:.2},{y:.2},{v:.6}");
            }
        }
    }
    out
}

fn rebuild_field_stages(
    record: &StepRecord,
    params: &RiskFieldParams,
    dt_pred: f64,
    stage_count: usize,
) -> Option<RiskField> {
    if record.predictions.is_empty() {
        return None;
    }
    let agents: Vec<AgentPrediction> = record
        .predictions
        .iter()
        .zip(record.vehicles.iter().skip(1))
        .map(|(set, v)| AgentPrediction {
            current: v.state.pose(),
            set: set.clone(),
        })
        .collect();
    RiskField::build(&agents, *params, stage_count.max(1), 0.05, dt_pred).ok()
}
