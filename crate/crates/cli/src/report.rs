//! Batch summary table: scenario time, average speed and collision rate.

use riskplan_core::sim::{MetricsReport, RunMetrics};

/// Formats the summary the `report` subcommand prints: efficiency numbers
/// over collision-free goal-reaching runs, collision rate over all runs.
pub fn summarize(rows: &[RunMetrics]) -> String {
    let report = MetricsReport::from_rows(rows.to_vec());
    let n = report.rows.len();
    let successes = report
        .rows
        .iter()
        .filter(|r| r.goal_reached && !r.collision)
        .count();
    let mut out = String::new();
    out.push_str(&format!("runs:            {n}\n"));
    out.push_str(&format!(
        "goal rate:       {:.1} %\n",
        100.0 * report.goal_rate
    ));
    out.push_str(&format!(
        "Col Rate:        {:.1} %\n",
        100.0 * report.collision_rate
    ));
    if successes > 0 {
        out.push_str(&format!(
            "Time (mean):     {:.2} s\n",
            report.mean_time_success
        ));
        out.push_str(&format!(
            "Avg Spd (mean):  {:.2} m/s\n",
            report.mean_speed_success
        ));
    } else {
        out.push_str("Time (mean):     n/a (no successful runs)\n");
        out.push_str("Avg Spd (mean):  n/a (no successful runs)\n");
    }
    out
}
