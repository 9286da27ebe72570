//! Lane-piece graph: lanes split into equal-length pieces with topological
//! successor links, target-region path enumeration and A* routing.

use alloc::collections::{BTreeMap, BinaryHeap};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)] // trait shim backs no_std float math
use crate::math::{angle_mean, normalize_angle, point_segment_distance, FloatExt as _, Vec2};

/// Discrete centerline point: coordinate plus yaw.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CenterPoint {
    pub x: f64,
    pub y: f64,
    /// Heading, normalized to (-pi, pi].
    pub phi: f64,
}

impl CenterPoint {
    pub fn new(x: f64, y: f64, phi: f64) -> Self {
        CenterPoint {
            x,
            y,
            phi: normalize_angle(phi),
        }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }
}

/// Opaque lane-piece identifier, ordered lexicographically.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PieceId(pub String);

impl PieceId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl core::fmt::Display for PieceId {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Equal-length lane segment with its centerline and successor links.
#[derive(Clone, Debug)]
pub struct LanePiece {
    pub id: PieceId,
    /// Owning lane id from the source map.
    pub lane: String,
    pub centerline: Vec<CenterPoint>,
    /// Arc length: the sum of consecutive centerline chord lengths.
    pub length: f64,
    pub successors: Vec<PieceId>,
    /// Nominal driving speed inherited from the lane, if the map gives one.
    pub speed_limit: Option<f64>,
}

/// Input lane: a polyline with successor lane ids.
#[derive(Clone, Debug)]
pub struct LanePolyline {
    pub id: String,
    pub points: Vec<Vec2>,
    pub successors: Vec<String>,
    pub speed_limit: Option<f64>,
}

/// Connected sequence of lane pieces from a start piece to a reachable
/// ending piece.
#[derive(Clone, Debug)]
pub struct TargetPath {
    pub pieces: Vec<PieceId>,
    /// In-order join of member centerlines with duplicate junction points
    /// removed.
    pub concatenated_centerline: Vec<CenterPoint>,
}

impl TargetPath {
    pub fn end_piece(&self) -> &PieceId {
        self.pieces.last().expect("path has at least one piece")
    }

    pub fn arc_length(&self) -> f64 {
        polyline_length(&self.concatenated_centerline)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum GraphError {
    InvalidInput(String),
    UnknownPiece(String),
    NoRoute,
}

impl core::fmt::Display for GraphError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            GraphError::InvalidInput(m) => write!(f, "invalid input: {m}"),
            GraphError::UnknownPiece(id) => write!(f, "unknown piece id: {id}"),
            GraphError::NoRoute => write!(f, "goal unreachable from start"),
        }
    }
}

impl core::error::Error for GraphError {}

/// Lane-piece graph; immutable after construction.
#[derive(Clone, Debug)]
pub struct LaneGraph {
    pieces: Vec<LanePiece>,
    index: BTreeMap<PieceId, usize>,
    /// Successor indices per piece, sorted by successor id.
    adjacency: Vec<Vec<usize>>,
}

impl LaneGraph {
    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn pieces(&self) -> &[LanePiece] {
        &self.pieces
    }

    pub fn piece(&self, id: &PieceId) -> Option<&LanePiece> {
        self.index.get(id).map(|&i| &self.pieces[i])
    }

    pub fn piece_index(&self, id: &PieceId) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn successors(&self, idx: usize) -> &[usize] {
        &self.adjacency[idx]
    }

    /// First piece of a lane, if that lane exists in the graph.
    pub fn lane_entry(&self, lane: &str) -> Option<&LanePiece> {
        self.pieces
            .iter()
            .filter(|p| p.lane == lane)
            .min_by(|a, b| a.id.cmp(&b.id))
    }

    /// Last piece of a lane.
    pub fn lane_exit(&self, lane: &str) -> Option<&LanePiece> {
        self.pieces
            .iter()
            .filter(|p| p.lane == lane)
            .max_by(|a, b| a.id.cmp(&b.id))
    }
}

fn polyline_length(pts: &[CenterPoint]) -> f64 {
    pts.windows(2)
        .map(|w| w[0].position().dist(w[1].position()))
        .sum()
}

/// Headings for a raw polyline: segment direction at the ends, shortest-arc
/// mean of the adjacent segment directions at interior vertices.
fn polyline_headings(points: &[Vec2]) -> Vec<f64> {
    let n = points.len();
    let seg_dir = |i: usize| (points[i + 1] - points[i]).angle();
    (0..n)
        .map(|i| {
            if i == 0 {
                seg_dir(0)
            } else if i == n - 1 {
                seg_dir(n - 2)
            } else {
                angle_mean(seg_dir(i - 1), seg_dir(i))
            }
        })
        .collect()
}

/// Fraction of `piece_length` below which a trailing remainder is merged
/// into the predecessor piece instead of standing alone. Standalone terminal
/// pieces therefore keep at least half (and so at least a quarter) of the
/// requested length.
pub const REMAINDER_MERGE_FRACTION: f64 = 0.5;

/// Splits every lane into pieces of `piece_length`, preserving cross-lane
/// connectivity as piece-level successor links.
///
/// A final remainder shorter than `REMAINDER_MERGE_FRACTION * piece_length`
/// is merged into the preceding piece, so terminal pieces span
/// `[0.5, 1.5)` times the requested length (a lane shorter than the
/// threshold yields one short piece).
pub fn split_lanes(lanes: &[LanePolyline], piece_length: f64) -> Result<LaneGraph, GraphError> {
    if lanes.is_empty() {
        return Err(GraphError::InvalidInput("empty polyline set".into()));
    }
    if !(piece_length > 0.0) || !piece_length.is_finite() {
        return Err(GraphError::InvalidInput(format!(
            "piece_length must be positive and finite, got {piece_length}"
        )));
    }

    let mut pieces: Vec<LanePiece> = Vec::new();
    let mut lane_first_last: BTreeMap<String, (usize, usize)> = BTreeMap::new();

    for lane in lanes {
        if lane.points.len() < 2 {
            return Err(GraphError::InvalidInput(format!(
                "lane {} has fewer than 2 points",
                lane.id
            )));
        }
        if lane.points.iter().any(|p| !p.is_finite()) {
            return Err(GraphError::InvalidInput(format!(
                "lane {} contains non-finite coordinates",
                lane.id
            )));
        }
        if lane.points.windows(2).any(|w| w[0].dist(w[1]) <= 1e-12) {
            return Err(GraphError::InvalidInput(format!(
                "lane {} contains a zero-length segment",
                lane.id
            )));
        }
        if lane_first_last.contains_key(&lane.id) {
            return Err(GraphError::InvalidInput(format!(
                "duplicate lane id {}",
                lane.id
            )));
        }

        let headings = polyline_headings(&lane.points);
        let total: f64 = lane.points.windows(2).map(|w| w[0].dist(w[1])).sum();

        // Cut boundaries at multiples of piece_length; drop the last interior
        // boundary when the remainder is below the merge threshold.
        let mut cuts: Vec<f64> = Vec::new();
        let mut s = piece_length;
        while s < total - 1e-9 {
            cuts.push(s);
            s += piece_length;
        }
        if let Some(&last) = cuts.last() {
            if total - last < REMAINDER_MERGE_FRACTION * piece_length {
                cuts.pop();
            }
        }

        let boundaries: Vec<f64> = core::iter::once(0.0)
            .chain(cuts.iter().copied())
            .chain(core::iter::once(total))
            .collect();

        let first_idx = pieces.len();
        for (piece_no, win) in boundaries.windows(2).enumerate() {
            let centerline = slice_polyline(&lane.points, &headings, win[0], win[1]);
            let length = polyline_length(&centerline);
            pieces.push(LanePiece {
                id: PieceId(format!("{}#{:03}", lane.id, piece_no)),
                lane: lane.id.clone(),
                centerline,
                length,
                successors: Vec::new(),
                speed_limit: lane.speed_limit,
            });
        }
        let last_idx = pieces.len() - 1;
        lane_first_last.insert(lane.id.clone(), (first_idx, last_idx));
    }

    // Chain links within each lane, then junction links between lanes.
    for lane in lanes {
        let (first, last) = lane_first_last[&lane.id];
        for i in first..last {
            let succ = pieces[i + 1].id.clone();
            pieces[i].successors.push(succ);
        }
        for succ_lane in &lane.successors {
            let &(succ_first, _) = lane_first_last.get(succ_lane).ok_or_else(|| {
                GraphError::InvalidInput(format!(
                    "lane {} names unknown successor {succ_lane}",
                    lane.id
                ))
            })?;
            let succ = pieces[succ_first].id.clone();
            pieces[last].successors.push(succ);
        }
        pieces[last].successors.sort();
    }

    let index: BTreeMap<PieceId, usize> = pieces
        .iter()
        .enumerate()
        .map(|(i, p)| (p.id.clone(), i))
        .collect();
    let adjacency = pieces
        .iter()
        .map(|p| p.successors.iter().map(|s| index[s]).collect())
        .collect();

    Ok(LaneGraph {
        pieces,
        index,
        adjacency,
    })
}

/// Extracts the sub-polyline between arc lengths `s0` and `s1`, keeping the
/// original interior vertices and interpolating the cut endpoints.
fn slice_polyline(points: &[Vec2], headings: &[f64], s0: f64, s1: f64) -> Vec<CenterPoint> {
    let mut out: Vec<CenterPoint> = Vec::new();
    let mut acc = 0.0;
    for i in 0..points.len() - 1 {
        let a = points[i];
        let b = points[i + 1];
        let seg = a.dist(b);
        let seg_dir = (b - a).angle();
        let (lo, hi) = (acc, acc + seg);
        acc = hi;

        if hi <= s0 + 1e-12 {
            continue; // segment entirely before the slice
        }
        if lo >= s1 - 1e-12 {
            break;
        }

        if out.is_empty() {
            let point = if s0 <= lo + 1e-12 {
                CenterPoint::new(a.x, a.y, headings[i])
            } else {
                let p = a.lerp(b, (s0 - lo) / seg);
                CenterPoint::new(p.x, p.y, seg_dir)
            };
            out.push(point);
        }

        if s1 < hi - 1e-12 {
            let p = a.lerp(b, (s1 - lo) / seg);
            out.push(CenterPoint::new(p.x, p.y, seg_dir));
            break;
        }
        out.push(CenterPoint::new(b.x, b.y, headings[i + 1]));
        if s1 <= hi + 1e-12 {
            break;
        }
    }
    out
}

/// All pieces whose centerline passes within `capture_radius` of `position`,
/// ordered by increasing lateral distance (ties broken by id).
pub fn locate_pieces(
    graph: &LaneGraph,
    position: Vec2,
    capture_radius: f64,
) -> Result<Vec<PieceId>, GraphError> {
    if !position.is_finite() {
        return Err(GraphError::InvalidInput("non-finite query position".into()));
    }
    let mut hits: Vec<(f64, &PieceId)> = graph
        .pieces
        .iter()
        .filter_map(|p| {
            let d = p
                .centerline
                .windows(2)
                .map(|w| point_segment_distance(position, w[0].position(), w[1].position()).0)
                .fold(f64::INFINITY, f64::min);
            (d <= capture_radius).then_some((d, &p.id))
        })
        .collect();
    hits.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    Ok(hits.into_iter().map(|(_, id)| id.clone()).collect())
}

/// Default lateral capture radius for [`locate_pieces`].
pub const DEFAULT_CAPTURE_RADIUS: f64 = 2.0;

/// Enumerates every simple piece sequence from a start piece whose cumulative
/// length is the minimal length reaching `horizon_t * v_max`, or which ends
/// earlier at a sink (or where no cycle-free extension exists). Output is
/// sorted lexicographically by piece-id sequence.
pub fn enumerate_paths(
    graph: &LaneGraph,
    start_pieces: &[PieceId],
    horizon_t: f64,
    v_max: f64,
) -> Result<Vec<TargetPath>, GraphError> {
    if start_pieces.is_empty() {
        return Err(GraphError::InvalidInput("no start pieces".into()));
    }
    if !(horizon_t > 0.0) || !(v_max > 0.0) {
        return Err(GraphError::InvalidInput(
            "horizon_t and v_max must be positive".into(),
        ));
    }
    let budget = horizon_t * v_max;

    let mut sequences: Vec<Vec<usize>> = Vec::new();
    for id in start_pieces {
        let &start = graph
            .index
            .get(id)
            .ok_or_else(|| GraphError::UnknownPiece(id.0.clone()))?;
        let mut stack = alloc::vec![start];
        dfs_collect(
            graph,
            budget,
            &mut stack,
            graph.pieces[start].length,
            &mut sequences,
        );
    }

    let mut paths: Vec<TargetPath> = sequences
        .into_iter()
        .map(|seq| build_target_path(graph, &seq))
        .collect();
    paths.sort_by(|a, b| a.pieces.cmp(&b.pieces));
    Ok(paths)
}

fn dfs_collect(
    graph: &LaneGraph,
    budget: f64,
    stack: &mut Vec<usize>,
    acc_len: f64,
    out: &mut Vec<Vec<usize>>,
) {
    if acc_len >= budget {
        out.push(stack.clone());
        return;
    }
    let current = *stack.last().expect("non-empty stack");
    let mut extended = false;
    for &succ in graph.successors(current) {
        if stack.contains(&succ) {
            continue;
        }
        extended = true;
        stack.push(succ);
        dfs_collect(
            graph,
            budget,
            stack,
            acc_len + graph.pieces[succ].length,
            out,
        );
        stack.pop();
    }
    if !extended {
        // Sink, or every successor would close a cycle.
        out.push(stack.clone());
    }
}

fn build_target_path(graph: &LaneGraph, seq: &[usize]) -> TargetPath {
    let mut centerline: Vec<CenterPoint> = Vec::new();
    for &idx in seq {
        for pt in &graph.pieces[idx].centerline {
            if let Some(last) = centerline.last() {
                if last.position().dist(pt.position()) <= 1e-9 {
                    continue;
                }
            }
            centerline.push(*pt);
        }
    }
    TargetPath {
        pieces: seq.iter().map(|&i| graph.pieces[i].id.clone()).collect(),
        concatenated_centerline: centerline,
    }
}

#[derive(PartialEq)]
struct HeapEntry {
    f: f64,
    idx: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> core::cmp::Ordering {
        // Min-heap on f, ties broken by index for determinism.
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<core::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// A* over the piece graph with piece lengths as edge costs and the
/// straight-line distance from piece end to goal start as the heuristic.
/// Returns the concatenated centerline of the minimum-length route.
pub fn astar_route(
    graph: &LaneGraph,
    start: &PieceId,
    goal: &PieceId,
) -> Result<Vec<CenterPoint>, GraphError> {
    let &start_idx = graph
        .index
        .get(start)
        .ok_or_else(|| GraphError::UnknownPiece(start.0.clone()))?;
    let &goal_idx = graph
        .index
        .get(goal)
        .ok_or_else(|| GraphError::UnknownPiece(goal.0.clone()))?;

    let goal_entry = graph.pieces[goal_idx].centerline[0].position();
    let heuristic = |idx: usize| -> f64 {
        let end = graph.pieces[idx]
            .centerline
            .last()
            .expect("non-empty centerline")
            .position();
        if idx == goal_idx {
            0.0
        } else {
            end.dist(goal_entry)
        }
    };

    let n = graph.len();
    let mut g = alloc::vec![f64::INFINITY; n];
    let mut parent = alloc::vec![usize::MAX; n];
    let mut heap = BinaryHeap::new();
    g[start_idx] = graph.pieces[start_idx].length;
    heap.push(HeapEntry {
        f: g[start_idx] + heuristic(start_idx),
        idx: start_idx,
    });

    while let Some(HeapEntry { f, idx }) = heap.pop() {
        if f > g[idx] + heuristic(idx) + 1e-12 {
            continue; // stale entry
        }
        if idx == goal_idx {
            let mut seq = alloc::vec![idx];
            let mut cur = idx;
            while parent[cur] != usize::MAX {
                cur = parent[cur];
                seq.push(cur);
            }
            seq.reverse();
            return Ok(build_target_path(graph, &seq).concatenated_centerline);
        }
        for &succ in graph.successors(idx) {
            let cand = g[idx] + graph.pieces[succ].length;
            if cand < g[succ] - 1e-15 {
                g[succ] = cand;
                parent[succ] = idx;
                heap.push(HeapEntry {
                    f: cand + heuristic(succ),
                    idx: succ,
                });
            }
        }
    }
    Err(GraphError::NoRoute)
}
