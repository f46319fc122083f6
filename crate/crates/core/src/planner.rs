//! Shortest routes on the occupancy grid and the uncertainty-driven goal
//! selector used by the station.
//!
//! Route costs are kept exact as `straight + diagonal * sqrt(2)` step counts,
//! so comparisons (and therefore tie-breaking) never depend on floating-point
//! summation order.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bus::{Bus, Payload, RouteReply, Subscription, TopicError};
use crate::frames::EnuPoint;
use crate::gpfield::GpModel;
use crate::worldsim::OccupancyGrid;

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlanError {
    #[error("no path to the goal")]
    NoPath,
    #[error("start position is not navigable")]
    StartBlocked,
    #[error("goal position is not navigable")]
    GoalBlocked,
    #[error("no candidate within the travel budget")]
    NoCandidate,
}

/// Exact path length in units of cell steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct StepCost {
    pub straight: u32,
    pub diagonal: u32,
}

impl StepCost {
    pub const ZERO: StepCost = StepCost {
        straight: 0,
        diagonal: 0,
    };

    pub fn meters(&self, cell_size: f64) -> f64 {
        self.straight as f64 * cell_size + self.diagonal as f64 * cell_size * std::f64::consts::SQRT_2
    }

    fn add(self, diagonal: bool) -> StepCost {
        if diagonal {
            StepCost {
                diagonal: self.diagonal + 1,
                ..self
            }
        } else {
            StepCost {
                straight: self.straight + 1,
                ..self
            }
        }
    }
}

impl Ord for StepCost {
    fn cmp(&self, other: &Self) -> Ordering {
        // sign of (a1 + b1*r2) - (a2 + b2*r2) = x - y*r2
        let x = self.straight as i64 - other.straight as i64;
        let y = other.diagonal as i64 - self.diagonal as i64;
        match (x.signum(), y.signum()) {
            (0, 0) => Ordering::Equal,
            (sx, sy) if sx >= 0 && sy <= 0 => Ordering::Greater,
            (sx, sy) if sx <= 0 && sy >= 0 => Ordering::Less,
            (1, 1) => (x * x).cmp(&(2 * y * y)),
            _ => (2 * y * y).cmp(&(x * x)),
        }
    }
}

impl PartialOrd for StepCost {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    /// Cell centers from start to goal.
    pub cells: Vec<EnuPoint>,
    pub steps: StepCost,
    /// Meters.
    pub cost: f64,
}

const NEIGHBORS: [(i64, i64); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

/// Moves available from `(row, col)`; diagonals that would clip a blocked
/// corner are excluded.
pub fn neighbors(grid: &OccupancyGrid, row: usize, col: usize) -> impl Iterator<Item = (usize, usize, bool)> + '_ {
    let (h, w) = (grid.height() as i64, grid.width() as i64);
    NEIGHBORS.iter().filter_map(move |&(dr, dc)| {
        let r = row as i64 + dr;
        let c = col as i64 + dc;
        if r < 0 || c < 0 || r >= h || c >= w {
            return None;
        }
        let (r, c) = (r as usize, c as usize);
        if !grid.is_navigable(r, c) {
            return None;
        }
        let diagonal = dr != 0 && dc != 0;
        if diagonal && !(grid.is_navigable(r, col) && grid.is_navigable(row, c)) {
            return None;
        }
        Some((r, c, diagonal))
    })
}

#[derive(PartialEq, Eq)]
struct Open {
    cost: StepCost,
    index: usize,
}

impl Ord for Open {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .cmp(&self.cost)
            .then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Single-source Dijkstra. Returns per-cell exact cost and predecessor
/// index; stops early once `target` is settled.
fn dijkstra(grid: &OccupancyGrid, source: usize, target: Option<usize>) -> (Vec<Option<StepCost>>, Vec<Option<usize>>) {
    let geo = grid.geometry;
    let n = geo.len();
    let mut dist: Vec<Option<StepCost>> = vec![None; n];
    let mut pred: Vec<Option<usize>> = vec![None; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    dist[source] = Some(StepCost::ZERO);
    heap.push(Open {
        cost: StepCost::ZERO,
        index: source,
    });
    while let Some(Open { cost, index }) = heap.pop() {
        if done[index] {
            continue;
        }
        done[index] = true;
        if Some(index) == target {
            break;
        }
        let (row, col) = geo.row_col(index);
        for (r, c, diagonal) in neighbors(grid, row, col) {
            let next = geo.index(r, c);
            if done[next] {
                continue;
            }
            let candidate = cost.add(diagonal);
            let better = match dist[next] {
                None => true,
                Some(d) => match candidate.cmp(&d) {
                    Ordering::Less => true,
                    // (row, col) order equals index order in row-major layout
                    Ordering::Equal => pred[next].is_some_and(|p| index < p),
                    Ordering::Greater => false,
                },
            };
            if better {
                let improved = dist[next] != Some(candidate);
                dist[next] = Some(candidate);
                pred[next] = Some(index);
                if improved {
                    heap.push(Open {
                        cost: candidate,
                        index: next,
                    });
                }
            }
        }
    }
    (dist, pred)
}

/// Minimum-cost 8-connected route between the cells containing `start` and
/// `goal`.
pub fn plan(grid: &OccupancyGrid, start: EnuPoint, goal: EnuPoint) -> Result<Route, PlanError> {
    let geo = grid.geometry;
    let s = grid
        .cell_of(&start)
        .filter(|&(r, c)| grid.is_navigable(r, c))
        .ok_or(PlanError::StartBlocked)?;
    let g = grid
        .cell_of(&goal)
        .filter(|&(r, c)| grid.is_navigable(r, c))
        .ok_or(PlanError::GoalBlocked)?;
    let (source, target) = (geo.index(s.0, s.1), geo.index(g.0, g.1));
    let (dist, pred) = dijkstra(grid, source, Some(target));
    let steps = dist[target].ok_or(PlanError::NoPath)?;

    let mut indices = vec![target];
    let mut cur = target;
    while cur != source {
        cur = pred[cur].expect("settled cell has a predecessor");
        indices.push(cur);
    }
    indices.reverse();
    Ok(Route {
        cells: indices
            .into_iter()
            .map(|i| {
                let (r, c) = geo.row_col(i);
                geo.center(r, c)
            })
            .collect(),
        steps,
        cost: steps.meters(geo.cell_size),
    })
}

/// Exact travel cost from `start` to every cell, `None` where unreachable.
pub fn cost_map(grid: &OccupancyGrid, start: EnuPoint) -> Result<Vec<Option<StepCost>>, PlanError> {
    let (r, c) = grid
        .cell_of(&start)
        .filter(|&(r, c)| grid.is_navigable(r, c))
        .ok_or(PlanError::StartBlocked)?;
    Ok(dijkstra(grid, grid.geometry.index(r, c), None).0)
}

/// Blocks every cell whose center lies within `radius` of an obstacle cell
/// (measured to the nearest point of the obstacle's square).
pub fn inflate(grid: &OccupancyGrid, radius: f64) -> OccupancyGrid {
    let geo = grid.geometry;
    let cs = geo.cell_size;
    let mut cells = grid.cells.clone();
    if radius <= 0.0 {
        return grid.clone();
    }
    let reach = (radius / cs + 0.5).ceil() as i64;
    for (i, &free) in grid.cells.iter().enumerate() {
        if free {
            continue;
        }
        let (orow, ocol) = geo.row_col(i);
        for dr in -reach..=reach {
            for dc in -reach..=reach {
                let r = orow as i64 + dr;
                let c = ocol as i64 + dc;
                if r < 0 || c < 0 || r >= geo.height as i64 || c >= geo.width as i64 {
                    continue;
                }
                let dx = ((dc.abs() as f64) - 0.5).max(0.0) * cs;
                let dy = ((dr.abs() as f64) - 0.5).max(0.0) * cs;
                if dx.hypot(dy) <= radius {
                    cells[geo.index(r as usize, c as usize)] = false;
                }
            }
        }
    }
    OccupancyGrid {
        geometry: geo,
        cells,
    }
}

/// Nearest navigable cell center to `p`, by straight-line distance.
pub fn nearest_navigable(grid: &OccupancyGrid, p: &EnuPoint) -> Option<EnuPoint> {
    if grid.navigable_at(p) {
        return Some(*p);
    }
    grid.navigable_cells()
        .map(|(r, c)| grid.center(r, c))
        .min_by(|a, b| a.distance_sq(p).total_cmp(&b.distance_sq(p)))
}

/// Uncertainty score of one location: posterior sd relative to prior sd,
/// averaged over parameters. An empty model set scores every point 1.
pub fn normalized_uncertainty(models: &[&GpModel], points: &[EnuPoint]) -> Vec<f64> {
    if models.is_empty() {
        return vec![1.0; points.len()];
    }
    let mut score = vec![0.0; points.len()];
    for m in models {
        let prior_sd = m.kernel.variance.sqrt();
        for (s, (_, var)) in score.iter_mut().zip(m.predict(points)) {
            *s += var.sqrt() / prior_sd;
        }
    }
    let k = models.len() as f64;
    score.iter_mut().for_each(|s| *s /= k);
    score
}

/// Candidate with the largest normalized posterior sd among lattice cells
/// (every `stride`-th row and column) reachable within `budget` meters.
/// Ties go to the cheaper trip, then to the lower (row, col).
pub fn select_next_informative(
    models: &[&GpModel],
    grid: &OccupancyGrid,
    current: EnuPoint,
    budget: f64,
    stride: usize,
) -> Result<EnuPoint, PlanError> {
    let stride = stride.max(1);
    let geo = grid.geometry;
    let costs = cost_map(grid, current).map_err(|_| PlanError::NoCandidate)?;
    let candidates: Vec<(usize, StepCost)> = (0..geo.len())
        .filter(|&i| {
            let (r, c) = geo.row_col(i);
            r % stride == 0 && c % stride == 0
        })
        .filter_map(|i| costs[i].map(|cost| (i, cost)))
        .filter(|(_, cost)| cost.meters(geo.cell_size) <= budget)
        .collect();
    if candidates.is_empty() {
        return Err(PlanError::NoCandidate);
    }
    let points: Vec<EnuPoint> = candidates
        .iter()
        .map(|&(i, _)| {
            let (r, c) = geo.row_col(i);
            geo.center(r, c)
        })
        .collect();
    let scores = normalized_uncertainty(models, &points);
    let best = (0..candidates.len())
        .max_by(|&a, &b| {
            scores[a]
                .total_cmp(&scores[b])
                .then_with(|| candidates[b].1.cmp(&candidates[a].1))
                .then_with(|| candidates[b].0.cmp(&candidates[a].0))
        })
        .expect("non-empty");
    Ok(points[best])
}

/// Bus-facing wrapper: answers route requests on `plan/<id>/route`.
pub struct PlannerNode {
    bus: Bus,
    topic: String,
    grid: OccupancyGrid,
    requests: Subscription,
}

impl PlannerNode {
    /// `grid` should already be inflated.
    pub fn new(bus: &Bus, vehicle_id: &str, grid: OccupancyGrid) -> Result<Self, TopicError> {
        let topic = crate::bus::topics::route(vehicle_id);
        let requests = bus.subscribe(&topic)?;
        Ok(Self {
            bus: bus.clone(),
            topic,
            grid,
            requests,
        })
    }

    pub fn grid(&self) -> &OccupancyGrid {
        &self.grid
    }

    /// Serves every pending request; returns how many were answered.
    pub fn pump(&self) -> usize {
        let mut served = 0;
        for msg in self.requests.drain() {
            if let Payload::RouteRequest(req) = msg.payload {
                let result = plan(&self.grid, req.start, req.goal);
                let reply = RouteReply {
                    request_id: req.request_id,
                    result,
                };
                self.bus
                    .publish(&self.topic, Payload::RouteReply(reply))
                    .expect("route topic is valid");
                served += 1;
            }
        }
        served
    }
}
