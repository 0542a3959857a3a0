//! Browser demo bindings: the planar double-integrator benchmark rendered
//! on a canvas. Every entry point takes and returns JSON strings so the
//! page needs nothing beyond string plumbing. The logic lives in plain
//! `Result<String, String>` functions that also build and test natively;
//! the `#[wasm_bindgen]` wrappers only translate errors for JavaScript.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use kinoplan::bench::{builtin_scenario, run};
use kinoplan::lti::build_double_integrator_2d;
use kinoplan::steering::{solve_pff_free_time, Trajectory};
use kinoplan::world::Aabb;
use kinoplan::Mode;

use nalgebra::DVector;

/// The planar benchmark world: bounds, obstacles, goal, start state.
#[wasm_bindgen]
pub fn demo_scenario() -> Result<String, JsError> {
    scenario_view().map_err(|e| JsError::new(&e))
}

/// Optimal free-arrival-time steering from a full state to a position.
#[wasm_bindgen]
pub fn steer_preview(request: &str) -> Result<String, JsError> {
    steer_view(request).map_err(|e| JsError::new(&e))
}

/// Grows a tree on the benchmark world and returns it for drawing.
#[wasm_bindgen]
pub fn plan_tree(request: &str) -> Result<String, JsError> {
    plan_view(request).map_err(|e| JsError::new(&e))
}

#[derive(Serialize)]
struct ScenarioView {
    bounds: Aabb,
    obstacles: Vec<Aabb>,
    goal: Aabb,
    start: Vec<f64>,
    t_bounds: (f64, f64),
}

fn scenario_view() -> Result<String, String> {
    let scenario = builtin_scenario("double_integrator").map_err(|e| e.to_string())?;
    let view = ScenarioView {
        bounds: scenario.environment.position_bounds.clone(),
        obstacles: scenario.environment.obstacles.clone(),
        goal: scenario.environment.goal.clone(),
        start: scenario.start.clone(),
        t_bounds: scenario.planner.t_bounds,
    };
    Ok(serde_json::to_string(&view).expect("view serialization cannot fail"))
}

#[derive(Deserialize)]
struct SteerRequest {
    /// Full start state `[x, y, vx, vy]`.
    start: Vec<f64>,
    /// Target position `[x, y]`; the arrival velocity is left free.
    target: Vec<f64>,
}

#[derive(Serialize)]
struct SteerResponse {
    tf: f64,
    cost: f64,
    /// Arrival state, velocity chosen by the solver.
    x_end: Vec<f64>,
    boundary_solution: bool,
    /// Position polyline along the optimal curve.
    points: Vec<[f64; 2]>,
}

fn polyline(traj: &Trajectory, intervals: usize) -> Vec<[f64; 2]> {
    traj.states(intervals).iter().map(|x| [x[0], x[1]]).collect()
}

fn steer_view(request: &str) -> Result<String, String> {
    let req: SteerRequest = serde_json::from_str(request).map_err(|e| e.to_string())?;
    let sys = build_double_integrator_2d().map_err(|e| e.to_string())?;
    let sol = solve_pff_free_time(
        &sys,
        &DVector::from_column_slice(&req.start),
        &DVector::from_column_slice(&req.target),
        (0.05, 40.0),
    )
    .map_err(|e| e.to_string())?;
    let traj = Trajectory::new(&sys, sol.clone()).map_err(|e| e.to_string())?;
    let response = SteerResponse {
        tf: sol.tf,
        cost: sol.cost,
        x_end: sol.x_end.iter().copied().collect(),
        boundary_solution: sol.boundary_solution,
        points: polyline(&traj, 60),
    };
    Ok(serde_json::to_string(&response).expect("response serialization cannot fail"))
}

#[derive(Deserialize)]
struct PlanRequest {
    iterations: usize,
    seed: u64,
    /// `kino`, `baseline`, `kino_delayed`, or `baseline_delayed`.
    mode: String,
}

#[derive(Serialize)]
struct PlanResponse {
    nodes: usize,
    best_cost: Option<f64>,
    elapsed_s: f64,
    /// One position polyline per tree edge.
    edges: Vec<Vec<[f64; 2]>>,
    /// Position polyline of the cheapest goal-reaching path, if any.
    solution: Option<Vec<[f64; 2]>>,
}

fn plan_view(request: &str) -> Result<String, String> {
    let req: PlanRequest = serde_json::from_str(request).map_err(|e| e.to_string())?;
    let mode: Mode = req.mode.parse()?;
    let mut scenario = builtin_scenario("double_integrator").map_err(|e| e.to_string())?;
    scenario.planner.iterations = req.iterations.min(5000);
    let (sys, _, _, _) = scenario.build().map_err(|e| e.to_string())?;

    let result = run(&scenario, mode, req.seed).map_err(|e| e.to_string())?;
    let mut edges = Vec::with_capacity(result.tree.len().saturating_sub(1));
    for node in result.tree.nodes().iter().skip(1) {
        let edge = node.edge.clone().expect("non-root nodes store an edge");
        let intervals = ((edge.tf / 0.2).ceil() as usize).clamp(2, 40);
        let traj = Trajectory::new(&sys, edge).map_err(|e| e.to_string())?;
        edges.push(polyline(&traj, intervals));
    }
    let solution = match &result.best {
        Some((chain, _)) => {
            let mut points = Vec::new();
            for sol in chain {
                let intervals = ((sol.tf / 0.1).ceil() as usize).clamp(2, 100);
                let traj = Trajectory::new(&sys, sol.clone()).map_err(|e| e.to_string())?;
                let segment = polyline(&traj, intervals);
                let skip = usize::from(!points.is_empty());
                points.extend(segment.into_iter().skip(skip));
            }
            Some(points)
        }
        None => None,
    };
    let response = PlanResponse {
        nodes: result.tree.len(),
        best_cost: result.best.as_ref().map(|(_, c)| *c),
        elapsed_s: result.elapsed_s,
        edges,
        solution,
    };
    Ok(serde_json::to_string(&response).expect("response serialization cannot fail"))
}
