//! Keypoint-constraint solver for the end-effector actuation pose.
//!
//! Residuals are normalized by their tolerances and minimized with a
//! Levenberg-Marquardt iteration over a left-multiplied SE(3) increment
//! `[dt; w]`: `R' = exp(w) R`, `t' = t + dt`. Several seeded restarts run in
//! fixed-size batches; the result is the minimum by (cost, restart index), so
//! it does not depend on thread scheduling.

use std::time::Instant;

use nalgebra::{Matrix6, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{validate, AxisFrame, Constraint, SolverConfig, Violation};
use crate::geometry::{Pose, UnitQuat, Vec3};
use crate::scene::{KeypointRef, SceneError, SceneState};

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    pub restarts: usize,
    pub max_iterations: usize,
    /// Initial Marquardt damping.
    pub damping: f64,
    pub seed: u64,
    /// Stop a restart once an accepted step lowers the cost by less than this.
    pub convergence_tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            restarts: 16,
            max_iterations: 100,
            damping: 1e-3,
            seed: 0,
            convergence_tol: 1e-10,
        }
    }
}

/// Restarts evaluated together; a batch that reaches zero cost ends the search.
const RESTART_BATCH: usize = 4;
const ZERO_COST: f64 = 1e-12;
const INIT_RADIUS: f64 = 0.3;

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualVector {
    /// One entry per constraint: 3 values for point2point, 1 for axis terms.
    pub values: Vec<Vec<f64>>,
}

impl ResidualVector {
    /// Magnitude compared against the tolerance: Euclidean norm for points,
    /// absolute value for axis terms.
    pub fn magnitudes(&self) -> Vec<f64> {
        self.values
            .iter()
            .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActuationSolution {
    pub pose: Pose,
    pub residuals: ResidualVector,
    pub satisfied: bool,
    pub cost: f64,
    pub restarts_used: usize,
    /// Seconds. Not part of the deterministic output.
    pub wall_time: f64,
}

impl ActuationSolution {
    /// Equality ignoring `wall_time`.
    pub fn same_result(&self, o: &ActuationSolution) -> bool {
        self.pose == o.pose
            && self.residuals == o.residuals
            && self.satisfied == o.satisfied
            && self.cost.to_bits() == o.cost.to_bits()
            && self.restarts_used == o.restarts_used
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("no restart satisfied every constraint (best cost {})", best.cost)]
    Infeasible { best: Box<ActuationSolution> },
    #[error("config failed validation: {}", join_violations(.0))]
    Validation(Vec<Violation>),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// A constraint with every scene-dependent quantity resolved.
#[derive(Debug, Clone, Copy)]
enum Term {
    Point { tool: Vec3, target: Vec3, tol: f64 },
    Axis { tool: Vec3, target: Vec3, ip: f64, tol: f64 },
}

/// Constraints bound to a scene, ready for repeated evaluation.
#[derive(Debug, Clone)]
pub struct Problem {
    terms: Vec<Term>,
    /// World position of the contact target, the restart sampling center.
    anchor: Vec3,
    dim: usize,
}

/// Name of the articulated object the config acts on: the first one carrying
/// every referenced object keypoint.
pub fn target_object<'a>(config: &SolverConfig, scene: &'a SceneState) -> Result<&'a str, SceneError> {
    let names = config.referenced_object_keypoints();
    if names.is_empty() {
        return scene.sole_object().map(|(n, _)| n);
    }
    scene.object_with_keypoints(names.iter().copied())
}

fn tool_point(scene: &SceneState, name: &str) -> Result<Vec3, SceneError> {
    scene
        .end_effector
        .keypoint_local(name)
        .ok_or_else(|| SceneError::UnknownKeypoint(name.to_string()))
}

fn tool_axis(scene: &SceneState, from: &str, to: &str) -> Result<Vec3, SceneError> {
    (tool_point(scene, to)? - tool_point(scene, from)?)
        .normalized()
        .ok_or_else(|| SceneError::UnknownKeypoint(format!("{from} and {to} coincide")))
}

impl Problem {
    pub fn new(config: &SolverConfig, scene: &SceneState) -> Result<Self, SceneError> {
        let object = target_object(config, scene)?.to_string();
        let obj_rot = scene.object(&object)?.base_pose.rotation;
        let world = |n: &str| scene.keypoint_world(&KeypointRef::object(&object, n));
        let mut terms = Vec::new();
        let mut anchor = None;
        for c in &config.constraint_list {
            let term = match c {
                Constraint::PointToPoint {
                    keypoint_name,
                    target_keypoint_name,
                    tolerance,
                } => {
                    let target = world(target_keypoint_name)?;
                    anchor.get_or_insert(target);
                    Term::Point {
                        tool: tool_point(scene, keypoint_name)?,
                        target,
                        tol: *tolerance,
                    }
                }
                Constraint::FrameAxis {
                    axis_from_keypoint_name,
                    axis_to_keypoint_name,
                    target_axis,
                    target_axis_frame,
                    tolerance,
                    target_inner_product,
                    ..
                } => {
                    let u = target_axis
                        .normalized()
                        .ok_or_else(|| SceneError::UnknownReference("zero target_axis".into()))?;
                    let target = match target_axis_frame {
                        AxisFrame::World => u,
                        AxisFrame::Object => obj_rot.rotate(u),
                    };
                    Term::Axis {
                        tool: tool_axis(scene, axis_from_keypoint_name, axis_to_keypoint_name)?,
                        target,
                        ip: *target_inner_product,
                        tol: *tolerance,
                    }
                }
                Constraint::KeypointAxis {
                    axis_from_keypoint_name,
                    axis_to_keypoint_name,
                    target_axis_from_keypoint_name,
                    target_axis_to_keypoint_name,
                    tolerance,
                    target_inner_product,
                    ..
                } => {
                    let target = (world(target_axis_to_keypoint_name)? - world(target_axis_from_keypoint_name)?)
                        .normalized()
                        .ok_or_else(|| SceneError::UnknownReference("target keypoints coincide".into()))?;
                    Term::Axis {
                        tool: tool_axis(scene, axis_from_keypoint_name, axis_to_keypoint_name)?,
                        target,
                        ip: *target_inner_product,
                        tol: *tolerance,
                    }
                }
            };
            terms.push(term);
        }
        let anchor = match anchor {
            Some(a) => a,
            None => scene.object(&object)?.base_pose.translation,
        };
        let dim = terms
            .iter()
            .map(|t| match t {
                Term::Point { .. } => 3,
                Term::Axis { .. } => 1,
            })
            .sum();
        Ok(Problem { terms, anchor, dim })
    }

    pub fn anchor(&self) -> Vec3 {
        self.anchor
    }

    pub fn residuals(&self, pose: &Pose) -> ResidualVector {
        let values = self
            .terms
            .iter()
            .map(|t| match *t {
                Term::Point { tool, target, .. } => {
                    let d = pose.transform_point(tool) - target;
                    vec![d.x, d.y, d.z]
                }
                Term::Axis { tool, target, ip, .. } => {
                    vec![pose.rotation.rotate(tool).dot(target) - ip]
                }
            })
            .collect();
        ResidualVector { values }
    }

    fn tolerances(&self) -> impl Iterator<Item = f64> + '_ {
        self.terms.iter().map(|t| match *t {
            Term::Point { tol, .. } | Term::Axis { tol, .. } => tol,
        })
    }

    /// Residuals divided by their tolerances, flattened.
    pub fn normalized(&self, pose: &Pose) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim);
        for (v, tol) in self.residuals(pose).values.iter().zip(self.tolerances()) {
            out.extend(v.iter().map(|x| x / tol));
        }
        out
    }

    pub fn cost(&self, pose: &Pose) -> f64 {
        self.normalized(pose).iter().map(|x| x * x).sum()
    }

    /// Jacobian of [`Problem::normalized`] with respect to the increment
    /// `[dt; w]` applied by [`apply_increment`], one row per residual.
    pub fn jacobian(&self, pose: &Pose) -> Vec<[f64; 6]> {
        let mut rows = Vec::with_capacity(self.dim);
        for t in &self.terms {
            match *t {
                Term::Point { tool, tol, .. } => {
                    // d(w x Rk)/dw = -[Rk]x
                    let p = pose.rotation.rotate(tool);
                    let s = 1.0 / tol;
                    rows.push([s, 0.0, 0.0, 0.0, p.z * s, -p.y * s]);
                    rows.push([0.0, s, 0.0, -p.z * s, 0.0, p.x * s]);
                    rows.push([0.0, 0.0, s, p.y * s, -p.x * s, 0.0]);
                }
                Term::Axis { tool, target, tol, .. } => {
                    let g = pose.rotation.rotate(tool).cross(target) / tol;
                    rows.push([0.0, 0.0, 0.0, g.x, g.y, g.z]);
                }
            }
        }
        rows
    }

    /// Like [`Problem::normalized`], except that parallel and anti-parallel
    /// terms become `(R a - ip u) / sqrt(2 tol)`. That vector vanishes on the
    /// same set and reaches norm 1 exactly at the tolerance, but unlike
    /// `a·u - ip` it is not flat at its minimum.
    fn surrogate(&self, pose: &Pose) -> Linearization {
        let mut r = Vec::with_capacity(self.dim + 2);
        let mut rows = Vec::with_capacity(self.dim + 2);
        for t in &self.terms {
            match *t {
                Term::Point { tool, target, tol } => {
                    let p = pose.rotation.rotate(tool);
                    let d = (pose.translation + p - target) / tol;
                    let s = 1.0 / tol;
                    r.extend([d.x, d.y, d.z]);
                    rows.push([s, 0.0, 0.0, 0.0, p.z * s, -p.y * s]);
                    rows.push([0.0, s, 0.0, -p.z * s, 0.0, p.x * s]);
                    rows.push([0.0, 0.0, s, p.y * s, -p.x * s, 0.0]);
                }
                Term::Axis { tool, target, ip, tol } if ip.abs() == 1.0 => {
                    let s = 1.0 / (2.0 * tol).sqrt();
                    let p = pose.rotation.rotate(tool);
                    let d = (p - target * ip) * s;
                    r.extend([d.x, d.y, d.z]);
                    rows.push([0.0, 0.0, 0.0, 0.0, p.z * s, -p.y * s]);
                    rows.push([0.0, 0.0, 0.0, -p.z * s, 0.0, p.x * s]);
                    rows.push([0.0, 0.0, 0.0, p.y * s, -p.x * s, 0.0]);
                }
                Term::Axis { tool, target, ip, tol } => {
                    let p = pose.rotation.rotate(tool);
                    r.push((p.dot(target) - ip) / tol);
                    let g = p.cross(target) / tol;
                    rows.push([0.0, 0.0, 0.0, g.x, g.y, g.z]);
                }
            }
        }
        (r, rows)
    }

    pub fn satisfied(&self, pose: &Pose) -> bool {
        self.residuals(pose)
            .magnitudes()
            .iter()
            .zip(self.tolerances())
            .all(|(m, tol)| *m <= tol)
    }
}

/// Applies an increment `[dtx, dty, dtz, wx, wy, wz]` on the left.
pub fn apply_increment(pose: &Pose, d: &[f64; 6]) -> Pose {
    let w = UnitQuat::from_scaled_axis(Vec3::new(d[3], d[4], d[5]));
    Pose::new(
        w * pose.rotation,
        pose.translation + Vec3::new(d[0], d[1], d[2]),
    )
}

pub fn residual(constraint: &Constraint, candidate: &Pose, scene: &SceneState, config: &SolverConfig) -> Result<Vec<f64>, SceneError> {
    let single = SolverConfig {
        constraint_list: vec![constraint.clone()],
        ..config.clone()
    };
    let p = Problem::new(&single, scene)?;
    Ok(p.residuals(candidate).values.remove(0))
}

/// Inclusive tolerance check, one residual entry per constraint.
pub fn check_satisfied(residuals: &ResidualVector, config: &SolverConfig) -> bool {
    residuals.values.len() == config.constraint_list.len()
        && residuals
            .magnitudes()
            .iter()
            .zip(&config.constraint_list)
            .zip(&residuals.values)
            .all(|((m, c), v)| v.len() == c.residual_dim() && *m <= c.tolerance())
}

pub(crate) fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn initial_pose(anchor: Vec3, seed: u64, index: usize) -> Pose {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(index as u64)));
    let offset = loop {
        let v = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if v.norm_squared() <= 1.0 {
            break v * INIT_RADIUS;
        }
    };
    let q = UnitQuat::from_uniform_samples(rng.random(), rng.random(), rng.random());
    Pose::new(q, anchor + offset)
}

/// Residual rows and Jacobian of one linearization.
type Linearization = (Vec<f64>, Vec<[f64; 6]>);

/// Levenberg-Marquardt from one start on the residuals produced by `lin`.
/// Returns the final pose and its cost.
fn descend(start: Pose, opts: &SolveOptions, lin: impl Fn(&Pose) -> Linearization) -> (Pose, f64) {
    let cost_of = |p: &Pose| lin(p).0.iter().map(|x| x * x).sum::<f64>();
    let mut pose = start;
    let mut cost = cost_of(&pose);
    let mut lambda = opts.damping;
    for _ in 0..opts.max_iterations {
        if cost <= ZERO_COST * 1e-6 {
            break;
        }
        let (r, j) = lin(&pose);
        let mut a = Matrix6::<f64>::zeros();
        let mut g = Vector6::<f64>::zeros();
        for (row, ri) in j.iter().zip(&r) {
            let jr = Vector6::from_column_slice(row);
            a += jr * jr.transpose();
            g += jr * *ri;
        }
        let mut accepted = false;
        while lambda < 1e12 {
            let mut damped = a;
            for i in 0..6 {
                damped[(i, i)] += lambda * (a[(i, i)] + 1e-9);
            }
            let step = match damped.cholesky() {
                Some(ch) => ch.solve(&(-g)),
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let d = [step[0], step[1], step[2], step[3], step[4], step[5]];
            let cand = apply_increment(&pose, &d);
            let c = cost_of(&cand);
            if c < cost {
                let decrease = cost - c;
                pose = cand;
                cost = c;
                lambda = (lambda / 10.0).max(1e-15);
                accepted = true;
                if decrease < opts.convergence_tol {
                    return (pose, cost);
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            break;
        }
    }
    (pose, cost)
}

/// Descends on the well-conditioned surrogate, then polishes on the true cost.
fn refine(problem: &Problem, start: Pose, opts: &SolveOptions) -> (Pose, f64) {
    let (mid, _) = descend(start, opts, |p| problem.surrogate(p));
    descend(mid, opts, |p| (problem.normalized(p), problem.jacobian(p)))
}

/// Finds the actuation pose for `config` in `scene`.
pub fn solve_actuation_pose(
    config: &SolverConfig,
    scene: &SceneState,
    opts: &SolveOptions,
) -> Result<ActuationSolution, SolveError> {
    let started = Instant::now();
    let object = target_object(config, scene)?;
    let violations = validate(config, &scene.object(object)?.asset, &scene.end_effector);
    if !violations.is_empty() {
        return Err(SolveError::Validation(violations));
    }
    let problem = Problem::new(config, scene)?;
    let restarts = opts.restarts.max(1);

    let mut best: Option<(f64, usize, Pose)> = None;
    let mut used = 0;
    for batch_start in (0..restarts).step_by(RESTART_BATCH) {
        let batch_end = (batch_start + RESTART_BATCH).min(restarts);
        let results: Vec<(f64, usize, Pose)> = (batch_start..batch_end)
            .into_par_iter()
            .map(|i| {
                let (pose, cost) = refine(&problem, initial_pose(problem.anchor(), opts.seed, i), opts);
                (cost, i, pose)
            })
            .collect();
        used = batch_end;
        for r in results {
            let better = match &best {
                None => true,
                Some((c, i, _)) => r.0 < *c || (r.0 == *c && r.1 < *i),
            };
            if better {
                best = Some(r);
            }
        }
        if let Some((c, _, p)) = &best {
            if *c <= ZERO_COST && problem.satisfied(p) {
                break;
            }
        }
    }

    let (cost, _, pose) = best.expect("at least one restart");
    let residuals = problem.residuals(&pose);
    let satisfied = check_satisfied(&residuals, config);
    let solution = ActuationSolution {
        pose,
        residuals,
        satisfied,
        cost,
        restarts_used: used,
        wall_time: started.elapsed().as_secs_f64(),
    };
    if satisfied {
        Ok(solution)
    } else {
        Err(SolveError::Infeasible {
            best: Box::new(solution),
        })
    }
}
