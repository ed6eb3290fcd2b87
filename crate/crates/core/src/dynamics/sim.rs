use log::warn;
use rayon::prelude::*;

use super::self_collision::{resolve_self_collisions, separate};
use super::{projection_factor, ColliderSet, HairParams, PoseTrack, RigidPose, SimConfig};
use crate::skinning::GuideAnimation;
use crate::strand::Groom;
use crate::{Error, Result, Vec3};

/// Self-collision passes per substep inside the simulation loop.
const SIM_SELF_COLLISION_PASSES: usize = 2;

/// Particle state of the guide strands, laid out like the source groom.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    /// rest pose in the head frame
    pub rest_local: Vec<Vec3>,
    pub pinned: Vec<bool>,
    pub head_pose: RigidPose,
    pub colliders: ColliderSet,
    pub time: f64,
    points_per_strand: usize,
    substeps_taken: usize,
    /// distance to the next particle, per particle (0 for strand tips)
    rest_lengths: Vec<f64>,
    /// distance to the particle two ahead, per particle
    bend_lengths: Vec<f64>,
    contacts: Vec<Option<Vec3>>,
}

impl SimState {
    pub fn points_per_strand(&self) -> usize {
        self.points_per_strand
    }

    pub fn strand_count(&self) -> usize {
        self.positions.len() / self.points_per_strand
    }

    pub fn particle_count(&self) -> usize {
        self.positions.len()
    }

    pub fn pinned_count(&self) -> usize {
        self.pinned.iter().filter(|&&p| p).count()
    }

    pub fn to_groom(&self) -> Groom {
        Groom::new(self.positions.clone(), self.points_per_strand)
            .expect("simulation state keeps a valid groom layout")
    }

    pub fn kinetic_energy(&self, mass: f64) -> f64 {
        0.5 * mass * self.velocities.iter().map(|v| v.norm_squared()).sum::<f64>()
    }

    /// Rest pose carried by the current head pose.
    pub fn posed_rest(&self, index: usize) -> Vec3 {
        self.head_pose.apply(&self.rest_local[index])
    }

    /// Teleports the state to `pose` with the rest shape, zero velocity.
    pub fn reset_to_pose(&mut self, pose: &RigidPose) {
        self.head_pose = *pose;
        for (x, r) in self.positions.iter_mut().zip(&self.rest_local) {
            *x = pose.apply(r);
        }
        self.velocities.iter_mut().for_each(|v| *v = Vec3::zeros());
    }
}

/// Sets up a state at rest in the identity head frame with pinned roots.
pub fn init_sim(guides: &Groom, params: &HairParams, colliders: &ColliderSet) -> Result<SimState> {
    params.validate()?;
    colliders.validate()?;
    let n = guides.points_per_strand();
    let mut rest = guides.points().to_vec();

    for s in 0..guides.strand_count() {
        let root = &mut rest[s * n];
        if colliders.project(root).is_some() {
            warn!("guide root {s} starts inside a collider; projected to its surface");
        }
    }

    let count = rest.len();
    let mut rest_lengths = vec![0.0; count];
    let mut bend_lengths = vec![0.0; count];
    for i in 0..count {
        let k = i % n;
        if k + 1 < n {
            rest_lengths[i] = (rest[i + 1] - rest[i]).norm();
        }
        if k + 2 < n {
            bend_lengths[i] = (rest[i + 2] - rest[i]).norm();
        }
    }

    Ok(SimState {
        positions: rest.clone(),
        velocities: vec![Vec3::zeros(); count],
        pinned: (0..count).map(|i| i % n == 0).collect(),
        rest_local: rest,
        head_pose: RigidPose::identity(),
        colliders: colliders.clone(),
        time: 0.0,
        points_per_strand: n,
        substeps_taken: 0,
        rest_lengths,
        bend_lengths,
        contacts: vec![None; count],
    })
}

#[derive(Clone, Copy)]
struct SolverFactors {
    stretch: f64,
    compress: f64,
    bend: f64,
    bend_links: bool,
}

fn project_distance(
    x: &mut [Vec3],
    pinned: &[bool],
    a: usize,
    b: usize,
    rest: f64,
    stretch: f64,
    compress: f64,
) {
    let wa = if pinned[a] { 0.0 } else { 1.0 };
    let wb = if pinned[b] { 0.0 } else { 1.0 };
    if wa + wb == 0.0 {
        return;
    }
    let d = x[b] - x[a];
    let len = d.norm();
    if len <= 1e-12 {
        return;
    }
    let c = len - rest;
    let factor = if c > 0.0 { stretch } else { compress };
    if factor == 0.0 {
        return;
    }
    let corr = d * (factor * c / (len * (wa + wb)));
    x[a] += corr * wa;
    x[b] -= corr * wb;
}

fn max_stretch_residual(x: &[Vec3], rest_lengths: &[f64]) -> f64 {
    x.windows(2)
        .zip(rest_lengths)
        .filter(|(_, &r)| r > 0.0)
        .map(|(w, &r)| ((w[1] - w[0]).norm() - r).abs() / r)
        .fold(0.0, f64::max)
}

/// Gauss–Seidel sweeps over one strand. Returns the stretch residual after each
/// iteration when `log` is set.
#[allow(clippy::too_many_arguments)]
fn solve_strand(
    x: &mut [Vec3],
    contacts: &mut [Option<Vec3>],
    pinned: &[bool],
    targets: &[Vec3],
    rest_lengths: &[f64],
    bend_lengths: &[f64],
    colliders: &ColliderSet,
    factors: SolverFactors,
    iters: usize,
    log: bool,
) -> Vec<f64> {
    let n = x.len();
    let mut residuals = Vec::new();
    for _ in 0..iters {
        for i in 0..n - 1 {
            project_distance(x, pinned, i, i + 1, rest_lengths[i], factors.stretch, factors.compress);
        }
        if factors.bend_links && factors.bend > 0.0 {
            for i in 0..n.saturating_sub(2) {
                project_distance(x, pinned, i, i + 2, bend_lengths[i], factors.bend, factors.bend);
            }
        }
        for i in 0..n {
            if pinned[i] {
                x[i] = targets[i];
            }
        }
        if !colliders.is_empty() {
            for i in 0..n {
                if !pinned[i] {
                    if let Some(normal) = colliders.project(&mut x[i]) {
                        contacts[i] = Some(normal);
                    }
                }
            }
        }
        if log {
            residuals.push(max_stretch_residual(x, rest_lengths));
        }
    }
    residuals
}

fn solve_impl(state: &mut SimState, params: &HairParams, iters: usize, log: bool) -> Vec<f64> {
    let iters = iters.max(1);
    let factors = SolverFactors {
        stretch: projection_factor(params.stretch_resistance, iters),
        compress: projection_factor(params.compression_resistance, iters),
        bend: projection_factor(params.bend_resistance, iters),
        bend_links: params.extra_bend_links >= 1,
    };
    let world = state.colliders.posed(&state.head_pose);
    let n = state.points_per_strand;
    let pose = state.head_pose;
    let targets: Vec<Vec3> = state.rest_local.iter().map(|r| pose.apply(r)).collect();
    state.contacts.iter_mut().for_each(|c| *c = None);

    let pinned = &state.pinned;
    let rest_lengths = &state.rest_lengths;
    let bend_lengths = &state.bend_lengths;
    let logs: Vec<Vec<f64>> = state
        .positions
        .par_chunks_mut(n)
        .zip(state.contacts.par_chunks_mut(n))
        .enumerate()
        .map(|(s, (x, contacts))| {
            let r = s * n..(s + 1) * n;
            solve_strand(
                x,
                contacts,
                &pinned[r.clone()],
                &targets[r.clone()],
                &rest_lengths[r.clone()],
                &bend_lengths[r],
                &world,
                factors,
                iters,
                log,
            )
        })
        .collect();

    if !log {
        return Vec::new();
    }
    (0..iters)
        .map(|it| logs.iter().map(|l| l[it]).fold(0.0, f64::max))
        .collect()
}

/// Runs `iters` Gauss–Seidel sweeps of stretch, bend, root pinning and collider
/// projection, in that order.
pub fn solve_constraints(state: &mut SimState, params: &HairParams, iters: usize) {
    solve_impl(state, params, iters, false);
}

/// Like [`solve_constraints`], returning the maximum relative stretch residual
/// over all segments after each iteration.
pub fn solve_constraints_logged(state: &mut SimState, params: &HairParams, iters: usize) -> Vec<f64> {
    solve_impl(state, params, iters, true)
}

/// Self-collision on a state; see [`resolve_self_collisions`].
pub fn self_collisions(state: &mut SimState, radius: f64, max_passes: usize) -> usize {
    resolve_self_collisions(
        &mut state.positions,
        state.points_per_strand,
        &state.pinned,
        radius,
        max_passes,
    )
}

/// Advances the state by `config.substeps` substeps of `config.dt`, moving the
/// head from `pose_start` to `pose_end`.
pub fn step(
    state: &mut SimState,
    params: &HairParams,
    config: &SimConfig,
    pose_start: &RigidPose,
    pose_end: &RigidPose,
) -> Result<()> {
    for s in 0..config.substeps {
        let pose = pose_start.interpolate(pose_end, (s + 1) as f64 / config.substeps as f64);
        substep(state, params, config, &pose)?;
    }
    Ok(())
}

fn substep(state: &mut SimState, params: &HairParams, config: &SimConfig, pose: &RigidPose) -> Result<()> {
    let dt = config.dt;
    let n = state.points_per_strand;
    let mass = params.mass;
    let wind = config.wind.acceleration(state.time);
    let x_old = state.positions.clone();

    state.head_pose = *pose;
    for i in 0..state.positions.len() {
        if state.pinned[i] {
            state.positions[i] = pose.apply(&state.rest_local[i]);
        }
    }

    // forces and semi-implicit Euler: v += F/m dt, then x += v dt
    {
        let pinned = &state.pinned;
        let rest = &state.rest_local;
        let x_old = &x_old;
        state
            .positions
            .par_chunks_mut(n)
            .zip(state.velocities.par_chunks_mut(n))
            .enumerate()
            .for_each(|(s, (x, v))| {
                let base = s * n;
                for k in 0..n {
                    let i = base + k;
                    if pinned[i] {
                        continue;
                    }
                    let tangent = if k > 0 {
                        let d = x_old[i] - x_old[i - 1];
                        let len = d.norm();
                        if len > 1e-12 {
                            d / len
                        } else {
                            Vec3::zeros()
                        }
                    } else {
                        Vec3::zeros()
                    };
                    let vel = v[k];
                    let v_tan = tangent * vel.dot(&tangent);
                    let v_nrm = vel - v_tan;
                    let target = pose.apply(&rest[i]);
                    let force = config.gravity * mass + wind * mass
                        - (v_nrm * params.drag + v_tan * params.tangential_drag) * mass
                        + (target - x[k]) * (params.start_curve_attract * mass);
                    v[k] = vel + force / mass * dt;
                    x[k] += v[k] * dt;
                }
            });
    }

    let x_pred = state.positions.clone();
    if params.self_collide {
        separate(
            &mut state.positions,
            n,
            &state.pinned,
            config.self_collision_radius,
            SIM_SELF_COLLISION_PASSES,
        );
    }
    solve_impl(state, params, config.solver_iters, false);

    if params.dynamics_weight < 1.0 {
        let w = params.dynamics_weight;
        for i in 0..state.positions.len() {
            if !state.pinned[i] {
                let target = pose.apply(&state.rest_local[i]);
                state.positions[i] = target + (state.positions[i] - target) * w;
            }
        }
    }

    // velocity from the constraint correction, then global damping
    let keep = (1.0 - params.damp * dt).clamp(0.0, 1.0);
    for i in 0..state.positions.len() {
        if state.pinned[i] {
            state.velocities[i] = (state.positions[i] - x_old[i]) / dt;
            continue;
        }
        let mut v = (state.velocities[i] + (state.positions[i] - x_pred[i]) / dt) * keep;
        if let Some(normal) = state.contacts[i] {
            let vn = normal * v.dot(&normal);
            let vt = v - vn;
            let vn = if v.dot(&normal) > 0.0 {
                vn * (1.0 - params.stickiness)
            } else {
                vn
            };
            v = vt * (1.0 - params.friction) + vn;
        }
        state.velocities[i] = v;
    }

    let stretch_keep = (params.stretch_damp * dt).clamp(0.0, 1.0);
    if stretch_keep > 0.0 {
        for s in 0..state.strand_count() {
            for k in 0..n - 1 {
                let (a, b) = (s * n + k, s * n + k + 1);
                let wa = if state.pinned[a] { 0.0 } else { 1.0 };
                let wb = if state.pinned[b] { 0.0 } else { 1.0 };
                if wa + wb == 0.0 {
                    continue;
                }
                let d = state.positions[b] - state.positions[a];
                let len = d.norm();
                if len <= 1e-12 {
                    continue;
                }
                let dir = d / len;
                let rel = (state.velocities[b] - state.velocities[a]).dot(&dir);
                let impulse = dir * (stretch_keep * rel / (wa + wb));
                state.velocities[a] += impulse * wa;
                state.velocities[b] -= impulse * wb;
            }
        }
    }

    let substep_index = state.substeps_taken;
    if let Some(particle) = state
        .positions
        .iter()
        .zip(&state.velocities)
        .position(|(x, v)| !x.iter().chain(v.iter()).all(|c| c.is_finite()))
    {
        return Err(Error::SimulationDiverged {
            frame: None,
            substep: substep_index,
            particle,
        });
    }
    state.substeps_taken += 1;
    state.time += dt;
    Ok(())
}

/// Simulates guide strands driven by a head pose track.
///
/// Frame 0 is the rest groom posed by `track(0)`. When `frame_dt` is not a whole
/// multiple of `config.dt * config.substeps`, the substep is shortened so each frame
/// holds a whole number of steps.
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    guides: &Groom,
    params: &HairParams,
    config: &SimConfig,
    colliders: &ColliderSet,
    track: &PoseTrack,
    frame_count: usize,
    frame_dt: f64,
) -> Result<GuideAnimation> {
    config.validate()?;
    if frame_count == 0 {
        return Err(Error::invalid("frame count must be >= 1"));
    }
    if !(frame_dt > 0.0 && frame_dt.is_finite()) {
        return Err(Error::invalid(format!("frame_dt must be > 0, got {frame_dt}")));
    }
    let mut state = init_sim(guides, params, colliders)?;
    state.reset_to_pose(&track.sample(0.0));

    let block = config.step_duration();
    let ratio = frame_dt / block;
    let mut config = config.clone();
    let steps = if (ratio - ratio.round()).abs() <= 1e-9 * ratio && ratio.round() >= 1.0 {
        ratio.round() as usize
    } else {
        let steps = ratio.ceil().max(1.0) as usize;
        config.dt = frame_dt / (steps * config.substeps) as f64;
        steps
    };
    let step_len = frame_dt / steps as f64;

    let mut frames = Vec::with_capacity(frame_count);
    frames.push(state.to_groom());
    for f in 1..frame_count {
        let frame_start = (f - 1) as f64 * frame_dt;
        for s in 0..steps {
            let t0 = frame_start + s as f64 * step_len;
            let t1 = if s + 1 == steps {
                f as f64 * frame_dt
            } else {
                frame_start + (s + 1) as f64 * step_len
            };
            step(&mut state, params, &config, &track.sample(t0), &track.sample(t1))
                .map_err(|e| e.with_frame(f))?;
        }
        frames.push(state.to_groom());
    }
    GuideAnimation::new(frames, frame_dt)
}

/// Rest groom carried rigidly by the track at each frame time.
pub fn rigid_animation(
    guides: &Groom,
    track: &PoseTrack,
    frame_count: usize,
    frame_dt: f64,
) -> Result<GuideAnimation> {
    let frames = (0..frame_count)
        .map(|f| {
            let pose = track.sample(f as f64 * frame_dt);
            Groom::new(
                guides.points().iter().map(|p| pose.apply(p)).collect(),
                guides.points_per_strand(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    GuideAnimation::new(frames, frame_dt)
}
