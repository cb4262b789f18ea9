//! Integration of control paths (projected classical RK4) and Stratonovich
//! SDE paths (projected stochastic Heun), plus numerical application of the
//! generator `L = X0 + 1/2 sum X_i^2`.
//!
//! Every integrator stage is followed by a retraction onto the manifold, so
//! constraint drift never accumulates. All randomness flows through owned
//! [`RandomStream`]s; multi-path drivers fan out with per-path substreams and
//! merge with commutative sums, so results do not depend on the thread count.

use crate::error::{Error, Result};
use crate::manifold::{AmbientVector, CellGrid, ManifoldId, Point};
use crate::measure::OccupationHistogram;
use crate::rng::RandomStream;
use crate::vectorfield::{check_frame_rank, foliated_frame, FieldFamily, ScalarField, VectorField};
use rayon::prelude::*;
use std::sync::Arc;

/// Any ambient coordinate beyond this magnitude aborts the path.
pub const BLOWUP_LIMIT: f64 = 1e6;

/// Segment duration used by randomized reachability probing.
pub const REACH_SEGMENT_DURATION: f64 = 1.0;

/// Control system `dp = X0 + sum u_i X_i` with box-bounded channels.
#[derive(Clone, Debug)]
pub struct ControlSystem {
    pub family: FieldFamily,
    /// Per-channel bounds `[lo_i, hi_i]`, one per control field.
    pub control_box: Vec<(f64, f64)>,
}

impl ControlSystem {
    pub fn new(family: FieldFamily, control_box: Vec<(f64, f64)>) -> Result<Self> {
        if family.fields.is_empty() {
            return Err(Error::InvalidInput("control system needs k >= 1 channels".into()));
        }
        if control_box.len() != family.fields.len() {
            return Err(Error::InvalidInput(format!(
                "{} control bounds for {} channels",
                control_box.len(),
                family.fields.len()
            )));
        }
        for &(lo, hi) in &control_box {
            if lo > hi {
                return Err(Error::InvalidInput(format!("empty control box [{lo}, {hi}]")));
            }
        }
        Ok(ControlSystem { family, control_box })
    }
}

/// Piecewise-constant control signal.
#[derive(Clone, Debug)]
pub struct ControlSignal {
    /// `(duration, channel values)` per segment.
    pub segments: Vec<(f64, Vec<f64>)>,
}

impl ControlSignal {
    pub fn constant(duration: f64, values: Vec<f64>) -> Self {
        ControlSignal { segments: vec![(duration, values)] }
    }

    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(|(d, _)| d).sum()
    }
}

/// Stratonovich SDE `dp = X0 dt + sum X_i o dB^i`.
#[derive(Clone, Debug)]
pub struct SDESystem {
    pub family: FieldFamily,
}

impl SDESystem {
    pub fn new(family: FieldFamily) -> Result<Self> {
        if family.fields.is_empty() {
            return Err(Error::InvalidInput("SDE needs k >= 1 noise fields".into()));
        }
        Ok(SDESystem { family })
    }
}

/// Time-stamped path from ODE or SDE integration.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub points: Vec<Point>,
    pub record_stride: usize,
}

impl Trajectory {
    pub fn final_point(&self) -> &Point {
        self.points.last().expect("trajectory is never empty")
    }
}

fn guard_blowup(x: &AmbientVector) -> Result<()> {
    if x.max_abs() > BLOWUP_LIMIT {
        return Err(Error::NumericalBlowup(format!(
            "ambient coordinate exceeded {BLOWUP_LIMIT:e}"
        )));
    }
    Ok(())
}

/// Evaluate `X0 + sum u_i X_i` at `p`.
fn frozen_field(family: &FieldFamily, u: &[f64], p: &Point) -> AmbientVector {
    let mut v = AmbientVector::zeros(p.coords().dim());
    if let Some(drift) = &family.drift {
        v.axpy(1.0, &drift.eval(p).coords);
    }
    for (ui, field) in u.iter().zip(family.fields.iter()) {
        if *ui != 0.0 {
            v.axpy(*ui, &field.eval(p).coords);
        }
    }
    v
}

fn step_to(m: ManifoldId, p: &Point, dt: f64, v: &AmbientVector) -> Result<Point> {
    let mut x = p.coords().clone();
    x.axpy(dt, v);
    guard_blowup(&x)?;
    m.retract(&x)
}

/// One classical RK4 step on the frozen field, retracting after every stage.
fn rk4_step(family: &FieldFamily, u: &[f64], p: &Point, dt: f64) -> Result<Point> {
    let m = p.manifold;
    let k1 = frozen_field(family, u, p);
    let k2 = frozen_field(family, u, &step_to(m, p, dt / 2.0, &k1)?);
    let k3 = frozen_field(family, u, &step_to(m, p, dt / 2.0, &k2)?);
    let k4 = frozen_field(family, u, &step_to(m, p, dt, &k3)?);
    let mut incr = k1;
    incr.axpy(2.0, &k2);
    incr.axpy(2.0, &k3);
    incr.axpy(1.0, &k4);
    step_to(m, p, dt / 6.0, &incr)
}

/// Integrate the control path for signal `u` from `p0` with step `dt`,
/// recording every step.
pub fn integrate_control(
    sys: &ControlSystem,
    p0: &Point,
    u: &ControlSignal,
    dt: f64,
) -> Result<Trajectory> {
    let mut traj = Trajectory {
        times: vec![0.0],
        points: vec![p0.clone()],
        record_stride: 1,
    };
    integrate_control_streaming(sys, p0, u, dt, |t, p| {
        traj.times.push(t);
        traj.points.push(p.clone());
    })?;
    Ok(traj)
}

fn integrate_control_streaming(
    sys: &ControlSystem,
    p0: &Point,
    u: &ControlSignal,
    dt: f64,
    mut visit: impl FnMut(f64, &Point),
) -> Result<()> {
    if dt <= 0.0 {
        return Err(Error::InvalidInput("dt must be positive".into()));
    }
    if p0.manifold != sys.family.manifold {
        return Err(Error::ManifoldMismatch("start point off the system manifold".into()));
    }
    let mut p = p0.clone();
    let mut t = 0.0;
    for (duration, values) in &u.segments {
        if dt > *duration {
            return Err(Error::InvalidInput(format!(
                "dt = {dt} exceeds segment duration {duration}"
            )));
        }
        let n = (duration / dt).round().max(1.0) as usize;
        for _ in 0..n {
            p = rk4_step(&sys.family, values, &p, dt)?;
            t += dt;
            visit(t, &p);
        }
    }
    Ok(())
}

/// Draw a piecewise-constant signal with per-segment values i.i.d. uniform
/// over the control box.
pub fn random_signal(
    k: usize,
    control_box: &[(f64, f64)],
    n_segments: usize,
    seg_duration: f64,
    rng: &mut RandomStream,
) -> Result<ControlSignal> {
    if n_segments < 1 {
        return Err(Error::InvalidInput("need at least one segment".into()));
    }
    if control_box.len() != k {
        return Err(Error::InvalidInput("control box size must match channel count".into()));
    }
    let segments = (0..n_segments)
        .map(|_| {
            let values = control_box
                .iter()
                .map(|&(lo, hi)| rng.uniform_range(lo, hi))
                .collect();
            (seg_duration, values)
        })
        .collect();
    Ok(ControlSignal { segments })
}

/// Union (with counts) of grid cells visited by `n_paths` trajectories under
/// independently sampled random signals. Paths run concurrently on per-path
/// substreams; counts merge by commutative sums.
pub fn reach_sample(
    sys: &ControlSystem,
    p0: &Point,
    n_paths: usize,
    horizon: f64,
    dt: f64,
    grid: &CellGrid,
    rng: &RandomStream,
) -> Result<OccupationHistogram> {
    if !sys.family.manifold.is_compact() {
        return Err(Error::NonCompactManifold(
            "reachability sampling requires a compact manifold".into(),
        ));
    }
    let n_segments = (horizon / REACH_SEGMENT_DURATION).ceil().max(1.0) as usize;
    let k = sys.family.fields.len();
    let counts = (0..n_paths)
        .into_par_iter()
        .map(|j| -> Result<Vec<u64>> {
            let mut local = vec![0u64; grid.cell_count];
            let mut stream = rng.substream(j as u64);
            let signal = random_signal(k, &sys.control_box, n_segments, REACH_SEGMENT_DURATION, &mut stream)?;
            local[grid.cell_index(p0)?] += 1;
            integrate_control_streaming(sys, p0, &signal, dt, |_, p| {
                let cell = grid.cell_index(p).expect("path stays on the grid manifold");
                local[cell] += 1;
            })?;
            Ok(local)
        })
        .try_reduce(
            || vec![0u64; grid.cell_count],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                Ok(a)
            },
        )?;
    Ok(OccupationHistogram::from_counts(grid.clone(), counts, 0))
}

/// One Stratonovich Heun predictor-corrector step.
///
/// Predictor: `q = retract(p + X0(p) dt + sum X_i(p) dW_i)`;
/// corrector: `retract(p + 1/2 [X0(p)+X0(q)] dt + 1/2 sum [X_i(p)+X_i(q)] dW_i)`.
pub fn sde_step_heun(sys: &SDESystem, p: &Point, dt: f64, dw: &[f64]) -> Result<Point> {
    if dt <= 0.0 {
        return Err(Error::InvalidInput("dt must be positive".into()));
    }
    let m = p.manifold;
    let n = p.coords().dim();
    let fam = &sys.family;

    let mut incr_p = AmbientVector::zeros(n);
    if let Some(drift) = &fam.drift {
        incr_p.axpy(dt, &drift.eval(p).coords);
    }
    for (wi, field) in dw.iter().zip(fam.fields.iter()) {
        incr_p.axpy(*wi, &field.eval(p).coords);
    }
    let mut xq = p.coords().clone();
    xq.axpy(1.0, &incr_p);
    guard_blowup(&xq)?;
    let q = m.retract(&xq)?;

    let mut incr_q = AmbientVector::zeros(n);
    if let Some(drift) = &fam.drift {
        incr_q.axpy(dt, &drift.eval(&q).coords);
    }
    for (wi, field) in dw.iter().zip(fam.fields.iter()) {
        incr_q.axpy(*wi, &field.eval(&q).coords);
    }
    let mut x = p.coords().clone();
    x.axpy(0.5, &incr_p);
    x.axpy(0.5, &incr_q);
    guard_blowup(&x)?;
    m.retract(&x)
}

/// Drive `n_steps` Heun steps with `dW ~ Normal(0, dt)` per channel,
/// invoking `visit(step, point)` for the start point and after every step.
pub fn stream_sde(
    sys: &SDESystem,
    p0: &Point,
    n_steps: usize,
    dt: f64,
    rng: &mut RandomStream,
    mut visit: impl FnMut(usize, &Point),
) -> Result<()> {
    if p0.manifold != sys.family.manifold {
        return Err(Error::ManifoldMismatch("start point off the system manifold".into()));
    }
    let k = sys.family.fields.len();
    let sqrt_dt = dt.sqrt();
    let mut dw = vec![0.0f64; k];
    let mut p = p0.clone();
    visit(0, &p);
    for step in 1..=n_steps {
        for w in dw.iter_mut() {
            *w = sqrt_dt * rng.gaussian();
        }
        p = sde_step_heun(sys, &p, dt, &dw)?;
        visit(step, &p);
    }
    Ok(())
}

/// Simulate the SDE to horizon `T`, recording every `record_stride` steps.
/// Bit-deterministic given `(seed, stream)`.
pub fn simulate_sde(
    sys: &SDESystem,
    p0: &Point,
    t_final: f64,
    dt: f64,
    rng: &mut RandomStream,
    record_stride: usize,
) -> Result<Trajectory> {
    if t_final < dt {
        return Err(Error::InvalidInput("horizon must be at least one step".into()));
    }
    let stride = record_stride.max(1);
    let n_steps = (t_final / dt).ceil() as usize;
    let mut traj = Trajectory {
        times: Vec::new(),
        points: Vec::new(),
        record_stride: stride,
    };
    stream_sde(sys, p0, n_steps, dt, rng, |step, p| {
        if step % stride == 0 {
            traj.times.push(step as f64 * dt);
            traj.points.push(p.clone());
        }
    })?;
    Ok(traj)
}

/// Mean and standard error of `f` at time `t` over `n_paths` independent
/// paths (per-path substreams, commutative merge).
pub fn mean_at_time(
    sys: &SDESystem,
    p0: &Point,
    n_paths: usize,
    t: f64,
    dt: f64,
    f: &ScalarField,
    rng: &RandomStream,
) -> Result<(f64, f64)> {
    let n_steps = (t / dt).ceil() as usize;
    let (sum, sum_sq) = (0..n_paths)
        .into_par_iter()
        .map(|j| -> Result<(f64, f64)> {
            let mut stream = rng.substream(j as u64);
            let mut last = p0.clone();
            stream_sde(sys, p0, n_steps, dt, &mut stream, |_, p| last = p.clone())?;
            let v = f.eval(&last);
            Ok((v, v * v))
        })
        .try_reduce(|| (0.0, 0.0), |a, b| Ok((a.0 + b.0, a.1 + b.1)))?;
    let mean = sum / n_paths as f64;
    let var = (sum_sq / n_paths as f64 - mean * mean).max(0.0);
    let stderr = (var / n_paths as f64).sqrt();
    Ok((mean, stderr))
}

/// Numerical generator application:
/// `(L f)(p) = (X0 f)(p) + 1/2 sum (X_i^2 f)(p)` with central differences of
/// step `h` along each field, nested for the second-order terms.
pub fn generator_apply(sys: &SDESystem, f: &ScalarField, p: &Point, h: f64) -> Result<f64> {
    if h <= 0.0 || h > 1e-2 {
        return Err(Error::InvalidInput(format!(
            "generator step must be in (0, 1e-2], got {h}"
        )));
    }
    let m = p.manifold;
    let fam = &sys.family;
    let mut total = 0.0;
    if let Some(drift) = &fam.drift {
        total += field_derivative(m, drift, f, p, h)?;
    }
    for field in &fam.fields {
        let v = field.eval(p).coords;
        let qp = shifted(m, p, &v, h)?;
        let qm = shifted(m, p, &v, -h)?;
        let dp = field_derivative(m, field, f, &qp, h)?;
        let dm = field_derivative(m, field, f, &qm, h)?;
        total += 0.5 * (dp - dm) / (2.0 * h);
    }
    Ok(total)
}

fn shifted(m: ManifoldId, p: &Point, v: &AmbientVector, h: f64) -> Result<Point> {
    let mut x = p.coords().clone();
    x.axpy(h, v);
    m.retract(&x)
}

/// `(X f)(p)` by central differences along the field direction.
fn field_derivative(
    m: ManifoldId,
    field: &VectorField,
    f: &ScalarField,
    p: &Point,
    h: f64,
) -> Result<f64> {
    let v = field.eval(p).coords;
    let fp = f.eval(&shifted(m, p, &v, h)?);
    let fm = f.eval(&shifted(m, p, &v, -h)?);
    Ok((fp - fm) / (2.0 * h))
}

/// Brownian motion as an SDE system: `1/2 Delta_M` via the projected ambient
/// coordinate frame on the sphere, the coordinate frame on the torus chart.
pub fn brownian_motion(m: ManifoldId) -> Result<SDESystem> {
    let fields = match m {
        ManifoldId::Torus2 => vec![
            VectorField::torus_constant(1.0, 0.0),
            VectorField::torus_constant(0.0, 1.0),
        ],
        ManifoldId::Sphere(n) => (0..n + 1)
            .map(|i| VectorField::SphereCoordProjection { n, index: i })
            .collect(),
        ManifoldId::SpecialLinear2 => {
            return Err(Error::NonCompactManifold(
                "Brownian motion driver is defined for the torus and spheres".into(),
            ))
        }
    };
    SDESystem::new(FieldFamily::new(None, fields)?)
}

/// Drift-free SDE driven by the projected foliated frame of `family`; its
/// sample paths stay on the leaf through the start point.
///
/// The distribution rank is probed on a fixed deterministic sample; a varying
/// rank surfaces as `RankCollapse` rather than being silently patched.
pub fn foliated_bm(family: &Arc<FieldFamily>, depth: usize) -> Result<SDESystem> {
    if !family.manifold.is_compact() {
        return Err(Error::NonCompactManifold(
            "foliated Brownian motion requires a compact manifold".into(),
        ));
    }
    // Deterministic lattice probes catch rank drops on thin sets (e.g. the
    // zero lines of trig coefficients) that random sampling never hits;
    // random probes cover the generic stratum.
    let mut probes: Vec<Point> = Vec::new();
    match family.manifold {
        ManifoldId::Torus2 => {
            for i in 0..8 {
                for j in 0..8 {
                    probes.push(family.manifold.retract(&AmbientVector::from_slice(&[
                        i as f64 / 8.0,
                        j as f64 / 8.0,
                    ]))?);
                }
            }
        }
        ManifoldId::Sphere(n) => {
            for i in 0..n + 1 {
                for sign in [1.0, -1.0] {
                    let mut c = vec![0.0; n + 1];
                    c[i] = sign;
                    probes.push(family.manifold.retract(&AmbientVector::from_slice(&c))?);
                }
            }
        }
        ManifoldId::SpecialLinear2 => unreachable!("rejected above"),
    }
    let mut probe_rng = RandomStream::new(0xF0_11A7ED, 0);
    for _ in 0..32 {
        probes.push(family.manifold.random_point(&mut probe_rng)?);
    }
    check_frame_rank(family, depth, &probes)?;
    SDESystem::new(foliated_frame(family, depth)?)
}
