//! Ready-to-run example catalog: linear torus flows, bracket-generating
//! torus frames, the sphere height diffusion, sphere Brownian motion, and
//! the SL(2,R) orthonormal triple (bracket checks only — the group is not
//! compact, so ergodic estimators refuse it).

use crate::dynamics::{foliated_bm, ControlSystem, SDESystem};
use crate::error::{Error, Result};
use crate::manifold::{AmbientVector, ManifoldId, Point};
use crate::measure::{Density, Verdict};
use crate::rng::RandomStream;
use crate::vectorfield::{sl2_triple, FieldFamily, ScalarField, TrigPhase, VectorField};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Largest denominator considered when deciding whether a slope is rational.
pub const MAX_SLOPE_DENOMINATOR: u64 = 64;

/// Absolute tolerance for the rational-slope decision.
pub const SLOPE_TOL: f64 = 1e-9;

/// Recommended run budgets attached to a scenario.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Budgets {
    pub t_final: f64,
    pub dt: f64,
    pub burn_in: f64,
    pub grid: (usize, usize),
    pub n_paths: usize,
    pub horizon: f64,
    pub reach_dt: f64,
    pub replicas: usize,
    pub depth: usize,
}

/// Analytic expectations, present only where an oracle exists.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct Expected {
    pub verdict: Option<Verdict>,
    pub rank: Option<usize>,
}

/// A fully assembled example: manifold, field family in both its control and
/// SDE roles, starts, test-function battery, and expectations.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub manifold: ManifoldId,
    pub family: Arc<FieldFamily>,
    pub control_box: Vec<(f64, f64)>,
    /// Drive the diffusion by the projected foliated frame of the family
    /// (depth from budgets) instead of the raw fields.
    pub use_foliated_bm: bool,
    pub starts: Vec<Point>,
    pub battery: Vec<(String, ScalarField)>,
    pub density: Option<Density>,
    pub expected: Expected,
    /// False for non-compact manifolds: occupation/ergodic runs are refused.
    pub ergodic_allowed: bool,
    pub budgets: Budgets,
}

impl Scenario {
    pub fn control_system(&self) -> Result<ControlSystem> {
        ControlSystem::new((*self.family).clone(), self.control_box.clone())
    }

    pub fn sde_system(&self) -> Result<SDESystem> {
        if self.use_foliated_bm {
            foliated_bm(&self.family, self.budgets.depth)
        } else {
            SDESystem::new((*self.family).clone())
        }
    }
}

/// Free parameters accepted by [`build_scenario`].
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct ScenarioParams {
    /// Slope of the torus line field (torus_line; default 0.5).
    pub a: Option<f64>,
    /// Sphere dimension (sphere_height / sphere_bm; default 2).
    pub n: Option<usize>,
    /// Override the rational-slope auto-detection (torus_line). Rejected if
    /// inconsistent with the slope itself.
    pub rational: Option<bool>,
}

/// Best rational approximation `a ~ m/n` with `n <= max_den`, by continued
/// fractions; `None` when no convergent lands within `tol`.
pub fn detect_rational(a: f64, max_den: u64, tol: f64) -> Option<(i64, u64)> {
    if !a.is_finite() {
        return None;
    }
    let (mut h2, mut h1) = (1i64, a.floor() as i64);
    let (mut k2, mut k1) = (0u64, 1u64);
    let mut frac = a - a.floor();
    for _ in 0..64 {
        if (a - h1 as f64 / k1 as f64).abs() <= tol {
            return Some((h1, k1));
        }
        if frac.abs() < 1e-15 {
            break;
        }
        let x = 1.0 / frac;
        let digit = x.floor();
        frac = x - digit;
        let h = digit as i64 * h1 + h2;
        let k = digit as u64 * k1 + k2;
        if k > max_den {
            break;
        }
        (h2, h1) = (h1, h);
        (k2, k1) = (k1, k);
    }
    None
}

fn torus_start(x: f64, y: f64) -> Point {
    ManifoldId::Torus2
        .retract(&AmbientVector::from_slice(&[x, y]))
        .expect("chart points always retract")
}

fn sphere_start(m: ManifoldId, coords: &[f64]) -> Point {
    m.retract(&AmbientVector::from_slice(coords))
        .expect("unit vectors always retract")
}

fn first_harmonics() -> Vec<(String, ScalarField)> {
    vec![
        ("sin(2pix)".into(), ScalarField::TorusTrig { k1: 1, k2: 0, phase: TrigPhase::Sin }),
        ("cos(2pix)".into(), ScalarField::TorusTrig { k1: 1, k2: 0, phase: TrigPhase::Cos }),
        ("sin(2piy)".into(), ScalarField::TorusTrig { k1: 0, k2: 1, phase: TrigPhase::Sin }),
        ("cos(2piy)".into(), ScalarField::TorusTrig { k1: 0, k2: 1, phase: TrigPhase::Cos }),
    ]
}

fn build_torus_line(params: &ScenarioParams) -> Result<Scenario> {
    let a = params.a.unwrap_or(0.5);
    if !a.is_finite() {
        return Err(Error::BadParams("slope must be finite".into()));
    }
    let detected = detect_rational(a, MAX_SLOPE_DENOMINATOR, SLOPE_TOL);
    if let Some(flag) = params.rational {
        if flag != detected.is_some() {
            return Err(Error::BadParams(format!(
                "slope {a} auto-detects as {} but the rational flag says otherwise",
                if detected.is_some() { "rational" } else { "irrational" }
            )));
        }
    }
    let family = Arc::new(FieldFamily::new(None, vec![VectorField::torus_constant(1.0, a)])?);
    // Leaf witness for a = m/n: f = trig(2 pi (m x - n y)) is constant on
    // leaves; for irrational slopes the same battery separates nothing and
    // the averages agree across starts.
    let (battery, density, expected) = match detected {
        Some((m, n)) => {
            let battery = vec![
                (
                    format!("sin(2pi({m}x-{n}y))"),
                    ScalarField::TorusTrig { k1: m, k2: -(n as i64), phase: TrigPhase::Sin },
                ),
                (
                    format!("cos(2pi({m}x-{n}y))"),
                    ScalarField::TorusTrig { k1: m, k2: -(n as i64), phase: TrigPhase::Cos },
                ),
            ];
            let density = Density::TorusSin2 { m, n: n as i64 };
            (battery, Some(density), Expected { verdict: Some(Verdict::NotDense), rank: Some(1) })
        }
        None => {
            let mut battery = first_harmonics();
            battery.push((
                "sin(2pi(x-2y))".into(),
                ScalarField::TorusTrig { k1: 1, k2: -2, phase: TrigPhase::Sin },
            ));
            (battery, None, Expected { verdict: Some(Verdict::Dense), rank: Some(1) })
        }
    };
    Ok(Scenario {
        name: "torus_line".into(),
        description: format!("linear flow X = dx + a dy on the flat 2-torus, a = {a}"),
        manifold: ManifoldId::Torus2,
        family,
        control_box: vec![(-1.0, 1.0)],
        use_foliated_bm: false,
        starts: vec![torus_start(0.0, 0.0), torus_start(0.25, 0.0)],
        battery,
        density,
        expected,
        ergodic_allowed: true,
        budgets: Budgets {
            t_final: 5e4,
            dt: 0.01,
            burn_in: 5e3,
            grid: (32, 32),
            n_paths: 200,
            horizon: 400.0,
            reach_dt: 0.01,
            replicas: 4,
            depth: 3,
        },
    })
}

fn build_torus_pair() -> Result<Scenario> {
    let family = Arc::new(FieldFamily::new(
        None,
        vec![VectorField::torus_constant(1.0, 0.0), VectorField::torus_constant(0.0, 1.0)],
    )?);
    Ok(Scenario {
        name: "torus_pair".into(),
        description: "coordinate frame {dx, dy} on the torus: full rank, dense flows".into(),
        manifold: ManifoldId::Torus2,
        family,
        control_box: vec![(-1.0, 1.0), (-1.0, 1.0)],
        use_foliated_bm: false,
        starts: vec![torus_start(0.0, 0.0), torus_start(0.25, 0.0)],
        battery: first_harmonics(),
        density: Some(Density::Lebesgue),
        expected: Expected { verdict: Some(Verdict::Dense), rank: Some(2) },
        ergodic_allowed: true,
        budgets: Budgets {
            t_final: 1e4,
            dt: 0.01,
            burn_in: 1e3,
            grid: (32, 32),
            n_paths: 100,
            horizon: 100.0,
            reach_dt: 0.01,
            replicas: 4,
            depth: 2,
        },
    })
}

fn build_torus_bracket() -> Result<Scenario> {
    let family = Arc::new(FieldFamily::new(
        None,
        vec![
            VectorField::torus_constant(1.0, 0.0),
            crate::vectorfield::parse_torus_field("sin(1,0)*dy")?,
        ],
    )?);
    Ok(Scenario {
        name: "torus_bracket".into(),
        description:
            "frame {dx, sin(2 pi x) dy}: rank 2 only through the depth-2 bracket; diffusion runs as foliated Brownian motion"
                .into(),
        manifold: ManifoldId::Torus2,
        family,
        control_box: vec![(-1.0, 1.0), (-1.0, 1.0)],
        use_foliated_bm: true,
        starts: vec![torus_start(0.0, 0.0), torus_start(0.25, 0.0)],
        battery: first_harmonics(),
        density: None,
        expected: Expected { verdict: Some(Verdict::Dense), rank: Some(2) },
        ergodic_allowed: true,
        budgets: Budgets {
            t_final: 1e4,
            dt: 0.01,
            burn_in: 1e3,
            grid: (32, 32),
            n_paths: 200,
            horizon: 100.0,
            reach_dt: 0.01,
            replicas: 4,
            depth: 2,
        },
    })
}

fn build_sphere_height(params: &ScenarioParams) -> Result<Scenario> {
    let n = params.n.unwrap_or(2);
    let m = ManifoldId::sphere(n)?;
    let dim = m.ambient_dim();
    let family = Arc::new(FieldFamily::new(None, vec![VectorField::SphereHeightGradient(n)])?);
    let mut equator_a = vec![0.0; dim];
    equator_a[1] = 1.0;
    let mut equator_b = vec![0.0; dim];
    equator_b[dim - 1] = 1.0;
    Ok(Scenario {
        name: "sphere_height".into(),
        description: format!(
            "height diffusion V(x) = (1,0,...,0) - x1 x on S^{n}: paths concentrate at the poles; harmonic witness f = 1 - x1^2"
        ),
        manifold: m,
        family,
        control_box: vec![(-1.0, 1.0)],
        use_foliated_bm: false,
        starts: vec![sphere_start(m, &equator_a), sphere_start(m, &equator_b)],
        battery: crate::measure::sphere_battery(dim),
        density: None,
        // No analytic verdict: time averages mix between the two polar
        // point masses, so the constancy probe is expected Inconclusive.
        expected: Expected { verdict: None, rank: Some(1) },
        ergodic_allowed: true,
        budgets: Budgets {
            t_final: 1e4,
            dt: 1e-3,
            burn_in: 1e3,
            grid: (16, 32),
            n_paths: 100,
            horizon: 100.0,
            reach_dt: 0.01,
            replicas: 4,
            depth: 2,
        },
    })
}

fn build_sphere_bm(params: &ScenarioParams) -> Result<Scenario> {
    let n = params.n.unwrap_or(2);
    let m = ManifoldId::sphere(n)?;
    let dim = m.ambient_dim();
    let fields: Vec<VectorField> =
        (0..dim).map(|i| VectorField::SphereCoordProjection { n, index: i }).collect();
    let family = Arc::new(FieldFamily::new(None, fields)?);
    let mut north = vec![0.0; dim];
    north[0] = 1.0;
    let mut east = vec![0.0; dim];
    east[1] = 1.0;
    Ok(Scenario {
        name: "sphere_bm".into(),
        description: format!(
            "Brownian motion on S^{n} via the projected ambient coordinate frame"
        ),
        manifold: m,
        family,
        control_box: vec![(-1.0, 1.0); dim],
        use_foliated_bm: false,
        starts: vec![sphere_start(m, &north), sphere_start(m, &east)],
        battery: crate::measure::sphere_battery(dim),
        density: None,
        expected: Expected { verdict: Some(Verdict::Dense), rank: Some(n) },
        ergodic_allowed: true,
        budgets: Budgets {
            t_final: 5e3,
            dt: 0.01,
            burn_in: 500.0,
            grid: (16, 32),
            n_paths: 100,
            horizon: 100.0,
            reach_dt: 0.01,
            replicas: 4,
            depth: 2,
        },
    })
}

fn build_sl2_frame() -> Result<Scenario> {
    let (x, h, y) = sl2_triple();
    let family = Arc::new(FieldFamily::new(None, vec![x, h, y])?);
    let identity = ManifoldId::SpecialLinear2
        .retract(&AmbientVector::from_slice(&[1.0, 0.0, 0.0, 1.0]))?;
    Ok(Scenario {
        name: "sl2_frame".into(),
        description:
            "orthonormal triple {X, H, Y} on SL(2,R) with [X,H]=X, [X,Y]=-H, [H,Y]=Y; bracket-only (non-compact, no ergodic runs)"
                .into(),
        manifold: ManifoldId::SpecialLinear2,
        family,
        control_box: vec![(-1.0, 1.0); 3],
        use_foliated_bm: false,
        starts: vec![identity],
        battery: Vec::new(),
        density: None,
        expected: Expected { verdict: None, rank: Some(3) },
        ergodic_allowed: false,
        budgets: Budgets {
            t_final: 1.0,
            dt: 0.01,
            burn_in: 0.0,
            grid: (1, 1),
            n_paths: 1,
            horizon: 1.0,
            reach_dt: 0.01,
            replicas: 2,
            depth: 2,
        },
    })
}

/// Assemble a catalog scenario by name.
pub fn build_scenario(name: &str, params: &ScenarioParams) -> Result<Scenario> {
    match name {
        "torus_line" => build_torus_line(params),
        "torus_pair" => build_torus_pair(),
        "torus_bracket" => build_torus_bracket(),
        "sphere_height" => build_sphere_height(params),
        "sphere_bm" => build_sphere_bm(params),
        "sl2_frame" => build_sl2_frame(),
        other => Err(Error::UnknownScenario(other.into())),
    }
}

/// Catalog entry: name, accepted parameters, one-line description.
#[derive(Clone, Debug, Serialize)]
pub struct ScenarioInfo {
    pub name: &'static str,
    pub params: &'static str,
    pub description: String,
}

/// Stable-ordered catalog of all scenarios with default parameters.
pub fn list_scenarios() -> Vec<ScenarioInfo> {
    let names: [(&'static str, &'static str); 6] = [
        ("torus_line", "a (slope, default 0.5); rational (optional override)"),
        ("torus_pair", "none"),
        ("torus_bracket", "none"),
        ("sphere_height", "n (sphere dimension, default 2)"),
        ("sphere_bm", "n (sphere dimension, default 2)"),
        ("sl2_frame", "none"),
    ];
    names
        .into_iter()
        .map(|(name, params)| {
            let sc = build_scenario(name, &ScenarioParams::default())
                .expect("catalog defaults always build");
            ScenarioInfo { name, params, description: sc.description }
        })
        .collect()
}

/// Sample points for field validation: uniform on compact manifolds,
/// near-identity group elements on SL(2,R).
pub fn sample_point(m: ManifoldId, rng: &mut RandomStream) -> Result<Point> {
    match m {
        ManifoldId::SpecialLinear2 => m.random_group_point(rng),
        _ => m.random_point(rng),
    }
}
