//! Acceptance suite: one test per criterion, each printing a single
//! `criterion N: PASS` line when its assertions hold (visible with
//! `cargo test --test acceptance -- --nocapture`).

use folsim::dynamics::{
    brownian_motion, foliated_bm, generator_apply, mean_at_time, reach_sample, stream_sde,
    SDESystem,
};
use folsim::manifold::{AmbientVector, CellGrid, ManifoldId, Point};
use folsim::measure::{
    check_invariance, ergodic_constancy_test, occupation_measure, support_consistency_test,
    support_estimate, torus_trig_battery, ConsistencyBudgets, Density, Verdict,
};
use folsim::rng::RandomStream;
use folsim::vectorfield::{
    krener_rank_test, lie_bracket, parse_torus_field, sl2_triple, FieldFamily, ScalarField,
    TrigPhase, VectorField,
};
use rayon::prelude::*;
use std::process::Command;
use std::sync::Arc;

const GOLDEN: f64 = 0.618033988749894848;

fn torus_pt(x: f64, y: f64) -> Point {
    ManifoldId::Torus2
        .retract(&AmbientVector::from_slice(&[x, y]))
        .unwrap()
}

fn sphere_pt(coords: &[f64]) -> Point {
    ManifoldId::Sphere(2)
        .retract(&AmbientVector::from_slice(coords))
        .unwrap()
}

fn line_system(a: f64) -> SDESystem {
    SDESystem::new(FieldFamily::new(None, vec![VectorField::torus_constant(1.0, a)]).unwrap())
        .unwrap()
}

/// Criterion 1: finite-difference brackets of the SL(2,R) triple realize
/// [X,H] = X, [X,Y] = -H, [H,Y] = Y on 100 sampled group elements.
#[test]
fn criterion_1_sl2_bracket_relations() {
    let (x, h, y) = sl2_triple();
    let m = ManifoldId::SpecialLinear2;
    let mut rng = RandomStream::new(101, 0);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let p = m.random_group_point(&mut rng).unwrap();
        let cases = [
            (lie_bracket(&x, &h, &p, 1e-4).unwrap(), x.eval(&p), 1.0),
            (lie_bracket(&x, &y, &p, 1e-4).unwrap(), h.eval(&p), -1.0),
            (lie_bracket(&h, &y, &p, 1e-4).unwrap(), y.eval(&p), 1.0),
        ];
        for (got, expect, sign) in cases {
            for i in 0..4 {
                worst = worst.max((got.coords[i] - sign * expect.coords[i]).abs());
            }
        }
    }
    assert!(worst <= 1e-5, "max bracket coordinate error {worst}");
    println!("criterion 1: PASS (max coordinate error {worst:.2e})");
}

/// Criterion 2: the projected-frame gradient identity
/// sum (X_i f) X_i = Pi_D grad f on 100 random S^2 points, three functions.
#[test]
fn criterion_2_foliated_frame_identity() {
    let m = ManifoldId::Sphere(2);
    let base = Arc::new(
        FieldFamily::new(
            None,
            (0..3)
                .map(|i| VectorField::SphereCoordProjection { n: 2, index: i })
                .collect(),
        )
        .unwrap(),
    );
    let frame = foliated_bm(&base, 1).unwrap().family;
    let fns = [
        ScalarField::coordinate(3, 0),
        ScalarField::AmbientMonomial(vec![0, 1, 1]),
        ScalarField::one_minus_x1_squared(3),
    ];
    let mut rng = RandomStream::new(202, 0);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let p = m.random_point(&mut rng).unwrap();
        for f in &fns {
            let grad = f.ambient_gradient(p.coords());
            let projected = m.tangent_project(&p, &grad).coords;
            let mut sum = AmbientVector::zeros(3);
            for field in &frame.fields {
                let xi = field.eval(&p).coords;
                sum.axpy(xi.dot(&grad), &xi);
            }
            for i in 0..3 {
                worst = worst.max((sum[i] - projected[i]).abs());
            }
        }
    }
    assert!(worst <= 1e-10, "max identity error {worst}");
    println!("criterion 2: PASS (max identity error {worst:.2e})");
}

/// Criterion 3: sphere Brownian motion decays the height coordinate as
/// E[x1(t)] = e^{-t} (since half the sphere Laplacian sends x1 to -x1).
#[test]
fn criterion_3_sphere_bm_functional_decay() {
    let sys = brownian_motion(ManifoldId::Sphere(2)).unwrap();
    let start = sphere_pt(&[1.0, 0.0, 0.0]);
    let f = ScalarField::coordinate(3, 0);
    let (mean, se) = mean_at_time(
        &sys,
        &start,
        10_000,
        1.0,
        1e-3,
        &f,
        &RandomStream::new(303, 0),
    )
    .unwrap();
    let gap = (mean - (-1.0f64).exp()).abs();
    assert!(gap <= 3.0 * se, "|mean - e^-1| = {gap}, 3 SE = {}", 3.0 * se);
    println!("criterion 3: PASS (gap {gap:.2e} vs 3 SE {:.2e})", 3.0 * se);
}

/// Criterion 4: occupation coverage dichotomy on the torus — a rational
/// slope stays on its closed leaf, the golden slope fills the torus.
#[test]
fn criterion_4_torus_density_dichotomy() {
    let grid = CellGrid::new(ManifoldId::Torus2, (32, 32)).unwrap();
    let p0 = torus_pt(0.0, 0.0);
    let coverage = |a: f64, stream: u64| {
        let hist = occupation_measure(
            &line_system(a),
            &p0,
            5e4,
            0.01,
            0.0,
            &grid,
            &mut RandomStream::new(404, stream),
        )
        .unwrap();
        support_estimate(&hist, 1).unwrap().coverage_fraction
    };
    let rational = coverage(0.5, 0);
    let irrational = coverage(GOLDEN, 1);
    assert!(rational <= 0.25, "slope 1/2 coverage {rational}");
    assert!(irrational >= 0.9, "golden coverage {irrational}");
    println!("criterion 4: PASS (coverage {rational:.3} vs {irrational:.3})");
}

/// Criterion 5: invariance quadrature. The sin^2 density is invariant for
/// the slope-1/2 field; Lebesgue is invariant for constant fields; the
/// golden-slope field sees the mismatch. The mismatch witness lives at mode
/// (2,-4), so that clause widens the battery to |k| <= 4; the Lebesgue
/// clause uses h = 1e-2 where the cancellation is exact and the larger step
/// keeps finite-difference roundoff (~eps/h^2) below the 1e-10 bar.
#[test]
fn criterion_5_invariance_quadrature() {
    let density = Density::TorusSin2 { m: 1, n: 2 };
    let matched = check_invariance(
        &density,
        &line_system(0.5),
        &torus_trig_battery(3),
        (256, 256),
        1e-4,
    )
    .unwrap();
    assert!(matched.max_abs_residual <= 1e-5, "matched residual {}", matched.max_abs_residual);

    for a in [0.5, GOLDEN] {
        let lebesgue = check_invariance(
            &Density::Lebesgue,
            &line_system(a),
            &torus_trig_battery(3),
            (128, 128),
            1e-2,
        )
        .unwrap();
        assert!(
            lebesgue.max_abs_residual <= 1e-10,
            "Lebesgue residual {} at slope {a}",
            lebesgue.max_abs_residual
        );
    }

    let mismatch = check_invariance(
        &density,
        &line_system(GOLDEN),
        &torus_trig_battery(4),
        (128, 128),
        1e-4,
    )
    .unwrap();
    assert!(mismatch.max_abs_residual >= 1e-2, "mismatch residual {}", mismatch.max_abs_residual);
    println!(
        "criterion 5: PASS (matched {:.2e}, mismatch {:.2e})",
        matched.max_abs_residual, mismatch.max_abs_residual
    );
}

/// Criterion 6: ergodic constancy dichotomy, reproducible over 5 seeds.
/// The leaf function sin(2 pi (x - 2y)) takes exact values 0 and 1 on the
/// two slope-1/2 leaves; golden-slope averages all vanish.
#[test]
fn criterion_6_ergodic_constancy() {
    let f = vec![(
        "sin(2pi(x-2y))".to_string(),
        ScalarField::TorusTrig { k1: 1, k2: -2, phase: TrigPhase::Sin },
    )];
    let starts = [torus_pt(0.0, 0.0), torus_pt(0.25, 0.0)];
    for seed in 1..=5u64 {
        let rational = ergodic_constancy_test(
            &line_system(0.5),
            &f,
            &starts,
            4,
            2e4,
            0.01,
            &RandomStream::new(seed, 0),
        )
        .unwrap();
        assert_eq!(rational.verdict, Verdict::NotDense, "seed {seed}");
        assert!(rational.max_gap >= 0.9, "seed {seed}: gap {}", rational.max_gap);

        let irrational = ergodic_constancy_test(
            &line_system(GOLDEN),
            &f,
            &starts,
            4,
            1e5,
            0.01,
            &RandomStream::new(seed, 1),
        )
        .unwrap();
        assert_eq!(irrational.verdict, Verdict::Dense, "seed {seed}");
        for means in &irrational.start_means {
            for &m in means {
                assert!(m.abs() <= 0.1, "seed {seed}: average {m}");
            }
        }
    }
    println!("criterion 6: PASS (NotDense vs Dense over 5 seeds)");
}

/// Criterion 7: the bracket-generating frame {dx, sin(2 pi x) dy} has rank
/// 2 at every sample with depth 2, and its randomized reach covers the
/// torus.
#[test]
fn criterion_7_krener_reach() {
    let family = FieldFamily::new(
        None,
        vec![
            parse_torus_field("dx").unwrap(),
            parse_torus_field("sin(1,0)*dy").unwrap(),
        ],
    )
    .unwrap();
    let report = krener_rank_test(&family, 1000, 2, &mut RandomStream::new(707, 0)).unwrap();
    assert!(report.full_rank_everywhere, "ranks {}..{}", report.min_rank, report.max_rank);
    assert_eq!(report.min_rank, 2);

    let csys = folsim::dynamics::ControlSystem::new(family, vec![(-1.0, 1.0), (-1.0, 1.0)]).unwrap();
    let grid = CellGrid::new(ManifoldId::Torus2, (32, 32)).unwrap();
    let hist = reach_sample(
        &csys,
        &torus_pt(0.0, 0.0),
        200,
        100.0,
        0.01,
        &grid,
        &RandomStream::new(707, 1),
    )
    .unwrap();
    let coverage = support_estimate(&hist, 1).unwrap().coverage_fraction;
    assert!(coverage >= 0.9, "reach coverage {coverage}");
    println!("criterion 7: PASS (rank 2 everywhere, reach coverage {coverage:.3})");
}

/// Criterion 8: the sphere height diffusion concentrates at the poles, and
/// the generator annihilates the witness f = 1 - x1^2 there while giving -1
/// at the equator.
#[test]
fn criterion_8_sphere_height_concentration() {
    let sys = SDESystem::new(
        FieldFamily::new(None, vec![VectorField::SphereHeightGradient(2)]).unwrap(),
    )
    .unwrap();
    let start = sphere_pt(&[0.0, 1.0, 0.0]);
    let root = RandomStream::new(808, 0);
    let cap_masses: Vec<f64> = (0..8u64)
        .into_par_iter()
        .map(|j| {
            let mut rng = root.substream(j);
            let mut in_cap = 0u64;
            let mut total = 0u64;
            stream_sde(&sys, &start, 10_000_000, 1e-3, &mut rng, |_, p| {
                total += 1;
                if p.coords()[0].abs() > 0.9 {
                    in_cap += 1;
                }
            })
            .unwrap();
            in_cap as f64 / total as f64
        })
        .collect();
    let mean_mass = cap_masses.iter().sum::<f64>() / cap_masses.len() as f64;
    assert!(mean_mass >= 0.7, "cap mass {mean_mass}");

    let f = ScalarField::one_minus_x1_squared(3);
    for pole in [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]] {
        let lf = generator_apply(&sys, &f, &sphere_pt(&pole), 1e-4).unwrap();
        assert!(lf.abs() <= 1e-6, "pole Lf = {lf}");
    }
    let lf = generator_apply(&sys, &f, &start, 1e-4).unwrap();
    assert!((lf + 1.0).abs() <= 1e-4, "equator Lf = {lf}");
    println!("criterion 8: PASS (cap mass {mean_mass:.3})");
}

/// Criterion 9: accessible set and diffusion support agree (Jaccard >= 0.8)
/// for both the rational and the golden slope under matched budgets.
#[test]
fn criterion_9_support_consistency() {
    let grid = CellGrid::new(ManifoldId::Torus2, (32, 32)).unwrap();
    let budgets = ConsistencyBudgets {
        n_paths: 200,
        horizon: 400.0,
        reach_dt: 0.01,
        occ_t: 5e4,
        occ_dt: 0.01,
        occ_burn_in: 0.0,
    };
    let p0 = torus_pt(0.0, 0.0);
    let mut indices = Vec::new();
    for (k, a) in [0.5, GOLDEN].into_iter().enumerate() {
        let fam = FieldFamily::new(None, vec![VectorField::torus_constant(1.0, a)]).unwrap();
        let csys =
            folsim::dynamics::ControlSystem::new(fam.clone(), vec![(-1.0, 1.0)]).unwrap();
        let dsys = SDESystem::new(fam).unwrap();
        let j = support_consistency_test(
            &csys,
            &dsys,
            &p0,
            &grid,
            &budgets,
            &RandomStream::new(909, k as u64),
        )
        .unwrap();
        assert!(j >= 0.8, "slope {a}: Jaccard {j}");
        indices.push(j);
    }
    println!(
        "criterion 9: PASS (Jaccard {:.3} rational, {:.3} golden)",
        indices[0], indices[1]
    );
}

/// Criterion 10: every CLI command is byte-deterministic for a fixed seed,
/// across repeated runs and across rayon thread counts.
#[test]
fn criterion_10_cli_determinism() {
    let bin = env!("CARGO_BIN_EXE_folsim");
    let dir = std::env::temp_dir().join("folsim-acceptance-determinism");
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();

    let commands: Vec<Vec<&str>> = vec![
        vec!["list-scenarios"],
        vec!["rank", "--scenario", "sl2_frame", "--samples", "50", "--seed", "2"],
        vec![
            "reach", "--scenario", "torus_pair", "--paths", "50", "--horizon", "20",
            "--seed", "3", "--hist", "reach.csv", "--heatmap", "reach.pgm",
        ],
        vec![
            "sde", "--scenario", "torus_line", "--a", "0.61803398875", "--T", "10",
            "--dt", "0.01", "--seed", "5",
        ],
        vec![
            "occupation", "--scenario", "torus_line", "--a", "0.5", "--T", "2000",
            "--burn-in", "200", "--seed", "4", "--hist", "occ.csv",
        ],
        vec![
            "invariance", "--scenario", "torus_line", "--a", "0.5", "--quad", "64x64",
            "--h", "0.01", "--seed", "1",
        ],
        vec!["harmonic", "--scenario", "sphere_height", "--seed", "1"],
        vec![
            "verify", "--scenario", "torus_pair", "--T", "2000", "--burn-in", "200",
            "--paths", "50", "--horizon", "20", "--replicas", "2", "--seed", "6",
        ],
    ];

    for argv in &commands {
        let mut outputs: Vec<(Vec<u8>, Vec<Vec<u8>>)> = Vec::new();
        for threads in ["1", "4", "4"] {
            let out = Command::new(bin)
                .args(argv.iter())
                .arg("--quiet")
                .current_dir(&dir)
                .env("RAYON_NUM_THREADS", threads)
                .output()
                .unwrap();
            assert!(
                out.status.success(),
                "{argv:?} failed: {}",
                String::from_utf8_lossy(&out.stderr)
            );
            let mut artifacts = Vec::new();
            for name in ["reach.csv", "reach.pgm", "occ.csv"] {
                artifacts.push(std::fs::read(dir.join(name)).unwrap_or_default());
            }
            outputs.push((out.stdout, artifacts));
        }
        assert_eq!(outputs[0], outputs[1], "{argv:?}: 1 vs 4 threads differ");
        assert_eq!(outputs[1], outputs[2], "{argv:?}: repeated runs differ");
    }
    println!("criterion 10: PASS ({} commands byte-identical)", commands.len());
}
