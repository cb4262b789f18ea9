//! Empirical measures and the numerical side of the equivalence theorem:
//! occupation histograms, support estimates, quadrature invariance residuals,
//! ergodic averages, and the three-way Dense / NotDense / Inconclusive
//! verdict machinery.
//!
//! Verdict thresholds are deliberately banded: a between-start gap above
//! 5x the pooled replica spread certifies a nonconstant harmonic witness
//! (NotDense); all gaps at or below 2x support Dense; anything between is
//! Inconclusive by construction. Exact dichotomies belong to the theorems,
//! not to finite samples.

use crate::dynamics::{reach_sample, stream_sde, ControlSystem, SDESystem};
use crate::error::{Error, Result};
use crate::manifold::{CellGrid, CellId, ManifoldId, Point};
use crate::rng::RandomStream;
use crate::scenarios::Scenario;
use crate::vectorfield::ScalarField;
use rayon::prelude::*;
use serde::Serialize;
use std::io::Write;

/// Fraction of the horizon discarded as burn-in when none is given.
pub const DEFAULT_BURN_IN_FRACTION: f64 = 0.1;

/// Robust support variant: cells with at least this multiple of the uniform
/// expected count.
pub const ROBUST_SUPPORT_FACTOR: f64 = 0.1;

/// Cell-indexed occupation counts: the empirical stand-in for the Cesaro
/// measure of a path (or a union of paths).
#[derive(Clone, Debug, Serialize)]
pub struct OccupationHistogram {
    pub grid: CellGrid,
    counts: Vec<u64>,
    pub total_samples: u64,
    pub burn_in_discarded: u64,
}

impl OccupationHistogram {
    pub fn from_counts(grid: CellGrid, counts: Vec<u64>, burn_in_discarded: u64) -> Self {
        assert_eq!(counts.len(), grid.cell_count, "count vector must match the grid");
        let total_samples = counts.iter().sum();
        OccupationHistogram { grid, counts, total_samples, burn_in_discarded }
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Normalized weights; zeros when the histogram is empty.
    pub fn weights(&self) -> Vec<f64> {
        if self.total_samples == 0 {
            return vec![0.0; self.counts.len()];
        }
        let t = self.total_samples as f64;
        self.counts.iter().map(|&c| c as f64 / t).collect()
    }

    pub fn occupied_cells(&self, min_count: u64) -> Vec<CellId> {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c >= min_count)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Estimated support of an empirical measure, with a robust variant that
/// drops cells far below the uniform expectation.
#[derive(Clone, Debug, Serialize)]
pub struct SupportEstimate {
    pub occupied_cells: Vec<CellId>,
    pub coverage_fraction: f64,
    pub robust_coverage_fraction: f64,
}

/// `cells with counts >= min_count`, plus the robust coverage at
/// `ROBUST_SUPPORT_FACTOR` times the uniform expected count.
pub fn support_estimate(hist: &OccupationHistogram, min_count: u64) -> Result<SupportEstimate> {
    if min_count < 1 {
        return Err(Error::InvalidInput("min_count must be at least 1".into()));
    }
    let n_cells = hist.grid.cell_count as f64;
    let occupied = hist.occupied_cells(min_count);
    let coverage_fraction = occupied.len() as f64 / n_cells;
    let robust_threshold =
        ((ROBUST_SUPPORT_FACTOR * hist.total_samples as f64 / n_cells).ceil() as u64).max(min_count);
    let robust_coverage_fraction = hist.occupied_cells(robust_threshold).len() as f64 / n_cells;
    Ok(SupportEstimate { occupied_cells: occupied, coverage_fraction, robust_coverage_fraction })
}

/// Bin one long path after burn-in: the Cesaro-in-time occupation estimator.
pub fn occupation_measure(
    sys: &SDESystem,
    p0: &Point,
    t_final: f64,
    dt: f64,
    burn_in: f64,
    grid: &CellGrid,
    rng: &mut RandomStream,
) -> Result<OccupationHistogram> {
    if !sys.family.manifold.is_compact() {
        return Err(Error::NonCompactManifold(
            "occupation runs require a compact manifold".into(),
        ));
    }
    if burn_in < 0.0 || burn_in >= t_final {
        return Err(Error::InvalidInput("burn-in must lie in [0, T)".into()));
    }
    let n_steps = (t_final / dt).ceil() as usize;
    let burn_steps = (burn_in / dt).ceil() as usize;
    let mut counts = vec![0u64; grid.cell_count];
    let mut discarded = 0u64;
    let mut bin_err = None;
    stream_sde(sys, p0, n_steps, dt, rng, |step, p| {
        if step < burn_steps {
            discarded += 1;
            return;
        }
        match grid.cell_index(p) {
            Ok(cell) => counts[cell] += 1,
            Err(e) => bin_err = Some(e),
        }
    })?;
    if let Some(e) = bin_err {
        return Err(e);
    }
    Ok(OccupationHistogram::from_counts(grid.clone(), counts, discarded))
}

/// Pooled occupation over `n_paths` independent paths (per-path substreams,
/// commutative integer merge: output independent of scheduling).
pub fn occupation_measure_multi(
    sys: &SDESystem,
    p0: &Point,
    n_paths: usize,
    t_final: f64,
    dt: f64,
    burn_in: f64,
    grid: &CellGrid,
    rng: &RandomStream,
) -> Result<OccupationHistogram> {
    let parts: Vec<OccupationHistogram> = (0..n_paths)
        .into_par_iter()
        .map(|j| {
            let mut stream = rng.substream(j as u64);
            occupation_measure(sys, p0, t_final, dt, burn_in, grid, &mut stream)
        })
        .collect::<Result<_>>()?;
    let mut counts = vec![0u64; grid.cell_count];
    let mut discarded = 0u64;
    for part in &parts {
        discarded += part.burn_in_discarded;
        for (a, &b) in counts.iter_mut().zip(part.counts.iter()) {
            *a += b;
        }
    }
    Ok(OccupationHistogram::from_counts(grid.clone(), counts, discarded))
}

// ---------------------------------------------------------------------------
// Invariance quadrature
// ---------------------------------------------------------------------------

/// Candidate invariant densities on the torus chart (up to normalization).
#[derive(Clone, Copy, Debug, Serialize)]
pub enum Density {
    Lebesgue,
    /// `sin^2(2 pi (m x - n y))`.
    TorusSin2 { m: i64, n: i64 },
}

impl Density {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            Density::Lebesgue => 1.0,
            Density::TorusSin2 { m, n } => {
                let s = (2.0 * std::f64::consts::PI * (*m as f64 * x - *n as f64 * y)).sin();
                s * s
            }
        }
    }
}

/// Residuals `r_f = integral of Lf against the normalized density`.
#[derive(Clone, Debug, Serialize)]
pub struct InvarianceReport {
    pub residuals: Vec<(String, f64)>,
    pub max_abs_residual: f64,
}

/// Quadrature check of the invariance criterion `int Lf dmu = 0` on the
/// torus. The quadrature is the periodic trapezoid rule on a uniform
/// `quad_res` grid of cell centers (spectrally accurate for trig data);
/// `L f` at each node comes from the finite-difference generator with step
/// `h`. The density is normalized by the same quadrature.
pub fn check_invariance(
    density: &Density,
    sys: &SDESystem,
    fns: &[(String, ScalarField)],
    quad_res: (usize, usize),
    h: f64,
) -> Result<InvarianceReport> {
    if sys.family.manifold != ManifoldId::Torus2 {
        return Err(Error::InvalidInput(
            "invariance quadrature is implemented on the torus chart".into(),
        ));
    }
    if fns.is_empty() {
        return Err(Error::InvalidInput("empty test-function battery".into()));
    }
    let (rx, ry) = quad_res;
    if rx == 0 || ry == 0 {
        return Err(Error::BadParams("quadrature resolution must be positive".into()));
    }
    let m = ManifoldId::Torus2;
    // Per-row partial sums are computed in parallel but combined in a fixed
    // order so the result is bit-identical at any thread count.
    let rows: Vec<Result<(f64, Vec<f64>)>> = (0..rx)
        .into_par_iter()
        .map(|ix| {
            let x = (ix as f64 + 0.5) / rx as f64;
            let mut mass = 0.0;
            let mut sums = vec![0.0f64; fns.len()];
            for iy in 0..ry {
                let y = (iy as f64 + 0.5) / ry as f64;
                let w = density.eval(x, y);
                if w == 0.0 {
                    continue;
                }
                mass += w;
                let p = m.retract(&crate::manifold::AmbientVector::from_slice(&[x, y]))?;
                for (s, (_, f)) in sums.iter_mut().zip(fns.iter()) {
                    *s += w * crate::dynamics::generator_apply(sys, f, &p, h)?;
                }
            }
            Ok((mass, sums))
        })
        .collect();
    let mut mass = 0.0;
    let mut sums = vec![0.0f64; fns.len()];
    for row in rows {
        let (row_mass, row_sums) = row?;
        mass += row_mass;
        for (a, b) in sums.iter_mut().zip(row_sums) {
            *a += b;
        }
    }
    if mass <= 0.0 {
        return Err(Error::DegenerateInput("density has zero total mass".into()));
    }
    let residuals: Vec<(String, f64)> = fns
        .iter()
        .map(|(name, _)| name.clone())
        .zip(sums.iter().map(|s| s / mass))
        .collect();
    let max_abs_residual = residuals.iter().map(|(_, r)| r.abs()).fold(0.0, f64::max);
    if !max_abs_residual.is_finite() {
        return Err(Error::NumericalBlowup("non-finite invariance residual".into()));
    }
    Ok(InvarianceReport { residuals, max_abs_residual })
}

// ---------------------------------------------------------------------------
// Ergodic averages and the constancy verdict
// ---------------------------------------------------------------------------

/// Three-way outcome of a density / constancy probe.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Dense,
    NotDense,
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Dense => "Dense",
            Verdict::NotDense => "NotDense",
            Verdict::Inconclusive => "Inconclusive",
        })
    }
}

/// Time average of `f` along one path after burn-in.
pub fn ergodic_average(
    sys: &SDESystem,
    f: &ScalarField,
    p0: &Point,
    t_final: f64,
    dt: f64,
    burn_in: f64,
    rng: &mut RandomStream,
) -> Result<f64> {
    let means = ergodic_averages_along_path(
        sys,
        std::slice::from_ref(f),
        p0,
        t_final,
        dt,
        burn_in,
        rng,
    )?;
    Ok(means[0])
}

/// Shared-path time averages of several functions (one integration pass).
fn ergodic_averages_along_path(
    sys: &SDESystem,
    fns: &[ScalarField],
    p0: &Point,
    t_final: f64,
    dt: f64,
    burn_in: f64,
    rng: &mut RandomStream,
) -> Result<Vec<f64>> {
    if !sys.family.manifold.is_compact() {
        return Err(Error::NonCompactManifold(
            "ergodic averages require a compact manifold".into(),
        ));
    }
    if burn_in < 0.0 || burn_in >= t_final {
        return Err(Error::InvalidInput("burn-in must lie in [0, T)".into()));
    }
    let n_steps = (t_final / dt).ceil() as usize;
    let burn_steps = (burn_in / dt).ceil() as usize;
    let mut sums = vec![0.0f64; fns.len()];
    let mut kept = 0u64;
    stream_sde(sys, p0, n_steps, dt, rng, |step, p| {
        if step < burn_steps {
            return;
        }
        kept += 1;
        for (s, f) in sums.iter_mut().zip(fns.iter()) {
            *s += f.eval(p);
        }
    })?;
    Ok(sums.into_iter().map(|s| s / kept as f64).collect())
}

/// Ergodic constancy evidence: per (start, function, replica) time averages,
/// per-start means, the pooled replica spread, and the resulting verdict.
#[derive(Clone, Debug, Serialize)]
pub struct ErgodicReport {
    pub function_names: Vec<String>,
    /// `averages[fn][start][replica]`.
    pub averages: Vec<Vec<Vec<f64>>>,
    /// `start_means[fn][start]`.
    pub start_means: Vec<Vec<f64>>,
    /// Pooled standard deviation of replica averages within (start, fn)
    /// groups. Deliberately not divided by sqrt(replicas): the verdict bands
    /// compare start gaps against the raw replica spread.
    pub pooled_error: f64,
    /// Largest between-start gap of means over the battery.
    pub max_gap: f64,
    pub verdict: Verdict,
}

/// Probe start-(in)dependence of ergodic time averages.
///
/// A gap above `5 x pooled_error` means some battery function has
/// start-dependent limits — a nonconstant harmonic witness, so NotDense.
/// All gaps at or below `2 x pooled_error` support Dense. Otherwise
/// Inconclusive.
pub fn ergodic_constancy_test(
    sys: &SDESystem,
    fns: &[(String, ScalarField)],
    starts: &[Point],
    replicas: usize,
    t_final: f64,
    dt: f64,
    rng: &RandomStream,
) -> Result<ErgodicReport> {
    if starts.len() < 2 {
        return Err(Error::InvalidInput("need at least two starts".into()));
    }
    if replicas < 2 {
        return Err(Error::InvalidInput("need at least two replicas".into()));
    }
    if fns.is_empty() {
        return Err(Error::InvalidInput("empty test-function battery".into()));
    }
    let burn_in = DEFAULT_BURN_IN_FRACTION * t_final;
    let bare: Vec<ScalarField> = fns.iter().map(|(_, f)| f.clone()).collect();
    // One path per (start, replica) pair; ordered collect keeps the report
    // bit-identical at any thread count.
    let runs: Vec<Vec<f64>> = (0..starts.len() * replicas)
        .into_par_iter()
        .map(|idx| {
            let s = idx / replicas;
            let mut stream = rng.substream(idx as u64);
            ergodic_averages_along_path(sys, &bare, &starts[s], t_final, dt, burn_in, &mut stream)
        })
        .collect::<Result<_>>()?;

    let mut averages = vec![vec![vec![0.0f64; replicas]; starts.len()]; fns.len()];
    for (idx, run) in runs.iter().enumerate() {
        let (s, r) = (idx / replicas, idx % replicas);
        for (fi, &v) in run.iter().enumerate() {
            averages[fi][s][r] = v;
        }
    }
    let start_means: Vec<Vec<f64>> = averages
        .iter()
        .map(|per_start| {
            per_start
                .iter()
                .map(|reps| reps.iter().sum::<f64>() / replicas as f64)
                .collect()
        })
        .collect();

    // Pooled within-group variance of replica averages.
    let mut ss = 0.0;
    for (per_start, means) in averages.iter().zip(start_means.iter()) {
        for (reps, mean) in per_start.iter().zip(means.iter()) {
            for v in reps {
                ss += (v - mean) * (v - mean);
            }
        }
    }
    let groups = fns.len() * starts.len();
    let pooled_error = (ss / (groups * (replicas - 1)) as f64).sqrt();

    let max_gap = start_means
        .iter()
        .map(|means| {
            let lo = means.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            hi - lo
        })
        .fold(0.0, f64::max);

    let verdict = if max_gap > 5.0 * pooled_error {
        Verdict::NotDense
    } else if max_gap <= 2.0 * pooled_error {
        Verdict::Dense
    } else {
        Verdict::Inconclusive
    };
    Ok(ErgodicReport {
        function_names: fns.iter().map(|(n, _)| n.clone()).collect(),
        averages,
        start_means,
        pooled_error,
        max_gap,
        verdict,
    })
}

// ---------------------------------------------------------------------------
// Support consistency (accessible set vs. diffusion support)
// ---------------------------------------------------------------------------

/// Matched budgets for the reach / occupation comparison.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ConsistencyBudgets {
    pub n_paths: usize,
    pub horizon: f64,
    pub reach_dt: f64,
    pub occ_t: f64,
    pub occ_dt: f64,
    pub occ_burn_in: f64,
}

/// Jaccard index between the cells reached by randomized control paths and
/// the cells occupied by the diffusion: the numerical form of the inclusion
/// `A(p) ⊆ union of supp P_t(p,·) ⊆ closure of A(p)`.
pub fn support_consistency_test(
    csys: &ControlSystem,
    dsys: &SDESystem,
    p0: &Point,
    grid: &CellGrid,
    budgets: &ConsistencyBudgets,
    rng: &RandomStream,
) -> Result<f64> {
    let reach = reach_sample(
        csys,
        p0,
        budgets.n_paths,
        budgets.horizon,
        budgets.reach_dt,
        grid,
        &rng.substream(0),
    )?;
    let mut occ_rng = rng.substream(1);
    let occ = occupation_measure(
        dsys,
        p0,
        budgets.occ_t,
        budgets.occ_dt,
        budgets.occ_burn_in,
        grid,
        &mut occ_rng,
    )?;
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&a, &b) in reach.counts().iter().zip(occ.counts().iter()) {
        match (a > 0, b > 0) {
            (true, true) => {
                inter += 1;
                union += 1;
            }
            (false, false) => {}
            _ => union += 1,
        }
    }
    if union == 0 {
        return Err(Error::DegenerateInput("no cell visited by either estimator".into()));
    }
    Ok(inter as f64 / union as f64)
}

// ---------------------------------------------------------------------------
// Equivalence verification
// ---------------------------------------------------------------------------

/// Coverage bands for the reach / support verdicts.
fn coverage_verdict(coverage: f64) -> Verdict {
    if coverage >= 0.9 {
        Verdict::Dense
    } else if coverage <= 0.5 {
        Verdict::NotDense
    } else {
        Verdict::Inconclusive
    }
}

/// Numerical verdicts for the three equivalent assertions: density of
/// accessible sets, full support of invariant measures, constancy of
/// harmonic functions.
#[derive(Clone, Debug, Serialize)]
pub struct EquivalenceReport {
    pub scenario: String,
    pub reach_verdict: Verdict,
    pub support_verdict: Verdict,
    pub constancy_verdict: Verdict,
    pub consistent: bool,
    pub reach_coverage: f64,
    pub support_coverage: f64,
    pub ergodic_max_gap: f64,
    pub ergodic_pooled_error: f64,
}

/// Run all three assertions of the equivalence theorem on one scenario and
/// check that no two decided verdicts disagree.
pub fn verify_equivalence(scenario: &Scenario, rng: &RandomStream) -> Result<EquivalenceReport> {
    if !scenario.manifold.is_compact() || !scenario.ergodic_allowed {
        return Err(Error::NonCompactManifold(format!(
            "scenario {} does not support ergodic verification",
            scenario.name
        )));
    }
    let csys = scenario.control_system()?;
    let dsys = scenario.sde_system()?;
    let grid = CellGrid::new(scenario.manifold, scenario.budgets.grid)?;
    let p0 = &scenario.starts[0];

    let reach = reach_sample(
        &csys,
        p0,
        scenario.budgets.n_paths,
        scenario.budgets.horizon,
        scenario.budgets.reach_dt,
        &grid,
        &rng.substream(0),
    )?;
    let reach_coverage = support_estimate(&reach, 1)?.coverage_fraction;

    let mut occ_rng = rng.substream(1);
    let occ = occupation_measure(
        &dsys,
        p0,
        scenario.budgets.t_final,
        scenario.budgets.dt,
        scenario.budgets.burn_in,
        &grid,
        &mut occ_rng,
    )?;
    let support_coverage = support_estimate(&occ, 1)?.coverage_fraction;

    let ergodic = ergodic_constancy_test(
        &dsys,
        &scenario.battery,
        &scenario.starts,
        scenario.budgets.replicas,
        scenario.budgets.t_final,
        scenario.budgets.dt,
        &rng.substream(2),
    )?;

    let reach_verdict = coverage_verdict(reach_coverage);
    let support_verdict = coverage_verdict(support_coverage);
    let constancy_verdict = ergodic.verdict;
    let decided: Vec<Verdict> = [reach_verdict, support_verdict, constancy_verdict]
        .into_iter()
        .filter(|v| *v != Verdict::Inconclusive)
        .collect();
    let consistent = decided.windows(2).all(|w| w[0] == w[1]);

    Ok(EquivalenceReport {
        scenario: scenario.name.clone(),
        reach_verdict,
        support_verdict,
        constancy_verdict,
        consistent,
        reach_coverage,
        support_coverage,
        ergodic_max_gap: ergodic.max_gap,
        ergodic_pooled_error: ergodic.pooled_error,
    })
}

// ---------------------------------------------------------------------------
// Test-function batteries
// ---------------------------------------------------------------------------

/// All torus trig monomials with `|k1|, |k2| <= kmax`, both phases, the zero
/// mode excluded.
pub fn torus_trig_battery(kmax: i64) -> Vec<(String, ScalarField)> {
    use crate::vectorfield::TrigPhase;
    let mut battery = Vec::new();
    for k1 in -kmax..=kmax {
        for k2 in -kmax..=kmax {
            if k1 == 0 && k2 == 0 {
                continue;
            }
            for (tag, phase) in [("sin", TrigPhase::Sin), ("cos", TrigPhase::Cos)] {
                battery.push((
                    format!("{tag}(2pi({k1}x{k2:+}y))"),
                    ScalarField::TorusTrig { k1, k2, phase },
                ));
            }
        }
    }
    battery
}

/// Sphere battery: coordinates, pairwise products, and the height witness.
pub fn sphere_battery(ambient_dim: usize) -> Vec<(String, ScalarField)> {
    let mut battery = Vec::new();
    for i in 0..ambient_dim {
        battery.push((format!("x{}", i + 1), ScalarField::coordinate(ambient_dim, i)));
    }
    for i in 0..ambient_dim {
        for j in i..ambient_dim {
            let mut exps = vec![0u32; ambient_dim];
            exps[i] += 1;
            exps[j] += 1;
            battery.push((
                format!("x{}x{}", i + 1, j + 1),
                ScalarField::AmbientMonomial(exps),
            ));
        }
    }
    battery.push(("1-x1^2".into(), ScalarField::one_minus_x1_squared(ambient_dim)));
    battery
}

// ---------------------------------------------------------------------------
// Exporters
// ---------------------------------------------------------------------------

/// CSV export: header `cell_id,count,weight`, one row per cell.
pub fn write_histogram_csv(hist: &OccupationHistogram, out: &mut dyn Write) -> Result<()> {
    writeln!(out, "cell_id,count,weight")?;
    let total = hist.total_samples as f64;
    for (id, &count) in hist.counts().iter().enumerate() {
        let weight = if total > 0.0 { count as f64 / total } else { 0.0 };
        writeln!(out, "{id},{count},{weight}")?;
    }
    Ok(())
}

/// Binary PGM (P5, maxval 255) heatmap of a torus histogram: row-major
/// cells, counts linearly rescaled to 0-255.
pub fn write_heatmap_pgm(hist: &OccupationHistogram, out: &mut dyn Write) -> Result<()> {
    if hist.grid.manifold != ManifoldId::Torus2 {
        return Err(Error::InvalidInput("heatmaps are rendered for torus grids".into()));
    }
    let (rows, cols) = hist.grid.resolution;
    let max = hist.counts().iter().copied().max().unwrap_or(0);
    write!(out, "P5\n{cols} {rows}\n255\n")?;
    let mut pixels = Vec::with_capacity(rows * cols);
    for &c in hist.counts() {
        let v = if max == 0 {
            0u8
        } else {
            ((c as f64 / max as f64) * 255.0).round() as u8
        };
        pixels.push(v);
    }
    out.write_all(&pixels)?;
    Ok(())
}
