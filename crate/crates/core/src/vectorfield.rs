//! Evaluable vector fields and scalar test functions, finite-difference
//! Lie brackets, Lie-algebra generation, numerical distribution rank, and
//! the projected foliated frame.

use crate::error::{Error, Result};
use crate::manifold::{matmul2, AmbientVector, ManifoldId, Point, TangentVector};
use crate::rng::RandomStream;
use serde::Serialize;
use std::sync::Arc;

/// Default step for finite-difference Jacobians.
pub const DEFAULT_BRACKET_STEP: f64 = 1e-4;
/// Default relative singular-value threshold for numerical rank.
pub const DEFAULT_RANK_TOL: f64 = 1e-6;
/// Default bracket depth.
pub const DEFAULT_DEPTH: usize = 3;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum TrigPhase {
    Sin,
    Cos,
}

impl TrigPhase {
    fn apply(&self, x: f64) -> f64 {
        match self {
            TrigPhase::Sin => x.sin(),
            TrigPhase::Cos => x.cos(),
        }
    }
}

/// One term of a parsed torus field expression:
/// `coeff [* trig(2 pi (k1 x + k2 y))] * d{x,y}`.
#[derive(Clone, Debug, PartialEq)]
pub struct TorusTerm {
    pub coeff: f64,
    pub trig: Option<(TrigPhase, i64, i64)>,
    /// 0 = dx, 1 = dy.
    pub axis: usize,
}

/// An evaluable vector field on one of the supported manifolds.
#[derive(Clone, Debug)]
pub enum VectorField {
    /// Parsed sum of trig-coefficient terms on the flat torus chart.
    TorusExpr(Vec<TorusTerm>),
    /// `V(x) = e1 - x1 x` on S^n: gradient of the height function.
    SphereHeightGradient(usize),
    /// `X_i(p) = e_i - p_i p` on S^n: projection of the i-th ambient
    /// coordinate field.
    SphereCoordProjection { n: usize, index: usize },
    /// Left-invariant field `X_A(g) = g A` on SL(2,R), `A` row-major.
    Sl2LeftInvariant([f64; 4]),
    /// Field `i` of the projected foliated frame of `family`: the orthogonal
    /// projection of the ambient basis vector `e_i` onto the Lie-algebra
    /// distribution at each evaluation point.
    FoliatedFrame {
        family: Arc<FieldFamily>,
        depth: usize,
        index: usize,
    },
    Scaled(f64, Box<VectorField>),
    Sum(Vec<VectorField>),
}

impl VectorField {
    pub fn manifold(&self) -> ManifoldId {
        match self {
            VectorField::TorusExpr(_) => ManifoldId::Torus2,
            VectorField::SphereHeightGradient(n) => ManifoldId::Sphere(*n),
            VectorField::SphereCoordProjection { n, .. } => ManifoldId::Sphere(*n),
            VectorField::Sl2LeftInvariant(_) => ManifoldId::SpecialLinear2,
            VectorField::FoliatedFrame { family, .. } => family.manifold,
            VectorField::Scaled(_, f) => f.manifold(),
            VectorField::Sum(fs) => fs[0].manifold(),
        }
    }

    /// Constant torus field `(a, b)`.
    pub fn torus_constant(a: f64, b: f64) -> VectorField {
        VectorField::TorusExpr(vec![
            TorusTerm { coeff: a, trig: None, axis: 0 },
            TorusTerm { coeff: b, trig: None, axis: 1 },
        ])
    }

    /// Closed-form evaluation; the result is tangent at `p` by construction.
    pub fn eval(&self, p: &Point) -> TangentVector {
        debug_assert_eq!(p.manifold, self.manifold());
        let coords = self.eval_coords(p);
        TangentVector { base: p.clone(), coords }
    }

    fn eval_coords(&self, p: &Point) -> AmbientVector {
        match self {
            VectorField::TorusExpr(terms) => {
                let x = p.coords()[0];
                let y = p.coords()[1];
                let mut v = AmbientVector::zeros(2);
                for t in terms {
                    let mut val = t.coeff;
                    if let Some((phase, k1, k2)) = t.trig {
                        val *= phase.apply(TWO_PI * (k1 as f64 * x + k2 as f64 * y));
                    }
                    v[t.axis] += val;
                }
                v
            }
            VectorField::SphereHeightGradient(n) => {
                let c = p.coords();
                let mut v = c.scaled(-c[0]);
                v[0] += 1.0;
                debug_assert_eq!(v.dim(), n + 1);
                v
            }
            VectorField::SphereCoordProjection { index, .. } => {
                let c = p.coords();
                let mut v = c.scaled(-c[*index]);
                v[*index] += 1.0;
                v
            }
            VectorField::Sl2LeftInvariant(a) => {
                matmul2(p.coords(), &AmbientVector::from_slice(a))
            }
            VectorField::FoliatedFrame { family, depth, index } => {
                let basis = frame_basis(family, p, *depth, DEFAULT_BRACKET_STEP);
                let mut v = AmbientVector::zeros(p.coords().dim());
                for q in &basis {
                    v.axpy(q[*index], q);
                }
                v
            }
            VectorField::Scaled(c, f) => f.eval_coords(p).scaled(*c),
            VectorField::Sum(fs) => {
                let mut v = AmbientVector::zeros(p.coords().dim());
                for f in fs {
                    v.axpy(1.0, &f.eval_coords(p));
                }
                v
            }
        }
    }
}

/// The family `F = {X0, X1, ..., Xk}`: optional drift plus control/noise fields.
#[derive(Clone, Debug)]
pub struct FieldFamily {
    pub manifold: ManifoldId,
    pub drift: Option<VectorField>,
    pub fields: Vec<VectorField>,
}

impl FieldFamily {
    pub fn new(drift: Option<VectorField>, fields: Vec<VectorField>) -> Result<Self> {
        let manifold = drift
            .as_ref()
            .map(|f| f.manifold())
            .or_else(|| fields.first().map(|f| f.manifold()))
            .ok_or_else(|| Error::InvalidInput("empty field family".into()))?;
        for f in drift.iter().chain(fields.iter()) {
            if f.manifold() != manifold {
                return Err(Error::ManifoldMismatch(
                    "all fields of a family must share one manifold".into(),
                ));
            }
        }
        Ok(FieldFamily { manifold, drift, fields })
    }

    /// All members, drift first when present.
    pub fn all_fields(&self) -> Vec<&VectorField> {
        self.drift.iter().chain(self.fields.iter()).collect()
    }

    pub fn noise_count(&self) -> usize {
        self.fields.len()
    }
}

// ---------------------------------------------------------------------------
// Scalar test functions
// ---------------------------------------------------------------------------

/// Smooth scalar test functions (the `f` the generator acts on).
#[derive(Clone, Debug)]
pub enum ScalarField {
    /// `trig(2 pi (k1 x + k2 y))` on the torus chart.
    TorusTrig { k1: i64, k2: i64, phase: TrigPhase },
    /// Product of ambient coordinate powers, e.g. `x1`, `x1^2`, `x2 x3`.
    AmbientMonomial(Vec<u32>),
    Constant(f64),
    LinearCombo(Vec<(f64, ScalarField)>),
}

impl ScalarField {
    pub fn eval(&self, p: &Point) -> f64 {
        self.eval_coords(p.coords())
    }

    pub fn eval_coords(&self, c: &AmbientVector) -> f64 {
        match self {
            ScalarField::TorusTrig { k1, k2, phase } => {
                phase.apply(TWO_PI * (*k1 as f64 * c[0] + *k2 as f64 * c[1]))
            }
            ScalarField::AmbientMonomial(exps) => exps
                .iter()
                .enumerate()
                .map(|(i, &e)| c[i].powi(e as i32))
                .product(),
            ScalarField::Constant(v) => *v,
            ScalarField::LinearCombo(parts) => {
                parts.iter().map(|(a, f)| a * f.eval_coords(c)).sum()
            }
        }
    }

    /// Ambient (chart) gradient, exact.
    pub fn ambient_gradient(&self, c: &AmbientVector) -> AmbientVector {
        match self {
            ScalarField::TorusTrig { k1, k2, phase } => {
                let arg = TWO_PI * (*k1 as f64 * c[0] + *k2 as f64 * c[1]);
                let d = match phase {
                    TrigPhase::Sin => arg.cos(),
                    TrigPhase::Cos => -arg.sin(),
                };
                AmbientVector::from_slice(&[TWO_PI * *k1 as f64 * d, TWO_PI * *k2 as f64 * d])
            }
            ScalarField::AmbientMonomial(exps) => {
                let mut g = AmbientVector::zeros(c.dim());
                for j in 0..exps.len() {
                    if exps[j] == 0 {
                        continue;
                    }
                    let mut d = exps[j] as f64 * c[j].powi(exps[j] as i32 - 1);
                    for (i, &e) in exps.iter().enumerate() {
                        if i != j {
                            d *= c[i].powi(e as i32);
                        }
                    }
                    g[j] = d;
                }
                g
            }
            ScalarField::Constant(_) => AmbientVector::zeros(c.dim()),
            ScalarField::LinearCombo(parts) => {
                let mut g = AmbientVector::zeros(c.dim());
                for (a, f) in parts {
                    g.axpy(*a, &f.ambient_gradient(c));
                }
                g
            }
        }
    }

    /// `1 - x1^2`, the harmonic witness of the sphere height diffusion.
    pub fn one_minus_x1_squared(ambient_dim: usize) -> ScalarField {
        let mut exps = vec![0u32; ambient_dim];
        exps[0] = 2;
        ScalarField::LinearCombo(vec![
            (1.0, ScalarField::Constant(1.0)),
            (-1.0, ScalarField::AmbientMonomial(exps)),
        ])
    }

    /// Monomial `x_{i+1}` on an `ambient_dim`-dimensional chart.
    pub fn coordinate(ambient_dim: usize, i: usize) -> ScalarField {
        let mut exps = vec![0u32; ambient_dim];
        exps[i] = 1;
        ScalarField::AmbientMonomial(exps)
    }
}

// ---------------------------------------------------------------------------
// Torus field expression parser
// ---------------------------------------------------------------------------

/// Parse the torus field grammar:
///
/// ```text
/// expr  := ['-'] term (('+'|'-') term)*
/// term  := (coeff '*')? (trig '*')? basis
/// trig  := ('sin'|'cos') '(' int ',' int ')'     // trig(2 pi (k1 x + k2 y))
/// basis := 'dx' | 'dy'
/// coeff := decimal literal
/// ```
///
/// Whitespace is insignificant. Errors carry the byte position and the
/// expected token.
pub fn parse_torus_field(src: &str) -> Result<VectorField> {
    Parser::new(src).parse()
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Parser { src: src.as_bytes(), pos: 0 }
    }

    fn parse(mut self) -> Result<VectorField> {
        let mut terms = Vec::new();
        let mut sign = 1.0;
        self.skip_ws();
        if self.peek() == Some(b'-') {
            self.pos += 1;
            sign = -1.0;
        }
        loop {
            let mut term = self.term()?;
            term.coeff *= sign;
            terms.push(term);
            self.skip_ws();
            match self.peek() {
                None => break,
                Some(b'+') => {
                    self.pos += 1;
                    sign = 1.0;
                }
                Some(b'-') => {
                    self.pos += 1;
                    sign = -1.0;
                }
                Some(_) => return Err(self.expected("'+', '-' or end of input")),
            }
        }
        Ok(VectorField::TorusExpr(terms))
    }

    fn term(&mut self) -> Result<TorusTerm> {
        self.skip_ws();
        let mut coeff = 1.0;
        if matches!(self.peek(), Some(c) if c.is_ascii_digit() || c == b'.') {
            coeff = self.number()?;
            self.expect(b'*')?;
        }
        self.skip_ws();
        let word = self.ident()?;
        let trig = match word.as_str() {
            "sin" | "cos" => {
                let phase = if word == "sin" { TrigPhase::Sin } else { TrigPhase::Cos };
                self.expect(b'(')?;
                let k1 = self.integer()?;
                self.expect(b',')?;
                let k2 = self.integer()?;
                self.expect(b')')?;
                self.expect(b'*')?;
                Some((phase, k1, k2))
            }
            _ => {
                return self.basis_term(&word, coeff, None);
            }
        };
        self.skip_ws();
        let basis = self.ident()?;
        self.basis_term(&basis, coeff, trig)
    }

    fn basis_term(
        &mut self,
        word: &str,
        coeff: f64,
        trig: Option<(TrigPhase, i64, i64)>,
    ) -> Result<TorusTerm> {
        let axis = match word {
            "dx" => 0,
            "dy" => 1,
            _ => return Err(self.expected_at("'dx' or 'dy'", self.pos - word.len())),
        };
        Ok(TorusTerm { coeff, trig, axis })
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.expected(&format!("'{}'", c as char)))
        }
    }

    fn number(&mut self) -> Result<f64> {
        self.skip_ws();
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit() || c == b'.') {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.expected("decimal literal"));
        }
        std::str::from_utf8(&self.src[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| self.expected_at("decimal literal", start))
    }

    fn integer(&mut self) -> Result<i64> {
        self.skip_ws();
        let start = self.pos;
        if self.peek() == Some(b'-') {
            self.pos += 1;
        }
        while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.pos == start || (self.pos == start + 1 && self.src[start] == b'-') {
            return Err(self.expected("integer"));
        }
        std::str::from_utf8(&self.src[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| self.expected_at("integer", start))
    }

    fn ident(&mut self) -> Result<String> {
        self.skip_ws();
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_alphabetic()) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.expected("identifier ('sin', 'cos', 'dx' or 'dy')"));
        }
        Ok(std::str::from_utf8(&self.src[start..self.pos]).unwrap().to_string())
    }

    fn expected(&self, what: &str) -> Error {
        self.expected_at(what, self.pos)
    }

    fn expected_at(&self, what: &str, pos: usize) -> Error {
        Error::Parse { position: pos, expected: what.to_string() }
    }
}

// ---------------------------------------------------------------------------
// Bracket calculus
// ---------------------------------------------------------------------------

/// A bracket word over the family members, enumerated breadth-first.
#[derive(Clone, Debug)]
enum Word {
    Leaf(usize),
    Bracket(Box<Word>, Box<Word>),
}

fn eval_word(fields: &[&VectorField], w: &Word, p: &Point, h: f64) -> AmbientVector {
    match w {
        Word::Leaf(i) => fields[*i].eval(p).coords,
        Word::Bracket(u, v) => {
            let m = p.manifold;
            let xu = eval_word(fields, u, p, h);
            let xv = eval_word(fields, v, p, h);
            let ju = word_jacobian(fields, u, p, h);
            let jv = word_jacobian(fields, v, p, h);
            // [U, V] = J_V . U - J_U . V, tangent-projected. The two products
            // are accumulated separately and subtracted at the end so that
            // swapping the arguments negates the result exactly.
            let n = p.coords().dim();
            let mut jvu = AmbientVector::zeros(n);
            let mut juv = AmbientVector::zeros(n);
            for j in 0..n {
                jvu.axpy(xu[j], &jv[j]);
                juv.axpy(xv[j], &ju[j]);
            }
            m.tangent_project(p, &jvu.minus(&juv)).coords
        }
    }
}

/// Central-difference Jacobian columns of a word field, with retraction back
/// onto the manifold after each ambient perturbation.
fn word_jacobian(fields: &[&VectorField], w: &Word, p: &Point, h: f64) -> Vec<AmbientVector> {
    let m = p.manifold;
    let n = p.coords().dim();
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let mut xp = p.coords().clone();
        xp[j] += h;
        let mut xm = p.coords().clone();
        xm[j] -= h;
        // Perturbations of size h around a valid point cannot degenerate.
        let pp = m.retract(&xp).expect("retraction of small perturbation");
        let pm = m.retract(&xm).expect("retraction of small perturbation");
        let fp = eval_word(fields, w, &pp, h);
        let fm = eval_word(fields, w, &pm, h);
        cols.push(fp.minus(&fm).scaled(1.0 / (2.0 * h)));
    }
    cols
}

fn check_step(h: f64) -> Result<()> {
    if h <= 0.0 || h > 1e-2 {
        return Err(Error::InvalidInput(format!(
            "finite-difference step must be in (0, 1e-2], got {h}"
        )));
    }
    Ok(())
}

/// Finite-difference Lie bracket `[X, Y]` at `p` with step `h`.
pub fn lie_bracket(x: &VectorField, y: &VectorField, p: &Point, h: f64) -> Result<TangentVector> {
    check_step(h)?;
    if x.manifold() != y.manifold() || x.manifold() != p.manifold {
        return Err(Error::ManifoldMismatch(
            "bracket operands must live on the point's manifold".into(),
        ));
    }
    let fields = [x, y];
    let w = Word::Bracket(Box::new(Word::Leaf(0)), Box::new(Word::Leaf(1)));
    let coords = eval_word(&fields, &w, p, h);
    Ok(TangentVector { base: p.clone(), coords })
}

/// Enumerate bracket words of the family up to `depth`, breadth-first:
/// depth 1 is the fields themselves; depth `d` adds `[a, b]` over unordered
/// pairs of earlier words whose depths sum to `d`.
fn bracket_words(n_fields: usize, depth: usize) -> Vec<Word> {
    let mut levels: Vec<Vec<Word>> = vec![(0..n_fields).map(Word::Leaf).collect()];
    for d in 2..=depth {
        let mut level = Vec::new();
        for da in 1..=d - 1 {
            let db = d - da;
            if da > db {
                break;
            }
            for (ia, wa) in levels[da - 1].iter().enumerate() {
                for (ib, wb) in levels[db - 1].iter().enumerate() {
                    if da == db && ib <= ia {
                        continue;
                    }
                    level.push(Word::Bracket(Box::new(wa.clone()), Box::new(wb.clone())));
                }
            }
        }
        levels.push(level);
    }
    levels.into_iter().flatten().collect()
}

/// Evaluations at `p` of every family member and every iterated bracket up
/// to `depth`, in deterministic breadth-first order.
pub fn lie_algebra_basis(
    family: &FieldFamily,
    p: &Point,
    depth: usize,
    h: f64,
) -> Result<Vec<TangentVector>> {
    check_step(h)?;
    if depth < 1 {
        return Err(Error::InvalidInput("bracket depth must be >= 1".into()));
    }
    let fields = family.all_fields();
    let words = bracket_words(fields.len(), depth);
    Ok(words
        .iter()
        .map(|w| TangentVector { base: p.clone(), coords: eval_word(&fields, w, p, h) })
        .collect())
}

/// Numerical rank of the Lie-algebra distribution at `p`: singular values of
/// the basis matrix above `tol_rel * sigma_max`.
pub fn distribution_rank(
    family: &FieldFamily,
    p: &Point,
    depth: usize,
    tol_rel: f64,
) -> Result<usize> {
    let basis = lie_algebra_basis(family, p, depth, DEFAULT_BRACKET_STEP)?;
    Ok(numerical_rank(&basis, tol_rel))
}

fn numerical_rank(basis: &[TangentVector], tol_rel: f64) -> usize {
    if basis.is_empty() {
        return 0;
    }
    let n = basis[0].coords.dim();
    let mat = nalgebra::DMatrix::from_fn(n, basis.len(), |i, j| basis[j].coords[i]);
    let sv = mat.singular_values();
    let smax = sv.iter().cloned().fold(0.0f64, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > tol_rel * smax).count()
}

/// Per-point ranks at uniformly sampled points, with the Lie-algebra rank
/// condition verdict.
#[derive(Clone, Debug, Serialize)]
pub struct RankReport {
    pub samples: usize,
    pub depth: usize,
    pub min_rank: usize,
    pub max_rank: usize,
    pub full_rank_everywhere: bool,
    pub ranks: Vec<usize>,
}

/// Sample `samples` uniform points and report the distribution rank at each.
pub fn krener_rank_test(
    family: &FieldFamily,
    samples: usize,
    depth: usize,
    rng: &mut RandomStream,
) -> Result<RankReport> {
    if !family.manifold.is_compact() {
        return Err(Error::NonCompactManifold(
            "rank sampling requires a compact manifold".into(),
        ));
    }
    if samples < 1 {
        return Err(Error::InvalidInput("samples must be >= 1".into()));
    }
    let mut ranks = Vec::with_capacity(samples);
    for _ in 0..samples {
        let p = family.manifold.random_point(rng)?;
        ranks.push(distribution_rank(family, &p, depth, DEFAULT_RANK_TOL)?);
    }
    let min_rank = *ranks.iter().min().unwrap();
    let max_rank = *ranks.iter().max().unwrap();
    Ok(RankReport {
        samples,
        depth,
        min_rank,
        max_rank,
        full_rank_everywhere: min_rank == family.manifold.dim(),
        ranks,
    })
}

// ---------------------------------------------------------------------------
// Foliated frame
// ---------------------------------------------------------------------------

/// Orthonormal basis of the Lie-algebra distribution at `p` (modified
/// Gram-Schmidt with a relative drop tolerance).
pub(crate) fn frame_basis(
    family: &FieldFamily,
    p: &Point,
    depth: usize,
    h: f64,
) -> Vec<AmbientVector> {
    let basis = lie_algebra_basis(family, p, depth, h)
        .expect("frame construction validated depth and step");
    let max_norm = basis.iter().map(|t| t.coords.norm()).fold(0.0f64, f64::max);
    if max_norm == 0.0 {
        return Vec::new();
    }
    let drop_tol = 1e-8 * max_norm;
    let mut q: Vec<AmbientVector> = Vec::new();
    for t in &basis {
        let mut v = t.coords.clone();
        for u in &q {
            v.axpy(-v.dot(u), u);
        }
        // Second pass for orthogonality at the 1e-12 level.
        for u in &q {
            v.axpy(-v.dot(u), u);
        }
        let n = v.norm();
        if n > drop_tol {
            q.push(v.scaled(1.0 / n));
        }
    }
    q
}

/// Rank of the distribution as seen by the frame construction.
pub fn frame_rank(family: &FieldFamily, p: &Point, depth: usize) -> usize {
    frame_basis(family, p, depth, DEFAULT_BRACKET_STEP).len()
}

/// The projected foliated frame: `N` drift-free fields, field `i` at `p`
/// being the orthogonal projection of the ambient basis vector `e_i` onto
/// the Lie-algebra distribution of `family` at `p`.
pub fn foliated_frame(family: &Arc<FieldFamily>, depth: usize) -> Result<FieldFamily> {
    if depth < 1 {
        return Err(Error::InvalidInput("bracket depth must be >= 1".into()));
    }
    let n = family.manifold.ambient_dim();
    let fields = (0..n)
        .map(|index| VectorField::FoliatedFrame {
            family: Arc::clone(family),
            depth,
            index,
        })
        .collect();
    FieldFamily::new(None, fields)
}

/// Check that the numerical rank of the distribution is constant on a probe
/// set; a varying rank is reported as `RankCollapse`.
pub fn check_frame_rank(family: &FieldFamily, depth: usize, probes: &[Point]) -> Result<usize> {
    let mut rank = None;
    for p in probes {
        let r = frame_rank(family, p, depth);
        match rank {
            None => rank = Some(r),
            Some(r0) if r0 != r => {
                return Err(Error::RankCollapse(format!(
                    "distribution rank varies across probe points ({r0} vs {r})"
                )))
            }
            _ => {}
        }
    }
    rank.ok_or_else(|| Error::InvalidInput("empty probe set".into()))
}

/// The sl(2) matrix triple `X = e`, `H = -h/2`, `Y = f/2` realizing
/// `[X,H] = X`, `[X,Y] = -H`, `[H,Y] = Y`.
pub fn sl2_triple() -> (VectorField, VectorField, VectorField) {
    let x = VectorField::Sl2LeftInvariant([0.0, 1.0, 0.0, 0.0]);
    let h = VectorField::Sl2LeftInvariant([-0.5, 0.0, 0.0, 0.5]);
    let y = VectorField::Sl2LeftInvariant([0.0, 0.0, 0.5, 0.0]);
    (x, h, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::AmbientVector as AV;

    fn torus_pt(x: f64, y: f64) -> Point {
        ManifoldId::Torus2.retract(&AV::from_slice(&[x, y])).unwrap()
    }

    fn sphere_pt(c: &[f64]) -> Point {
        ManifoldId::Sphere(c.len() - 1).retract(&AV::from_slice(c)).unwrap()
    }

    #[test]
    fn parse_and_eval_constant_field() {
        let f = parse_torus_field("1*dx + 0.5*dy").unwrap();
        let t = f.eval(&torus_pt(0.37, 0.91));
        assert_eq!(t.coords.as_slice(), &[1.0, 0.5]);
    }

    #[test]
    fn parse_trig_field() {
        let f = parse_torus_field("sin(1,0)*dy").unwrap();
        let t = f.eval(&torus_pt(0.25, 0.8));
        assert!((t.coords[0]).abs() < 1e-15);
        assert!((t.coords[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn parse_reports_position_and_expectation() {
        match parse_torus_field("1*dz") {
            Err(Error::Parse { position, expected }) => {
                assert_eq!(position, 2);
                assert!(expected.contains("dx"), "{expected}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        match parse_torus_field("sin(1)*dy") {
            Err(Error::Parse { expected, .. }) => assert!(expected.contains(',')),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn parse_whitespace_and_signs() {
        let f = parse_torus_field("  2*dx - 0.25 * dy ").unwrap();
        let t = f.eval(&torus_pt(0.0, 0.0));
        assert_eq!(t.coords.as_slice(), &[2.0, -0.25]);
    }

    #[test]
    fn sphere_height_gradient_values() {
        let f = VectorField::SphereHeightGradient(2);
        let at_pole = f.eval(&sphere_pt(&[1.0, 0.0, 0.0]));
        assert!(at_pole.coords.max_abs() < 1e-15);
        let at_equator = f.eval(&sphere_pt(&[0.0, 1.0, 0.0]));
        assert_eq!(at_equator.coords.as_slice(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn constant_fields_commute() {
        let x = parse_torus_field("1*dx").unwrap();
        let y = parse_torus_field("1*dy").unwrap();
        let b = lie_bracket(&x, &y, &torus_pt(0.3, 0.4), 1e-4).unwrap();
        assert!(b.coords.max_abs() < 1e-12);
    }

    #[test]
    fn bracket_of_dx_with_sin_dy() {
        // [d/dx, sin(2 pi x) d/dy] = 2 pi cos(2 pi x) d/dy; at x = 0 this is (0, 2 pi).
        let x = parse_torus_field("1*dx").unwrap();
        let y = parse_torus_field("sin(1,0)*dy").unwrap();
        for yy in [0.0, 0.33, 0.8] {
            let b = lie_bracket(&x, &y, &torus_pt(0.0, yy), 1e-4).unwrap();
            assert!(b.coords[0].abs() < 1e-9);
            assert!((b.coords[1] - TWO_PI).abs() < 1e-6, "got {}", b.coords[1]);
        }
    }

    #[test]
    fn bracket_is_antisymmetric_exactly() {
        let x = parse_torus_field("sin(1,2)*dx + 0.7*dy").unwrap();
        let y = parse_torus_field("cos(2,1)*dy + 0.3*dx").unwrap();
        let p = torus_pt(0.21, 0.68);
        let ab = lie_bracket(&x, &y, &p, 1e-3).unwrap();
        let ba = lie_bracket(&y, &x, &p, 1e-3).unwrap();
        for i in 0..2 {
            assert_eq!(ab.coords[i], -ba.coords[i]);
        }
    }

    #[test]
    fn bracket_is_bilinear() {
        let x = parse_torus_field("sin(1,0)*dx").unwrap();
        let y = parse_torus_field("cos(0,1)*dy").unwrap();
        let p = torus_pt(0.4, 0.15);
        let b = lie_bracket(&x, &y, &p, 1e-3).unwrap();
        let scaled = VectorField::Scaled(3.0, Box::new(x.clone()));
        let bs = lie_bracket(&scaled, &y, &p, 1e-3).unwrap();
        for i in 0..2 {
            assert!((bs.coords[i] - 3.0 * b.coords[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn sl2_bracket_relations() {
        // [X,H] = X, [X,Y] = -H, [H,Y] = Y at 1e-5 over 100 bounded group
        // elements, h = 1e-4.
        let (x, h, y) = sl2_triple();
        let m = ManifoldId::SpecialLinear2;
        let mut rng = RandomStream::new(17, 0);
        for _ in 0..100 {
            let g = m.random_group_point(&mut rng).unwrap();
            assert!(g.coords().max_abs() <= 2.0);
            let xh = lie_bracket(&x, &h, &g, 1e-4).unwrap();
            let xv = x.eval(&g);
            let xy = lie_bracket(&x, &y, &g, 1e-4).unwrap();
            let hv = h.eval(&g);
            let hy = lie_bracket(&h, &y, &g, 1e-4).unwrap();
            let yv = y.eval(&g);
            for i in 0..4 {
                assert!((xh.coords[i] - xv.coords[i]).abs() <= 1e-5, "[X,H] != X");
                assert!((xy.coords[i] + hv.coords[i]).abs() <= 1e-5, "[X,Y] != -H");
                assert!((hy.coords[i] - yv.coords[i]).abs() <= 1e-5, "[H,Y] != Y");
            }
        }
    }

    #[test]
    fn basis_single_constant_field() {
        let fam = FieldFamily::new(None, vec![parse_torus_field("1*dx").unwrap()]).unwrap();
        let basis = lie_algebra_basis(&fam, &torus_pt(0.2, 0.9), 3, 1e-4).unwrap();
        assert_eq!(basis[0].coords.as_slice(), &[1.0, 0.0]);
        for b in &basis[1..] {
            assert!(b.coords.max_abs() < 1e-10);
        }
    }

    #[test]
    fn basis_bracket_pair_contains_generators() {
        let fam = FieldFamily::new(
            None,
            vec![
                parse_torus_field("1*dx").unwrap(),
                parse_torus_field("sin(1,0)*dy").unwrap(),
            ],
        )
        .unwrap();
        let basis = lie_algebra_basis(&fam, &torus_pt(0.0, 0.5), 2, 1e-4).unwrap();
        assert_eq!(basis.len(), 3);
        assert_eq!(basis[0].coords.as_slice(), &[1.0, 0.0]);
        assert!(basis[1].coords.max_abs() < 1e-12); // sin(0) = 0
        assert!(basis[2].coords[0].abs() < 1e-9);
        assert!((basis[2].coords[1].abs() - TWO_PI).abs() < 1e-6);
    }

    #[test]
    fn sl2_depth_two_adds_nothing_to_x_h() {
        // [X,H] = X, so span at depth 2 equals span{X, H}.
        let (x, h, _) = sl2_triple();
        let fam = FieldFamily::new(None, vec![x, h]).unwrap();
        let g = ManifoldId::SpecialLinear2
            .random_group_point(&mut RandomStream::new(3, 0))
            .unwrap();
        let r1 = distribution_rank(&fam, &g, 1, DEFAULT_RANK_TOL).unwrap();
        let r2 = distribution_rank(&fam, &g, 2, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(r1, 2);
        assert_eq!(r2, 2);
    }

    #[test]
    fn rank_examples() {
        let p = torus_pt(0.0, 0.3);
        let single = FieldFamily::new(None, vec![parse_torus_field("1*dx").unwrap()]).unwrap();
        assert_eq!(distribution_rank(&single, &p, 3, DEFAULT_RANK_TOL).unwrap(), 1);

        let pair = FieldFamily::new(
            None,
            vec![parse_torus_field("1*dx").unwrap(), parse_torus_field("1*dy").unwrap()],
        )
        .unwrap();
        assert_eq!(distribution_rank(&pair, &p, 1, DEFAULT_RANK_TOL).unwrap(), 2);

        let bracket_pair = FieldFamily::new(
            None,
            vec![
                parse_torus_field("1*dx").unwrap(),
                parse_torus_field("sin(1,0)*dy").unwrap(),
            ],
        )
        .unwrap();
        assert_eq!(distribution_rank(&bracket_pair, &p, 1, DEFAULT_RANK_TOL).unwrap(), 1);
        assert_eq!(distribution_rank(&bracket_pair, &p, 2, DEFAULT_RANK_TOL).unwrap(), 2);
    }

    #[test]
    fn rank_is_scaling_invariant() {
        let mut rng = RandomStream::new(23, 0);
        let fam = FieldFamily::new(
            None,
            vec![
                parse_torus_field("1*dx").unwrap(),
                parse_torus_field("sin(1,0)*dy").unwrap(),
            ],
        )
        .unwrap();
        for _ in 0..100 {
            let p = ManifoldId::Torus2.random_point(&mut rng).unwrap();
            let c = rng.uniform_range(1e-3, 1e3);
            let scaled = FieldFamily::new(
                None,
                vec![
                    VectorField::Scaled(c, Box::new(fam.fields[0].clone())),
                    fam.fields[1].clone(),
                ],
            )
            .unwrap();
            assert_eq!(
                distribution_rank(&fam, &p, 2, DEFAULT_RANK_TOL).unwrap(),
                distribution_rank(&scaled, &p, 2, DEFAULT_RANK_TOL).unwrap()
            );
        }
    }

    #[test]
    fn zero_family_has_rank_zero() {
        let fam = FieldFamily::new(None, vec![VectorField::torus_constant(0.0, 0.0)]).unwrap();
        assert_eq!(distribution_rank(&fam, &torus_pt(0.5, 0.5), 2, DEFAULT_RANK_TOL).unwrap(), 0);
    }

    #[test]
    fn krener_test_examples() {
        let mut rng = RandomStream::new(31, 0);
        let pair = FieldFamily::new(
            None,
            vec![parse_torus_field("1*dx").unwrap(), parse_torus_field("1*dy").unwrap()],
        )
        .unwrap();
        let r = krener_rank_test(&pair, 100, 1, &mut rng).unwrap();
        assert_eq!((r.min_rank, r.max_rank), (2, 2));
        assert!(r.full_rank_everywhere);

        let single = FieldFamily::new(None, vec![parse_torus_field("1*dx + 0.5*dy").unwrap()]).unwrap();
        let r = krener_rank_test(&single, 100, 3, &mut rng).unwrap();
        assert_eq!((r.min_rank, r.max_rank), (1, 1));
        assert!(!r.full_rank_everywhere);
    }

    #[test]
    fn krener_test_rejects_sl2() {
        let (x, h, _) = sl2_triple();
        let fam = FieldFamily::new(None, vec![x, h]).unwrap();
        assert!(matches!(
            krener_rank_test(&fam, 10, 2, &mut RandomStream::new(0, 0)),
            Err(Error::NonCompactManifold(_))
        ));
    }

    #[test]
    fn foliated_frame_full_rank_sphere_is_tangent_projector() {
        let fam = Arc::new(
            FieldFamily::new(
                None,
                (0..3)
                    .map(|i| VectorField::SphereCoordProjection { n: 2, index: i })
                    .collect(),
            )
            .unwrap(),
        );
        let frame = foliated_frame(&fam, 1).unwrap();
        assert_eq!(frame.fields.len(), 3);
        assert!(frame.drift.is_none());
        let mut rng = RandomStream::new(8, 0);
        for _ in 0..20 {
            let p = ManifoldId::Sphere(2).random_point(&mut rng).unwrap();
            for (i, f) in frame.fields.iter().enumerate() {
                let v = f.eval(&p);
                // Closed form: e_i - p_i p.
                for j in 0..3 {
                    let expect = (if i == j { 1.0 } else { 0.0 }) - p.coords()[i] * p.coords()[j];
                    assert!((v.coords[j] - expect).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn foliated_frame_at_pole() {
        let fam = Arc::new(
            FieldFamily::new(
                None,
                (0..3)
                    .map(|i| VectorField::SphereCoordProjection { n: 2, index: i })
                    .collect(),
            )
            .unwrap(),
        );
        let frame = foliated_frame(&fam, 1).unwrap();
        let p = sphere_pt(&[1.0, 0.0, 0.0]);
        assert!(frame.fields[0].eval(&p).coords.max_abs() <= 1e-12);
        assert!((frame.fields[1].eval(&p).coords[1] - 1.0).abs() <= 1e-12);
        assert!((frame.fields[2].eval(&p).coords[2] - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn foliated_frame_line_projection_on_torus() {
        // F = {dx + a dy}: frame = {(1,a)/(1+a^2), a(1,a)/(1+a^2)}.
        let a = 0.5;
        let fam = Arc::new(FieldFamily::new(None, vec![VectorField::torus_constant(1.0, a)]).unwrap());
        let frame = foliated_frame(&fam, 2).unwrap();
        let p = torus_pt(0.1, 0.7);
        let d = 1.0 + a * a;
        let f0 = frame.fields[0].eval(&p);
        let f1 = frame.fields[1].eval(&p);
        assert!((f0.coords[0] - 1.0 / d).abs() <= 1e-12);
        assert!((f0.coords[1] - a / d).abs() <= 1e-12);
        assert!((f1.coords[0] - a / d).abs() <= 1e-12);
        assert!((f1.coords[1] - a * a / d).abs() <= 1e-12);
    }

    #[test]
    fn foliated_frame_gradient_identity_on_sphere() {
        // Sum_i (X_i f) X_i = Pi_D grad f for full-rank F, to 1e-10.
        let fam = Arc::new(
            FieldFamily::new(
                None,
                (0..3)
                    .map(|i| VectorField::SphereCoordProjection { n: 2, index: i })
                    .collect(),
            )
            .unwrap(),
        );
        let frame = foliated_frame(&fam, 1).unwrap();
        let fns = [
            ScalarField::coordinate(3, 0),
            ScalarField::AmbientMonomial(vec![0, 1, 1]),
            ScalarField::AmbientMonomial(vec![2, 0, 0]),
        ];
        let mut rng = RandomStream::new(12, 0);
        for _ in 0..100 {
            let p = ManifoldId::Sphere(2).random_point(&mut rng).unwrap();
            let grad = fns.iter().map(|f| f.ambient_gradient(p.coords()));
            for (f, g) in fns.iter().zip(grad) {
                // Pi_D grad f via the orthonormal frame basis.
                let q = frame_basis(&fam, &p, 1, 1e-4);
                let mut proj = AV::zeros(3);
                for u in &q {
                    proj.axpy(g.dot(u), u);
                }
                // Sum_i (X_i f) X_i with exact directional derivatives.
                let mut lhs = AV::zeros(3);
                let mut sq = 0.0;
                for xf in &frame.fields {
                    let xi = xf.eval(&p);
                    let df = g.dot(&xi.coords);
                    lhs.axpy(df, &xi.coords);
                    sq += df * df;
                }
                let _ = f;
                for j in 0..3 {
                    assert!((lhs[j] - proj[j]).abs() <= 1e-10);
                }
                assert!((sq - proj.dot(&proj)).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn check_frame_rank_detects_collapse() {
        // sin(2 pi x) dy has rank 1 generically but rank 0 on {x = 0}.
        let fam = FieldFamily::new(None, vec![parse_torus_field("sin(1,0)*dy").unwrap()]).unwrap();
        let probes = vec![torus_pt(0.0, 0.2), torus_pt(0.3, 0.2)];
        assert!(matches!(
            check_frame_rank(&fam, 1, &probes),
            Err(Error::RankCollapse(_))
        ));
        let ok_probes = vec![torus_pt(0.2, 0.2), torus_pt(0.3, 0.6)];
        assert_eq!(check_frame_rank(&fam, 1, &ok_probes).unwrap(), 1);
    }

    #[test]
    fn scalar_field_values_and_gradients() {
        let f = ScalarField::one_minus_x1_squared(3);
        let p = sphere_pt(&[0.0, 1.0, 0.0]);
        assert!((f.eval(&p) - 1.0).abs() < 1e-15);
        let g = f.ambient_gradient(p.coords());
        assert_eq!(g.as_slice(), &[0.0, 0.0, 0.0]);

        let t = ScalarField::TorusTrig { k1: 1, k2: -2, phase: TrigPhase::Sin };
        let q = torus_pt(0.25, 0.0);
        assert!((t.eval(&q) - 1.0).abs() < 1e-12);
    }
}
