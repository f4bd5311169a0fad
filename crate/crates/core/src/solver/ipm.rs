//! Mehrotra predictor-corrector interior-point method for convex QPs.
//!
//! Inequalities (including finite variable bounds) are written as
//! `G x + s = h`, `s >= 0`; each Newton step solves the reduced quasi-definite
//! system `[P + G' W^-1 G, A'; A, 0]` with a sparse LU, under a tiny
//! diagonal regularization removed again by iterative refinement.

use std::collections::BTreeMap;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Lu;
use faer::sparse::{SparseColMat, Triplet};
use nalgebra::{DMatrix, DVector};

use super::{ConicProgram, ConstraintRef, LinearRow, SolveResult, Status, Tolerances};

const REGULARIZATION: f64 = 1e-10;
const STEP_FRACTION: f64 = 0.995;
const DIVERGENCE: f64 = 1e11;
const PHASE1_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, Copy)]
enum Origin {
    Equality(usize),
    Fixed(usize),
    Inequality(usize),
    Lower(usize),
    Upper(usize),
}

/// Row-scaled standard form.
struct Prepared {
    n: usize,
    hessian: DMatrix<f64>,
    c: Vec<f64>,
    a: Vec<LinearRow>,
    a_origin: Vec<Origin>,
    a_scale: Vec<f64>,
    g: Vec<LinearRow>,
    g_origin: Vec<Origin>,
    g_scale: Vec<f64>,
}

enum Prep {
    Ready(Prepared),
    Trivially(ConstraintRef),
}

fn scale_row(row: &LinearRow) -> Option<(LinearRow, f64)> {
    let norm = row.coeffs.iter().fold(0.0f64, |m, &(_, a)| m.max(a.abs()));
    if norm == 0.0 {
        return None;
    }
    let coeffs = row.coeffs.iter().map(|&(j, a)| (j, a / norm)).collect();
    Some((LinearRow::new(coeffs, row.rhs / norm), norm))
}

fn prepare(p: &ConicProgram) -> Prep {
    let n = p.n;
    let mut hessian = DMatrix::zeros(n, n);
    for &(i, j, c) in &p.quadratic {
        hessian[(i, j)] += c;
        hessian[(j, i)] += c;
    }
    let mut out = Prepared {
        n,
        hessian,
        c: p.linear.clone(),
        a: Vec::new(),
        a_origin: Vec::new(),
        a_scale: Vec::new(),
        g: Vec::new(),
        g_origin: Vec::new(),
        g_scale: Vec::new(),
    };
    for (i, row) in p.equalities.iter().enumerate() {
        match scale_row(row) {
            Some((r, s)) => {
                out.a.push(r);
                out.a_origin.push(Origin::Equality(i));
                out.a_scale.push(s);
            }
            None if row.rhs.abs() <= 1e-12 => {}
            None => return Prep::Trivially(ConstraintRef::Equality(i)),
        }
    }
    for (i, row) in p.inequalities.iter().enumerate() {
        match scale_row(row) {
            Some((r, s)) => {
                out.g.push(r);
                out.g_origin.push(Origin::Inequality(i));
                out.g_scale.push(s);
            }
            None if row.rhs >= -1e-12 => {}
            None => return Prep::Trivially(ConstraintRef::Inequality(i)),
        }
    }
    for j in 0..n {
        let (lo, hi) = (p.lower[j], p.upper[j]);
        if lo > hi {
            return Prep::Trivially(ConstraintRef::Bounds(j));
        }
        if lo == hi {
            out.a.push(LinearRow::new(vec![(j, 1.0)], lo));
            out.a_origin.push(Origin::Fixed(j));
            out.a_scale.push(1.0);
            continue;
        }
        if lo.is_finite() {
            out.g.push(LinearRow::new(vec![(j, -1.0)], -lo));
            out.g_origin.push(Origin::Lower(j));
            out.g_scale.push(1.0);
        }
        if hi.is_finite() {
            out.g.push(LinearRow::new(vec![(j, 1.0)], hi));
            out.g_origin.push(Origin::Upper(j));
            out.g_scale.push(1.0);
        }
    }
    Prep::Ready(out)
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

struct Iterate {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    s: Vec<f64>,
}

struct Outcome {
    it: Iterate,
    status: Status,
    iterations: usize,
}

struct Residuals {
    rd: Vec<f64>,
    rp: Vec<f64>,
    rg: Vec<f64>,
}

impl Prepared {
    fn residuals(&self, it: &Iterate) -> Residuals {
        let px = &self.hessian * DVector::from_column_slice(&it.x);
        let mut rd: Vec<f64> = (0..self.n).map(|j| px[j] + self.c[j]).collect();
        for (row, &y) in self.a.iter().zip(&it.y) {
            for &(j, a) in &row.coeffs {
                rd[j] += a * y;
            }
        }
        for (row, &z) in self.g.iter().zip(&it.z) {
            for &(j, g) in &row.coeffs {
                rd[j] += g * z;
            }
        }
        let rp = self.a.iter().map(|r| r.dot(&it.x) - r.rhs).collect();
        let rg = self.g.iter().zip(&it.s).map(|(r, s)| r.dot(&it.x) + s - r.rhs).collect();
        Residuals { rd, rp, rg }
    }

    fn objective(&self, x: &[f64]) -> f64 {
        let xv = DVector::from_column_slice(x);
        0.5 * xv.dot(&(&self.hessian * &xv)) + self.c.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }

    /// KKT matrix for the current scaling `w = s / z`, regularized.
    fn kkt(&self, w: &[f64]) -> Option<Kkt> {
        let (n, me) = (self.n, self.a.len());
        let mut k: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for j in 0..n {
            for i in 0..n {
                let h = self.hessian[(i, j)];
                if h != 0.0 {
                    k.insert((i, j), h);
                }
            }
        }
        for (row, &wk) in self.g.iter().zip(w) {
            for &(i, gi) in &row.coeffs {
                for &(j, gj) in &row.coeffs {
                    *k.entry((i, j)).or_default() += gi * gj / wk;
                }
            }
        }
        for j in 0..n {
            *k.entry((j, j)).or_default() += REGULARIZATION;
        }
        for (r, row) in self.a.iter().enumerate() {
            for &(j, a) in &row.coeffs {
                *k.entry((n + r, j)).or_default() += a;
                *k.entry((j, n + r)).or_default() += a;
            }
            *k.entry((n + r, n + r)).or_default() -= REGULARIZATION;
        }
        Kkt::factor(n + me, k.into_iter().map(|((i, j), v)| (i, j, v)).collect())
    }

    fn initial_point(&self) -> Option<Iterate> {
        let (n, me, mi) = (self.n, self.a.len(), self.g.len());
        let w = vec![1.0; mi];
        let k = self.kkt(&w)?;
        let mut rhs = DVector::zeros(n + me);
        for j in 0..n {
            rhs[j] = -self.c[j];
        }
        for row in &self.g {
            for &(j, g) in &row.coeffs {
                rhs[j] += g * row.rhs;
            }
        }
        for (r, row) in self.a.iter().enumerate() {
            rhs[n + r] = row.rhs;
        }
        let sol = k.solve(&rhs)?;
        let x: Vec<f64> = sol.rows(0, n).iter().copied().collect();
        let y = sol.rows(n, me).iter().copied().collect();
        let slack: Vec<f64> = self.g.iter().map(|r| r.rhs - r.dot(&x)).collect();
        let shift = |v: Vec<f64>| {
            let lowest = v.iter().copied().fold(f64::INFINITY, f64::min);
            if lowest > 1e-8 {
                v
            } else {
                v.into_iter().map(|e| e + 1.0 - lowest).collect()
            }
        };
        let s = shift(slack.clone());
        let z = shift(slack.iter().map(|v| -v).collect());
        Some(Iterate { x, y, z, s })
    }
}

/// Regularized KKT matrix in coordinate form with its sparse LU.
struct Kkt {
    dim: usize,
    entries: Vec<(usize, usize, f64)>,
    lu: Lu<usize, f64>,
}

impl Kkt {
    fn factor(dim: usize, entries: Vec<(usize, usize, f64)>) -> Option<Self> {
        let triplets: Vec<_> = entries.iter().map(|&(i, j, v)| Triplet::new(i, j, v)).collect();
        let matrix = SparseColMat::<usize, f64>::try_new_from_triplets(dim, dim, &triplets).ok()?;
        let lu = matrix.sp_lu().ok()?;
        Some(Kkt { dim, entries, lu })
    }

    fn solve(&self, rhs: &DVector<f64>) -> Option<DVector<f64>> {
        let b = faer::Col::from_fn(self.dim, |i| rhs[i]);
        let x = self.lu.solve(&b);
        let x = DVector::from_fn(self.dim, |i, _| x[i]);
        x.iter().all(|v| v.is_finite()).then_some(x)
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        for &(i, j, v) in &self.entries {
            out[i] += v * x[j];
        }
        out
    }
}

/// Solves the Newton system for given right-hand sides. `rc` is the
/// complementarity target residual `s o z - sigma mu`.
struct NewtonSystem<'a> {
    prep: &'a Prepared,
    k: Kkt,
    w: Vec<f64>,
}

struct Direction {
    dx: Vec<f64>,
    dy: Vec<f64>,
    dz: Vec<f64>,
    ds: Vec<f64>,
}

impl<'a> NewtonSystem<'a> {
    fn new(prep: &'a Prepared, it: &Iterate) -> Option<Self> {
        let w: Vec<f64> = it.s.iter().zip(&it.z).map(|(s, z)| s / z).collect();
        let k = prep.kkt(&w)?;
        Some(NewtonSystem { prep, k, w })
    }

    fn solve(&self, res: &Residuals, rc: &[f64], it: &Iterate) -> Option<Direction> {
        let p = self.prep;
        let (n, me) = (p.n, p.a.len());
        let mut rhs = DVector::zeros(n + me);
        for j in 0..n {
            rhs[j] = -res.rd[j];
        }
        // shift of the reduced rhs: -G' W^-1 (rg - rc / z)
        let corr: Vec<f64> = (0..p.g.len())
            .map(|k| (res.rg[k] - rc[k] / it.z[k]) / self.w[k])
            .collect();
        for (row, &c) in p.g.iter().zip(&corr) {
            for &(j, g) in &row.coeffs {
                rhs[j] -= g * c;
            }
        }
        for r in 0..me {
            rhs[n + r] = -res.rp[r];
        }
        let mut sol = self.k.solve(&rhs)?;
        // refine against the unregularized matrix
        for _ in 0..3 {
            let mut applied = self.k.apply(&sol);
            for j in 0..n {
                applied[j] -= REGULARIZATION * sol[j];
            }
            for r in 0..me {
                applied[n + r] += REGULARIZATION * sol[n + r];
            }
            let resid = &rhs - applied;
            if resid.amax() <= 1e-15 * (1.0 + rhs.amax()) {
                break;
            }
            sol += self.k.solve(&resid)?;
        }
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let dx: Vec<f64> = sol.rows(0, n).iter().copied().collect();
        let dy = sol.rows(n, me).iter().copied().collect();
        let gdx: Vec<f64> = p.g.iter().map(|r| r.dot(&dx)).collect();
        let dz = (0..p.g.len()).map(|k| (gdx[k] / self.w[k]) + corr[k]).collect();
        let ds = (0..p.g.len()).map(|k| -res.rg[k] - gdx[k]).collect();
        Some(Direction { dx, dy, dz, ds })
    }
}

fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    v.iter()
        .zip(dv)
        .filter(|(_, d)| **d < 0.0)
        .map(|(v, d)| -v / d)
        .fold(f64::INFINITY, f64::min)
}

fn run(prep: &Prepared, tol: &Tolerances) -> Outcome {
    let mi = prep.g.len();
    let mut it = match prep.initial_point() {
        Some(it) => it,
        None => {
            return Outcome {
                it: Iterate {
                    x: vec![0.0; prep.n],
                    y: vec![0.0; prep.a.len()],
                    z: vec![0.0; mi],
                    s: vec![0.0; mi],
                },
                status: Status::NumericalFailure,
                iterations: 0,
            }
        }
    };
    let scale_p = 1.0
        + prep
            .a
            .iter()
            .chain(&prep.g)
            .fold(0.0f64, |m, r| m.max(r.rhs.abs()));
    let scale_d = 1.0 + inf_norm(&prep.c);
    let mut status = Status::IterationLimit;
    let mut iterations = 0;
    for iter in 0..=tol.max_iter {
        iterations = iter;
        let res = prep.residuals(&it);
        let mu = if mi > 0 {
            it.s.iter().zip(&it.z).map(|(s, z)| s * z).sum::<f64>() / mi as f64
        } else {
            0.0
        };
        let pinf = inf_norm(&res.rp).max(inf_norm(&res.rg)) / scale_p;
        let dinf = inf_norm(&res.rd) / scale_d;
        let pobj = prep.objective(&it.x);
        let gap = mu * mi as f64 / (1.0 + pobj.abs());
        if !(pinf.is_finite() && dinf.is_finite() && gap.is_finite()) {
            status = Status::NumericalFailure;
            break;
        }
        if pinf <= tol.tol && dinf <= tol.tol && gap <= tol.tol {
            status = Status::Optimal;
            break;
        }
        if inf_norm(&it.x) > DIVERGENCE {
            status = Status::Unbounded;
            break;
        }
        if inf_norm(&it.y).max(inf_norm(&it.z)) > DIVERGENCE {
            status = Status::Infeasible;
            break;
        }
        if iter == tol.max_iter {
            break;
        }
        let Some(sys) = NewtonSystem::new(prep, &it) else {
            status = Status::NumericalFailure;
            break;
        };
        // predictor
        let rc_aff: Vec<f64> = it.s.iter().zip(&it.z).map(|(s, z)| s * z).collect();
        let Some(aff) = sys.solve(&res, &rc_aff, &it) else {
            status = Status::NumericalFailure;
            break;
        };
        let a_aff = max_step(&it.s, &aff.ds).min(max_step(&it.z, &aff.dz)).min(1.0);
        let sigma = if mi > 0 && mu > 0.0 {
            let mu_aff = (0..mi)
                .map(|k| (it.s[k] + a_aff * aff.ds[k]) * (it.z[k] + a_aff * aff.dz[k]))
                .sum::<f64>()
                / mi as f64;
            (mu_aff / mu).powi(3).clamp(0.0, 1.0)
        } else {
            0.0
        };
        // corrector
        let rc: Vec<f64> = (0..mi)
            .map(|k| it.s[k] * it.z[k] + aff.ds[k] * aff.dz[k] - sigma * mu)
            .collect();
        let Some(dir) = sys.solve(&res, &rc, &it) else {
            status = Status::NumericalFailure;
            break;
        };
        let alpha = (STEP_FRACTION * max_step(&it.s, &dir.ds).min(max_step(&it.z, &dir.dz))).min(1.0);
        for (v, d) in it.x.iter_mut().zip(&dir.dx) {
            *v += alpha * d;
        }
        for (v, d) in it.y.iter_mut().zip(&dir.dy) {
            *v += alpha * d;
        }
        for (v, d) in it.z.iter_mut().zip(&dir.dz) {
            *v += alpha * d;
        }
        for (v, d) in it.s.iter_mut().zip(&dir.ds) {
            *v += alpha * d;
        }
    }
    Outcome { it, status, iterations }
}

/// Minimizes the total elastic violation of all rows, keeping bounds hard.
/// Returns the rows that remain violated at the optimum, if any.
fn phase_one(p: &ConicProgram, tol: &Tolerances) -> Option<Vec<ConstraintRef>> {
    let n = p.n;
    let me = p.equalities.len();
    let mi = p.inequalities.len();
    let total = n + 2 * me + mi;
    let mut q = ConicProgram::new(total);
    for j in 0..n {
        q.lower[j] = p.lower[j];
        q.upper[j] = p.upper[j];
    }
    for j in n..total {
        q.lower[j] = 0.0;
        q.linear[j] = 1.0;
    }
    for (i, row) in p.equalities.iter().enumerate() {
        let (scaled, _) = scale_row(row).unwrap_or((row.clone(), 1.0));
        let mut coeffs = scaled.coeffs;
        coeffs.push((n + 2 * i, 1.0));
        coeffs.push((n + 2 * i + 1, -1.0));
        q.equalities.push(LinearRow::new(coeffs, scaled.rhs));
    }
    for (i, row) in p.inequalities.iter().enumerate() {
        let (scaled, _) = scale_row(row).unwrap_or((row.clone(), 1.0));
        let mut coeffs = scaled.coeffs;
        coeffs.push((n + 2 * me + i, -1.0));
        q.inequalities.push(LinearRow::new(coeffs, scaled.rhs));
    }
    let Prep::Ready(prep) = prepare(&q) else {
        return None;
    };
    let out = run(&prep, &Tolerances { tol: tol.tol.max(1e-9), max_iter: tol.max_iter });
    if out.status != Status::Optimal {
        return None;
    }
    let x = &out.it.x;
    let value: f64 = x[n..].iter().sum();
    if value <= PHASE1_THRESHOLD {
        return Some(Vec::new());
    }
    let mut conflict = Vec::new();
    for i in 0..me {
        if x[n + 2 * i] + x[n + 2 * i + 1] > PHASE1_THRESHOLD {
            conflict.push(ConstraintRef::Equality(i));
        }
    }
    for i in 0..mi {
        if x[n + 2 * me + i] > PHASE1_THRESHOLD {
            conflict.push(ConstraintRef::Inequality(i));
        }
    }
    Some(conflict)
}

/// Solves a disc-free program with the interior-point method.
pub fn solve_reference(program: &ConicProgram, tolerances: &Tolerances) -> SolveResult {
    if let Err(msg) = program.check() {
        log::error!("invalid program: {msg}");
        return SolveResult::failed(Status::NumericalFailure, program, 0);
    }
    assert!(program.discs.is_empty(), "discs must be removed before the reference solve");
    let prep = match prepare(program) {
        Prep::Ready(p) => p,
        Prep::Trivially(c) => {
            let mut r = SolveResult::failed(Status::Infeasible, program, 0);
            r.conflict = vec![c];
            return r;
        }
    };
    log::debug!(
        "interior point: {} variables, {} equalities, {} inequalities",
        prep.n,
        prep.a.len(),
        prep.g.len()
    );
    let out = run(&prep, tolerances);
    if out.status != Status::Optimal {
        let mut r = SolveResult::failed(out.status, program, out.iterations);
        match phase_one(program, tolerances) {
            Some(conflict) if !conflict.is_empty() => {
                r.status = Status::Infeasible;
                r.conflict = conflict;
            }
            Some(_) => {
                // feasible: divergence of x means the objective is unbounded
                r.status = if inf_norm(&out.it.x) > DIVERGENCE || out.status == Status::Unbounded {
                    Status::Unbounded
                } else if out.status == Status::Infeasible {
                    Status::NumericalFailure
                } else {
                    out.status
                };
            }
            None => {}
        }
        log::debug!("interior point stopped with status {} after {} iterations", r.status, r.iterations);
        return r;
    }
    let mut res = SolveResult::failed(Status::Optimal, program, out.iterations);
    res.x = out.it.x.clone();
    for (k, origin) in prep.a_origin.iter().enumerate() {
        let y = out.it.y[k] / prep.a_scale[k];
        match *origin {
            Origin::Equality(i) => res.eq_duals[i] = y,
            Origin::Fixed(j) => {
                // y (x - v) = -l (x - v) + u (x - v)
                if y < 0.0 {
                    res.lower_duals[j] = -y;
                } else {
                    res.upper_duals[j] = y;
                }
            }
            _ => unreachable!(),
        }
    }
    for (k, origin) in prep.g_origin.iter().enumerate() {
        let z = out.it.z[k] / prep.g_scale[k];
        match *origin {
            Origin::Inequality(i) => res.ineq_duals[i] = z,
            Origin::Lower(j) => res.lower_duals[j] = z,
            Origin::Upper(j) => res.upper_duals[j] = z,
            _ => unreachable!(),
        }
    }
    res.objective = program.objective(&res.x);
    res.dual_objective = lagrangian(program, &res);
    res
}

/// `f(x) + y'(Ax - b) + z'(Gx - h) - l'(x - lo) + u'(x - hi)` at the solution.
fn lagrangian(p: &ConicProgram, r: &SolveResult) -> f64 {
    let x = &r.x;
    let mut v = p.objective(x);
    for (row, y) in p.equalities.iter().zip(&r.eq_duals) {
        v += y * (row.dot(x) - row.rhs);
    }
    for (row, z) in p.inequalities.iter().zip(&r.ineq_duals) {
        v += z * (row.dot(x) - row.rhs);
    }
    for j in 0..p.n {
        if r.lower_duals[j] != 0.0 {
            v -= r.lower_duals[j] * (x[j] - p.lower[j]);
        }
        if r.upper_duals[j] != 0.0 {
            v += r.upper_duals[j] * (x[j] - p.upper[j]);
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tight() -> Tolerances {
        Tolerances { tol: 1e-10, max_iter: 200 }
    }

    #[test]
    fn bound_from_below() {
        // min x s.t. x >= 1
        let mut p = ConicProgram::new(1);
        p.linear[0] = 1.0;
        p.inequalities.push(LinearRow::new(vec![(0, -1.0)], -1.0));
        let r = solve_reference(&p, &tight());
        assert_eq!(r.status, Status::Optimal);
        assert!((r.x[0] - 1.0).abs() < 1e-8);
        assert!((r.ineq_duals[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn quadratic_with_active_upper_bound() {
        // min x^2 - 2x s.t. x <= 0; stationarity 2x - 2 + mu = 0 gives mu = 2
        let mut p = ConicProgram::new(1);
        p.quadratic.push((0, 0, 1.0));
        p.linear[0] = -2.0;
        p.upper[0] = 0.0;
        let r = solve_reference(&p, &tight());
        assert_eq!(r.status, Status::Optimal);
        assert!(r.x[0].abs() < 1e-8);
        assert!((r.upper_duals[0] - 2.0).abs() < 1e-7);
    }

    #[test]
    fn random_lp_has_no_duality_gap() {
        // Feasible by construction (x0 strictly inside), bounded by a box.
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let (n, m) = (20, 30);
        let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut p = ConicProgram::new(n);
        for j in 0..n {
            p.linear[j] = rng.gen_range(-1.0..1.0);
            p.lower[j] = -10.0;
            p.upper[j] = 10.0;
        }
        for _ in 0..m {
            let coeffs: Vec<(usize, f64)> = (0..n).map(|j| (j, rng.gen_range(-1.0..1.0))).collect();
            let row = LinearRow::new(coeffs, 0.0);
            let rhs = row.dot(&x0) + rng.gen_range(0.1..1.0);
            p.inequalities.push(LinearRow::new(row.coeffs, rhs));
        }
        let r = solve_reference(&p, &Tolerances { tol: 1e-10, max_iter: 100 });
        assert_eq!(r.status, Status::Optimal);
        // dual objective of the LP: -h'z - u'hi + l'lo
        let dual: f64 = -p.inequalities.iter().zip(&r.ineq_duals).map(|(row, z)| row.rhs * z).sum::<f64>()
            - (0..n).map(|j| r.upper_duals[j] * p.upper[j] - r.lower_duals[j] * p.lower[j]).sum::<f64>();
        assert!((r.objective - dual).abs() <= 1e-7, "gap {}", r.objective - dual);
        assert!(r.ineq_duals.iter().all(|&z| z >= -1e-12));
    }

    #[test]
    fn equality_qp_solves_in_closed_form() {
        // min x^2 + y^2 s.t. x + y = 2 -> x = y = 1, multiplier -2
        let mut p = ConicProgram::new(2);
        p.quadratic = vec![(0, 0, 1.0), (1, 1, 1.0)];
        p.equalities.push(LinearRow::new(vec![(0, 1.0), (1, 1.0)], 2.0));
        let r = solve_reference(&p, &tight());
        assert_eq!(r.status, Status::Optimal);
        assert!((r.x[0] - 1.0).abs() < 1e-9 && (r.x[1] - 1.0).abs() < 1e-9);
        assert!((r.eq_duals[0] + 2.0).abs() < 1e-8);
    }

    #[test]
    fn contradictory_rows_are_infeasible() {
        let mut p = ConicProgram::new(1);
        p.upper[0] = 3.0;
        p.lower[0] = 0.0;
        p.equalities.push(LinearRow::new(vec![(0, 1.0)], 5.0));
        let r = solve_reference(&p, &tight());
        assert_eq!(r.status, Status::Infeasible);
        assert_eq!(r.conflict, vec![ConstraintRef::Equality(0)]);
    }

    #[test]
    fn unbounded_lp_is_reported() {
        let mut p = ConicProgram::new(1);
        p.linear[0] = -1.0;
        p.lower[0] = 0.0;
        let r = solve_reference(&p, &tight());
        assert_eq!(r.status, Status::Unbounded);
    }

    #[test]
    fn fixed_variable_dual_is_signed() {
        // min 3x with x fixed at 2: stationarity 3 - l = 0
        let mut p = ConicProgram::new(1);
        p.linear[0] = 3.0;
        p.lower[0] = 2.0;
        p.upper[0] = 2.0;
        let r = solve_reference(&p, &tight());
        assert!((r.x[0] - 2.0).abs() < 1e-12);
        assert!((r.lower_duals[0] - 3.0).abs() < 1e-9);
        assert_eq!(r.upper_duals[0], 0.0);
    }

    #[test]
    fn repeated_solves_are_bit_identical() {
        let mut p = ConicProgram::new(3);
        p.quadratic = vec![(0, 0, 0.5), (1, 1, 2.0), (0, 2, 0.1), (2, 2, 1.0)];
        p.linear = vec![1.0, -3.0, 0.5];
        p.equalities.push(LinearRow::new(vec![(0, 1.0), (1, 1.0), (2, 1.0)], 1.0));
        p.lower = vec![0.0; 3];
        let a = solve_reference(&p, &tight());
        let b = solve_reference(&p, &tight());
        assert_eq!(a, b);
    }
}
