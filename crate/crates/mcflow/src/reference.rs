//! Ground-truth solvers used only by tests: an exact rational simplex for
//! the flow LPs, an exhaustive grid minimizer, and a projected-gradient
//! reference for smooth box-constrained problems.
//!
//! Everything here favors verifiability over speed. The simplex keeps all
//! arithmetic in `BigRational`, so optimality certificates are exact and the
//! acceptance baselines carry no tolerance of their own.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};

use crate::error::SolveError;
use crate::model::McfInstance;
use crate::util::golden_min;

pub fn rat(v: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(v))
}

pub fn rat_to_f64(v: &BigRational) -> f64 {
    v.to_f64().expect("rational out of f64 range")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rel {
    Le,
    Eq,
}

/// Linear program `min c.x  s.t.  rows, x >= 0` over exact rationals.
/// Rows are stored sparse; the solver densifies at desk scale.
#[derive(Debug, Clone, Default)]
pub struct LpModel {
    nvars: usize,
    objective: Vec<BigRational>,
    rows: Vec<(Vec<(usize, BigRational)>, Rel, BigRational)>,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<BigRational>,
    pub value: BigRational,
    /// One multiplier per constraint, in original row order and orientation.
    /// For a minimization: Le rows have duals <= 0, Eq rows are free.
    pub duals: Vec<BigRational>,
}

#[derive(Debug, Clone)]
pub enum LpOutcome {
    Optimal(LpSolution),
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NormRel {
    Le,
    Ge,
    Eq,
}

enum SimplexEnd {
    Optimal,
    Unbounded,
}

impl LpModel {
    pub fn new(nvars: usize) -> Self {
        LpModel { nvars, objective: vec![BigRational::zero(); nvars], rows: Vec::new() }
    }

    pub fn set_objective(&mut self, obj: Vec<BigRational>) {
        assert_eq!(obj.len(), self.nvars, "objective length mismatch");
        self.objective = obj;
    }

    pub fn add_constraint(&mut self, coeffs: &[(usize, BigRational)], rel: Rel, rhs: BigRational) {
        assert!(coeffs.iter().all(|&(j, _)| j < self.nvars), "column index out of range");
        self.rows.push((coeffs.to_vec(), rel, rhs));
    }

    /// Two-phase primal simplex with Bland's rule. Exact arithmetic makes
    /// every comparison sharp, so no anti-cycling tolerance is needed.
    pub fn solve(&self) -> LpOutcome {
        let nr = self.rows.len();
        let nv = self.nvars;

        // Densify and normalize to nonnegative right-hand sides.
        let mut a: Vec<Vec<BigRational>> = vec![vec![BigRational::zero(); nv]; nr];
        let mut rhs: Vec<BigRational> = Vec::with_capacity(nr);
        let mut rel: Vec<NormRel> = Vec::with_capacity(nr);
        let mut flipped: Vec<bool> = Vec::with_capacity(nr);
        for (i, (coeffs, r, b)) in self.rows.iter().enumerate() {
            for (j, c) in coeffs {
                a[i][*j] = &a[i][*j] + c;
            }
            let mut b = b.clone();
            let mut nr = match r {
                Rel::Le => NormRel::Le,
                Rel::Eq => NormRel::Eq,
            };
            let flip = b.is_negative();
            if flip {
                for v in &mut a[i] {
                    *v = -&*v;
                }
                b = -b;
                if nr == NormRel::Le {
                    nr = NormRel::Ge;
                }
            }
            rhs.push(b);
            rel.push(nr);
            flipped.push(flip);
        }

        // Column layout: structural, then one slack/surplus per inequality,
        // then one artificial per Ge/Eq row. `source_col[i]` is the column
        // whose phase-2 reduced cost recovers the row's dual multiplier.
        let mut ncols = nv;
        let mut slack_col: Vec<Option<usize>> = vec![None; nr];
        let mut art_col: Vec<Option<usize>> = vec![None; nr];
        let mut source_col: Vec<usize> = vec![0; nr];
        for i in 0..nr {
            match rel[i] {
                NormRel::Le => {
                    slack_col[i] = Some(ncols);
                    source_col[i] = ncols;
                    ncols += 1;
                }
                NormRel::Ge => {
                    slack_col[i] = Some(ncols);
                    ncols += 1;
                    art_col[i] = Some(ncols);
                    source_col[i] = ncols;
                    ncols += 1;
                }
                NormRel::Eq => {
                    art_col[i] = Some(ncols);
                    source_col[i] = ncols;
                    ncols += 1;
                }
            }
        }
        let mut is_art = vec![false; ncols];
        for c in art_col.iter().flatten() {
            is_art[*c] = true;
        }

        // Tableau rows carry rhs in the trailing cell.
        let mut t: Vec<Vec<BigRational>> = Vec::with_capacity(nr);
        let mut basis: Vec<usize> = Vec::with_capacity(nr);
        let mut origin: Vec<usize> = (0..nr).collect();
        for i in 0..nr {
            let mut row = vec![BigRational::zero(); ncols + 1];
            row[..nv].clone_from_slice(&a[i]);
            if let Some(s) = slack_col[i] {
                row[s] = if rel[i] == NormRel::Ge { -rat(1) } else { rat(1) };
            }
            if let Some(c) = art_col[i] {
                row[c] = rat(1);
            }
            row[ncols] = rhs[i].clone();
            t.push(row);
            basis.push(art_col[i].or(slack_col[i]).expect("row has a basic column"));
        }

        // Phase 1: minimize the sum of artificials. Artificials may start
        // basic but never re-enter once out.
        let cost1: Vec<BigRational> =
            (0..ncols).map(|j| if is_art[j] { rat(1) } else { rat(0) }).collect();
        let mut objrow = build_objrow(&t, &basis, &cost1, ncols);
        let allowed1: Vec<bool> = (0..ncols).map(|j| !is_art[j]).collect();
        match run_simplex(&mut t, &mut basis, &mut objrow, &allowed1, ncols) {
            SimplexEnd::Optimal => {}
            SimplexEnd::Unbounded => unreachable!("phase-1 objective is bounded below"),
        }
        if (-&objrow[ncols]).is_positive() {
            return LpOutcome::Infeasible;
        }

        // Drive remaining artificials out of the basis; a row with no
        // eligible pivot is redundant and is dropped.
        let mut i = 0;
        while i < t.len() {
            if is_art[basis[i]] {
                match (0..ncols).find(|&j| !is_art[j] && !t[i][j].is_zero()) {
                    Some(j) => pivot(&mut t, &mut objrow, &mut basis, i, j, ncols),
                    None => {
                        t.remove(i);
                        basis.remove(i);
                        origin.remove(i);
                        continue;
                    }
                }
            }
            i += 1;
        }

        // Phase 2 on the true objective, artificial columns barred.
        let mut cost2 = vec![BigRational::zero(); ncols];
        cost2[..nv].clone_from_slice(&self.objective);
        objrow = build_objrow(&t, &basis, &cost2, ncols);
        match run_simplex(&mut t, &mut basis, &mut objrow, &allowed1, ncols) {
            SimplexEnd::Optimal => {}
            SimplexEnd::Unbounded => return LpOutcome::Unbounded,
        }

        let mut x = vec![BigRational::zero(); nv];
        for (i, row) in t.iter().enumerate() {
            if basis[i] < nv {
                x[basis[i]] = row[ncols].clone();
            }
        }
        let value = -&objrow[ncols];
        let mut duals = vec![BigRational::zero(); nr];
        for (i, &orig) in origin.iter().enumerate() {
            let _ = i;
            let y = -&objrow[source_col[orig]];
            duals[orig] = if flipped[orig] { -y } else { y };
        }
        LpOutcome::Optimal(LpSolution { x, value, duals })
    }
}

/// Reduced costs `c_j - c_B . T_j` plus `-objective` in the trailing cell.
fn build_objrow(
    t: &[Vec<BigRational>],
    basis: &[usize],
    cost: &[BigRational],
    ncols: usize,
) -> Vec<BigRational> {
    let mut row = cost.to_vec();
    row.push(BigRational::zero());
    for (i, trow) in t.iter().enumerate() {
        let cb = &cost[basis[i]];
        if cb.is_zero() {
            continue;
        }
        for j in 0..=ncols {
            row[j] = &row[j] - &(cb * &trow[j]);
        }
    }
    row
}

fn pivot(
    t: &mut [Vec<BigRational>],
    objrow: &mut [BigRational],
    basis: &mut [usize],
    r: usize,
    e: usize,
    ncols: usize,
) {
    let piv = t[r][e].clone();
    for v in t[r].iter_mut() {
        *v = &*v / &piv;
    }
    let prow = t[r].clone();
    for (i, row) in t.iter_mut().enumerate() {
        if i == r {
            continue;
        }
        let f = row[e].clone();
        if f.is_zero() {
            continue;
        }
        for j in 0..=ncols {
            row[j] = &row[j] - &(&f * &prow[j]);
        }
    }
    let f = objrow[e].clone();
    if !f.is_zero() {
        for j in 0..=ncols {
            objrow[j] = &objrow[j] - &(&f * &prow[j]);
        }
    }
    basis[r] = e;
}

/// Bland's rule: first eligible negative reduced cost enters; ratio ties
/// leave by smallest basis index. Guarantees termination without
/// perturbation.
fn run_simplex(
    t: &mut Vec<Vec<BigRational>>,
    basis: &mut Vec<usize>,
    objrow: &mut Vec<BigRational>,
    allowed: &[bool],
    ncols: usize,
) -> SimplexEnd {
    loop {
        let enter = (0..ncols).find(|&j| allowed[j] && objrow[j].is_negative());
        let Some(e) = enter else {
            return SimplexEnd::Optimal;
        };
        let mut leave: Option<(usize, BigRational)> = None;
        for (i, row) in t.iter().enumerate() {
            if row[e].is_positive() {
                let ratio = &row[ncols] / &row[e];
                let better = match &leave {
                    None => true,
                    Some((li, lr)) => ratio < *lr || (ratio == *lr && basis[i] < basis[*li]),
                };
                if better {
                    leave = Some((i, ratio));
                }
            }
        }
        let Some((r, _)) = leave else {
            return SimplexEnd::Unbounded;
        };
        pivot(t, objrow, basis, r, e, ncols);
    }
}

fn check_desk_scale(inst: &McfInstance) -> Result<(), SolveError> {
    if inst.n > 12 || inst.m() > 24 || inst.k() > 4 {
        return Err(SolveError::invalid("reference LP is restricted to desk-scale instances"));
    }
    Ok(())
}

/// Exact optimum of `max alpha` s.t. each commodity routes `alpha` times its
/// demand within the joint capacities. Zero throughput reports as infeasible.
pub fn lp_concurrent(inst: &McfInstance) -> Result<BigRational, SolveError> {
    check_desk_scale(inst)?;
    let (m, k) = (inst.m(), inst.k());
    let alpha = m * k;
    let mut lp = LpModel::new(alpha + 1);
    let mut obj = vec![BigRational::zero(); alpha + 1];
    obj[alpha] = rat(-1);
    lp.set_objective(obj);
    for (j, d) in inst.demands.iter().enumerate() {
        for v in 0..inst.n {
            let mut coeffs: Vec<(usize, BigRational)> = Vec::new();
            for e in 0..m {
                if inst.tails[e] == v {
                    coeffs.push((e * k + j, rat(1)));
                } else if inst.heads[e] == v {
                    coeffs.push((e * k + j, rat(-1)));
                }
            }
            coeffs.push((alpha, rat(-d[v])));
            lp.add_constraint(&coeffs, Rel::Eq, rat(0));
        }
    }
    for e in 0..m {
        let coeffs: Vec<(usize, BigRational)> = (0..k).map(|j| (e * k + j, rat(1))).collect();
        lp.add_constraint(&coeffs, Rel::Le, rat(inst.cap[e]));
    }
    match lp.solve() {
        LpOutcome::Optimal(sol) => {
            let best = -sol.value;
            if best.is_zero() {
                Err(SolveError::Infeasible("no positive throughput exists".into()))
            } else {
                Ok(best)
            }
        }
        LpOutcome::Infeasible => unreachable!("zero flow is always feasible"),
        LpOutcome::Unbounded => unreachable!("finite capacities bound alpha"),
    }
}

/// Exact optimum of `max w.beta` s.t. commodity `j` routes `beta_j` times its
/// demand and total congestion stays at most one.
pub fn lp_max_weighted(inst: &McfInstance, w: &[i64]) -> Result<BigRational, SolveError> {
    check_desk_scale(inst)?;
    let (m, k) = (inst.m(), inst.k());
    if w.len() != k {
        return Err(SolveError::invalid("weight vector length must equal commodity count"));
    }
    let mut lp = LpModel::new(m * k + k);
    let mut obj = vec![BigRational::zero(); m * k + k];
    for (j, &wj) in w.iter().enumerate() {
        obj[m * k + j] = rat(-wj);
    }
    lp.set_objective(obj);
    for (j, d) in inst.demands.iter().enumerate() {
        for v in 0..inst.n {
            let mut coeffs: Vec<(usize, BigRational)> = Vec::new();
            for e in 0..m {
                if inst.tails[e] == v {
                    coeffs.push((e * k + j, rat(1)));
                } else if inst.heads[e] == v {
                    coeffs.push((e * k + j, rat(-1)));
                }
            }
            coeffs.push((m * k + j, rat(-d[v])));
            lp.add_constraint(&coeffs, Rel::Eq, rat(0));
        }
    }
    for e in 0..m {
        let coeffs: Vec<(usize, BigRational)> = (0..k).map(|j| (e * k + j, rat(1))).collect();
        lp.add_constraint(&coeffs, Rel::Le, rat(inst.cap[e]));
    }
    match lp.solve() {
        LpOutcome::Optimal(sol) => Ok(-sol.value),
        LpOutcome::Infeasible => unreachable!("zero flow is always feasible"),
        LpOutcome::Unbounded => unreachable!("finite capacities bound every beta"),
    }
}

/// Exhaustive grid scan over a box, then 100 coordinate-descent sweeps of
/// golden-section polish along full axis ranges.
pub fn grid_minimize<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    lo: &[f64],
    hi: &[f64],
    resolution: usize,
) -> (Vec<f64>, f64) {
    let dim = lo.len();
    assert!(dim >= 1 && dim <= 6, "grid search limited to dimension 6");
    assert_eq!(hi.len(), dim);
    assert!(resolution >= 8, "need at least 8 points per axis");
    assert!(lo.iter().zip(hi).all(|(a, b)| a <= b), "box must be nonempty");

    let point = |idx: &[usize]| -> Vec<f64> {
        idx.iter()
            .enumerate()
            .map(|(d, &i)| lo[d] + (hi[d] - lo[d]) * i as f64 / (resolution - 1) as f64)
            .collect()
    };
    let mut idx = vec![0usize; dim];
    let mut best_x = point(&idx);
    let mut best_v = f(&best_x);
    loop {
        let mut d = 0;
        loop {
            idx[d] += 1;
            if idx[d] < resolution {
                break;
            }
            idx[d] = 0;
            d += 1;
            if d == dim {
                break;
            }
        }
        if d == dim {
            break;
        }
        let x = point(&idx);
        let v = f(&x);
        if v < best_v {
            best_v = v;
            best_x = x;
        }
    }

    for _ in 0..100 {
        for d in 0..dim {
            let mut trial = best_x.clone();
            let (xd, v) = golden_min(
                |t| {
                    trial[d] = t;
                    f(&trial)
                },
                lo[d],
                hi[d],
                200,
            );
            if v < best_v {
                best_v = v;
                best_x[d] = xd;
            }
        }
    }
    (best_x, best_v)
}

#[derive(Debug, Clone)]
pub struct DescentResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub pg_norm: f64,
    pub converged: bool,
    pub iters: usize,
}

fn clamp_box(x: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    x.iter().enumerate().map(|(d, &v)| v.clamp(lo[d], hi[d])).collect()
}

/// Projected gradient on a box with backtracking steps, run until the
/// unit-step gradient mapping norm drops below `tol`. Hitting the iteration
/// cap is reported, not hidden.
pub fn descent_reference<F, G>(
    mut f: F,
    mut grad: G,
    lo: &[f64],
    hi: &[f64],
    x0: &[f64],
    tol: f64,
    max_iters: usize,
) -> DescentResult
where
    F: FnMut(&[f64]) -> f64,
    G: FnMut(&[f64]) -> Vec<f64>,
{
    let dim = x0.len();
    assert!(lo.len() == dim && hi.len() == dim);
    let mut x = clamp_box(x0, lo, hi);
    let mut fx = f(&x);
    let mut step = 1.0f64;
    let pg_of = |x: &[f64], g: &[f64]| -> f64 {
        let moved: Vec<f64> = x.iter().zip(g).map(|(xi, gi)| xi - gi).collect();
        let proj = clamp_box(&moved, lo, hi);
        let diff: Vec<f64> = x.iter().zip(&proj).map(|(a, b)| a - b).collect();
        crate::util::norm2(&diff)
    };

    for iter in 0..max_iters {
        let g = grad(&x);
        let pg = pg_of(&x, &g);
        if pg <= tol {
            return DescentResult { x, value: fx, pg_norm: pg, converged: true, iters: iter };
        }
        loop {
            if step < 1e-18 {
                return DescentResult { x, value: fx, pg_norm: pg, converged: false, iters: iter };
            }
            let moved: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - step * gi).collect();
            let cand = clamp_box(&moved, lo, hi);
            let delta: Vec<f64> = cand.iter().zip(&x).map(|(a, b)| a - b).collect();
            let dn = crate::util::norm2(&delta);
            let fc = f(&cand);
            if fc <= fx + crate::util::dot(&g, &delta) + dn * dn / (2.0 * step) {
                x = cand;
                fx = fc;
                break;
            }
            step *= 0.5;
        }
        step = (step * 1.5).min(1e6);
    }
    let g = grad(&x);
    let pg = pg_of(&x, &g);
    DescentResult { x: x.clone(), value: fx, pg_norm: pg, converged: pg <= tol, iters: max_iters }
}
