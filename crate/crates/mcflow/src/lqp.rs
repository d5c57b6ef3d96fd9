//! High-accuracy composite l_{q,p} regression by iterative refinement over
//! block oracles.
//!
//! The energy is psi(X) + lambda * sum_i (sum_j |X_ij|^q)^p over a matrix
//! whose columns live in per-block feasible sets. Each refinement round
//! builds a residual problem at the current iterate whose value sandwiches
//! the true energy change, then runs one sequential pass of block
//! minimizations; every block is solved by a single oracle query whose
//! per-coordinate costs are assembled from the residual coefficients and the
//! nonseparable weight accumulated over the blocks already visited.

use crate::cost::{gamma_q, ScalarCost};
use crate::error::SolveError;
use crate::model::{ColMat, NormParams};
use crate::sco::{sco_query, FlowBlock, ScoQuery};
use crate::util::{golden_min, powi};

/// Box-constrained column with separable standing costs. Standing costs must
/// be finite on the box; the bounds themselves express the domain.
#[derive(Debug, Clone)]
pub struct BoxBlock {
    lo: Vec<f64>,
    hi: Vec<f64>,
    psi: Vec<ScalarCost>,
}

fn contains_indicator(cost: &ScalarCost) -> bool {
    match cost {
        ScalarCost::BoxIndicator { .. } => true,
        ScalarCost::Sum(parts) => parts.iter().any(contains_indicator),
        ScalarCost::MinSplit { c1, c2, .. } => contains_indicator(c1) || contains_indicator(c2),
        _ => false,
    }
}

impl BoxBlock {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, psi: Vec<ScalarCost>) -> Result<Self, SolveError> {
        if lo.is_empty() || lo.len() != hi.len() || lo.len() != psi.len() {
            return Err(SolveError::invalid(
                "box block needs matching nonempty bounds and standing costs",
            ));
        }
        for (l, h) in lo.iter().zip(&hi) {
            if !(l <= h) || !l.is_finite() || !h.is_finite() {
                return Err(SolveError::invalid("box block bounds must be finite and ordered"));
            }
        }
        for c in &psi {
            c.validate()?;
            if contains_indicator(c) {
                return Err(SolveError::invalid(
                    "box block standing costs must be finite; constrain via the bounds",
                ));
            }
        }
        Ok(BoxBlock { lo, hi, psi })
    }

    pub fn bounds(&self) -> (&[f64], &[f64]) {
        (&self.lo, &self.hi)
    }

    /// Coordinates separate, so each is one golden-section minimization.
    fn query(&self, costs: &[ScalarCost]) -> Result<Vec<f64>, SolveError> {
        if costs.len() != self.lo.len() {
            return Err(SolveError::invalid("one query cost per coordinate required"));
        }
        let mut out = Vec::with_capacity(self.lo.len());
        for i in 0..self.lo.len() {
            let (x, _) = golden_min(
                |v| self.psi[i].eval(v) + costs[i].eval(v),
                self.lo[i],
                self.hi[i],
                220,
            );
            out.push(x);
        }
        Ok(out)
    }

    fn psi_value(&self, coords: &[f64]) -> f64 {
        self.psi.iter().zip(coords).map(|(c, &v)| c.eval(v)).sum()
    }
}

/// One column domain plus its minimization oracle. Flow blocks expose their
/// coordinates in normalized units: edge flows divided by capacity, then the
/// scale coordinate eta * beta.
#[derive(Debug)]
pub enum Block {
    Box(BoxBlock),
    Flow(FlowBlock),
}

impl Block {
    pub fn dim(&self) -> usize {
        match self {
            Block::Box(b) => b.lo.len(),
            Block::Flow(f) => f.num_edges() + 1,
        }
    }

    pub fn as_flow(&self) -> Option<&FlowBlock> {
        match self {
            Block::Flow(f) => Some(f),
            Block::Box(_) => None,
        }
    }

    /// min over the block of psi + sum_i costs[i](x_i), returned as the
    /// argmin coordinate vector.
    fn query(&self, costs: &[ScalarCost], delta: f64) -> Result<Vec<f64>, SolveError> {
        match self {
            Block::Box(b) => b.query(costs),
            Block::Flow(f) => {
                let sol = sco_query(f, &ScoQuery { costs: costs.to_vec(), delta })?;
                let mut coords: Vec<f64> = sol
                    .flow
                    .iter()
                    .zip(f.capacities())
                    .map(|(&fl, &u)| fl / u)
                    .collect();
                coords.push(f.eta() * sol.beta);
                Ok(coords)
            }
        }
    }

    fn psi_value(&self, coords: &[f64]) -> f64 {
        match self {
            Block::Box(b) => b.psi_value(coords),
            Block::Flow(f) => {
                let m = f.num_edges();
                let raw: Vec<f64> =
                    coords[..m].iter().zip(f.capacities()).map(|(&v, &u)| v * u).collect();
                f.standing_cost(&raw, coords[m] / f.eta())
            }
        }
    }
}

/// Composite regression instance: k block domains sharing a coordinate
/// count, the norm weight, the norm exponents, and the per-query oracle
/// accuracy.
pub struct LqpProblem {
    blocks: Vec<Block>,
    lambda: f64,
    params: NormParams,
    delta_sco: f64,
}

impl LqpProblem {
    pub fn new(
        blocks: Vec<Block>,
        lambda: f64,
        params: NormParams,
        delta_sco: f64,
    ) -> Result<Self, SolveError> {
        if blocks.is_empty() {
            return Err(SolveError::invalid("at least one block required"));
        }
        let m = blocks[0].dim();
        if blocks.iter().any(|b| b.dim() != m) {
            return Err(SolveError::invalid("all blocks must share one coordinate count"));
        }
        // The analysis assumes the norm weight is within a modest scale of
        // the standing costs; wildly scaled weights void the guarantees.
        if !(lambda >= 1e-9 && lambda <= 1e9) {
            return Err(SolveError::invalid("norm weight must lie in [1e-9, 1e9]"));
        }
        if !(delta_sco > 0.0) || !delta_sco.is_finite() {
            return Err(SolveError::invalid("oracle accuracy must be positive and finite"));
        }
        Ok(LqpProblem { blocks, lambda, params, delta_sco })
    }

    pub fn rows(&self) -> usize {
        self.blocks[0].dim()
    }

    pub fn cols(&self) -> usize {
        self.blocks.len()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn params(&self) -> &NormParams {
        &self.params
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn delta_sco(&self) -> f64 {
        self.delta_sco
    }

    /// psi(X) + lambda * sum_i (sum_j |X_ij|^q)^p.
    pub fn energy(&self, x: &ColMat) -> f64 {
        let psi: f64 =
            self.blocks.iter().zip(&x.cols).map(|(b, col)| b.psi_value(col)).sum();
        let mut norm = 0.0;
        for i in 0..x.m {
            let row: f64 = x.cols.iter().map(|c| c[i].abs().powf(self.params.q)).sum();
            norm += powi(row, self.params.p);
        }
        psi + self.lambda * norm
    }
}

/// Second-order surrogate of the energy around a base point. Minimizing it
/// over displacements recovers a fixed fraction of the possible energy
/// decrease; its value at zero is zero.
pub struct ResidualProblem {
    pub base: ColMat,
    pub g: ColMat,
    pub h: ColMat,
    /// Weight of the nonseparable row coupling, 64^p * lambda.
    pub nonsep: f64,
    pub params: NormParams,
}

pub fn build_residual(x: &ColMat, prob: &LqpProblem) -> ResidualProblem {
    let (m, k) = (x.m, x.k());
    let params = *prob.params();
    let (p, q) = (params.p, params.q);
    let mut g = ColMat::zeros(m, k);
    let mut h = ColMat::zeros(m, k);
    for i in 0..m {
        let row: f64 = x.cols.iter().map(|c| c[i].abs().powf(q)).sum();
        let rp = powi(row, p - 1);
        for j in 0..k {
            let v = x.at(i, j);
            *g.at_mut(i, j) =
                prob.lambda * p as f64 * q * rp * v.abs().powf(q - 1.0) * v.signum();
            *h.at_mut(i, j) = 200.0 * prob.lambda * rp;
        }
    }
    ResidualProblem {
        base: x.clone(),
        g,
        h,
        nonsep: powi(64.0, prob.params.p) * prob.lambda,
        params,
    }
}

impl ResidualProblem {
    /// psi(X+D) - psi(X) + sum_ij [g_ij D_ij + h_ij gamma_q(p D_ij; |X_ij|)]
    /// + nonsep * sum_i (sum_j gamma_q(p D_ij; |X_ij|))^p.
    pub fn value(&self, prob: &LqpProblem, delta: &ColMat) -> f64 {
        let (m, k) = (self.base.m, self.base.k());
        let pf = self.params.p as f64;
        let mut total = 0.0;
        for j in 0..k {
            let moved: Vec<f64> =
                self.base.cols[j].iter().zip(&delta.cols[j]).map(|(a, b)| a + b).collect();
            total += prob.blocks[j].psi_value(&moved) - prob.blocks[j].psi_value(&self.base.cols[j]);
        }
        for i in 0..m {
            let mut gam = 0.0;
            for j in 0..k {
                let d = delta.at(i, j);
                let f = self.base.at(i, j).abs();
                let g_term = gamma_q(pf * d, f, self.params.q);
                total += self.g.at(i, j) * d + self.h.at(i, j) * g_term;
                gam += g_term;
            }
            total += self.nonsep * powi(gam, self.params.p);
        }
        total
    }
}

/// cost(v) evaluated at v - b; a point split carries the shift.
fn shifted(cost: ScalarCost, b: f64) -> ScalarCost {
    if b == 0.0 {
        cost
    } else {
        ScalarCost::MinSplit {
            c1: Box::new(ScalarCost::Zero),
            c2: Box::new(cost),
            theta_lo: b,
            theta_hi: b,
        }
    }
}

/// Per-coordinate oracle costs for block j of the residual subproblem, given
/// the accumulated nonseparable weights w.
fn coordinate_costs(r: &ResidualProblem, j: usize, w: &[f64]) -> Vec<ScalarCost> {
    let m = r.base.m;
    let (p, q) = (r.params.p, r.params.q);
    let s = p as f64;
    let mut out = Vec::with_capacity(m);
    for i in 0..m {
        let b = r.base.at(i, j);
        let f = b.abs();
        let mut parts = Vec::with_capacity(3);
        let g = r.g.at(i, j);
        if g != 0.0 {
            parts.push(ScalarCost::Linear { a: g });
        }
        let h = r.h.at(i, j);
        if h > 0.0 {
            parts.push(shifted(
                ScalarCost::GammaPow { q, f, w1: h, w2: 0.0, s, p_exp: 1 },
                b,
            ));
        }
        // lambda * (w_i + 64 gamma)^p, folded as 64^p lambda (w_i/64 + gamma)^p.
        parts.push(shifted(
            ScalarCost::GammaPow { q, f, w1: r.nonsep, w2: w[i] / 64.0, s, p_exp: p as u32 },
            b,
        ));
        out.push(ScalarCost::Sum(parts));
    }
    out
}

/// One sequential pass over the blocks; returns half the assembled
/// displacement, which keeps the updated point feasible and is the step the
/// contraction guarantee is stated for.
pub fn block_minimization(
    r: &ResidualProblem,
    prob: &LqpProblem,
) -> Result<ColMat, SolveError> {
    let (m, k) = (r.base.m, r.base.k());
    let pf = r.params.p as f64;
    let mut w = vec![0.0; m];
    let mut delta = ColMat::zeros(m, k);
    for j in 0..k {
        let costs = coordinate_costs(r, j, &w);
        let coords = prob.blocks[j].query(&costs, prob.delta_sco)?;
        for i in 0..m {
            let d = coords[i] - r.base.at(i, j);
            *delta.at_mut(i, j) = d;
            let inc = 64.0 * gamma_q(pf * d, r.base.at(i, j).abs(), r.params.q);
            assert!(inc >= 0.0, "nonseparable weight must be nondecreasing");
            w[i] += inc;
        }
    }
    for col in &mut delta.cols {
        for v in col {
            *v *= 0.5;
        }
    }
    Ok(delta)
}

/// Feasible start: per block, minimize psi plus the pure pq-th power of
/// every coordinate.
pub fn initial_point(prob: &LqpProblem) -> Result<ColMat, SolveError> {
    let m = prob.rows();
    let costs =
        vec![ScalarCost::Power { w: 1.0, p_exp: (prob.params.p + 1) as u32 }; m];
    let mut cols = Vec::with_capacity(prob.cols());
    for b in prob.blocks() {
        cols.push(b.query(&costs, prob.delta_sco)?);
    }
    Ok(ColMat::from_cols(cols))
}

/// Refinement outcome. `certified` records whether the final residual pass
/// proved near-optimality; hitting the iteration caps returns the best
/// iterate uncertified instead of failing.
pub struct Refined {
    pub x: ColMat,
    pub energy: f64,
    pub iterations: usize,
    pub certified: bool,
    /// Energy after the start point and after each applied step.
    pub energy_trace: Vec<f64>,
}

/// Iteration budget from the contraction rate and the initial gap bound.
fn iteration_budget(params: &NormParams, k: usize, e0: f64, delta: f64) -> f64 {
    let p = params.p as f64;
    let omega = (6400.0 * p.powf(params.q) / (params.q - 1.0)).powf(1.0 / (params.q - 1.0));
    let digits = p * (k as f64).log2() + ((1.0 + e0.abs()) / delta).log2();
    (200.0 * p * omega * digits.max(1.0)).ceil()
}

/// Runs refinement until the residual passes certify, through their
/// geometric decay, that less than delta/3 of energy remains reachable,
/// then reports the best iterate seen.
pub fn iterative_refinement(prob: &LqpProblem, delta: f64) -> Result<Refined, SolveError> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(SolveError::invalid("target accuracy must be positive and finite"));
    }
    let k = prob.cols();
    if prob.delta_sco > delta / (3.0 * k as f64) {
        return Err(SolveError::invalid(
            "oracle accuracy must be at most delta / (3k) for the target accuracy",
        ));
    }
    let mut x = initial_point(prob)?;
    let mut best_e = prob.energy(&x);
    let mut best = x.clone();
    let mut trace = vec![best_e];
    let budget = iteration_budget(prob.params(), k, best_e, delta);
    // The formula budget is astronomically loose; a hard cap keeps a stuck
    // run finite and reports it as uncertified rather than spinning.
    let hard_cap = 100_000usize;
    let mut iterations = 0usize;
    let mut certified = false;
    let mut prev_rv: Option<f64> = None;
    while (iterations as f64) < budget && iterations < hard_cap {
        let residual = build_residual(&x, prob);
        let step = block_minimization(&residual, prob)?;
        let rv = residual.value(prob, &step);
        // The residual value upper-bounds the step's energy change but only
        // captures a 1/(200p) fraction of the attainable decrease, so the
        // bare threshold would quit roughly 200p times short of the target.
        // Residual values decay geometrically near the fixed point; the
        // measured ratio turns the current value into a remaining-gap
        // estimate, and a factor 2 covers the value-to-change slack. Below
        // measurement noise no further progress is resolvable.
        let noise_floor = 1e-13 * (1.0 + best_e.abs());
        let tail_done = prev_rv.is_some_and(|p| {
            let ratio = (rv / p).clamp(0.0, 1.0 - 1e-9);
            2.0 * rv.abs() / (1.0 - ratio) <= delta / 3.0
        });
        if rv >= -noise_floor || tail_done {
            certified = true;
            break;
        }
        prev_rv = Some(rv);
        for (xc, sc) in x.cols.iter_mut().zip(&step.cols) {
            for (xv, sv) in xc.iter_mut().zip(sc) {
                *xv += sv;
            }
        }
        iterations += 1;
        let e = prob.energy(&x);
        trace.push(e);
        if e < best_e {
            best_e = e;
            best = x.clone();
        }
    }
    Ok(Refined { x: best, energy: best_e, iterations, certified, energy_trace: trace })
}
