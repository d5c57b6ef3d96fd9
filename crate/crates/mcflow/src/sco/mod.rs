//! Single-commodity convex flow behind the oracle interface the regression
//! layers call into.
//!
//! A [`FlowBlock`] freezes the combinatorics: a directed graph with
//! capacities, an integer demand direction `d`, a scale range with grid
//! pitch `eta`, and standing costs on the edges and on the scale.
//! [`sco_query`] answers repeated cost perturbations against it, picking a
//! scale `beta` on the eta-grid and a flow routing `beta * d` inside the
//! capacities, with the combined objective certified to additive accuracy
//! `delta`. Query costs arrive in normalized coordinates (`f_e / u_e` on
//! edges, `eta * beta` on the scale) so callers can work in a common box.
//!
//! [`solve_convex_flow`] is the fixed-demand core without the outer scale,
//! and [`build_gadget`] exposes the single-edge rewrite that turns a split
//! cost into box-and-smooth legs.

mod expand;
mod feas;
mod newton;

pub(crate) use expand::scale_arg;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::cost::ScalarCost;
use crate::error::SolveError;

/// Tikhonov weight added while comparing scales. Keeps each per-scale
/// minimizer unique so the scan is deterministic; the certificate of every
/// inner solve accounts for it.
const MU_REG: f64 = 1e-10;

/// Fixed-demand instance: route `demand` through edges whose flows live in
/// `[0, cap]`, minimizing the sum of per-edge costs.
#[derive(Debug, Clone)]
pub struct FlowProblem {
    pub n: usize,
    pub tails: Vec<usize>,
    pub heads: Vec<usize>,
    pub cap: Vec<f64>,
    pub cost: Vec<ScalarCost>,
    pub demand: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FlowSolution {
    pub flow: Vec<f64>,
    pub objective: f64,
    /// Additive bound on `objective` minus the true minimum, read off the
    /// interior-point duality gap.
    pub certified_gap: f64,
    pub newton_steps: usize,
}

fn check_graph(n: usize, tails: &[usize], heads: &[usize], cap: &[f64]) -> Result<(), SolveError> {
    if tails.len() != heads.len() || tails.len() != cap.len() {
        return Err(SolveError::invalid("edge arrays must have equal length"));
    }
    if tails.iter().chain(heads).any(|&v| v >= n) {
        return Err(SolveError::invalid("edge endpoint out of range"));
    }
    if cap.iter().any(|u| !u.is_finite() || *u <= 0.0) {
        return Err(SolveError::invalid("capacities must be positive and finite"));
    }
    Ok(())
}

fn check_delta(delta: f64) -> Result<(), SolveError> {
    if !delta.is_finite() || delta <= 0.0 {
        return Err(SolveError::invalid("accuracy delta must be positive and finite"));
    }
    Ok(())
}

/// Minimizes the instance cost over flows with the prescribed imbalance,
/// certifying the objective to additive accuracy `delta`. Infeasible
/// demands come back as [`SolveError::Infeasible`] with a violated cut in
/// the message.
pub fn solve_convex_flow(p: &FlowProblem, delta: f64) -> Result<FlowSolution, SolveError> {
    check_delta(delta)?;
    check_graph(p.n, &p.tails, &p.heads, &p.cap)?;
    if p.cost.len() != p.tails.len() {
        return Err(SolveError::invalid("one cost per edge required"));
    }
    if p.demand.len() != p.n {
        return Err(SolveError::invalid("demand length must match vertex count"));
    }
    let dmax = p.demand.iter().fold(0.0f64, |a, d| a.max(d.abs()));
    if p.demand.iter().sum::<f64>().abs() > 1e-9 * (1.0 + dmax) {
        return Err(SolveError::invalid("demand must sum to zero"));
    }
    for c in &p.cost {
        c.validate()?;
    }
    let ex = expand::expand(p.n, &p.tails, &p.heads, &p.cap, &p.cost, &p.demand)?;
    let sol = newton::solve_core(&ex, 0.0, delta)?;
    let flow = ex.through.iter().map(|&i| sol.flow[i]).collect();
    Ok(FlowSolution {
        flow,
        objective: sol.objective,
        certified_gap: sol.certified_gap,
        newton_steps: sol.newton_steps,
    })
}

/// Frozen combinatorics plus standing costs for a stream of scale-coupled
/// queries.
///
/// Construction proves the demand direction routable at the low end of the
/// scale range. Routability is monotone decreasing in the scale (a feasible
/// flow scales down inside `[0, cap]`), so queries only have to locate the
/// upper frontier.
#[derive(Debug)]
pub struct FlowBlock {
    n: usize,
    tails: Vec<usize>,
    heads: Vec<usize>,
    cap: Vec<f64>,
    demand: Vec<i64>,
    r_lo: f64,
    r_hi: f64,
    eta: f64,
    psi_beta: ScalarCost,
    psi_edges: Vec<ScalarCost>,
    queries: AtomicU64,
}

impl Clone for FlowBlock {
    fn clone(&self) -> Self {
        FlowBlock {
            n: self.n,
            tails: self.tails.clone(),
            heads: self.heads.clone(),
            cap: self.cap.clone(),
            demand: self.demand.clone(),
            r_lo: self.r_lo,
            r_hi: self.r_hi,
            eta: self.eta,
            psi_beta: self.psi_beta.clone(),
            psi_edges: self.psi_edges.clone(),
            queries: AtomicU64::new(self.queries.load(Ordering::Relaxed)),
        }
    }
}

impl FlowBlock {
    /// `psi_beta` is a standing cost on the scale in natural units;
    /// `psi_edges` are standing costs on raw edge flows. Fails when the
    /// demand direction is not routable at `beta_range.0`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n: usize,
        tails: Vec<usize>,
        heads: Vec<usize>,
        cap: Vec<f64>,
        demand: Vec<i64>,
        beta_range: (f64, f64),
        eta: f64,
        psi_beta: ScalarCost,
        psi_edges: Vec<ScalarCost>,
    ) -> Result<Self, SolveError> {
        check_graph(n, &tails, &heads, &cap)?;
        if demand.len() != n {
            return Err(SolveError::invalid("demand length must match vertex count"));
        }
        if demand.iter().sum::<i64>() != 0 {
            return Err(SolveError::invalid("demand must sum to zero"));
        }
        if demand.iter().all(|&d| d == 0) {
            return Err(SolveError::invalid("demand direction must be nonzero"));
        }
        let (r_lo, r_hi) = beta_range;
        if !(r_lo >= 0.0 && r_lo <= r_hi) || !r_hi.is_finite() {
            return Err(SolveError::invalid("scale range needs 0 <= r_lo <= r_hi, finite"));
        }
        if !eta.is_finite() || eta <= 0.0 {
            return Err(SolveError::invalid("grid pitch eta must be positive and finite"));
        }
        psi_beta.validate()?;
        if psi_edges.len() != tails.len() {
            return Err(SolveError::invalid("one standing cost per edge required"));
        }
        for c in &psi_edges {
            c.validate()?;
        }
        let block = FlowBlock {
            n,
            tails,
            heads,
            cap,
            demand,
            r_lo,
            r_hi,
            eta,
            psi_beta,
            psi_edges,
            queries: AtomicU64::new(0),
        };
        feas::feasible_flow(block.n, &block.intervals(), &block.scaled_demand(block.r_lo))?;
        Ok(block)
    }

    fn intervals(&self) -> Vec<(usize, usize, f64, f64)> {
        (0..self.tails.len())
            .map(|e| (self.tails[e], self.heads[e], 0.0, self.cap[e]))
            .collect()
    }

    fn scaled_demand(&self, beta: f64) -> Vec<f64> {
        self.demand.iter().map(|&d| beta * d as f64).collect()
    }

    pub fn num_vertices(&self) -> usize {
        self.n
    }

    pub fn num_edges(&self) -> usize {
        self.tails.len()
    }

    pub fn capacities(&self) -> &[f64] {
        &self.cap
    }

    pub fn demand_direction(&self) -> &[i64] {
        &self.demand
    }

    pub fn beta_range(&self) -> (f64, f64) {
        (self.r_lo, self.r_hi)
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Queries answered (or attempted past validation) so far.
    pub fn query_count(&self) -> u64 {
        self.queries.load(Ordering::Relaxed)
    }

    /// Standing cost alone at a raw routing and scale.
    pub fn standing_cost(&self, flow: &[f64], beta: f64) -> f64 {
        let edges: f64 = self.psi_edges.iter().zip(flow).map(|(c, &f)| c.eval(f)).sum();
        edges + self.psi_beta.eval(beta)
    }

    /// Copy of this block with extra standing costs merged in: `extra[e]`
    /// on raw edge flow for `e < m`, `extra[m]` on the raw scale. Costs
    /// must stay convex on the block's domain; the query counter resets.
    pub fn with_added_costs(&self, extra: &[ScalarCost]) -> Result<FlowBlock, SolveError> {
        if extra.len() != self.num_edges() + 1 {
            return Err(SolveError::invalid("expected one extra cost per edge plus the scale"));
        }
        extra.iter().try_for_each(|c| c.validate())?;
        let merge = |base: &ScalarCost, add: &ScalarCost| match add {
            ScalarCost::Zero => base.clone(),
            _ => ScalarCost::Sum(vec![base.clone(), add.clone()]),
        };
        let mut block = self.clone();
        block.queries = AtomicU64::new(0);
        block.psi_edges =
            self.psi_edges.iter().zip(&extra[..self.num_edges()]).map(|(b, a)| merge(b, a)).collect();
        block.psi_beta = merge(&self.psi_beta, &extra[self.num_edges()]);
        Ok(block)
    }
}

/// One oracle call: extra costs in normalized coordinates plus the accuracy
/// to certify. `costs[e]` applies to `f_e / u_e` for `e < m`; `costs[m]`
/// applies to `eta * beta`.
#[derive(Debug, Clone)]
pub struct ScoQuery {
    pub costs: Vec<ScalarCost>,
    pub delta: f64,
}

/// Scale plus routing returned by the scale-coupled solvers.
#[derive(Debug, Clone)]
pub struct BetaSolution {
    pub flow: Vec<f64>,
    pub beta: f64,
    /// Standing plus query cost at `(flow, beta)`, within `delta` of the
    /// best grid scale.
    pub objective: f64,
}

/// Vertices of the single-edge rewrite produced by [`build_gadget`].
/// `Tail` and `Head` splice onto the original endpoints; the plus vertices
/// are fresh.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GadgetNode {
    Tail,
    PlusA,
    PlusB,
    Head,
}

/// One rewritten edge; the cost applies to `flow + shift`.
#[derive(Debug, Clone)]
pub struct GadgetEdge {
    pub from: GadgetNode,
    pub to: GadgetNode,
    pub cap: f64,
    pub cost: ScalarCost,
    pub shift: f64,
}

/// Replacement subgraph for one split-cost edge: rewritten edges, demands
/// to inject at the fresh vertices, and a constant cost offset.
#[derive(Debug, Clone)]
pub struct GadgetFragment {
    pub edges: Vec<GadgetEdge>,
    pub demand_plus_a: f64,
    pub demand_plus_b: f64,
    pub constant: f64,
}

/// Rewrites a split cost `min { c1(a) + c2(b) : a + b = x, a in [t_lo, t_hi] }`
/// on an edge of capacity `cap` into parallel legs with plain interval
/// bounds. Flow x through the fragment divides at `PlusA`: the leg of width
/// `t_hi - t_lo` sees `a = leg flow + t_lo`, the other leg sees
/// `b = leg flow - t_hi`, and the injected demands reconcile the two
/// parametrizations. A point interval needs no fresh demand and degenerates
/// to a two-edge path with constant `c1(t_lo)`.
pub fn build_gadget(cap: f64, cost: &ScalarCost) -> Result<GadgetFragment, SolveError> {
    if !cap.is_finite() || cap <= 0.0 {
        return Err(SolveError::invalid("capacity must be positive and finite"));
    }
    cost.validate()?;
    let ScalarCost::MinSplit { c1, c2, theta_lo, theta_hi } = cost else {
        return Err(SolveError::invalid("gadget rewriting applies to split costs"));
    };
    if *theta_hi > cap {
        return Err(SolveError::invalid("split interval must fit under the capacity"));
    }
    use GadgetNode::*;
    if theta_lo == theta_hi {
        return Ok(GadgetFragment {
            edges: vec![
                GadgetEdge { from: Tail, to: PlusA, cap, cost: ScalarCost::Zero, shift: 0.0 },
                GadgetEdge {
                    from: PlusA,
                    to: Head,
                    cap,
                    cost: (**c2).clone(),
                    shift: -theta_hi,
                },
            ],
            demand_plus_a: 0.0,
            demand_plus_b: 0.0,
            constant: c1.eval(*theta_lo),
        });
    }
    let width = theta_hi - theta_lo;
    Ok(GadgetFragment {
        edges: vec![
            GadgetEdge { from: Tail, to: PlusA, cap, cost: ScalarCost::Zero, shift: 0.0 },
            GadgetEdge {
                from: PlusA,
                to: PlusB,
                cap: width,
                cost: (**c1).clone(),
                shift: *theta_lo,
            },
            GadgetEdge {
                from: PlusA,
                to: PlusB,
                cap: cap - theta_lo + theta_hi,
                cost: (**c2).clone(),
                shift: -theta_hi,
            },
            GadgetEdge { from: PlusB, to: Head, cap, cost: ScalarCost::Zero, shift: 0.0 },
        ],
        demand_plus_a: width,
        demand_plus_b: -width,
        constant: 0.0,
    })
}

/// Minimizes `psi_beta(beta) + sum_e psi_e(f_e)` over scales on the block's
/// eta-grid and flows routing `beta * d`, certifying the objective to
/// within `delta` of the best grid scale.
pub fn solve_with_beta(block: &FlowBlock, delta: f64) -> Result<BetaSolution, SolveError> {
    check_delta(delta)?;
    let plan = BetaProblem {
        block,
        edge_costs: block.psi_edges.clone(),
        beta_cost: block.psi_beta.clone(),
        constant: 0.0,
    };
    beta_search(&plan, delta)
}

/// Answers one query against the block: rewrites the normalized query costs
/// into flow units, folds them onto the standing costs, and runs the scale
/// scan. Bumps the block's query counter once per call that passes
/// validation.
pub fn sco_query(block: &FlowBlock, query: &ScoQuery) -> Result<BetaSolution, SolveError> {
    let m = block.num_edges();
    if query.costs.len() != m + 1 {
        return Err(SolveError::invalid("query needs one cost per edge plus one for the scale"));
    }
    check_delta(query.delta)?;
    for c in &query.costs {
        c.validate()?;
    }
    block.queries.fetch_add(1, Ordering::Relaxed);
    let mut constant = 0.0;
    let mut edge_costs = Vec::with_capacity(m);
    for e in 0..m {
        let (scaled, k) = scale_arg(&query.costs[e], 1.0 / block.cap[e])?;
        constant += k;
        edge_costs.push(combine(block.psi_edges[e].clone(), scaled));
    }
    let (scaled, k) = scale_arg(&query.costs[m], block.eta)?;
    constant += k;
    let beta_cost = combine(block.psi_beta.clone(), scaled);
    let plan = BetaProblem { block, edge_costs, beta_cost, constant };
    beta_search(&plan, query.delta)
}

fn combine(a: ScalarCost, b: ScalarCost) -> ScalarCost {
    let mut parts = Vec::new();
    for c in [a, b] {
        match c {
            ScalarCost::Zero => {}
            ScalarCost::Sum(inner) => parts.extend(inner),
            other => parts.push(other),
        }
    }
    match parts.len() {
        0 => ScalarCost::Zero,
        1 => parts.pop().unwrap(),
        _ => ScalarCost::Sum(parts),
    }
}

/// Splits top-level box indicators off a scale cost so the scan treats them
/// as range constraints instead of infinite objective values.
fn split_box(cost: ScalarCost) -> (ScalarCost, f64, f64) {
    match cost {
        ScalarCost::BoxIndicator { lo, hi } => (ScalarCost::Zero, lo, hi),
        ScalarCost::Sum(parts) => {
            let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
            let mut kept = Vec::new();
            for c in parts {
                let (c, l, h) = split_box(c);
                lo = lo.max(l);
                hi = hi.min(h);
                if !matches!(c, ScalarCost::Zero) {
                    kept.push(c);
                }
            }
            let cost = match kept.len() {
                0 => ScalarCost::Zero,
                1 => kept.pop().unwrap(),
                _ => ScalarCost::Sum(kept),
            };
            (cost, lo, hi)
        }
        other => (other, f64::NEG_INFINITY, f64::INFINITY),
    }
}

/// Standing plus query costs with the box constraints already absorbed;
/// everything the scale scan needs to price one grid point.
struct BetaProblem<'a> {
    block: &'a FlowBlock,
    /// Per-edge cost in flow units.
    edge_costs: Vec<ScalarCost>,
    /// Scale cost in beta units.
    beta_cost: ScalarCost,
    /// Offset from rewriting normalized costs into flow units.
    constant: f64,
}

impl BetaProblem<'_> {
    fn solve_at(&self, beta: f64, inner_delta: f64) -> Result<BetaSolution, SolveError> {
        let b = self.block;
        let demand = b.scaled_demand(beta);
        let ex = expand::expand(b.n, &b.tails, &b.heads, &b.cap, &self.edge_costs, &demand)?;
        let sol = newton::solve_core(&ex, MU_REG, inner_delta)?;
        let flow = ex.through.iter().map(|&i| sol.flow[i]).collect();
        let objective = self.beta_cost.eval(beta) + sol.objective + self.constant;
        Ok(BetaSolution { flow, beta, objective })
    }
}

/// Grid index of the solved scale plus its solution, memoized across the
/// ternary scan so no scale is priced twice.
type ScaleMemo = BTreeMap<i64, BetaSolution>;

fn scan_value(
    memo: &mut ScaleMemo,
    plan: &BetaProblem,
    eta: f64,
    i: i64,
    inner_delta: f64,
) -> Result<f64, SolveError> {
    if let Some(s) = memo.get(&i) {
        return Ok(s.objective);
    }
    let sol = plan.solve_at(i as f64 * eta, inner_delta)?;
    let v = sol.objective;
    memo.insert(i, sol);
    Ok(v)
}

/// Ternary scan over the eta-grid. The scale objective is convex (a convex
/// cost plus the value function of a convex program), so comparing two
/// interior grid points discards one flank; keeping the compared points
/// inside the retained interval makes the scan safe against the additive
/// solve error, at the price of a 2/3 shrink factor. The returned objective
/// is exact at the returned point, so the final candidate sweep only ever
/// improves the answer.
fn beta_search(plan: &BetaProblem, delta: f64) -> Result<BetaSolution, SolveError> {
    let b = plan.block;
    let (beta_cost, box_lo, box_hi) = split_box(plan.beta_cost.clone());
    let plan = BetaProblem {
        block: b,
        edge_costs: plan.edge_costs.clone(),
        beta_cost,
        constant: plan.constant,
    };
    let r_lo = b.r_lo.max(box_lo);
    let r_hi = b.r_hi.min(box_hi);
    if r_lo > r_hi {
        return Err(SolveError::Infeasible("scale range is empty under the query box".into()));
    }
    // A pinned range is answered exactly at the pin, grid or not.
    if r_lo == r_hi {
        return plan.solve_at(r_lo, delta);
    }

    let dir: Vec<f64> = b.demand.iter().map(|&d| d as f64).collect();
    let tol = (0.25 * b.eta).min(r_hi - r_lo).max(1e-12 * (1.0 + r_hi));
    let Some(frontier) = feas::max_feasible_scale(b.n, &b.intervals(), &dir, r_lo, r_hi, tol)
    else {
        return Err(SolveError::Infeasible("demand is not routable at the low scale end".into()));
    };

    let snap = |x: f64| x / b.eta;
    if snap(r_hi) > 1e15 {
        return Err(SolveError::invalid("scale grid too fine for the range"));
    }
    let ilo = (snap(r_lo) - 1e-9 * (1.0 + snap(r_lo).abs())).ceil() as i64;
    let ihi = {
        let f = snap(frontier) + 1e-9 * (1.0 + snap(frontier).abs());
        (f.floor() as i64).min((snap(r_hi) + 1e-9 * (1.0 + snap(r_hi).abs())).floor() as i64)
    };
    if ihi < ilo {
        // The grid misses the admissible interval entirely; degrade to its
        // feasible low end rather than leave the range.
        return plan.solve_at(r_lo, delta);
    }

    let gamma = delta / 8.0;
    let inner_delta = delta / 8.0;
    let mut memo: ScaleMemo = BTreeMap::new();

    // Crude Lipschitz bound for the iteration budget: scale cost slope plus
    // edge cost slopes times the demand volume.
    let mut lip = 1.0f64;
    for &t in &[r_lo, 0.5 * (r_lo + r_hi), r_hi] {
        let d = plan.beta_cost.deriv1(t);
        if d.is_finite() {
            lip = lip.max(d.abs());
        }
    }
    let volume: f64 = b.demand.iter().map(|&d| (d as f64).abs()).sum();
    let mut slope = 0.0f64;
    for (c, &u) in plan.edge_costs.iter().zip(&b.cap) {
        for &x in &[1e-3 * u, 0.5 * u, (1.0 - 1e-3) * u] {
            let d = c.deriv1(x);
            if d.is_finite() {
                slope = slope.max(d.abs());
            }
        }
    }
    lip += volume * slope;
    let range = (ihi - ilo) as f64 * b.eta;
    let budget = (((range * lip / gamma).max(2.0)).ln() / 1.5f64.ln()).ceil() as i64;
    let budget = budget.clamp(8, 200);

    let (mut a, mut c) = (ilo, ihi);
    let mut spent = 0i64;
    while c - a > 2 && spent < budget {
        let third = ((c - a) / 3).max(1);
        let m1 = a + third;
        let m2 = c - third;
        let v1 = scan_value(&mut memo, &plan, b.eta, m1, inner_delta)?;
        let v2 = scan_value(&mut memo, &plan, b.eta, m2, inner_delta)?;
        if v1 <= v2 {
            c = m2;
        } else {
            a = m1;
        }
        spent += 1;
    }
    let final_span: Vec<i64> = if c - a <= 64 {
        (a..=c).collect()
    } else {
        vec![a, (a + c) / 2, c]
    };
    for i in final_span {
        scan_value(&mut memo, &plan, b.eta, i, inner_delta)?;
    }
    let mut best = *memo
        .iter()
        .min_by(|x, y| x.1.objective.total_cmp(&y.1.objective).then(x.0.cmp(y.0)))
        .expect("scan evaluated at least one scale")
        .0;
    // Guard the incumbent against an off-by-one from solve noise.
    for i in [best - 1, best + 1] {
        if (ilo..=ihi).contains(&i) {
            scan_value(&mut memo, &plan, b.eta, i, inner_delta)?;
        }
    }
    best = *memo
        .iter()
        .min_by(|x, y| x.1.objective.total_cmp(&y.1.objective).then(x.0.cmp(y.0)))
        .expect("scan evaluated at least one scale")
        .0;
    Ok(memo.remove(&best).unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference::{grid_minimize, rat, rat_to_f64, LpModel, LpOutcome, Rel};
    use num_rational::BigRational;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use ScalarCost::*;

    fn quad(a: f64) -> ScalarCost {
        Quadratic { a }
    }

    fn lin(a: f64) -> ScalarCost {
        Linear { a }
    }

    /// Cheapest way to push `x` through a fragment, by scanning the split
    /// between the two parallel legs. Used as the gadget ground truth.
    fn route_cost(frag: &GadgetFragment, x: f64) -> f64 {
        if frag.edges.len() == 2 {
            let e = &frag.edges[1];
            return frag.constant + e.cost.eval(x + e.shift);
        }
        let c1 = &frag.edges[1];
        let c2 = &frag.edges[2];
        let total = x + frag.demand_plus_a;
        let mut best = f64::INFINITY;
        let steps = 4000;
        for i in 0..=steps {
            let y1 = c1.cap * i as f64 / steps as f64;
            let y2 = total - y1;
            if y2 < -1e-12 || y2 > c2.cap + 1e-12 {
                continue;
            }
            let v = c1.cost.eval(y1 + c1.shift) + c2.cost.eval(y2 + c2.shift);
            if v < best {
                best = v;
            }
        }
        frag.constant + best
    }

    #[test]
    fn gadget_point_interval_degenerates_to_path() {
        let cost = MinSplit {
            c1: Box::new(quad(2.0)),
            c2: Box::new(quad(1.0)),
            theta_lo: 1.0,
            theta_hi: 1.0,
        };
        let frag = build_gadget(3.0, &cost).unwrap();
        assert_eq!(frag.edges.len(), 2);
        assert_eq!(frag.demand_plus_a, 0.0);
        assert_eq!(frag.demand_plus_b, 0.0);
        assert!((frag.constant - 2.0).abs() < 1e-12);
        for &x in &[1.0, 2.0, 2.5] {
            assert!((route_cost(&frag, x) - cost.eval(x)).abs() < 1e-9, "x={x}");
        }
    }

    #[test]
    fn gadget_width_interval_carries_both_pieces() {
        let cost = MinSplit {
            c1: Box::new(quad(1.0)),
            c2: Box::new(quad(0.25)),
            theta_lo: 0.5,
            theta_hi: 1.5,
        };
        let frag = build_gadget(2.0, &cost).unwrap();
        assert_eq!(frag.edges.len(), 4);
        assert!((frag.demand_plus_a - 1.0).abs() < 1e-12);
        assert!((frag.demand_plus_b + 1.0).abs() < 1e-12);
        assert!((frag.edges[1].cap - 1.0).abs() < 1e-12);
        assert!((frag.edges[2].cap - 3.0).abs() < 1e-12);
        // Sending exactly theta_lo keeps the second piece idle.
        assert!((route_cost(&frag, 0.5) - 0.25).abs() < 1e-6);
        for &x in &[0.0, 0.3, 1.0, 1.7, 2.0] {
            let direct = cost.eval(x);
            assert!((route_cost(&frag, x) - direct).abs() < 1e-5, "x={x}");
        }
    }

    #[test]
    fn gadget_matches_split_eval_on_random_costs() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for trial in 0..20 {
            let cap = 1.0 + 2.0 * rng.random_range(0.0..1.0);
            let t_lo = rng.random_range(0.0..0.5) * cap;
            let t_hi = t_lo + rng.random_range(0.0..1.0) * (cap - t_lo);
            let c1 = quad(rng.random_range(0.2..2.0));
            let c2 = Sum(vec![
                quad(rng.random_range(0.2..2.0)),
                lin(rng.random_range(-1.0..1.0)),
            ]);
            let cost = MinSplit {
                c1: Box::new(c1),
                c2: Box::new(c2),
                theta_lo: t_lo,
                theta_hi: t_hi,
            };
            let frag = build_gadget(cap, &cost).unwrap();
            let x = rng.random_range(0.0..1.0) * cap;
            let direct = cost.eval(x);
            let routed = route_cost(&frag, x);
            assert!(
                (routed - direct).abs() < 1e-4 * (1.0 + direct.abs()),
                "trial {trial}: routed {routed} direct {direct}"
            );
        }
    }

    #[test]
    fn gadget_rejects_misfit_costs() {
        let wide = MinSplit {
            c1: Box::new(Zero),
            c2: Box::new(Zero),
            theta_lo: 0.0,
            theta_hi: 3.0,
        };
        assert!(build_gadget(2.0, &wide).is_err());
        assert!(build_gadget(2.0, &quad(1.0)).is_err());
    }

    #[test]
    fn routes_single_edge_quadratic() {
        let p = FlowProblem {
            n: 2,
            tails: vec![0],
            heads: vec![1],
            cap: vec![2.0],
            cost: vec![quad(1.0)],
            demand: vec![1.0, -1.0],
        };
        let sol = solve_convex_flow(&p, 1e-6).unwrap();
        assert!((sol.flow[0] - 1.0).abs() < 1e-9);
        assert!((sol.objective - 1.0).abs() < 1e-9);
        assert!(sol.certified_gap < 1e-6);
    }

    #[test]
    fn splits_between_parallel_edges() {
        let p = FlowProblem {
            n: 2,
            tails: vec![0, 0],
            heads: vec![1, 1],
            cap: vec![1.0, 1.0],
            cost: vec![quad(1.0), quad(1.0)],
            demand: vec![1.0, -1.0],
        };
        let sol = solve_convex_flow(&p, 1e-7).unwrap();
        assert!((sol.flow[0] - 0.5).abs() < 1e-5);
        assert!((sol.flow[1] - 0.5).abs() < 1e-5);
        assert!((sol.objective - 0.5).abs() < 1e-7);
    }

    #[test]
    fn reports_cut_for_unroutable_demand() {
        let p = FlowProblem {
            n: 2,
            tails: vec![0],
            heads: vec![1],
            cap: vec![1.0],
            cost: vec![Zero],
            demand: vec![3.0, -3.0],
        };
        match solve_convex_flow(&p, 1e-6) {
            Err(SolveError::Infeasible(msg)) => assert!(msg.contains("cut"), "{msg}"),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    /// Two-segment costs on a random graph, refereed by an exact rational
    /// LP over segment variables. Demands come from a planted integer flow
    /// so every instance is feasible.
    fn piecewise_instance(
        rng: &mut ChaCha8Rng,
    ) -> (FlowProblem, f64) {
        let n = rng.random_range(3..=5usize);
        let mut tails: Vec<usize> = (0..n - 1).collect();
        let mut heads: Vec<usize> = (1..n).collect();
        for _ in 0..rng.random_range(1..=4usize) {
            let a = rng.random_range(0..n);
            let mut b = rng.random_range(0..n);
            while b == a {
                b = rng.random_range(0..n);
            }
            tails.push(a);
            heads.push(b);
        }
        let m = tails.len();
        let cap_i: Vec<i64> = (0..m).map(|_| rng.random_range(1..=4i64)).collect();
        let mut dem = vec![0i64; n];
        for e in 0..m {
            let g = rng.random_range(0..=cap_i[e]);
            dem[tails[e]] += g;
            dem[heads[e]] -= g;
        }
        // Slopes on the quarter grid, kinks on the half grid, s1 <= s2 so
        // the split is exactly the two-segment envelope.
        let mut s1q = Vec::new();
        let mut s2q = Vec::new();
        let mut kink2 = Vec::new();
        let mut costs = Vec::new();
        for e in 0..m {
            let a = rng.random_range(-8..=8i64);
            let b = a + rng.random_range(0..=8i64);
            let t = rng.random_range(0..=2 * cap_i[e]);
            s1q.push(a);
            s2q.push(b);
            kink2.push(t);
            let theta = t as f64 / 2.0;
            costs.push(MinSplit {
                c1: Box::new(lin(a as f64 / 4.0)),
                c2: Box::new(Sum(vec![
                    lin(b as f64 / 4.0),
                    BoxIndicator { lo: 0.0, hi: cap_i[e] as f64 - theta },
                ])),
                theta_lo: 0.0,
                theta_hi: theta,
            });
        }

        // min sum_e s1*x1 + s2*x2 with x1 <= theta, x2 <= cap - theta and
        // conservation on x1 + x2.
        let mut lp = LpModel::new(2 * m);
        let mut obj: Vec<BigRational> = Vec::with_capacity(2 * m);
        for e in 0..m {
            obj.push(rat(s1q[e]) / rat(4));
            obj.push(rat(s2q[e]) / rat(4));
        }
        lp.set_objective(obj);
        for v in 0..n {
            let mut row = Vec::new();
            for e in 0..m {
                let mut c = rat(0);
                if tails[e] == v {
                    c = c + rat(1);
                }
                if heads[e] == v {
                    c = c - rat(1);
                }
                if c != rat(0) {
                    row.push((2 * e, c.clone()));
                    row.push((2 * e + 1, c));
                }
            }
            lp.add_constraint(&row, Rel::Eq, rat(dem[v]));
        }
        for e in 0..m {
            lp.add_constraint(&[(2 * e, rat(1))], Rel::Le, rat(kink2[e]) / rat(2));
            lp.add_constraint(
                &[(2 * e + 1, rat(1))],
                Rel::Le,
                rat(cap_i[e]) - rat(kink2[e]) / rat(2),
            );
        }
        let lp_val = match lp.solve() {
            LpOutcome::Optimal(s) => rat_to_f64(&s.value),
            other => panic!("reference LP should be solvable, got {other:?}"),
        };

        let p = FlowProblem {
            n,
            tails,
            heads,
            cap: cap_i.iter().map(|&c| c as f64).collect(),
            cost: costs,
            demand: dem.iter().map(|&d| d as f64).collect(),
        };
        (p, lp_val)
    }

    #[test]
    fn piecewise_linear_flows_match_exact_lp() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for trial in 0..12 {
            let (p, lp_val) = piecewise_instance(&mut rng);
            let sol = solve_convex_flow(&p, 1e-6).unwrap();
            assert!(
                sol.objective <= lp_val + 2e-6,
                "trial {trial}: {} vs lp {lp_val}",
                sol.objective
            );
            assert!(
                sol.objective >= lp_val - 1e-6,
                "trial {trial}: {} vs lp {lp_val}",
                sol.objective
            );
            let mut im = vec![0.0; p.n];
            for e in 0..p.tails.len() {
                assert!(sol.flow[e] >= -1e-9 && sol.flow[e] <= p.cap[e] + 1e-9);
                im[p.tails[e]] += sol.flow[e];
                im[p.heads[e]] -= sol.flow[e];
            }
            let dmax = p.demand.iter().fold(0.0f64, |a, d| a.max(d.abs()));
            for v in 0..p.n {
                assert!((im[v] - p.demand[v]).abs() <= 1e-9 * (1.0 + dmax));
            }
        }
    }

    fn unit_block(psi_beta: ScalarCost, psi_edge: ScalarCost, cap: f64, eta: f64) -> FlowBlock {
        FlowBlock::new(
            2,
            vec![0],
            vec![1],
            vec![cap],
            vec![1, -1],
            (0.0, 1.0),
            eta,
            psi_beta,
            vec![psi_edge],
        )
        .unwrap()
    }

    #[test]
    fn scale_linear_reward_runs_to_capacity() {
        let block = unit_block(lin(-1.0), Zero, 1.0, 1.0 / 1024.0);
        let sol = solve_with_beta(&block, 1e-6).unwrap();
        assert!((sol.beta - 1.0).abs() < 1e-9, "beta {}", sol.beta);
        assert!((sol.flow[0] - 1.0).abs() < 1e-6);
        assert!((sol.objective + 1.0).abs() < 1e-6);
    }

    #[test]
    fn scale_quadratic_well_lands_on_grid() {
        // (beta - 0.3)^2 up to a constant; ample capacity.
        let block = unit_block(Sum(vec![quad(1.0), lin(-0.6)]), Zero, 10.0, 1e-3);
        let sol = solve_with_beta(&block, 1e-7).unwrap();
        assert!((sol.beta - 0.3).abs() <= 1.5e-3, "beta {}", sol.beta);
        let ratio = sol.beta / 1e-3;
        assert!((ratio - ratio.round()).abs() < 1e-6, "off the grid: {}", sol.beta);
    }

    #[test]
    fn scale_balances_reward_against_edge_cost() {
        let block = unit_block(quad(1.0), lin(-1.0), 1.0, 1e-4);
        let sol = solve_with_beta(&block, 1e-5).unwrap();
        let (_, brute) = grid_minimize(|x| x[0] * x[0] - x[0], &[0.0], &[1.0], 2001);
        assert!((sol.objective - brute).abs() < 1e-4, "{} vs {brute}", sol.objective);
        assert!((sol.beta - 0.5).abs() < 2e-2);
        assert!((sol.flow[0] - sol.beta).abs() < 1e-8);
    }

    #[test]
    fn pinned_scale_skips_the_grid() {
        // eta deliberately does not divide the pin.
        let block = FlowBlock::new(
            2,
            vec![0],
            vec![1],
            vec![2.0],
            vec![1, -1],
            (1.0, 1.0),
            0.7,
            Zero,
            vec![quad(1.0)],
        )
        .unwrap();
        let sol = solve_with_beta(&block, 1e-6).unwrap();
        assert_eq!(sol.beta, 1.0);
        assert!((sol.flow[0] - 1.0).abs() < 1e-8);
        assert!((sol.objective - 1.0).abs() < 1e-6);
    }

    #[test]
    fn feasibility_frontier_bounds_the_scan() {
        // Reward pushes the scale toward 10 but capacity stops it at 1.
        let eta = 1.0 / 128.0;
        let block = FlowBlock::new(
            2,
            vec![0],
            vec![1],
            vec![1.0],
            vec![1, -1],
            (0.0, 10.0),
            eta,
            lin(-1.0),
            vec![Zero],
        )
        .unwrap();
        let sol = solve_with_beta(&block, 1e-6).unwrap();
        assert!(sol.beta <= 1.0 + 1e-9);
        assert!(sol.beta >= 1.0 - 1.5 * eta, "beta {}", sol.beta);
        assert!((sol.objective + sol.beta).abs() < 1e-5);
    }

    #[test]
    fn block_construction_rejects_bad_data() {
        let base = |demand: Vec<i64>, range: (f64, f64), eta: f64| {
            FlowBlock::new(
                2,
                vec![0],
                vec![1],
                vec![1.0],
                demand,
                range,
                eta,
                Zero,
                vec![Zero],
            )
        };
        assert!(matches!(
            base(vec![1, 0], (0.0, 1.0), 0.5),
            Err(SolveError::InvalidArgument(_))
        ));
        assert!(matches!(
            base(vec![0, 0], (0.0, 1.0), 0.5),
            Err(SolveError::InvalidArgument(_))
        ));
        assert!(matches!(
            base(vec![1, -1], (2.0, 1.0), 0.5),
            Err(SolveError::InvalidArgument(_))
        ));
        assert!(matches!(
            base(vec![1, -1], (0.0, 1.0), 0.0),
            Err(SolveError::InvalidArgument(_))
        ));
        // Routable only below scale 1; a range starting at 5 can't certify.
        assert!(matches!(
            base(vec![5, -5], (1.0, 2.0), 0.5),
            Err(SolveError::Infeasible(_))
        ));
    }

    #[test]
    fn query_costs_enter_in_normalized_coordinates() {
        // Standing reward -beta; query puts (f/4)^2 on the lone edge of
        // capacity 4. At beta = 1 the normalized flow is 1/4, so the
        // optimum sits at the range top with value -1 + 1/16.
        let block = FlowBlock::new(
            2,
            vec![0],
            vec![1],
            vec![4.0],
            vec![1, -1],
            (0.0, 1.0),
            1e-3,
            lin(-1.0),
            vec![Zero],
        )
        .unwrap();
        let q = ScoQuery { costs: vec![quad(1.0), Zero], delta: 1e-5 };
        let sol = sco_query(&block, &q).unwrap();
        assert!((sol.beta - 1.0).abs() < 1e-9);
        assert!((sol.objective + 0.9375).abs() < 1e-4, "{}", sol.objective);
    }

    #[test]
    fn query_on_scale_matches_standing_reformulation() {
        let eta = 1.0 / 32.0;
        let mk = |psi_beta: ScalarCost| {
            FlowBlock::new(
                2,
                vec![0],
                vec![1],
                vec![2.0],
                vec![1, -1],
                (0.0, 1.5),
                eta,
                psi_beta,
                vec![Sum(vec![quad(1.0), lin(-2.0)])],
            )
            .unwrap()
        };
        // Query cost q(eta*beta) = (eta*beta)^2 equals a standing
        // Quadratic{eta^2} on beta.
        let via_query = {
            let block = mk(Zero);
            let q = ScoQuery { costs: vec![Zero, quad(1.0)], delta: 1e-6 };
            sco_query(&block, &q).unwrap()
        };
        let via_standing = {
            let block = mk(quad(eta * eta));
            solve_with_beta(&block, 1e-6).unwrap()
        };
        assert_eq!(via_query.beta.to_bits(), via_standing.beta.to_bits());
        assert_eq!(via_query.flow.len(), via_standing.flow.len());
        for (a, b) in via_query.flow.iter().zip(&via_standing.flow) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert!((via_query.objective - via_standing.objective).abs() < 1e-12);
    }

    #[test]
    fn query_matches_grid_search_on_curved_costs() {
        // Two parallel pairs in series; the oracle enumerates every grid
        // scale and solves the two separable leg splits by brute force.
        let caps = [1.5, 1.0, 1.2, 1.0];
        let eta = 5e-3;
        let block = FlowBlock::new(
            3,
            vec![0, 0, 1, 1],
            vec![1, 1, 2, 2],
            caps.to_vec(),
            vec![1, 0, -1],
            (0.2, 0.9),
            eta,
            lin(-1.2),
            vec![Zero; 4],
        )
        .unwrap();
        let gq = |_: usize| GammaPow { q: 1.25, f: 0.4, w1: 1.0, w2: 0.0, s: 1.0, p_exp: 1 };
        let q = ScoQuery { costs: vec![gq(0), gq(1), gq(2), gq(3), Zero], delta: 1e-4 };
        let sol = sco_query(&block, &q).unwrap();

        let leg = |beta: f64, ua: f64, ub: f64, ca: &ScalarCost, cb: &ScalarCost| -> f64 {
            let lo = (beta - ub).max(0.0);
            let hi = beta.min(ua);
            let (_, v) = grid_minimize(
                |y| ca.eval(y[0] / ua) + cb.eval((beta - y[0]) / ub),
                &[lo],
                &[hi],
                400,
            );
            v
        };
        let mut best = f64::INFINITY;
        for i in 40..=180i64 {
            let beta = i as f64 * eta;
            let v = -1.2 * beta
                + leg(beta, caps[0], caps[1], &q.costs[0], &q.costs[1])
                + leg(beta, caps[2], caps[3], &q.costs[2], &q.costs[3]);
            if v < best {
                best = v;
            }
        }
        assert!(
            (sol.objective - best).abs() < 3e-4 * (1.0 + best.abs()),
            "{} vs {best}",
            sol.objective
        );
        let dmax = sol.beta;
        let im = [sol.flow[0] + sol.flow[1], sol.flow[2] + sol.flow[3] - sol.flow[0] - sol.flow[1]];
        assert!((im[0] - sol.beta).abs() <= 1e-9 * (1.0 + dmax));
        assert!(im[1].abs() <= 1e-9 * (1.0 + dmax));
        for e in 0..4 {
            assert!(sol.flow[e] >= -1e-9 && sol.flow[e] <= caps[e] + 1e-9);
        }
    }

    #[test]
    fn pinned_queries_stay_within_delta_of_lp() {
        // Piecewise-linear standing costs at a pinned scale; the exact LP
        // referees every seed. Half the seeds route the same costs through
        // the query side in normalized coordinates instead.
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for trial in 0..12 {
            let (p, lp_val) = piecewise_instance(&mut rng);
            let via_query = trial % 2 == 1;
            let m = p.tails.len();
            let (standing, query_costs) = if via_query {
                let mut qc = Vec::with_capacity(m + 1);
                for e in 0..m {
                    let u = p.cap[e];
                    let MinSplit { c1, c2, theta_lo: _, theta_hi } = &p.cost[e] else {
                        unreachable!()
                    };
                    let Linear { a: s1 } = &**c1 else { unreachable!() };
                    let Sum(parts) = &**c2 else { unreachable!() };
                    let Linear { a: s2 } = &parts[0] else { unreachable!() };
                    let BoxIndicator { lo: _, hi } = &parts[1] else { unreachable!() };
                    qc.push(MinSplit {
                        c1: Box::new(lin(s1 * u)),
                        c2: Box::new(Sum(vec![
                            lin(s2 * u),
                            BoxIndicator { lo: 0.0, hi: hi / u },
                        ])),
                        theta_lo: 0.0,
                        theta_hi: theta_hi / u,
                    });
                }
                qc.push(Zero);
                (vec![Zero; m], qc)
            } else {
                (p.cost.clone(), vec![Zero; m + 1])
            };
            let demand: Vec<i64> = p.demand.iter().map(|&d| d as i64).collect();
            if demand.iter().all(|&d| d == 0) {
                continue;
            }
            let block = FlowBlock::new(
                p.n,
                p.tails.clone(),
                p.heads.clone(),
                p.cap.clone(),
                demand,
                (1.0, 1.0),
                0.5,
                Zero,
                standing,
            )
            .unwrap();
            let q = ScoQuery { costs: query_costs, delta: 1e-6 };
            let sol = sco_query(&block, &q).unwrap();
            assert_eq!(sol.beta, 1.0);
            assert!(
                sol.objective <= lp_val + 2e-6 && sol.objective >= lp_val - 1e-6,
                "trial {trial}: {} vs lp {lp_val}",
                sol.objective
            );
            for e in 0..m {
                assert!(sol.flow[e] >= -1e-9 && sol.flow[e] <= p.cap[e] + 1e-9);
            }
        }
    }

    #[test]
    fn repeated_queries_are_bit_identical() {
        let mk = || {
            FlowBlock::new(
                3,
                vec![0, 0, 1, 1],
                vec![1, 1, 2, 2],
                vec![1.5, 1.0, 1.2, 1.0],
                vec![1, 0, -1],
                (0.2, 0.9),
                5e-3,
                lin(-1.2),
                vec![Zero; 4],
            )
            .unwrap()
        };
        let q = ScoQuery {
            costs: vec![
                GammaPow { q: 1.25, f: 0.4, w1: 1.0, w2: 0.0, s: 1.0, p_exp: 1 },
                quad(0.7),
                GammaPow { q: 1.25, f: 0.2, w1: 0.5, w2: 0.0, s: 1.0, p_exp: 1 },
                quad(0.3),
                Zero,
            ],
            delta: 1e-4,
        };
        let block = mk();
        let a = sco_query(&block, &q).unwrap();
        let b = sco_query(&block, &q).unwrap();
        let c = sco_query(&mk(), &q).unwrap();
        for other in [&b, &c] {
            assert_eq!(a.beta.to_bits(), other.beta.to_bits());
            assert_eq!(a.objective.to_bits(), other.objective.to_bits());
            assert_eq!(a.flow.len(), other.flow.len());
            for (x, y) in a.flow.iter().zip(&other.flow) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn query_counter_tracks_accepted_calls() {
        let block = unit_block(Zero, quad(1.0), 2.0, 0.25);
        assert_eq!(block.query_count(), 0);
        let good = ScoQuery { costs: vec![Zero, Zero], delta: 1e-6 };
        sco_query(&block, &good).unwrap();
        sco_query(&block, &good).unwrap();
        let malformed = ScoQuery { costs: vec![Zero], delta: 1e-6 };
        assert!(sco_query(&block, &malformed).is_err());
        assert_eq!(block.query_count(), 2);
    }
}
