//! Primal path-following on an expanded flow problem. Conservation stays
//! exact because iterates move in cycle space only; epigraph coordinates
//! are folded out of each Newton system by a per-group Schur complement,
//! so the linear solve lives in cycle space alone.

use crate::cost::Barrier;
use crate::error::SolveError;
use crate::util::solve_spd;

use super::expand::Expanded;
use super::feas::feasible_flow;

#[derive(Debug)]
pub(crate) struct CoreSolution {
    pub flow: Vec<f64>,
    pub objective: f64,
    /// Additive optimality bound over the original interval constraints,
    /// inclusive of the quadratic regularizer slack.
    pub certified_gap: f64,
    pub newton_steps: usize,
}

const CENTER_CAP: usize = 500;
const GLOBAL_CAP: usize = 200_000;
const LAMBDA_EXIT: f64 = 0.05;

/// Barriers of one lifted cost sharing a single epigraph coordinate.
struct Group {
    edge: usize,
    shift: f64,
    barriers: Vec<Barrier>,
}

#[derive(Default, Clone, Copy)]
struct GroupEval {
    bx: f64,
    bt: f64,
    bxx: f64,
    bxt: f64,
    btt: f64,
}

fn eval_group(g: &Group, x: f64, t: f64) -> Option<(f64, GroupEval)> {
    let mut val = 0.0;
    let mut ev = GroupEval::default();
    for b in &g.barriers {
        let bp = b.eval(x, t)?;
        val += bp.value;
        ev.bx += bp.grad[0];
        ev.bt += bp.grad[1];
        ev.bxx += bp.hess[0][0];
        ev.bxt += bp.hess[0][1];
        ev.btt += bp.hess[1][1];
    }
    Some((val, ev))
}

struct Forest {
    parent: Vec<usize>,
    pedge: Vec<usize>,
    psign: Vec<f64>,
    depth: Vec<usize>,
    /// BFS order, roots first; repair walks it in reverse.
    order: Vec<usize>,
}

fn find(uf: &mut [usize], mut v: usize) -> usize {
    while uf[v] != v {
        uf[v] = uf[uf[v]];
        v = uf[v];
    }
    v
}

/// Maximum weight spanning forest over the usable edges; self loops are never
/// tree edges. Heavier edges are taken first, ties fall back to edge index,
/// so the forest is deterministic for equal weights.
fn build_forest(
    nv: usize,
    ends: &[(usize, usize)],
    usable: &[bool],
    weight: &[f64],
) -> (Forest, Vec<bool>) {
    let mut by_weight: Vec<usize> = (0..ends.len())
        .filter(|&e| usable[e] && ends[e].0 != ends[e].1)
        .collect();
    by_weight.sort_by(|&a, &b| {
        weight[b].partial_cmp(&weight[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    let mut uf: Vec<usize> = (0..nv).collect();
    let mut in_tree = vec![false; ends.len()];
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); nv];
    for e in by_weight {
        let (a, b) = ends[e];
        let (ra, rb) = (find(&mut uf, a), find(&mut uf, b));
        if ra != rb {
            uf[ra] = rb;
            in_tree[e] = true;
            adj[a].push((b, e));
            adj[b].push((a, e));
        }
    }
    let mut fo = Forest {
        parent: vec![usize::MAX; nv],
        pedge: vec![usize::MAX; nv],
        psign: vec![0.0; nv],
        depth: vec![0; nv],
        order: Vec::with_capacity(nv),
    };
    let mut seen = vec![false; nv];
    for r in 0..nv {
        if seen[r] {
            continue;
        }
        seen[r] = true;
        let mut queue = std::collections::VecDeque::from([r]);
        while let Some(v) = queue.pop_front() {
            fo.order.push(v);
            for &(w, e) in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    fo.parent[w] = v;
                    fo.pedge[w] = e;
                    fo.psign[w] = if ends[e].0 == w { 1.0 } else { -1.0 };
                    fo.depth[w] = fo.depth[v] + 1;
                    queue.push_back(w);
                }
            }
        }
    }
    (fo, in_tree)
}

/// Fundamental cycle of each usable non-tree edge: unit flow along the edge
/// plus the tree path closing it. Returns the columns and a per-edge list of
/// (column, sign) incidences.
fn fundamental_cycles(
    fo: &Forest,
    ends: &[(usize, usize)],
    usable: &[bool],
    in_tree: &[bool],
) -> (Vec<Vec<(usize, f64)>>, Vec<Vec<(usize, f64)>>) {
    let mut cols = Vec::new();
    for (e, &(a, b)) in ends.iter().enumerate() {
        if !usable[e] || in_tree[e] {
            continue;
        }
        let mut coef = vec![(e, 1.0)];
        let (mut x, mut y) = (b, a);
        while fo.depth[x] > fo.depth[y] {
            coef.push((fo.pedge[x], fo.psign[x]));
            x = fo.parent[x];
        }
        while fo.depth[y] > fo.depth[x] {
            coef.push((fo.pedge[y], -fo.psign[y]));
            y = fo.parent[y];
        }
        while x != y {
            coef.push((fo.pedge[x], fo.psign[x]));
            x = fo.parent[x];
            coef.push((fo.pedge[y], -fo.psign[y]));
            y = fo.parent[y];
        }
        cols.push(coef);
    }
    let mut incid: Vec<Vec<(usize, f64)>> = vec![Vec::new(); ends.len()];
    for (c, col) in cols.iter().enumerate() {
        for &(e, s) in col {
            incid[e].push((c, s));
        }
    }
    (cols, incid)
}

struct Basis {
    fo: Forest,
    incid: Vec<Vec<(usize, f64)>>,
    ncols: usize,
}

/// Cycle basis rooted in a maximum weight forest. With weight 1/d the stiff
/// edges stay off the tree, so each contributes to exactly one column and the
/// scaled normal matrix keeps its small eigenvalues resolvable.
fn build_basis(nv: usize, ends: &[(usize, usize)], usable: &[bool], weight: &[f64]) -> Basis {
    let (fo, in_tree) = build_forest(nv, ends, usable, weight);
    let (cols, incid) = fundamental_cycles(&fo, ends, usable, &in_tree);
    Basis { fo, incid, ncols: cols.len() }
}

struct Core<'a> {
    prob: &'a Expanded,
    mu: f64,
    free: Vec<bool>,
    ends: Vec<(usize, usize)>,
    lo_x: Vec<f64>,
    hi_x: Vec<f64>,
    lin: Vec<f64>,
    groups: Vec<Group>,
    gidx: Vec<Vec<usize>>,
    pinned_const: f64,
    nu_total: f64,
    bump_err: f64,
}

impl Core<'_> {
    /// Barrier-augmented objective; None outside the open domain.
    fn potential(&self, f: &[f64], t: &[f64], tau: f64) -> Option<f64> {
        let mut model = 0.0;
        let mut barrier = 0.0;
        for e in 0..f.len() {
            if !self.free[e] {
                continue;
            }
            let (bl, bu) = (f[e] - self.lo_x[e], self.hi_x[e] - f[e]);
            if bl <= 0.0 || bu <= 0.0 {
                return None;
            }
            barrier -= bl.ln() + bu.ln();
            model += self.lin[e] * f[e] + self.mu * f[e] * f[e];
        }
        for (g, grp) in self.groups.iter().enumerate() {
            let (val, _) = eval_group(grp, f[grp.edge] + grp.shift, t[g])?;
            barrier += val;
            model += t[g];
        }
        Some(tau * model + barrier)
    }

    /// Model objective the certificate compares against; t stands in for the
    /// lifted costs and pinned edges enter at their exact values.
    fn model_value(&self, f: &[f64], t: &[f64]) -> f64 {
        let mut model = self.pinned_const;
        for e in 0..f.len() {
            if self.free[e] {
                model += self.lin[e] * f[e] + self.mu * f[e] * f[e];
            }
        }
        model + t.iter().sum::<f64>()
    }

    /// One centering stage: damped Newton until the decrement is small. The
    /// cycle basis is rebuilt around the current stiffness profile each step.
    fn center(
        &self,
        f: &mut [f64],
        t: &mut [f64],
        tau: f64,
        steps: &mut usize,
    ) -> Result<(), SolveError> {
        let m = f.len();
        for _ in 0..CENTER_CAP {
            let mut gf = vec![0.0; m];
            let mut d_eff = vec![0.0; m];
            for e in 0..m {
                if !self.free[e] {
                    continue;
                }
                let (bl, bu) = (f[e] - self.lo_x[e], self.hi_x[e] - f[e]);
                gf[e] = tau * (self.lin[e] + 2.0 * self.mu * f[e]) - 1.0 / bl + 1.0 / bu;
                d_eff[e] = tau * 2.0 * self.mu + 1.0 / (bl * bl) + 1.0 / (bu * bu);
            }
            let mut gt = vec![0.0; self.groups.len()];
            let mut evs = vec![GroupEval::default(); self.groups.len()];
            for (g, grp) in self.groups.iter().enumerate() {
                let Some((_, ev)) = eval_group(grp, f[grp.edge] + grp.shift, t[g]) else {
                    return Err(SolveError::Numeric(
                        "barrier iterate left the feasible domain".into(),
                    ));
                };
                gt[g] = tau + ev.bt;
                gf[grp.edge] += ev.bx;
                d_eff[grp.edge] += ev.bxx - ev.bxt * ev.bxt / ev.btt;
                evs[g] = ev;
            }
            let mut g_eff = gf.clone();
            for (g, grp) in self.groups.iter().enumerate() {
                g_eff[grp.edge] -= evs[g].bxt * gt[g] / evs[g].btt;
            }

            let roominess: Vec<f64> =
                d_eff.iter().map(|&d| if d > 0.0 { 1.0 / d } else { 0.0 }).collect();
            let basis = build_basis(self.prob.nv, &self.ends, &self.free, &roominess);
            let mut h = vec![vec![0.0; basis.ncols]; basis.ncols];
            let mut rhs = vec![0.0; basis.ncols];
            for e in 0..m {
                for &(ci, si) in &basis.incid[e] {
                    rhs[ci] -= si * g_eff[e];
                    for &(cj, sj) in &basis.incid[e] {
                        h[ci][cj] += d_eff[e] * si * sj;
                    }
                }
            }
            let dy = solve_spd(&h, &rhs).ok_or_else(|| {
                SolveError::Numeric("cycle-space newton system is not positive definite".into())
            })?;

            let mut df = vec![0.0; m];
            for e in 0..m {
                for &(ci, si) in &basis.incid[e] {
                    df[e] += si * dy[ci];
                }
            }
            let mut dt = vec![0.0; self.groups.len()];
            for (g, grp) in self.groups.iter().enumerate() {
                dt[g] = -(gt[g] + evs[g].bxt * df[grp.edge]) / evs[g].btt;
            }
            let mut descent = 0.0;
            for e in 0..m {
                descent += gf[e] * df[e];
            }
            for g in 0..self.groups.len() {
                descent += gt[g] * dt[g];
            }
            let lambda2 = (-descent).max(0.0);
            let lambda = lambda2.sqrt();
            if lambda <= LAMBDA_EXIT {
                return Ok(());
            }

            let cur = self.potential(f, t, tau).ok_or_else(|| {
                SolveError::Numeric("barrier iterate left the feasible domain".into())
            })?;
            let mut alpha = if lambda <= 0.25 { 1.0 } else { 1.0 / (1.0 + lambda) };
            loop {
                let fc: Vec<f64> =
                    f.iter().zip(&df).map(|(v, d)| v + alpha * d).collect();
                let tc: Vec<f64> =
                    t.iter().zip(&dt).map(|(v, d)| v + alpha * d).collect();
                if let Some(next) = self.potential(&fc, &tc, tau) {
                    if next <= cur - 0.25 * alpha * lambda2 {
                        f.copy_from_slice(&fc);
                        t.copy_from_slice(&tc);
                        break;
                    }
                }
                alpha *= 0.5;
                if alpha < 1e-18 {
                    return Err(SolveError::Numeric(
                        "newton line search failed to make progress".into(),
                    ));
                }
            }
            *steps += 1;
            if *steps > GLOBAL_CAP {
                return Err(SolveError::Numeric("newton iteration budget exhausted".into()));
            }
        }
        Err(SolveError::Numeric("centering stage did not converge".into()))
    }
}

/// Clamps free edges to their true intervals, then restores conservation by
/// routing the per-vertex residuals through the spanning forest.
fn clamp_and_repair(prob: &Expanded, free: &[bool], fo: &Forest, f: &mut [f64]) {
    for (e, spec) in prob.edges.iter().enumerate() {
        if free[e] {
            f[e] = f[e].clamp(spec.lo, spec.hi);
        }
    }
    let mut resid = prob.demand.clone();
    for (e, spec) in prob.edges.iter().enumerate() {
        resid[spec.tail] -= f[e];
        resid[spec.head] += f[e];
    }
    for &v in fo.order.iter().rev() {
        if fo.parent[v] == usize::MAX {
            continue;
        }
        f[fo.pedge[v]] += fo.psign[v] * resid[v];
        resid[fo.parent[v]] += resid[v];
        resid[v] = 0.0;
    }
}

/// Minimizes the expanded objective plus mu * ||f||^2 over the flow polytope
/// to additive accuracy delta, certified by the produced gap bound.
pub(crate) fn solve_core(
    prob: &Expanded,
    mu: f64,
    delta: f64,
) -> Result<CoreSolution, SolveError> {
    if !(delta > 0.0) || !delta.is_finite() || !(mu >= 0.0) || !mu.is_finite() {
        return Err(SolveError::invalid("accuracy and regularizer must be positive finite"));
    }
    let m = prob.edges.len();
    for spec in &prob.edges {
        if !spec.lo.is_finite() || !spec.hi.is_finite() {
            return Err(SolveError::invalid("edge intervals must be finite"));
        }
    }
    let tuples: Vec<(usize, usize, f64, f64)> =
        prob.edges.iter().map(|s| (s.tail, s.head, s.lo, s.hi)).collect();
    let f0 = feasible_flow(prob.nv, &tuples, &prob.demand)?;

    // Edges whose interval is numerically a point stay at the feasible value
    // found for them; everything else is optimized.
    let mut free = vec![true; m];
    for (e, spec) in prob.edges.iter().enumerate() {
        if spec.hi - spec.lo <= 8e-12 * (1.0 + spec.lo.abs() + spec.hi.abs()) {
            free[e] = false;
        }
    }
    let ends: Vec<(usize, usize)> = prob.edges.iter().map(|s| (s.tail, s.head)).collect();
    // The column count is a graph invariant, so any weighting works here; the
    // same uniform forest routes the conservation repair at the end.
    let uniform = build_basis(prob.nv, &ends, &free, &vec![1.0; m]);
    let ncols = uniform.ncols;

    let mut core = Core {
        prob,
        mu,
        free: free.clone(),
        ends,
        lo_x: vec![0.0; m],
        hi_x: vec![0.0; m],
        lin: prob.edges.iter().map(|s| s.lin).collect(),
        groups: Vec::new(),
        gidx: vec![Vec::new(); m],
        pinned_const: 0.0,
        nu_total: 0.0,
        bump_err: 0.0,
    };
    for (e, spec) in prob.edges.iter().enumerate() {
        if !free[e] {
            core.pinned_const += spec.lin * f0[e] + mu * f0[e] * f0[e];
            core.pinned_const +=
                spec.pieces.iter().map(|(sh, c)| c.eval(f0[e] + sh)).sum::<f64>();
            continue;
        }
        let sigma = 1e-12 * (1.0 + spec.hi - spec.lo);
        core.lo_x[e] = spec.lo - sigma;
        core.hi_x[e] = spec.hi + sigma;
        core.nu_total += 2.0;
        for (shift, tg) in &spec.groups {
            let mut barriers = tg.barriers.clone();
            for b in &mut barriers {
                if let Barrier::Entropy { w, xi, shift: dom } = b {
                    let needed = -(core.lo_x[e] + shift);
                    if needed > 0.0 {
                        if *xi < 4.0 * needed {
                            let grew = 4.0 * needed - *xi;
                            let hi_arg = core.hi_x[e] + shift + 4.0 * needed;
                            core.bump_err += *w
                                * grew
                                * (2.0 + grew.ln().abs().max((2.0 + hi_arg.abs()).ln()));
                            *xi = 4.0 * needed;
                        }
                        *dom = (1.5 * needed).min(*xi / 2.0);
                    }
                }
            }
            core.nu_total += tg.nu();
            core.gidx[e].push(core.groups.len());
            core.groups.push(Group { edge: e, shift: *shift, barriers });
        }
    }

    let mut f = f0;
    let mut steps = 0usize;
    let mut model_center = f64::NAN;
    let mut tau = 1.0;
    if ncols > 0 {
        let mut t = vec![0.0; core.groups.len()];
        for (g, grp) in core.groups.iter().enumerate() {
            let x = f[grp.edge] + grp.shift;
            let c = grp.barriers.iter().map(|b| b.cost_at(x)).fold(f64::NEG_INFINITY, f64::max);
            let mut margin = 0.5 * (1.0 + c.abs());
            loop {
                if grp.barriers.iter().all(|b| b.eval(x, c + margin).is_some()) {
                    t[g] = c + margin;
                    break;
                }
                margin *= 4.0;
                if !margin.is_finite() || margin > 1e300 {
                    return Err(SolveError::Numeric(
                        "no admissible epigraph start was found".into(),
                    ));
                }
            }
        }
        // The first stage must be reachable from a generic interior point, so
        // it starts barrier-dominated: per-step progress of damped Newton is
        // a constant, while the gap at tau grows with tau times the model
        // spread. Heavy costs would otherwise stall the first stage.
        let mut model_scale = 0.0;
        for e in 0..m {
            if free[e] {
                model_scale += (core.lin[e] * f[e]).abs() + mu * f[e] * f[e];
            }
        }
        model_scale += t.iter().map(|v| v.abs()).sum::<f64>();
        tau = 1.0 / (1.0 + model_scale);
        let term = core.nu_total + 0.3 * core.nu_total.sqrt() + 0.1;
        loop {
            core.center(&mut f, &mut t, tau, &mut steps)?;
            if term / tau <= delta / 2.0 {
                break;
            }
            tau *= 1.25;
        }
        model_center = core.model_value(&f, &t);
    }

    clamp_and_repair(prob, &free, &uniform.fo, &mut f);
    let objective = prob.objective(&f);
    let mut gap = 1e-12 * (1.0 + objective.abs());
    if ncols > 0 {
        let term = core.nu_total + 0.3 * core.nu_total.sqrt() + 0.1;
        let norm2: f64 = f.iter().map(|v| v * v).sum();
        let core_hat = objective - prob.constant + mu * norm2;
        let mu_slack: f64 = mu
            * prob
                .edges
                .iter()
                .map(|s| s.lo.abs().max(s.hi.abs()).powi(2))
                .sum::<f64>();
        gap += term / tau + (core_hat - model_center).max(0.0) + mu_slack + core.bump_err;
    }
    Ok(CoreSolution { flow: f, objective, certified_gap: gap, newton_steps: steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::ScalarCost;
    use crate::sco::expand::expand;

    fn simple(costs: Vec<ScalarCost>, caps: &[f64], demand: &[f64]) -> Expanded {
        let m = costs.len();
        let tails: Vec<usize> = vec![0; m];
        let heads: Vec<usize> = vec![1; m];
        expand(2, &tails, &heads, caps, &costs, demand).unwrap()
    }

    #[test]
    fn unique_flow_needs_no_iterations() {
        let ex = simple(vec![ScalarCost::Quadratic { a: 1.0 }], &[2.0], &[1.0, -1.0]);
        let sol = solve_core(&ex, 0.0, 1e-6).unwrap();
        assert_eq!(sol.newton_steps, 0);
        assert!((sol.flow[0] - 1.0).abs() < 1e-12);
        assert!((sol.objective - 1.0).abs() < 1e-12);
    }

    #[test]
    fn splits_demand_across_parallel_quadratics() {
        let ex = simple(
            vec![ScalarCost::Quadratic { a: 1.0 }, ScalarCost::Quadratic { a: 1.0 }],
            &[1.0, 1.0],
            &[1.0, -1.0],
        );
        let sol = solve_core(&ex, 0.0, 1e-7).unwrap();
        assert!((sol.flow[0] - 0.5).abs() < 1e-5, "flow {:?}", sol.flow);
        assert!((sol.flow[1] - 0.5).abs() < 1e-5);
        assert!(sol.objective <= 0.5 + 1e-7);
        assert!(sol.certified_gap <= 1e-6);
    }

    #[test]
    fn asymmetric_quadratics_balance_marginals() {
        // min x^2 + 2y^2 with x + y = 1: x = 2/3, y = 1/3.
        let ex = simple(
            vec![ScalarCost::Quadratic { a: 1.0 }, ScalarCost::Quadratic { a: 2.0 }],
            &[2.0, 2.0],
            &[1.0, -1.0],
        );
        let sol = solve_core(&ex, 0.0, 1e-8).unwrap();
        assert!((sol.flow[0] - 2.0 / 3.0).abs() < 1e-4);
        assert!((sol.objective - 2.0 / 3.0).abs() < 1e-8);
    }

    #[test]
    fn linear_cost_saturates_cheap_edge_within_bounds() {
        let ex = simple(
            vec![ScalarCost::Linear { a: -1.0 }, ScalarCost::Linear { a: 1.0 }],
            &[1.0, 3.0],
            &[2.0, -2.0],
        );
        let sol = solve_core(&ex, 0.0, 1e-7).unwrap();
        assert!((sol.flow[0] - 1.0).abs() < 1e-6, "flow {:?}", sol.flow);
        assert!((sol.flow[1] - 1.0).abs() < 1e-6);
        assert!(sol.flow[0] <= 1.0 + 1e-9 && sol.flow[1] >= -1e-9);
        assert!((sol.objective - 0.0).abs() < 1e-6);
    }

    #[test]
    fn entropy_cost_stays_interior_at_zero_flow() {
        // Parallel pair, entropy plus linear push: optimum keeps one edge
        // near zero where the shifted domain must still admit the start.
        let ex = simple(
            vec![
                ScalarCost::ShiftedEntropy { w: 1.0, xi: 0.5 },
                ScalarCost::Linear { a: 0.2 },
            ],
            &[1.0, 1.0],
            &[1.0, -1.0],
        );
        let sol = solve_core(&ex, 0.0, 1e-7).unwrap();
        let obj = |x: f64| {
            let u = x + 0.5;
            u * u.ln() + 0.2 * (1.0 - x)
        };
        let best = (0..=1000)
            .map(|i| obj(i as f64 / 1000.0))
            .fold(f64::INFINITY, f64::min);
        assert!(sol.objective <= best + 1e-6, "{} vs {}", sol.objective, best);
        assert!(sol.flow[0] >= -1e-9 && sol.flow[0] <= 1.0 + 1e-9);
    }

    #[test]
    fn regularizer_slack_enters_certificate() {
        let ex = simple(vec![ScalarCost::Quadratic { a: 1.0 }], &[2.0], &[1.0, -1.0]);
        let plain = solve_core(&ex, 0.0, 1e-6).unwrap();
        let ex2 = simple(
            vec![ScalarCost::Quadratic { a: 1.0 }, ScalarCost::Quadratic { a: 1.0 }],
            &[1.0, 1.0],
            &[1.0, -1.0],
        );
        let reg = solve_core(&ex2, 1e-10, 1e-6).unwrap();
        assert!(plain.certified_gap < 1e-9);
        assert!(reg.certified_gap >= 1e-10 && reg.certified_gap < 1e-5);
    }

    #[test]
    fn gamma_split_gadget_reaches_direct_minimum() {
        // One gamma-power edge in parallel with a linear one; compare the
        // solver against a dense scan over the through-flow split.
        let gp = ScalarCost::GammaPow { q: 1.5, f: 0.6, w1: 1.0, w2: 0.1, s: 1.0, p_exp: 2 };
        let lin = ScalarCost::Linear { a: 1.3 };
        let ex = simple(vec![gp.clone(), lin.clone()], &[2.0, 2.0], &[1.5, -1.5]);
        let sol = solve_core(&ex, 0.0, 1e-7).unwrap();
        let best = (0..=3000)
            .map(|i| {
                let x = 1.5 * i as f64 / 3000.0;
                gp.eval(x) + lin.eval(1.5 - x)
            })
            .fold(f64::INFINITY, f64::min);
        assert!(
            sol.objective <= best + 1e-5,
            "solver {} vs scan {}",
            sol.objective,
            best
        );
    }

    #[test]
    fn infeasible_demand_is_reported() {
        let ex = simple(vec![ScalarCost::Zero], &[1.0], &[2.0, -2.0]);
        match solve_core(&ex, 0.0, 1e-6) {
            Err(SolveError::Infeasible(_)) => {}
            other => panic!("expected infeasibility, got {other:?}"),
        }
    }

    #[test]
    fn conservation_holds_after_repair() {
        let costs = vec![
            ScalarCost::Quadratic { a: 0.3 },
            ScalarCost::Linear { a: -0.4 },
            ScalarCost::Power { w: 0.2, p_exp: 4 },
        ];
        let ex = expand(
            3,
            &[0, 0, 1],
            &[1, 1, 2],
            &[2.0, 2.0, 3.0],
            &costs,
            &[1.0, 0.5, -1.5],
        )
        .unwrap();
        let sol = solve_core(&ex, 0.0, 1e-6).unwrap();
        let mut im = vec![0.0; ex.nv];
        for (e, spec) in ex.edges.iter().enumerate() {
            im[spec.tail] += sol.flow[e];
            im[spec.head] -= sol.flow[e];
        }
        for v in 0..ex.nv {
            assert!((im[v] - ex.demand[v]).abs() < 1e-9, "vertex {v}: {im:?}");
        }
        for (e, spec) in ex.edges.iter().enumerate() {
            assert!(sol.flow[e] >= spec.lo - 1e-9 && sol.flow[e] <= spec.hi + 1e-9);
        }
    }
}
