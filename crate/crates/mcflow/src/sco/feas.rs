//! Feasibility phase: max-flow with per-edge lower bounds. Produces an
//! exactly balanced starting point for the barrier method or a violated
//! cut when the demands cannot be routed.

use crate::error::SolveError;

struct Arc {
    to: usize,
    cap: f64,
    flow: f64,
}

/// Residual graph with paired forward and backward arcs (arc i pairs with
/// i^1). Capacities are reals; residuals below `eps` count as saturated.
struct Dinic {
    arcs: Vec<Arc>,
    adj: Vec<Vec<usize>>,
    level: Vec<i32>,
    cursor: Vec<usize>,
    eps: f64,
}

impl Dinic {
    fn new(nv: usize, eps: f64) -> Self {
        Dinic { arcs: Vec::new(), adj: vec![Vec::new(); nv], level: vec![0; nv], cursor: vec![0; nv], eps }
    }

    fn add(&mut self, from: usize, to: usize, cap: f64) -> usize {
        let id = self.arcs.len();
        self.arcs.push(Arc { to, cap, flow: 0.0 });
        self.arcs.push(Arc { to: from, cap: 0.0, flow: 0.0 });
        self.adj[from].push(id);
        self.adj[to].push(id + 1);
        id
    }

    fn residual(&self, id: usize) -> f64 {
        self.arcs[id].cap - self.arcs[id].flow
    }

    fn bfs(&mut self, s: usize, t: usize) -> bool {
        self.level.iter_mut().for_each(|l| *l = -1);
        self.level[s] = 0;
        let mut queue = std::collections::VecDeque::from([s]);
        while let Some(v) = queue.pop_front() {
            for &id in &self.adj[v] {
                let w = self.arcs[id].to;
                if self.level[w] < 0 && self.residual(id) > self.eps {
                    self.level[w] = self.level[v] + 1;
                    queue.push_back(w);
                }
            }
        }
        self.level[t] >= 0
    }

    fn dfs(&mut self, v: usize, t: usize, pushed: f64) -> f64 {
        if v == t {
            return pushed;
        }
        while self.cursor[v] < self.adj[v].len() {
            let id = self.adj[v][self.cursor[v]];
            let w = self.arcs[id].to;
            if self.level[w] == self.level[v] + 1 && self.residual(id) > self.eps {
                let got = self.dfs(w, t, pushed.min(self.residual(id)));
                if got > 0.0 {
                    self.arcs[id].flow += got;
                    self.arcs[id ^ 1].flow -= got;
                    return got;
                }
            }
            self.cursor[v] += 1;
        }
        0.0
    }

    fn max_flow(&mut self, s: usize, t: usize) -> f64 {
        let mut total = 0.0;
        while self.bfs(s, t) {
            self.cursor.iter_mut().for_each(|c| *c = 0);
            loop {
                let got = self.dfs(s, t, f64::INFINITY);
                if got <= 0.0 {
                    break;
                }
                total += got;
            }
        }
        total
    }

    /// Vertices reachable from s in the residual graph.
    fn reachable(&self, s: usize) -> Vec<bool> {
        let mut seen = vec![false; self.adj.len()];
        seen[s] = true;
        let mut stack = vec![s];
        while let Some(v) = stack.pop() {
            for &id in &self.adj[v] {
                let w = self.arcs[id].to;
                if !seen[w] && self.residual(id) > self.eps {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen
    }
}

/// Finds f with imbalance(f) = demand and lo <= f <= hi, or reports the
/// violated cut. `edges` holds (tail, head, lo, hi).
pub(crate) fn feasible_flow(
    nv: usize,
    edges: &[(usize, usize, f64, f64)],
    demand: &[f64],
) -> Result<Vec<f64>, SolveError> {
    let scale = edges.iter().map(|e| e.3.abs()).fold(1.0, f64::max)
        + demand.iter().map(|d| d.abs()).fold(0.0, f64::max);
    let eps = 1e-12 * scale;
    // Shift lower bounds to zero: route f' in [0, hi-lo] against the
    // residual demand after the lo-flows are forced.
    let mut resid = demand.to_vec();
    for &(a, b, lo, hi) in edges {
        if lo > hi + eps {
            return Err(SolveError::Infeasible("edge interval is empty".into()));
        }
        resid[a] -= lo;
        resid[b] += lo;
    }
    let s = nv;
    let t = nv + 1;
    let mut net = Dinic::new(nv + 2, eps);
    let ids: Vec<usize> =
        edges.iter().map(|&(a, b, lo, hi)| net.add(a, b, (hi - lo).max(0.0))).collect();
    let mut need = 0.0;
    for (v, &r) in resid.iter().enumerate() {
        if r > 0.0 {
            net.add(s, v, r);
            need += r;
        } else if r < 0.0 {
            net.add(v, t, -r);
        }
    }
    let got = net.max_flow(s, t);
    if got + 1e-9 * (1.0 + need) < need {
        let side = net.reachable(s);
        let cut: Vec<usize> = (0..nv).filter(|&v| side[v]).collect();
        return Err(SolveError::Infeasible(format!(
            "demand exceeds cut capacity by {:.6e}; source side {:?}",
            need - got,
            cut
        )));
    }
    Ok(edges
        .iter()
        .zip(&ids)
        .map(|(&(_, _, lo, _), &id)| lo + net.arcs[id].flow)
        .collect())
}

/// Largest beta in [lo_beta, hi_beta] with beta*dir routable subject to the
/// edge intervals, located by bisection to absolute width `tol`. Returns
/// None when even lo_beta is infeasible.
pub(crate) fn max_feasible_scale(
    nv: usize,
    edges: &[(usize, usize, f64, f64)],
    dir: &[f64],
    lo_beta: f64,
    hi_beta: f64,
    tol: f64,
) -> Option<f64> {
    let check = |beta: f64| {
        let demand: Vec<f64> = dir.iter().map(|d| d * beta).collect();
        feasible_flow(nv, edges, &demand).is_ok()
    };
    if !check(lo_beta) {
        return None;
    }
    if check(hi_beta) {
        return Some(hi_beta);
    }
    let (mut lo, mut hi) = (lo_beta, hi_beta);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if check(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(lo)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn routes_simple_path() {
        let edges = [(0usize, 1usize, 0.0, 2.0), (1, 2, 0.0, 2.0)];
        let f = feasible_flow(3, &edges, &[1.5, 0.0, -1.5]).unwrap();
        assert!((f[0] - 1.5).abs() < 1e-9);
        assert!((f[1] - 1.5).abs() < 1e-9);
    }

    #[test]
    fn honors_lower_bounds() {
        // Cycle 0->1->2->0 where the first edge must carry at least 1.
        let edges = [(0usize, 1usize, 1.0, 2.0), (1, 2, 0.0, 2.0), (2, 0, 0.0, 2.0)];
        let f = feasible_flow(3, &edges, &[0.0, 0.0, 0.0]).unwrap();
        assert!(f[0] >= 1.0 - 1e-9);
        for (i, &(_, _, lo, hi)) in edges.iter().enumerate() {
            assert!(f[i] >= lo - 1e-9 && f[i] <= hi + 1e-9);
        }
        // Imbalance is zero everywhere.
        let mut im = [0.0; 3];
        for (i, &(a, b, _, _)) in edges.iter().enumerate() {
            im[a] += f[i];
            im[b] -= f[i];
        }
        assert!(im.iter().all(|x| x.abs() < 1e-9));
    }

    #[test]
    fn reports_cut_on_infeasible() {
        let edges = [(0usize, 1usize, 0.0, 1.0)];
        let err = feasible_flow(2, &edges, &[3.0, -3.0]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("cut"), "unexpected message: {msg}");
    }

    #[test]
    fn finds_scale_frontier() {
        let edges = [(0usize, 1usize, 0.0, 1.0), (0, 1, 0.0, 0.5)];
        let b = max_feasible_scale(2, &edges, &[1.0, -1.0], 0.0, 4.0, 1e-10).unwrap();
        assert!((b - 1.5).abs() < 1e-8);
        assert!(max_feasible_scale(2, &edges, &[2.0, -2.0], 1.0, 4.0, 1e-10).is_none());
    }
}
