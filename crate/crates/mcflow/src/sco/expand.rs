//! Turns a flow problem with possibly non-smooth edge costs into a purely
//! smooth one on an expanded graph. Gamma-power costs are split, each split
//! becomes a two-terminal gadget (a parallel pair between fresh vertices),
//! and every remaining piece is lifted to its epigraph barriers.

use crate::cost::{gamma_split, lift, ScalarCost, TGroup};
use crate::error::SolveError;

/// One expanded edge: interval bounds, objective pieces for exact
/// evaluation, and the lifted form the barrier method consumes. Each piece
/// and group carries an argument shift; everything is evaluated at
/// flow + shift.
pub(crate) struct EdgeSpec {
    pub tail: usize,
    pub head: usize,
    pub lo: f64,
    pub hi: f64,
    pub pieces: Vec<(f64, ScalarCost)>,
    pub lin: f64,
    pub groups: Vec<(f64, TGroup)>,
}

pub(crate) struct Expanded {
    pub nv: usize,
    pub edges: Vec<EdgeSpec>,
    pub demand: Vec<f64>,
    /// Objective constant from shifts, scalings, and degenerate splits.
    pub constant: f64,
    /// Original edge index -> expanded edge carrying the same flow.
    pub through: Vec<usize>,
}

impl Expanded {
    /// Exact objective of the original problem at an expanded flow.
    pub fn objective(&self, flow: &[f64]) -> f64 {
        let mut total = self.constant;
        for (e, f) in self.edges.iter().zip(flow) {
            total += e.pieces.iter().map(|(sh, c)| c.eval(f + sh)).sum::<f64>();
            total += e.lin * f;
        }
        total
    }
}

struct SplitPart {
    /// Outer argument shift: the split represents cost(x + shift).
    shift: f64,
    c1: ScalarCost,
    c2: ScalarCost,
    theta_lo: f64,
    theta_hi: f64,
}

/// Separates a cost into smooth summands and split parts, accumulating the
/// constants produced along the way. Point-interval splits pin their first
/// part and continue into the second with the argument shifted, so shifted
/// gamma powers normalize without surgery.
fn normalize(
    cost: &ScalarCost,
    shift: f64,
    smooth: &mut Vec<(f64, ScalarCost)>,
    splits: &mut Vec<SplitPart>,
    constant: &mut f64,
) -> Result<(), SolveError> {
    match cost {
        ScalarCost::Sum(parts) => {
            parts.iter().try_for_each(|c| normalize(c, shift, smooth, splits, constant))
        }
        ScalarCost::GammaPow { .. } => {
            let (c1, c2, (lo, hi)) = gamma_split(cost)?;
            splits.push(SplitPart { shift, c1, c2, theta_lo: lo, theta_hi: hi });
            Ok(())
        }
        ScalarCost::MinSplit { c1, c2, theta_lo, theta_hi } => {
            if theta_lo == theta_hi {
                *constant += c1.eval(*theta_lo);
                return normalize(c2, shift - theta_lo, smooth, splits, constant);
            }
            if c1.contains_minsplit() || c2.contains_minsplit() {
                return Err(SolveError::invalid("split parts must not nest further splits"));
            }
            splits.push(SplitPart {
                shift,
                c1: (**c1).clone(),
                c2: (**c2).clone(),
                theta_lo: *theta_lo,
                theta_hi: *theta_hi,
            });
            Ok(())
        }
        ScalarCost::Zero => Ok(()),
        other => {
            smooth.push((shift, other.clone()));
            Ok(())
        }
    }
}

/// Argument substitution x -> k*x for k > 0: returns (c', K) with
/// c(k*x) = c'(x) + K. Entropy picks up a linear term and a constant, the
/// power families absorb k into their own scale fields.
pub fn scale_arg(cost: &ScalarCost, k: f64) -> Result<(ScalarCost, f64), SolveError> {
    use ScalarCost::*;
    if !(k > 0.0) || !k.is_finite() {
        return Err(SolveError::invalid("argument scale must be positive and finite"));
    }
    Ok(match cost {
        Zero => (Zero, 0.0),
        Linear { a } => (Linear { a: a * k }, 0.0),
        Quadratic { a } => (Quadratic { a: a * k * k }, 0.0),
        Power { w, p_exp } => (Power { w: w * k.powi(*p_exp as i32), p_exp: *p_exp }, 0.0),
        ShiftedEntropy { w, xi } => {
            // w(kx+xi)log(kx+xi) = wk(x+xi/k)log(x+xi/k) + wk log(k) x + w xi log(k)
            let parts = vec![
                ShiftedEntropy { w: w * k, xi: xi / k },
                Linear { a: w * k * k.ln() },
            ];
            (Sum(parts), w * xi * k.ln())
        }
        GammaPow { q, f, w1, w2, s, p_exp } => (
            GammaPow { q: *q, f: *f, w1: *w1, w2: *w2, s: s * k, p_exp: *p_exp },
            0.0,
        ),
        QPowerTail { q, f, w1, w2, s, p_exp, offset } => (
            QPowerTail { q: *q, f: *f, w1: *w1, w2: *w2, s: s * k, p_exp: *p_exp, offset: *offset },
            0.0,
        ),
        BoxIndicator { lo, hi } => (BoxIndicator { lo: lo / k, hi: hi / k }, 0.0),
        Sum(parts) => {
            let mut out = Vec::with_capacity(parts.len());
            let mut total = 0.0;
            for part in parts {
                let (c, cst) = scale_arg(part, k)?;
                total += cst;
                match c {
                    Sum(inner) => out.extend(inner),
                    Zero => {}
                    other => out.push(other),
                }
            }
            (Sum(out), total)
        }
        MinSplit { c1, c2, theta_lo, theta_hi } => {
            let (s1, k1) = scale_arg(c1, k)?;
            let (s2, k2) = scale_arg(c2, k)?;
            (
                MinSplit {
                    c1: Box::new(s1),
                    c2: Box::new(s2),
                    theta_lo: theta_lo / k,
                    theta_hi: theta_hi / k,
                },
                k1 + k2,
            )
        }
    })
}

/// Folds shifted pieces into an edge plan: linear/constant parts, barrier
/// groups, and interval bounds intersected with [cap_lo, cap_hi].
fn plan_edge(
    tail: usize,
    head: usize,
    cap_lo: f64,
    cap_hi: f64,
    pieces: Vec<(f64, ScalarCost)>,
) -> Result<(EdgeSpec, f64), SolveError> {
    let mut lin = 0.0;
    let mut constant = 0.0;
    let mut groups = Vec::new();
    let (mut lo, mut hi) = (cap_lo, cap_hi);
    for (shift, piece) in &pieces {
        let lifted = lift(piece)?;
        lin += lifted.linear;
        constant += lifted.linear * shift;
        for g in lifted.groups {
            groups.push((*shift, g));
        }
        if let Some((blo, bhi)) = lifted.bounds {
            lo = lo.max(blo - shift);
            hi = hi.min(bhi - shift);
        }
    }
    if lo > hi {
        return Err(SolveError::Infeasible("edge interval is empty".into()));
    }
    // Linear parts feed the barrier objective directly; strip them from the
    // evaluation pieces to avoid double counting there.
    let eval_pieces = pieces
        .into_iter()
        .map(|(sh, c)| (sh, strip_linear(c)))
        .filter(|(_, c)| !matches!(c, ScalarCost::Zero))
        .collect();
    Ok((EdgeSpec { tail, head, lo, hi, pieces: eval_pieces, lin, groups }, constant))
}

fn strip_linear(cost: ScalarCost) -> ScalarCost {
    match cost {
        ScalarCost::Linear { .. } | ScalarCost::BoxIndicator { .. } => ScalarCost::Zero,
        ScalarCost::Sum(parts) => {
            let kept: Vec<ScalarCost> = parts
                .into_iter()
                .map(strip_linear)
                .filter(|c| !matches!(c, ScalarCost::Zero))
                .collect();
            match kept.len() {
                0 => ScalarCost::Zero,
                1 => kept.into_iter().next().unwrap(),
                _ => ScalarCost::Sum(kept),
            }
        }
        other => other,
    }
}

/// Expands a flow problem so that every edge cost is barrier-representable.
/// Each split on an edge of capacity u becomes a parallel pair between two
/// fresh vertices: one leg carries c1 shifted by theta_lo on [0, t_hi-t_lo],
/// the other carries c2 shifted by theta_hi on [0, u - t_lo + t_hi], and the
/// fresh vertices take demands +-(t_hi - t_lo). Splits with a point interval
/// need no surgery and fold into the edge directly.
pub(crate) fn expand(
    nv: usize,
    tails: &[usize],
    heads: &[usize],
    caps: &[f64],
    costs: &[ScalarCost],
    demand: &[f64],
) -> Result<Expanded, SolveError> {
    let mut out = Expanded {
        nv,
        edges: Vec::new(),
        demand: demand.to_vec(),
        constant: 0.0,
        through: Vec::with_capacity(tails.len()),
    };
    for e in 0..tails.len() {
        let cap = caps[e];
        let mut first_leg: Vec<(f64, ScalarCost)> = Vec::new();
        let mut splits = Vec::new();
        normalize(&costs[e], 0.0, &mut first_leg, &mut splits, &mut out.constant)?;
        if !out.constant.is_finite() {
            return Err(SolveError::invalid("split core is infeasible at its fixed point"));
        }
        for sp in &splits {
            if sp.theta_hi > cap {
                return Err(SolveError::invalid("split interval exceeds edge capacity"));
            }
        }

        let mut from = tails[e];
        out.through.push(out.edges.len());
        if splits.is_empty() {
            let (spec, cst) = plan_edge(from, heads[e], 0.0, cap, first_leg)?;
            out.constant += cst;
            out.edges.push(spec);
            continue;
        }
        for (i, sp) in splits.iter().enumerate() {
            let width = sp.theta_hi - sp.theta_lo;
            let a_plus = out.nv;
            let b_plus = out.nv + 1;
            out.nv += 2;
            out.demand.push(width);
            out.demand.push(-width);
            let last = i + 1 == splits.len();
            let to = if last { heads[e] } else { out.nv };
            if !last {
                out.nv += 1;
                out.demand.push(0.0);
            }
            // Entry leg (carries the through-flow; smooth pieces ride on the
            // first one), the parallel pair, then the exit leg.
            let entry = std::mem::take(&mut first_leg);
            let (spec, cst) = plan_edge(from, a_plus, 0.0, cap, entry)?;
            out.constant += cst;
            out.edges.push(spec);
            let (spec, cst) =
                plan_edge(a_plus, b_plus, 0.0, width, vec![(sp.theta_lo, sp.c1.clone())])?;
            out.constant += cst;
            out.edges.push(spec);
            let (spec, cst) = plan_edge(
                a_plus,
                b_plus,
                0.0,
                cap - sp.theta_lo + sp.theta_hi,
                vec![(sp.shift - sp.theta_hi, sp.c2.clone())],
            )?;
            out.constant += cst;
            out.edges.push(spec);
            let (spec, cst) = plan_edge(b_plus, to, 0.0, cap, Vec::new())?;
            out.constant += cst;
            out.edges.push(spec);
            from = to;
        }
    }
    Ok(out)
}
