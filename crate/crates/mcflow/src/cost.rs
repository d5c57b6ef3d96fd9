//! Scalar convex cost pieces, their split into barrier-representable parts,
//! and the self-concordant epigraph barriers the flow solver Newton steps on.
//!
//! Cost values are exact closed forms. Barriers report a conservative
//! complexity weight `nu` used by the path-following termination rule, and
//! every gradient and hessian here is checked against finite differences in
//! the test suite.

use crate::error::SolveError;
use crate::util::{golden_min, powi};

/// Quadratic near zero, q-power in the tail. For f = 0 this is |x|^q.
/// Requires 1 < q <= 2 and f >= 0; continuous with continuous derivative
/// at |x| = f.
pub fn gamma_q(x: f64, f: f64, q: f64) -> f64 {
    assert!(q > 1.0 && q <= 2.0, "gamma_q exponent must lie in (1, 2]");
    assert!(f >= 0.0, "gamma_q breakpoint must be nonnegative");
    let ax = x.abs();
    if ax <= f && f > 0.0 {
        0.5 * q * f.powf(q - 2.0) * x * x
    } else {
        ax.powf(q) - (1.0 - 0.5 * q) * f.powf(q)
    }
}

fn gamma_q_d1(x: f64, f: f64, q: f64) -> f64 {
    let ax = x.abs();
    if ax <= f && f > 0.0 {
        q * f.powf(q - 2.0) * x
    } else if ax == 0.0 {
        0.0
    } else {
        q * ax.powf(q - 1.0) * x.signum()
    }
}

/// Left-branch convention at |x| = f: the quadratic branch value.
fn gamma_q_d2(x: f64, f: f64, q: f64) -> f64 {
    let ax = x.abs();
    if ax <= f && f > 0.0 {
        q * f.powf(q - 2.0)
    } else {
        q * (q - 1.0) * ax.powf(q - 2.0)
    }
}

/// Single-variable convex cost. `MinSplit` is an infimal convolution with
/// the first summand confined to an interval; nesting depth is at most one.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarCost {
    Zero,
    /// a*x.
    Linear { a: f64 },
    /// a*x^2 with a >= 0.
    Quadratic { a: f64 },
    /// w*x^p with w >= 0 and integer p >= 2; convex usage is x >= 0.
    Power { w: f64, p_exp: u32 },
    /// w*(x+xi)*log(x+xi) on x+xi > 0, w >= 0.
    ShiftedEntropy { w: f64, xi: f64 },
    /// w1*(gamma_q(s*x; f) + w2)^p.
    GammaPow { q: f64, f: f64, w1: f64, w2: f64, s: f64, p_exp: u32 },
    /// max over both signs of w1*(max(0, f + sign*s*x)^q + w2)^p, minus
    /// `offset`. This is the tail part produced by [`gamma_split`]; w2 may
    /// be negative there, the maximum construction stays convex.
    QPowerTail { q: f64, f: f64, w1: f64, w2: f64, s: f64, p_exp: u32, offset: f64 },
    /// 0 on [lo, hi], +infinity outside.
    BoxIndicator { lo: f64, hi: f64 },
    Sum(Vec<ScalarCost>),
    /// min over a+b = x, a in [theta_lo, theta_hi] of c1(a) + c2(b).
    MinSplit { c1: Box<ScalarCost>, c2: Box<ScalarCost>, theta_lo: f64, theta_hi: f64 },
}

impl ScalarCost {
    pub fn validate(&self) -> Result<(), SolveError> {
        use ScalarCost::*;
        match self {
            Zero | Linear { .. } => Ok(()),
            Quadratic { a } => {
                if *a < 0.0 {
                    return Err(SolveError::invalid("quadratic coefficient must be >= 0"));
                }
                Ok(())
            }
            Power { w, p_exp } => {
                if *w < 0.0 || *p_exp < 2 {
                    return Err(SolveError::invalid("power cost needs w >= 0 and p >= 2"));
                }
                Ok(())
            }
            ShiftedEntropy { w, xi } => {
                if *w < 0.0 || *xi < 0.0 {
                    return Err(SolveError::invalid("entropy cost needs w >= 0 and xi >= 0"));
                }
                Ok(())
            }
            GammaPow { q, f, w1, s: _, w2: _, p_exp } => {
                if !(*q > 1.0 && *q <= 2.0) || *f < 0.0 || *w1 < 0.0 || *p_exp < 1 {
                    return Err(SolveError::invalid("malformed gamma-power cost"));
                }
                Ok(())
            }
            QPowerTail { q, f, w1, p_exp, .. } => {
                if !(*q > 1.0 && *q <= 2.0) || *f < 0.0 || *w1 < 0.0 || *p_exp < 1 {
                    return Err(SolveError::invalid("malformed q-power tail cost"));
                }
                Ok(())
            }
            BoxIndicator { lo, hi } => {
                if lo > hi {
                    return Err(SolveError::invalid("empty box indicator"));
                }
                Ok(())
            }
            Sum(parts) => {
                if parts.len() > 8 {
                    return Err(SolveError::invalid("cost sums are limited to 8 parts"));
                }
                parts.iter().try_for_each(|c| c.validate())
            }
            MinSplit { c1, c2, theta_lo, theta_hi } => {
                if theta_lo > theta_hi {
                    return Err(SolveError::invalid("empty split interval"));
                }
                if c1.contains_minsplit() || c2.contains_minsplit() {
                    return Err(SolveError::invalid("split parts must not nest further splits"));
                }
                c1.validate()?;
                c2.validate()
            }
        }
    }

    pub fn contains_minsplit(&self) -> bool {
        match self {
            ScalarCost::MinSplit { .. } => true,
            ScalarCost::Sum(parts) => parts.iter().any(|c| c.contains_minsplit()),
            _ => false,
        }
    }

    /// +infinity outside a box indicator's interval.
    pub fn eval(&self, x: f64) -> f64 {
        use ScalarCost::*;
        match self {
            Zero => 0.0,
            Linear { a } => a * x,
            Quadratic { a } => a * x * x,
            Power { w, p_exp } => w * powi(x, *p_exp as usize),
            ShiftedEntropy { w, xi } => {
                let u = x + xi;
                if u == 0.0 { 0.0 } else { w * u * u.ln() }
            }
            GammaPow { q, f, w1, w2, s, p_exp } => {
                w1 * powi(gamma_q(s * x, *f, *q) + w2, *p_exp as usize)
            }
            QPowerTail { q, f, w1, w2, s, p_exp, offset } => {
                let u = f + (s * x).abs();
                w1 * powi(u.powf(*q) + w2, *p_exp as usize) - offset
            }
            BoxIndicator { lo, hi } => {
                if x < *lo || x > *hi {
                    f64::INFINITY
                } else {
                    0.0
                }
            }
            Sum(parts) => parts.iter().map(|c| c.eval(x)).sum(),
            MinSplit { c1, c2, theta_lo, theta_hi } => {
                let (_, v) =
                    golden_min(|a| c1.eval(a) + c2.eval(x - a), *theta_lo, *theta_hi, 140);
                v
            }
        }
    }

    /// First derivative. Exact for smooth variants; the split uses the
    /// envelope rule at the numerically located inner optimum.
    pub fn deriv1(&self, x: f64) -> f64 {
        use ScalarCost::*;
        match self {
            Zero | BoxIndicator { .. } => 0.0,
            Linear { a } => *a,
            Quadratic { a } => 2.0 * a * x,
            Power { w, p_exp } => w * *p_exp as f64 * powi(x, (*p_exp - 1) as usize),
            ShiftedEntropy { w, xi } => w * (1.0 + (x + xi).ln()),
            GammaPow { q, f, w1, w2, s, p_exp } => {
                let p = *p_exp as usize;
                let inner = gamma_q(s * x, *f, *q) + w2;
                w1 * p as f64 * powi(inner, p - 1) * gamma_q_d1(s * x, *f, *q) * s
            }
            QPowerTail { q, f, w1, w2, s, p_exp, .. } => {
                // Active piece matches the sign of s*x; convention +1 at 0.
                let sg = if s * x < 0.0 { -1.0 } else { 1.0 };
                let u = f + sg * s * x;
                let p = *p_exp as usize;
                let inner = u.powf(*q) + w2;
                w1 * p as f64 * powi(inner, p - 1) * *q * u.powf(q - 1.0) * sg * s
            }
            Sum(parts) => parts.iter().map(|c| c.deriv1(x)).sum(),
            MinSplit { c1, c2, theta_lo, theta_hi } => {
                let (a, _) =
                    golden_min(|a| c1.eval(a) + c2.eval(x - a), *theta_lo, *theta_hi, 140);
                c2.deriv1(x - a)
            }
        }
    }

    /// Second derivative with the left-branch convention at breakpoints.
    /// The split variant is a central difference of [`Self::deriv1`],
    /// intended for diagnostics only.
    pub fn deriv2(&self, x: f64) -> f64 {
        use ScalarCost::*;
        match self {
            Zero | Linear { .. } | BoxIndicator { .. } => 0.0,
            Quadratic { a } => 2.0 * a,
            Power { w, p_exp } => {
                let p = *p_exp as f64;
                w * p * (p - 1.0) * powi(x, (*p_exp - 2) as usize)
            }
            ShiftedEntropy { w, xi } => w / (x + xi),
            GammaPow { q, f, w1, w2, s, p_exp } => {
                let p = *p_exp as usize;
                let inner = gamma_q(s * x, *f, *q) + w2;
                let d1 = gamma_q_d1(s * x, *f, *q);
                let d2 = gamma_q_d2(s * x, *f, *q);
                let curv = if p >= 2 {
                    (p * (p - 1)) as f64 * powi(inner, p - 2) * d1 * d1
                } else {
                    0.0
                };
                w1 * (curv + p as f64 * powi(inner, p - 1) * d2) * s * s
            }
            QPowerTail { q, f, w1, w2, s, p_exp, .. } => {
                let sg = if s * x < 0.0 { -1.0 } else { 1.0 };
                let u = f + sg * s * x;
                if u == 0.0 && *q < 2.0 {
                    return f64::INFINITY;
                }
                let p = *p_exp as usize;
                let inner = u.powf(*q) + w2;
                let du = q * u.powf(q - 1.0);
                let curv = if p >= 2 {
                    (p * (p - 1)) as f64 * powi(inner, p - 2) * du * du
                } else {
                    0.0
                };
                w1 * (curv + p as f64 * powi(inner, p - 1) * q * (q - 1.0) * u.powf(q - 2.0))
                    * s
                    * s
            }
            Sum(parts) => parts.iter().map(|c| c.deriv2(x)).sum(),
            MinSplit { .. } => {
                let h = 1e-5 * (1.0 + x.abs());
                (self.deriv1(x + h) - self.deriv1(x - h)) / (2.0 * h)
            }
        }
    }

    /// eval(x+dx) - eval(x) computed without cancellation for the smooth
    /// variants. Needed when dx is many orders below x.
    pub fn delta_eval(&self, x: f64, dx: f64) -> f64 {
        use ScalarCost::*;
        match self {
            Zero | BoxIndicator { .. } => 0.0,
            Linear { a } => a * dx,
            Quadratic { a } => a * dx * (2.0 * x + dx),
            Power { w, p_exp } => {
                // (x+dx)^p - x^p = dx * sum_j (x+dx)^j x^(p-1-j).
                let p = *p_exp as usize;
                let y = x + dx;
                let mut acc = 0.0;
                for j in 0..p {
                    acc += powi(y, j) * powi(x, p - 1 - j);
                }
                w * dx * acc
            }
            ShiftedEntropy { w, xi } => {
                let u = x + xi;
                let u2 = u + dx;
                if u <= 0.0 || u2 <= 0.0 {
                    return self.eval(x + dx) - self.eval(x);
                }
                w * (dx * u.ln() + u2 * (dx / u).ln_1p())
            }
            Sum(parts) => parts.iter().map(|c| c.delta_eval(x, dx)).sum(),
            _ => self.eval(x + dx) - self.eval(x),
        }
    }
}

/// Splits w1*(gamma_q(s*x; f)+w2)^p into an interval-confined quadratic-core
/// part and an unconstrained tail so that
/// cost(x) = min over a+b = x, a in the interval, of c1(a) + c2(b).
/// Both parts are barrier-representable; the original is not.
pub fn gamma_split(cost: &ScalarCost) -> Result<(ScalarCost, ScalarCost, (f64, f64)), SolveError> {
    let ScalarCost::GammaPow { q, f, w1, w2, s, p_exp } = *cost else {
        return Err(SolveError::invalid("only gamma-power costs split"));
    };
    cost.validate()?;
    let half = if s == 0.0 { 0.0 } else { f / s.abs() };
    let core_scale = if f == 0.0 { 0.0 } else { s.abs() * (0.5 * q * f.powf(q - 2.0)).sqrt() };
    let c1 = ScalarCost::QPowerTail {
        q: 2.0,
        f: 0.0,
        w1,
        w2,
        s: core_scale,
        p_exp,
        offset: 0.0,
    };
    let c2 = ScalarCost::QPowerTail {
        q,
        f,
        w1,
        w2: w2 - (1.0 - 0.5 * q) * f.powf(q),
        s,
        p_exp,
        offset: w1 * powi(0.5 * q * f.powf(q) + w2, p_exp as usize),
    };
    Ok((c1, c2, (-half, half)))
}

/// Value, gradient, and hessian of a barrier at one interior point.
#[derive(Debug, Clone, Copy)]
pub struct BarrierPoint {
    pub value: f64,
    /// d/dx, d/dt.
    pub grad: [f64; 2],
    /// Row-major [[xx, xt], [tx, tt]].
    pub hess: [[f64; 2]; 2],
}

/// One self-concordant barrier piece. Epigraph pieces constrain a lifted
/// coordinate t from below; `BoxFaces` constrains x alone.
#[derive(Debug, Clone, PartialEq)]
pub enum Barrier {
    /// Epigraph of w*(x+xi)log(x+xi); domain additionally needs x + shift > 0.
    /// A positive shift keeps points with x = 0 strictly interior.
    Entropy { w: f64, xi: f64, shift: f64 },
    /// Epigraph of w*|x|^p.
    PowerEpi { w: f64, p_exp: u32 },
    /// Epigraph of one signed tail piece
    /// w1*(max(0, f + sigma*s*x)^q + w2)^p - offset.
    QPiece { q: f64, f: f64, w1: f64, w2: f64, s: f64, p_exp: u32, offset: f64, sigma: f64 },
    /// log barrier on lo <= x <= hi; ignores t.
    BoxFaces { lo: f64, hi: f64 },
}

impl Barrier {
    pub fn uses_t(&self) -> bool {
        !matches!(self, Barrier::BoxFaces { .. })
    }

    /// Complexity weight for the termination rule; conservative per piece.
    pub fn nu(&self) -> f64 {
        match self {
            Barrier::Entropy { .. } => 2.0,
            Barrier::PowerEpi { .. } => 4.0,
            Barrier::QPiece { .. } => 4.0,
            Barrier::BoxFaces { .. } => 2.0,
        }
    }

    /// Smallest admissible t at this x (the underlying cost value).
    pub fn cost_at(&self, x: f64) -> f64 {
        match self {
            Barrier::Entropy { w, xi, .. } => {
                let u = x + xi;
                if u == 0.0 { 0.0 } else { w * u * u.ln() }
            }
            Barrier::PowerEpi { w, p_exp } => w * powi(x.abs(), *p_exp as usize),
            Barrier::QPiece { q, f, w1, w2, s, p_exp, offset, sigma } => {
                let u = (f + sigma * s * x).max(0.0);
                w1 * powi(u.powf(*q) + w2, *p_exp as usize) - offset
            }
            Barrier::BoxFaces { .. } => 0.0,
        }
    }

    /// None outside the (open) barrier domain.
    pub fn eval(&self, x: f64, t: f64) -> Option<BarrierPoint> {
        match *self {
            Barrier::Entropy { w, xi, shift } => {
                let xs = x + shift;
                let u = x + xi;
                if xs <= 0.0 || u <= 0.0 {
                    return None;
                }
                let g = w * u * u.ln();
                let d = t - g;
                if d <= 0.0 {
                    return None;
                }
                let g1 = w * (1.0 + u.ln());
                let g2 = w / u;
                Some(BarrierPoint {
                    value: -d.ln() - xs.ln(),
                    grad: [g1 / d - 1.0 / xs, -1.0 / d],
                    hess: [
                        [g2 / d + g1 * g1 / (d * d) + 1.0 / (xs * xs), -g1 / (d * d)],
                        [-g1 / (d * d), 1.0 / (d * d)],
                    ],
                })
            }
            Barrier::PowerEpi { w, p_exp } => {
                if t <= 0.0 {
                    return None;
                }
                let p = p_exp as f64;
                let wp = w.powf(2.0 / p);
                let s = t.powf(2.0 / p);
                let d = s - wp * x * x;
                if d <= 0.0 {
                    return None;
                }
                let s1 = (2.0 / p) * s / t;
                let s2 = (2.0 / p) * (2.0 / p - 1.0) * s / (t * t);
                Some(BarrierPoint {
                    value: -2.0 * t.ln() - d.ln(),
                    grad: [2.0 * wp * x / d, -2.0 / t - s1 / d],
                    hess: [
                        [2.0 * wp / d + 4.0 * wp * wp * x * x / (d * d), -2.0 * wp * x * s1 / (d * d)],
                        [
                            -2.0 * wp * x * s1 / (d * d),
                            2.0 / (t * t) - s2 / d + s1 * s1 / (d * d),
                        ],
                    ],
                })
            }
            Barrier::QPiece { q, f, w1, w2, s, p_exp, offset, sigma } => {
                let tp = t + offset;
                if tp <= 0.0 || w1 <= 0.0 {
                    return None;
                }
                let p = p_exp as f64;
                let tau = (tp / w1).powf(1.0 / p);
                let a = tau - w2;
                if a <= 0.0 {
                    return None;
                }
                let gv = a.powf(1.0 / q);
                let u = f + sigma * s * x;
                let d = gv - u;
                if d <= 0.0 {
                    return None;
                }
                let tau1 = tau / (p * tp);
                let tau2 = tau1 * (1.0 / p - 1.0) / tp;
                let g1 = (1.0 / q) * a.powf(1.0 / q - 1.0) * tau1;
                let g2 = (1.0 / q) * (1.0 / q - 1.0) * a.powf(1.0 / q - 2.0) * tau1 * tau1
                    + (1.0 / q) * a.powf(1.0 / q - 1.0) * tau2;
                let dx = sigma * s;
                Some(BarrierPoint {
                    value: -d.ln() - a.ln() - tp.ln(),
                    grad: [dx / d, -g1 / d - tau1 / a - 1.0 / tp],
                    hess: [
                        [dx * dx / (d * d), -dx * g1 / (d * d)],
                        [
                            -dx * g1 / (d * d),
                            -g2 / d + g1 * g1 / (d * d) + tau1 * tau1 / (a * a) - tau2 / a
                                + 1.0 / (tp * tp),
                        ],
                    ],
                })
            }
            Barrier::BoxFaces { lo, hi } => {
                if x <= lo || x >= hi {
                    return None;
                }
                let dl = x - lo;
                let dh = hi - x;
                Some(BarrierPoint {
                    value: -dl.ln() - dh.ln(),
                    grad: [-1.0 / dl + 1.0 / dh, 0.0],
                    hess: [[1.0 / (dl * dl) + 1.0 / (dh * dh), 0.0], [0.0, 0.0]],
                })
            }
        }
    }
}

/// Barriers that jointly constrain one lifted epigraph coordinate.
#[derive(Debug, Clone, Default)]
pub struct TGroup {
    pub barriers: Vec<Barrier>,
}

impl TGroup {
    pub fn nu(&self) -> f64 {
        self.barriers.iter().map(|b| b.nu()).sum()
    }

    /// Smallest admissible t at x.
    pub fn cost_at(&self, x: f64) -> f64 {
        self.barriers.iter().map(|b| b.cost_at(x)).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Epigraph form of a cost: a linear part kept in the objective, one lifted
/// coordinate per group, and an optional hard interval.
#[derive(Debug, Clone, Default)]
pub struct LiftedCost {
    pub linear: f64,
    pub groups: Vec<TGroup>,
    pub bounds: Option<(f64, f64)>,
}

impl LiftedCost {
    fn merge(&mut self, other: LiftedCost) {
        self.linear += other.linear;
        self.groups.extend(other.groups);
        self.bounds = match (self.bounds, other.bounds) {
            (None, b) => b,
            (b, None) => b,
            (Some((l1, h1)), Some((l2, h2))) => Some((l1.max(l2), h1.min(h2))),
        };
    }
}

/// Decomposes a cost into its epigraph form. Gamma-power and split costs are
/// rejected; they must go through [`gamma_split`] and the graph gadget first.
pub fn lift(cost: &ScalarCost) -> Result<LiftedCost, SolveError> {
    use ScalarCost::*;
    let mut out = LiftedCost::default();
    match cost {
        Zero => {}
        Linear { a } => out.linear = *a,
        Quadratic { a } => {
            if *a > 0.0 {
                out.groups.push(TGroup { barriers: vec![Barrier::PowerEpi { w: *a, p_exp: 2 }] });
            }
        }
        Power { w, p_exp } => {
            if *w > 0.0 {
                out.groups
                    .push(TGroup { barriers: vec![Barrier::PowerEpi { w: *w, p_exp: *p_exp }] });
            }
        }
        ShiftedEntropy { w, xi } => {
            if *w > 0.0 {
                out.groups.push(TGroup {
                    barriers: vec![Barrier::Entropy { w: *w, xi: *xi, shift: 0.0 }],
                });
            }
        }
        QPowerTail { q, f, w1, w2, s, p_exp, offset } => {
            if *w1 > 0.0 {
                let piece = |sigma: f64| Barrier::QPiece {
                    q: *q,
                    f: *f,
                    w1: *w1,
                    w2: *w2,
                    s: *s,
                    p_exp: *p_exp,
                    offset: *offset,
                    sigma,
                };
                out.groups.push(TGroup { barriers: vec![piece(1.0), piece(-1.0)] });
            }
        }
        BoxIndicator { lo, hi } => out.bounds = Some((*lo, *hi)),
        Sum(parts) => {
            for part in parts {
                out.merge(lift(part)?);
            }
        }
        GammaPow { .. } | MinSplit { .. } => {
            return Err(SolveError::invalid(
                "cost is not barrier-representable; split it onto a gadget first",
            ));
        }
    }
    Ok(out)
}
