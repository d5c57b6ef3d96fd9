//! Small numeric helpers shared across solver modules.

/// Golden-section search for the minimum of a unimodal function on [a, b].
/// Returns (argmin, min). `iters` golden steps shrink the bracket by
/// 0.618 each; 90 steps reach ~1e-17 relative width.
pub(crate) fn golden_min(mut f: impl FnMut(f64) -> f64, a0: f64, b0: f64, iters: usize) -> (f64, f64) {
    const INVPHI: f64 = 0.618_033_988_749_894_8;
    let (mut a, mut b) = (a0.min(b0), a0.max(b0));
    if a == b {
        return (a, f(a));
    }
    let mut c = b - INVPHI * (b - a);
    let mut d = a + INVPHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..iters {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INVPHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INVPHI * (b - a);
            fd = f(d);
        }
        if b - a <= f64::EPSILON * (1.0 + a.abs() + b.abs()) {
            break;
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// x^n for small integer n by repeated squaring; exact handling of n = 0.
pub(crate) fn powi(x: f64, n: usize) -> f64 {
    let mut acc = 1.0;
    let mut base = x;
    let mut e = n;
    while e > 0 {
        if e & 1 == 1 {
            acc *= base;
        }
        base *= base;
        e >>= 1;
    }
    acc
}

/// Solves a*x = b for symmetric positive definite a by Cholesky, in place.
/// Adds a small diagonal jitter and retries when a pivot loses positivity
/// to roundoff. Returns None when the matrix is genuinely not SPD.
pub(crate) fn solve_spd(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    if n == 0 {
        return Some(Vec::new());
    }
    // Symmetric scaling to unit diagonal keeps the factorization alive when
    // the diagonal spans many orders of magnitude, as it does for interior
    // points pressed against a subset of their interval walls.
    let scale: Vec<f64> =
        (0..n).map(|i| if a[i][i] > 0.0 { 1.0 / a[i][i].sqrt() } else { 1.0 }).collect();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            m[i][j] = a[i][j] * scale[i] * scale[j];
        }
    }
    let bs: Vec<f64> = (0..n).map(|i| b[i] * scale[i]).collect();

    let mut jitter = 0.0;
    'attempt: for _ in 0..4 {
        let mut l = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..=i {
                let mut s = m[i][j] + if i == j { jitter } else { 0.0 };
                for k in 0..j {
                    s -= l[i][k] * l[j][k];
                }
                if i == j {
                    if s <= 0.0 {
                        jitter = (jitter * 16.0).max(1e-15);
                        continue 'attempt;
                    }
                    l[i][j] = s.sqrt();
                } else {
                    l[i][j] = s / l[j][j];
                }
            }
        }
        let tri_solve = |r: &[f64]| -> Vec<f64> {
            let mut x = r.to_vec();
            for i in 0..n {
                for k in 0..i {
                    let t = l[i][k] * x[k];
                    x[i] -= t;
                }
                x[i] /= l[i][i];
            }
            for i in (0..n).rev() {
                for k in i + 1..n {
                    let t = l[k][i] * x[k];
                    x[i] -= t;
                }
                x[i] /= l[i][i];
            }
            x
        };
        let mut y = tri_solve(&bs);
        // Two refinement rounds against the unjittered scaled matrix claw
        // back the digits the factorization lost.
        for _ in 0..2 {
            let mut r = bs.clone();
            for i in 0..n {
                for (j, yj) in y.iter().enumerate() {
                    r[i] -= m[i][j] * yj;
                }
            }
            let d = tri_solve(&r);
            for i in 0..n {
                y[i] += d[i];
            }
        }
        return Some((0..n).map(|i| y[i] * scale[i]).collect());
    }
    None
}
