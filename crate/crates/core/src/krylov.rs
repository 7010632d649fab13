//! Restarted GMRES for the Newton steps of the thermal solver.

use crate::parallel::{self, Execution};

pub(crate) fn dot(exec: Execution, a: &[f64], b: &[f64]) -> f64 {
    parallel::map_sum(exec, 0..a.len(), |i| a[i] * b[i])
}

pub(crate) fn norm(exec: Execution, a: &[f64]) -> f64 {
    dot(exec, a, a).sqrt()
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct GmresOutcome {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Solve `A x = b` from `x = 0`, stopping when `|r| <= rtol |b|`.
pub(crate) fn gmres<A>(
    exec: Execution,
    mut apply: A,
    b: &[f64],
    restart: usize,
    max_iter: usize,
    rtol: f64,
) -> (Vec<f64>, GmresOutcome)
where
    A: FnMut(&[f64]) -> Vec<f64>,
{
    let n = b.len();
    let mut x = vec![0.0; n];
    let bnorm = norm(exec, b);
    if bnorm == 0.0 {
        return (
            x,
            GmresOutcome {
                iterations: 0,
                relative_residual: 0.0,
            },
        );
    }
    let mut total = 0;
    let mut rel = 1.0;
    while total < max_iter {
        let r: Vec<f64> = if total == 0 {
            b.to_vec()
        } else {
            let ax = apply(&x);
            b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect()
        };
        let beta = norm(exec, &r);
        rel = beta / bnorm;
        if rel <= rtol {
            break;
        }
        let m = restart.min(max_iter - total).max(1);
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        basis.push(r.iter().map(|v| v / beta).collect());
        // Hessenberg columns, already rotated.
        let mut h: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut cs: Vec<f64> = Vec::with_capacity(m);
        let mut sn: Vec<f64> = Vec::with_capacity(m);
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..m {
            let mut w = apply(&basis[k]);
            let mut col = vec![0.0; k + 2];
            // Modified Gram-Schmidt.
            for (j, vj) in basis.iter().enumerate() {
                let hij = dot(exec, &w, vj);
                col[j] = hij;
                w.iter_mut().zip(vj).for_each(|(wi, vi)| *wi -= hij * vi);
            }
            let wn = norm(exec, &w);
            col[k + 1] = wn;
            for j in 0..k {
                let t = cs[j] * col[j] + sn[j] * col[j + 1];
                col[j + 1] = -sn[j] * col[j] + cs[j] * col[j + 1];
                col[j] = t;
            }
            let denom = col[k].hypot(col[k + 1]);
            let (c, s) = if denom == 0.0 {
                (1.0, 0.0)
            } else {
                (col[k] / denom, col[k + 1] / denom)
            };
            cs.push(c);
            sn.push(s);
            col[k] = c * col[k] + s * col[k + 1];
            col[k + 1] = 0.0;
            g[k + 1] = -s * g[k];
            g[k] *= c;
            h.push(col);
            k_used = k + 1;
            total += 1;
            rel = g[k + 1].abs() / bnorm;
            if rel <= rtol || wn == 0.0 || total >= max_iter {
                break;
            }
            basis.push(w.iter().map(|v| v / wn).collect());
        }
        // Back substitution on the triangular system.
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in i + 1..k_used {
                s -= h[j][i] * y[j];
            }
            y[i] = s / h[i][i];
        }
        for (j, yj) in y.iter().enumerate() {
            x.iter_mut().zip(&basis[j]).for_each(|(xi, vi)| *xi += yj * vi);
        }
        if rel <= rtol {
            break;
        }
    }
    (
        x,
        GmresOutcome {
            iterations: total,
            relative_residual: rel,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_nonsymmetric_system() {
        let n = 30;
        let a = |v: &[f64]| -> Vec<f64> {
            (0..n)
                .map(|i| {
                    let mut s = (4.0 + i as f64 * 0.1) * v[i];
                    if i > 0 {
                        s -= v[i - 1];
                    }
                    if i + 1 < n {
                        s -= 0.5 * v[i + 1];
                    }
                    s
                })
                .collect()
        };
        let xtrue: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let b = a(&xtrue);
        for restart in [5, 40] {
            let (x, out) = gmres(Execution::Sequential, a, &b, restart, 500, 1e-12);
            assert!(out.relative_residual <= 1e-12);
            for (u, v) in x.iter().zip(&xtrue) {
                assert!((u - v).abs() < 1e-10);
            }
        }
    }
}
