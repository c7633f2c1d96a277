//! Small numerical toolbox: adaptive quadrature, bisection, and a dense
//! Levenberg–Marquardt fitter for the handful of low-dimensional fits the
//! analysis needs.

use crate::error::{Error, Result};

const QUAD_EPS: f64 = 1e-12;

#[inline]
fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

fn adaptive<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    eps: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * eps {
        left + right + delta / 15.0
    } else {
        adaptive(f, a, m, fa, flm, fm, left, 0.5 * eps, depth - 1)
            + adaptive(f, m, b, fm, frm, fb, right, 0.5 * eps, depth - 1)
    }
}

/// Adaptive Simpson quadrature of `f` on `[a, b]` with absolute tolerance `eps`.
pub fn quad<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, eps: Option<f64>) -> f64 {
    let eps = eps.unwrap_or(QUAD_EPS);
    let fa = f(a);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let fb = f(b);
    let whole = simpson(a, b, fa, fm, fb);
    adaptive(&f, a, b, fa, fm, fb, whole, eps, 48)
}

/// Bisection root of a continuous `f` on `[lo, hi]`; `f(lo)` and `f(hi)`
/// must have opposite signs. Converges to relative tolerance `rel_tol`.
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, rel_tol: f64) -> Result<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::Bracketing(format!(
            "f({lo}) = {flo} and f({hi}) = {fhi} have the same sign"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
        if (hi - lo).abs() <= rel_tol * hi.abs().max(lo.abs()).max(f64::MIN_POSITIVE) {
            return Ok(0.5 * (lo + hi));
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Result of a least-squares fit.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub params: Vec<f64>,
    /// Parameter covariance, row-major `n × n`.
    pub covariance: Vec<Vec<f64>>,
    pub chi2: f64,
    pub iterations: usize,
}

/// Levenberg–Marquardt minimization of `Σ (y_i − model(x_i, p))²`.
///
/// `model(x, p)` evaluates the model, `jac(x, p, out)` fills `out` with
/// ∂model/∂p_j. Intended for the 1–3 parameter fits used here; dense
/// Gaussian elimination is plenty.
pub fn levenberg_marquardt<M, J>(
    xs: &[f64],
    ys: &[f64],
    init: &[f64],
    model: M,
    jac: J,
) -> Result<FitOutcome>
where
    M: Fn(f64, &[f64]) -> f64,
    J: Fn(f64, &[f64], &mut [f64]),
{
    let n = init.len();
    assert_eq!(xs.len(), ys.len());
    if xs.len() < n + 1 {
        return Err(Error::DegenerateData(format!(
            "{} points cannot constrain {} parameters",
            xs.len(),
            n
        )));
    }
    let chi2_of = |p: &[f64]| -> f64 {
        xs.iter()
            .zip(ys)
            .map(|(&x, &y)| {
                let r = y - model(x, p);
                r * r
            })
            .sum()
    };

    let mut p = init.to_vec();
    let mut chi2 = chi2_of(&p);
    let mut lambda = 1e-3;
    let mut grad_row = vec![0.0; n];
    let max_iter = 300usize;
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..max_iter {
        iterations = iter + 1;
        // Build normal equations J^T J and J^T r.
        let mut jtj = vec![vec![0.0; n]; n];
        let mut jtr = vec![0.0; n];
        for (&x, &y) in xs.iter().zip(ys) {
            jac(x, &p, &mut grad_row);
            let r = y - model(x, &p);
            for j in 0..n {
                jtr[j] += grad_row[j] * r;
                for k in 0..=j {
                    jtj[j][k] += grad_row[j] * grad_row[k];
                }
            }
        }
        for j in 0..n {
            for k in (j + 1)..n {
                jtj[j][k] = jtj[k][j];
            }
        }

        // Damped step; retry with a larger lambda when chi2 does not improve.
        let mut improved = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for (j, row) in a.iter_mut().enumerate() {
                row[j] += lambda * jtj[j][j].max(1e-30);
            }
            let Some(step) = solve(&mut a, &jtr) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = p.iter().zip(&step).map(|(pi, si)| pi + si).collect();
            let trial_chi2 = chi2_of(&trial);
            if trial_chi2.is_finite() && trial_chi2 <= chi2 {
                let rel = (chi2 - trial_chi2) / chi2.max(1e-300);
                let small_step = step
                    .iter()
                    .zip(&p)
                    .all(|(s, pi)| s.abs() <= 1e-12 * pi.abs().max(1e-12));
                p = trial;
                chi2 = trial_chi2;
                lambda = (lambda * 0.3).max(1e-12);
                improved = true;
                if rel < 1e-14 || small_step {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            // Stuck: either converged at a minimum or hopeless.
            converged = chi2.is_finite();
            break;
        }
        if converged {
            break;
        }
    }

    // Exhausting the budget with a finite chi2 means a flat valley
    // (parameters trade off); the best point found is the answer.
    if !converged && !chi2.is_finite() {
        return Err(Error::NonConvergence {
            what: "least-squares fit".into(),
            iterations: max_iter,
        });
    }

    // Covariance = s² (J^T J)^{-1} with s² the residual variance.
    let mut jtj = vec![vec![0.0; n]; n];
    for &x in xs {
        jac(x, &p, &mut grad_row);
        for j in 0..n {
            for k in 0..=j {
                jtj[j][k] += grad_row[j] * grad_row[k];
            }
        }
    }
    for j in 0..n {
        for k in (j + 1)..n {
            jtj[j][k] = jtj[k][j];
        }
    }
    let dof = (xs.len().saturating_sub(n)).max(1) as f64;
    let s2 = chi2 / dof;
    let cov = invert(&jtj)
        .map(|inv| {
            inv.iter()
                .map(|row| row.iter().map(|v| v * s2).collect())
                .collect()
        })
        .unwrap_or_else(|| vec![vec![f64::NAN; n]; n]);

    Ok(FitOutcome {
        params: p,
        covariance: cov,
        chi2,
        iterations,
    })
}

/// Solve `a x = b` in place by Gaussian elimination with partial pivoting.
fn solve(a: &mut [Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut x = b.to_vec();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        x.swap(col, pivot);
        for row in (col + 1)..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            x[row] -= f * x[col];
        }
    }
    for col in (0..n).rev() {
        x[col] /= a[col][col];
        for row in 0..col {
            x[row] -= a[row][col] * x[col];
        }
    }
    Some(x)
}

fn invert(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let mut work: Vec<Vec<f64>> = a.to_vec();
        cols.push(solve(&mut work, &e)?);
    }
    // cols[j] is the j-th column of the inverse.
    let mut inv = vec![vec![0.0; n]; n];
    for (j, col) in cols.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            inv[i][j] = *v;
        }
    }
    Some(inv)
}

/// Golden-section maximization of a unimodal function on `[lo, hi]`.
pub fn golden_max<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, rel_tol: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = hi - INV_PHI * (hi - lo);
    let mut d = lo + INV_PHI * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    while (hi - lo).abs() > rel_tol * (lo.abs() + hi.abs()).max(1e-300) {
        if fc > fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - INV_PHI * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + INV_PHI * (hi - lo);
            fd = f(d);
        }
    }
    0.5 * (lo + hi)
}
