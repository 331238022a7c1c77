//! Small numerical building blocks shared across modules.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

/// Gauss-Legendre nodes and weights on [0, 1].
pub fn gauss_legendre(n: usize) -> &'static [(f64, f64)] {
    static CACHE: OnceLock<Vec<Vec<(f64, f64)>>> = OnceLock::new();
    let table = CACHE.get_or_init(|| (0..=32).map(compute_gauss_legendre).collect());
    &table[n.clamp(1, 32)]
}

fn compute_gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    if n == 0 {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        // Chebyshev initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pm1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((0.5 * (1.0 - x), 0.5 * w));
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

/// Brent's root finder on a bracketing interval.
pub fn brent_root<F: FnMut(f64) -> f64>(
    mut f: F,
    mut a: f64,
    mut b: f64,
    tol: f64,
    max_iter: usize,
) -> Option<f64> {
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return Some(a);
    }
    if fb == 0.0 {
        return Some(b);
    }
    if fa.signum() == fb.signum() {
        return None;
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * tol;
        let m = 0.5 * (c - b);
        if m.abs() <= tol1 || fb == 0.0 {
            return Some(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol1 * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = d;
            }
        } else {
            d = m;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(m) };
        fb = f(b);
    }
    None
}

/// Golden-section search for a minimum of a unimodal function on [a, b].
pub fn golden_min<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

#[derive(Debug, Clone)]
pub struct LmReport {
    pub params: Vec<f64>,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<f64>,
}

/// Levenberg-Marquardt minimisation of 0.5 * |r(p)|^2 with a forward-difference Jacobian.
pub fn levenberg_marquardt<F>(mut residuals: F, start: &[f64], max_iter: usize, tol: f64) -> LmReport
where
    F: FnMut(&[f64]) -> Option<Vec<f64>>,
{
    let n = start.len();
    let mut p = start.to_vec();
    let mut r = match residuals(&p) {
        Some(r) => r,
        None => {
            return LmReport {
                params: p,
                cost: f64::INFINITY,
                iterations: 0,
                converged: false,
                trace: vec![],
            }
        }
    };
    let m = r.len();
    let cost_of = |r: &[f64]| 0.5 * r.iter().map(|x| x * x).sum::<f64>();
    let mut cost = cost_of(&r);
    let mut lambda = 1e-3;
    let mut trace = vec![cost];
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..max_iter {
        iterations = it + 1;
        let mut jac = DMatrix::<f64>::zeros(m, n);
        for j in 0..n {
            let h = 1e-7 * p[j].abs().max(1e-3);
            let mut q = p.clone();
            q[j] += h;
            let Some(rq) = residuals(&q) else {
                continue;
            };
            for i in 0..m {
                jac[(i, j)] = (rq[i] - r[i]) / h;
            }
        }
        let rv = DVector::from_column_slice(&r);
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * &rv;
        if g.amax() < tol * tol {
            converged = true;
            break;
        }
        let mut improved = false;
        for _ in 0..40 {
            let mut a = jtj.clone();
            for k in 0..n {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = a.lu().solve(&(-&g)) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            if let Some(rt) = residuals(&trial) {
                let ct = cost_of(&rt);
                if ct.is_finite() && ct <= cost {
                    let rel = (cost - ct) / cost.max(f64::MIN_POSITIVE);
                    let small_step = step
                        .iter()
                        .zip(&p)
                        .all(|(s, x)| s.abs() <= tol * (x.abs() + tol));
                    p = trial;
                    r = rt;
                    cost = ct;
                    lambda = (lambda * 0.3).max(1e-12);
                    improved = true;
                    if rel < tol * tol || small_step || cost < 1e-30 {
                        converged = true;
                    }
                    break;
                }
            }
            lambda *= 10.0;
        }
        trace.push(cost);
        if !improved {
            converged = cost < 1e-20 || g.amax() < tol;
            break;
        }
        if converged {
            break;
        }
    }
    LmReport {
        params: p,
        cost,
        iterations,
        converged,
        trace,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        for n in [1, 2, 4, 8, 16, 24] {
            let rule = gauss_legendre(n);
            let sum: f64 = rule.iter().map(|(_, w)| w).sum();
            assert!((sum - 1.0).abs() < 1e-14);
            let deg = 2 * n - 1;
            let integral: f64 = rule.iter().map(|(x, w)| w * x.powi(deg as i32)).sum();
            assert!((integral - 1.0 / (deg as f64 + 1.0)).abs() < 1e-13, "n={n}");
        }
    }

    #[test]
    fn brent_finds_cube_root() {
        let r = brent_root(|x| x * x * x - 2.0, 0.0, 2.0, 1e-14, 100).unwrap();
        assert!((r - 2f64.cbrt()).abs() < 1e-12);
    }

    #[test]
    fn lm_fits_rosenbrock() {
        let rep = levenberg_marquardt(
            |p| Some(vec![10.0 * (p[1] - p[0] * p[0]), 1.0 - p[0]]),
            &[-1.2, 1.0],
            500,
            1e-10,
        );
        assert!((rep.params[0] - 1.0).abs() < 1e-6, "{:?}", rep.params);
        assert!((rep.params[1] - 1.0).abs() < 1e-6);
    }
}
