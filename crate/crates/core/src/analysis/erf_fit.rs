//! Error-function knife-edge fit, f(x) = c/2 (1 + erf((x - a) / (sigma sqrt 2))),
//! by binomial maximum likelihood (default) or unweighted least squares.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::AnalysisError;
use crate::numerics::{brent_root, levenberg_marquardt};
use crate::protocols::ScanTable;

const P_FLOOR: f64 = 1e-15;
const MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    BinomialLikelihood,
    LeastSquares,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalMethod {
    ProfileLikelihood,
    Quadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitOptions {
    pub method: FitMethod,
    pub interval: IntervalMethod,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            method: FitMethod::BinomialLikelihood,
            interval: IntervalMethod::ProfileLikelihood,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErfFitResult {
    pub sigma: f64,
    pub a: f64,
    pub c: f64,
    pub sigma_interval: Interval,
    pub a_interval: Interval,
    pub c_interval: Interval,
    /// Binomial deviance (likelihood fits) or residual sum of squares.
    pub goodness_of_fit: f64,
    pub degrees_of_freedom: usize,
    pub method: FitMethod,
    pub interval_method: IntervalMethod,
    pub iterations: usize,
}

impl ErfFitResult {
    pub fn predict(&self, x: f64) -> f64 {
        erf_model(x, self.a, self.sigma, self.c)
    }
}

fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Transmitted fraction of a Gaussian beam past a blade at `x`.
pub fn erf_model(x: f64, a: f64, sigma: f64, c: f64) -> f64 {
    c * norm_cdf((x - a) / sigma)
}

/// Scan data in normalised coordinates x' = (x - shift) / scale.
struct Data {
    x: Vec<f64>,
    n: Vec<f64>,
    h: Vec<f64>,
    shift: f64,
    scale: f64,
}

impl Data {
    fn new(table: &ScanTable) -> Self {
        let pos = table.positions();
        let m = pos.len() as f64;
        let shift = pos.iter().sum::<f64>() / m;
        let var = pos.iter().map(|p| (p - shift).powi(2)).sum::<f64>() / m;
        let scale = var.sqrt().max(f64::MIN_POSITIVE);
        Self {
            x: pos.iter().map(|p| (p - shift) / scale).collect(),
            n: table.rows.iter().map(|r| r.shots as f64).collect(),
            h: table.rows.iter().map(|r| r.hits as f64).collect(),
            shift,
            scale,
        }
    }

    /// theta = (a', ln sigma', c).
    fn prob_and_grad(&self, i: usize, th: &[f64; 3]) -> (f64, [f64; 3]) {
        let s = th[1].exp();
        let z = (self.x[i] - th[0]) / s;
        let phi = norm_pdf(z);
        let p = th[2] * norm_cdf(z);
        (p, [-th[2] * phi / s, -th[2] * phi * z, norm_cdf(z)])
    }

    fn log_lik(&self, th: &[f64; 3]) -> f64 {
        (0..self.x.len())
            .map(|i| {
                let p = self.prob_and_grad(i, th).0.clamp(P_FLOOR, 1.0 - P_FLOOR);
                let (h, n) = (self.h[i], self.n[i]);
                h * p.ln() + (n - h) * (1.0 - p).ln()
            })
            .sum()
    }

    fn saturated_log_lik(&self) -> f64 {
        (0..self.x.len())
            .map(|i| {
                let (h, n) = (self.h[i], self.n[i]);
                let f = h / n;
                let a = if h > 0.0 { h * f.ln() } else { 0.0 };
                let b = if h < n { (n - h) * (1.0 - f).ln() } else { 0.0 };
                a + b
            })
            .sum()
    }

    fn deviance(&self, th: &[f64; 3]) -> f64 {
        2.0 * (self.saturated_log_lik() - self.log_lik(th))
    }

    fn score_fisher(&self, th: &[f64; 3]) -> ([f64; 3], [[f64; 3]; 3]) {
        let mut g = [0.0; 3];
        let mut f = [[0.0; 3]; 3];
        for i in 0..self.x.len() {
            let (p, dp) = self.prob_and_grad(i, th);
            let p = p.clamp(P_FLOOR, 1.0 - P_FLOOR);
            let w = 1.0 / (p * (1.0 - p));
            let r = (self.h[i] - self.n[i] * p) * w;
            for a in 0..3 {
                g[a] += r * dp[a];
                for b in 0..3 {
                    f[a][b] += self.n[i] * w * dp[a] * dp[b];
                }
            }
        }
        (g, f)
    }

    fn to_physical(&self, th: &[f64; 3]) -> (f64, f64, f64) {
        (self.shift + self.scale * th[0], self.scale * th[1].exp(), th[2])
    }
}

struct MleFit {
    theta: [f64; 3],
    log_lik: f64,
    iterations: usize,
    trace: Vec<f64>,
    converged: bool,
}

/// Damped Fisher scoring on the free parameters; c is kept in [0, 1].
fn maximise(data: &Data, start: [f64; 3], free: [bool; 3]) -> MleFit {
    let mut th = start;
    th[2] = th[2].clamp(0.0, 1.0);
    let mut ll = data.log_lik(&th);
    let mut lambda = 1e-3;
    let mut trace = vec![-2.0 * ll];
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..MAX_ITER {
        iterations = it + 1;
        let (g, f) = data.score_fisher(&th);
        // parameters in play: free, and c not pinned at a bound by its gradient
        let mut idx = Vec::with_capacity(3);
        for k in 0..3 {
            if !free[k] {
                continue;
            }
            if k == 2 && ((th[2] >= 1.0 && g[2] > 0.0) || (th[2] <= 0.0 && g[2] < 0.0)) {
                continue;
            }
            idx.push(k);
        }
        if idx.is_empty() {
            converged = true;
            break;
        }
        let m = idx.len();
        let gv = DVector::from_iterator(m, idx.iter().map(|&k| g[k]));
        let fm = DMatrix::from_fn(m, m, |a, b| f[idx[a]][idx[b]]);
        let mut improved = false;
        let mut small = false;
        for _ in 0..30 {
            let mut a = fm.clone();
            for k in 0..m {
                a[(k, k)] += lambda * fm[(k, k)].max(1e-12);
            }
            let Some(step) = a.lu().solve(&gv) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial = th;
            for (j, &k) in idx.iter().enumerate() {
                trial[k] += step[j];
            }
            trial[2] = trial[2].clamp(0.0, 1.0);
            let lt = data.log_lik(&trial);
            if lt.is_finite() && lt >= ll - 1e-12 * ll.abs() {
                small = (0..3).all(|k| (trial[k] - th[k]).abs() < 1e-10 * (1.0 + th[k].abs()));
                let gain = lt - ll;
                th = trial;
                ll = lt;
                lambda = (lambda * 0.2).max(1e-12);
                improved = true;
                if gain.abs() < 1e-13 * (1.0 + ll.abs()) && small {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        trace.push(-2.0 * ll);
        if converged || !improved {
            // no ascent direction left: stationary to working precision
            converged = converged || gv.amax() < 1e-6 * (1.0 + ll.abs());
            break;
        }
        if small {
            converged = true;
            break;
        }
    }
    MleFit {
        theta: th,
        log_lik: ll,
        iterations,
        trace,
        converged,
    }
}

fn initial_guess(data: &Data) -> [f64; 3] {
    let frac: Vec<f64> = data.h.iter().zip(&data.n).map(|(h, n)| h / n).collect();
    let c0 = frac.iter().cloned().fold(0.0, f64::max).clamp(0.05, 1.0);
    // order by position for crossing estimates
    let mut order: Vec<usize> = (0..data.x.len()).collect();
    order.sort_by(|&a, &b| data.x[a].total_cmp(&data.x[b]));
    let crossing = |level: f64| -> Option<f64> {
        for w in order.windows(2) {
            let (i, j) = (w[0], w[1]);
            let (fi, fj) = (frac[i], frac[j]);
            if (fi - level) * (fj - level) <= 0.0 && fi != fj {
                let t = (level - fi) / (fj - fi);
                return Some(data.x[i] + t * (data.x[j] - data.x[i]));
            }
        }
        None
    };
    let a0 = crossing(0.5 * c0).unwrap_or(0.0);
    let lo = crossing(0.16 * c0);
    let hi = crossing(0.84 * c0);
    let s0 = match (lo, hi) {
        (Some(l), Some(h)) if h > l => 0.5 * (h - l),
        _ => 0.3,
    }
    .max(0.02);
    [a0, s0.ln(), c0]
}

fn check_table(table: &ScanTable) -> Result<(), AnalysisError> {
    table.validate()?;
    if table.rows.len() < 4 {
        return Err(AnalysisError::TooFewRows {
            needed: 4,
            got: table.rows.len(),
        });
    }
    if table.rows.iter().all(|r| r.hits == 0) {
        return Err(AnalysisError::Degenerate("no hits in any row".into()));
    }
    if table.rows.iter().all(|r| r.hits == r.shots) {
        return Err(AnalysisError::Degenerate("every row is saturated".into()));
    }
    Ok(())
}

pub fn fit_erf(table: &ScanTable, options: &FitOptions) -> Result<ErfFitResult, AnalysisError> {
    check_table(table)?;
    let data = Data::new(table);
    match options.method {
        FitMethod::BinomialLikelihood => fit_likelihood(&data, options.interval),
        FitMethod::LeastSquares => fit_least_squares(&data),
    }
}

fn fit_likelihood(data: &Data, interval: IntervalMethod) -> Result<ErfFitResult, AnalysisError> {
    // a few starting points guard against a poor crossing estimate
    let base = initial_guess(data);
    let mut best: Option<MleFit> = None;
    for ds in [0.0, -1.0, 1.0] {
        let start = [base[0], base[1] + ds, base[2]];
        let fit = maximise(data, start, [true; 3]);
        if best.as_ref().map_or(true, |b| fit.log_lik > b.log_lik + 1e-9) {
            best = Some(fit);
        }
    }
    let fit = best.expect("at least one start");
    if !fit.converged || !fit.theta.iter().all(|v| v.is_finite()) {
        return Err(AnalysisError::NotConverged {
            iterations: fit.iterations,
            trace: fit.trace,
        });
    }
    let th = fit.theta;
    let (a, sigma, c) = data.to_physical(&th);
    let dev = data.deviance(&th);
    let (lo, hi) = match interval {
        IntervalMethod::ProfileLikelihood => profile_intervals(data, &fit),
        IntervalMethod::Quadratic => quadratic_intervals(data, &th),
    };
    let to_a = |v: f64| data.shift + data.scale * v;
    let to_s = |v: f64| data.scale * v.exp();
    Ok(ErfFitResult {
        sigma,
        a,
        c,
        sigma_interval: Interval { lower: to_s(lo[1]), upper: to_s(hi[1]) },
        a_interval: Interval { lower: to_a(lo[0]), upper: to_a(hi[0]) },
        c_interval: Interval { lower: lo[2].max(0.0), upper: hi[2].min(1.0) },
        goodness_of_fit: dev,
        degrees_of_freedom: data.x.len().saturating_sub(3),
        method: FitMethod::BinomialLikelihood,
        interval_method: interval,
        iterations: fit.iterations,
    })
}

fn quadratic_intervals(data: &Data, th: &[f64; 3]) -> ([f64; 3], [f64; 3]) {
    let (_, f) = data.score_fisher(th);
    let fm = DMatrix::from_fn(3, 3, |a, b| f[a][b]);
    let cov = fm.try_inverse().unwrap_or_else(|| DMatrix::from_element(3, 3, f64::INFINITY));
    let mut lo = [0.0; 3];
    let mut hi = [0.0; 3];
    for k in 0..3 {
        let se = cov[(k, k)].max(0.0).sqrt();
        lo[k] = th[k] - se;
        hi[k] = th[k] + se;
    }
    (lo, hi)
}

/// Points where the profile deviance rises by 1 (68.3% for one parameter).
fn profile_intervals(data: &Data, fit: &MleFit) -> ([f64; 3], [f64; 3]) {
    let (wl, wh) = quadratic_intervals(data, &fit.theta);
    let mut lo = [0.0; 3];
    let mut hi = [0.0; 3];
    for k in 0..3 {
        let best = fit.theta[k];
        let profile = |v: f64| -> f64 {
            let mut start = fit.theta;
            start[k] = v;
            let mut free = [true; 3];
            free[k] = false;
            let f = maximise(data, start, free);
            2.0 * (fit.log_lik - f.log_lik) - 1.0
        };
        for (dir, wald, slot) in [(-1.0, wl[k], &mut lo[k]), (1.0, wh[k], &mut hi[k])] {
            let mut step = (wald - best).abs();
            if !step.is_finite() || step == 0.0 {
                step = 0.1;
            }
            let bound = |v: f64| if k == 2 { v.clamp(0.0, 1.0) } else { v };
            let mut inner = best;
            let mut outer = bound(best + dir * step);
            let mut found = false;
            for _ in 0..40 {
                if profile(outer) >= 0.0 {
                    found = true;
                    break;
                }
                if k == 2 && (outer == 0.0 || outer == 1.0) {
                    break;
                }
                inner = outer;
                step *= 1.6;
                outer = bound(best + dir * step);
            }
            *slot = if found {
                brent_root(profile, inner, outer, 1e-10 * (1.0 + best.abs()), 100).unwrap_or(outer)
            } else {
                outer
            };
        }
    }
    (lo, hi)
}

fn fit_least_squares(data: &Data) -> Result<ErfFitResult, AnalysisError> {
    let start = initial_guess(data);
    let residuals = |p: &[f64]| -> Option<Vec<f64>> {
        if !(0.0..=1.0).contains(&p[2]) {
            return None;
        }
        let th = [p[0], p[1], p[2]];
        Some(
            (0..data.x.len())
                .map(|i| data.h[i] / data.n[i] - data.prob_and_grad(i, &th).0)
                .collect(),
        )
    };
    let report = levenberg_marquardt(residuals, &start, MAX_ITER, 1e-12);
    if !report.converged {
        return Err(AnalysisError::NotConverged {
            iterations: report.iterations,
            trace: report.trace,
        });
    }
    let th = [report.params[0], report.params[1], report.params[2]];
    let m = data.x.len();
    let rss = 2.0 * report.cost;
    let s2 = rss / (m.saturating_sub(3).max(1)) as f64;
    let jac = DMatrix::from_fn(m, 3, |i, k| data.prob_and_grad(i, &th).1[k]);
    let cov = (jac.transpose() * &jac)
        .try_inverse()
        .unwrap_or_else(|| DMatrix::from_element(3, 3, f64::INFINITY))
        * s2;
    let se: Vec<f64> = (0..3).map(|k| cov[(k, k)].max(0.0).sqrt()).collect();
    let (a, sigma, c) = data.to_physical(&th);
    Ok(ErfFitResult {
        sigma,
        a,
        c,
        sigma_interval: Interval {
            lower: data.scale * (th[1] - se[1]).exp(),
            upper: data.scale * (th[1] + se[1]).exp(),
        },
        a_interval: Interval {
            lower: a - data.scale * se[0],
            upper: a + data.scale * se[0],
        },
        c_interval: Interval {
            lower: (c - se[2]).max(0.0),
            upper: (c + se[2]).min(1.0),
        },
        goodness_of_fit: rss,
        degrees_of_freedom: m.saturating_sub(3),
        method: FitMethod::LeastSquares,
        interval_method: IntervalMethod::Quadratic,
        iterations: report.iterations,
    })
}
