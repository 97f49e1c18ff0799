//! Independent reference computations for the integration tests. Nothing here
//! calls into the library's numerical code.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn expit(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// log ∫ f(y) e^{θy} dy for each family, with `eta` the linear predictor.
pub mod normalizer {
    use super::expit;

    pub fn gaussian(mu: f64, sigma: f64, theta: f64) -> f64 {
        theta * mu + 0.5 * theta * theta * sigma * sigma
    }

    pub fn bernoulli(eta: f64, theta: f64) -> f64 {
        let p = expit(eta);
        (1.0 - p + p * theta.exp()).ln()
    }

    pub fn poisson(eta: f64, theta: f64) -> f64 {
        eta.exp() * (theta.exp() - 1.0)
    }

    /// Mean e^eta, shape ν; finite for θ < ν e^{−eta}.
    pub fn gamma(eta: f64, nu: f64, theta: f64) -> f64 {
        -nu * (1.0 - theta * eta.exp() / nu).ln()
    }
}

/// 20-point Gauss–Legendre nodes and weights on [−1, 1], by Newton iteration
/// on the Legendre recurrence.
pub fn gauss_legendre(m: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(m);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=m {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = m as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

/// Composite Gauss–Legendre over [a, b] with `panels` equal panels.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
    let nodes = gauss_legendre(20);
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for k in 0..panels {
        let mid = a + (k as f64 + 0.5) * h;
        total += nodes.iter().map(|(x, w)| w * f(mid + 0.5 * h * x)).sum::<f64>() * 0.5 * h;
    }
    total
}

pub mod quadrature_oracle {
    use super::{expit, integrate};

    pub fn gaussian(mu: f64, sigma: f64, theta: f64) -> f64 {
        let centre = mu + theta * sigma * sigma;
        let c = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
        let f = |y: f64| c * (-(y - mu) * (y - mu) / (2.0 * sigma * sigma) + theta * y).exp();
        integrate(f, centre - 16.0 * sigma, centre + 16.0 * sigma, 400).ln()
    }

    pub fn bernoulli(eta: f64, theta: f64) -> f64 {
        let p = expit(eta);
        ((1.0 - p) + p * theta.exp()).ln()
    }

    /// Direct summation of the tilted pmf by the ratio recurrence.
    pub fn poisson(eta: f64, theta: f64) -> f64 {
        let lam = eta.exp();
        let mut term = (-lam).exp();
        let mut total = 0.0;
        let mut k = 0.0;
        loop {
            let t = term * (theta * k).exp();
            total += t;
            if k > lam * theta.exp() + 20.0 && t < 1e-18 * total {
                break;
            }
            k += 1.0;
            term *= lam / k;
        }
        total.ln()
    }

    /// Integrates in t = log y, where the integrand is smooth for every shape.
    pub fn gamma(eta: f64, nu: f64, theta: f64) -> f64 {
        let rate = nu / eta.exp();
        let tilted = rate - theta;
        let log_c = nu * rate.ln() - statrs::function::gamma::ln_gamma(nu);
        let peak = (nu / tilted).ln();
        let f = |t: f64| (log_c + nu * t - tilted * t.exp()).exp();
        integrate(f, peak - 60.0 / nu - 5.0, peak + 5.0, 800).ln()
    }
}

/// Maximizes Σ log p_i subject to Σ p_i = 1 and Σ p_i ψ_i = 0 directly in the
/// weights, by infeasible-start Newton on the KKT system. Returns the weights,
/// or `None` when the iteration does not converge.
pub fn el_primal(psi: &DMatrix<f64>) -> Option<Vec<f64>> {
    let (n, r) = psi.shape();
    let mut a = DMatrix::zeros(r + 1, n);
    for i in 0..n {
        a[(0, i)] = 1.0;
        for j in 0..r {
            a[(j + 1, i)] = psi[(i, j)];
        }
    }
    let mut b = DVector::zeros(r + 1);
    b[0] = 1.0;
    let mut p = DVector::from_element(n, 1.0 / n as f64);
    let mut w = DVector::zeros(r + 1);
    // stationarity scaled by p_i, so every entry is O(1)
    let residual = |p: &DVector<f64>, w: &DVector<f64>| -> f64 {
        let atw = a.transpose() * w;
        let dual = DVector::from_fn(n, |i, _| p[i] * atw[i] - 1.0);
        let primal = &a * p - &b;
        (dual.norm_squared() + primal.norm_squared()).sqrt()
    };
    for _ in 0..500 {
        let rp = &a * &p - &b;
        let p2 = DMatrix::from_diagonal(&p.map(|v| v * v));
        let m = &a * &p2 * a.transpose();
        let rhs = &rp + &a * &p;
        let w_new = m.lu().solve(&rhs)?;
        let dp = &p - &p2 * a.transpose() * &w_new;
        let dw = &w_new - &w;
        let r0 = residual(&p, &w);
        if r0 < 1e-13 {
            return Some(p.iter().copied().collect());
        }
        let mut t = 1.0;
        loop {
            let cand = &p + &dp * t;
            if cand.iter().all(|v| *v > 0.0) {
                let wc = &w + &dw * t;
                if residual(&cand, &wc) <= (1.0 - 0.01 * t) * r0 || t < 1e-10 {
                    p = cand;
                    w = wc;
                    break;
                }
            }
            t *= 0.5;
            if t < 1e-14 {
                return None;
            }
        }
    }
    let ok = (&a * &p - &b).amax() < 1e-12;
    ok.then(|| p.iter().copied().collect())
}

/// Σ log(1 + η ψ_i) for one constraint, with η found by bisection. `None` when
/// zero is outside the hull of ψ.
pub fn el_penalty_scalar(psi: &[f64]) -> Option<f64> {
    let lo_psi = psi.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi_psi = psi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lo_psi >= 0.0 || hi_psi <= 0.0 {
        return None;
    }
    let g = |eta: f64| psi.iter().map(|v| v / (1.0 + eta * v)).sum::<f64>();
    let (mut lo, mut hi) = (-1.0 / hi_psi, -1.0 / lo_psi);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let eta = 0.5 * (lo + hi);
    Some(psi.iter().map(|v| (1.0 + eta * v).ln()).sum())
}

/// Least squares with intercept; returns (β, σ̂_ML).
pub fn ols(y: &[f64], x: &[Vec<f64>]) -> (Vec<f64>, f64) {
    let n = y.len();
    let d = x[0].len() + 1;
    let design = DMatrix::from_fn(n, d, |i, j| if j == 0 { 1.0 } else { x[i][j - 1] });
    let yv = DVector::from_column_slice(y);
    let beta = (design.transpose() * &design).lu().solve(&(design.transpose() * &yv)).expect("full rank");
    let rss = (&yv - &design * &beta).norm_squared();
    (beta.iter().copied().collect(), (rss / n as f64).sqrt())
}

/// Minimizes `f` over a box by repeatedly refining a regular grid around the
/// current best point.
pub fn grid_minimize<F: Fn(&[f64]) -> f64>(f: F, centre: &[f64], half_width: &[f64], points: usize, tol: f64) -> Vec<f64> {
    let d = centre.len();
    let mut c = centre.to_vec();
    let mut hw = half_width.to_vec();
    loop {
        let mut best = (f(&c), c.clone());
        let total = points.pow(d as u32);
        let mut u = vec![0.0; d];
        for idx in 0..total {
            let mut k = idx;
            for j in 0..d {
                let step = k % points;
                k /= points;
                u[j] = c[j] - hw[j] + 2.0 * hw[j] * step as f64 / (points - 1) as f64;
            }
            let v = f(&u);
            if v < best.0 {
                best = (v, u.clone());
            }
        }
        let spacing: Vec<f64> = hw.iter().map(|h| 2.0 * h / (points - 1) as f64).collect();
        let on_edge = (0..d).any(|j| (best.1[j] - c[j]).abs() > hw[j] - 0.5 * spacing[j]);
        c = best.1;
        if on_edge {
            continue;
        }
        if spacing.iter().all(|s| *s < tol) {
            return c;
        }
        hw = spacing.iter().map(|s| 1.5 * s).collect();
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
