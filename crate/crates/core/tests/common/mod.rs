//! Independent brute-force oracles shared by the integration suites.
#![allow(dead_code)]

use hybrid_core::bayes::{BayesData, BorrowVariant, McmcOptions};
use hybrid_core::fullmatch::{scaled_cost, MatchProblem};
use hybrid_core::rng::{self, SimRng};
use hybrid_core::survfit::{SurvivalSample, TrialFactor};
use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

// ---------------------------------------------------------------------------
// Full matching by exhaustive set partition.

/// Minimum scaled objective over every partition of the subjects into
/// one-to-many / many-to-one subclasses. Treated are `0..nt`, controls follow.
pub fn enumerate_full_match(problem: &MatchProblem) -> i64 {
    let nt = problem.n_treated();
    let n = nt + problem.n_controls();
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    let mut best = i64::MAX;
    partitions(0, n, &mut blocks, &mut |blocks| {
        let mut total = 0i64;
        for b in blocks {
            let t: Vec<usize> = b.iter().copied().filter(|&i| i < nt).collect();
            let c: Vec<usize> = b.iter().copied().filter(|&i| i >= nt).map(|i| i - nt).collect();
            if t.is_empty() || c.is_empty() || (t.len() > 1 && c.len() > 1) {
                return;
            }
            for &i in &t {
                for &j in &c {
                    total += scaled_cost(problem.distance(i, j));
                }
            }
        }
        best = best.min(total);
    });
    best
}

fn partitions(next: usize, n: usize, blocks: &mut Vec<Vec<usize>>, visit: &mut dyn FnMut(&[Vec<usize>])) {
    if next == n {
        visit(blocks);
        return;
    }
    for k in 0..blocks.len() {
        blocks[k].push(next);
        partitions(next + 1, n, blocks, visit);
        blocks[k].pop();
    }
    blocks.push(vec![next]);
    partitions(next + 1, n, blocks, visit);
    blocks.pop();
}

/// Random instance with 2..=8 subjects, at least one per side.
pub fn random_match_problem(rng: &mut SimRng) -> MatchProblem {
    let n = rng.random_range(2..=8usize);
    let nt = rng.random_range(1..n);
    let ps = |rng: &mut SimRng| rng.random_range(0.02..0.98f64);
    let treated: Vec<f64> = (0..nt).map(|_| ps(rng)).collect();
    let controls: Vec<f64> = (0..n - nt).map(|_| ps(rng)).collect();
    MatchProblem::from_scores(&treated, &controls).unwrap()
}

// ---------------------------------------------------------------------------
// Grid maximization.

/// Shrinking-box grid search: evaluate a full tensor grid, recentre on the
/// best point, shrink to two grid steps, repeat until the box is tiny.
pub fn grid_argmax(f: &dyn Fn(&[f64]) -> f64, centre: &[f64], half_width: &[f64]) -> Vec<f64> {
    let k = centre.len();
    let m = if k >= 3 { 17 } else { 41 };
    let mut c = centre.to_vec();
    let mut h = half_width.to_vec();
    while h.iter().any(|&hi| hi > 1e-9) {
        let mut best = (f64::NEG_INFINITY, c.clone());
        let mut idx = vec![0usize; k];
        loop {
            let x: Vec<f64> = (0..k).map(|d| c[d] - h[d] + 2.0 * h[d] * idx[d] as f64 / (m - 1) as f64).collect();
            let v = f(&x);
            if v > best.0 {
                best = (v, x);
            }
            let mut d = 0;
            while d < k {
                idx[d] += 1;
                if idx[d] < m {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
            if d == k {
                break;
            }
        }
        c = best.1;
        for hd in &mut h {
            *hd *= 4.0 / (m - 1) as f64;
        }
    }
    c
}

pub fn logistic_loglik(x: &[f64], y: &[f64], beta: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let eta = beta[0] + beta[1] * xi;
            yi * eta - (1.0 + eta.exp()).ln()
        })
        .sum()
}

/// Weighted Breslow partial likelihood with the treatment indicator as the
/// only covariate (times are continuous, so no ties).
pub fn cox_loglik(samples: &[SurvivalSample], beta: f64) -> f64 {
    samples
        .iter()
        .filter(|s| s.event)
        .map(|s| {
            let risk: f64 = samples
                .iter()
                .filter(|r| r.time >= s.time)
                .map(|r| r.weight * (beta * r.treatment as f64).exp())
                .sum();
            s.weight * (beta * s.treatment as f64 - risk.ln())
        })
        .sum()
}

/// Weighted Weibull AFT log-likelihood on log time, `theta = (b0, b1, log sigma)`.
pub fn aft_loglik(samples: &[SurvivalSample], theta: &[f64]) -> f64 {
    let sigma = theta[2].exp();
    samples
        .iter()
        .map(|s| {
            let z = (s.time.ln() - theta[0] - theta[1] * s.treatment as f64) / sigma;
            s.weight * if s.event { z - z.exp() - theta[2] } else { -z.exp() }
        })
        .sum()
}

/// Two-arm censored Weibull sample with random shape, effect and positive
/// weights.
pub fn random_survival(rng: &mut SimRng, n: usize) -> Vec<SurvivalSample> {
    let shape = rng.random_range(0.8..2.0f64);
    let effect = rng.random_range(-0.8..0.8f64);
    (0..n)
        .map(|i| {
            let treatment = (i % 2) as u8;
            let rate = (effect * treatment as f64).exp();
            let e: f64 = Exp::new(1.0).unwrap().sample(rng);
            let t = (e / rate).powf(1.0 / shape);
            let c = rng.random_range(0.5..3.0f64);
            SurvivalSample {
                time: t.min(c),
                event: t <= c,
                treatment,
                trial: TrialFactor::Current,
                weight: rng.random_range(0.3..2.0f64),
            }
        })
        .collect()
}

pub fn random_logistic(rng: &mut SimRng, n: usize) -> (Vec<f64>, Vec<f64>) {
    let b0 = rng.random_range(-0.8..0.8f64);
    let b1 = rng.random_range(-1.2..1.2f64);
    let x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let y = x
        .iter()
        .map(|&xi| {
            let p = 1.0 / (1.0 + (-(b0 + b1 * xi)).exp());
            f64::from(u8::from(rng.random::<f64>() < p))
        })
        .collect();
    (x, y)
}

// ---------------------------------------------------------------------------
// Event-time generator.

/// Kolmogorov-Smirnov distance of a sample to a continuous CDF.
pub fn ks_distance(sample: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    sample.sort_by(f64::total_cmp);
    let n = sample.len() as f64;
    sample
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Bayesian posterior by quadrature.

/// Six subjects: two per current arm and one per historical trial.
pub struct Fixture {
    pub arms: [(Vec<f64>, Vec<bool>); 4],
    pub shape: f64,
}

pub fn fixture() -> Fixture {
    Fixture {
        arms: [
            (vec![0.5, 1.2], vec![true, true]),
            (vec![0.8, 1.5], vec![true, false]),
            (vec![1.0], vec![true]),
            (vec![0.7], vec![true]),
        ],
        shape: 1.5,
    }
}

impl Fixture {
    pub fn data(&self) -> BayesData {
        let a = &self.arms;
        BayesData::new([
            (&a[0].0, &a[0].1),
            (&a[1].0, &a[1].1),
            (&a[2].0, &a[2].1),
            (&a[3].0, &a[3].1),
        ])
        .unwrap()
    }

    /// Events, constant term and exposure `sum t^p` of one arm.
    fn stats(&self, arm: usize) -> (f64, f64, f64) {
        let p = self.shape;
        let (t, e) = &self.arms[arm];
        let events = e.iter().filter(|&&x| x).count() as f64;
        let constant = t.iter().zip(e).filter(|(_, &x)| x).map(|(&t, _)| p.ln() + (p - 1.0) * t.ln()).sum();
        (events, constant, t.iter().map(|&t| t.powf(p)).sum())
    }
}

fn arm_loglik((events, constant, exposure): (f64, f64, f64), f: f64) -> f64 {
    events * f + constant - f.exp() * exposure
}

fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI * var).ln() - (x - mean).powi(2) / (2.0 * var)
}

const VAGUE: f64 = 1000.0;

/// Marginal density of the link residual `d = alpha0 - alpha3` after
/// integrating the precision numerically on a log grid.
fn residual_marginal(variant: BorrowVariant, d: f64) -> f64 {
    let (lo, hi, n) = (-40.0f64, 18.0f64, 4000usize);
    let h = (hi - lo) / n as f64;
    let mut total = 0.0;
    for i in 0..=n {
        let s = lo + h * i as f64;
        let tau = s.exp();
        // Prior mass per unit log tau.
        let log_prior = match variant {
            BorrowVariant::Ips => log_gamma_density(tau, 1.0, 0.001) + s,
            BorrowVariant::Nps => log_gamma_density(tau, 0.001, 0.001) + s,
            // Half-Cauchy(2.5) on sqrt(tau): density per unit log tau is
            // hc(r) * r / 2 with r = sqrt(tau).
            BorrowVariant::Wps => {
                let r = tau.sqrt();
                (2.0 / (std::f64::consts::PI * 2.5)).ln() - (1.0 + (r / 2.5).powi(2)).ln() + r.ln() - 2f64.ln()
            }
            other => panic!("no quadrature for {other}"),
        };
        let v = (log_prior + log_normal(d, 0.0, 1.0 / tau)).exp();
        total += if i == 0 || i == n { 0.5 * v } else { v };
    }
    total * h
}

fn log_gamma_density(x: f64, a: f64, b: f64) -> f64 {
    a * b.ln() - libm::lgamma(a) + (a - 1.0) * x.ln() - b * x
}

fn uniform_grid(lo: f64, hi: f64, step: f64) -> Vec<(f64, f64)> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| (lo + step * i as f64, step)).collect()
}

/// Streaming weighted mean in log space.
#[derive(Default)]
struct LogMean {
    max: f64,
    mass: f64,
    first: f64,
    started: bool,
}

impl LogMean {
    fn add(&mut self, log_w: f64, x: f64) {
        if !log_w.is_finite() {
            return;
        }
        if !self.started || log_w > self.max {
            let scale = if self.started { (self.max - log_w).exp() } else { 0.0 };
            self.mass *= scale;
            self.first *= scale;
            self.max = log_w;
            self.started = true;
        }
        let w = (log_w - self.max).exp();
        self.mass += w;
        self.first += w * x;
    }

    fn mean(&self) -> f64 {
        self.first / self.mass
    }
}

/// Posterior mean of delta by tensor-grid quadrature over the location
/// parameters, with the precision integrated out numerically.
pub fn quadrature_delta_mean(fx: &Fixture, variant: BorrowVariant) -> f64 {
    let st: Vec<_> = (0..4).map(|a| fx.stats(a)).collect();
    let deltas: Vec<(f64, f64)> = uniform_grid(-14.0, 12.0, 0.05)
        .into_iter()
        .map(|(d, w)| (d, w.ln() + log_normal(d, 0.0, VAGUE)))
        .collect();
    let mut acc = LogMean::default();
    let add_delta = |base: f64, alpha0: f64, acc: &mut LogMean| {
        for &(delta, log_w) in &deltas {
            let v = base + log_w + arm_loglik(st[0], alpha0 + delta);
            acc.add(v, delta);
        }
    };
    match variant {
        BorrowVariant::Nb | BorrowVariant::Fb => {
            for (alpha0, w) in uniform_grid(-10.0, 6.0, 0.02) {
                let mut base = w.ln() + arm_loglik(st[1], alpha0) + log_normal(alpha0, 0.0, VAGUE);
                if variant == BorrowVariant::Fb {
                    base += arm_loglik(st[2], alpha0) + arm_loglik(st[3], alpha0);
                }
                add_delta(base, alpha0, &mut acc);
            }
        }
        _ => {
            // sinh-spaced residual grid resolves the spike at zero; an even
            // point count keeps d = 0 itself off the grid.
            let c = 0.002f64;
            let umax = (24.0f64 / c).asinh();
            let nu = 600usize;
            let du = 2.0 * umax / nu as f64;
            let residuals: Vec<(f64, f64, f64)> = (0..nu)
                .map(|i| {
                    let u = -umax + du * (i as f64 + 0.5);
                    let d = c * u.sinh();
                    (d, c * u.cosh() * du, residual_marginal(variant, d).ln())
                })
                .collect();
            for (alpha3, w3) in uniform_grid(-9.0, 6.0, 0.05) {
                let hist = w3.ln() + arm_loglik(st[2], alpha3) + arm_loglik(st[3], alpha3) + log_normal(alpha3, 0.0, VAGUE);
                for &(d, wd, log_m) in &residuals {
                    let alpha0 = alpha3 + d;
                    let base = hist + wd.ln() + log_m + arm_loglik(st[1], alpha0);
                    add_delta(base, alpha0, &mut acc);
                }
            }
        }
    }
    acc.mean()
}

pub fn long_run_options(seed: u64, shape: f64) -> McmcOptions {
    McmcOptions {
        chains: 4,
        adapt_iters: 4000,
        sample_iters: 60_000,
        seed: rng::derive_seed(seed, &[5]),
        fixed_shape: Some(shape),
        ..Default::default()
    }
}
