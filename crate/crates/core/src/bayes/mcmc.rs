//! Component-wise adaptive random-walk Metropolis.
//!
//! Under Gamma precision priors the precision is integrated out of the
//! location updates (the commensurate link becomes a Student-type kernel)
//! and then redrawn from its exact conditional, so the chain never has to
//! crawl along the funnel between `alpha0 - alpha_h` and `tau`.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::{
    group_loglik, normal_log_density, tau_log_prior, BayesData, BorrowModel, BorrowVariant, Link,
    SameForm, TauPrior, HC0, HC1, MC, MT, SHAPE_PRIOR, VAGUE_VARIANCE,
};
use crate::error::{Error, Result};
use crate::rng::{self, SimRng};

pub const RHAT_LIMIT: f64 = 1.1;
const TARGET_ACCEPTANCE: f64 = 0.44;
const BATCH: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McmcOptions {
    pub chains: usize,
    pub adapt_iters: usize,
    pub sample_iters: usize,
    pub seed: u64,
    pub same_form: SameForm,
    /// Hold every commensurate precision at this value.
    pub fixed_tau: Option<f64>,
    pub fixed_shape: Option<f64>,
}

impl Default for McmcOptions {
    fn default() -> Self {
        McmcOptions {
            chains: 3,
            adapt_iters: 1000,
            sample_iters: 2000,
            seed: 0,
            same_form: SameForm::Pooled,
            fixed_tau: None,
            fixed_shape: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Posterior {
    pub variant: BorrowVariant,
    pub names: Vec<&'static str>,
    /// `draws[chain][param][iter]`, post-adaptation only.
    pub draws: Vec<Vec<Vec<f64>>>,
    pub rhat: Vec<f64>,
    /// Post-adaptation acceptance rate per move, averaged over chains.
    pub acceptance: Vec<(&'static str, f64)>,
}

impl Posterior {
    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| *n == name)
    }

    /// Draws of one parameter pooled across chains.
    pub fn pooled(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.index(name)?;
        Some(self.draws.iter().flat_map(|c| c[k].iter().copied()).collect())
    }

    pub fn delta(&self) -> Vec<f64> {
        self.pooled("delta").expect("delta is always sampled")
    }

    pub fn delta_rhat(&self) -> f64 {
        self.rhat[0]
    }

    pub fn mixed(&self) -> bool {
        self.delta_rhat() <= RHAT_LIMIT
    }

    /// Posterior mean and variance of delta.
    pub fn summary(&self) -> (f64, f64) {
        posterior_summary(&self.delta()).expect("chains are nonempty")
    }

    /// `chain,iter,delta,alpha0,...`
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["chain", "iter"];
        header.extend(&self.names);
        w.write_record(&header)?;
        for (c, chain) in self.draws.iter().enumerate() {
            for i in 0..chain[0].len() {
                let mut row = vec![c.to_string(), i.to_string()];
                row.extend(chain.iter().map(|p| p[i].to_string()));
                w.write_record(&row)?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// Sample mean and `n - 1` variance.
pub fn posterior_summary(draws: &[f64]) -> Result<(f64, f64)> {
    if draws.is_empty() {
        return Err(Error::Argument("no posterior draws".into()));
    }
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let var = if draws.len() > 1 {
        draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok((mean, var))
}

/// Potential scale reduction with each chain split in half.
pub fn split_rhat(chains: &[&[f64]]) -> f64 {
    let half = chains.iter().map(|c| c.len() / 2).min().unwrap_or(0);
    if half < 2 {
        return f64::NAN;
    }
    let pieces: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| {
            let start = c.len() - 2 * half;
            [&c[start..start + half], &c[start + half..]]
        })
        .collect();
    let n = half as f64;
    let stats: Vec<(f64, f64)> = pieces.iter().map(|p| posterior_summary(p).unwrap()).collect();
    let w = stats.iter().map(|s| s.1).sum::<f64>() / stats.len() as f64;
    let grand = stats.iter().map(|s| s.0).sum::<f64>() / stats.len() as f64;
    let b = n * stats.iter().map(|s| (s.0 - grand).powi(2)).sum::<f64>() / (stats.len() as f64 - 1.0);
    if w <= 0.0 {
        return if b <= 1e-300 { 1.0 } else { f64::INFINITY };
    }
    (((n - 1.0) / n * w + b / n) / w).sqrt()
}

/// Shape and rate of the precision's conditional given the link residual
/// `alpha0 - m` under a Gamma(shape, rate) prior.
pub fn tau_conditional(shape: f64, rate: f64, residual: f64) -> (f64, f64) {
    (shape + 0.5, rate + residual * residual / 2.0)
}

fn draw_gamma(rng: &mut SimRng, shape: f64, rate: f64) -> f64 {
    Gamma::new(shape, 1.0 / rate).expect("positive gamma parameters").sample(rng).max(f64::MIN_POSITIVE)
}

/// The sampler's Gibbs update of one precision given its link residual.
pub fn draw_tau(rng: &mut SimRng, shape: f64, rate: f64, residual: f64) -> f64 {
    let (a, b) = tau_conditional(shape, rate, residual);
    draw_gamma(rng, a, b)
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum TauMode {
    Absent,
    Fixed(f64),
    /// Gamma prior; integrated out of location moves.
    Collapsed { shape: f64, rate: f64 },
    /// Half-Cauchy on the root precision; random walk on its log.
    Walk { scale: f64 },
}

#[derive(Clone, Copy, Debug)]
struct State {
    delta: f64,
    alpha0: f64,
    hist: [f64; 2],
    tau: [f64; 2],
    shape: f64,
    exposure: [f64; 4],
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Move {
    Delta,
    Alpha0,
    Hist(usize),
    /// alpha0 and all historical parameters together.
    Level,
    /// alpha0 against delta, leaving the treated predictor fixed.
    Trade,
    LogRootTau(usize),
    LogShape,
}

impl Move {
    fn name(self) -> &'static str {
        match self {
            Move::Delta => "delta",
            Move::Alpha0 => "alpha0",
            Move::Hist(0) => "hist1",
            Move::Hist(_) => "hist2",
            Move::Level => "level",
            Move::Trade => "trade",
            Move::LogRootTau(0) => "tau1",
            Move::LogRootTau(_) => "tau2",
            Move::LogShape => "shape",
        }
    }
}

struct Sampler<'a> {
    data: &'a BayesData,
    link: Link,
    tau_mode: TauMode,
    fixed_shape: Option<f64>,
    /// Which arm slots enter the likelihood.
    slots: Vec<usize>,
    moves: Vec<Move>,
    base_step: Vec<f64>,
}

impl<'a> Sampler<'a> {
    fn new(data: &'a BayesData, model: &BorrowModel, options: &McmcOptions) -> Self {
        let link = model.link();
        let tau_mode = match (link.n_tau(), options.fixed_tau, model.variant.tau_prior()) {
            (0, _, _) => TauMode::Absent,
            (_, Some(t), _) => TauMode::Fixed(t),
            (_, None, Some(TauPrior::Gamma { shape, rate })) => TauMode::Collapsed { shape, rate },
            (_, None, Some(TauPrior::HalfCauchy { scale })) => TauMode::Walk { scale },
            (_, None, None) => unreachable!("commensurate variants carry a precision prior"),
        };
        let slots = if link == Link::None { vec![MT, MC] } else { vec![MT, MC, HC0, HC1] };
        let events = |s: usize| data.group(s).events;
        let control_events = events(MC) + if link == Link::Full { events(HC0) + events(HC1) } else { 0.0 };
        let mut moves = vec![Move::Delta, Move::Alpha0, Move::Trade];
        let mut base_step = vec![
            (1.0 / (events(MT) + 1.0) + 1.0 / (control_events + 1.0)).sqrt(),
            1.0 / (control_events + 1.0).sqrt(),
            1.0 / (events(MT) + 1.0).sqrt(),
        ];
        match link.n_hist() {
            0 => {}
            1 => {
                moves.push(Move::Hist(0));
                base_step.push(1.0 / (events(HC0) + events(HC1) + 1.0).sqrt());
            }
            _ => {
                for (k, slot) in [HC0, HC1].into_iter().enumerate() {
                    moves.push(Move::Hist(k));
                    base_step.push(1.0 / (events(slot) + 1.0).sqrt());
                }
            }
        }
        if link.n_hist() > 0 {
            moves.push(Move::Level);
            base_step.push(1.0 / (events(MC) + 1.0).sqrt());
        }
        if matches!(tau_mode, TauMode::Walk { .. }) {
            for k in 0..link.n_tau() {
                moves.push(Move::LogRootTau(k));
                base_step.push(1.0);
            }
        }
        if options.fixed_shape.is_none() {
            moves.push(Move::LogShape);
            let used: f64 = slots.iter().map(|&s| events(s)).sum();
            base_step.push(1.0 / (used + 1.0).sqrt());
        }
        Sampler {
            data,
            link,
            tau_mode,
            fixed_shape: options.fixed_shape,
            slots,
            moves,
            base_step,
        }
    }

    fn predictor(&self, st: &State, slot: usize) -> f64 {
        match (slot, self.link) {
            (MT, _) => st.alpha0 + st.delta,
            (MC, _) | (_, Link::Full) => st.alpha0,
            (_, Link::Pooled) => st.hist[0],
            (HC0, _) => st.hist[0],
            _ => st.hist[1],
        }
    }

    /// Centres of the commensurate links, one per precision.
    fn link_centres(&self, st: &State) -> [f64; 2] {
        match self.link {
            Link::WeightedMean(w) => [w[0] * st.hist[0] + w[1] * st.hist[1], 0.0],
            _ => st.hist,
        }
    }

    fn refresh_exposure(&self, st: &mut State) {
        for &s in &self.slots {
            st.exposure[s] = self.data.group(s).exposure(st.shape);
        }
    }

    /// Log density of the sampled coordinates (log shape, log root
    /// precision) with collapsed precisions integrated out.
    fn log_target(&self, st: &State) -> f64 {
        let mut total: f64 = self
            .slots
            .iter()
            .map(|&s| group_loglik(self.data.group(s), self.predictor(st, s), st.shape, st.exposure[s]))
            .sum();
        total += normal_log_density(st.delta, 0.0, VAGUE_VARIANCE);
        if self.fixed_shape.is_none() {
            let (a, b) = SHAPE_PRIOR;
            total += super::gamma_log_density(st.shape, a, b) + st.shape.ln();
        }
        let n_tau = self.link.n_tau();
        if n_tau == 0 {
            return total + normal_log_density(st.alpha0, 0.0, VAGUE_VARIANCE);
        }
        total += st.hist[..self.link.n_hist()]
            .iter()
            .map(|&h| normal_log_density(h, 0.0, VAGUE_VARIANCE))
            .sum::<f64>();
        let centres = self.link_centres(st);
        for k in 0..n_tau {
            let r = st.alpha0 - centres[k];
            total += match self.tau_mode {
                TauMode::Collapsed { shape, rate } => {
                    let (a, b) = tau_conditional(shape, rate, r);
                    -a * b.ln()
                }
                TauMode::Walk { scale } => {
                    normal_log_density(r, 0.0, 1.0 / st.tau[k])
                        + tau_log_prior(TauPrior::HalfCauchy { scale }, st.tau[k])
                        + 0.5 * st.tau[k].ln()
                }
                TauMode::Fixed(t) => normal_log_density(r, 0.0, 1.0 / t),
                TauMode::Absent => 0.0,
            };
        }
        total
    }

    fn propose(&self, st: &State, mv: Move, step: f64, rng: &mut SimRng) -> State {
        let z: f64 = rng.sample(StandardNormal);
        let mut next = *st;
        match mv {
            Move::Delta => next.delta += step * z,
            Move::Alpha0 => {
                // the link dominates alpha0's conditional when the precision is large
                let precision = match self.tau_mode {
                    TauMode::Walk { .. } => st.tau[..self.link.n_tau()].iter().sum(),
                    TauMode::Fixed(t) => t * self.link.n_tau() as f64,
                    _ => 0.0,
                };
                let base = self.base_step[1];
                next.alpha0 += step / base * (1.0 / (1.0 / (base * base) + precision)).sqrt() * z;
            }
            Move::Hist(k) => next.hist[k] += step * z,
            Move::Level => {
                next.alpha0 += step * z;
                for h in next.hist.iter_mut().take(self.link.n_hist()) {
                    *h += step * z;
                }
            }
            Move::Trade => {
                next.alpha0 += step * z;
                next.delta -= step * z;
            }
            Move::LogRootTau(k) => next.tau[k] *= (2.0 * step * z).exp(),
            Move::LogShape => {
                next.shape *= (step * z).exp();
                self.refresh_exposure(&mut next);
            }
        }
        next
    }

    fn initial_state(&self, rng: &mut SimRng) -> State {
        let jitter = |rng: &mut SimRng, sd: f64| sd * rng.sample::<f64, _>(StandardNormal);
        let shape = self.fixed_shape.unwrap_or_else(|| (jitter(rng, 0.1)).exp());
        let mut st = State {
            delta: 0.0,
            alpha0: 0.0,
            hist: [0.0; 2],
            tau: [1.0; 2],
            shape,
            exposure: [0.0; 4],
        };
        self.refresh_exposure(&mut st);
        let rate = |slots: &[usize], st: &State| {
            let d: f64 = slots.iter().map(|&s| self.data.group(s).events).sum();
            let e: f64 = slots.iter().map(|&s| st.exposure[s]).sum::<f64>().max(1e-12);
            ((d + 0.5) / e).ln()
        };
        let control = if self.link == Link::Full { vec![MC, HC0, HC1] } else { vec![MC] };
        let a0 = rate(&control, &st);
        st.alpha0 = a0 + jitter(rng, 0.3);
        st.delta = rate(&[MT], &st) - a0 + jitter(rng, 0.3);
        match self.link.n_hist() {
            1 => st.hist[0] = rate(&[HC0, HC1], &st) + jitter(rng, 0.3),
            2 => {
                st.hist[0] = rate(&[HC0], &st) + jitter(rng, 0.3);
                st.hist[1] = rate(&[HC1], &st) + jitter(rng, 0.3);
            }
            _ => {}
        }
        if let TauMode::Fixed(t) = self.tau_mode {
            st.tau = [t; 2];
        }
        st
    }

    fn gibbs_tau(&self, st: &mut State, rng: &mut SimRng) {
        if let TauMode::Collapsed { shape, rate } = self.tau_mode {
            let centres = self.link_centres(st);
            for k in 0..self.link.n_tau() {
                st.tau[k] = draw_tau(rng, shape, rate, st.alpha0 - centres[k]);
            }
        }
    }

    fn record(&self, st: &State, out: &mut [Vec<f64>]) {
        let mut values = vec![st.delta, st.alpha0];
        values.extend(&st.hist[..self.link.n_hist()]);
        values.extend(&st.tau[..self.link.n_tau()]);
        values.push(st.shape);
        for (o, v) in out.iter_mut().zip(values) {
            o.push(v);
        }
    }

    fn names(&self) -> Vec<&'static str> {
        let mut names = vec!["delta", "alpha0"];
        match self.link.n_hist() {
            1 => names.push("alpha3"),
            2 => names.extend(["alpha1", "alpha2"]),
            _ => {}
        }
        match self.link.n_tau() {
            1 => names.push("tau"),
            2 => names.extend(["tau1", "tau2"]),
            _ => {}
        }
        names.push("shape");
        names
    }

    fn run_chain(&self, options: &McmcOptions, rng: &mut SimRng) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut st = self.initial_state(rng);
        let mut current = self.log_target(&st);
        let n_moves = self.moves.len();
        let mut log_scale = vec![0.0f64; n_moves];
        let mut batch_accepts = vec![0usize; n_moves];
        let mut sample_accepts = vec![0usize; n_moves];
        let mut out = vec![Vec::with_capacity(options.sample_iters); self.names().len()];
        for iter in 0..options.adapt_iters + options.sample_iters {
            let adapting = iter < options.adapt_iters;
            for (m, &mv) in self.moves.iter().enumerate() {
                let step = self.base_step[m] * log_scale[m].exp();
                let proposal = self.propose(&st, mv, step, rng);
                let value = self.log_target(&proposal);
                let u: f64 = rng.random();
                if value.is_finite() && u.ln() < value - current {
                    st = proposal;
                    current = value;
                    if adapting {
                        batch_accepts[m] += 1;
                    } else {
                        sample_accepts[m] += 1;
                    }
                }
            }
            self.gibbs_tau(&mut st, rng);
            if adapting && (iter + 1) % BATCH == 0 {
                let batch = ((iter + 1) / BATCH) as f64;
                let gain = (2.0 / batch.sqrt()).min(0.5);
                for m in 0..n_moves {
                    let rate = batch_accepts[m] as f64 / BATCH as f64;
                    log_scale[m] += if rate > TARGET_ACCEPTANCE { gain } else { -gain };
                    batch_accepts[m] = 0;
                }
            }
            if !adapting {
                self.record(&st, &mut out);
            }
        }
        let n = options.sample_iters.max(1) as f64;
        (out, sample_accepts.iter().map(|&a| a as f64 / n).collect())
    }
}

fn check_options(options: &McmcOptions) -> Result<()> {
    if options.chains == 0 || options.sample_iters < 4 {
        return Err(Error::Argument("need at least one chain and four sampling iterations".into()));
    }
    if options.fixed_tau.is_some_and(|t| !(t > 0.0 && t.is_finite())) {
        return Err(Error::Argument("commensurate precision must be positive".into()));
    }
    if options.fixed_shape.is_some_and(|p| !(p > 0.0 && p.is_finite())) {
        return Err(Error::Argument("Weibull shape must be positive".into()));
    }
    Ok(())
}

/// Run all chains; never fails on poor mixing (see `Posterior::mixed`).
pub fn mcmc_sample(data: &BayesData, variant: BorrowVariant, options: &McmcOptions) -> Result<Posterior> {
    check_options(options)?;
    let model = BorrowModel::new(variant, options.same_form, data);
    let sampler = Sampler::new(data, &model, options);
    let mut draws = Vec::with_capacity(options.chains);
    let mut acceptance = vec![0.0; sampler.moves.len()];
    for chain in 0..options.chains {
        let mut rng = rng::stream(options.seed, &[chain as u64]);
        let (out, acc) = sampler.run_chain(options, &mut rng);
        for (a, b) in acceptance.iter_mut().zip(acc) {
            *a += b / options.chains as f64;
        }
        draws.push(out);
    }
    let names = sampler.names();
    let rhat = (0..names.len())
        .map(|k| {
            let chains: Vec<&[f64]> = draws.iter().map(|c: &Vec<Vec<f64>>| c[k].as_slice()).collect();
            split_rhat(&chains)
        })
        .collect();
    Ok(Posterior {
        variant,
        names,
        draws,
        rhat,
        acceptance: sampler.moves.iter().map(|m| m.name()).zip(acceptance).collect(),
    })
}

/// As `mcmc_sample`, but a delta split-R-hat above the limit is an error.
pub fn mcmc_run(data: &BayesData, variant: BorrowVariant, options: &McmcOptions) -> Result<Posterior> {
    let posterior = mcmc_sample(data, variant, options)?;
    if !posterior.mixed() {
        return Err(Error::MixingFailure {
            rhat: posterior.delta_rhat(),
        });
    }
    Ok(posterior)
}
