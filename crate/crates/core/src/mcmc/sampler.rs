use super::space::ParameterSpace;
use super::{ChainMeta, PosteriorSamples, SamplerMeta, Target};
use crate::error::{Error, Result};
use crate::rng::{substream, StreamRng};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub chains: usize,
    pub warmup: usize,
    pub draws: usize,
    /// Keep every `thin`-th post-warmup sweep.
    pub thin: usize,
    pub seed: u64,
    /// Standard deviation of per-chain jitter added to the initial point on
    /// the unconstrained scale.
    pub init_jitter: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { chains: 4, warmup: 1000, draws: 1000, thin: 1, seed: 1, init_jitter: 0.0 }
    }
}

impl SamplerConfig {
    fn validate(&self) -> Result<()> {
        if self.chains == 0 || self.draws == 0 || self.thin == 0 {
            return Err(Error::config("sampler chains, draws and thin must be positive"));
        }
        if !(self.init_jitter >= 0.0 && self.init_jitter.is_finite()) {
            return Err(Error::config("init_jitter must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Sample with every chain starting from `init` (plus optional jitter).
pub fn sample<T: Target>(target: &T, space: &ParameterSpace, init: &[f64], config: &SamplerConfig) -> Result<PosteriorSamples> {
    let inits = vec![init.to_vec(); config.chains.max(1)];
    sample_from(target, space, &inits, config)
}

/// Sample with one initial point per chain.
pub fn sample_from<T: Target>(
    target: &T,
    space: &ParameterSpace,
    inits: &[Vec<f64>],
    config: &SamplerConfig,
) -> Result<PosteriorSamples> {
    config.validate()?;
    if inits.len() != config.chains {
        return Err(Error::config(format!("expected {} initial points, got {}", config.chains, inits.len())));
    }
    if space.dim() == 0 {
        return Err(Error::config("parameter space is empty"));
    }
    for init in inits {
        if init.len() != space.dim() {
            return Err(Error::config(format!("initial point has {} coordinates, space has {}", init.len(), space.dim())));
        }
        if !space.contains(init) {
            return Err(Error::Init("initial point violates a support constraint".into()));
        }
    }
    let runs: Vec<Result<ChainOutput>> = (0..config.chains)
        .into_par_iter()
        .map(|c| run_chain(target, space, &inits[c], config, c))
        .collect();
    let mut out = PosteriorSamples::new(space.names());
    out.meta = SamplerMeta { block_names: space.block_names(), chains: Vec::new() };
    for (c, run) in runs.into_iter().enumerate() {
        let run = run?;
        for row in run.draws.chunks(space.dim()) {
            out.push(c as u32, row);
        }
        out.meta.chains.push(run.meta);
    }
    Ok(out)
}

struct ChainOutput {
    draws: Vec<f64>,
    meta: ChainMeta,
}

struct BlockState {
    indices: Vec<usize>,
    log_scale: f64,
    chol: DMatrix<f64>,
    // running moments of the unconstrained block values in the current window
    n: usize,
    mean: DVector<f64>,
    m2: DMatrix<f64>,
    adapt_iter: usize,
    accepted: usize,
    proposed: usize,
    target_rate: f64,
}

impl BlockState {
    fn new(space: &ParameterSpace, indices: &[usize]) -> Self {
        let d = indices.len();
        let diag = DVector::from_iterator(d, indices.iter().map(|&i| space.coords[i].scale));
        BlockState {
            indices: indices.to_vec(),
            log_scale: 0.0,
            chol: DMatrix::from_diagonal(&diag),
            n: 0,
            mean: DVector::zeros(d),
            m2: DMatrix::zeros(d, d),
            adapt_iter: 0,
            accepted: 0,
            proposed: 0,
            target_rate: if d == 1 { 0.44 } else { 0.234 },
        }
    }

    fn dim(&self) -> usize {
        self.indices.len()
    }

    fn observe(&mut self, z: &[f64]) {
        let v = DVector::from_iterator(self.dim(), self.indices.iter().map(|&i| z[i]));
        self.n += 1;
        let delta = &v - &self.mean;
        self.mean += &delta / self.n as f64;
        let delta2 = &v - &self.mean;
        self.m2 += &delta * delta2.transpose();
    }

    /// Replace the proposal shape with the window covariance, then reset the window.
    fn refresh_covariance(&mut self) {
        let d = self.dim();
        if self.n > 2 * d + 10 {
            let mut cov = &self.m2 / (self.n as f64 - 1.0);
            let avg_diag = cov.diagonal().mean().max(1e-12);
            for k in 0..d {
                cov[(k, k)] += 1e-6 * avg_diag + 1e-12;
            }
            if let Some(ch) = cov.cholesky() {
                self.chol = ch.l();
                self.log_scale = 0.0;
            }
        }
        self.n = 0;
        self.mean.fill(0.0);
        self.m2.fill(0.0);
    }

    fn adapt_scale(&mut self, accept_prob: f64) {
        self.adapt_iter += 1;
        let gamma = (self.adapt_iter as f64 + 1.0).powf(-0.6);
        self.log_scale = (self.log_scale + gamma * (accept_prob - self.target_rate)).clamp(-30.0, 10.0);
    }

    fn multiplier(&self) -> f64 {
        self.log_scale.exp() * 2.38 / (self.dim() as f64).sqrt()
    }
}

fn run_chain<T: Target>(
    target: &T,
    space: &ParameterSpace,
    init: &[f64],
    config: &SamplerConfig,
    chain: usize,
) -> Result<ChainOutput> {
    let dim = space.dim();
    let mut rng: StreamRng = substream(config.seed, &["mcmc-chain", &chain.to_string()]);
    let coords = &space.coords;

    let mut z: Vec<f64> = coords.iter().zip(init).map(|(c, &x)| c.support.to_unconstrained(x)).collect();
    let mut x: Vec<f64> = init.to_vec();
    if config.init_jitter > 0.0 {
        // a jittered start that leaves the support or the density's domain
        // falls back to the unjittered point
        let mut zj = z.clone();
        for v in zj.iter_mut() {
            let e: f64 = rng.sample(StandardNormal);
            *v += config.init_jitter * e;
        }
        let xj: Vec<f64> = coords.iter().zip(&zj).map(|(c, &v)| c.support.to_constrained(v)).collect();
        if space.contains(&xj) && target.log_density(&xj).is_finite() {
            z = zj;
            x = xj;
        }
    }
    let mut lp = target.log_density(&x);
    if lp.is_nan() {
        return Err(Error::Model { msg: "log density is NaN at the initial point".into(), coords: labelled(space, &x, &(0..dim).collect::<Vec<_>>()) });
    }
    if !lp.is_finite() {
        return Err(Error::Init(format!("log density is {lp} at the initial point")));
    }
    let mut cache = target.init_cache(&x);

    let mut blocks: Vec<BlockState> = space.blocks.iter().map(|b| BlockState::new(space, &b.indices)).collect();

    let w = config.warmup;
    let cov_points = [(w as f64 * 0.15) as usize, (w as f64 * 0.4) as usize, (w as f64 * 0.75) as usize];
    let total = w + config.draws * config.thin;
    let mut draws = Vec::with_capacity(config.draws * dim);
    let mut old = Vec::new();
    let mut eps = Vec::new();
    let n_custom = target.n_custom_moves();
    let mut custom_accepted = vec![0usize; n_custom];

    for iter in 0..total {
        let warm = iter < w;
        if warm && iter == cov_points[0] {
            for b in blocks.iter_mut() {
                b.n = 0;
                b.mean.fill(0.0);
                b.m2.fill(0.0);
            }
        }
        if warm && (iter == cov_points[1] || iter == cov_points[2]) && iter > cov_points[0] {
            for b in blocks.iter_mut() {
                b.refresh_covariance();
            }
        }
        if iter == w {
            for b in blocks.iter_mut() {
                b.accepted = 0;
                b.proposed = 0;
            }
        }
        for b in blocks.iter_mut() {
            let d = b.dim();
            eps.clear();
            for _ in 0..d {
                eps.push(rng.sample::<f64, _>(StandardNormal));
            }
            let mult = b.multiplier();
            old.clear();
            let mut log_jac = 0.0;
            let mut in_support = true;
            for (r, &i) in b.indices.iter().enumerate() {
                let mut step = 0.0;
                for c in 0..=r {
                    step += b.chol[(r, c)] * eps[c];
                }
                let sup = coords[i].support;
                let zi = z[i];
                let zn = zi + mult * step;
                let xn = sup.to_constrained(zn);
                old.push(x[i]);
                log_jac += sup.log_jacobian(zn) - sup.log_jacobian(zi);
                in_support &= sup.contains(xn);
                x[i] = xn;
            }
            let accept_prob = if in_support {
                let diff = target.log_density_diff(&x, &b.indices, &old, &cache, lp);
                if diff.is_nan() {
                    return Err(Error::Model {
                        msg: format!("log density is NaN after updating block {}", space.blocks[blocks_index(space, &b.indices)].name),
                        coords: labelled(space, &x, &b.indices),
                    });
                }
                let log_a = diff + log_jac;
                let a = if log_a >= 0.0 { 1.0 } else { log_a.exp() };
                let u: f64 = rng.random();
                if u < a {
                    lp += diff;
                    for &i in &b.indices {
                        z[i] = coords[i].support.to_unconstrained(x[i]);
                    }
                    target.commit(&x, &b.indices, &mut cache);
                    b.accepted += 1;
                } else {
                    restore(&mut x, &b.indices, &old);
                }
                a
            } else {
                restore(&mut x, &b.indices, &old);
                0.0
            };
            b.proposed += 1;
            if warm {
                b.adapt_scale(accept_prob);
            }
        }
        for m in 0..n_custom {
            if let Some(changed) = target.custom_move(m, &mut x, &mut cache, &mut lp, &mut rng)? {
                for i in changed {
                    z[i] = coords[i].support.to_unconstrained(x[i]);
                }
                if !warm {
                    custom_accepted[m] += 1;
                }
            }
        }
        if warm && iter >= cov_points[0] {
            for b in blocks.iter_mut() {
                b.observe(&z);
            }
        }
        // refresh the running density occasionally so incremental updates do not drift
        if iter % 200 == 199 {
            lp = target.log_density(&x);
            cache = target.init_cache(&x);
        }
        if !warm && (iter - w) % config.thin == config.thin - 1 {
            draws.extend_from_slice(&x);
        }
    }

    let meta = ChainMeta {
        acceptance: blocks.iter().map(|b| if b.proposed == 0 { 0.0 } else { b.accepted as f64 / b.proposed as f64 }).collect(),
        step_size: blocks.iter().map(|b| b.multiplier()).collect(),
        custom_acceptance: custom_accepted.iter().map(|&a| a as f64 / (total - w).max(1) as f64).collect(),
    };
    Ok(ChainOutput { draws, meta })
}

fn restore(x: &mut [f64], idx: &[usize], old: &[f64]) {
    for (k, &i) in idx.iter().enumerate() {
        x[i] = old[k];
    }
}

fn blocks_index(space: &ParameterSpace, idx: &[usize]) -> usize {
    space.blocks.iter().position(|b| b.indices == idx).unwrap_or(0)
}

fn labelled(space: &ParameterSpace, x: &[f64], idx: &[usize]) -> Vec<(String, f64)> {
    idx.iter().map(|&i| (space.coords[i].name.clone(), x[i])).collect()
}
