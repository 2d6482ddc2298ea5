use super::SsmPriors;
use crate::error::{Error, Result};
use crate::geo::{cumulative_displacements, Displacement, EarthModel};
use crate::mcmc::Target;
use crate::rng::StreamRng;
use rand::Rng;
use rand_distr::StandardNormal;
use std::ops::Range;
use crate::stats::{normal_ln_pdf, truncnorm_lower_ln_pdf, wrap_angle};
use crate::tracks::{FixSchedule, Kinematics, Track};
use nalgebra::{DMatrix, DVector};

const MU: usize = 0;
const ALPHA: usize = 1;
const SIGMA_S: usize = 2;
const SIGMA_TH: usize = 3;
const TAU_X: usize = 4;
const TAU_Y: usize = 5;
const TAU_S: usize = 6;
const TAU_TH: usize = 7;
pub(crate) const N_PARAMS: usize = 8;

/// Empirical speeds below this are treated as a stationary report: the
/// heading is undefined and the relative-error speed term degenerates.
const STATIONARY_KMH: f64 = 1e-6;

/// The log posterior of one track, laid out as
/// `[params(8), beta(m−1), s(n), theta(n)]`.
#[derive(Debug, Clone)]
pub struct SsmModel {
    n: usize,
    n_beta: usize,
    speed_obs: Vec<f64>,
    heading_obs: Vec<f64>,
    dt: Vec<f64>,
    use_obs: Vec<bool>,
    beta_of: Vec<usize>,
    beta_steps: Vec<Vec<usize>>,
    fixes: Vec<usize>,
    q_fix: Vec<Displacement>,
    cos_psi_fix: Vec<f64>,
    priors: SsmPriors,
    mu_s_prior_mean: f64,
    segments: Vec<Segment>,
    beta_ranges: Vec<(usize, usize)>,
    beta_dist: Vec<f64>,
    total_dist: f64,
}

/// A stretch of latent speeds or headings redrawn jointly by forward
/// filtering, backward sampling.
#[derive(Debug, Clone, Copy)]
struct Segment {
    speed: bool,
    a: usize,
    b: usize,
}

#[derive(Debug, Clone)]
pub struct SsmCache {
    d: Vec<Displacement>,
    p_fix: Vec<Displacement>,
}

#[derive(Clone, Copy)]
enum Kind {
    Param(usize),
    Beta(usize),
    Speed(usize, usize),
    Heading(usize, usize),
}

impl SsmModel {
    pub fn new(track: &Track, k: &Kinematics, fs: &FixSchedule, priors: SsmPriors, earth: &EarthModel) -> Result<Self> {
        let n = k.len();
        if n + 1 != track.len() {
            return Err(Error::data("kinematics do not match the track length"));
        }
        if fs.is_empty() {
            return Err(Error::Classification(format!("track {} has no fixes", track.id)));
        }
        if fs.fix_indices.iter().any(|&f| f > n) || fs.fix_indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::data("fix indices must be sorted report indices"));
        }
        let m = fs.len();
        let n_beta = m.saturating_sub(1);
        let q = cumulative_displacements(&track.points(), earth)?;
        let mut use_obs = vec![true; n];
        let mut beta_of = vec![0; n];
        let mut beta_steps = vec![Vec::new(); n_beta];
        for j in 0..n {
            let report = j + 1;
            use_obs[j] = !fs.contains(report) && k.speed[j] > STATIONARY_KMH;
            // β_k covers reports in [f_k, f_{k+1}); reports outside the fixes use the nearest interval
            let after = fs.fix_indices.partition_point(|&f| f <= report);
            let b = after.saturating_sub(1).min(n_beta.saturating_sub(1));
            beta_of[j] = b;
            if use_obs[j] && n_beta > 0 {
                beta_steps[b].push(j);
            }
        }
        let mean_speed = k.speed.iter().sum::<f64>() / n as f64;
        let beta_ranges: Vec<(usize, usize)> = (0..n_beta)
            .map(|b| (beta_of.partition_point(|&v| v < b), beta_of.partition_point(|&v| v <= b)))
            .collect();
        let beta_dist = beta_ranges.iter().map(|&(a, b)| (a..b).map(|j| k.dt_hours[j] * k.speed[j]).sum::<f64>().max(1.0)).collect();
        Ok(SsmModel {
            n,
            n_beta,
            speed_obs: k.speed.clone(),
            heading_obs: k.heading.clone(),
            dt: k.dt_hours.clone(),
            use_obs,
            beta_of,
            beta_steps,
            fixes: fs.fix_indices.clone(),
            q_fix: fs.fix_indices.iter().map(|&f| q[f]).collect(),
            cos_psi_fix: fs.fix_indices.iter().map(|&f| track.reports[f].pos.lat().cos()).collect(),
            priors,
            mu_s_prior_mean: mean_speed,
            segments: Vec::new(),
            beta_ranges,
            beta_dist,
            total_dist: (0..n).map(|j| k.dt_hours[j] * k.speed[j]).sum(),
        })
    }

    /// Enable joint segment redraws of width `window` every `stride` steps.
    pub fn with_segments(mut self, window: usize, stride: usize) -> Self {
        self.segments.clear();
        if window == 0 || stride == 0 {
            return self;
        }
        for speed in [true, false] {
            let mut a = 0;
            while a < self.n {
                let b = (a + window).min(self.n);
                self.segments.push(Segment { speed, a, b });
                if b == self.n {
                    break;
                }
                a += stride;
            }
        }
        self
    }

    pub fn n_steps(&self) -> usize {
        self.n
    }

    pub fn n_beta(&self) -> usize {
        self.n_beta
    }

    pub fn dim(&self) -> usize {
        N_PARAMS + self.n_beta + 2 * self.n
    }

    pub fn beta_offset(&self) -> usize {
        N_PARAMS
    }

    pub fn speed_offset(&self) -> usize {
        N_PARAMS + self.n_beta
    }

    pub fn heading_offset(&self) -> usize {
        N_PARAMS + self.n_beta + self.n
    }

    pub fn fixes(&self) -> &[usize] {
        &self.fixes
    }

    pub fn priors(&self) -> &SsmPriors {
        &self.priors
    }

    pub fn mu_s_prior_mean(&self) -> f64 {
        self.mu_s_prior_mean
    }

    /// Whether the dead-reckoning observation of step `j` enters the likelihood.
    pub fn observes_step(&self, j: usize) -> bool {
        self.use_obs[j]
    }

    pub fn beta_index(&self, j: usize) -> Option<usize> {
        (self.n_beta > 0).then_some(self.beta_of[j])
    }

    /// Full density with explicit support checks.
    pub fn log_density_checked(&self, x: &[f64]) -> f64 {
        if x.len() != self.dim() || x.iter().any(|v| !v.is_finite()) {
            return f64::NEG_INFINITY;
        }
        let p = &x[..N_PARAMS];
        if p[MU] < 0.0 || !(p[ALPHA] > 0.0 && p[ALPHA] < 1.0) || p[SIGMA_S..].iter().any(|v| *v <= 0.0) {
            return f64::NEG_INFINITY;
        }
        if x[self.speed_offset()..self.heading_offset()].iter().any(|s| *s <= 0.0) {
            return f64::NEG_INFINITY;
        }
        let lp = self.log_density(x);
        if lp.is_nan() {
            f64::NEG_INFINITY
        } else {
            lp
        }
    }

    /// True displacement at every report.
    pub fn displacements(&self, x: &[f64]) -> Vec<Displacement> {
        let mut p = Vec::with_capacity(self.n + 1);
        let mut acc = Displacement::ZERO;
        p.push(acc);
        for j in 0..self.n {
            acc += self.step(x, j);
            p.push(acc);
        }
        p
    }

    fn step(&self, x: &[f64], j: usize) -> Displacement {
        let s = x[self.speed_offset() + j];
        let th = x[self.heading_offset() + j];
        Displacement::new(self.dt[j] * s * th.cos(), self.dt[j] * s * th.sin())
    }

    fn prior(&self, p: &[f64]) -> f64 {
        let pr = &self.priors;
        normal_ln_pdf(p[MU], self.mu_s_prior_mean, pr.mu_s_sd)
            + normal_ln_pdf(p[SIGMA_S], 0.0, pr.sigma_s_scale)
            + normal_ln_pdf(p[SIGMA_TH], 0.0, pr.sigma_theta_scale)
            + normal_ln_pdf(p[TAU_X], 0.0, pr.tau_x_scale)
            + normal_ln_pdf(p[TAU_Y], 0.0, pr.tau_y_scale)
            + normal_ln_pdf(p[TAU_S], 0.0, pr.tau_s_scale)
            + normal_ln_pdf(p[TAU_TH], 0.0, pr.tau_theta_scale)
    }

    fn speed_transition(&self, j: usize, s_prev: f64, s: f64, p: &[f64]) -> f64 {
        let (mu, alpha, sigma) = (p[MU], p[ALPHA], p[SIGMA_S]);
        if j == 0 {
            // stationary distribution of the untruncated AR(1)
            truncnorm_lower_ln_pdf(s, mu, sigma / (1.0 - alpha * alpha).sqrt(), 0.0)
        } else {
            truncnorm_lower_ln_pdf(s, mu + alpha * (s_prev - mu), sigma, 0.0)
        }
    }

    fn heading_transition(&self, th_prev: f64, th: f64, p: &[f64]) -> f64 {
        normal_ln_pdf(th, th_prev, p[SIGMA_TH])
    }

    fn speed_obs_term(&self, j: usize, s: f64, p: &[f64]) -> f64 {
        if !self.use_obs[j] {
            return 0.0;
        }
        normal_ln_pdf(self.speed_obs[j], s, p[TAU_S] * s)
    }

    fn heading_obs_term(&self, j: usize, th: f64, beta: f64, p: &[f64]) -> f64 {
        if !self.use_obs[j] {
            return 0.0;
        }
        normal_ln_pdf(wrap_angle(self.heading_obs[j] - th - beta), 0.0, p[TAU_TH])
    }

    fn fix_term(&self, i: usize, pos: Displacement, p: &[f64]) -> f64 {
        let q = self.q_fix[i];
        normal_ln_pdf(q.dx, pos.dx, p[TAU_X] * self.cos_psi_fix[i]) + normal_ln_pdf(q.dy, pos.dy, p[TAU_Y])
    }

    fn beta_at(&self, x: &[f64], j: usize) -> f64 {
        if self.n_beta == 0 {
            0.0
        } else {
            x[N_PARAMS + self.beta_of[j]]
        }
    }

    fn speed_terms(&self, x: &[f64], p: &[f64]) -> f64 {
        let so = self.speed_offset();
        (0..self.n)
            .map(|j| self.speed_transition(j, if j > 0 { x[so + j - 1] } else { 0.0 }, x[so + j], p))
            .sum()
    }

    fn heading_terms(&self, x: &[f64], p: &[f64]) -> f64 {
        let ho = self.heading_offset();
        (1..self.n).map(|j| self.heading_transition(x[ho + j - 1], x[ho + j], p)).sum()
    }

    fn speed_obs_terms(&self, x: &[f64], p: &[f64]) -> f64 {
        let so = self.speed_offset();
        (0..self.n).map(|j| self.speed_obs_term(j, x[so + j], p)).sum()
    }

    fn heading_obs_terms(&self, x: &[f64], p: &[f64]) -> f64 {
        let ho = self.heading_offset();
        (0..self.n).map(|j| self.heading_obs_term(j, x[ho + j], self.beta_at(x, j), p)).sum()
    }

    fn fix_terms(&self, p_fix: &[Displacement], p: &[f64]) -> f64 {
        p_fix.iter().enumerate().map(|(i, pos)| self.fix_term(i, *pos, p)).sum()
    }

    fn fix_positions(&self, d: &[Displacement]) -> Vec<Displacement> {
        let mut out = Vec::with_capacity(self.fixes.len());
        let mut acc = Displacement::ZERO;
        let mut j = 0;
        for &f in &self.fixes {
            while j < f {
                acc += d[j];
                j += 1;
            }
            out.push(acc);
        }
        out
    }

    /// Gaussian approximation to the conditional of the latent speeds or
    /// headings of steps `a..b` given everything else: transitions, dead
    /// reckoning and fixes, with headings linearized about their observations.
    /// Heading segments also redraw the biases of every interval they touch;
    /// these follow the latents in the returned proposal.
    fn segment_proposal(&self, seg: Segment, x: &[f64], cache: &SsmCache) -> Option<(GaussianProposal, Range<usize>)> {
        let (a, b) = (seg.a, seg.b);
        let len = b - a;
        let p = &x[..N_PARAMS];
        let betas = if seg.speed || self.n_beta == 0 { 0..0 } else { self.beta_of[a]..self.beta_of[b - 1] + 1 };
        let dim = len + betas.len();
        let bvar = |k: usize| len + k - betas.start;
        let mut lam = DMatrix::<f64>::zeros(dim, dim);
        let mut eta = DVector::<f64>::zeros(dim);
        let (c, phi, q, off) = if seg.speed {
            (p[MU] * (1.0 - p[ALPHA]), p[ALPHA], p[SIGMA_S] * p[SIGMA_S], self.speed_offset())
        } else {
            (0.0, 1.0, p[SIGMA_TH] * p[SIGMA_TH], self.heading_offset())
        };

        // transitions, including the fixed neighbours on either side
        if a > 0 {
            lam[(0, 0)] += 1.0 / q;
            eta[0] += (c + phi * x[off + a - 1]) / q;
        } else if seg.speed {
            let v = q / (1.0 - phi * phi);
            lam[(0, 0)] += 1.0 / v;
            eta[0] += p[MU] / v;
        }
        for t in 1..len {
            lam[(t, t)] += 1.0 / q;
            lam[(t - 1, t - 1)] += phi * phi / q;
            lam[(t, t - 1)] -= phi / q;
            lam[(t - 1, t)] -= phi / q;
            eta[t] += c / q;
            eta[t - 1] -= phi * c / q;
        }
        if b < self.n {
            lam[(len - 1, len - 1)] += phi * phi / q;
            eta[len - 1] += phi * (x[off + b] - c) / q;
        }

        // dead-reckoning observations; headings are unwrapped along the segment
        let ho = self.heading_offset();
        let mut lin = vec![0.0; len];
        let mut reference = if a > 0 { Some(x[ho + a - 1]) } else { None };
        let r_th = p[TAU_TH] * p[TAU_TH];
        for t in 0..len {
            let j = a + t;
            if seg.speed {
                if self.use_obs[j] {
                    let r = (p[TAU_S] * self.speed_obs[j]).powi(2);
                    lam[(t, t)] += 1.0 / r;
                    eta[t] += self.speed_obs[j] / r;
                }
            } else {
                if self.use_obs[j] {
                    let raw = self.heading_obs[j];
                    let rf = reference.unwrap_or(raw);
                    let y = rf + wrap_angle(raw - rf);
                    // y observes θ_j + β
                    lam[(t, t)] += 1.0 / r_th;
                    eta[t] += y / r_th;
                    if !betas.is_empty() {
                        let u = bvar(self.beta_of[j]);
                        lam[(u, u)] += 1.0 / r_th;
                        lam[(t, u)] += 1.0 / r_th;
                        lam[(u, t)] += 1.0 / r_th;
                        eta[u] += y / r_th;
                    }
                    reference = Some(y);
                }
                lin[t] = reference.unwrap_or(f64::NAN);
            }
        }
        for k in betas.clone() {
            let u = bvar(k);
            for &j in self.beta_steps[k].iter().filter(|&&j| j < a || j >= b) {
                lam[(u, u)] += 1.0 / r_th;
                eta[u] += wrap_angle(self.heading_obs[j] - x[ho + j]) / r_th;
            }
            lam[(u, u)] += 1e-8;
        }
        if !seg.speed {
            // before the first observation of a leading segment, linearize
            // about that observation
            let fill = lin.iter().copied().find(|v| !v.is_nan()).unwrap_or(0.0);
            for t in 0..len {
                if lin[t].is_nan() {
                    lin[t] = fill;
                }
                lam[(t, t)] += 1e-8;
                eta[t] += 1e-8 * lin[t];
            }
        }

        // fixes: displacement of the segment up to each later fix is linear
        // in the speeds and approximately linear in the headings
        let so = self.speed_offset();
        let first_fix = self.fixes.partition_point(|&f| f <= a);
        let mut hx = vec![0.0; len];
        let mut hy = vec![0.0; len];
        let (mut cx, mut cy) = (0.0, 0.0);
        let mut current = Displacement::ZERO;
        let mut filled = 0;
        let mut tail = (0.0, 0.0, 0.0, 0.0);
        for i in first_fix..self.fixes.len() {
            let upto = self.fixes[i].min(b) - a;
            while filled < upto {
                let j = a + filled;
                current += cache.d[j];
                if seg.speed {
                    let th = x[ho + j];
                    hx[filled] = self.dt[j] * th.cos();
                    hy[filled] = self.dt[j] * th.sin();
                } else {
                    let (ds, th) = (self.dt[j] * x[so + j], lin[filled]);
                    hx[filled] = -ds * th.sin();
                    hy[filled] = ds * th.cos();
                    cx += ds * (th.cos() + th * th.sin());
                    cy += ds * (th.sin() - th * th.cos());
                }
                filled += 1;
            }
            let other = cache.p_fix[i] - current;
            let target = self.q_fix[i] - other;
            let rx = (p[TAU_X] * self.cos_psi_fix[i]).powi(2);
            let ry = p[TAU_Y] * p[TAU_Y];
            // fixes past the segment share one coefficient vector
            let (wx, wy) = (1.0 / rx, 1.0 / ry);
            if filled == len {
                tail.0 += wx;
                tail.1 += wx * (target.dx - cx);
                tail.2 += wy;
                tail.3 += wy * (target.dy - cy);
                continue;
            }
            add_fix(&mut lam, &mut eta, &hx[..filled], wx, wx * (target.dx - cx));
            add_fix(&mut lam, &mut eta, &hy[..filled], wy, wy * (target.dy - cy));
        }
        if tail.0 > 0.0 {
            add_fix(&mut lam, &mut eta, &hx, tail.0, tail.1);
            add_fix(&mut lam, &mut eta, &hy, tail.2, tail.3);
        }
        GaussianProposal::new(lam, eta).map(|g| (g, betas))
    }

    fn segment_move(&self, seg: Segment, x: &mut [f64], cache: &mut SsmCache, lp: &mut f64, rng: &mut StreamRng) -> Result<Option<Vec<usize>>> {
        let Some((prop, betas)) = self.segment_proposal(seg, x, cache) else {
            return Ok(None);
        };
        let off = if seg.speed { self.speed_offset() } else { self.heading_offset() };
        let range = off + seg.a..off + seg.b;
        let len = range.len();
        let new = prop.sample(rng);
        if seg.speed && new.iter().any(|v| *v <= 0.0) {
            return Ok(None);
        }
        let mut old: Vec<f64> = x[range.clone()].to_vec();
        // biases are circular: score the image of the current value nearest the proposal mean
        for k in betas.clone() {
            let m = prop.mean(len + k - betas.start);
            old.push(m + wrap_angle(x[N_PARAMS + k] - m));
        }
        let log_q_old = prop.ln_pdf(&old);
        let log_q_new = prop.ln_pdf(&new);
        x[range.clone()].copy_from_slice(&new[..len]);
        let block: Vec<usize> = range.clone().collect();
        let mut diff = self.log_density_diff(x, &block, &old[..len], cache, *lp);
        for k in betas.clone() {
            let bi = N_PARAMS + k;
            let prev = x[bi];
            x[bi] = wrap_angle(new[len + k - betas.start]);
            diff += self.log_density_diff(x, &[bi], &[prev], cache, *lp);
        }
        if diff.is_nan() {
            return Err(Error::Model {
                msg: "log density is NaN after a segment redraw".into(),
                coords: block.iter().map(|&i| (format!("x[{i}]"), x[i])).collect(),
            });
        }
        let log_a = diff + log_q_old - log_q_new;
        if log_a >= 0.0 || rng.random::<f64>() < log_a.exp() {
            *lp += diff;
            self.commit(x, &block, cache);
            let mut changed = block;
            changed.extend(betas.map(|k| N_PARAMS + k));
            Ok(Some(changed))
        } else {
            x[range].copy_from_slice(&old[..len]);
            for k in betas.clone() {
                x[N_PARAMS + k] = wrap_angle(old[len + k - betas.start]);
            }
            Ok(None)
        }
    }

    /// Scale σ_s together with every speed's deviation from μ_s, keeping the
    /// AR innovations fixed.
    fn speed_scale(&self, x: &mut [f64], cache: &mut SsmCache, lp: &mut f64, rng: &mut StreamRng) -> Result<Option<Vec<usize>>> {
        let step = [0.02, 0.05, 0.15][rng.random_range(0..3)];
        let log_c = step * rng.sample::<f64, _>(StandardNormal);
        let c = log_c.exp();
        let off = self.speed_offset();
        let mut y = x.to_vec();
        y[SIGMA_S] *= c;
        for v in &mut y[off..off + self.n] {
            *v = x[MU] + c * (*v - x[MU]);
        }
        if y[off..off + self.n].iter().any(|v| *v <= 0.0) {
            return Ok(None);
        }
        let lp_new = self.log_density(&y);
        if lp_new.is_nan() {
            return Err(Error::Model { msg: "log density is NaN after a speed rescaling".into(), coords: vec![("c".into(), c)] });
        }
        let log_a = lp_new - *lp + (self.n + 1) as f64 * log_c;
        if log_a >= 0.0 || rng.random::<f64>() < log_a.exp() {
            x.copy_from_slice(&y);
            *lp = lp_new;
            *cache = self.init_cache(x);
            let mut changed: Vec<usize> = (off..off + self.n).collect();
            changed.push(SIGMA_S);
            Ok(Some(changed))
        } else {
            Ok(None)
        }
    }

    /// Rotate the biases `betas` together with headings `a..b`, which leaves
    /// the heading observations they cover unchanged.
    #[allow(clippy::too_many_arguments)]
    fn rotate(
        &self,
        betas: Range<usize>,
        a: usize,
        b: usize,
        dist: f64,
        x: &mut [f64],
        cache: &mut SsmCache,
        lp: &mut f64,
        rng: &mut StreamRng,
    ) -> Result<Option<Vec<usize>>> {
        if a == b {
            return Ok(None);
        }
        let scale = [0.25, 1.0, 4.0][rng.random_range(0..3)];
        let delta = scale * x[TAU_X].hypot(x[TAU_Y]) / dist.max(1.0) * rng.sample::<f64, _>(StandardNormal);
        let ho = self.heading_offset();
        let headings: Vec<usize> = (ho + a..ho + b).collect();
        let old: Vec<f64> = x[ho + a..ho + b].to_vec();
        for i in &headings {
            x[*i] += delta;
        }
        let mut diff = self.log_density_diff(x, &headings, &old, cache, *lp);
        let old_beta: Vec<f64> = x[N_PARAMS + betas.start..N_PARAMS + betas.end].to_vec();
        for k in betas.clone() {
            let bi = N_PARAMS + k;
            let prev = x[bi];
            x[bi] = wrap_angle(prev + delta);
            diff += self.log_density_diff(x, &[bi], &[prev], cache, *lp);
        }
        if diff.is_nan() {
            return Err(Error::Model {
                msg: "log density is NaN after a heading rotation".into(),
                coords: vec![("delta".into(), delta)],
            });
        }
        if diff >= 0.0 || rng.random::<f64>() < diff.exp() {
            *lp += diff;
            self.commit(x, &headings, cache);
            let mut changed = headings;
            changed.extend(betas.map(|k| N_PARAMS + k));
            Ok(Some(changed))
        } else {
            x[ho + a..ho + b].copy_from_slice(&old);
            x[N_PARAMS + betas.start..N_PARAMS + betas.end].copy_from_slice(&old_beta);
            Ok(None)
        }
    }

    fn classify(&self, block: &[usize]) -> Kind {
        let first = block[0];
        debug_assert!(block.windows(2).all(|w| w[1] == w[0] + 1));
        if first < N_PARAMS {
            Kind::Param(first)
        } else if first < self.speed_offset() {
            Kind::Beta(first - N_PARAMS)
        } else if first < self.heading_offset() {
            let a = first - self.speed_offset();
            Kind::Speed(a, a + block.len())
        } else {
            let a = first - self.heading_offset();
            Kind::Heading(a, a + block.len())
        }
    }

    /// Change in fix log-likelihood when steps `a..b` change from `d_old` to
    /// the values produced by `d_new`.
    fn fix_delta(&self, a: usize, b: usize, cache: &SsmCache, p: &[f64], d_new: impl Fn(usize) -> Displacement) -> f64 {
        let first = self.fixes.partition_point(|&f| f <= a);
        let mut shift = Displacement::ZERO;
        let mut j = a;
        let mut out = 0.0;
        for i in first..self.fixes.len() {
            let f = self.fixes[i];
            while j < b.min(f) {
                shift += d_new(j) - cache.d[j];
                j += 1;
            }
            let old = cache.p_fix[i];
            out += self.fix_term(i, old + shift, p) - self.fix_term(i, old, p);
        }
        out
    }
}

impl Target for SsmModel {
    type Cache = SsmCache;

    fn log_density(&self, x: &[f64]) -> f64 {
        let p = &x[..N_PARAMS];
        let d: Vec<Displacement> = (0..self.n).map(|j| self.step(x, j)).collect();
        let p_fix = self.fix_positions(&d);
        self.prior(p)
            + self.speed_terms(x, p)
            + self.heading_terms(x, p)
            + self.speed_obs_terms(x, p)
            + self.heading_obs_terms(x, p)
            + self.fix_terms(&p_fix, p)
    }

    fn init_cache(&self, x: &[f64]) -> SsmCache {
        let d: Vec<Displacement> = (0..self.n).map(|j| self.step(x, j)).collect();
        let p_fix = self.fix_positions(&d);
        SsmCache { d, p_fix }
    }

    fn log_density_diff(&self, x: &[f64], block: &[usize], old: &[f64], cache: &SsmCache, _current_lp: f64) -> f64 {
        let p_new = &x[..N_PARAMS];
        match self.classify(block) {
            Kind::Param(i) => {
                let mut p_old = [0.0; N_PARAMS];
                p_old.copy_from_slice(p_new);
                p_old[i] = old[0];
                let mut out = self.prior(p_new) - self.prior(&p_old);
                match i {
                    MU | ALPHA | SIGMA_S => out += self.speed_terms(x, p_new) - self.speed_terms(x, &p_old),
                    SIGMA_TH => out += self.heading_terms(x, p_new) - self.heading_terms(x, &p_old),
                    TAU_S => out += self.speed_obs_terms(x, p_new) - self.speed_obs_terms(x, &p_old),
                    TAU_TH => out += self.heading_obs_terms(x, p_new) - self.heading_obs_terms(x, &p_old),
                    _ => out += self.fix_terms(&cache.p_fix, p_new) - self.fix_terms(&cache.p_fix, &p_old),
                }
                out
            }
            Kind::Beta(k) => {
                let ho = self.heading_offset();
                let (b_new, b_old) = (x[N_PARAMS + k], old[0]);
                self.beta_steps[k]
                    .iter()
                    .map(|&j| self.heading_obs_term(j, x[ho + j], b_new, p_new) - self.heading_obs_term(j, x[ho + j], b_old, p_new))
                    .sum()
            }
            Kind::Speed(a, b) => {
                let so = self.speed_offset();
                let s_old = |j: usize| if (a..b).contains(&j) { old[j - a] } else { x[so + j] };
                let mut out = 0.0;
                for j in a..(b + 1).min(self.n) {
                    let (prev_new, prev_old) = if j > 0 { (x[so + j - 1], s_old(j - 1)) } else { (0.0, 0.0) };
                    out += self.speed_transition(j, prev_new, x[so + j], p_new) - self.speed_transition(j, prev_old, s_old(j), p_new);
                }
                for j in a..b {
                    out += self.speed_obs_term(j, x[so + j], p_new) - self.speed_obs_term(j, old[j - a], p_new);
                }
                out + self.fix_delta(a, b, cache, p_new, |j| cache.d[j].scale(x[so + j] / old[j - a]))
            }
            Kind::Heading(a, b) => {
                let ho = self.heading_offset();
                let th_old = |j: usize| if (a..b).contains(&j) { old[j - a] } else { x[ho + j] };
                let mut out = 0.0;
                for j in a.max(1)..(b + 1).min(self.n) {
                    out += self.heading_transition(x[ho + j - 1], x[ho + j], p_new) - self.heading_transition(th_old(j - 1), th_old(j), p_new);
                }
                for j in a..b {
                    let beta = self.beta_at(x, j);
                    out += self.heading_obs_term(j, x[ho + j], beta, p_new) - self.heading_obs_term(j, old[j - a], beta, p_new);
                }
                out + self.fix_delta(a, b, cache, p_new, |j| self.step(x, j))
            }
        }
    }

    fn n_custom_moves(&self) -> usize {
        if self.segments.is_empty() {
            0
        } else {
            self.segments.len() + self.n_beta + 2
        }
    }

    fn custom_move(&self, k: usize, x: &mut [f64], cache: &mut SsmCache, lp: &mut f64, rng: &mut StreamRng) -> Result<Option<Vec<usize>>> {
        let k = match k.checked_sub(self.segments.len()) {
            None => return self.segment_move(self.segments[k], x, cache, lp, rng),
            Some(k) => k,
        };
        if k < self.n_beta {
            let (a, b) = self.beta_ranges[k];
            self.rotate(k..k + 1, a, b, self.beta_dist[k], x, cache, lp, rng)
        } else if k == self.n_beta {
            self.rotate(0..self.n_beta, 0, self.n, self.total_dist, x, cache, lp, rng)
        } else {
            self.speed_scale(x, cache, lp, rng)
        }
    }

    fn commit(&self, x: &[f64], block: &[usize], cache: &mut SsmCache) {
        if block.is_empty() {
            return;
        }
        let (a, b) = match self.classify(block) {
            Kind::Speed(a, b) | Kind::Heading(a, b) => (a, b),
            _ => return,
        };
        for j in a..b {
            cache.d[j] = self.step(x, j);
        }
        let first = self.fixes.partition_point(|&f| f <= a);
        if first == self.fixes.len() {
            return;
        }
        let (mut acc, mut j) = if first == 0 { (Displacement::ZERO, 0) } else { (cache.p_fix[first - 1], self.fixes[first - 1]) };
        for i in first..self.fixes.len() {
            while j < self.fixes[i] {
                acc += cache.d[j];
                j += 1;
            }
            cache.p_fix[i] = acc;
        }
    }
}

/// Add an observation of `h·z` with precision `w` and precision-weighted value `wy`.
fn add_fix(lam: &mut DMatrix<f64>, eta: &mut DVector<f64>, h: &[f64], w: f64, wy: f64) {
    for (u, hu) in h.iter().enumerate() {
        eta[u] += hu * wy;
        for (v, hv) in h.iter().enumerate() {
            lam[(u, v)] += hu * hv * w;
        }
    }
}

/// `N(Λ⁻¹η, Λ⁻¹)` held through the Cholesky factor of the precision `Λ`.
struct GaussianProposal {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    mean: DVector<f64>,
    half_log_det: f64,
}

impl GaussianProposal {
    fn new(lam: DMatrix<f64>, eta: DVector<f64>) -> Option<Self> {
        let chol = lam.cholesky()?;
        let mean = chol.solve(&eta);
        let half_log_det = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
        Some(GaussianProposal { chol, mean, half_log_det })
    }

    fn mean(&self, i: usize) -> f64 {
        self.mean[i]
    }

    fn sample(&self, rng: &mut StreamRng) -> Vec<f64> {
        let z = DVector::from_fn(self.mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let lt = self.chol.l().transpose();
        let dev = lt.solve_upper_triangular(&z).expect("Cholesky factor is nonsingular");
        (&self.mean + dev).iter().copied().collect()
    }

    fn ln_pdf(&self, v: &[f64]) -> f64 {
        let d = DVector::from_column_slice(v) - &self.mean;
        let u = self.chol.l().transpose() * d;
        self.half_log_det - 0.5 * u.norm_squared() - 0.5 * v.len() as f64 * (2.0 * std::f64::consts::PI).ln()
    }
}
