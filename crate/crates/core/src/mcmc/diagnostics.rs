use super::PosteriorSamples;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub names: Vec<String>,
    pub rhat: Vec<f64>,
    pub ess: Vec<f64>,
}

impl Diagnostics {
    pub fn max_rhat(&self) -> f64 {
        self.rhat.iter().copied().filter(|r| r.is_finite()).fold(1.0, f64::max)
    }

    pub fn min_ess(&self) -> f64 {
        self.ess.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Split-R̂ and effective sample size for every column.
pub fn diagnostics(s: &PosteriorSamples) -> Result<Diagnostics> {
    let n_chains = s.n_chains();
    if n_chains < 2 {
        return Err(Error::Diagnostics("at least two chains are required".into()));
    }
    let mut rhat = Vec::with_capacity(s.n_cols());
    let mut ess = Vec::with_capacity(s.n_cols());
    for j in 0..s.n_cols() {
        let chains = s.chain_columns(j);
        let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
        if n < 100 {
            return Err(Error::Diagnostics(format!("every chain needs at least 100 draws, found {n}")));
        }
        let chains: Vec<&[f64]> = chains.iter().map(|c| &c[..n]).collect();
        rhat.push(split_rhat(&chains));
        ess.push(ess_multi(&chains));
    }
    Ok(Diagnostics { names: s.names.clone(), rhat, ess })
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

fn split_rhat(chains: &[&[f64]]) -> f64 {
    let half = chains[0].len() / 2;
    let mut parts: Vec<&[f64]> = Vec::with_capacity(chains.len() * 2);
    for c in chains {
        parts.push(&c[..half]);
        parts.push(&c[c.len() - half..]);
    }
    let n = half as f64;
    let means: Vec<f64> = parts.iter().map(|p| mean(p)).collect();
    let w = parts.iter().map(|p| var(p)).sum::<f64>() / parts.len() as f64;
    let b = n * var(&means);
    if w <= 0.0 {
        return if b <= 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

/// Autocovariance of `x` at lag `t` with divisor n.
fn autocov(x: &[f64], m: f64, t: usize) -> f64 {
    let n = x.len();
    let mut s = 0.0;
    for i in 0..n - t {
        s += (x[i] - m) * (x[i + t] - m);
    }
    s / n as f64
}

/// Multi-chain ESS with Geyer's initial monotone sequence estimator.
fn ess_multi(chains: &[&[f64]]) -> f64 {
    let m = chains.len();
    let n = chains[0].len();
    let total = (m * n) as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let vars: Vec<f64> = chains.iter().map(|c| var(c)).collect();
    let w = vars.iter().sum::<f64>() / m as f64;
    let b_over_n = if m > 1 { var(&means) } else { 0.0 };
    let var_plus = (n as f64 - 1.0) / n as f64 * w + b_over_n;
    if !(var_plus > 0.0) {
        return total;
    }
    let rho = |t: usize| -> f64 {
        let ac = chains.iter().zip(&means).map(|(c, &mu)| autocov(c, mu, t)).sum::<f64>() / m as f64;
        // the divisor-n autocovariance at lag 0 is (n−1)/n times the chain variance
        1.0 - (w - ac) / var_plus
    };
    let mut sum_pairs = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let mut pair = rho(t) + rho(t + 1);
        if pair < 0.0 {
            break;
        }
        if pair > prev_pair {
            pair = prev_pair;
        }
        prev_pair = pair;
        sum_pairs += pair;
        t += 2;
    }
    let tau = -1.0 + 2.0 * sum_pairs;
    let tau = tau.max(1.0 / total.log10().max(1.0));
    (total / tau).min(total)
}

/// ESS of a single sequence.
pub fn ess_single(x: &[f64]) -> f64 {
    if x.len() < 4 {
        return x.len() as f64;
    }
    ess_multi(&[x])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn samples(chains: &[Vec<f64>]) -> PosteriorSamples {
        let mut s = PosteriorSamples::new(vec!["x".into()]);
        for (c, ch) in chains.iter().enumerate() {
            for v in ch {
                s.push(c as u32, &[*v]);
            }
        }
        s
    }

    #[test]
    fn iid_draws_have_rhat_near_one() {
        let mut rng = substream(3, &["iid"]);
        let chains: Vec<Vec<f64>> = (0..4).map(|_| (0..2000).map(|_| rng.sample(StandardNormal)).collect()).collect();
        let d = diagnostics(&samples(&chains)).unwrap();
        assert!(d.rhat[0] < 1.01, "rhat {}", d.rhat[0]);
        assert!(d.ess[0] > 4000.0 && d.ess[0] <= 8000.0, "ess {}", d.ess[0]);
    }

    #[test]
    fn disjoint_chains_have_large_rhat() {
        let mut rng = substream(4, &["disjoint"]);
        let a: Vec<f64> = (0..500).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let b: Vec<f64> = (0..500).map(|_| 5.0 + rng.sample::<f64, _>(StandardNormal)).collect();
        let d = diagnostics(&samples(&[a, b])).unwrap();
        assert!(d.rhat[0] > 1.5);
    }

    #[test]
    fn ar1_ess_matches_analytic_ratio() {
        let phi: f64 = 0.9;
        let mut rng = substream(5, &["ar1"]);
        let n = 20000;
        let chains: Vec<Vec<f64>> = (0..2)
            .map(|_| {
                let mut v = 0.0;
                (0..n)
                    .map(|_| {
                        v = phi * v + (1.0 - phi * phi).sqrt() * rng.sample::<f64, _>(StandardNormal);
                        v
                    })
                    .collect()
            })
            .collect();
        let d = diagnostics(&samples(&chains)).unwrap();
        let ratio = d.ess[0] / (2 * n) as f64;
        let expected = (1.0 - phi) / (1.0 + phi);
        assert!(ratio > expected / 2.0 && ratio < expected * 2.0, "ratio {ratio}");
    }

    #[test]
    fn single_chain_is_rejected() {
        let s = samples(&[vec![0.0; 200]]);
        assert!(matches!(diagnostics(&s), Err(Error::Diagnostics(_))));
        let short = samples(&[vec![0.0; 50], vec![1.0; 50]]);
        assert!(diagnostics(&short).is_err());
    }
}
