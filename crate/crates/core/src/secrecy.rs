//! Beamforming, achievable rates and the secrecy outage probability.
//!
//! Alice beamforms with `B = V diag(sqrt(p))` computed from her (possibly
//! contaminated) estimate, with `p` the water-filling allocation over the
//! squared singular values under unit total power. Eve's leaked rate is
//! `log2 det(I + G1 B B^H G1^H)` and an outage occurs when
//! `R0 - leak < R_S`. Receiver noise is unit power per antenna.

use serde::{Deserialize, Serialize};

use crate::adversary::{AttackStrategy, PreparedAttack};
use crate::channel::{observe_estimates, sample_channel_set, ChannelStatistics};
use crate::error::{Error, Result};
use crate::exec::{try_map_trials, Execution};
use crate::numerics::{cholesky, sample_complex_gaussian, svd, Complex64, ComplexMatrix, RngStream, StreamDomain};

/// Water-filling powers `p_n = max(0, mu - 1/g_n)` summing to `total_power`.
///
/// The water level is found exactly: gains are sorted descending (ties by
/// index) and the active set grows until the next gain would get negative power.
pub fn waterfill(gains: &[f64], total_power: f64) -> Result<Vec<f64>> {
    if !(total_power > 0.0 && total_power.is_finite()) {
        return Err(Error::parameter("total_power", format!("must be finite and > 0, got {total_power}")));
    }
    if let Some(g) = gains.iter().find(|g| !(g.is_finite() && **g >= 0.0)) {
        return Err(Error::parameter("gains", format!("must be finite and >= 0, got {g}")));
    }
    let mut order: Vec<usize> = (0..gains.len()).filter(|&i| gains[i] > 0.0).collect();
    if order.is_empty() {
        return Err(Error::DegenerateWaterfill);
    }
    order.sort_by(|&a, &b| gains[b].total_cmp(&gains[a]).then(a.cmp(&b)));

    let mut mu = 0.0;
    let mut active = 0;
    let mut inverse_sum = 0.0;
    for (k, &i) in order.iter().enumerate() {
        let candidate = (total_power + inverse_sum + 1.0 / gains[i]) / (k + 1) as f64;
        if k > 0 && candidate <= 1.0 / gains[i] {
            break;
        }
        inverse_sum += 1.0 / gains[i];
        mu = candidate;
        active = k + 1;
    }
    let mut powers = vec![0.0; gains.len()];
    for &i in &order[..active] {
        powers[i] = (mu - 1.0 / gains[i]).max(0.0);
    }
    Ok(powers)
}

/// Rate-maximizing precoder for a known channel under unit total power.
pub fn beamformer(h_est: &ComplexMatrix) -> Result<ComplexMatrix> {
    if !h_est.is_square() {
        return Err(Error::Dimension(format!("beamformer needs a square channel, got {:?}", h_est.shape())));
    }
    let dec = svd(h_est);
    let gains: Vec<f64> = dec.singular_values.iter().map(|s| s * s).collect();
    let powers = waterfill(&gains, 1.0)?;
    let d: Vec<f64> = powers.iter().map(|p| p.sqrt()).collect();
    Ok(&dec.v * &ComplexMatrix::from_real_diagonal(&d))
}

/// `log2 det(I + C B B^H C^H)` in bits per channel use.
pub fn mutual_info_rate(channel: &ComplexMatrix, b: &ComplexMatrix) -> Result<f64> {
    let cb = channel.try_mul(b)?;
    let gram = cb.try_mul(&cb.adjoint())?;
    let n = gram.rows();
    // Symmetrize away round-off before factoring.
    let m = ComplexMatrix::from_fn(n, n, |i, j| {
        let avg = (gram.get(i, j) + gram.get(j, i).conj()) * 0.5;
        if i == j {
            avg + Complex64::new(1.0, 0.0)
        } else {
            avg
        }
    });
    let l = cholesky(&m)?;
    let log_det: f64 = (0..n).map(|i| 2.0 * l.get(i, i).re.ln()).sum();
    Ok((log_det / std::f64::consts::LN_2).max(0.0))
}

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub trials: u64,
}

/// `R0 = E[log2 det(I + H B B^H H^H)]` with `B` matched to the true `H`.
pub fn estimate_r0(stats: &ChannelStatistics, trials: u64, seed: u64, exec: Execution) -> Result<RateEstimate> {
    if trials < 2 {
        return Err(Error::parameter("trials_r0", "needs at least 2 trials"));
    }
    let n = stats.n();
    let sigma_h2 = stats.sigma_h2();
    let rates = try_map_trials(exec, trials, |i| {
        let mut rng = RngStream::for_trial(seed, StreamDomain::RateReference, i);
        let h = sample_complex_gaussian(n, n, sigma_h2, &mut rng)?;
        mutual_info_rate(&h, &beamformer(&h)?)
    })?;
    let count = trials as f64;
    let mean = rates.iter().sum::<f64>() / count;
    let var = rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (count - 1.0);
    Ok(RateEstimate {
        mean,
        stderr: (var / count).sqrt(),
        trials,
    })
}

/// 95% Wald half-width of a binomial proportion.
pub fn binomial_half_width(p: f64, trials: u64) -> f64 {
    1.96 * (p * (1.0 - p) / trials as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SopConfig {
    pub stats: ChannelStatistics,
    pub attack: AttackStrategy,
    pub trials: u64,
    pub trials_r0: u64,
    /// `R_S / R0`.
    pub rate_fraction: f64,
    pub seed: u64,
}

impl SopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::parameter("trials", "must be at least 1"));
        }
        if !(self.rate_fraction > 0.0 && self.rate_fraction < 1.0) {
            return Err(Error::parameter(
                "rate_fraction",
                format!("must lie in (0, 1), got {}", self.rate_fraction),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SopEstimate {
    /// Outage frequency over the feasible trials.
    pub p_out: f64,
    pub half_width: f64,
    pub outages: u64,
    pub feasible: u64,
    /// Trials where the attack could not be built for that realization.
    pub infeasible: u64,
    /// Mean correlated-ML scaling over feasible trials, when the attack has one.
    pub alpha_mean: Option<f64>,
}

enum Trial {
    Done { outage: bool, alpha: Option<f64> },
    Infeasible,
}

/// SOP against a precomputed `R0`. Trial `i` uses the outage stream `i`, and
/// its channel draw comes first, so different attacks and correlation levels
/// see common random numbers.
pub fn sop_with_reference(
    stats: &ChannelStatistics,
    attack: &PreparedAttack,
    r0: f64,
    rate_fraction: f64,
    trials: u64,
    seed: u64,
    exec: Execution,
) -> Result<SopEstimate> {
    let r_s = rate_fraction * r0;
    let outcomes = try_map_trials(exec, trials, |i| {
        let mut rng = RngStream::for_trial(seed, StreamDomain::Outage, i);
        let set = sample_channel_set(stats, &mut rng)?;
        let plan = match attack.plan(&set, &mut rng) {
            Ok(plan) => plan,
            Err(Error::AlphaInfeasible { .. }) => return Ok(Trial::Infeasible),
            Err(e) => return Err(e),
        };
        let est = observe_estimates(&set, &plan, stats.gamma(), &mut rng)?;
        let b = beamformer(&est.alice)?;
        let leak = mutual_info_rate(&set.g1, &b)?;
        Ok(Trial::Done {
            outage: r0 - leak < r_s,
            alpha: plan.alpha(),
        })
    })?;

    let (mut outages, mut feasible, mut infeasible) = (0u64, 0u64, 0u64);
    let (mut alpha_sum, mut alpha_count) = (0.0, 0u64);
    for t in &outcomes {
        match t {
            Trial::Done { outage, alpha } => {
                feasible += 1;
                outages += *outage as u64;
                if let Some(a) = alpha {
                    alpha_sum += a;
                    alpha_count += 1;
                }
            }
            Trial::Infeasible => infeasible += 1,
        }
    }
    let p_out = if feasible > 0 { outages as f64 / feasible as f64 } else { 0.0 };
    Ok(SopEstimate {
        p_out,
        half_width: if feasible > 0 { binomial_half_width(p_out, feasible) } else { 0.0 },
        outages,
        feasible,
        infeasible,
        alpha_mean: (alpha_count > 0).then(|| alpha_sum / alpha_count as f64),
    })
}

/// Estimates `R0` and then the SOP for one configuration.
pub fn sop_monte_carlo(cfg: &SopConfig, exec: Execution) -> Result<(SopEstimate, RateEstimate)> {
    cfg.validate()?;
    let r0 = estimate_r0(&cfg.stats, cfg.trials_r0, cfg.seed, exec)?;
    let attack = cfg.attack.prepare(&cfg.stats)?;
    let sop = sop_with_reference(&cfg.stats, &attack, r0.mean, cfg.rate_fraction, cfg.trials, cfg.seed, exec)?;
    Ok((sop, r0))
}
