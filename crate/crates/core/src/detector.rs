//! Pairing decision: key confirmation plus the trace check on both estimates.

use serde::{Deserialize, Serialize};

use crate::adversary::PreparedAttack;
use crate::channel::{observe_estimates, sample_channel_set, ChannelStatistics};
use crate::error::{Error, Result};
use crate::keyconf::{extract_key, extract_key_at, key_confirmation_round};
pub use crate::keyconf::Verdict;
use crate::numerics::{gram_trace, ComplexMatrix, RngStream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceCheck {
    pub verdict: Verdict,
    pub measured: f64,
    pub expected: f64,
}

/// Expected gram trace of an uncontaminated estimate, `N^2 (sigma_H^2 + gamma)`.
pub fn expected_trace(stats: &ChannelStatistics) -> f64 {
    let n = stats.n() as f64;
    n * n * (stats.sigma_h2() + stats.gamma())
}

/// Passes iff `|T - E| <= epsilon E` with `T` the estimate's gram trace.
pub fn trace_check(estimate: &ComplexMatrix, stats: &ChannelStatistics, epsilon: f64) -> Result<TraceCheck> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::parameter("epsilon", format!("must be finite and > 0, got {epsilon}")));
    }
    let measured = gram_trace(estimate);
    let expected = expected_trace(stats);
    Ok(TraceCheck {
        verdict: Verdict::from_bool((measured - expected).abs() <= epsilon * expected),
        measured,
        expected,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pairing {
    Succeeds,
    Fails,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionReport {
    pub keyconf: Verdict,
    pub trace_alice: Verdict,
    pub trace_bob: Verdict,
    pub pairing: Pairing,
    pub measured_alice: Option<f64>,
    pub measured_bob: Option<f64>,
    pub expected: Option<f64>,
}

/// Pairing succeeds only if all three checks pass.
pub fn pairing_decision(keyconf: Verdict, trace_alice: Verdict, trace_bob: Verdict) -> DetectionReport {
    let ok = keyconf.is_pass() && trace_alice.is_pass() && trace_bob.is_pass();
    DetectionReport {
        keyconf,
        trace_alice,
        trace_bob,
        pairing: if ok { Pairing::Succeeds } else { Pairing::Fails },
        measured_alice: None,
        measured_bob: None,
        expected: None,
    }
}

/// Knobs of one protocol run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolParams {
    pub key_bits: usize,
    pub delta: f64,
    pub epsilon: f64,
}

/// One complete pairing attempt: channel draw, attack, both estimates, key
/// extraction, handshake and the two trace checks. Alice keeping no samples
/// counts as a failed key confirmation.
pub fn protocol_trial(
    stats: &ChannelStatistics,
    attack: &PreparedAttack,
    params: &ProtocolParams,
    rng: &mut RngStream,
) -> Result<DetectionReport> {
    let set = sample_channel_set(stats, rng)?;
    let plan = attack.plan(&set, rng)?;
    let est = observe_estimates(&set, &plan, stats.gamma(), rng)?;

    let keyconf = match extract_key(&est.alice, stats, params.delta, params.key_bits) {
        Ok((a, indices)) => {
            let b = extract_key_at(&est.bob, &indices, params.key_bits)?;
            key_confirmation_round(&a, &b, rng)?.verdict
        }
        Err(Error::InsufficientEntropy) => Verdict::Fail,
        Err(e) => return Err(e),
    };
    let ta = trace_check(&est.alice, stats, params.epsilon)?;
    let tb = trace_check(&est.bob, stats, params.epsilon)?;
    Ok(DetectionReport {
        measured_alice: Some(ta.measured),
        measured_bob: Some(tb.measured),
        expected: Some(ta.expected),
        ..pairing_decision(keyconf, ta.verdict, tb.verdict)
    })
}
