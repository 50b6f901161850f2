//! Eve's pilot contamination strategies.
//!
//! Every strategy except the baseline ones precodes its pilots with
//! `P1 = G2^-1 Q` (phase 1, towards Bob) and `P2 = G1^-1 Q` (phase 2,
//! towards Alice), so both legitimate terminals observe `H + Q`.
//!
//! The correlated-channel attack uses Eve's conditional-mean estimate
//! `h_E = A g1 + B g2` of the legitimate channel and induces
//! `q = -h_E + alpha g1`. With the estimation error `e = h - h_E`,
//!
//! ```text
//! E[(h+q)(h+q)^H] = M1 + alpha M2 + alpha^2 R1
//! M1 = sigma_H^2 I - K1^H A^H - K2^H B^H - A K1 - B K2
//!      + A R1 A^H + A R12 B^H + B R12^H A^H + B R2 B^H      (= E[e e^H])
//! M2 = K1 + K1^H - R1 A^H - A R1 - R12 B^H - B R12^H       (= 0 by orthogonality)
//! ```
//!
//! and `alpha` is chosen so that the trace equals `N^2 sigma_H^2`.

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelSet, ChannelStatistics, Correlation};
use crate::error::{Error, Result};
use crate::numerics::{inverse, sample_complex_gaussian, Complex64, ComplexMatrix, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackMode {
    Passive,
    BaselinePhase2,
    BaselineBoth,
    RandomQ,
    CorrelatedMl,
    FullKnowledge,
}

impl AttackMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackMode::Passive => "passive",
            AttackMode::BaselinePhase2 => "baseline-phase2",
            AttackMode::BaselineBoth => "baseline-both",
            AttackMode::RandomQ => "random-q",
            AttackMode::CorrelatedMl => "correlated-ml",
            AttackMode::FullKnowledge => "full-knowledge",
        }
    }
}

/// Eve's pilot precoder in one phase.
#[derive(Debug, Clone, PartialEq)]
pub enum Precoder {
    /// Unprecoded pilots (the baseline attack).
    Identity,
    Matrix(ComplexMatrix),
}

impl Precoder {
    /// Perturbation `G P` this precoder induces through Eve's channel `G`.
    pub fn induced(&self, eve_channel: &ComplexMatrix) -> Result<ComplexMatrix> {
        match self {
            Precoder::Identity => Ok(eve_channel.clone()),
            Precoder::Matrix(p) => eve_channel.try_mul(p),
        }
    }
}

/// Eve's strategy for one channel realization.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackPlan {
    mode: AttackMode,
    p1: Option<Precoder>,
    p2: Option<Precoder>,
    q: Option<ComplexMatrix>,
    alpha: Option<f64>,
}

impl AttackPlan {
    pub fn mode(&self) -> AttackMode {
        self.mode
    }

    /// Precoder applied to Eve's phase-1 pilots (received by Bob through `G2`).
    pub fn phase1_precoder(&self) -> Option<&Precoder> {
        self.p1.as_ref()
    }

    /// Precoder applied to Eve's phase-2 pilots (received by Alice through `G1`).
    pub fn phase2_precoder(&self) -> Option<&Precoder> {
        self.p2.as_ref()
    }

    /// Perturbation Eve intends to induce on both estimates.
    pub fn induced_perturbation(&self) -> Option<&ComplexMatrix> {
        self.q.as_ref()
    }

    pub fn alpha(&self) -> Option<f64> {
        self.alpha
    }
}

pub fn plan_passive() -> AttackPlan {
    AttackPlan {
        mode: AttackMode::Passive,
        p1: None,
        p2: None,
        q: None,
        alpha: None,
    }
}

/// Eve repeats the public pilots unprecoded, in phase 2 only or in both phases.
pub fn plan_baseline(both_phases: bool) -> AttackPlan {
    AttackPlan {
        mode: if both_phases {
            AttackMode::BaselineBoth
        } else {
            AttackMode::BaselinePhase2
        },
        p1: both_phases.then_some(Precoder::Identity),
        p2: Some(Precoder::Identity),
        q: None,
        alpha: None,
    }
}

fn precoded(
    mode: AttackMode,
    q: ComplexMatrix,
    g1: &ComplexMatrix,
    g2: &ComplexMatrix,
    alpha: Option<f64>,
) -> Result<AttackPlan> {
    let p1 = &inverse(g2)? * &q;
    let p2 = &inverse(g1)? * &q;
    Ok(AttackPlan {
        mode,
        p1: Some(Precoder::Matrix(p1)),
        p2: Some(Precoder::Matrix(p2)),
        q: Some(q),
        alpha,
    })
}

fn check_square_pair(g1: &ComplexMatrix, g2: &ComplexMatrix) -> Result<usize> {
    let n = g1.rows();
    if g1.shape() != (n, n) || g2.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "Eve channels must be square and equal-sized, got {:?} and {:?}",
            g1.shape(),
            g2.shape()
        )));
    }
    Ok(n)
}

/// Random perturbation `Q` with i.i.d. entries of power `sigma_q2`.
pub fn plan_random_q(
    g1: &ComplexMatrix,
    g2: &ComplexMatrix,
    sigma_q2: f64,
    rng: &mut RngStream,
) -> Result<AttackPlan> {
    let n = check_square_pair(g1, g2)?;
    let q = sample_complex_gaussian(n, n, sigma_q2, rng)?;
    precoded(AttackMode::RandomQ, q, g1, g2, None)
}

/// Eve knows `H` and replaces it with `G1`: `Q = G1 - H`.
pub fn plan_full_knowledge(
    h: &ComplexMatrix,
    g1: &ComplexMatrix,
    g2: &ComplexMatrix,
) -> Result<AttackPlan> {
    let n = check_square_pair(g1, g2)?;
    if h.shape() != (n, n) {
        return Err(Error::Dimension(format!("H is {:?}, expected {n}x{n}", h.shape())));
    }
    precoded(AttackMode::FullKnowledge, g1 - h, g1, g2, None)
}

/// Linear operator on `vec(X)` for an N x N matrix `X`: either a scalar
/// multiple of the identity or a full N^2 x N^2 matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum VecOperator {
    Scalar(Complex64),
    Full(ComplexMatrix),
}

impl VecOperator {
    pub fn apply(&self, x: &ComplexMatrix) -> ComplexMatrix {
        match self {
            VecOperator::Scalar(c) => x.scale_complex(*c),
            VecOperator::Full(m) => {
                let (r, c) = x.shape();
                let v = ComplexMatrix::from_column_major(r * c, 1, x.as_slice().to_vec())
                    .expect("finite input");
                let y = m * &v;
                ComplexMatrix::from_column_major(r, c, y.as_slice().to_vec())
                    .expect("shape preserved")
            }
        }
    }

    /// Trace as an operator on vectors of length `dim`.
    pub fn trace(&self, dim: usize) -> Complex64 {
        match self {
            VecOperator::Scalar(c) => c * dim as f64,
            VecOperator::Full(m) => m.trace(),
        }
    }

    pub fn frobenius_norm(&self, dim: usize) -> f64 {
        match self {
            VecOperator::Scalar(c) => c.norm() * (dim as f64).sqrt(),
            VecOperator::Full(m) => m.frobenius_norm(),
        }
    }

    pub fn to_matrix(&self, dim: usize) -> ComplexMatrix {
        match self {
            VecOperator::Scalar(c) => ComplexMatrix::identity(dim).scale_complex(*c),
            VecOperator::Full(m) => m.clone(),
        }
    }
}

/// Gains of Eve's conditional-mean estimator `h_E = A g1 + B g2`, i.e.
/// `A = -S11^-1 S12` and `B = -S11^-1 S13` with `S = R^-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct MmseGains {
    pub a: VecOperator,
    pub b: VecOperator,
}

impl MmseGains {
    pub fn estimate(&self, g1: &ComplexMatrix, g2: &ComplexMatrix) -> ComplexMatrix {
        &self.a.apply(g1) + &self.b.apply(g2)
    }
}

/// Per-entry (scalar-diagonal) or full second-order description of the
/// correlated channels, in the form the attack algebra needs.
enum Moments {
    Scalar {
        k1: Complex64,
        k2: Complex64,
        r12: Complex64,
    },
    Full {
        k1: ComplexMatrix,
        k2: ComplexMatrix,
        r12: ComplexMatrix,
    },
}

fn moments(stats: &ChannelStatistics) -> Moments {
    match stats.correlation() {
        Correlation::Independent | Correlation::ScalarDiagonal { .. } => {
            let k = stats.sigma_g2() * stats.zeta().unwrap_or(0.0);
            Moments::Scalar {
                k1: Complex64::new(k, 0.0),
                k2: Complex64::new(k, 0.0),
                r12: Complex64::new(k * k, 0.0),
            }
        }
        Correlation::General(cross) => Moments::Full {
            k1: cross.k1.clone(),
            k2: cross.k2.clone(),
            r12: cross.r12.clone(),
        },
    }
}

pub fn mmse_gains(stats: &ChannelStatistics) -> Result<MmseGains> {
    let cov = crate::channel::build_joint_covariance(stats)?;
    match cov {
        crate::channel::JointCovariance::PerEntry { block, .. } => {
            let s = inverse(&block)?;
            let s11 = s.get(0, 0);
            Ok(MmseGains {
                a: VecOperator::Scalar(-s.get(0, 1) / s11),
                b: VecOperator::Scalar(-s.get(0, 2) / s11),
            })
        }
        crate::channel::JointCovariance::Full { matrix, n, .. } => {
            let m = n * n;
            let s = inverse(&matrix)?;
            let s11_inv = inverse(&s.block(0, 0, m, m))?;
            Ok(MmseGains {
                a: VecOperator::Full(-&(&s11_inv * &s.block(0, m, m, m))),
                b: VecOperator::Full(-&(&s11_inv * &s.block(0, 2 * m, m, m))),
            })
        }
    }
}

/// Eve's estimate of `H` from her own channel realizations.
pub fn eve_mmse_estimate(
    stats: &ChannelStatistics,
    g1: &ComplexMatrix,
    g2: &ComplexMatrix,
) -> Result<ComplexMatrix> {
    let n = check_square_pair(g1, g2)?;
    if n != stats.n() {
        return Err(Error::Dimension(format!("channels are {n}x{n}, statistics say N = {}", stats.n())));
    }
    Ok(mmse_gains(stats)?.estimate(g1, g2))
}

/// Realization-independent part of the correlated-channel attack: the
/// estimator gains, the expansion terms and the scaling factor.
#[derive(Debug, Clone)]
pub struct CorrelatedMlDesign {
    n: usize,
    sigma_h2: f64,
    gains: MmseGains,
    m1: VecOperator,
    m2: VecOperator,
    r1: VecOperator,
    induced: VecOperator,
    alpha: f64,
}

impl CorrelatedMlDesign {
    pub fn new(stats: &ChannelStatistics) -> Result<Self> {
        let n = stats.n();
        let dim = n * n;
        let gains = mmse_gains(stats)?;
        let sigma_h2 = stats.sigma_h2();
        let sigma_g2 = stats.sigma_g2();
        let (m1, m2, r1) = match (moments(stats), &gains.a, &gains.b) {
            (Moments::Scalar { k1, k2, r12 }, VecOperator::Scalar(a), VecOperator::Scalar(b)) => {
                let (a, b) = (*a, *b);
                let r1 = Complex64::new(sigma_g2, 0.0);
                let r2 = r1;
                let m1 = Complex64::new(sigma_h2, 0.0) - k1.conj() * a.conj() - k2.conj() * b.conj()
                    - a * k1
                    - b * k2
                    + a * r1 * a.conj()
                    + a * r12 * b.conj()
                    + b * r12.conj() * a.conj()
                    + b * r2 * b.conj();
                let m2 = k1 + k1.conj() - r1 * a.conj() - a * r1 - r12 * b.conj() - b * r12.conj();
                (VecOperator::Scalar(m1), VecOperator::Scalar(m2), VecOperator::Scalar(r1))
            }
            (Moments::Full { k1, k2, r12 }, VecOperator::Full(a), VecOperator::Full(b)) => {
                let eye = ComplexMatrix::identity(dim);
                let r1 = eye.scale(sigma_g2);
                let r2 = r1.clone();
                let (ah, bh) = (a.adjoint(), b.adjoint());
                let terms_m1 = [
                    eye.scale(sigma_h2),
                    -&(&k1.adjoint() * &ah),
                    -&(&k2.adjoint() * &bh),
                    -&(a * &k1),
                    -&(b * &k2),
                    &(a * &r1) * &ah,
                    &(a * &r12) * &bh,
                    &(b * &r12.adjoint()) * &ah,
                    &(b * &r2) * &bh,
                ];
                let terms_m2 = [
                    k1.clone(),
                    k1.adjoint(),
                    -&(&r1 * &ah),
                    -&(a * &r1),
                    -&(&r12 * &bh),
                    -&(b * &r12.adjoint()),
                ];
                let sum = |terms: &[ComplexMatrix]| {
                    terms
                        .iter()
                        .fold(ComplexMatrix::zeros(dim, dim), |acc, t| &acc + t)
                };
                (
                    VecOperator::Full(sum(&terms_m1)),
                    VecOperator::Full(sum(&terms_m2)),
                    VecOperator::Full(r1),
                )
            }
            _ => unreachable!("gain and moment representations always agree"),
        };

        let budget = dim as f64 * sigma_h2;
        let trace_m1 = m1.trace(dim).re;
        if trace_m1 > budget {
            return Err(Error::AlphaInfeasible { trace_m1, budget });
        }
        let alpha = ((budget - trace_m1) / r1.trace(dim).re).sqrt();
        let induced = induced_covariance(stats, &gains, alpha);
        Ok(CorrelatedMlDesign {
            n,
            sigma_h2,
            gains,
            m1,
            m2,
            r1,
            induced,
            alpha,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn gains(&self) -> &MmseGains {
        &self.gains
    }

    /// α-independent term of the expansion (covariance of Eve's estimation error).
    pub fn m1(&self) -> &VecOperator {
        &self.m1
    }

    /// Term linear in α; vanishes by the orthogonality principle.
    pub fn m2(&self) -> &VecOperator {
        &self.m2
    }

    /// Term quadratic in α, `E[g1 g1^H]`.
    pub fn r1(&self) -> &VecOperator {
        &self.r1
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `E[(h+q)(h+q)^H]`, evaluated directly from the joint moments.
    pub fn induced_covariance(&self) -> &VecOperator {
        &self.induced
    }

    /// `N^2 sigma_H^2`, the trace the legitimate terminals expect.
    pub fn target_trace(&self) -> f64 {
        (self.n * self.n) as f64 * self.sigma_h2
    }

    pub fn plan(&self, g1: &ComplexMatrix, g2: &ComplexMatrix) -> Result<AttackPlan> {
        let n = check_square_pair(g1, g2)?;
        if n != self.n {
            return Err(Error::Dimension(format!("channels are {n}x{n}, design is for N = {}", self.n)));
        }
        let h_e = self.gains.estimate(g1, g2);
        let q = &g1.scale(self.alpha) - &h_e;
        precoded(AttackMode::CorrelatedMl, q, g1, g2, Some(self.alpha))
    }
}

/// `E[(h+q)(h+q)^H]` with `q = (alpha I - A) g1 - B g2`, expanded term by
/// term from the joint covariance (no use of the M1/M2 grouping).
fn induced_covariance(stats: &ChannelStatistics, gains: &MmseGains, alpha: f64) -> VecOperator {
    let dim = stats.n() * stats.n();
    let sigma_h2 = stats.sigma_h2();
    let sigma_g2 = stats.sigma_g2();
    match (moments(stats), &gains.a, &gains.b) {
        (Moments::Scalar { k1, k2, r12 }, VecOperator::Scalar(a), VecOperator::Scalar(b)) => {
            let f = Complex64::new(alpha, 0.0) - a;
            let g = -b;
            let hq = k1.conj() * f.conj() + k2.conj() * g.conj();
            let qq = f * sigma_g2 * f.conj()
                + f * r12 * g.conj()
                + g * r12.conj() * f.conj()
                + g * sigma_g2 * g.conj();
            VecOperator::Scalar(Complex64::new(sigma_h2, 0.0) + hq + hq.conj() + qq)
        }
        (Moments::Full { k1, k2, r12 }, VecOperator::Full(a), VecOperator::Full(b)) => {
            let eye = ComplexMatrix::identity(dim);
            let f = &eye.scale(alpha) - a;
            let g = -b;
            let hq = &(&k1.adjoint() * &f.adjoint()) + &(&k2.adjoint() * &g.adjoint());
            let qq = [
                (&f * &f.adjoint()).scale(sigma_g2),
                &(&f * &r12) * &g.adjoint(),
                &(&g * &r12.adjoint()) * &f.adjoint(),
                (&g * &g.adjoint()).scale(sigma_g2),
            ]
            .iter()
            .fold(ComplexMatrix::zeros(dim, dim), |acc, t| &acc + t);
            VecOperator::Full(&(&(&eye.scale(sigma_h2) + &hq) + &hq.adjoint()) + &qq)
        }
        _ => unreachable!("gain and moment representations always agree"),
    }
}

pub fn plan_correlated_ml(
    stats: &ChannelStatistics,
    g1: &ComplexMatrix,
    g2: &ComplexMatrix,
) -> Result<AttackPlan> {
    CorrelatedMlDesign::new(stats)?.plan(g1, g2)
}

/// Attack family plus parameters, independent of any channel realization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum AttackStrategy {
    Passive,
    Baseline { both_phases: bool },
    RandomQ { sigma_q2: f64 },
    CorrelatedMl,
    FullKnowledge,
}

impl AttackStrategy {
    pub fn mode(&self) -> AttackMode {
        match self {
            AttackStrategy::Passive => AttackMode::Passive,
            AttackStrategy::Baseline { both_phases: false } => AttackMode::BaselinePhase2,
            AttackStrategy::Baseline { both_phases: true } => AttackMode::BaselineBoth,
            AttackStrategy::RandomQ { .. } => AttackMode::RandomQ,
            AttackStrategy::CorrelatedMl => AttackMode::CorrelatedMl,
            AttackStrategy::FullKnowledge => AttackMode::FullKnowledge,
        }
    }

    /// Does the realization-independent work once per scenario.
    pub fn prepare(&self, stats: &ChannelStatistics) -> Result<PreparedAttack> {
        let design = match self {
            AttackStrategy::CorrelatedMl => Some(CorrelatedMlDesign::new(stats)?),
            _ => None,
        };
        Ok(PreparedAttack {
            strategy: *self,
            design,
        })
    }
}

#[derive(Debug, Clone)]
pub struct PreparedAttack {
    strategy: AttackStrategy,
    design: Option<CorrelatedMlDesign>,
}

impl PreparedAttack {
    pub fn strategy(&self) -> AttackStrategy {
        self.strategy
    }

    pub fn design(&self) -> Option<&CorrelatedMlDesign> {
        self.design.as_ref()
    }

    /// Plan for one channel realization.
    pub fn plan(&self, set: &ChannelSet, rng: &mut RngStream) -> Result<AttackPlan> {
        let plan = match self.strategy {
            AttackStrategy::Passive => plan_passive(),
            AttackStrategy::Baseline { both_phases } => plan_baseline(both_phases),
            AttackStrategy::RandomQ { sigma_q2 } => plan_random_q(&set.g1, &set.g2, sigma_q2, rng)?,
            AttackStrategy::CorrelatedMl => self
                .design
                .as_ref()
                .expect("prepared with a design")
                .plan(&set.g1, &set.g2)?,
            AttackStrategy::FullKnowledge => plan_full_knowledge(&set.h, &set.g1, &set.g2)?,
        };
        Ok(plan)
    }
}
