//! Channel statistics, joint sampling of `(H, G1, G2)` and the two-phase
//! channel estimates seen by Alice and Bob.
//!
//! Channels are vectorized column-major (`h = vec(H)`). The joint vector
//! `[h; g1; g2]` is zero-mean Gaussian with covariance
//!
//! ```text
//!     | sigma_H^2 I   K1^H          K2^H        |
//! R = | K1            sigma_G^2 I   R12         |
//!     | K2            R12^H         sigma_G^2 I |
//! ```
//!
//! with `K1 = E[g1 h^H]`, `K2 = E[g2 h^H]`, `R12 = E[g1 g2^H]`. In the
//! scalar-diagonal mode `K1 = K2 = sigma_G^2 zeta I` and `R12 = K1 K2^H`, so
//! every block is a multiple of the identity and `R` collapses to a 3x3
//! per-entry block.

use std::sync::Arc;

use crate::adversary::{AttackPlan, Precoder};
use crate::error::{Error, Result};
use crate::numerics::{cholesky, sample_complex_gaussian, Complex64, ComplexMatrix, RngStream};

/// Cross-covariances for the general (full-matrix) correlation model.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossCovariance {
    /// `E[g1 h^H]`, N^2 x N^2.
    pub k1: ComplexMatrix,
    /// `E[g2 h^H]`, N^2 x N^2.
    pub k2: ComplexMatrix,
    /// `E[g1 g2^H]`, N^2 x N^2.
    pub r12: ComplexMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Correlation {
    Independent,
    ScalarDiagonal { zeta: f64 },
    General(Arc<CrossCovariance>),
}

/// Scenario parameters defining the joint law of `(H, G1, G2)` and the
/// estimation noise.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStatistics {
    n: usize,
    sigma_h2: f64,
    sigma_g2: f64,
    gamma: f64,
    correlation: Correlation,
}

impl ChannelStatistics {
    pub fn independent(n: usize, sigma_h2: f64, sigma_g2: f64, gamma: f64) -> Result<Self> {
        Self::new(n, sigma_h2, sigma_g2, gamma, Correlation::Independent)
    }

    pub fn scalar_diagonal(
        n: usize,
        sigma_h2: f64,
        sigma_g2: f64,
        zeta: f64,
        gamma: f64,
    ) -> Result<Self> {
        Self::new(
            n,
            sigma_h2,
            sigma_g2,
            gamma,
            Correlation::ScalarDiagonal { zeta },
        )
    }

    /// Positive semidefiniteness of the joint covariance is not checked
    /// here; [`build_joint_covariance`] is the gate for that.
    pub fn new(
        n: usize,
        sigma_h2: f64,
        sigma_g2: f64,
        gamma: f64,
        correlation: Correlation,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::parameter("n", "antenna count must be at least 1"));
        }
        if !(sigma_h2 > 0.0 && sigma_h2.is_finite()) {
            return Err(Error::parameter("sigma_h2", format!("must be > 0, got {sigma_h2}")));
        }
        if !(sigma_g2 > 0.0 && sigma_g2.is_finite()) {
            return Err(Error::parameter("sigma_g2", format!("must be > 0, got {sigma_g2}")));
        }
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::parameter("gamma", format!("must be >= 0, got {gamma}")));
        }
        match &correlation {
            Correlation::Independent => {}
            Correlation::ScalarDiagonal { zeta } => {
                if !(*zeta >= 0.0 && zeta.is_finite()) {
                    return Err(Error::parameter("zeta", format!("must be >= 0, got {zeta}")));
                }
            }
            Correlation::General(cross) => {
                let m = n * n;
                for (name, mat) in [("k1", &cross.k1), ("k2", &cross.k2), ("r12", &cross.r12)] {
                    if mat.shape() != (m, m) {
                        return Err(Error::parameter(
                            name,
                            format!("expected {m}x{m}, got {:?}", mat.shape()),
                        ));
                    }
                }
            }
        }
        Ok(ChannelStatistics {
            n,
            sigma_h2,
            sigma_g2,
            gamma,
            correlation,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn sigma_h2(&self) -> f64 {
        self.sigma_h2
    }

    pub fn sigma_g2(&self) -> f64 {
        self.sigma_g2
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn correlation(&self) -> &Correlation {
        &self.correlation
    }

    /// Scalar correlation factor; zero for independent channels and
    /// `None` for the general model.
    pub fn zeta(&self) -> Option<f64> {
        match self.correlation {
            Correlation::Independent => Some(0.0),
            Correlation::ScalarDiagonal { zeta } => Some(zeta),
            Correlation::General(_) => None,
        }
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(
            self.n,
            self.sigma_h2,
            self.sigma_g2,
            gamma,
            self.correlation.clone(),
        )
    }

    pub fn with_n(&self, n: usize) -> Result<Self> {
        if matches!(self.correlation, Correlation::General(_)) {
            return Err(Error::parameter(
                "n",
                "cannot resize statistics with full-matrix cross-covariances",
            ));
        }
        Self::new(n, self.sigma_h2, self.sigma_g2, self.gamma, self.correlation.clone())
    }

    /// Expands scalar-diagonal (or independent) statistics into the
    /// equivalent full-matrix description.
    pub fn to_general(&self) -> Result<Self> {
        let m = self.n * self.n;
        let cross = match &self.correlation {
            Correlation::General(_) => return Ok(self.clone()),
            Correlation::Independent | Correlation::ScalarDiagonal { .. } => {
                let k = self.sigma_g2 * self.zeta().unwrap_or(0.0);
                let k_mat = ComplexMatrix::identity(m).scale(k);
                CrossCovariance {
                    k1: k_mat.clone(),
                    k2: k_mat.clone(),
                    r12: &k_mat * &k_mat.adjoint(),
                }
            }
        };
        Self::new(
            self.n,
            self.sigma_h2,
            self.sigma_g2,
            self.gamma,
            Correlation::General(Arc::new(cross)),
        )
    }
}

/// Joint covariance of `[h; g1; g2]` together with its Cholesky factor.
#[derive(Debug, Clone)]
pub enum JointCovariance {
    /// Per-entry 3x3 block `C`; the full covariance is `C ⊗ I_{N^2}`
    /// (block ordering `h`, `g1`, `g2`).
    PerEntry {
        n: usize,
        block: ComplexMatrix,
        factor: ComplexMatrix,
    },
    /// Full `3N^2 x 3N^2` covariance.
    Full {
        n: usize,
        matrix: ComplexMatrix,
        factor: ComplexMatrix,
    },
}

impl JointCovariance {
    pub fn n(&self) -> usize {
        match self {
            JointCovariance::PerEntry { n, .. } | JointCovariance::Full { n, .. } => *n,
        }
    }

    /// The full `3N^2 x 3N^2` matrix `R`.
    pub fn full_matrix(&self) -> ComplexMatrix {
        match self {
            JointCovariance::Full { matrix, .. } => matrix.clone(),
            JointCovariance::PerEntry { n, block, .. } => {
                let m = n * n;
                ComplexMatrix::from_fn(3 * m, 3 * m, |i, j| {
                    if i % m == j % m {
                        block.get(i / m, j / m)
                    } else {
                        Complex64::new(0.0, 0.0)
                    }
                })
            }
        }
    }
}

fn scalar_block(sigma_h2: f64, sigma_g2: f64, zeta: f64) -> ComplexMatrix {
    let k = sigma_g2 * zeta;
    ComplexMatrix::from_real_rows(&[
        &[sigma_h2, k, k],
        &[k, sigma_g2, k * k],
        &[k, k * k, sigma_g2],
    ])
}

pub fn build_joint_covariance(stats: &ChannelStatistics) -> Result<JointCovariance> {
    let n = stats.n;
    match &stats.correlation {
        Correlation::Independent | Correlation::ScalarDiagonal { .. } => {
            let zeta = stats.zeta().unwrap_or(0.0);
            let block = scalar_block(stats.sigma_h2, stats.sigma_g2, zeta);
            let factor = cholesky(&block).map_err(|err| match err {
                Error::NotPsd { .. } => Error::CovarianceNotPsd {
                    zeta,
                    boundary: psd_boundary(stats.sigma_h2, stats.sigma_g2),
                },
                other => other,
            })?;
            Ok(JointCovariance::PerEntry { n, block, factor })
        }
        Correlation::General(cross) => {
            let m = n * n;
            let eye = ComplexMatrix::identity(m);
            let blocks = [
                [eye.scale(stats.sigma_h2), cross.k1.adjoint(), cross.k2.adjoint()],
                [cross.k1.clone(), eye.scale(stats.sigma_g2), cross.r12.clone()],
                [cross.k2.clone(), cross.r12.adjoint(), eye.scale(stats.sigma_g2)],
            ];
            let matrix = ComplexMatrix::from_fn(3 * m, 3 * m, |i, j| {
                blocks[i / m][j / m].get(i % m, j % m)
            });
            let factor = cholesky(&matrix)?;
            Ok(JointCovariance::Full { n, matrix, factor })
        }
    }
}

/// Largest `zeta` for which the scalar-diagonal block stays positive
/// semidefinite, located by bisection on the Cholesky test.
pub fn psd_boundary(sigma_h2: f64, sigma_g2: f64) -> f64 {
    let is_psd = |zeta: f64| cholesky(&scalar_block(sigma_h2, sigma_g2, zeta)).is_ok();
    let mut lo = 0.0;
    // the h-g1 minor already fails beyond sigma_H / sigma_G
    let mut hi = (sigma_h2 / sigma_g2).sqrt() + 1.0;
    debug_assert!(!is_psd(hi));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if is_psd(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// One realization of the Alice-Bob, Alice-Eve and Bob-Eve channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    pub h: ComplexMatrix,
    pub g1: ComplexMatrix,
    pub g2: ComplexMatrix,
}

impl ChannelSet {
    pub fn n(&self) -> usize {
        self.h.rows()
    }
}

pub fn sample_channel_set(stats: &ChannelStatistics, rng: &mut RngStream) -> Result<ChannelSet> {
    let cov = build_joint_covariance(stats)?;
    sample_with_covariance(&cov, rng)
}

/// Samples with a precomputed covariance; Monte Carlo loops build the
/// covariance once and call this per trial.
pub fn sample_with_covariance(cov: &JointCovariance, rng: &mut RngStream) -> Result<ChannelSet> {
    let n = cov.n();
    match cov {
        JointCovariance::PerEntry { factor, .. } => {
            let z = [
                sample_complex_gaussian(n, n, 1.0, rng)?,
                sample_complex_gaussian(n, n, 1.0, rng)?,
                sample_complex_gaussian(n, n, 1.0, rng)?,
            ];
            let mix = |row: usize| {
                let mut acc = ComplexMatrix::zeros(n, n);
                for (k, zk) in z.iter().enumerate().take(row + 1) {
                    let coef = factor.get(row, k);
                    if coef != Complex64::new(0.0, 0.0) {
                        acc = &acc + &zk.scale_complex(coef);
                    }
                }
                acc
            };
            Ok(ChannelSet {
                h: mix(0),
                g1: mix(1),
                g2: mix(2),
            })
        }
        JointCovariance::Full { factor, .. } => {
            let m = n * n;
            let z = sample_complex_gaussian(3 * m, 1, 1.0, rng)?;
            let x = factor * &z;
            let part = |k: usize| {
                ComplexMatrix::from_column_major(n, n, x.as_slice()[k * m..(k + 1) * m].to_vec())
            };
            Ok(ChannelSet {
                h: part(0)?,
                g1: part(1)?,
                g2: part(2)?,
            })
        }
    }
}

/// Alice's and Bob's channel estimates after the two pilot phases.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatePair {
    /// Alice's estimate (phase 2, Bob transmits pilots).
    pub alice: ComplexMatrix,
    /// Bob's estimate (phase 1, Alice transmits pilots).
    pub bob: ComplexMatrix,
}

/// Phase 1: `H_B = H + G2 P1 + W_B`. Phase 2: `H_A = H + G1 P2 + W_A`.
/// Absent precoders mean Eve stays silent in that phase.
pub fn observe_estimates(
    set: &ChannelSet,
    plan: &AttackPlan,
    gamma: f64,
    rng: &mut RngStream,
) -> Result<EstimatePair> {
    let n = set.n();
    for (name, m) in [("g1", &set.g1), ("g2", &set.g2)] {
        if m.shape() != (n, n) {
            return Err(Error::Dimension(format!("{name} is {:?}, H is {n}x{n}", m.shape())));
        }
    }
    let contaminate = |eve_channel: &ComplexMatrix, precoder: Option<&Precoder>| match precoder {
        None => Ok(set.h.clone()),
        Some(p) => {
            let injected = p.induced(eve_channel)?;
            if injected.shape() != (n, n) {
                return Err(Error::Dimension(format!(
                    "precoder induces a {:?} perturbation, expected {n}x{n}",
                    injected.shape()
                )));
            }
            Ok(&set.h + &injected)
        }
    };
    let bob_clean = contaminate(&set.g2, plan.phase1_precoder())?;
    let alice_clean = contaminate(&set.g1, plan.phase2_precoder())?;
    let w_b = sample_complex_gaussian(n, n, gamma, rng)?;
    let w_a = sample_complex_gaussian(n, n, gamma, rng)?;
    Ok(EstimatePair {
        alice: &alice_clean + &w_a,
        bob: &bob_clean + &w_b,
    })
}

/// Correlation coefficient between the two estimates without attack.
pub fn rho_no_attack(sigma_h2: f64, gamma: f64) -> f64 {
    sigma_h2 / (sigma_h2 + gamma)
}

/// Correlation coefficient under the random-`Q` attack, where the induced
/// channel has per-entry power `sigma_H^2 + sigma_Q^2`.
pub fn rho_random_q(sigma_h2: f64, sigma_q2: f64, gamma: f64) -> f64 {
    (sigma_h2 + sigma_q2) / (sigma_h2 + sigma_q2 + gamma)
}

/// Secret-key capacity `log2(1 / (1 - rho^2))` in bits per observation.
pub fn sk_capacity(rho: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::Domain {
            quantity: "rho",
            value: rho,
            domain: "[0, 1)",
        });
    }
    Ok(-(1.0 - rho * rho).log2())
}
