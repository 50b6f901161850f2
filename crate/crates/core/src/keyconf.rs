//! Secret-key extraction from channel estimates and the key-confirmation handshake.
//!
//! Alice sign-quantizes her estimate with a guard band and publishes the kept
//! sample indices; Bob quantizes his own estimate at those indices. The
//! handshake then checks agreement without sending either key in the clear:
//!
//! ```text
//! Alice: r random, x = a ^ r           ->  x
//! Bob:   r' = x ^ b, y = h(r') ^ b     <-  y
//! Alice: pass iff h(r) == y ^ a
//! ```
//!
//! `h` is multiplication by `x` in `GF(2)[x] / (x^M + x + 1)`. Both `x` and
//! `x + 1` are units of that ring, so `h` is a bijection and `h(d) = d` only
//! for `d = 0`. Since `h` is xor-linear the pass condition
//! `h(r) = h(r ^ d) ^ d` reduces to `h(d) = d`, so the verdict passes exactly
//! when `a == b`, whatever `r` is.
//!
//! The flip side: with matching keys, `x ^ y = r ^ h(r)` and `r -> r ^ h(r)`
//! is itself a bijection, so a listener on both messages can recover `r` and
//! hence the key. Any `h` with few false passes has this property, because
//! false passes are exactly the collisions of `r -> r ^ h(r)`. The keys here
//! only serve to detect contamination, never to encrypt.
//!
//! For `M = 1` the only non-identity bijection is the bit flip, which cannot
//! tell keys apart; one-bit keys always pass.

use std::fmt;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelStatistics;
use crate::error::{Error, Result};
use crate::numerics::{ComplexMatrix, RngStream};

/// Bit sequence, index 0 is the most significant bit.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct BitString(Vec<bool>);

impl BitString {
    pub fn zeros(len: usize) -> Self {
        BitString(vec![false; len])
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        BitString(bits)
    }

    /// Parses `"0101"`-style text. Any character other than `0`/`1` is rejected.
    pub fn parse_binary(text: &str) -> Result<Self> {
        text.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::parameter("bits", format!("unexpected character {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(BitString)
    }

    /// Low `len` bits of `value`, most significant first. `len` must be at most 64.
    pub fn from_u64(value: u64, len: usize) -> Self {
        assert!(len <= 64, "from_u64 supports at most 64 bits");
        BitString((0..len).map(|i| (value >> (len - 1 - i)) & 1 == 1).collect())
    }

    /// Unsigned value, most significant bit first. `None` past 64 bits.
    pub fn to_u64(&self) -> Option<u64> {
        if self.len() > 64 {
            return None;
        }
        Some(self.0.iter().fold(0u64, |acc, &b| (acc << 1) | b as u64))
    }

    pub fn random(len: usize, rng: &mut RngStream) -> Self {
        let mut bits = Vec::with_capacity(len);
        while bits.len() < len {
            let word = rng.next_u64();
            let take = (len - bits.len()).min(64);
            bits.extend((0..take).map(|i| (word >> i) & 1 == 1));
        }
        BitString(bits)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn xor(&self, other: &BitString) -> Result<BitString> {
        if self.len() != other.len() {
            return Err(Error::LengthMismatch {
                left: self.len(),
                right: other.len(),
            });
        }
        Ok(BitString(self.0.iter().zip(&other.0).map(|(a, b)| a ^ b).collect()))
    }

    /// Number of positions where the two strings differ.
    pub fn hamming_distance(&self, other: &BitString) -> Result<usize> {
        Ok(self.xor(other)?.count_ones())
    }

    /// Hex text, most significant nibble first, zero-padded on the left to whole nibbles.
    pub fn to_hex(&self) -> String {
        let pad = (4 - self.len() % 4) % 4;
        let padded: Vec<bool> = std::iter::repeat_n(false, pad).chain(self.0.iter().copied()).collect();
        padded
            .chunks(4)
            .map(|nibble| {
                let v = nibble.iter().fold(0u32, |acc, &b| (acc << 1) | b as u32);
                char::from_digit(v, 16).expect("nibble below 16")
            })
            .collect()
    }

    /// Inverse of [`BitString::to_hex`] for a known bit length.
    pub fn from_hex(text: &str, len: usize) -> Result<Self> {
        if text.len() != len.div_ceil(4) {
            return Err(Error::parameter(
                "hex",
                format!("{} nibbles cannot hold exactly {len} bits", text.len()),
            ));
        }
        let mut bits = Vec::with_capacity(text.len() * 4);
        for c in text.chars() {
            let v = c
                .to_digit(16)
                .ok_or_else(|| Error::parameter("hex", format!("unexpected character {c:?}")))?;
            bits.extend((0..4).rev().map(|i| (v >> i) & 1 == 1));
        }
        let pad = bits.len() - len;
        if bits[..pad].iter().any(|&b| b) {
            return Err(Error::parameter("hex", "padding bits are not zero"));
        }
        Ok(BitString(bits.split_off(pad)))
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitString({self})")
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// An extracted key of length `M >= 1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SecretKey(BitString);

impl SecretKey {
    pub fn new(bits: BitString) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::parameter("M", "keys need at least one bit"));
        }
        Ok(SecretKey(bits))
    }

    pub fn random(len: usize, rng: &mut RngStream) -> Result<Self> {
        SecretKey::new(BitString::random(len, rng))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn bits(&self) -> &BitString {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn from_bool(pass: bool) -> Self {
        if pass {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn is_pass(self) -> bool {
        self == Verdict::Pass
    }
}

/// Real parts of the column-major entries, then the imaginary parts.
pub fn vectorize_real(estimate: &ComplexMatrix) -> Vec<f64> {
    let entries = estimate.as_slice();
    entries.iter().map(|z| z.re).chain(entries.iter().map(|z| z.im)).collect()
}

/// Guard-band threshold `delta * sqrt((sigma_H^2 + gamma) / 2)`, one real component's std.
pub fn guard_threshold(stats: &ChannelStatistics, delta: f64) -> f64 {
    delta * ((stats.sigma_h2() + stats.gamma()) / 2.0).sqrt()
}

/// Alice's side of extraction: keeps samples whose magnitude clears the guard
/// band, sign-quantizes them, truncates to `target_m` bits and returns the
/// kept indices to be announced publicly.
pub fn extract_key(
    estimate: &ComplexMatrix,
    stats: &ChannelStatistics,
    delta: f64,
    target_m: usize,
) -> Result<(SecretKey, Vec<usize>)> {
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::parameter("delta", format!("must be finite and >= 0, got {delta}")));
    }
    if target_m == 0 {
        return Err(Error::parameter("M", "keys need at least one bit"));
    }
    let n = stats.n();
    if estimate.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "estimate is {:?}, expected {n}x{n}",
            estimate.shape()
        )));
    }
    let threshold = guard_threshold(stats, delta);
    let samples = vectorize_real(estimate);
    let indices: Vec<usize> = samples
        .iter()
        .enumerate()
        .filter(|(_, v)| v.abs() > threshold)
        .map(|(i, _)| i)
        .take(target_m)
        .collect();
    if indices.is_empty() {
        return Err(Error::InsufficientEntropy);
    }
    let bits = indices.iter().map(|&i| samples[i] > 0.0).collect();
    Ok((SecretKey(BitString(bits)), indices))
}

/// Bob's side: sign-quantizes exactly the announced samples, no guard test.
pub fn extract_key_at(estimate: &ComplexMatrix, indices: &[usize], target_m: usize) -> Result<SecretKey> {
    let samples = vectorize_real(estimate);
    let mut bits = Vec::with_capacity(indices.len().min(target_m));
    for &i in indices.iter().take(target_m) {
        let v = samples.get(i).ok_or(Error::IndexOutOfRange {
            index: i,
            len: samples.len(),
        })?;
        bits.push(*v > 0.0);
    }
    SecretKey::new(BitString(bits))
}

/// The handshake map: multiply by `x` modulo `x^M + x + 1`.
pub fn h_map(v: &BitString) -> BitString {
    let m = v.len();
    if m <= 1 {
        return BitString(v.0.iter().map(|b| !b).collect());
    }
    let bits = &v.0;
    let carry = bits[0];
    let mut out: Vec<bool> = bits[1..].to_vec();
    out.push(false);
    if carry {
        out[m - 1] ^= true;
        out[m - 2] ^= true;
    }
    BitString(out)
}

/// Inverse of [`h_map`].
pub fn h_map_inverse(v: &BitString) -> BitString {
    let m = v.len();
    if m <= 1 {
        return BitString(v.0.iter().map(|b| !b).collect());
    }
    let mut bits = v.0.clone();
    // h's output always ends in 0 unless the reduction fired.
    let carry = bits[m - 1];
    if carry {
        bits[m - 1] ^= true;
        bits[m - 2] ^= true;
    }
    bits.pop();
    bits.insert(0, carry);
    BitString(bits)
}

/// Alice draws `r` and sends `x = a ^ r`.
pub fn challenge(a: &SecretKey, rng: &mut RngStream) -> (BitString, BitString) {
    let r = BitString::random(a.len(), rng);
    let x = a.bits().xor(&r).expect("lengths agree by construction");
    (r, x)
}

/// Bob decrypts `r' = x ^ b` and answers `y = h(r') ^ b`.
pub fn respond(b: &SecretKey, x: &BitString) -> Result<BitString> {
    let r_prime = x.xor(b.bits())?;
    h_map(&r_prime).xor(b.bits())
}

/// Alice accepts iff `h(r) = y ^ a`.
pub fn verify(a: &SecretKey, r: &BitString, y: &BitString) -> Result<Verdict> {
    if r.len() != a.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: r.len(),
        });
    }
    let z = y.xor(a.bits())?;
    Ok(Verdict::from_bool(h_map(r) == z))
}

/// Messages and outcome of one handshake.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyConfTranscript {
    pub r: BitString,
    pub x: BitString,
    pub y: BitString,
    pub verdict: Verdict,
}

impl KeyConfTranscript {
    pub fn m(&self) -> usize {
        self.r.len()
    }
}

#[derive(Serialize, Deserialize)]
struct TranscriptRecord {
    m: usize,
    r: String,
    x: String,
    y: String,
    verdict: Verdict,
}

impl Serialize for KeyConfTranscript {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        TranscriptRecord {
            m: self.m(),
            r: self.r.to_hex(),
            x: self.x.to_hex(),
            y: self.y.to_hex(),
            verdict: self.verdict,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for KeyConfTranscript {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rec = TranscriptRecord::deserialize(deserializer)?;
        let parse = |s: &str| BitString::from_hex(s, rec.m).map_err(serde::de::Error::custom);
        Ok(KeyConfTranscript {
            r: parse(&rec.r)?,
            x: parse(&rec.x)?,
            y: parse(&rec.y)?,
            verdict: rec.verdict,
        })
    }
}

/// Runs challenge, response and verification in order.
pub fn key_confirmation_round(a: &SecretKey, b: &SecretKey, rng: &mut RngStream) -> Result<KeyConfTranscript> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let (r, x) = challenge(a, rng);
    let y = respond(b, &x)?;
    let verdict = verify(a, &r, &y)?;
    Ok(KeyConfTranscript { r, x, y, verdict })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::{plan_baseline, plan_passive};
    use crate::channel::{observe_estimates, sample_channel_set};
    use crate::numerics::{Complex64, StreamDomain};
    use proptest::prelude::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn bits(s: &str) -> BitString {
        BitString::parse_binary(s).unwrap()
    }

    fn key(s: &str) -> SecretKey {
        SecretKey::new(bits(s)).unwrap()
    }

    fn rng(i: u64) -> RngStream {
        RngStream::for_trial(7, StreamDomain::Testing, i)
    }

    #[test]
    fn hex_is_msb_first_and_left_padded() {
        assert_eq!(bits("0001").to_hex(), "1");
        assert_eq!(bits("10100101").to_hex(), "a5");
        assert_eq!(bits("11").to_hex(), "3");
        assert_eq!(bits("100000").to_hex(), "20");
        for len in 1..20 {
            let b = BitString::random(len, &mut rng(len as u64));
            assert_eq!(BitString::from_hex(&b.to_hex(), len).unwrap(), b);
        }
        assert!(BitString::from_hex("f", 3).is_err());
    }

    #[test]
    fn h_map_examples() {
        // 0100 is x^2, times x is x^3.
        assert_eq!(h_map(&bits("0100")), bits("1000"));
        // x^3 * x = x^4 = x + 1.
        assert_eq!(h_map(&bits("1000")), bits("0011"));
        assert_eq!(h_map(&bits("0101")), bits("1010"));
        assert_eq!(h_map(&bits("0000")), bits("0000"));
        assert_eq!(h_map(&bits("1")), bits("0"));
    }

    #[test]
    fn h_map_inverse_exhaustive() {
        for m in 2..=10 {
            let mut seen = vec![false; 1 << m];
            for v in 0..(1u64 << m) {
                let b = BitString::from_u64(v, m);
                let hv = h_map(&b);
                assert_eq!(h_map_inverse(&hv), b);
                assert_eq!(h_map(&h_map_inverse(&b)), b);
                seen[hv.to_u64().unwrap() as usize] = true;
            }
            assert!(seen.iter().all(|&s| s), "h is not onto at M = {m}");
        }
    }

    #[test]
    fn h_map_matches_polynomial_oracle() {
        // Multiplication by x, reduced with the full polynomial as an integer mask.
        for m in 2..=12usize {
            let modulus = (1u64 << m) | 0b11;
            for v in 0..(1u64 << m) {
                let mut w = v << 1;
                if w >> m & 1 == 1 {
                    w ^= modulus;
                }
                assert_eq!(h_map(&BitString::from_u64(v, m)).to_u64(), Some(w));
            }
        }
    }

    #[test]
    fn hand_trace_of_mismatched_handshake() {
        let (a, b, r) = (key("0001"), key("0000"), bits("0101"));
        let x = a.bits().xor(&r).unwrap();
        assert_eq!(x, bits("0100"));
        let y = respond(&b, &x).unwrap();
        // r' = 0100, h(r') = 1000.
        assert_eq!(y, bits("1000"));
        // z = y ^ a = 1001 against h(r) = 1010.
        assert_eq!(verify(&a, &r, &y).unwrap(), Verdict::Fail);
    }

    #[test]
    fn respond_with_zero_key() {
        let b = key("0000");
        assert_eq!(respond(&b, &bits("0000")).unwrap(), h_map(&bits("0000")));
        assert_eq!(respond(&b, &bits("0011")).unwrap(), bits("0110"));
    }

    #[test]
    fn length_mismatches_are_reported() {
        assert!(matches!(
            respond(&key("000"), &bits("0000")),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            verify(&key("000"), &bits("0000"), &bits("000")),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(key_confirmation_round(&key("0"), &key("00"), &mut rng(0)).is_err());
        assert!(SecretKey::new(BitString::zeros(0)).is_err());
    }

    #[test]
    fn handshake_algebra_exhaustive() {
        for m in 1..=10usize {
            for av in 0..(1u64 << m) {
                // Sampling a handful of keys per length keeps this under a second.
                if m > 6 && av % 37 != 0 {
                    continue;
                }
                let a = SecretKey::new(BitString::from_u64(av, m)).unwrap();
                for dv in 0..(1u64 << m) {
                    let d = BitString::from_u64(dv, m);
                    let b = SecretKey::new(a.bits().xor(&d).unwrap()).unwrap();
                    for rv in 0..(1u64 << m) {
                        let r = BitString::from_u64(rv, m);
                        let x = a.bits().xor(&r).unwrap();
                        let y = respond(&b, &x).unwrap();
                        let pass = verify(&a, &r, &y).unwrap().is_pass();
                        let predicted = h_map(&r) == h_map(&r.xor(&d).unwrap()).xor(&d).unwrap();
                        assert_eq!(pass, predicted);
                        if dv == 0 {
                            assert!(pass);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn no_false_passes_at_m8() {
        let m = 8;
        let a = SecretKey::new(BitString::zeros(m)).unwrap();
        let mut false_passes = 0usize;
        for dv in 1..256u64 {
            let b = SecretKey::new(BitString::from_u64(dv, m)).unwrap();
            for rv in 0..256u64 {
                let r = BitString::from_u64(rv, m);
                let y = respond(&b, &a.bits().xor(&r).unwrap()).unwrap();
                false_passes += verify(&a, &r, &y).unwrap().is_pass() as usize;
            }
        }
        assert!((false_passes as f64) / (255.0 * 256.0) <= 1.0 / 256.0);
        assert_eq!(false_passes, 0);
    }

    #[test]
    fn equal_keys_always_pass() {
        for i in 0..1000 {
            let mut g = rng(i);
            let a = SecretKey::random(64, &mut g).unwrap();
            let t = key_confirmation_round(&a, &a, &mut g).unwrap();
            assert_eq!(t.verdict, Verdict::Pass);
            assert_eq!(h_map(&t.r), t.y.xor(a.bits()).unwrap());
        }
    }

    #[test]
    fn independent_keys_never_pass() {
        for i in 0..100_000 {
            let mut g = rng(i);
            let a = SecretKey::random(64, &mut g).unwrap();
            let b = SecretKey::random(64, &mut g).unwrap();
            let t = key_confirmation_round(&a, &b, &mut g).unwrap();
            assert_eq!(t.verdict.is_pass(), a == b);
        }
    }

    #[test]
    fn transcript_replays_and_round_trips() {
        let a = SecretKey::random(61, &mut rng(1)).unwrap();
        let t1 = key_confirmation_round(&a, &a, &mut rng(2)).unwrap();
        let t2 = key_confirmation_round(&a, &a, &mut rng(2)).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(t1.x.xor(&t1.r).unwrap(), *a.bits());
        let json = serde_json::to_string(&t1).unwrap();
        assert!(json.contains("\"m\":61"));
        assert!(json.contains(&format!("\"x\":\"{}\"", t1.x.to_hex())));
        let back: KeyConfTranscript = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t1);
    }

    #[test]
    fn challenge_with_zero_key_sends_r() {
        let a = SecretKey::new(BitString::zeros(64)).unwrap();
        let (r, x) = challenge(&a, &mut rng(3));
        assert_eq!(r, x);
        let (r2, _) = challenge(&a, &mut rng(3));
        assert_eq!(r, r2);
    }

    #[test]
    fn pad_output_is_uniform_and_independent_of_key() {
        // Chi-square on each bit marginal and on adjacent-pair agreement, for a fixed biased key.
        let m = 16;
        let trials = 100_000;
        let a = SecretKey::new(BitString::from_u64(0xff01, m)).unwrap();
        let mut ones = vec![0usize; m];
        let mut agree = vec![0usize; m - 1];
        let mut g = rng(11);
        for _ in 0..trials {
            let (_, x) = challenge(&a, &mut g);
            for (j, &bit) in x.bits().iter().enumerate() {
                ones[j] += bit as usize;
            }
            for j in 0..m - 1 {
                agree[j] += (x.bits()[j] == x.bits()[j + 1]) as usize;
            }
        }
        let chi = |count: usize| {
            let e = trials as f64 / 2.0;
            let c = count as f64;
            ((c - e).powi(2) + (trials as f64 - c - e).powi(2)) / e
        };
        let stat: f64 = ones.iter().chain(&agree).map(|&c| chi(c)).sum();
        // 31 degrees of freedom; the 0.999 quantile is about 61.1.
        assert!(stat < 61.1, "chi-square {stat}");
    }

    fn passive_stats(gamma: f64) -> ChannelStatistics {
        ChannelStatistics::independent(8, 1.0, 0.5, gamma).unwrap()
    }

    #[test]
    fn quantizer_examples() {
        // sigma_H^2 = 0.5, gamma = 0, delta = 1 gives a threshold of 0.5.
        let stats = ChannelStatistics::independent(1, 0.5, 0.5, 0.0).unwrap();
        assert!((guard_threshold(&stats, 1.0) - 0.5).abs() < 1e-15);
        let est = ComplexMatrix::from_fn(1, 1, |_, _| Complex64::new(1.2, -0.1));
        let (k, idx) = extract_key(&est, &stats, 1.0, 64).unwrap();
        assert_eq!(idx, vec![0]);
        assert_eq!(k.bits(), &bits("1"));
        let est = ComplexMatrix::from_fn(1, 1, |_, _| Complex64::new(0.3, -0.1));
        assert_eq!(extract_key(&est, &stats, 1.0, 64), Err(Error::InsufficientEntropy));
    }

    #[test]
    fn extraction_order_and_truncation() {
        let stats = ChannelStatistics::independent(2, 1.0, 0.5, 0.0).unwrap();
        // Column-major entries (0,0), (1,0), (0,1), (1,1).
        let est = ComplexMatrix::from_column_major(
            2,
            2,
            vec![
                Complex64::new(2.0, -2.0),
                Complex64::new(0.1, 2.0),
                Complex64::new(-2.0, 0.0),
                Complex64::new(2.0, -0.2),
            ],
        )
        .unwrap();
        let (k, idx) = extract_key(&est, &stats, 1.0, 64).unwrap();
        assert_eq!(idx, vec![0, 2, 3, 4, 5]);
        assert_eq!(k.bits(), &bits("10101"));
        let (k3, idx3) = extract_key(&est, &stats, 1.0, 3).unwrap();
        assert_eq!(idx3, vec![0, 2, 3]);
        assert_eq!(k3.bits(), &bits("101"));
        assert_eq!(extract_key_at(&est, &idx, 64).unwrap(), k);
        assert!(matches!(
            extract_key_at(&est, &[8], 64),
            Err(Error::IndexOutOfRange { index: 8, len: 8 })
        ));
        assert!(extract_key(&est, &stats, -1.0, 4).is_err());
        assert!(extract_key(&est, &stats, 1.0, 0).is_err());
    }

    fn passive_pair(stats: &ChannelStatistics, i: u64) -> (ComplexMatrix, ComplexMatrix) {
        let mut g = rng(1000 + i);
        let set = sample_channel_set(stats, &mut g).unwrap();
        let est = observe_estimates(&set, &plan_passive(), stats.gamma(), &mut g).unwrap();
        (est.alice, est.bob)
    }

    #[test]
    fn same_estimate_gives_same_key() {
        let stats = passive_stats(0.1);
        let (alice, _) = passive_pair(&stats, 0);
        let (k1, i1) = extract_key(&alice, &stats, 1.0, 64).unwrap();
        let (k2, i2) = extract_key(&alice, &stats, 1.0, 64).unwrap();
        assert_eq!((&k1, &i1), (&k2, &i2));
        assert_eq!(extract_key_at(&alice, &i1, 64).unwrap(), k1);
    }

    #[test]
    fn noiseless_passive_keys_agree() {
        let stats = passive_stats(0.0);
        for i in 0..50 {
            let (alice, bob) = passive_pair(&stats, i);
            let (ka, idx) = extract_key(&alice, &stats, 1.0, 64).unwrap();
            assert_eq!(extract_key_at(&bob, &idx, 64).unwrap(), ka);
        }
    }

    #[test]
    fn quantizer_sign_symmetry() {
        let stats = passive_stats(0.1);
        for i in 0..20 {
            let (alice, _) = passive_pair(&stats, i);
            let (k, idx) = extract_key(&alice, &stats, 0.7, 128).unwrap();
            let (kn, idxn) = extract_key(&(-&alice), &stats, 0.7, 128).unwrap();
            assert_eq!(idx, idxn);
            let all_ones = BitString::from_bits(vec![true; k.len()]);
            assert_eq!(k.bits().xor(&all_ones).unwrap(), *kn.bits());
        }
    }

    /// Disagreement probability for Alice's reading `s + w_A`, kept when
    /// above `t` in magnitude, against Bob's `s + w_B`, by 1-D quadrature.
    fn disagreement_oracle(sigma_h2: f64, gamma: f64, delta: f64) -> f64 {
        let var_s = sigma_h2 / 2.0;
        let var_w = gamma / 2.0;
        let var_a = var_s + var_w;
        let t = delta * var_a.sqrt();
        let slope = var_s / var_a;
        let cond_sd = (var_a - var_s * var_s / var_a).sqrt();
        let std = Normal::new(0.0, 1.0).unwrap();
        let sd_a = var_a.sqrt();
        // By symmetry only the upper tail is integrated.
        let upper = 12.0 * sd_a;
        let steps = 20_000;
        let h = (upper - t) / steps as f64;
        let f = |v: f64| {
            let density = (-(v * v) / (2.0 * var_a)).exp() / (2.0 * std::f64::consts::PI * var_a).sqrt();
            density * std.cdf(-slope * v / cond_sd)
        };
        let mut integral = f(t) + f(upper);
        for k in 1..steps {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            integral += w * f(t + k as f64 * h);
        }
        integral *= h / 3.0;
        let kept_half = 1.0 - std.cdf(delta);
        integral / kept_half
    }

    fn empirical_disagreement(stats: &ChannelStatistics, delta: f64, min_bits: usize) -> (f64, usize) {
        let (mut differ, mut total) = (0usize, 0usize);
        let mut i = 0;
        while total < min_bits {
            let (alice, bob) = passive_pair(stats, i);
            i += 1;
            let Ok((ka, idx)) = extract_key(&alice, stats, delta, usize::MAX) else {
                continue;
            };
            let kb = extract_key_at(&bob, &idx, usize::MAX).unwrap();
            differ += ka.bits().hamming_distance(kb.bits()).unwrap();
            total += ka.len();
        }
        (differ as f64 / total as f64, total)
    }

    #[test]
    fn disagreement_matches_quadrature_oracle() {
        let stats = passive_stats(0.1);
        let p = disagreement_oracle(1.0, 0.1, 1.0);
        let (q, n) = empirical_disagreement(&stats, 1.0, 100_000);
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((q - p).abs() < 3.0 * se, "empirical {q} vs oracle {p} (se {se})");
    }

    #[test]
    fn guard_band_reduces_disagreement() {
        let stats = passive_stats(0.2);
        let mut previous = 1.0;
        for delta in [0.0, 0.5, 1.0, 1.5] {
            let (q, n) = empirical_disagreement(&stats, delta, 40_000);
            let se = (q * (1.0 - q) / n as f64).sqrt();
            assert!(q <= previous + 3.0 * se, "delta {delta}: {q} after {previous}");
            previous = q;
        }
    }

    #[test]
    fn baseline_attack_breaks_key_agreement() {
        let stats = ChannelStatistics::independent(8, 1.0, 1.0, 0.01).unwrap();
        let plan = plan_baseline(false);
        let mut differ = 0;
        for i in 0..1000 {
            let mut g = rng(50_000 + i);
            let set = sample_channel_set(&stats, &mut g).unwrap();
            let est = observe_estimates(&set, &plan, stats.gamma(), &mut g).unwrap();
            let (ka, idx) = extract_key(&est.alice, &stats, 1.0, 64).unwrap();
            let kb = extract_key_at(&est.bob, &idx, 64).unwrap();
            differ += (ka != kb) as usize;
        }
        assert!(differ >= 990, "keys differed in only {differ} of 1000 trials");
    }

    proptest! {
        #[test]
        fn xor_is_an_involution(a in prop::collection::vec(any::<bool>(), 1..80), seed in any::<u64>()) {
            let a = BitString::from_bits(a);
            let r = BitString::random(a.len(), &mut RngStream::new(seed, 0));
            prop_assert_eq!(a.xor(&r).unwrap().xor(&r).unwrap(), a);
        }

        #[test]
        fn h_has_no_nonzero_fixed_points(v in prop::collection::vec(any::<bool>(), 2..200)) {
            let v = BitString::from_bits(v);
            let hv = h_map(&v);
            prop_assert_eq!(h_map_inverse(&hv), v.clone());
            prop_assert_eq!(hv == v, v.count_ones() == 0);
        }
    }
}
