//! Closed-form secret-key-rate mathematics for round-robin DPS.
//!
//! Everything here is a pure function of its arguments. Rates are expressed
//! per emitted packet; negative rates clamp to zero ("no key").

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters chosen by Alice and by the post-processing analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    /// Pulses per packet, L.
    #[serde(rename = "L")]
    pub packet_len: u32,
    /// Mean photon number per pulse.
    pub mu: f64,
    /// Photon-number threshold. `None` means "optimize over 1..L-1".
    #[serde(default)]
    pub v_th: Option<u32>,
    /// Error-correction efficiency, f >= 1.
    #[serde(rename = "f")]
    pub ec_efficiency: f64,
    /// Security exponent; the failure probability is 3·2^-s.
    #[serde(rename = "s")]
    pub security_exponent: u32,
    /// Number of emitted packets used for the finite-key correction.
    #[serde(rename = "N_em")]
    pub emitted_packets: u64,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        ProtocolParams {
            packet_len: 65,
            mu: 0.04,
            v_th: None,
            ec_efficiency: 1.1,
            security_exponent: 80,
            emitted_packets: 200_000_000,
        }
    }
}

impl ProtocolParams {
    pub fn validate(&self) -> Result<()> {
        if self.packet_len < 2 {
            return Err(Error::invalid("L", format!("must be >= 2, got {}", self.packet_len)));
        }
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            return Err(Error::invalid(
                "mu",
                format!("must be finite and >= 0, got {}", self.mu),
            ));
        }
        if let Some(v) = self.v_th {
            if v < 1 || v > self.packet_len - 1 {
                return Err(Error::invalid(
                    "v_th",
                    format!("must be in 1..={}, got {v}", self.packet_len - 1),
                ));
            }
        }
        if !(self.ec_efficiency.is_finite() && self.ec_efficiency >= 1.0) {
            return Err(Error::invalid(
                "f",
                format!("must be finite and >= 1, got {}", self.ec_efficiency),
            ));
        }
        if self.emitted_packets < 1 {
            return Err(Error::invalid("N_em", "must be >= 1"));
        }
        Ok(())
    }
}

/// One fully evaluated operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub eta: f64,
    #[serde(rename = "Q")]
    pub q: f64,
    pub e_b: f64,
    pub e_src: f64,
    pub v_th_used: u32,
    /// Asymptotic secret key per emitted packet.
    #[serde(rename = "R")]
    pub rate: f64,
    #[serde(rename = "R_per_pulse")]
    pub rate_per_pulse: f64,
    /// Finite-key secret key per emitted packet.
    #[serde(rename = "R_ft")]
    pub rate_finite: f64,
    pub p1: f64,
    pub p2: f64,
    pub r1: f64,
    pub r2: f64,
    /// Sifted-key length used in the finite-key evaluation.
    #[serde(rename = "N")]
    pub sifted_len: u64,
    /// Set when the finite-key rate was forced to zero for a structural reason.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finite_note: Option<String>,
}

fn check_probability(p: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err(Error::ProbabilityDomain { value: p })
    }
}

fn entropy_unchecked(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
}

/// Shannon binary entropy h(p) in bits, with h(0) = h(1) = 0.
pub fn binary_entropy(p: f64) -> Result<f64> {
    check_probability(p).map(entropy_unchecked)
}

/// Eve's information per sifted bit for a threshold fraction `p = v_th/(L-1)`.
///
/// Equals h(p) below one half and saturates at one bit from there on; arguments
/// above one are treated as one.
pub fn eve_information(p: f64) -> f64 {
    if p >= 0.5 {
        1.0
    } else {
        entropy_unchecked(p.max(0.0))
    }
}

/// Probability that a packet of `packet_len` pulses at mean `mu` per pulse
/// carries more than `v_th` photons: `1 - sum_{n=0}^{v_th} Poisson(n; L·mu)`.
///
/// Terms are generated in the log domain by the ratio recurrence, so the mean
/// photon number per packet can be large (10^4 and beyond) without overflow.
pub fn source_tag_error(packet_len: u32, mu: f64, v_th: u32) -> Result<f64> {
    if !(mu.is_finite() && mu >= 0.0) {
        return Err(Error::invalid("mu", format!("must be finite and >= 0, got {mu}")));
    }
    let lambda = f64::from(packet_len) * mu;
    if lambda == 0.0 {
        return Ok(0.0);
    }
    let ln_lambda = lambda.ln();
    let mut log_term = -lambda;
    if f64::from(v_th) < lambda {
        // Below the mode the lower CDF is bounded away from one.
        let mut cdf = log_term.exp();
        for n in 1..=v_th {
            log_term += ln_lambda - f64::from(n).ln();
            cdf += log_term.exp();
        }
        Ok((1.0 - cdf).clamp(0.0, 1.0))
    } else {
        for n in 1..=v_th {
            log_term += ln_lambda - f64::from(n).ln();
        }
        let mut tail = 0.0;
        let mut n = v_th;
        loop {
            n += 1;
            log_term += ln_lambda - f64::from(n).ln();
            let term = log_term.exp();
            tail += term;
            if term <= tail * 1e-17 || term == 0.0 {
                break;
            }
        }
        Ok(tail.clamp(0.0, 1.0))
    }
}

/// Asymptotic secret key per emitted packet, clamped at zero.
pub fn asymptotic_rate(q: f64, e_b: f64, e_src: f64, packet_len: u32, v_th: u32, ec_efficiency: f64) -> Result<f64> {
    check_probability(q)?;
    check_probability(e_b)?;
    check_probability(e_src)?;
    if packet_len < 2 {
        return Err(Error::invalid("L", format!("must be >= 2, got {packet_len}")));
    }
    if q < e_src {
        return Ok(0.0);
    }
    let p2 = f64::from(v_th) / f64::from(packet_len - 1);
    let rate = q * (1.0 - ec_efficiency * entropy_unchecked(e_b)) - e_src - (q - e_src) * eve_information(p2);
    Ok(rate.max(0.0))
}

/// Result of a threshold scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdChoice {
    pub v_th: u32,
    pub rate: f64,
}

/// Exhaustive scan of v_th over 1..=L-1 for the largest asymptotic rate.
///
/// `e_src_of` maps a threshold to its source-tag error. Ties go to the smaller
/// threshold.
pub fn optimal_vth<F>(q: f64, e_b: f64, e_src_of: F, packet_len: u32, ec_efficiency: f64) -> Result<ThresholdChoice>
where
    F: Fn(u32) -> Result<f64>,
{
    if packet_len < 2 {
        return Err(Error::invalid("L", format!("must be >= 2, got {packet_len}")));
    }
    let mut best = ThresholdChoice {
        v_th: 1,
        rate: f64::NEG_INFINITY,
    };
    for v_th in 1..packet_len {
        let rate = asymptotic_rate(q, e_b, e_src_of(v_th)?, packet_len, v_th, ec_efficiency)?;
        if rate > best.rate {
            best = ThresholdChoice { v_th, rate };
        }
    }
    Ok(best)
}

/// Inputs of the finite-size correction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiniteKeyInputs {
    /// Sifted-key length N.
    pub sifted_len: u64,
    /// Emitted packets N_em.
    pub emitted_packets: u64,
    pub e_b: f64,
    pub e_src: f64,
    pub v_th: u32,
    pub packet_len: u32,
    pub ec_efficiency: f64,
    pub security_exponent: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiniteKeyRate {
    /// Secret key per emitted packet, clamped at zero.
    pub rate: f64,
    pub p1: f64,
    pub p2: f64,
    pub r1: f64,
    pub r2: f64,
    /// True when 1 - r1 <= 0 left no room for key and the rate was forced to 0.
    pub tag_saturated: bool,
}

/// Finite-size secret key per emitted packet, with its deviation terms.
pub fn finite_rate(input: &FiniteKeyInputs) -> Result<FiniteKeyRate> {
    let FiniteKeyInputs {
        sifted_len,
        emitted_packets,
        e_b,
        e_src,
        v_th,
        packet_len,
        ec_efficiency,
        security_exponent,
    } = *input;
    check_probability(e_b)?;
    check_probability(e_src)?;
    if packet_len < 2 {
        return Err(Error::invalid("L", format!("must be >= 2, got {packet_len}")));
    }
    if sifted_len == 0 || sifted_len > emitted_packets {
        return Err(Error::invalid(
            "N",
            format!("sifted length must be in 1..={emitted_packets}, got {sifted_len}"),
        ));
    }
    let n = sifted_len as f64;
    let n_em = emitted_packets as f64;
    let s = f64::from(security_exponent);

    let p1 = e_src * n_em / n;
    if p1 > 1.0 {
        return Err(Error::InsufficientSiftedKey { p1 });
    }
    let p2 = (f64::from(v_th) / f64::from(packet_len - 1)).clamp(0.0, 1.0);

    let r1 = (p1 + (2.0 * LN_2 * p1 * (1.0 - p1) * s / n).sqrt()).min(1.0);
    if 1.0 - r1 <= 0.0 {
        return Ok(FiniteKeyRate {
            rate: 0.0,
            p1,
            p2,
            r1,
            r2: p2,
            tag_saturated: true,
        });
    }
    let r2 = (p2 + (2.0 * LN_2 * p2 * (1.0 - p2) * s / (n * (1.0 - r1))).sqrt()).min(1.0);

    let secret = n * (1.0 - ec_efficiency * entropy_unchecked(e_b)) - n * r1 - n * (1.0 - r1) * eve_information(r2) - s;
    Ok(FiniteKeyRate {
        rate: (secret / n_em).max(0.0),
        p1,
        p2,
        r1,
        r2,
        tag_saturated: false,
    })
}
