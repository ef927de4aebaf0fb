//! Analytic channel, interferometer and detector model.
//!
//! `d` is a single additive per-packet dark probability covering both
//! detector channels, used exactly as in the yield and error-rate formulas.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::keyrate::{self, FiniteKeyInputs, ProtocolParams, RateReport, ThresholdChoice};

/// Channel and receiver physics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    /// Fiber attenuation, dB/km.
    #[serde(rename = "alpha")]
    pub alpha_db_per_km: f64,
    pub length_km: f64,
    /// Insertion loss of Bob's variable-delay interferometer, dB.
    #[serde(rename = "alpha_IL")]
    pub alpha_il_db: f64,
    #[serde(rename = "eta_D")]
    pub eta_d: f64,
    /// Dark-count probability per packet detection opportunity (both channels).
    #[serde(rename = "d")]
    pub dark_count: f64,
    /// Probability that a signal photon hits the wrong detector.
    pub e_s: f64,
}

impl Default for LinkParams {
    fn default() -> Self {
        LinkParams {
            alpha_db_per_km: 0.2,
            length_km: 0.0,
            alpha_il_db: 5.60,
            eta_d: 0.203,
            dark_count: 2.1e-6,
            e_s: 0.022,
        }
    }
}

impl LinkParams {
    pub fn at_length(&self, length_km: f64) -> LinkParams {
        LinkParams {
            length_km,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        fn non_negative(field: &'static str, v: f64) -> Result<()> {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(field, format!("must be finite and >= 0, got {v}")))
            }
        }
        non_negative("alpha", self.alpha_db_per_km)?;
        non_negative("length_km", self.length_km)?;
        non_negative("alpha_IL", self.alpha_il_db)?;
        if !(0.0..=1.0).contains(&self.eta_d) {
            return Err(Error::invalid(
                "eta_D",
                format!("must be in [0, 1], got {}", self.eta_d),
            ));
        }
        if !(0.0..1.0).contains(&self.dark_count) {
            return Err(Error::invalid(
                "d",
                format!("must be in [0, 1), got {}", self.dark_count),
            ));
        }
        if !(0.0..=0.5).contains(&self.e_s) {
            return Err(Error::invalid("e_s", format!("must be in [0, 0.5], got {}", self.e_s)));
        }
        Ok(())
    }
}

/// Which rate the threshold (and the optimizer) maximizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    #[default]
    Asymptotic,
    Finite,
}

/// Overall efficiency η = η_D · 10^{-(α·l + α_IL)/10}.
pub fn overall_efficiency(link: &LinkParams) -> f64 {
    efficiency_with_loss(link, link.alpha_il_db)
}

/// η with the interferometer loss replaced by `interferometer_db`.
pub fn efficiency_with_loss(link: &LinkParams, interferometer_db: f64) -> f64 {
    let loss_db = link.alpha_db_per_km * link.length_km + interferometer_db;
    link.eta_d * 10f64.powf(-loss_db / 10.0)
}

/// 1 - (1-η)^i, the probability that at least one of `i` photons survives.
fn survival(photons: u32, eta: f64) -> f64 {
    if photons == 0 {
        return 0.0;
    }
    -(f64::from(photons) * (-eta).ln_1p()).exp_m1()
}

/// Yield of an i-photon packet measured with delay `r`.
pub fn yield_given_delay(photons: u32, r: u32, packet_len: u32, eta: f64, dark: f64) -> Result<f64> {
    if r < 1 || r >= packet_len {
        return Err(Error::DelayOutOfRange {
            r,
            max: packet_len.saturating_sub(1),
        });
    }
    let window = f64::from(packet_len - r) / f64::from(packet_len);
    Ok((window * (survival(photons, eta) + dark)).clamp(0.0, 1.0))
}

/// Yield of an i-photon packet averaged over uniformly chosen delays.
pub fn average_yield(photons: u32, eta: f64, dark: f64) -> f64 {
    (0.5 * (survival(photons, eta) + dark)).clamp(0.0, 1.0)
}

/// Packet yield Q = ½(1 - e^{-ηLμ} + d).
pub fn packet_yield(packet_len: u32, mu: f64, eta: f64, dark: f64) -> f64 {
    let arrivals = eta * f64::from(packet_len) * mu;
    (0.5 * (-(-arrivals).exp_m1() + dark)).clamp(0.0, 1.0)
}

/// Sifted-bit error rate e_b.
pub fn bit_error_rate(mu: f64, eta: f64, dark: f64, e_s: f64) -> Result<f64> {
    let signal = -(-eta * mu).exp_m1();
    let denom = signal + dark;
    if denom <= 0.0 {
        return Err(Error::UndefinedErrorRate);
    }
    Ok(((e_s * signal + 0.5 * dark) / denom).clamp(0.0, 1.0))
}

/// Evaluate the whole analytic pipeline at the protocol's μ.
pub fn predicted_report(protocol: &ProtocolParams, link: &LinkParams) -> Result<RateReport> {
    predicted_report_with(protocol, link, Objective::Asymptotic)
}

/// As [`predicted_report`], choosing v_th (when not fixed) to maximize `objective`.
pub fn predicted_report_with(protocol: &ProtocolParams, link: &LinkParams, objective: Objective) -> Result<RateReport> {
    protocol.validate()?;
    link.validate()?;
    let eta = overall_efficiency(link);
    report_from_efficiency(protocol, link, eta, objective)
}

pub(crate) fn report_from_efficiency(
    protocol: &ProtocolParams,
    link: &LinkParams,
    eta: f64,
    objective: Objective,
) -> Result<RateReport> {
    let len = protocol.packet_len;
    let mu = protocol.mu;
    let q = packet_yield(len, mu, eta, link.dark_count);
    let e_b = bit_error_rate(mu, eta, link.dark_count, link.e_s)?;
    let sifted_len = (q * protocol.emitted_packets as f64).round() as u64;
    let e_src_of = |v: u32| keyrate::source_tag_error(len, mu, v);

    let v_th = match (protocol.v_th, objective) {
        (Some(v), _) => v,
        (None, Objective::Asymptotic) => keyrate::optimal_vth(q, e_b, e_src_of, len, protocol.ec_efficiency)?.v_th,
        (None, Objective::Finite) => {
            let mut best = ThresholdChoice {
                v_th: 1,
                rate: f64::NEG_INFINITY,
            };
            for v in 1..len {
                let (fk, _) = finite_at(protocol, e_b, e_src_of(v)?, v, sifted_len)?;
                let rate = fk.map_or(0.0, |f| f.rate);
                if rate > best.rate {
                    best = ThresholdChoice { v_th: v, rate };
                }
            }
            best.v_th
        }
    };

    let e_src = e_src_of(v_th)?;
    let rate = keyrate::asymptotic_rate(q, e_b, e_src, len, v_th, protocol.ec_efficiency)?;
    let (finite, finite_note) = finite_at(protocol, e_b, e_src, v_th, sifted_len)?;
    let p2 = f64::from(v_th) / f64::from(len - 1);
    // Without usable sifted key the tag deviation is reported as saturated.
    let (rate_finite, p1, r1, r2) = match finite {
        Some(fk) => (fk.rate, fk.p1, fk.r1, fk.r2),
        None if sifted_len > 0 => {
            let p1 = e_src * protocol.emitted_packets as f64 / sifted_len as f64;
            (0.0, p1, 1.0, p2.min(1.0))
        }
        None => (0.0, 1.0, 1.0, p2.min(1.0)),
    };

    Ok(RateReport {
        eta,
        q,
        e_b,
        e_src,
        v_th_used: v_th,
        rate,
        rate_per_pulse: rate / f64::from(len),
        rate_finite,
        p1,
        p2: p2.min(1.0),
        r1,
        r2,
        sifted_len,
        finite_note,
    })
}

/// Finite-key evaluation that maps "no usable sifted key" conditions to a
/// zero rate plus a note instead of an error.
fn finite_at(
    protocol: &ProtocolParams,
    e_b: f64,
    e_src: f64,
    v_th: u32,
    sifted_len: u64,
) -> Result<(Option<keyrate::FiniteKeyRate>, Option<String>)> {
    if sifted_len == 0 {
        return Ok((None, Some("no sifted key at this yield".into())));
    }
    let inputs = FiniteKeyInputs {
        sifted_len: sifted_len.min(protocol.emitted_packets),
        emitted_packets: protocol.emitted_packets,
        e_b,
        e_src,
        v_th,
        packet_len: protocol.packet_len,
        ec_efficiency: protocol.ec_efficiency,
        security_exponent: protocol.security_exponent,
    };
    match keyrate::finite_rate(&inputs) {
        Ok(fk) if fk.tag_saturated => Ok((Some(fk), Some("tag deviation r1 reached 1".into()))),
        Ok(fk) => Ok((Some(fk), None)),
        Err(e @ Error::InsufficientSiftedKey { .. }) => Ok((None, Some(e.to_string()))),
        Err(e) => Err(e),
    }
}
