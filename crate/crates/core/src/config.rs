//! Run configuration: one flat JSON object whose keys mirror the physical
//! symbols. Every key is optional; missing keys take the reference operating
//! point (65-pulse packets over 0.2 dB/km fiber).
//!
//! | key | meaning | default |
//! |-----|---------|---------|
//! | `L` | pulses per packet | 65 |
//! | `mu` | mean photon number per pulse (rate, simulate) | 0.04 |
//! | `v_th` | fixed photon threshold, `null` to optimize | null |
//! | `f` | error-correction efficiency | 1.1 |
//! | `s` | security exponent | 80 |
//! | `N_em` | emitted packets for finite-key accounting | 2e8 |
//! | `alpha` | fiber loss, dB/km | 0.2 |
//! | `length_km` | fiber length for rate / simulate | 0 |
//! | `alpha_IL` | interferometer insertion loss, dB | 5.60 |
//! | `eta_D` | detector efficiency | 0.203 |
//! | `d` | dark-count probability per packet | 2.1e-6 |
//! | `e_s` | wrong-detector probability | 0.022 |
//! | `lengths_km` | sweep lengths, ascending | 20,50,70,80,85,90 |
//! | `objective` | `asymptotic` or `finite` | asymptotic |
//! | `packets` | Monte Carlo packets | 1e6 |
//! | `seed` | Monte Carlo seed | 1 |
//! | `workers` | Monte Carlo threads, 0 = all cores | 0 |
//! | `scheme` | interferometer scheme | faraday-michelson |
//! | `switch_loss_pass_db`, `unit_loss_db`, `splitter_loss_db`, `base_loss_db` | scheme loss overrides | per scheme |
//! | `tolerance_db` | per-component loss tolerance | 0 |
//! | `il_table` | measured per-delay table path | null |
//! | `visibility_extension` | add (1-V)/2 from arm imbalance | false |
//!
//! A document of the form `{"config": {...}, ...}` (as written by
//! `rate --json`) is accepted as well; only its `config` member is read.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interferometer::{MeasuredTable, SchemeKind, SchemeSpec};
use crate::keyrate::ProtocolParams;
use crate::model::{LinkParams, Objective};
use crate::montecarlo::SessionOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(rename = "L")]
    pub packet_len: u32,
    pub mu: f64,
    pub v_th: Option<u32>,
    #[serde(rename = "f")]
    pub ec_efficiency: f64,
    #[serde(rename = "s")]
    pub security_exponent: u32,
    #[serde(rename = "N_em")]
    pub emitted_packets: u64,

    pub alpha: f64,
    pub length_km: f64,
    #[serde(rename = "alpha_IL")]
    pub alpha_il: f64,
    #[serde(rename = "eta_D")]
    pub eta_d: f64,
    pub d: f64,
    pub e_s: f64,

    pub lengths_km: Vec<f64>,
    pub objective: Objective,

    pub packets: u64,
    pub seed: u64,
    pub workers: usize,

    pub scheme: SchemeKind,
    pub switch_loss_pass_db: Option<f64>,
    pub unit_loss_db: Option<f64>,
    pub splitter_loss_db: Option<f64>,
    pub base_loss_db: Option<f64>,
    pub tolerance_db: f64,

    pub il_table: Option<PathBuf>,
    pub visibility_extension: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let protocol = ProtocolParams::default();
        let link = LinkParams::default();
        RunConfig {
            packet_len: protocol.packet_len,
            mu: protocol.mu,
            v_th: protocol.v_th,
            ec_efficiency: protocol.ec_efficiency,
            security_exponent: protocol.security_exponent,
            emitted_packets: protocol.emitted_packets,
            alpha: link.alpha_db_per_km,
            length_km: link.length_km,
            alpha_il: link.alpha_il_db,
            eta_d: link.eta_d,
            d: link.dark_count,
            e_s: link.e_s,
            lengths_km: vec![20.0, 50.0, 70.0, 80.0, 85.0, 90.0],
            objective: Objective::Asymptotic,
            packets: 1_000_000,
            seed: 1,
            workers: 0,
            scheme: SchemeKind::FaradayMichelson,
            switch_loss_pass_db: None,
            unit_loss_db: None,
            splitter_loss_db: None,
            base_loss_db: None,
            tolerance_db: 0.0,
            il_table: None,
            visibility_extension: false,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_json_slice(text.as_bytes())
    }

    pub fn from_json_slice(bytes: &[u8]) -> Result<Self> {
        // A flat config never has a "config" key, so its presence marks a
        // wrapped document whose other members are ignored.
        let mut value: serde_json::Value = serde_json::from_slice(bytes)?;
        if let Some(inner) = value.get_mut("config") {
            value = inner.take();
        }
        if !value.is_object() {
            return Err(Error::Config("expected a JSON object".into()));
        }
        serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_json_slice(&bytes)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn to_json_compact(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn protocol(&self) -> ProtocolParams {
        ProtocolParams {
            packet_len: self.packet_len,
            mu: self.mu,
            v_th: self.v_th,
            ec_efficiency: self.ec_efficiency,
            security_exponent: self.security_exponent,
            emitted_packets: self.emitted_packets,
        }
    }

    pub fn link(&self) -> LinkParams {
        LinkParams {
            alpha_db_per_km: self.alpha,
            length_km: self.length_km,
            alpha_il_db: self.alpha_il,
            eta_d: self.eta_d,
            dark_count: self.d,
            e_s: self.e_s,
        }
    }

    pub fn scheme_spec(&self) -> SchemeSpec {
        let base = SchemeSpec::new(self.scheme, self.packet_len);
        SchemeSpec {
            switch_loss_pass_db: self.switch_loss_pass_db.unwrap_or(base.switch_loss_pass_db),
            unit_loss_db: self.unit_loss_db.unwrap_or(base.unit_loss_db),
            splitter_loss_db: self.splitter_loss_db.unwrap_or(base.splitter_loss_db),
            base_loss_db: self.base_loss_db.unwrap_or(base.base_loss_db),
            tolerance_db: self.tolerance_db,
            ..base
        }
    }

    /// Link for the analytic model. A measured table replaces the
    /// interferometer loss by its mean and, when it carries one, e_s by its
    /// mean.
    pub fn analytic_link(&self, table: Option<&MeasuredTable>) -> LinkParams {
        let mut link = self.link();
        if let Some(table) = table {
            link.alpha_il_db = table.mean_total_il_db();
            if let Some(e_s) = table.mean_e_s() {
                link.e_s = e_s;
            }
        }
        link
    }

    /// Load the measured table named by `il_table`, if any.
    pub fn load_table(&self) -> Result<Option<MeasuredTable>> {
        self.il_table
            .as_ref()
            .map(|p| MeasuredTable::load(p, self.packet_len))
            .transpose()
    }

    /// Session options without a measured table; callers attach one if
    /// `il_table` is set.
    pub fn session_options(&self) -> SessionOptions {
        SessionOptions {
            packets: self.packets,
            seed: self.seed,
            workers: self.workers,
            keep_records: false,
            table: None,
            visibility: self.visibility_extension,
        }
    }

    /// Check every field against the ranges the analysis and simulation need.
    pub fn validate(&self) -> Result<()> {
        self.protocol().validate()?;
        self.link().validate()?;
        if let Some(bad) = self.lengths_km.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
            return Err(Error::invalid(
                "lengths_km",
                format!("must be finite and >= 0, got {bad}"),
            ));
        }
        if self.lengths_km.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("lengths_km", "must be sorted ascending"));
        }
        if self.packets == 0 {
            return Err(Error::invalid("packets", "must be >= 1"));
        }
        for (field, v) in [
            ("switch_loss_pass_db", self.switch_loss_pass_db),
            ("unit_loss_db", self.unit_loss_db),
            ("splitter_loss_db", self.splitter_loss_db),
            ("base_loss_db", self.base_loss_db),
            ("tolerance_db", Some(self.tolerance_db)),
        ] {
            if let Some(v) = v {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::invalid(field, format!("must be finite and >= 0, got {v}")));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_reference_operating_point() {
        let c = RunConfig::default();
        assert_eq!(c.packet_len, 65);
        assert_eq!(
            (c.alpha, c.alpha_il, c.eta_d, c.d, c.e_s),
            (0.2, 5.60, 0.203, 2.1e-6, 0.022)
        );
        assert_eq!(
            (c.ec_efficiency, c.security_exponent, c.emitted_packets),
            (1.1, 80, 200_000_000)
        );
        c.validate().unwrap();
    }

    #[test]
    fn partial_document_fills_defaults() {
        let c = RunConfig::from_json(r#"{"length_km": 90, "mu": 0.04}"#).unwrap();
        assert_eq!(c.length_km, 90.0);
        assert_eq!(c.packet_len, 65);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = RunConfig::from_json(r#"{"lenght_km": 90}"#).unwrap_err();
        assert!(err.to_string().contains("lenght_km"), "{err}");
    }

    #[test]
    fn round_trip_is_identity() {
        let c = RunConfig {
            mu: 0.045,
            v_th: Some(9),
            lengths_km: vec![0.0, 12.5, 99.0],
            il_table: Some("lab/table.csv".into()),
            switch_loss_pass_db: Some(0.55),
            scheme: SchemeKind::SimpleActive,
            objective: Objective::Finite,
            ..RunConfig::default()
        };
        let again = RunConfig::from_json(&c.to_json_pretty()).unwrap();
        assert_eq!(c, again);
        assert_eq!(again.to_json_pretty(), c.to_json_pretty());
    }

    #[test]
    fn wrapped_document_is_accepted() {
        let c = RunConfig {
            length_km: 33.0,
            ..RunConfig::default()
        };
        let doc = format!(r#"{{"config": {}, "report": {{"R": 0.1}}}}"#, c.to_json_compact());
        assert_eq!(RunConfig::from_json(&doc).unwrap(), c);
    }

    #[test]
    fn validation_names_the_field() {
        let c = RunConfig {
            e_s: 0.9,
            ..RunConfig::default()
        };
        assert!(c.validate().unwrap_err().to_string().contains("e_s"));
        let c = RunConfig {
            lengths_km: vec![50.0, 20.0],
            ..RunConfig::default()
        };
        assert!(c.validate().unwrap_err().to_string().contains("lengths_km"));
        let c = RunConfig {
            packets: 0,
            ..RunConfig::default()
        };
        assert!(c.validate().unwrap_err().to_string().contains("packets"));
    }

    #[test]
    fn malformed_json_is_an_error() {
        assert!(RunConfig::from_json("{").is_err());
        assert!(RunConfig::from_json("[]").is_err());
        assert!(RunConfig::from_json(r#"{"L": -3}"#).is_err());
        assert!(RunConfig::from_json(r#"{"scheme": "mirror"}"#).is_err());
    }
}
