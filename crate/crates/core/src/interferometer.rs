//! Variable-delay interferometer schemes: delay decomposition, per-delay arm
//! losses, component counts and scaling to longer packets.
//!
//! Loss defaults are calibrated, not measured: a 1×2 switch pass costs
//! 0.6 dB and the remaining fixed losses of the Faraday-Michelson layout
//! (beam splitter, circulator, splices) are lumped into a 2.0 dB base so the
//! default layout averages 5.60 dB. Measured per-delay data enters through
//! [`MeasuredTable`].

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default per-pass loss of one 1×2 switch element, dB.
pub const SWITCH_LOSS_PASS_DB: f64 = 0.6;
/// Default bar-state loss of one 2×2 switch unit, dB. Cross state costs twice this.
pub const UNIT_LOSS_DB: f64 = 0.8;
/// Default lumped fixed loss of the switched layouts, dB.
pub const BASE_LOSS_DB: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKind {
    /// 1×(L-1) splitter feeding L-1 fixed-delay interferometers.
    Passive,
    /// Mach-Zehnder arms built from binary-weighted 2×2 switch units.
    SimpleActive,
    /// Mach-Zehnder arms with a 1×m switch on each side of the delay bank.
    BalancedActive,
    /// Michelson arms with one 1×m switch and Faraday mirrors per arm.
    #[serde(alias = "fmi")]
    FaradayMichelson,
}

impl SchemeKind {
    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Passive => "passive",
            SchemeKind::SimpleActive => "simple-active",
            SchemeKind::BalancedActive => "balanced-active",
            SchemeKind::FaradayMichelson => "faraday-michelson",
        }
    }
}

impl std::str::FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "passive" => Ok(SchemeKind::Passive),
            "simple-active" => Ok(SchemeKind::SimpleActive),
            "balanced-active" => Ok(SchemeKind::BalancedActive),
            "faraday-michelson" | "fmi" => Ok(SchemeKind::FaradayMichelson),
            other => Err(Error::invalid("scheme", format!("unknown scheme {other:?}"))),
        }
    }
}

/// A scheme together with its component losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeSpec {
    pub kind: SchemeKind,
    pub packet_len: u32,
    /// Per-pass loss of a 1×2 switch element.
    pub switch_loss_pass_db: f64,
    /// Bar-state loss of a 2×2 unit (simple-active only).
    pub unit_loss_db: f64,
    pub splitter_loss_db: f64,
    pub base_loss_db: f64,
    /// Per-component ± tolerance, used only for spread bounds.
    pub tolerance_db: f64,
}

impl SchemeSpec {
    pub fn new(kind: SchemeKind, packet_len: u32) -> Self {
        let (splitter_loss_db, base_loss_db) = match kind {
            SchemeKind::Passive => (10.0 * f64::from(packet_len.saturating_sub(1).max(1)).log10(), 0.0),
            SchemeKind::SimpleActive => (0.0, 0.0),
            SchemeKind::BalancedActive | SchemeKind::FaradayMichelson => (0.0, BASE_LOSS_DB),
        };
        SchemeSpec {
            kind,
            packet_len,
            switch_loss_pass_db: SWITCH_LOSS_PASS_DB,
            unit_loss_db: UNIT_LOSS_DB,
            splitter_loss_db,
            base_loss_db,
            tolerance_db: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("switch_loss_pass_db", self.switch_loss_pass_db),
            ("unit_loss_db", self.unit_loss_db),
            ("splitter_loss_db", self.splitter_loss_db),
            ("base_loss_db", self.base_loss_db),
            ("tolerance_db", self.tolerance_db),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(field, format!("must be finite and >= 0, got {v}")));
            }
        }
        if self.packet_len < 2 {
            return Err(Error::invalid("L", format!("must be >= 2, got {}", self.packet_len)));
        }
        if self.kind != SchemeKind::Passive {
            arm_size(self.packet_len)?;
        }
        Ok(())
    }

    /// Switch stages traversed per arm, log2(m).
    fn stages(&self) -> Result<u32> {
        Ok(arm_size(self.packet_len)?.trailing_zeros())
    }
}

/// Arm size m with L - 1 = m², m a power of two.
pub fn arm_size(packet_len: u32) -> Result<u32> {
    let delays = packet_len.saturating_sub(1);
    let m = f64::from(delays).sqrt().round() as u32;
    if m < 2 || m * m != delays || !m.is_power_of_two() {
        return Err(Error::IncompatibleScheme {
            new_len: packet_len,
            reason: "L - 1 must be the square of a power of two (e.g. 65, 257, 1025)".into(),
        });
    }
    Ok(m)
}

/// Split delay `r` into long-arm delay `x` (a multiple of `m`) and short-arm
/// delay `y < m` with `x - y = r`.
pub fn decompose_delay(r: u32, m: u32) -> Result<(u32, u32)> {
    if m == 0 || r < 1 || r > m.saturating_mul(m) {
        return Err(Error::DelayOutOfRange {
            r,
            max: m.saturating_mul(m),
        });
    }
    let x = m * r.div_ceil(m);
    Ok((x, x - r))
}

/// Loss budget for one delay setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayLossEntry {
    pub r: u32,
    pub x: u32,
    pub y: u32,
    pub long_il_db: f64,
    pub short_il_db: f64,
    pub total_il_db: f64,
    pub imbalance_db: f64,
}

/// Loss of an interferometer whose arms carry equal power before loss.
pub fn combine_arms_db(long_db: f64, short_db: f64) -> f64 {
    let mean = 0.5 * (10f64.powf(-long_db / 10.0) + 10f64.powf(-short_db / 10.0));
    -10.0 * mean.log10()
}

/// Fringe visibility of two beams with the given losses.
pub fn visibility(long_db: f64, short_db: f64) -> f64 {
    let (a, b) = (10f64.powf(-long_db / 10.0), 10f64.powf(-short_db / 10.0));
    2.0 * (a * b).sqrt() / (a + b)
}

/// Extra error probability (1 - V)/2 from arm imbalance.
///
/// Not part of the baseline model; callers opt in.
pub fn visibility_error(long_db: f64, short_db: f64) -> f64 {
    0.5 * (1.0 - visibility(long_db, short_db))
}

/// Per-delay arm losses for every r in 1..L-1.
pub fn scheme_loss_table(spec: &SchemeSpec) -> Result<Vec<DelayLossEntry>> {
    spec.validate()?;
    let delays = spec.packet_len - 1;
    let fixed = spec.splitter_loss_db + spec.base_loss_db;
    let entry = |r: u32, x: u32, y: u32, long: f64, short: f64| DelayLossEntry {
        r,
        x,
        y,
        long_il_db: long,
        short_il_db: short,
        total_il_db: combine_arms_db(long, short) + fixed,
        imbalance_db: (long - short).abs(),
    };

    if spec.kind == SchemeKind::Passive {
        return Ok((1..=delays).map(|r| entry(r, r, 0, 0.0, 0.0)).collect());
    }

    let m = arm_size(spec.packet_len)?;
    let stages = f64::from(spec.stages()?);
    (1..=delays)
        .map(|r| {
            let (x, y) = decompose_delay(r, m)?;
            let (long, short) = match spec.kind {
                SchemeKind::SimpleActive => {
                    // Unit losses: bar = u, cross = 2u, so an arm costs u·(units + crossed).
                    let u = spec.unit_loss_db;
                    let long_cross = f64::from(((x - m) / m).count_ones());
                    let short_cross = f64::from(y.count_ones());
                    (u * (stages + long_cross), u * (stages + short_cross))
                }
                // Two 1×m switches per arm, one pass each; or one switch
                // traversed twice via the mirror. Same stage count either way.
                SchemeKind::BalancedActive | SchemeKind::FaradayMichelson => {
                    let arm = 2.0 * stages * spec.switch_loss_pass_db;
                    (arm, arm)
                }
                SchemeKind::Passive => unreachable!(),
            };
            Ok(entry(r, x, y, long, short))
        })
        .collect()
}

/// Structural and loss summary of a scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeReport {
    pub kind: SchemeKind,
    pub packet_len: u32,
    pub detector_channels: u32,
    /// Routing switches: 2×2 units for simple-active, 1×m switches otherwise.
    pub switches: u32,
    /// Elementary 1×2 (or 2×2) switch elements.
    pub switch_elements: u32,
    /// Separate fiber delays (or whole interferometers for passive).
    pub delay_lines: u32,
    pub mean_il_db: f64,
    pub min_il_db: f64,
    pub max_il_db: f64,
    pub max_imbalance_db: f64,
    /// Worst-case deviation of total IL implied by `tolerance_db`.
    pub il_spread_bound_db: f64,
    /// Worst-case imbalance implied by `tolerance_db`.
    pub imbalance_bound_db: f64,
}

pub fn scheme_report(spec: &SchemeSpec) -> Result<SchemeReport> {
    let table = scheme_loss_table(spec)?;
    let delays = spec.packet_len - 1;
    // (detectors, switches, elements, delay lines, lossy passes per arm path)
    let (detector_channels, switches, switch_elements, delay_lines, passes) = match spec.kind {
        SchemeKind::Passive => (2 * delays, 0, 0, delays, 1),
        _ => {
            let m = arm_size(spec.packet_len)?;
            let stages = spec.stages()?;
            match spec.kind {
                SchemeKind::SimpleActive => (2, 2 * stages, 2 * stages, 2 * stages, stages),
                SchemeKind::BalancedActive => (2, 4, 4 * (m - 1), 2 * m, 2 * stages),
                _ => (2, 2, 2 * (m - 1), 2 * m, 2 * stages),
            }
        }
    };
    let n = table.len() as f64;
    let mean_il_db = table.iter().map(|e| e.total_il_db).sum::<f64>() / n;
    let fold =
        |init: f64, pick: fn(f64, f64) -> f64, key: fn(&DelayLossEntry) -> f64| table.iter().map(key).fold(init, pick);
    let spread = f64::from(passes) * spec.tolerance_db;
    Ok(SchemeReport {
        kind: spec.kind,
        packet_len: spec.packet_len,
        detector_channels,
        switches,
        switch_elements,
        delay_lines,
        mean_il_db,
        min_il_db: fold(f64::INFINITY, f64::min, |e| e.total_il_db),
        max_il_db: fold(f64::NEG_INFINITY, f64::max, |e| e.total_il_db),
        max_imbalance_db: fold(0.0, f64::max, |e| e.imbalance_db),
        il_spread_bound_db: spread,
        imbalance_bound_db: 2.0 * spread,
    })
}

impl SchemeReport {
    /// Replace the modelled loss figures with those of measured entries,
    /// keeping the structural counts.
    pub fn with_measured(mut self, entries: &[DelayLossEntry]) -> Self {
        if entries.is_empty() {
            return self;
        }
        let totals = entries.iter().map(|e| e.total_il_db);
        self.mean_il_db = totals.clone().sum::<f64>() / entries.len() as f64;
        self.min_il_db = totals.clone().fold(f64::INFINITY, f64::min);
        self.max_il_db = totals.fold(f64::NEG_INFINITY, f64::max);
        self.max_imbalance_db = entries.iter().map(|e| e.imbalance_db).fold(0.0, f64::max);
        self
    }
}

/// Change in mean interferometer loss when the packet length becomes `new_len`.
pub fn scalability_delta(spec: &SchemeSpec, new_len: u32) -> Result<f64> {
    spec.validate()?;
    if new_len < 2 {
        return Err(Error::IncompatibleScheme {
            new_len,
            reason: "L must be >= 2".into(),
        });
    }
    if new_len == spec.packet_len {
        return Ok(0.0);
    }
    match spec.kind {
        SchemeKind::Passive => {
            let old = f64::from(spec.packet_len - 1);
            Ok(10.0 * (f64::from(new_len - 1) / old).log10())
        }
        SchemeKind::BalancedActive | SchemeKind::FaradayMichelson => {
            let added = f64::from(arm_size(new_len)?.trailing_zeros()) - f64::from(spec.stages()?);
            Ok(added * 2.0 * spec.switch_loss_pass_db)
        }
        SchemeKind::SimpleActive => {
            arm_size(new_len)?;
            let resized = SchemeSpec {
                packet_len: new_len,
                ..spec.clone()
            };
            Ok(scheme_report(&resized)?.mean_il_db - scheme_report(spec)?.mean_il_db)
        }
    }
}

/// One row of a measured per-delay table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasuredRow {
    pub r: u32,
    #[serde(rename = "long_IL_dB")]
    pub long_il_db: f64,
    #[serde(rename = "short_IL_dB")]
    pub short_il_db: f64,
    #[serde(default)]
    pub e_s: Option<f64>,
}

/// Lab-measured arm losses (and optionally wrong-detector probabilities) for
/// every delay 1..L-1, indexed by delay.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasuredTable {
    rows: Vec<MeasuredRow>,
}

impl MeasuredTable {
    /// Parse CSV with header `r,long_IL_dB,short_IL_dB[,e_s]`. Lines starting
    /// with `#` are comments.
    pub fn parse(data: &[u8], packet_len: u32) -> Result<Self> {
        Self::from_reader(data, packet_len)
    }

    pub fn load(path: impl AsRef<Path>, packet_len: u32) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_reader(file, packet_len)
    }

    pub fn from_reader<R: Read>(reader: R, packet_len: u32) -> Result<Self> {
        if packet_len < 2 {
            return Err(Error::invalid("L", format!("must be >= 2, got {packet_len}")));
        }
        let mut csv = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = csv.headers().map_err(table_error)?.clone();
        for required in ["r", "long_IL_dB", "short_IL_dB"] {
            if !headers.iter().any(|h| h == required) {
                return Err(Error::MeasuredTable {
                    line: 1,
                    reason: format!("missing column {required}"),
                });
            }
        }

        let delays = packet_len - 1;
        let mut rows = BTreeMap::new();
        let mut with_e_s = 0usize;
        for record in csv.deserialize::<MeasuredRow>() {
            let row = record.map_err(table_error)?;
            let line = rows.len() as u64 + 2;
            let fail = |reason: String| Err(Error::MeasuredTable { line, reason });
            if row.r < 1 || row.r > delays {
                return fail(format!("delay {} outside 1..={delays}", row.r));
            }
            for (name, v) in [("long_IL_dB", row.long_il_db), ("short_IL_dB", row.short_il_db)] {
                if !(v.is_finite() && v >= 0.0) {
                    return fail(format!("{name} must be finite and >= 0, got {v}"));
                }
            }
            if let Some(e) = row.e_s {
                if !(0.0..=0.5).contains(&e) {
                    return fail(format!("e_s must be in [0, 0.5], got {e}"));
                }
                with_e_s += 1;
            }
            let r = row.r;
            if rows.insert(r, row).is_some() {
                return fail(format!("duplicate delay {r}"));
            }
        }
        if rows.len() != delays as usize {
            let missing: Vec<u32> = (1..=delays).filter(|r| !rows.contains_key(r)).take(5).collect();
            return Err(Error::MeasuredTable {
                line: rows.len() as u64 + 1,
                reason: format!("delays missing from table, first: {missing:?}"),
            });
        }
        if with_e_s != 0 && with_e_s != rows.len() {
            return Err(Error::MeasuredTable {
                line: 1,
                reason: "e_s must be given for every delay or for none".into(),
            });
        }
        Ok(MeasuredTable {
            rows: rows.into_values().collect(),
        })
    }

    pub fn packet_len(&self) -> u32 {
        self.rows.len() as u32 + 1
    }

    pub fn rows(&self) -> &[MeasuredRow] {
        &self.rows
    }

    pub fn row(&self, r: u32) -> Option<&MeasuredRow> {
        r.checked_sub(1).and_then(|i| self.rows.get(i as usize))
    }

    pub fn total_il_db(&self, r: u32) -> Option<f64> {
        self.row(r).map(|row| combine_arms_db(row.long_il_db, row.short_il_db))
    }

    pub fn has_e_s(&self) -> bool {
        self.rows.first().is_some_and(|row| row.e_s.is_some())
    }

    pub fn mean_total_il_db(&self) -> f64 {
        let n = self.rows.len() as f64;
        self.rows
            .iter()
            .map(|row| combine_arms_db(row.long_il_db, row.short_il_db))
            .sum::<f64>()
            / n
    }

    pub fn mean_e_s(&self) -> Option<f64> {
        if !self.has_e_s() {
            return None;
        }
        let n = self.rows.len() as f64;
        Some(self.rows.iter().filter_map(|row| row.e_s).sum::<f64>() / n)
    }

    /// Loss entries in the same shape as [`scheme_loss_table`].
    pub fn loss_entries(&self) -> Result<Vec<DelayLossEntry>> {
        let m = arm_size(self.packet_len()).ok();
        self.rows
            .iter()
            .map(|row| {
                let (x, y) = match m {
                    Some(m) => decompose_delay(row.r, m)?,
                    None => (row.r, 0),
                };
                Ok(DelayLossEntry {
                    r: row.r,
                    x,
                    y,
                    long_il_db: row.long_il_db,
                    short_il_db: row.short_il_db,
                    total_il_db: combine_arms_db(row.long_il_db, row.short_il_db),
                    imbalance_db: (row.long_il_db - row.short_il_db).abs(),
                })
            })
            .collect()
    }
}

fn table_error(err: csv::Error) -> Error {
    let line = err.position().map_or(0, |p| p.line());
    Error::MeasuredTable {
        line,
        reason: err.to_string(),
    }
}
