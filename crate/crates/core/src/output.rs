//! Plot-ready CSV renderings. Every file opens with `#` comment lines that
//! carry the tool version, the full configuration and the seed, so a file is
//! reproducible from its own header.

use std::fmt::Write;

use crate::config::RunConfig;
use crate::interferometer::{DelayLossEntry, SchemeReport};
use crate::keyrate::RateReport;
use crate::montecarlo::SessionRun;
use crate::optimize::{MaxDistance, SweepPoint};

pub const TOOL_VERSION: &str = concat!("rrdps ", env!("CARGO_PKG_VERSION"));

/// Columns of the sweep and rate tables.
pub const SWEEP_COLUMNS: &str = "length_km,mu_opt,v_th,eta,Q,e_b,e_src,R,R_per_pulse,R_ft";

/// Shortest round-trip decimal, switching to exponent form for very large or
/// small magnitudes.
pub fn fmt_num(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-4..1e6).contains(&a) || !v.is_finite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn header(config: &RunConfig) -> String {
    format!(
        "# {TOOL_VERSION}\n# config: {}\n# seed: {}\n",
        config.to_json_compact(),
        config.seed
    )
}

fn report_row(length_km: f64, mu: f64, r: &RateReport) -> String {
    [
        fmt_num(length_km),
        fmt_num(mu),
        r.v_th_used.to_string(),
        fmt_num(r.eta),
        fmt_num(r.q),
        fmt_num(r.e_b),
        fmt_num(r.e_src),
        fmt_num(r.rate),
        fmt_num(r.rate_per_pulse),
        fmt_num(r.rate_finite),
    ]
    .join(",")
}

pub fn sweep_csv(config: &RunConfig, points: &[SweepPoint]) -> String {
    let mut out = header(config);
    out.push_str(SWEEP_COLUMNS);
    out.push('\n');
    for p in points {
        out.push_str(&report_row(p.length_km, p.mu_opt, &p.report));
        out.push('\n');
    }
    out
}

/// Single operating point, with the finite-key intermediates appended.
pub fn rate_csv(config: &RunConfig, report: &RateReport) -> String {
    let mut out = header(config);
    let _ = writeln!(out, "{SWEEP_COLUMNS},N,p1,p2,r1,r2");
    let _ = writeln!(
        out,
        "{},{},{},{},{},{}",
        report_row(config.length_km, config.mu, report),
        report.sifted_len,
        fmt_num(report.p1),
        fmt_num(report.p2),
        fmt_num(report.r1),
        fmt_num(report.r2)
    );
    out
}

pub fn max_distance_csv(config: &RunConfig, result: &MaxDistance) -> String {
    let mut out = header(config);
    out.push_str("max_length_km,at_search_limit\n");
    let _ = writeln!(out, "{},{}", fmt_num(result.length_km), result.at_limit);
    out
}

/// Session summary next to the analytic prediction at the same operating
/// point. `z` columns are deviations in binomial standard errors.
pub fn session_csv(config: &RunConfig, run: &SessionRun, analytic: Option<&RateReport>) -> String {
    let s = &run.stats;
    let mut out = header(config);
    out.push_str(
        "seed,N_em,N,Q_hat,e_b_hat,mismatches,dark_events,Q,e_b,Q_z,e_b_z,v_th,R_hat,R_ft_hat,alice_sha256,bob_sha256\n",
    );
    let opt = |v: Option<f64>| v.map(fmt_num).unwrap_or_default();
    let (q, e_b, q_z, e_b_z) = match analytic {
        Some(a) => {
            let q_sigma = (a.q * (1.0 - a.q) / s.emitted_packets as f64).sqrt();
            let e_b_z = s.e_b_hat.map(|hat| {
                let sigma = (a.e_b * (1.0 - a.e_b) / s.sifted_len as f64).sqrt();
                (hat - a.e_b) / sigma
            });
            (Some(a.q), Some(a.e_b), Some((s.q_hat - a.q) / q_sigma), e_b_z)
        }
        None => (None, None, None, None),
    };
    let rates = run.rates.as_ref();
    let _ = writeln!(
        out,
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        s.seed,
        s.emitted_packets,
        s.sifted_len,
        fmt_num(s.q_hat),
        opt(s.e_b_hat),
        s.mismatches,
        s.dark_events,
        opt(q),
        opt(e_b),
        opt(q_z),
        opt(e_b_z),
        rates.map(|r| r.v_th.to_string()).unwrap_or_default(),
        opt(rates.map(|r| r.rate)),
        opt(rates.map(|r| r.rate_finite)),
        s.alice_digest,
        s.bob_digest,
    );
    out
}

/// Summary as `# summary.<field>,<value>` comments, then the per-delay table.
pub fn scheme_csv(config: &RunConfig, entries: &[DelayLossEntry], report: &SchemeReport) -> String {
    let mut out = header(config);
    let summary = [
        ("kind", report.kind.name().to_string()),
        ("packet_len", report.packet_len.to_string()),
        ("detector_channels", report.detector_channels.to_string()),
        ("switches", report.switches.to_string()),
        ("switch_elements", report.switch_elements.to_string()),
        ("delay_lines", report.delay_lines.to_string()),
        ("mean_il_db", fmt_num(report.mean_il_db)),
        ("min_il_db", fmt_num(report.min_il_db)),
        ("max_il_db", fmt_num(report.max_il_db)),
        ("max_imbalance_db", fmt_num(report.max_imbalance_db)),
        ("il_spread_bound_db", fmt_num(report.il_spread_bound_db)),
        ("imbalance_bound_db", fmt_num(report.imbalance_bound_db)),
    ];
    for (k, v) in summary {
        let _ = writeln!(out, "# summary.{k},{v}");
    }
    out.push_str("r,x,y,long_IL_dB,short_IL_dB,total_IL_dB,imbalance_dB\n");
    for e in entries {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            e.r,
            e.x,
            e.y,
            fmt_num(e.long_il_db),
            fmt_num(e.short_il_db),
            fmt_num(e.total_il_db),
            fmt_num(e.imbalance_db)
        );
    }
    out
}
