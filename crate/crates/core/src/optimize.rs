//! Rate maximization over the mean photon number, distance sweeps and the
//! maximum-distance search.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::keyrate::{ProtocolParams, RateReport};
use crate::model::{self, LinkParams, Objective};

/// Lower end of the μ search grid.
pub const MU_MIN: f64 = 1e-4;
/// Upper end of the μ search grid.
pub const MU_MAX: f64 = 0.5;
/// Number of log-spaced grid points scanned before refinement.
pub const MU_GRID_POINTS: usize = 241;
/// Relative width at which golden-section refinement stops.
pub const MU_REL_TOL: f64 = 1e-3;

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Maximize a function on `[lo, hi]` by golden-section search.
///
/// Stops once the bracket is narrower than `rel_tol` times its midpoint.
/// Returns the best abscissa seen and its value.
pub fn golden_section_max<F>(mut f: F, lo: f64, hi: f64, rel_tol: f64) -> (f64, f64)
where
    F: FnMut(f64) -> f64,
{
    let (mut a, mut b) = (lo.min(hi), lo.max(hi));
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut best = if fd > fc { (d, fd) } else { (c, fc) };
    for _ in 0..200 {
        if b - a <= rel_tol * 0.5 * (a + b).abs() {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
            if fc > best.1 {
                best = (c, fc);
            }
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
            if fd > best.1 {
                best = (d, fd);
            }
        }
    }
    best
}

/// Log-spaced μ grid from [`MU_MIN`] to [`MU_MAX`].
pub fn mu_grid() -> Vec<f64> {
    let (lo, hi) = (MU_MIN.ln(), MU_MAX.ln());
    let steps = (MU_GRID_POINTS - 1) as f64;
    (0..MU_GRID_POINTS)
        .map(|i| (lo + (hi - lo) * i as f64 / steps).exp())
        .collect()
}

/// Outcome of [`optimize_mu`].
#[derive(Debug, Clone, PartialEq)]
pub struct MuOptimum {
    /// Optimal mean photon number; 0 when no μ yields key.
    pub mu: f64,
    pub report: RateReport,
}

impl MuOptimum {
    pub fn has_key(&self) -> bool {
        self.mu > 0.0
    }
}

fn objective_value(report: &RateReport, objective: Objective) -> f64 {
    match objective {
        Objective::Asymptotic => report.rate,
        Objective::Finite => report.rate_finite,
    }
}

/// Maximize the chosen rate over μ at one fiber length.
///
/// Scans [`mu_grid`], then refines by golden section between the neighbours of
/// the best grid point. v_th is re-optimized at every μ unless the protocol
/// fixes it.
pub fn optimize_mu(
    protocol: &ProtocolParams,
    link: &LinkParams,
    length_km: f64,
    objective: Objective,
) -> Result<MuOptimum> {
    let link = link.at_length(length_km);
    protocol.validate()?;
    link.validate()?;
    let eta = model::overall_efficiency(&link);

    let evaluate = |mu: f64| -> Result<RateReport> {
        let at_mu = ProtocolParams { mu, ..protocol.clone() };
        model::report_from_efficiency(&at_mu, &link, eta, objective)
    };

    let grid = mu_grid();
    let mut values = Vec::with_capacity(grid.len());
    for &mu in &grid {
        // A link with no clicks at all has no defined error rate and no key.
        let value = match evaluate(mu) {
            Ok(report) => objective_value(&report, objective),
            Err(Error::UndefinedErrorRate) => 0.0,
            Err(e) => return Err(e),
        };
        values.push(value);
    }
    let (best_idx, best_val) =
        values.iter().copied().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |acc, (i, v)| if v > acc.1 { (i, v) } else { acc },
        );

    if best_val <= 0.0 {
        return Ok(MuOptimum {
            mu: 0.0,
            report: no_key_report(protocol, &link, eta)?,
        });
    }

    let lo = grid[best_idx.saturating_sub(1)];
    let hi = grid[(best_idx + 1).min(grid.len() - 1)];
    // Evaluation errors cannot occur inside the bracket: the same inputs
    // already evaluated cleanly on the grid.
    let (refined_mu, refined_val) = golden_section_max(
        |mu| evaluate(mu).map_or(f64::NEG_INFINITY, |r| objective_value(&r, objective)),
        lo,
        hi,
        MU_REL_TOL,
    );
    let mu = if refined_val >= best_val {
        refined_mu
    } else {
        grid[best_idx]
    };
    Ok(MuOptimum {
        mu,
        report: evaluate(mu)?,
    })
}

/// Report for a link where no μ yields key, evaluated at μ = 0.
fn no_key_report(protocol: &ProtocolParams, link: &LinkParams, eta: f64) -> Result<RateReport> {
    let at_zero = ProtocolParams {
        mu: 0.0,
        ..protocol.clone()
    };
    match model::report_from_efficiency(&at_zero, link, eta, Objective::Asymptotic) {
        // Dark-free and photon-free: nothing ever clicks, so the error rate is
        // reported as the no-information value.
        Err(Error::UndefinedErrorRate) => {
            let p2 = 1.0 / f64::from(protocol.packet_len - 1);
            Ok(RateReport {
                eta,
                q: 0.0,
                e_b: 0.5,
                e_src: 0.0,
                v_th_used: 1,
                rate: 0.0,
                rate_per_pulse: 0.0,
                rate_finite: 0.0,
                p1: 1.0,
                p2,
                r1: 1.0,
                r2: p2,
                sifted_len: 0,
                finite_note: Some("no clicks possible".into()),
            })
        }
        other => other,
    }
}

/// One row of a distance sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub length_km: f64,
    pub mu_opt: f64,
    pub report: RateReport,
}

/// Optimize μ independently at each length. Output order follows `lengths`.
pub fn distance_sweep(
    protocol: &ProtocolParams,
    link: &LinkParams,
    lengths: &[f64],
    objective: Objective,
) -> Result<Vec<SweepPoint>> {
    if let Some(bad) = lengths.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
        return Err(Error::invalid(
            "lengths_km",
            format!("lengths must be finite and >= 0, got {bad}"),
        ));
    }
    if lengths.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("lengths_km", "lengths must be sorted ascending"));
    }
    lengths
        .par_iter()
        .map(|&length_km| {
            optimize_mu(protocol, link, length_km, objective).map(|opt| SweepPoint {
                length_km,
                mu_opt: opt.mu,
                report: opt.report,
            })
        })
        .collect()
}

/// Settings of the maximum-distance search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceSearch {
    /// Absolute bisection tolerance, km.
    pub tolerance_km: f64,
    /// Search stops here; noiseless links never lose key.
    pub limit_km: f64,
    pub objective: Objective,
}

impl Default for DistanceSearch {
    fn default() -> Self {
        DistanceSearch {
            tolerance_km: 0.5,
            limit_km: 1000.0,
            objective: Objective::Asymptotic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MaxDistance {
    /// Largest length found with positive optimized rate.
    pub length_km: f64,
    /// True when key persisted up to the search limit.
    pub at_limit: bool,
}

/// Largest fiber length with positive optimized rate, by bisection.
pub fn max_distance(protocol: &ProtocolParams, link: &LinkParams, search: &DistanceSearch) -> Result<MaxDistance> {
    let has_key = |km: f64| -> Result<bool> { Ok(optimize_mu(protocol, link, km, search.objective)?.has_key()) };
    if !has_key(0.0)? {
        return Err(Error::NoKeyAtOrigin);
    }
    let mut lo = 0.0;
    let mut hi = 50.0_f64.min(search.limit_km);
    loop {
        if !has_key(hi)? {
            break;
        }
        lo = hi;
        if hi >= search.limit_km {
            return Ok(MaxDistance {
                length_km: hi,
                at_limit: true,
            });
        }
        hi = (hi * 2.0).min(search.limit_km);
    }
    while hi - lo > search.tolerance_km {
        let mid = 0.5 * (lo + hi);
        if has_key(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(MaxDistance {
        length_km: lo,
        at_limit: false,
    })
}
