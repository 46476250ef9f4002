//! Closed-form complexity predictions.
//!
//! Exact schemes (`ξ = 0`) get expected values; lazy schemes get upper bounds
//! built from the effective number of selected units `M̄` (or `Ḡ` for groups).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{group_data, Dataset};
use crate::engine::SchemeConfig;
use crate::error::{Error, Result};
use crate::gradient::optimality_gap;
use crate::timing::TimingModel;

/// `κ ln(ΔL⁰/ε)`, divided by `αL` for lazy schemes.
pub fn iteration_complexity(kappa: f64, initial_gap: f64, epsilon: f64, alpha_l: f64, lazy: bool) -> Result<f64> {
    if !(kappa >= 1.0 && kappa.is_finite()) {
        return Err(Error::domain(format!("condition number must be >= 1, got {kappa}")));
    }
    if !(epsilon > 0.0 && initial_gap > 0.0) {
        return Err(Error::domain("initial gap and epsilon must be positive"));
    }
    if epsilon > initial_gap {
        return Err(Error::domain(format!(
            "epsilon {epsilon:e} exceeds the initial gap {initial_gap:e}"
        )));
    }
    if !(alpha_l > 0.0 && alpha_l <= 1.0) {
        return Err(Error::domain(format!("need 0 < αL <= 1, got {alpha_l}")));
    }
    let exact = kappa * (initial_gap / epsilon).ln();
    Ok(if lazy { exact / alpha_l } else { exact })
}

/// Selection-frequency bucket of a unit with smoothness `l`: the smallest
/// `d` with `l² >= L̄²_{d+1}`, where `L̄²_d = ξ / (D d α² units²)` and
/// `L̄_{D+1} = 0`. Values on a threshold land in the lower bucket.
fn bucket(l: f64, xi: f64, alpha: f64, units: usize, depth: usize) -> usize {
    let base = xi / (depth as f64 * alpha * alpha * (units * units) as f64);
    (0..depth).find(|&d| l * l >= base / (d + 1) as f64).unwrap_or(depth)
}

fn effective_count(constants: &[f64], xi: f64, alpha: f64, units: usize, depth: usize) -> Result<f64> {
    if constants.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
        return Err(Error::domain("smoothness constants must be positive"));
    }
    if constants.is_empty() || units == 0 {
        return Err(Error::domain("need at least one unit"));
    }
    if xi == 0.0 {
        return Ok(units as f64);
    }
    if !(xi > 0.0 && alpha > 0.0 && depth > 0) {
        return Err(Error::domain("need xi >= 0, alpha > 0 and D >= 1"));
    }
    let weight: f64 = constants
        .iter()
        .map(|&l| 1.0 / (bucket(l, xi, alpha, units, depth) + 1) as f64)
        .sum();
    Ok(units as f64 * weight / constants.len() as f64)
}

/// `M̄ = M Σ_d h(d)/(d+1)` over per-worker smoothness constants.
pub fn m_bar(constants: &[f64], xi: f64, alpha: f64, workers: usize, depth: usize) -> Result<f64> {
    effective_count(constants, xi, alpha, workers, depth)
}

/// `Ḡ`, the group analogue of [`m_bar`].
pub fn g_bar(group_constants: &[f64], xi: f64, alpha: f64, groups: usize, depth: usize) -> Result<f64> {
    effective_count(group_constants, xi, alpha, groups, depth)
}

/// Predicted complexities for one scheme. For lazy schemes `I`, `T`, `C`
/// and `P` are upper bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub scheme: String,
    #[serde(rename = "I")]
    pub iterations: f64,
    #[serde(rename = "T")]
    pub time: f64,
    #[serde(rename = "C")]
    pub communication: f64,
    #[serde(rename = "P")]
    pub computation: f64,
    #[serde(rename = "is_bound_T")]
    pub is_bound_time: bool,
    #[serde(rename = "is_bound_C")]
    pub is_bound_communication: bool,
    #[serde(rename = "is_bound_P")]
    pub is_bound_computation: bool,
}

/// Expected maximum of `a` i.i.d. group times, preferring closed forms.
fn max_of_groups(timing: &TimingModel, r_g: usize, group_size: usize, wait_for: usize, a: usize) -> Result<f64> {
    if a == 0 {
        return Ok(0.0);
    }
    if group_size == 1 {
        timing.expected_order_stat(a, a, r_g)
    } else if a == 1 {
        timing.expected_order_stat(wait_for, group_size, r_g)
    } else {
        timing.expected_max_group_time(r_g, group_size, wait_for, a)
    }
}

/// [`max_of_groups`] at a fractional count, interpolated linearly.
fn max_of_groups_fractional(timing: &TimingModel, r_g: usize, group_size: usize, wait_for: usize, a: f64) -> Result<f64> {
    let lo = a.floor();
    let frac = a - lo;
    let at_lo = max_of_groups(timing, r_g, group_size, wait_for, lo as usize)?;
    if frac == 0.0 {
        return Ok(at_lo);
    }
    let at_hi = max_of_groups(timing, r_g, group_size, wait_for, lo as usize + 1)?;
    Ok(at_lo + frac * (at_hi - at_lo))
}

/// Expected duration of one iteration in which every group is selected.
pub fn exact_iteration_time(cfg: &SchemeConfig) -> Result<f64> {
    max_of_groups(&cfg.timing, cfg.group_redundancy(), cfg.group_size, cfg.wait_for, cfg.groups())
}

/// Complexity predictions from the scheme and the inputs a run would see.
///
/// `group_smoothness` holds `L_g` for each of the scheme's groups.
pub fn complexity_report(
    cfg: &SchemeConfig,
    kappa: f64,
    initial_gap: f64,
    smoothness: f64,
    group_smoothness: &[f64],
    epsilon: f64,
) -> Result<ComplexityReport> {
    cfg.validate()?;
    if group_smoothness.len() != cfg.groups() {
        return Err(Error::Dimension {
            expected: cfg.groups(),
            found: group_smoothness.len(),
        });
    }
    let lazy = cfg.is_lazy();
    let alpha_l = if lazy { cfg.step_size * smoothness } else { 1.0 };
    let iterations = iteration_complexity(kappa, initial_gap, epsilon, alpha_l, lazy)?;
    let (m, mg, f, r_g, g) = (cfg.workers, cfg.group_size, cfg.wait_for, cfg.group_redundancy(), cfg.groups());

    let (time, communication, computation) = if lazy {
        let gb = g_bar(group_smoothness, cfg.xi, cfg.step_size, g, cfg.history_depth)?;
        let per_iter = max_of_groups_fractional(&cfg.timing, r_g, mg, f, gb)?;
        (
            iterations * per_iter,
            (mg + f) as f64 * gb * iterations,
            (r_g * mg) as f64 * gb / m as f64 * iterations,
        )
    } else {
        (
            iterations * exact_iteration_time(cfg)?,
            (m + g * f) as f64 * iterations,
            r_g as f64 * iterations,
        )
    };
    if !time.is_finite() {
        return Err(Error::NonFinite("time complexity"));
    }
    Ok(ComplexityReport {
        scheme: cfg.label(),
        iterations,
        time,
        communication,
        computation,
        is_bound_time: lazy,
        is_bound_communication: lazy,
        is_bound_computation: lazy,
    })
}

/// [`complexity_report`] with constants measured from `dataset` and the
/// run starting at `θ⁰ = 0`.
pub fn dataset_complexity_report(cfg: &SchemeConfig, dataset: &Dataset, epsilon: f64) -> Result<ComplexityReport> {
    cfg.validate()?;
    let groups = group_data(dataset, cfg.groups(), cfg.group_size)?;
    let group_smoothness: Vec<f64> = groups.iter().map(|g| g.smoothness).collect();
    let initial_gap = optimality_gap(dataset, &nalgebra::DVector::zeros(dataset.dimension()))?;
    complexity_report(
        cfg,
        dataset.condition_number(),
        initial_gap,
        dataset.smoothness,
        &group_smoothness,
        epsilon,
    )
}

pub fn write_reports(path: &Path, reports: &[ComplexityReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in reports {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_reports(path: &Path) -> Result<Vec<ComplexityReport>> {
    let mut rdr = csv::Reader::from_path(path)?;
    Ok(rdr.deserialize().collect::<std::result::Result<Vec<_>, _>>()?)
}
