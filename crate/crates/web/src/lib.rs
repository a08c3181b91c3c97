//! Browser bindings for the interferometer simulator.
//!
//! Every export returns a JSON string; failures come back as
//! `{"error": "..."}` so the page never has to catch exceptions.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use mzi_ncoinc::analytic::{self, BeamSpec, DetectionWindow, FringeOrder, PhaseAngle};
use mzi_ncoinc::detector::{CoincidenceConfig, DetectorSpec};
use mzi_ncoinc::fringe::{analytic_width, compare_to_analytic, model_intensity, FringePattern, ValidationTolerance};
use mzi_ncoinc::io::parse_topology;
use mzi_ncoinc::runner::{predict_scan, run_scan, ScanConfig, Topology};

/// Photons a single demo scan may generate; keeps the page responsive.
pub const EVENT_BUDGET: f64 = 2.0e8;

fn respond(r: Result<Value, String>) -> String {
    match r {
        Ok(v) => v.to_string(),
        Err(e) => json!({ "error": e }).to_string(),
    }
}

fn grid(half_range: f64, steps: usize) -> Result<Vec<f64>, String> {
    if !(half_range.is_finite() && half_range > 0.0) || steps < 2 {
        return Err("need a positive range and at least 2 steps".into());
    }
    Ok((0..steps)
        .map(|i| -half_range + 2.0 * half_range * i as f64 / (steps - 1) as f64)
        .collect())
}

/// Closed-form patterns for `n = 1..=nmax` (even `n` only for `"cross"`),
/// each scaled to its own maximum, with their widths.
#[wasm_bindgen]
pub fn analytic_patterns(nmax: u32, topology: &str, visibility: f64, half_range: f64, steps: usize) -> String {
    respond((|| {
        let topology = parse_topology(topology).map_err(|e| e.to_string())?;
        if !(visibility > 0.0 && visibility <= 1.0) {
            return Err("visibility must lie in (0, 1]".into());
        }
        let phases = grid(half_range, steps)?;
        let mut series = Vec::new();
        for k in 1..=nmax.min(12) {
            if topology == Topology::CrossAb && k % 2 == 1 {
                continue;
            }
            let n = FringeOrder::new(k).map_err(|e| e.to_string())?;
            let values = phases
                .iter()
                .map(|&phi| model_intensity(n, topology, visibility, phi))
                .collect::<Result<Vec<f64>, _>>()
                .map_err(|e| e.to_string())?;
            let peak = values.iter().copied().fold(0.0, f64::max);
            let values: Vec<f64> = values.iter().map(|v| if peak > 0.0 { v / peak } else { 0.0 }).collect();
            let width = analytic_width(n, topology, visibility).ok().map(|(w, _)| w);
            series.push(json!({ "n": k, "values": values, "fwhm": width }));
        }
        Ok(json!({ "phases": phases, "series": series }))
    })())
}

/// Width table: closed form, ratio to `n = 1`, `1/sqrt(n)` and the
/// cross-port width for even `n`.
#[wasm_bindgen]
pub fn width_table(nmax: u32) -> String {
    respond((|| {
        let rows = (1..=nmax.clamp(1, 12))
            .map(|k| {
                let n = FringeOrder::new(k).map_err(|e| e.to_string())?;
                Ok(json!({
                    "n": k,
                    "fwhm": analytic::fwhm_closed_form(n),
                    "ratio": analytic::fwhm_ratio(n),
                    "inverse_sqrt": 1.0 / (k as f64).sqrt(),
                    "gaussian_ratio": analytic::gaussian_scaling_ratio(n, analytic::Profile::Gaussian),
                    "cross_fwhm": analytic::cross_fwhm_analytic(n).ok(),
                }))
            })
            .collect::<Result<Vec<Value>, String>>()?;
        Ok(json!({ "rows": rows }))
    })())
}

/// One Monte Carlo phase scan with default detectors, its noiseless
/// prediction and the width and chi-square of the measured fringe.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn simulate_scan(
    n: u32,
    topology: &str,
    rate: f64,
    window_ns: f64,
    dwell_ms: f64,
    steps: usize,
    half_range: f64,
    seed: u64,
) -> String {
    respond((|| {
        let topology = parse_topology(topology).map_err(|e| e.to_string())?;
        let expected_events = rate * dwell_ms * 1e-3 * steps as f64;
        if !(expected_events <= EVENT_BUDGET) {
            return Err(format!(
                "{expected_events:.1e} photons requested; the demo allows {EVENT_BUDGET:.0e} (lower rate, dwell or steps)"
            ));
        }
        let cfg = ScanConfig {
            phase_start: PhaseAngle::new(-half_range).map_err(|e| e.to_string())?,
            phase_end: PhaseAngle::new(half_range).map_err(|e| e.to_string())?,
            steps,
            dwell_ps: (dwell_ms * 1e9).round() as u64,
            topology,
            master_seed: seed,
            beam: BeamSpec {
                rate,
                ..Default::default()
            },
            detectors: DetectorSpec::default(),
            coincidence: CoincidenceConfig {
                order: FringeOrder::new(n).map_err(|e| e.to_string())?,
                window: DetectionWindow::from_ps((window_ns * 1e3).round() as u64).map_err(|e| e.to_string())?,
                ..Default::default()
            },
            ..Default::default()
        };
        cfg.validate().map_err(|e| e.to_string())?;
        let scan = run_scan(&cfg).map_err(|e| e.to_string())?;
        let predicted = predict_scan(&cfg).map_err(|e| e.to_string())?;
        let pattern = FringePattern::from_scan(&scan).map_err(|e| e.to_string())?;
        let order = cfg.coincidence.order;
        let fit = compare_to_analytic(&pattern, order, topology, 1.0, &ValidationTolerance::default()).ok();
        Ok(json!({
            "phases": scan.points.iter().map(|p| p.phase).collect::<Vec<_>>(),
            "counts": scan.points.iter().map(|p| p.raw_value).collect::<Vec<_>>(),
            "errors": scan.points.iter().map(|p| p.stat_error).collect::<Vec<_>>(),
            "predicted": predicted.points.iter().map(|p| p.raw_value).collect::<Vec<_>>(),
            "singles_rates": scan.singles_rates,
            "saturated": scan.saturated,
            "fwhm": fit.as_ref().map(|f| f.measured_fwhm),
            "fwhm_error": fit.as_ref().map(|f| f.fwhm_error),
            "analytic_fwhm": analytic_width(order, topology, 1.0).ok().map(|(w, _)| w),
            "chi2_per_dof": fit.as_ref().and_then(|f| f.chi_square_per_dof),
        }))
    })())
}
