//! Fringe normalisation, width extraction and comparison with the closed forms.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::analytic::{
    cross_port_fwhm, cross_port_intensity_with_visibility, fwhm_ratio, single_port_fwhm, single_port_intensity,
    FringeOrder,
};
use crate::runner::{DetectionMode, ScanResult, Topology};
use crate::{Error, Result};

/// A sampled interference pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FringePattern {
    pub phases: Vec<f64>,
    pub values: Vec<f64>,
    pub errors: Vec<f64>,
    pub normalized: bool,
    /// When set, `values * poisson_scale` are Poisson counts and the
    /// comparison uses model variances instead of `errors`.
    pub poisson_scale: Option<f64>,
}

impl FringePattern {
    pub fn new(phases: Vec<f64>, values: Vec<f64>, errors: Vec<f64>) -> Result<Self> {
        let p = FringePattern {
            phases,
            values,
            errors,
            normalized: false,
            poisson_scale: None,
        };
        p.check()?;
        Ok(p)
    }

    /// Pattern of raw Poisson counts with `sqrt(count)` errors.
    pub fn from_counts(phases: Vec<f64>, counts: Vec<f64>) -> Result<Self> {
        let errors = counts.iter().map(|c| c.max(0.0).sqrt()).collect();
        let mut p = FringePattern::new(phases, counts, errors)?;
        p.poisson_scale = Some(1.0);
        Ok(p)
    }

    /// Counting-mode scans are treated as Poisson data; intensity-product
    /// scans keep their measured standard errors.
    pub fn from_scan(scan: &ScanResult) -> Result<Self> {
        let mut p = FringePattern::new(
            scan.points.iter().map(|p| p.phase).collect(),
            scan.points.iter().map(|p| p.raw_value).collect(),
            scan.points.iter().map(|p| p.stat_error).collect(),
        )?;
        if scan.config.mode == DetectionMode::SpcmCoincidence && !scan.metadata.predicted {
            p.poisson_scale = Some(scan.config.effective_averages() as f64);
        }
        Ok(p)
    }

    fn check(&self) -> Result<()> {
        let n = self.phases.len();
        if self.values.len() != n || self.errors.len() != n {
            return Err(Error::MalformedPattern("phases, values and errors differ in length".into()));
        }
        if n < 2 {
            return Err(Error::MalformedPattern("fewer than two samples".into()));
        }
        if self.phases.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::MalformedPattern("phases are not strictly increasing".into()));
        }
        if self.values.iter().chain(&self.errors).any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::MalformedPattern("values and errors must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

/// Divide values and errors by the peak value.
pub fn normalize_pattern(p: &FringePattern) -> Result<FringePattern> {
    let max = p.max_value();
    if max <= 0.0 {
        return Err(Error::ZeroPattern);
    }
    Ok(FringePattern {
        phases: p.phases.clone(),
        values: p.values.iter().map(|v| v / max).collect(),
        errors: p.errors.iter().map(|e| e / max).collect(),
        normalized: true,
        poisson_scale: p.poisson_scale.map(|s| s * max),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FwhmMethod {
    /// Peak sample as the maximum; each half crossing interpolated between
    /// its two bracketing samples.
    LinearInterpolation,
    /// Peak level from a parabola through the samples above 80% of the
    /// maximum; each half crossing from a straight-line fit through
    /// `2 * half_span` samples around it. Suppresses the bias that noise
    /// on the top samples puts on the half level.
    Smoothed { half_span: usize },
}

impl FwhmMethod {
    pub const SMOOTHED: FwhmMethod = FwhmMethod::Smoothed { half_span: 3 };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FwhmEstimate {
    /// Midpoint of the two half crossings.
    pub center: f64,
    pub width: f64,
    pub width_error: f64,
    /// Peak level the half maximum refers to.
    pub peak: f64,
    pub method: FwhmMethod,
}

/// Width of the fringe nearest `center_hint` by linear interpolation.
pub fn estimate_fwhm(p: &FringePattern, center_hint: f64) -> Result<FwhmEstimate> {
    estimate_fwhm_with(p, center_hint, FwhmMethod::LinearInterpolation)
}

pub fn estimate_fwhm_with(p: &FringePattern, center_hint: f64, method: FwhmMethod) -> Result<FwhmEstimate> {
    let y = &p.values;
    let x = &p.phases;
    let top = nearest_peak(p, center_hint)?;
    let (peak, peak_err) = match method {
        FwhmMethod::LinearInterpolation => (y[top], p.errors[top]),
        FwhmMethod::Smoothed { .. } => parabolic_peak(x, y, &p.errors, top),
    };
    let half = peak / 2.0;
    let cross = |step: isize, side: &'static str| -> Result<(f64, f64)> {
        let mut j = top as isize;
        while y[j as usize] >= half {
            j += step;
            if j < 0 || j as usize >= y.len() {
                return Err(Error::FringeTruncated { side });
            }
        }
        let below = j as usize;
        let above = (j - step) as usize;
        match method {
            FwhmMethod::Smoothed { half_span } if half_span > 0 => {
                line_fit_crossing(x, y, below, above, half_span, half).map_or_else(
                    || Ok(interpolate(x, y, &p.errors, below, above, half, peak_err)),
                    Ok,
                )
            }
            _ => Ok(interpolate(x, y, &p.errors, below, above, half, peak_err)),
        }
    };
    let (left, el) = cross(-1, "left")?;
    let (right, er) = cross(1, "right")?;
    Ok(FwhmEstimate {
        center: 0.5 * (left + right),
        width: right - left,
        width_error: el.hypot(er),
        peak,
        method,
    })
}

/// Highest sample within pi/2 of the hint, provided it is a local maximum.
fn nearest_peak(p: &FringePattern, hint: f64) -> Result<usize> {
    let best = p
        .phases
        .iter()
        .enumerate()
        .filter(|(_, &ph)| (ph - hint).abs() <= FRAC_PI_2 + 1e-12)
        .max_by(|a, b| p.values[a.0].total_cmp(&p.values[b.0]))
        .map(|(i, _)| i)
        .ok_or(Error::NoPeak { hint })?;
    if p.values[best] <= 0.0 {
        return Err(Error::NoPeak { hint });
    }
    Ok(best)
}

fn interpolate(x: &[f64], y: &[f64], e: &[f64], below: usize, above: usize, half: f64, peak_err: f64) -> (f64, f64) {
    let f = (half - y[below]) / (y[above] - y[below]);
    let dx = x[above] - x[below];
    let slope = (y[above] - y[below]) / dx;
    let xc = x[below] + f * dx;
    let err = ((1.0 - f) * e[below]).hypot(f * e[above]).hypot(0.5 * peak_err) / slope.abs();
    (xc, err)
}

fn parabolic_peak(x: &[f64], y: &[f64], e: &[f64], top: usize) -> (f64, f64) {
    let cut = 0.8 * y[top];
    let mut a = top;
    while a > 0 && y[a - 1] >= cut {
        a -= 1;
    }
    let mut b = top;
    while b + 1 < y.len() && y[b + 1] >= cut {
        b += 1;
    }
    let fallback = (y[top], e[top]);
    if b - a < 2 {
        return fallback;
    }
    let pts: Vec<(f64, f64)> = (a..=b).map(|i| (x[i] - x[top], y[i])).collect();
    let Some([c0, c1, c2]) = quadratic_fit(&pts) else {
        return fallback;
    };
    if c2 >= 0.0 {
        return fallback;
    }
    let xv = -c1 / (2.0 * c2);
    if xv < pts[0].0 || xv > pts[pts.len() - 1].0 {
        return fallback;
    }
    let level = c0 + c1 * xv + c2 * xv * xv;
    let mean_err = (a..=b).map(|i| e[i] * e[i]).sum::<f64>() / pts.len() as f64;
    (level, (mean_err * 3.0 / pts.len() as f64).sqrt())
}

/// Least-squares `c0 + c1 x + c2 x^2`.
fn quadratic_fit(pts: &[(f64, f64)]) -> Option<[f64; 3]> {
    let mut m = [[0.0f64; 4]; 3];
    for &(x, y) in pts {
        let p = [1.0, x, x * x];
        for r in 0..3 {
            for c in 0..3 {
                m[r][c] += p[r] * p[c];
            }
            m[r][3] += p[r] * y;
        }
    }
    for col in 0..3 {
        let piv = (col..3).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        for r in 0..3 {
            if r != col {
                let f = m[r][col] / m[col][col];
                for c in col..4 {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
    }
    Some([m[0][3] / m[0][0], m[1][3] / m[1][1], m[2][3] / m[2][2]])
}

fn line_fit_crossing(x: &[f64], y: &[f64], below: usize, above: usize, k: usize, half: f64) -> Option<(f64, f64)> {
    // k samples on each side of the crossing
    let (lo, hi) = if below < above {
        (below.saturating_sub(k - 1), (above + k - 1).min(y.len() - 1))
    } else {
        (above.saturating_sub(k - 1), (below + k - 1).min(y.len() - 1))
    };
    let n = (hi - lo + 1) as f64;
    if n < 3.0 {
        return None;
    }
    let mx = x[lo..=hi].iter().sum::<f64>() / n;
    let my = y[lo..=hi].iter().sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for i in lo..=hi {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    let slope = sxy / sxx;
    let expected_sign = if below < above { 1.0 } else { -1.0 };
    if !(slope * expected_sign > 0.0) {
        return None;
    }
    let xc = mx + (half - my) / slope;
    if xc < x[lo] || xc > x[hi] {
        return None;
    }
    let rss: f64 = (lo..=hi).map(|i| (y[i] - my - slope * (x[i] - mx)).powi(2)).sum();
    let s2 = rss / (n - 2.0);
    let err = (s2 * (1.0 / n + (xc - mx).powi(2) / sxx)).sqrt() / slope.abs();
    Some((xc, err))
}

/// One row of the width-ratio table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub order: u32,
    pub width: f64,
    /// `Gamma_n / Gamma_1` from the supplied widths.
    pub measured_ratio: f64,
    /// `(4/pi) arcsec(2^(1/(2n)))`.
    pub closed_form_ratio: f64,
    pub inverse_sqrt: f64,
}

/// Width ratios relative to first order, sorted by order.
pub fn ratio_table(widths: &[(FringeOrder, f64)]) -> Result<Vec<RatioRow>> {
    let first = widths
        .iter()
        .find(|(n, _)| n.get() == 1)
        .map(|&(_, w)| w)
        .ok_or(Error::MissingFirstOrder)?;
    let mut rows: Vec<RatioRow> = widths
        .iter()
        .map(|&(n, w)| RatioRow {
            order: n.get(),
            width: w,
            measured_ratio: w / first,
            closed_form_ratio: fwhm_ratio(n),
            inverse_sqrt: 1.0 / (n.get() as f64).sqrt(),
        })
        .collect();
    rows.sort_by_key(|r| r.order);
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationTolerance {
    pub fwhm_relative: f64,
    pub chi2_min: f64,
    pub chi2_max: f64,
    /// Width method; `None` picks linear interpolation for noiseless
    /// patterns and smoothing otherwise.
    pub method: Option<FwhmMethod>,
}

impl Default for ValidationTolerance {
    fn default() -> Self {
        ValidationTolerance {
            fwhm_relative: 0.05,
            chi2_min: 0.5,
            chi2_max: 1.5,
            method: None,
        }
    }
}

impl ValidationTolerance {
    pub fn analytic() -> Self {
        ValidationTolerance {
            fwhm_relative: 1e-3,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationEntry {
    pub order: u32,
    pub topology: Topology,
    pub visibility: f64,
    pub measured_fwhm: f64,
    pub fwhm_error: f64,
    pub analytic_fwhm: f64,
    pub relative_deviation: f64,
    /// `None` for noiseless patterns that match the model exactly.
    pub chi_square_per_dof: Option<f64>,
    pub dof: usize,
    /// Points left out of the chi-square for lack of an error estimate.
    pub excluded_points: usize,
    /// Fitted model scale in units of the normalized pattern.
    pub amplitude: f64,
    pub fwhm_pass: bool,
    pub chi2_pass: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub tolerance: ValidationTolerance,
    pub entries: Vec<ValidationEntry>,
    pub ratios: Vec<RatioRow>,
}

impl ValidationReport {
    pub fn new(tolerance: ValidationTolerance, entries: Vec<ValidationEntry>) -> Self {
        let widths: Vec<(FringeOrder, f64)> = entries
            .iter()
            .filter(|e| e.topology == Topology::SinglePortA)
            .filter_map(|e| FringeOrder::new(e.order).ok().map(|n| (n, e.measured_fwhm)))
            .collect();
        let ratios = ratio_table(&widths).unwrap_or_default();
        ValidationReport {
            tolerance,
            entries,
            ratios,
        }
    }

    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }
}

/// Model pattern (unnormalized) for an order and topology.
pub fn model_intensity(n: FringeOrder, topology: Topology, visibility: f64, phi: f64) -> Result<f64> {
    match topology {
        Topology::SinglePortA => Ok(single_port_intensity(n, phi, visibility)),
        Topology::CrossAb => cross_port_intensity_with_visibility(n, phi, visibility),
    }
}

/// Closed-form width and centre hint for an order and topology.
pub fn analytic_width(n: FringeOrder, topology: Topology, visibility: f64) -> Result<(f64, f64)> {
    let (w, hint) = match topology {
        Topology::SinglePortA => (single_port_fwhm(n, visibility), 0.0),
        Topology::CrossAb => (cross_port_fwhm(n, visibility)?, FRAC_PI_2),
    };
    let w = w.ok_or_else(|| Error::invalid("visibility", "pattern never falls to half maximum"))?;
    Ok((w, hint))
}

/// Compare a measured pattern with the closed-form pattern of order `n`.
///
/// The model amplitude is fitted (one free parameter). Poisson patterns use
/// model variances (Pearson); others use their errors, and points with
/// zero error are excluded.
pub fn compare_to_analytic(
    measured: &FringePattern,
    n: FringeOrder,
    topology: Topology,
    visibility: f64,
    tol: &ValidationTolerance,
) -> Result<ValidationEntry> {
    let p = if measured.normalized {
        measured.clone()
    } else {
        normalize_pattern(measured)?
    };
    let (analytic_fwhm, hint) = analytic_width(n, topology, visibility)?;
    let model: Vec<f64> = p
        .phases
        .iter()
        .map(|&phi| model_intensity(n, topology, visibility, phi))
        .collect::<Result<_>>()?;
    let peak_model = model.iter().copied().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let model: Vec<f64> = model.iter().map(|m| m / peak_model).collect();

    let noiseless = p.poisson_scale.is_none() && p.errors.iter().all(|&e| e == 0.0);
    let method = tol.method.unwrap_or(if noiseless {
        FwhmMethod::LinearInterpolation
    } else {
        FwhmMethod::SMOOTHED
    });
    let est = estimate_fwhm_with(&p, hint, method)?;
    let relative_deviation = (est.width - analytic_fwhm).abs() / analytic_fwhm;

    let fit = chi_square(&p, &model)?;
    let fwhm_pass = relative_deviation <= tol.fwhm_relative;
    let chi2_pass = fit.chi2_per_dof.is_none_or(|c| c >= tol.chi2_min && c <= tol.chi2_max);
    Ok(ValidationEntry {
        order: n.get(),
        topology,
        visibility,
        measured_fwhm: est.width,
        fwhm_error: est.width_error,
        analytic_fwhm,
        relative_deviation,
        chi_square_per_dof: fit.chi2_per_dof,
        dof: fit.dof,
        excluded_points: fit.excluded,
        amplitude: fit.amplitude,
        fwhm_pass,
        chi2_pass,
        pass: fwhm_pass && chi2_pass,
    })
}

struct ChiSquare {
    chi2_per_dof: Option<f64>,
    dof: usize,
    excluded: usize,
    amplitude: f64,
}

fn chi_square(p: &FringePattern, model: &[f64]) -> Result<ChiSquare> {
    let y = &p.values;
    if let Some(scale) = p.poisson_scale {
        // Pearson: var(y_i) = A m_i / scale, floored at one count
        let var = |a: f64, m: f64| (a * m * scale).max(1.0) / (scale * scale);
        let mut a = y.iter().sum::<f64>() / model.iter().sum::<f64>().max(f64::MIN_POSITIVE);
        for _ in 0..50 {
            let (mut num, mut den) = (0.0, 0.0);
            for (&yi, &mi) in y.iter().zip(model) {
                let v = var(a, mi);
                num += yi * mi / v;
                den += mi * mi / v;
            }
            let next = num / den;
            let done = (next - a).abs() <= 1e-12 * a.abs();
            a = next;
            if done {
                break;
            }
        }
        let chi2: f64 = y.iter().zip(model).map(|(&yi, &mi)| (yi - a * mi).powi(2) / var(a, mi)).sum();
        let dof = y.len() - 1;
        return Ok(ChiSquare {
            chi2_per_dof: Some(chi2 / dof as f64),
            dof,
            excluded: 0,
            amplitude: a,
        });
    }
    let used: Vec<usize> = (0..y.len()).filter(|&i| p.errors[i] > 0.0).collect();
    let excluded = y.len() - used.len();
    if used.len() < 2 {
        // noiseless: exact agreement or nothing to say
        let a = y.iter().zip(model).map(|(a, b)| a * b).sum::<f64>() / model.iter().map(|m| m * m).sum::<f64>();
        let worst = y.iter().zip(model).map(|(&yi, &mi)| (yi - a * mi).abs()).fold(0.0, f64::max);
        if worst > 1e-9 {
            return Err(Error::UndefinedChiSquare);
        }
        return Ok(ChiSquare {
            chi2_per_dof: None,
            dof: 0,
            excluded,
            amplitude: a,
        });
    }
    let w = |i: usize| 1.0 / (p.errors[i] * p.errors[i]);
    let num: f64 = used.iter().map(|&i| w(i) * y[i] * model[i]).sum();
    let den: f64 = used.iter().map(|&i| w(i) * model[i] * model[i]).sum();
    let a = num / den;
    let chi2: f64 = used.iter().map(|&i| w(i) * (y[i] - a * model[i]).powi(2)).sum();
    let dof = used.len() - 1;
    Ok(ChiSquare {
        chi2_per_dof: Some(chi2 / dof as f64),
        dof,
        excluded,
        amplitude: a,
    })
}

/// The scan-grid spacing of the default campaign, `2 pi / 180`.
pub const DEFAULT_GRID_SPACING: f64 = 2.0 * PI / 180.0;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{cross_fwhm_analytic, fwhm_closed_form};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Poisson};

    fn n(k: u32) -> FringeOrder {
        FringeOrder::new(k).unwrap()
    }

    fn grid(steps: usize) -> Vec<f64> {
        (0..steps)
            .map(|i| -2.0 * PI + i as f64 * 4.0 * PI / (steps - 1) as f64)
            .collect()
    }

    fn analytic(k: u32, topology: Topology) -> FringePattern {
        let phases = grid(360);
        let values: Vec<f64> = phases
            .iter()
            .map(|&p| model_intensity(n(k), topology, 1.0, p).unwrap())
            .collect();
        let zeros = vec![0.0; phases.len()];
        normalize_pattern(&FringePattern::new(phases, values, zeros).unwrap()).unwrap()
    }

    fn noisy(k: u32, topology: Topology, peak: f64, seed: u64) -> FringePattern {
        let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(seed);
        let clean = analytic(k, topology);
        let counts = clean
            .values
            .iter()
            .map(|&v| if v * peak > 0.0 { Poisson::new(v * peak).unwrap().sample(&mut rng) } else { 0.0 })
            .collect();
        FringePattern::from_counts(clean.phases, counts).unwrap()
    }

    #[test]
    fn normalize_examples() {
        let p = FringePattern::new(vec![0.0, 1.0, 2.0], vec![50.0, 100.0, 20.0], vec![5.0, 10.0, 2.0]).unwrap();
        let q = normalize_pattern(&p).unwrap();
        assert_eq!(q.values, vec![0.5, 1.0, 0.2]);
        assert_eq!(q.errors, vec![0.05, 0.1, 0.02]);
        assert!(q.normalized);
        assert_eq!(normalize_pattern(&q).unwrap(), q);
        let c = FringePattern::new(vec![0.0, 1.0], vec![3.0, 3.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(normalize_pattern(&c).unwrap().values, vec![1.0, 1.0]);
        let z = FringePattern::new(vec![0.0, 1.0], vec![0.0, 0.0], vec![0.0, 0.0]).unwrap();
        assert!(matches!(normalize_pattern(&z), Err(Error::ZeroPattern)));
    }

    #[test]
    fn malformed_patterns_are_rejected() {
        assert!(FringePattern::new(vec![0.0, 1.0], vec![1.0], vec![0.0, 0.0]).is_err());
        assert!(FringePattern::new(vec![1.0, 0.0], vec![1.0, 1.0], vec![0.0, 0.0]).is_err());
        assert!(FringePattern::new(vec![0.0, 1.0], vec![-1.0, 1.0], vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn analytic_widths_on_the_scan_grid() {
        for k in 1..=4 {
            let est = estimate_fwhm(&analytic(k, Topology::SinglePortA), 0.0).unwrap();
            assert!((est.width - fwhm_closed_form(n(k))).abs() < 2e-3, "n={k}: {}", est.width);
            assert!(est.width_error == 0.0);
            assert!(est.center.abs() < 1e-9);
        }
        let est = estimate_fwhm(&analytic(4, Topology::CrossAb), FRAC_PI_2).unwrap();
        assert!((est.width - cross_fwhm_analytic(n(4)).unwrap()).abs() < 2e-3);
        // the grid is not symmetric about pi/2
        assert!((est.center - FRAC_PI_2).abs() < 0.01);
        let est = estimate_fwhm(&analytic(2, Topology::CrossAb), FRAC_PI_2).unwrap();
        assert!((est.width - FRAC_PI_2).abs() < 2e-3);
    }

    #[test]
    fn smoothed_width_stays_close_on_exact_data() {
        for k in 1..=4 {
            let est = estimate_fwhm_with(&analytic(k, Topology::SinglePortA), 0.0, FwhmMethod::SMOOTHED).unwrap();
            assert!((est.width - fwhm_closed_form(n(k))).abs() < 5e-3, "n={k}: {}", est.width);
        }
    }

    #[test]
    fn triangle_width_is_exact() {
        let phases: Vec<f64> = (0..41).map(|i| -2.0 + 0.1 * i as f64).collect();
        let values: Vec<f64> = phases.iter().map(|p: &f64| (1.0 - p.abs()).max(0.0)).collect();
        let p = FringePattern::new(phases, values, vec![0.0; 41]).unwrap();
        let est = estimate_fwhm(&p, 0.0).unwrap();
        assert!((est.width - 1.0).abs() < 1e-12);
    }

    #[test]
    fn truncated_and_missing_peaks() {
        let phases: Vec<f64> = (0..11).map(|i| -0.5 + 0.1 * i as f64).collect();
        let values: Vec<f64> = phases.iter().map(|p: &f64| (p / 2.0).cos().powi(2)).collect();
        let p = FringePattern::new(phases.clone(), values, vec![0.0; 11]).unwrap();
        assert!(matches!(estimate_fwhm(&p, 0.0), Err(Error::FringeTruncated { .. })));
        let far: Vec<f64> = (0..11).map(|i| 10.0 + i as f64).collect();
        let q = FringePattern::new(far, vec![1.0; 11], vec![0.0; 11]).unwrap();
        assert!(matches!(estimate_fwhm(&q, 0.0), Err(Error::NoPeak { .. })));
    }

    #[test]
    fn ratio_table_examples() {
        let widths: Vec<(FringeOrder, f64)> = (1..=4).map(|k| (n(k), fwhm_closed_form(n(k)))).collect();
        let rows = ratio_table(&widths).unwrap();
        for r in &rows {
            assert!((r.measured_ratio - r.closed_form_ratio).abs() < 1e-6);
        }
        let expect2 = 4.0 * 2f64.powf(-0.25).acos() / PI;
        assert!((rows[1].measured_ratio - expect2).abs() < 1e-12);
        assert!((rows[1].measured_ratio - 0.7281).abs() < 1e-4);
        assert!((rows[1].inverse_sqrt - 0.7071).abs() < 1e-4);
        assert!((rows[3].measured_ratio - 0.5224).abs() < 1e-4);
        assert!(matches!(ratio_table(&widths[1..]), Err(Error::MissingFirstOrder)));
    }

    #[test]
    fn noisy_first_order_fits() {
        let p = noisy(1, Topology::SinglePortA, 2.0e6, 1);
        let e = compare_to_analytic(&p, n(1), Topology::SinglePortA, 1.0, &Default::default()).unwrap();
        let chi = e.chi_square_per_dof.unwrap();
        assert!((0.5..=1.5).contains(&chi), "{chi}");
        assert!(e.pass, "{e:?}");
    }

    #[test]
    fn wrong_order_is_rejected() {
        let p = noisy(2, Topology::SinglePortA, 1.0e4, 2);
        let e = compare_to_analytic(&p, n(1), Topology::SinglePortA, 1.0, &Default::default()).unwrap();
        assert!(e.chi_square_per_dof.unwrap() > 3.0);
        assert!(!e.pass);
    }

    #[test]
    fn visibility_mismatch_is_detected() {
        let phases = grid(360);
        let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(3);
        let counts: Vec<f64> = phases
            .iter()
            .map(|&phi| Poisson::new(1.0e4 * single_port_intensity(n(2), phi, 0.9) + 1e-9).unwrap().sample(&mut rng))
            .collect();
        let p = FringePattern::from_counts(phases, counts).unwrap();
        let tol = ValidationTolerance::default();
        assert!(!compare_to_analytic(&p, n(2), Topology::SinglePortA, 1.0, &tol).unwrap().pass);
        assert!(compare_to_analytic(&p, n(2), Topology::SinglePortA, 0.9, &tol).unwrap().pass);
    }

    #[test]
    fn noiseless_patterns() {
        let p = analytic(3, Topology::SinglePortA);
        let e = compare_to_analytic(&p, n(3), Topology::SinglePortA, 1.0, &ValidationTolerance::analytic()).unwrap();
        assert!(e.pass && e.chi_square_per_dof.is_none());
        assert_eq!(e.excluded_points, 360);
        assert!(matches!(
            compare_to_analytic(&p, n(2), Topology::SinglePortA, 1.0, &ValidationTolerance::analytic()),
            Err(Error::UndefinedChiSquare)
        ));
    }

    #[test]
    fn fourth_order_at_thousand_counts() {
        // roughly the statistics of the default n = 4 campaign
        let mut fails = 0;
        for seed in 0..40 {
            let p = noisy(4, Topology::SinglePortA, 1000.0, 100 + seed);
            let e = compare_to_analytic(&p, n(4), Topology::SinglePortA, 1.0, &Default::default()).unwrap();
            fails += usize::from(!e.pass);
        }
        assert!(fails <= 2, "{fails} of 40 failed");
        let p = noisy(4, Topology::CrossAb, 1000.0, 9);
        let e = compare_to_analytic(&p, n(4), Topology::CrossAb, 1.0, &Default::default()).unwrap();
        assert!(e.pass, "{e:?}");
    }

    #[test]
    fn measured_errors_are_used_without_poisson_scale() {
        let phases = grid(100);
        let values: Vec<f64> = phases.iter().map(|&p| single_port_intensity(n(1), p, 1.0) + 0.01).collect();
        let p = FringePattern::new(phases, values, vec![0.01; 100]).unwrap();
        let e = compare_to_analytic(&p, n(1), Topology::SinglePortA, 1.0, &Default::default()).unwrap();
        assert!(e.chi_square_per_dof.unwrap() > 0.1);
        assert_eq!(e.excluded_points, 0);
    }

    proptest! {
        #[test]
        fn width_is_scale_invariant(k in 1u32..=4, scale in 1e-3f64..1e6) {
            let base = analytic(k, Topology::SinglePortA);
            let scaled = FringePattern::new(
                base.phases.clone(),
                base.values.iter().map(|v| v * scale).collect(),
                base.errors.clone(),
            ).unwrap();
            let a = estimate_fwhm(&base, 0.0).unwrap().width;
            let b = estimate_fwhm(&normalize_pattern(&scaled).unwrap(), 0.0).unwrap().width;
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn widths_shrink_with_order(k in 1u32..8) {
            let a = estimate_fwhm(&analytic(k, Topology::SinglePortA), 0.0).unwrap().width;
            let b = estimate_fwhm(&analytic(k + 1, Topology::SinglePortA), 0.0).unwrap().width;
            prop_assert!(b < a);
        }

        #[test]
        fn grid_error_is_below_spacing(k in 1u32..=8, steps in 90usize..720) {
            let phases = grid(steps);
            let values = phases.iter().map(|&p| single_port_intensity(n(k), p, 1.0)).collect();
            let p = FringePattern::new(phases, values, vec![0.0; steps]).unwrap();
            let w = estimate_fwhm(&p, 0.0).unwrap().width;
            prop_assert!((w - fwhm_closed_form(n(k))).abs() < 4.0 * PI / (steps - 1) as f64);
        }
    }
}
