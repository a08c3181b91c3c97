//! Closed-form interferometry: fringe patterns, widths, Poisson weights and
//! uncertainty limits.
//!
//! Everything here is a pure function of its arguments. The Monte Carlo
//! modules never call into this module on their hot paths; it is the oracle
//! their output is compared with.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::{quad, Error, Result, PS_PER_SECOND};

/// Width of the first-order (classical) fringe, in radians.
pub const FIRST_ORDER_FWHM: f64 = PI;

/// Absolute tolerance used by [`gaussian_scaling_ratio`].
pub const SCALING_QUADRATURE_TOL: f64 = 1e-9;

/// Gaussian profiles are integrated over `±GAUSSIAN_CUTOFF` standard deviations.
pub const GAUSSIAN_CUTOFF: f64 = 8.0;

/// A finite phase difference in radians.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct PhaseAngle(f64);

impl PhaseAngle {
    pub const ZERO: PhaseAngle = PhaseAngle(0.0);

    pub fn new(radians: f64) -> Result<Self> {
        if radians.is_finite() {
            Ok(PhaseAngle(radians))
        } else {
            Err(Error::invalid("phase", format!("{radians} is not finite")))
        }
    }

    pub fn radians(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for PhaseAngle {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        PhaseAngle::new(v)
    }
}

impl From<PhaseAngle> for f64 {
    fn from(p: PhaseAngle) -> f64 {
        p.0
    }
}

/// Number of photons detected in coincidence (N >= 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct FringeOrder(u32);

impl FringeOrder {
    pub const ONE: FringeOrder = FringeOrder(1);

    pub fn new(n: u32) -> Result<Self> {
        if n >= 1 {
            Ok(FringeOrder(n))
        } else {
            Err(Error::invalid("order", "must be at least 1"))
        }
    }

    pub fn get(self) -> u32 {
        self.0
    }

    pub fn is_even(self) -> bool {
        self.0 % 2 == 0
    }
}

impl TryFrom<u32> for FringeOrder {
    type Error = Error;
    fn try_from(n: u32) -> Result<Self> {
        FringeOrder::new(n)
    }
}

impl From<FringeOrder> for u32 {
    fn from(n: FringeOrder) -> u32 {
        n.0
    }
}

/// Coincidence time window, integer picoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u64", into = "u64")]
pub struct DetectionWindow(u64);

impl DetectionWindow {
    /// The 6 ns window of the coincidence counting unit.
    pub const DEFAULT: DetectionWindow = DetectionWindow(6_000);

    pub fn from_ps(tau_ps: u64) -> Result<Self> {
        if tau_ps > 0 {
            Ok(DetectionWindow(tau_ps))
        } else {
            Err(Error::invalid("window", "must be positive"))
        }
    }

    pub fn ps(self) -> u64 {
        self.0
    }

    pub fn seconds(self) -> f64 {
        self.0 as f64 / PS_PER_SECOND
    }
}

impl Default for DetectionWindow {
    fn default() -> Self {
        Self::DEFAULT
    }
}

impl TryFrom<u64> for DetectionWindow {
    type Error = Error;
    fn try_from(v: u64) -> Result<Self> {
        DetectionWindow::from_ps(v)
    }
}

impl From<DetectionWindow> for u64 {
    fn from(w: DetectionWindow) -> u64 {
        w.0
    }
}

/// The injected laser beam.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamSpec {
    /// Photons per second entering the interferometer.
    pub rate: f64,
    /// Meters.
    pub wavelength: f64,
    /// |alpha|^2, the mean photon number of the coherent state.
    pub mean_photon_number: f64,
    /// Fringe contrast; 1 for the ideal interferometer.
    pub visibility: f64,
}

impl Default for BeamSpec {
    fn default() -> Self {
        BeamSpec {
            rate: 2.0e7,
            wavelength: 633e-9,
            mean_photon_number: 0.12,
            visibility: 1.0,
        }
    }
}

impl BeamSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate.is_finite() && self.rate >= 0.0) {
            return Err(Error::invalid("beam.rate", "must be finite and >= 0"));
        }
        if !(self.wavelength.is_finite() && self.wavelength > 0.0) {
            return Err(Error::invalid("beam.wavelength", "must be > 0"));
        }
        if !(self.mean_photon_number.is_finite() && self.mean_photon_number >= 0.0) {
            return Err(Error::invalid("beam.mean_photon_number", "must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.visibility) {
            return Err(Error::invalid("beam.visibility", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Double-slit geometry equivalent to the interferometer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoubleSlitGeometry {
    pub slit_separation: f64,
    pub slit_width: f64,
    pub screen_distance: f64,
    pub lateral_offset: f64,
}

impl DoubleSlitGeometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.slit_separation > 0.0) {
            return Err(Error::invalid("slit_separation", "must be > 0"));
        }
        if !(self.slit_width > 0.0 && self.slit_width < self.slit_separation) {
            return Err(Error::invalid(
                "slit_width",
                "must be > 0 and smaller than the slit separation",
            ));
        }
        if !(self.screen_distance > 0.0 && self.screen_distance.is_finite()) {
            return Err(Error::invalid("screen_distance", "must be > 0"));
        }
        if !self.lateral_offset.is_finite() {
            return Err(Error::invalid("lateral_offset", "must be finite"));
        }
        Ok(())
    }
}

/// Port-A pattern for N photons detected in coincidence,
/// `[(1 + V cos phi) / 2]^N`.
///
/// With `visibility = 1` this is `cos^(2N)(phi / 2)`.
pub fn single_port_intensity(n: FringeOrder, phi: f64, visibility: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&visibility));
    ((1.0 + visibility * phi.cos()) / 2.0).powi(n.0 as i32)
}

/// Two-port cross pattern with N/2 photons in each port,
/// `[cos^2(phi/2)]^(N/2) [sin^2(phi/2)]^(N/2)`.
pub fn cross_port_intensity(n: FringeOrder, phi: f64) -> Result<f64> {
    if !n.is_even() {
        return Err(Error::OddCrossOrder(n.0));
    }
    // cos^2(x/2) sin^2(x/2) = sin^2(x) / 4
    let s = phi.sin();
    Ok((s * s / 4.0).powi((n.0 / 2) as i32))
}

/// Output amplitudes `(A, B)` of the interferometer for input amplitude
/// `alpha` in one port and vacuum in the other.
pub fn mzi_output_amplitudes(alpha: Complex64, phi: f64) -> (Complex64, Complex64) {
    let e = Complex64::from_polar(1.0, phi);
    let one = Complex64::new(1.0, 0.0);
    let a = Complex64::i() * (one + e) * alpha / 2.0;
    let b = (one - e) * alpha / 2.0;
    (a, b)
}

/// Mean photon numbers `(<N>_A, <N>_B)` leaving the two ports.
pub fn port_mean_numbers(mean_photon_number: f64, phi: f64) -> Result<(f64, f64)> {
    if !(mean_photon_number >= 0.0) {
        return Err(Error::invalid("mean_photon_number", "must be >= 0"));
    }
    let c = (phi / 2.0).cos();
    let a = mean_photon_number * c * c;
    Ok((a, mean_photon_number - a))
}

/// Poisson weight `e^-mean mean^n / n!`, evaluated in log space.
pub fn poisson_weight(mean: f64, n: u64) -> f64 {
    debug_assert!(mean >= 0.0);
    if mean == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    let nf = n as f64;
    (nf * mean.ln() - mean - ln_gamma(nf + 1.0)).exp()
}

/// Probability that exactly `n` photons of a beam at `rate` arrive within
/// one detection window.
pub fn arrival_probability(rate: f64, window: DetectionWindow, n: u64) -> f64 {
    poisson_weight(rate * window.seconds(), n)
}

/// Ratio of N-photon to 1-photon window probabilities, `(R tau)^(N-1) / N!`.
pub fn coincidence_ratio(rate: f64, window: DetectionWindow, n: FringeOrder) -> f64 {
    coincidence_ratio_from_product(rate * window.seconds(), n)
}

/// [`coincidence_ratio`] expressed directly in terms of `R tau`.
pub fn coincidence_ratio_from_product(r_tau: f64, n: FringeOrder) -> f64 {
    if n.0 == 1 {
        return 1.0;
    }
    let nf = n.0 as f64;
    ((nf - 1.0) * r_tau.ln() - ln_gamma(nf + 1.0)).exp()
}

fn arcsec(x: f64) -> f64 {
    debug_assert!(x >= 1.0);
    (1.0 / x).acos()
}

/// FWHM of the central fringe of the N-photon single-port pattern,
/// `Gamma_1 (4/pi) arcsec(2^(1/2N))`.
pub fn fwhm_closed_form(n: FringeOrder) -> f64 {
    let x = 2f64.powf(1.0 / (2.0 * n.0 as f64));
    FIRST_ORDER_FWHM * (4.0 / PI) * arcsec(x)
}

/// `Gamma_N / Gamma_1`.
pub fn fwhm_ratio(n: FringeOrder) -> f64 {
    fwhm_closed_form(n) / FIRST_ORDER_FWHM
}

/// Exact FWHM of the peak-normalized cross pattern for even N, measured on
/// the fringe centred at `phi = pi/2`.
pub fn cross_fwhm_analytic(n: FringeOrder) -> Result<f64> {
    if !n.is_even() {
        return Err(Error::OddCrossOrder(n.0));
    }
    // normalized pattern is sin^N(phi); half maximum at sin(phi) = 2^(-1/N)
    let half = 2f64.powf(-1.0 / n.0 as f64);
    Ok(2.0 * (FRAC_PI_2 - half.asin()))
}

/// Cross pattern `[(1 - V^2 cos^2 phi)/4]^(N/2)` with partial visibility.
pub fn cross_port_intensity_with_visibility(n: FringeOrder, phi: f64, visibility: f64) -> Result<f64> {
    if !n.is_even() {
        return Err(Error::OddCrossOrder(n.0));
    }
    let c = visibility * phi.cos();
    Ok(((1.0 - c * c) / 4.0).powi((n.0 / 2) as i32))
}

/// FWHM of the peak-normalized cross pattern with visibility `V`; `None`
/// when it never falls to half maximum.
pub fn cross_port_fwhm(n: FringeOrder, visibility: f64) -> Result<Option<f64>> {
    if !n.is_even() {
        return Err(Error::OddCrossOrder(n.0));
    }
    if visibility <= 0.0 {
        return Ok(None);
    }
    let c = (1.0 - 2f64.powf(-2.0 / n.0 as f64)).sqrt() / visibility;
    Ok((c <= 1.0).then(|| 2.0 * c.asin()))
}

/// FWHM of the peak-normalized pattern `[(1 + V cos phi)/2]^N`.
///
/// `None` when the pattern never falls to half of its peak, which happens
/// for low visibility.
pub fn single_port_fwhm(n: FringeOrder, visibility: f64) -> Option<f64> {
    if visibility <= 0.0 {
        return None;
    }
    let c = ((1.0 + visibility) * 2f64.powf(-1.0 / n.0 as f64) - 1.0) / visibility;
    if c < -1.0 {
        None
    } else {
        Some(2.0 * c.min(1.0).acos())
    }
}

/// Intensity profile used to probe the width scaling law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Gaussian,
    CosineSquared,
}

/// `∫ I^n / ∫ I` for a unit-peak profile, by adaptive quadrature.
///
/// For the Gaussian this is exactly `1/sqrt(n)`; for `cos^2` over one cycle
/// it is `2 (2n-1)!! / (2n)!!`, which only approaches the Gaussian law.
pub fn gaussian_scaling_ratio(n: FringeOrder, profile: Profile) -> f64 {
    let p = n.0 as i32;
    let (lo, hi): (f64, f64) = match profile {
        Profile::Gaussian => (-GAUSSIAN_CUTOFF, GAUSSIAN_CUTOFF),
        Profile::CosineSquared => (-PI, PI),
    };
    let shape = move |x: f64| -> f64 {
        match profile {
            Profile::Gaussian => (-0.5 * x * x).exp(),
            Profile::CosineSquared => {
                let c = (x / 2.0).cos();
                c * c
            }
        }
    };
    let num = quad::integrate(|x| shape(x).powi(p), lo, hi, SCALING_QUADRATURE_TOL);
    let den = quad::integrate(shape, lo, hi, SCALING_QUADRATURE_TOL);
    num / den
}

/// Shot-noise-limited uncertainties for a mean photon number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SqlUncertainty {
    pub delta_n: f64,
    pub delta_phi: f64,
    pub snr: f64,
}

pub fn sql_uncertainties(mean_photon_number: f64) -> Result<SqlUncertainty> {
    if !(mean_photon_number > 0.0) {
        return Err(Error::invalid("mean_photon_number", "must be > 0"));
    }
    let root = mean_photon_number.sqrt();
    Ok(SqlUncertainty {
        delta_n: root,
        delta_phi: 1.0 / root,
        snr: mean_photon_number / root,
    })
}

/// Heisenberg-limited uncertainties for N photons in coincidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HeisenbergUncertainty {
    pub delta_n: f64,
    pub delta_phi: f64,
}

pub fn hl_uncertainties(n: FringeOrder) -> HeisenbergUncertainty {
    let nf = n.0 as f64;
    HeisenbergUncertainty {
        delta_n: nf,
        delta_phi: 1.0 / nf,
    }
}

/// Interferometer phase equivalent to a lateral screen position behind a
/// double slit, `phi = k l rho / z0`.
pub fn double_slit_phase_map(geom: &DoubleSlitGeometry, wavelength: f64) -> Result<PhaseAngle> {
    geom.validate()?;
    if !(wavelength > 0.0 && wavelength.is_finite()) {
        return Err(Error::invalid("wavelength", "must be > 0"));
    }
    let k = 2.0 * PI / wavelength;
    PhaseAngle::new(k * geom.slit_separation * geom.lateral_offset / geom.screen_distance)
}
