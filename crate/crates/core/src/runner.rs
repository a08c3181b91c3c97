//! Phase-scan campaigns.
//!
//! Each scan point is an independent, stationary realisation: photons are
//! generated for one dwell time, routed through the interferometer at the
//! point's phase, distributed over the detector tree(s), detected and either
//! counted in coincidence (SPCM mode) or binned and multiplied (APD mode).
//! Per-point seeds derive from `(master_seed, point index, repetition)`,
//! so points may run in any order or concurrently with identical results.

use serde::{Deserialize, Serialize};

use crate::analytic::{BeamSpec, PhaseAngle};
use crate::detector::{
    efficiency_rng, ClickRecord, CoincidenceConfig, Origin, CoincidenceCounter, DetectorBank, DetectorChannel, DetectorSpec,
    ProductAccumulator,
};
use crate::stream::{
    check_stream_size, generate_poisson_stream, loss_seed, rng_from_seed, route_detector_tree, route_through_mzi,
    Location, PhotonEvent, Port, PoissonArrivals, PortSplitter, SeedPath, SimRng, Stage, StreamConfig, Thinning,
    TreeLayout, TreeRouter, TreeSpec,
};
use crate::{Error, Result, PS_PER_SECOND};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionMode {
    #[default]
    SpcmCoincidence,
    ApdIntensityProduct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    /// All N detectors behind output port A.
    #[default]
    SinglePortA,
    /// N/2 detectors behind each output port.
    CrossAb,
}

/// A complete phase-scan campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    pub phase_start: PhaseAngle,
    pub phase_end: PhaseAngle,
    pub steps: usize,
    /// Counting time per point and repetition.
    pub dwell_ps: u64,
    pub mode: DetectionMode,
    pub topology: Topology,
    /// Repetitions per point; defaults to 1 (SPCM) or 30 (APD).
    pub averages: Option<u32>,
    pub master_seed: u64,
    pub tree: TreeLayout,
    /// APD sampling interval.
    pub bin_width_ps: u64,
    /// Optical loss before the interferometer.
    pub loss: f64,
    pub beam: BeamSpec,
    pub detectors: DetectorSpec,
    pub coincidence: CoincidenceConfig,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            phase_start: PhaseAngle::new(-2.0 * std::f64::consts::PI).unwrap(),
            phase_end: PhaseAngle::new(2.0 * std::f64::consts::PI).unwrap(),
            steps: 360,
            dwell_ps: 100_000_000_000,
            mode: DetectionMode::default(),
            topology: Topology::default(),
            averages: None,
            master_seed: 0,
            tree: TreeLayout::default(),
            bin_width_ps: 200,
            loss: 0.0,
            beam: BeamSpec::default(),
            detectors: DetectorSpec::default(),
            coincidence: CoincidenceConfig::default(),
        }
    }
}

impl ScanConfig {
    pub fn effective_averages(&self) -> u32 {
        self.averages.unwrap_or(match self.mode {
            DetectionMode::SpcmCoincidence => 1,
            DetectionMode::ApdIntensityProduct => 30,
        })
    }

    pub fn dwell_seconds(&self) -> f64 {
        self.dwell_ps as f64 / PS_PER_SECOND
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps < 2 {
            return Err(Error::invalid("steps", "must be at least 2"));
        }
        if self.phase_end.radians() <= self.phase_start.radians() {
            return Err(Error::invalid("phase_end", "must exceed phase_start"));
        }
        if self.dwell_ps == 0 {
            return Err(Error::invalid("dwell_ps", "must be positive"));
        }
        if self.averages == Some(0) {
            return Err(Error::invalid("averages", "must be at least 1"));
        }
        if self.bin_width_ps == 0 {
            return Err(Error::invalid("bin_width_ps", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.loss) {
            return Err(Error::invalid("loss", "must lie in [0, 1]"));
        }
        self.beam.validate()?;
        self.detectors.validate()?;
        let order = self.coincidence.order.get();
        match self.topology {
            Topology::SinglePortA if order as usize > TreeSpec::MAX_DETECTORS => {
                return Err(Error::invalid(
                    "coincidence.order",
                    format!("single-port trees hold at most {} detectors", TreeSpec::MAX_DETECTORS),
                ));
            }
            Topology::CrossAb if !self.coincidence.order.is_even() => return Err(Error::OddCrossOrder(order)),
            Topology::CrossAb if (order / 2) as usize > TreeSpec::MAX_DETECTORS => {
                return Err(Error::invalid("coincidence.order", "at most 4 detectors per port"));
            }
            _ => {}
        }
        check_stream_size(self.beam.rate, self.dwell_ps)
    }

    /// Scan phases, `start + i (end - start) / (steps - 1)`.
    pub fn phase_grid(&self) -> Vec<f64> {
        let a = self.phase_start.radians();
        let b = self.phase_end.radians();
        let den = (self.steps - 1) as f64;
        (0..self.steps).map(|i| a + i as f64 * (b - a) / den).collect()
    }

    pub fn layout(&self) -> Result<DetectorLayout> {
        let order = self.coincidence.order.get() as usize;
        let ports = match self.topology {
            Topology::SinglePortA => vec![(Port::A, TreeSpec::with_layout(self.tree, order)?)],
            Topology::CrossAb => vec![
                (Port::A, TreeSpec::with_layout(self.tree, order / 2)?),
                (Port::B, TreeSpec::with_layout(self.tree, order / 2)?),
            ],
        };
        Ok(DetectorLayout { ports })
    }
}

/// Detector trees behind the interferometer ports.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorLayout {
    ports: Vec<(Port, TreeSpec)>,
}

impl DetectorLayout {
    pub fn detector_count(&self) -> usize {
        self.ports.iter().map(|(_, t)| t.detector_count()).sum()
    }

    pub fn tree(&self, port: Port) -> Option<&TreeSpec> {
        self.ports.iter().find(|(p, _)| *p == port).map(|(_, t)| t)
    }

    /// Global index of the first detector behind `port`.
    pub fn offset(&self, port: Port) -> Option<u8> {
        let mut off = 0;
        for (p, t) in &self.ports {
            if *p == port {
                return Some(off as u8);
            }
            off += t.detector_count();
        }
        None
    }

    /// `(port, share of that port's light)` for every detector, in global order.
    pub fn detector_shares(&self) -> Vec<(Port, f64)> {
        self.ports
            .iter()
            .flat_map(|(p, t)| t.probabilities().iter().map(move |&q| (*p, q)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub phase: f64,
    /// Coincidence count (mean over repetitions) or mean intensity product.
    pub raw_value: f64,
    pub stat_error: f64,
    /// Photons leaving ports A and B, summed over repetitions.
    pub port_photons: [u64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanMetadata {
    pub master_seed: u64,
    pub software_version: String,
    pub format_version: String,
    /// Seconds since the Unix epoch; filled in by front ends that have a clock.
    pub created_unix: Option<u64>,
    pub predicted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub config: ScanConfig,
    pub points: Vec<ScanPoint>,
    /// Mean click rate per detector over the scan, per second.
    pub singles_rates: Vec<f64>,
    /// Some detector left its linear range at some point.
    pub saturated: bool,
    pub metadata: ScanMetadata,
}

impl ScanResult {
    pub fn total_counts(&self) -> f64 {
        let reps = self.config.effective_averages() as f64;
        self.points.iter().map(|p| p.raw_value * reps).sum()
    }

    pub fn peak(&self) -> Option<&ScanPoint> {
        self.points.iter().max_by(|a, b| a.raw_value.total_cmp(&b.raw_value))
    }
}

/// What one realisation of one scan point produced.
#[derive(Debug, Clone, PartialEq)]
pub struct PointObservation {
    /// One count per requested coincidence configuration (SPCM mode).
    pub counts: Vec<u64>,
    /// Mean intensity product and its standard error over bins (APD mode).
    pub product: Option<(f64, f64)>,
    pub port_photons: [u64; 2],
    /// Clicks (SPCM) or detected photons (APD) per detector.
    pub detector_clicks: Vec<u64>,
    pub saturated: bool,
}

/// A coincidence counter attached to a realisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterSpec {
    pub coincidence: CoincidenceConfig,
    /// Ignore dark clicks; with zero dead time this counts exactly what a
    /// dark-free detector would.
    pub signal_only: bool,
}

impl From<CoincidenceConfig> for CounterSpec {
    fn from(coincidence: CoincidenceConfig) -> Self {
        CounterSpec {
            coincidence,
            signal_only: false,
        }
    }
}

/// Simulate one realisation of the point at `phase`.
///
/// In SPCM mode every configuration in `counters` is evaluated on the same
/// click stream; in APD mode `counters` is ignored.
pub fn observe_point(
    cfg: &ScanConfig,
    phase: f64,
    point: u64,
    repetition: u32,
    counters: &[CounterSpec],
) -> Result<PointObservation> {
    let layout = cfg.layout()?;
    realize(cfg, &layout, phase, SeedPath::new(cfg.master_seed, point, repetition), counters)
}

/// Photon streams arriving at each detector (before the detector model) for
/// one realisation, built from the list operations with the same seeds as
/// [`observe_point`].
pub fn point_detector_streams(
    cfg: &ScanConfig,
    phase: f64,
    point: u64,
    repetition: u32,
) -> Result<Vec<Vec<PhotonEvent>>> {
    cfg.validate()?;
    let layout = cfg.layout()?;
    let seeds = SeedPath::new(cfg.master_seed, point, repetition);
    let stream = generate_poisson_stream(&StreamConfig {
        rate: cfg.beam.rate,
        duration_ps: cfg.dwell_ps,
        seed: seeds.seed(Stage::Arrivals),
        loss: cfg.loss,
    })?;
    let (a, b) = route_through_mzi(&stream, phase, cfg.beam.visibility, seeds.seed(Stage::Interferometer));
    let mut per_detector = Vec::with_capacity(layout.detector_count());
    for (port, events) in [(Port::A, &a), (Port::B, &b)] {
        if let Some(tree) = layout.tree(port) {
            let offset = layout.offset(port).unwrap_or(0);
            for mut list in route_detector_tree(events, tree, seeds.seed(Stage::Tree(port))) {
                for e in list.iter_mut() {
                    if let Location::Detector(d) = e.location {
                        e.location = Location::Detector(d + offset);
                    }
                }
                per_detector.push(list);
            }
        }
    }
    Ok(per_detector)
}

struct PortRoute {
    router: TreeRouter,
    rng: SimRng,
    offset: u8,
}

fn port_routes(layout: &DetectorLayout, seeds: &SeedPath) -> [Option<PortRoute>; 2] {
    [Port::A, Port::B].map(|port| {
        let tree = layout.tree(port)?;
        Some(PortRoute {
            router: TreeRouter::new(tree),
            rng: rng_from_seed(seeds.seed(Stage::Tree(port))),
            offset: layout.offset(port)?,
        })
    })
}

fn realize(
    cfg: &ScanConfig,
    layout: &DetectorLayout,
    phase: f64,
    seeds: SeedPath,
    counters: &[CounterSpec],
) -> Result<PointObservation> {
    let dwell = cfg.dwell_ps;
    let detectors = layout.detector_count();
    let arrivals_seed = seeds.seed(Stage::Arrivals);
    let arrivals = PoissonArrivals::new(cfg.beam.rate, dwell, arrivals_seed);
    let loss = Thinning::new(1.0 - cfg.loss);
    let mut loss_rng = rng_from_seed(loss_seed(arrivals_seed));
    let splitter = PortSplitter::new(phase, cfg.beam.visibility);
    let mut mzi_rng = rng_from_seed(seeds.seed(Stage::Interferometer));
    let mut routes = port_routes(layout, &seeds);
    let mut port_photons = [0u64; 2];

    match cfg.mode {
        DetectionMode::SpcmCoincidence => {
            let channels = (0..detectors as u8)
                .map(|d| DetectorChannel::new(d, &cfg.detectors, dwell, seeds.seed(Stage::Detector(d))))
                .collect();
            let mut bank = DetectorBank::new(channels);
            let mut counts: Vec<(CoincidenceCounter, bool)> = counters
                .iter()
                .map(|c| Ok((CoincidenceCounter::new(&c.coincidence, detectors)?, c.signal_only)))
                .collect::<Result<_>>()?;
            let mut sink = |c: ClickRecord| {
                for (k, signal_only) in counts.iter_mut() {
                    if !(*signal_only && c.origin == Origin::Dark) {
                        k.push(c.timestamp_ps, c.detector);
                    }
                }
            };
            for t in arrivals {
                if !loss.keeps(&mut loss_rng) {
                    continue;
                }
                let port = splitter.route(&mut mzi_rng);
                port_photons[port as usize] += 1;
                if let Some(r) = routes[port as usize].as_mut() {
                    let d = r.offset + r.router.route(&mut r.rng);
                    bank.signal(d, t, &mut sink);
                }
            }
            bank.finish(&mut sink);
            let seconds = dwell as f64 / PS_PER_SECOND;
            let saturated = bank
                .channels()
                .iter()
                .any(|c| cfg.detectors.is_saturated(c.incident() as f64 / seconds));
            Ok(PointObservation {
                counts: counts.iter().map(|(k, _)| k.count()).collect(),
                product: None,
                port_photons,
                detector_clicks: bank.channels().iter().map(DetectorChannel::clicks).collect(),
                saturated,
            })
        }
        DetectionMode::ApdIntensityProduct => {
            // analog detectors: efficiency only, no dark clicks or dead time
            let thin = Thinning::new(cfg.detectors.efficiency);
            let mut eff: Vec<SimRng> = (0..detectors as u8)
                .map(|d| efficiency_rng(seeds.seed(Stage::Detector(d))))
                .collect();
            let mut acc = ProductAccumulator::new(detectors, cfg.bin_width_ps, dwell)?;
            let mut detected = vec![0u64; detectors];
            for t in arrivals {
                if !loss.keeps(&mut loss_rng) {
                    continue;
                }
                let port = splitter.route(&mut mzi_rng);
                port_photons[port as usize] += 1;
                if let Some(r) = routes[port as usize].as_mut() {
                    let d = r.offset + r.router.route(&mut r.rng);
                    if thin.keeps(&mut eff[d as usize]) {
                        detected[d as usize] += 1;
                        acc.push(t, d);
                    }
                }
            }
            Ok(PointObservation {
                counts: Vec::new(),
                product: Some(acc.finish()),
                port_photons,
                detector_clicks: detected,
                saturated: false,
            })
        }
    }
}

struct PointSummary {
    point: ScanPoint,
    clicks: Vec<u64>,
    saturated: bool,
}

fn simulate_point(cfg: &ScanConfig, layout: &DetectorLayout, index: usize, phase: f64) -> Result<PointSummary> {
    let reps = cfg.effective_averages();
    let mut clicks = vec![0u64; layout.detector_count()];
    let mut port_photons = [0u64; 2];
    let mut saturated = false;
    let mut values = Vec::with_capacity(reps as usize);
    let mut bin_error = 0.0;
    for rep in 0..reps {
        let obs = realize(
            cfg,
            layout,
            phase,
            SeedPath::new(cfg.master_seed, index as u64, rep),
            &[cfg.coincidence.into()],
        )?;
        for (c, o) in clicks.iter_mut().zip(&obs.detector_clicks) {
            *c += o;
        }
        port_photons[0] += obs.port_photons[0];
        port_photons[1] += obs.port_photons[1];
        saturated |= obs.saturated;
        match obs.product {
            Some((mean, err)) => {
                values.push(mean);
                bin_error = err;
            }
            None => values.push(obs.counts[0] as f64),
        }
    }
    let n = reps as f64;
    let mean = values.iter().sum::<f64>() / n;
    let stat_error = match cfg.mode {
        DetectionMode::SpcmCoincidence => (mean * n).sqrt() / n,
        DetectionMode::ApdIntensityProduct if reps >= 2 => {
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        }
        DetectionMode::ApdIntensityProduct => bin_error,
    };
    Ok(PointSummary {
        point: ScanPoint {
            phase,
            raw_value: mean,
            stat_error,
            port_photons,
        },
        clicks,
        saturated,
    })
}

#[cfg(feature = "parallel")]
fn map_points<T: Send>(n: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_points<T: Send>(n: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    (0..n).map(f).collect()
}

fn metadata(cfg: &ScanConfig, predicted: bool) -> ScanMetadata {
    ScanMetadata {
        master_seed: cfg.master_seed,
        software_version: env!("CARGO_PKG_VERSION").to_string(),
        format_version: crate::FORMAT_VERSION.to_string(),
        created_unix: None,
        predicted,
    }
}

fn run_points(cfg: &ScanConfig) -> Result<ScanResult> {
    let layout = cfg.layout()?;
    let phases = cfg.phase_grid();
    let summaries = map_points(phases.len(), |i| simulate_point(cfg, &layout, i, phases[i]))?;
    if summaries.iter().all(|s| s.point.raw_value == 0.0) {
        return Err(Error::NoSignal);
    }
    let seconds = cfg.dwell_seconds() * cfg.effective_averages() as f64 * phases.len() as f64;
    let mut singles = vec![0.0; layout.detector_count()];
    for s in &summaries {
        for (acc, &c) in singles.iter_mut().zip(&s.clicks) {
            *acc += c as f64;
        }
    }
    singles.iter_mut().for_each(|r| *r /= seconds);
    Ok(ScanResult {
        config: cfg.clone(),
        saturated: summaries.iter().any(|s| s.saturated),
        points: summaries.into_iter().map(|s| s.point).collect(),
        singles_rates: singles,
        metadata: metadata(cfg, false),
    })
}

/// Run a phase scan in the configured topology.
pub fn run_scan(cfg: &ScanConfig) -> Result<ScanResult> {
    cfg.validate()?;
    run_points(cfg)
}

/// Run a two-port cross-correlation scan: N/2 detectors per port, all of
/// which must fire within one window.
pub fn run_cross_scan(cfg: &ScanConfig) -> Result<ScanResult> {
    if cfg.topology != Topology::CrossAb {
        return Err(Error::invalid("topology", "cross scan requires topology cross_ab"));
    }
    run_scan(cfg)
}

/// Expected per-detector click rates at `phase`, including dark clicks.
pub fn expected_detector_rates(cfg: &ScanConfig, layout: &DetectorLayout, phase: f64) -> Vec<f64> {
    let p_a = PortSplitter::new(phase, cfg.beam.visibility).probability_a();
    let injected = cfg.beam.rate * (1.0 - cfg.loss) * cfg.detectors.efficiency;
    layout
        .detector_shares()
        .into_iter()
        .map(|(port, share)| {
            let p = if port == Port::A { p_a } else { 1.0 - p_a };
            injected * p * share
        })
        .collect()
}

/// Noiseless expectation of [`run_scan`] on the same grid.
///
/// Counting mode uses the coincidence rate of independent click streams
/// with routing shares, efficiency and dark clicks included. Dead time
/// enters as the non-paralyzable loss `r / (1 + r t_dead)` per detector;
/// the streams stay independent, so only their rates matter.
/// APD mode gives `prod_i (r_i * bin)`.
pub fn predict_scan(cfg: &ScanConfig) -> Result<ScanResult> {
    cfg.validate()?;
    let layout = cfg.layout()?;
    let reps = cfg.effective_averages() as f64;
    let dwell = cfg.dwell_seconds();
    let bin = cfg.bin_width_ps as f64 / PS_PER_SECOND;
    let mut singles = vec![0.0; layout.detector_count()];
    let phases = cfg.phase_grid();
    let points = phases
        .iter()
        .map(|&phase| {
            let mut rates = expected_detector_rates(cfg, &layout, phase);
            let (value, err) = match cfg.mode {
                DetectionMode::SpcmCoincidence => {
                    let dead = cfg.detectors.dead_time_ps as f64 / PS_PER_SECOND;
                    rates.iter_mut().for_each(|r| {
                        let incident = *r + cfg.detectors.dark_rate;
                        *r = incident / (1.0 + incident * dead);
                    });
                    let v = dwell * crate::detector::expected_coincidence_rate(&rates, &cfg.coincidence);
                    (v, (v / reps).sqrt())
                }
                DetectionMode::ApdIntensityProduct => (rates.iter().map(|r| r * bin).product(), 0.0),
            };
            for (s, r) in singles.iter_mut().zip(&rates) {
                *s += r / phases.len() as f64;
            }
            let p_a = PortSplitter::new(phase, cfg.beam.visibility).probability_a();
            let photons = cfg.beam.rate * (1.0 - cfg.loss) * dwell * reps;
            ScanPoint {
                phase,
                raw_value: value,
                stat_error: err,
                port_photons: [(photons * p_a).round() as u64, (photons * (1.0 - p_a)).round() as u64],
            }
        })
        .collect();
    Ok(ScanResult {
        config: cfg.clone(),
        points,
        singles_rates: singles,
        saturated: false,
        metadata: metadata(cfg, true),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{single_port_intensity, DetectionWindow, FringeOrder};
    use crate::detector::{apply_detector, count_coincidences, intensity_product, intensity_samples, CoincidenceScheme};
    use std::f64::consts::{FRAC_PI_2, PI};

    fn small(order: u32, topology: Topology) -> ScanConfig {
        ScanConfig {
            steps: 9,
            dwell_ps: 2_000_000_000,
            topology,
            master_seed: 17,
            beam: BeamSpec {
                rate: 2.0e7,
                ..Default::default()
            },
            coincidence: CoincidenceConfig {
                order: FringeOrder::new(order).unwrap(),
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn grid_contract() {
        let cfg = ScanConfig::default();
        let g = cfg.phase_grid();
        assert_eq!(g.len(), 360);
        assert_eq!(g[0], -2.0 * PI);
        assert_eq!(g[359], 2.0 * PI);
        for (i, p) in g.iter().enumerate() {
            assert_eq!(*p, -2.0 * PI + i as f64 * (4.0 * PI) / 359.0);
        }
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let mut c = small(1, Topology::CrossAb);
        assert!(matches!(c.validate(), Err(Error::OddCrossOrder(1))));
        c = small(5, Topology::SinglePortA);
        assert!(c.validate().is_err());
        c = small(2, Topology::SinglePortA);
        c.steps = 1;
        assert!(c.validate().is_err());
        c = small(2, Topology::SinglePortA);
        c.averages = Some(0);
        assert!(c.validate().is_err());
        assert!(run_cross_scan(&small(2, Topology::SinglePortA)).is_err());
    }

    #[test]
    fn averages_default_by_mode() {
        let mut c = ScanConfig::default();
        assert_eq!(c.effective_averages(), 1);
        c.mode = DetectionMode::ApdIntensityProduct;
        assert_eq!(c.effective_averages(), 30);
        c.averages = Some(3);
        assert_eq!(c.effective_averages(), 3);
    }

    fn lost_to_dark_port(obs: &PointObservation, cfg: &ScanConfig) -> u64 {
        // single-port layouts leave port B unobserved
        match cfg.topology {
            Topology::SinglePortA => obs.port_photons[1],
            Topology::CrossAb => 0,
        }
    }

    /// The fused pipeline must equal the composition of the list operations
    /// fed with the same seeds.
    #[test]
    fn fused_pipeline_matches_list_operations() {
        for topology in [Topology::SinglePortA, Topology::CrossAb] {
            let mut cfg = small(4, topology);
            cfg.detectors.dark_rate = 2.0e4;
            cfg.detectors.efficiency = 0.8;
            cfg.loss = 0.1;
            cfg.coincidence.window = DetectionWindow::from_ps(20_000).unwrap();
            cfg.tree = TreeLayout::Uniform;
            let layout = cfg.layout().unwrap();
            let phase = 0.7;
            let seeds = SeedPath::new(cfg.master_seed, 3, 0);
            let counters: [CounterSpec; 3] = [
                cfg.coincidence.into(),
                CoincidenceConfig { scheme: CoincidenceScheme::FirstClickWindow, ..cfg.coincidence }.into(),
                CoincidenceConfig { order: FringeOrder::new(2).unwrap(), ..cfg.coincidence }.into(),
            ];
            let fused = realize(&cfg, &layout, phase, seeds, &counters).unwrap();

            let per_detector = point_detector_streams(&cfg, phase, 3, 0).unwrap();
            let photons: u64 = per_detector.iter().map(|v| v.len() as u64).sum();
            assert_eq!(fused.port_photons[0] + fused.port_photons[1], photons + lost_to_dark_port(&fused, &cfg));
            let clicks: Vec<Vec<ClickRecord>> = per_detector
                .iter()
                .enumerate()
                .map(|(d, ev)| {
                    apply_detector(ev, d as u8, &cfg.detectors, cfg.dwell_ps, seeds.seed(Stage::Detector(d as u8)))
                        .unwrap()
                        .clicks
                })
                .collect();
            let lens: Vec<u64> = clicks.iter().map(|c| c.len() as u64).collect();
            assert_eq!(fused.detector_clicks, lens);
            for (k, c) in counters.iter().enumerate() {
                assert_eq!(fused.counts[k], count_coincidences(&clicks, &c.coincidence).unwrap(), "{topology:?} counter {k}");
            }

            let mut apd = cfg.clone();
            apd.mode = DetectionMode::ApdIntensityProduct;
            apd.detectors.efficiency = 1.0;
            let fused = realize(&apd, &layout, phase, seeds, &[]).unwrap();
            let samples = intensity_samples(&per_detector, apd.bin_width_ps, apd.dwell_ps).unwrap();
            let expect = intensity_product(&samples).unwrap();
            assert!((fused.product.unwrap().0 - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn scan_is_reproducible() {
        let cfg = small(2, Topology::SinglePortA);
        let a = run_scan(&cfg).unwrap();
        let b = run_scan(&cfg).unwrap();
        assert_eq!(a, b);
        let mut other = cfg.clone();
        other.master_seed += 1;
        assert_ne!(run_scan(&other).unwrap().points, a.points);
    }

    #[test]
    fn first_order_scan_follows_the_pattern() {
        let mut cfg = small(1, Topology::SinglePortA);
        cfg.detectors = DetectorSpec::ideal();
        cfg.steps = 37;
        let res = run_scan(&cfg).unwrap();
        let peak = cfg.beam.rate * cfg.dwell_seconds();
        for p in &res.points {
            let expect = peak * single_port_intensity(FringeOrder::ONE, p.phase, 1.0);
            assert!((p.raw_value - expect).abs() <= 5.0 * expect.sqrt().max(1.0), "{} vs {expect}", p.raw_value);
            let total = (p.port_photons[0] + p.port_photons[1]) as f64;
            assert!((total - peak).abs() <= 5.0 * peak.sqrt());
        }
        // maxima at 0 and +-2 pi; the 37-point grid steps by pi/9
        let v = |phi: f64| res.points.iter().find(|p| (p.phase - phi).abs() < 1e-9).unwrap().raw_value;
        let step = PI / 9.0;
        assert!(v(0.0) > v(step) && v(0.0) > v(-step));
        assert!(v(2.0 * PI) > v(2.0 * PI - step) && v(-2.0 * PI) > v(-2.0 * PI + step));
    }

    #[test]
    fn prediction_matches_monte_carlo() {
        let mut cfg = small(2, Topology::SinglePortA);
        cfg.detectors = DetectorSpec::ideal();
        cfg.dwell_ps = 20_000_000_000;
        cfg.steps = 5;
        let pred = predict_scan(&cfg).unwrap();
        let sim = run_scan(&cfg).unwrap();
        for (p, s) in pred.points.iter().zip(&sim.points) {
            assert!((p.raw_value - s.raw_value).abs() <= 5.0 * p.raw_value.sqrt().max(1.0), "{} vs {}", p.raw_value, s.raw_value);
        }
        // n = 2 at phi = pi/2 is a quarter of the peak
        let mut c = cfg.clone();
        c.phase_start = PhaseAngle::new(0.0).unwrap();
        c.phase_end = PhaseAngle::new(FRAC_PI_2).unwrap();
        c.steps = 2;
        let p = predict_scan(&c).unwrap();
        assert!((p.points[1].raw_value / p.points[0].raw_value - 0.25).abs() < 1e-12);
    }

    #[test]
    fn prediction_includes_dead_time() {
        for (order, dead) in [(1, 350), (1, 10_000), (2, 10_000)] {
            let mut cfg = small(order, Topology::SinglePortA);
            cfg.detectors.dead_time_ps = dead;
            cfg.dwell_ps = 100_000_000_000;
            cfg.steps = 3;
            cfg.phase_start = PhaseAngle::new(-0.5).unwrap();
            cfg.phase_end = PhaseAngle::new(0.5).unwrap();
            let pred = predict_scan(&cfg).unwrap();
            let sim = run_scan(&cfg).unwrap();
            for (p, s) in pred.points.iter().zip(&sim.points) {
                let sigma = p.raw_value.sqrt();
                assert!(
                    (p.raw_value - s.raw_value).abs() <= 5.0 * sigma,
                    "n={order} dead {dead}: {} vs {}",
                    p.raw_value,
                    s.raw_value
                );
            }
        }
    }

    #[test]
    fn predicted_peak_for_two_photons() {
        // R dwell (R tau / 2!) (2! / 2^2) times 2 for the window placement
        let mut cfg = small(2, Topology::SinglePortA);
        cfg.detectors = DetectorSpec::ideal();
        cfg.beam.rate = 1.0e7;
        cfg.dwell_ps = 100_000_000_000;
        cfg.tree = TreeLayout::Uniform;
        cfg.phase_start = PhaseAngle::new(0.0).unwrap();
        cfg.phase_end = PhaseAngle::new(1.0).unwrap();
        let pred = predict_scan(&cfg).unwrap();
        let r_tau: f64 = 0.06;
        let expect = 1.0e7 * 0.1 * (r_tau / 2.0) * (2.0 / 4.0) * 2.0;
        assert!((pred.points[0].raw_value - expect).abs() / expect < 1e-12);
    }

    #[test]
    fn cross_scan_has_zeros_on_the_axis() {
        let mut cfg = small(4, Topology::CrossAb);
        cfg.detectors = DetectorSpec::ideal();
        let res = run_cross_scan(&cfg).unwrap();
        for p in &res.points {
            let k = (p.phase / PI).round();
            if (p.phase - k * PI).abs() < 1e-9 {
                assert_eq!(p.raw_value, 0.0, "phase {}", p.phase);
            }
        }
    }

    #[test]
    fn apd_mode_records_repetitions() {
        let mut cfg = small(2, Topology::SinglePortA);
        cfg.mode = DetectionMode::ApdIntensityProduct;
        cfg.averages = Some(4);
        cfg.dwell_ps = 20_000_000;
        cfg.beam.rate = 1.0e10;
        let res = run_scan(&cfg).unwrap();
        let pred = predict_scan(&cfg).unwrap();
        let (s, p) = (&res.points[4], &pred.points[4]);
        assert!(s.stat_error > 0.0);
        assert!((s.raw_value - p.raw_value).abs() < 5.0 * s.stat_error, "{} vs {}", s.raw_value, p.raw_value);
    }

    #[test]
    fn dead_fringe_everywhere_is_no_signal() {
        let mut cfg = small(2, Topology::SinglePortA);
        cfg.detectors = DetectorSpec::ideal();
        cfg.beam.rate = 0.0;
        assert!(matches!(run_scan(&cfg), Err(Error::NoSignal)));
    }

    #[test]
    fn long_dead_time_is_flagged() {
        let mut cfg = small(1, Topology::SinglePortA);
        cfg.detectors.dead_time_ps = 10_000_000;
        cfg.dwell_ps = 1_000_000_000;
        assert!(run_scan(&cfg).unwrap().saturated);
        cfg.detectors.dead_time_ps = 350;
        assert!(!run_scan(&cfg).unwrap().saturated);
    }
}
