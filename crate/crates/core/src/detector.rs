//! Detector models and coincidence logic.
//!
//! Click detectors (SPCMs) thin the incident photons by their efficiency,
//! add dark clicks from an independent Poisson process and drop anything
//! that falls inside the non-paralyzable dead time of the previous click.
//! Analog detectors (APDs) integrate photons into fixed bins whose
//! per-bin product estimates the N-th order intensity correlation.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::analytic::{DetectionWindow, FringeOrder};
use crate::stream::{derive_seed, rng_from_seed, PhotonEvent, PoissonArrivals, SimRng, Thinning};
use crate::{Error, Result, PS_PER_SECOND};

const EFFICIENCY_TAG: u64 = 0xE1;
const DARK_TAG: u64 = 0xDA;

pub(crate) fn efficiency_rng(channel_seed: u64) -> SimRng {
    rng_from_seed(derive_seed(channel_seed, EFFICIENCY_TAG))
}

/// Dead-time loss fraction above which a channel is flagged as saturated.
pub const DEAD_TIME_LOSS_LIMIT: f64 = 0.05;

/// Largest detector bank a coincidence counter accepts.
pub const MAX_DETECTORS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSpec {
    pub efficiency: f64,
    /// Dark clicks per second.
    pub dark_rate: f64,
    pub dead_time_ps: u64,
    /// Incident rate above which the channel leaves its linear range.
    pub max_rate: f64,
}

impl Default for DetectorSpec {
    fn default() -> Self {
        DetectorSpec {
            efficiency: 1.0,
            dark_rate: 50.0,
            dead_time_ps: 350,
            max_rate: 3.5e7,
        }
    }
}

impl DetectorSpec {
    /// Unit efficiency, no dark clicks, no dead time.
    pub fn ideal() -> Self {
        DetectorSpec {
            efficiency: 1.0,
            dark_rate: 0.0,
            dead_time_ps: 0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(Error::invalid("detectors.efficiency", "must lie in [0, 1]"));
        }
        if !(self.dark_rate.is_finite() && self.dark_rate >= 0.0) {
            return Err(Error::invalid("detectors.dark_rate", "must be >= 0"));
        }
        if !(self.max_rate > 0.0) {
            return Err(Error::invalid("detectors.max_rate", "must be > 0"));
        }
        Ok(())
    }

    /// Whether an incident rate (photons plus dark clicks per second) drives
    /// the channel out of its linear range.
    pub fn is_saturated(&self, incident_rate: f64) -> bool {
        let x = incident_rate * self.dead_time_ps as f64 / PS_PER_SECOND;
        incident_rate > self.max_rate || x / (1.0 + x) > DEAD_TIME_LOSS_LIMIT
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Signal,
    Dark,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClickRecord {
    pub detector: u8,
    pub timestamp_ps: u64,
    pub origin: Origin,
}

/// Streaming model of one click detector.
pub struct DetectorChannel {
    index: u8,
    thinning: Thinning,
    efficiency_rng: SimRng,
    darks: PoissonArrivals,
    next_dark: Option<u64>,
    dead_time_ps: u64,
    last_click: Option<u64>,
    incident: u64,
    clicks: u64,
}

impl DetectorChannel {
    pub fn new(index: u8, spec: &DetectorSpec, duration_ps: u64, seed: u64) -> Self {
        let mut darks = PoissonArrivals::new(spec.dark_rate, duration_ps, derive_seed(seed, DARK_TAG));
        let next_dark = darks.next();
        DetectorChannel {
            index,
            thinning: Thinning::new(spec.efficiency),
            efficiency_rng: efficiency_rng(seed),
            darks,
            next_dark,
            dead_time_ps: spec.dead_time_ps,
            last_click: None,
            incident: 0,
            clicks: 0,
        }
    }

    pub fn next_dark(&self) -> Option<u64> {
        self.next_dark
    }

    /// Consume the pending dark click, returning it if it survives dead time.
    pub fn take_dark(&mut self) -> Option<ClickRecord> {
        let t = self.next_dark?;
        self.next_dark = self.darks.next();
        self.register(t, Origin::Dark)
    }

    /// Offer a signal photon at `t`.
    #[inline]
    pub fn signal(&mut self, t: u64) -> Option<ClickRecord> {
        if !self.thinning.keeps(&mut self.efficiency_rng) {
            return None;
        }
        self.register(t, Origin::Signal)
    }

    #[inline]
    fn register(&mut self, t: u64, origin: Origin) -> Option<ClickRecord> {
        self.incident += 1;
        if let Some(last) = self.last_click {
            if t < last + self.dead_time_ps.max(1) {
                return None;
            }
        }
        self.last_click = Some(t);
        self.clicks += 1;
        Some(ClickRecord {
            detector: self.index,
            timestamp_ps: t,
            origin,
        })
    }

    /// Photons and dark clicks that reached the sensitive area.
    pub fn incident(&self) -> u64 {
        self.incident
    }

    pub fn clicks(&self) -> u64 {
        self.clicks
    }
}

/// Several [`DetectorChannel`]s whose clicks are emitted in global time order.
pub struct DetectorBank {
    channels: Vec<DetectorChannel>,
    next_dark: u64,
}

impl DetectorBank {
    pub fn new(channels: Vec<DetectorChannel>) -> Self {
        let mut bank = DetectorBank {
            channels,
            next_dark: u64::MAX,
        };
        bank.refresh_next_dark();
        bank
    }

    fn refresh_next_dark(&mut self) {
        self.next_dark = self
            .channels
            .iter()
            .filter_map(DetectorChannel::next_dark)
            .min()
            .unwrap_or(u64::MAX);
    }

    fn flush_darks<F: FnMut(ClickRecord)>(&mut self, upto: u64, sink: &mut F) {
        while self.next_dark <= upto {
            let t = self.next_dark;
            if let Some(ch) = self.channels.iter_mut().find(|c| c.next_dark() == Some(t)) {
                if let Some(click) = ch.take_dark() {
                    sink(click);
                }
            }
            self.refresh_next_dark();
        }
    }

    /// Offer a signal photon to `detector`; pending dark clicks up to `t`
    /// are emitted first.
    #[inline]
    pub fn signal<F: FnMut(ClickRecord)>(&mut self, detector: u8, t: u64, sink: &mut F) {
        if self.next_dark <= t {
            self.flush_darks(t, sink);
        }
        if let Some(click) = self.channels[detector as usize].signal(t) {
            sink(click);
        }
    }

    /// Emit the remaining dark clicks.
    pub fn finish<F: FnMut(ClickRecord)>(&mut self, sink: &mut F) {
        self.flush_darks(u64::MAX - 1, sink);
    }

    pub fn channels(&self) -> &[DetectorChannel] {
        &self.channels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorOutput {
    pub clicks: Vec<ClickRecord>,
    /// Incident rate exceeded the linear range of the detector.
    pub saturated: bool,
    pub incident: u64,
}

/// Turn one detector's photon arrivals into clicks.
///
/// Photons are kept with probability `efficiency`, dark clicks are merged in,
/// and a click closer than `dead_time_ps` to the previous surviving click is
/// discarded.
pub fn apply_detector(
    events: &[PhotonEvent],
    detector: u8,
    spec: &DetectorSpec,
    duration_ps: u64,
    seed: u64,
) -> Result<DetectorOutput> {
    spec.validate()?;
    let mut ch = DetectorChannel::new(detector, spec, duration_ps, seed);
    let mut clicks = Vec::with_capacity(events.len());
    for ev in events {
        while ch.next_dark().is_some_and(|d| d <= ev.timestamp_ps) {
            clicks.extend(ch.take_dark());
        }
        clicks.extend(ch.signal(ev.timestamp_ps));
    }
    while ch.next_dark().is_some() {
        clicks.extend(ch.take_dark());
    }
    let rate = ch.incident() as f64 * PS_PER_SECOND / duration_ps.max(1) as f64;
    Ok(DetectorOutput {
        clicks,
        saturated: spec.is_saturated(rate),
        incident: ch.incident(),
    })
}

/// How clicks on different detectors are combined into coincidences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoincidenceScheme {
    /// Every set of clicks on `order` distinct detectors spanning at most
    /// one window counts once (time-tagger correlation). The expected count
    /// is exactly proportional to the product of the detector rates.
    #[default]
    WindowedTuples,
    /// A click opens a window; if `order` distinct detectors fire inside it
    /// one coincidence is registered and counting resumes after the window
    /// (hardware coincidence unit). Saturates when several photons share a
    /// window.
    FirstClickWindow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoincidenceConfig {
    pub order: FringeOrder,
    #[serde(rename = "window_ps")]
    pub window: DetectionWindow,
    pub scheme: CoincidenceScheme,
}

impl Default for CoincidenceConfig {
    fn default() -> Self {
        CoincidenceConfig {
            order: FringeOrder::ONE,
            window: DetectionWindow::DEFAULT,
            scheme: CoincidenceScheme::default(),
        }
    }
}

impl CoincidenceConfig {
    pub fn new(order: FringeOrder, window: DetectionWindow, scheme: CoincidenceScheme) -> Self {
        CoincidenceConfig { order, window, scheme }
    }
}

/// Streaming coincidence counter over clicks in non-decreasing time order.
#[derive(Debug, Clone)]
pub enum CoincidenceCounter {
    Tuples(TupleCounter),
    FirstClick(FirstClickCounter),
}

impl CoincidenceCounter {
    pub fn new(cfg: &CoincidenceConfig, detectors: usize) -> Result<Self> {
        let order = cfg.order.get();
        if order as usize > detectors {
            return Err(Error::OrderExceedsDetectors { order, detectors });
        }
        if detectors > MAX_DETECTORS {
            return Err(Error::invalid("detectors", "at most 8 detectors are supported"));
        }
        let window = cfg.window.ps();
        Ok(match cfg.scheme {
            CoincidenceScheme::WindowedTuples => CoincidenceCounter::Tuples(TupleCounter {
                window,
                order: order as usize,
                detectors,
                recent: VecDeque::new(),
                total: 0,
            }),
            CoincidenceScheme::FirstClickWindow => CoincidenceCounter::FirstClick(FirstClickCounter {
                window,
                order,
                buffer: VecDeque::new(),
                per_detector: vec![0; detectors],
                distinct: 0,
                blocked_until: None,
                total: 0,
            }),
        })
    }

    #[inline]
    pub fn push(&mut self, t: u64, detector: u8) {
        match self {
            CoincidenceCounter::Tuples(c) => c.push(t, detector as usize),
            CoincidenceCounter::FirstClick(c) => c.push(t, detector as usize),
        }
    }

    pub fn count(&self) -> u64 {
        match self {
            CoincidenceCounter::Tuples(c) => c.total,
            CoincidenceCounter::FirstClick(c) => c.total,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TupleCounter {
    window: u64,
    order: usize,
    detectors: usize,
    /// Clicks of the last window, oldest first.
    recent: VecDeque<(u64, u8)>,
    total: u64,
}

impl TupleCounter {
    #[inline]
    fn push(&mut self, t: u64, d: usize) {
        if self.order == 1 {
            self.total += 1;
            return;
        }
        let start = t.saturating_sub(self.window);
        while self.recent.front().is_some_and(|&(f, _)| f < start) {
            self.recent.pop_front();
        }
        if self.recent.len() + 1 >= self.order {
            self.total += self.tuples_closing_at(d);
        }
        self.recent.push_back((t, d as u8));
    }

    /// Tuples made of the click on `d` and `order - 1` buffered clicks on
    /// other, pairwise distinct detectors.
    fn tuples_closing_at(&self, d: usize) -> u64 {
        let mut per = [0u64; MAX_DETECTORS];
        for &(_, j) in &self.recent {
            per[j as usize] += 1;
        }
        // e[j] = elementary symmetric polynomial of degree j over the other detectors
        let mut e = [0u64; MAX_DETECTORS + 1];
        e[0] = 1;
        let need = self.order - 1;
        for (j, &len) in per[..self.detectors].iter().enumerate() {
            if j == d || len == 0 {
                continue;
            }
            for k in (1..=need).rev() {
                e[k] += e[k - 1] * len;
            }
        }
        e[need]
    }
}

#[derive(Debug, Clone)]
pub struct FirstClickCounter {
    window: u64,
    order: u32,
    buffer: VecDeque<(u64, usize)>,
    per_detector: Vec<u32>,
    distinct: u32,
    blocked_until: Option<u64>,
    total: u64,
}

impl FirstClickCounter {
    #[inline]
    fn push(&mut self, t: u64, d: usize) {
        if self.order == 1 {
            self.total += 1;
            return;
        }
        if self.blocked_until.is_some_and(|b| t <= b) {
            return;
        }
        self.buffer.push_back((t, d));
        self.per_detector[d] += 1;
        if self.per_detector[d] == 1 {
            self.distinct += 1;
        }
        while let Some(&(t0, d0)) = self.buffer.front() {
            if t - t0 > self.window {
                // the front click's window closed without a coincidence
                self.buffer.pop_front();
                self.per_detector[d0] -= 1;
                if self.per_detector[d0] == 0 {
                    self.distinct -= 1;
                }
                continue;
            }
            if self.distinct >= self.order {
                self.total += 1;
                self.blocked_until = Some(t0 + self.window);
                self.buffer.clear();
                self.per_detector.iter_mut().for_each(|c| *c = 0);
                self.distinct = 0;
            }
            break;
        }
    }
}

/// Count N-fold coincidences among per-detector click lists.
pub fn count_coincidences(clicks: &[Vec<ClickRecord>], cfg: &CoincidenceConfig) -> Result<u64> {
    let mut counter = CoincidenceCounter::new(cfg, clicks.len())?;
    let mut merged: Vec<(u64, u8)> = clicks
        .iter()
        .enumerate()
        .flat_map(|(i, list)| list.iter().map(move |c| (c.timestamp_ps, i as u8)))
        .collect();
    merged.sort_unstable();
    for (t, d) in merged {
        counter.push(t, d);
    }
    Ok(counter.count())
}

/// Expected coincidence rate (per second) for independent Poisson click
/// streams with the given per-detector rates.
///
/// Exact for [`CoincidenceScheme::WindowedTuples`]; for
/// [`CoincidenceScheme::FirstClickWindow`] the blocking after a registered
/// coincidence is neglected.
pub fn expected_coincidence_rate(rates: &[f64], cfg: &CoincidenceConfig) -> f64 {
    let k = cfg.order.get() as usize;
    let tau = cfg.window.seconds();
    if k == 1 {
        return rates.iter().sum();
    }
    if k > rates.len() {
        return 0.0;
    }
    match cfg.scheme {
        CoincidenceScheme::WindowedTuples => {
            // k-point sets with span <= tau occupy k tau^(k-1) of relative time
            let mut e = vec![0.0; k + 1];
            e[0] = 1.0;
            for &r in rates {
                for j in (1..=k).rev() {
                    e[j] += e[j - 1] * r;
                }
            }
            k as f64 * tau.powi(k as i32 - 1) * e[k]
        }
        CoincidenceScheme::FirstClickWindow => {
            let m = rates.len();
            let fire: Vec<f64> = rates.iter().map(|r| 1.0 - (-r * tau).exp()).collect();
            (0..m)
                .map(|d| {
                    let others: Vec<usize> = (0..m).filter(|&j| j != d).collect();
                    let mut p = 0.0;
                    for mask in 0u32..(1 << others.len()) {
                        if (mask.count_ones() as usize) < k - 1 {
                            continue;
                        }
                        let mut q = 1.0;
                        for (b, &j) in others.iter().enumerate() {
                            q *= if mask & (1 << b) != 0 { fire[j] } else { 1.0 - fire[j] };
                        }
                        p += q;
                    }
                    rates[d] * p
                })
                .sum()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntensitySample {
    pub detector: u8,
    pub bin_start_ps: u64,
    /// Photons in the bin.
    pub value: f64,
}

fn bin_count(bin_width_ps: u64, duration_ps: u64) -> u64 {
    duration_ps.div_ceil(bin_width_ps)
}

/// Bin each detector's photons on a uniform grid covering `[0, duration)`.
pub fn intensity_samples(
    events: &[Vec<PhotonEvent>],
    bin_width_ps: u64,
    duration_ps: u64,
) -> Result<Vec<Vec<IntensitySample>>> {
    if bin_width_ps == 0 {
        return Err(Error::invalid("bin_width", "must be positive"));
    }
    let bins = bin_count(bin_width_ps, duration_ps) as usize;
    Ok(events
        .iter()
        .enumerate()
        .map(|(d, list)| {
            let mut values = vec![0.0; bins];
            for ev in list {
                let b = (ev.timestamp_ps / bin_width_ps) as usize;
                if b < bins {
                    values[b] += 1.0;
                }
            }
            values
                .into_iter()
                .enumerate()
                .map(|(b, value)| IntensitySample {
                    detector: d as u8,
                    bin_start_ps: b as u64 * bin_width_ps,
                    value,
                })
                .collect()
        })
        .collect())
}

/// Mean over bins of the product of the detectors' bin values.
pub fn intensity_product(samples: &[Vec<IntensitySample>]) -> Result<f64> {
    let first = samples.first().ok_or(Error::MismatchedGrids)?;
    if first.is_empty() {
        return Err(Error::MismatchedGrids);
    }
    for s in &samples[1..] {
        if s.len() != first.len() || s.iter().zip(first).any(|(a, b)| a.bin_start_ps != b.bin_start_ps) {
            return Err(Error::MismatchedGrids);
        }
    }
    let total: f64 = (0..first.len())
        .map(|b| samples.iter().map(|s| s[b].value).product::<f64>())
        .sum();
    Ok(total / first.len() as f64)
}

/// Streaming version of [`intensity_samples`] followed by
/// [`intensity_product`], for photons arriving in time order.
#[derive(Debug, Clone)]
pub struct ProductAccumulator {
    bin_width_ps: u64,
    bins: u64,
    current: u64,
    counts: Vec<u32>,
    sum: f64,
    sum_sq: f64,
}

impl ProductAccumulator {
    pub fn new(detectors: usize, bin_width_ps: u64, duration_ps: u64) -> Result<Self> {
        if bin_width_ps == 0 {
            return Err(Error::invalid("bin_width", "must be positive"));
        }
        Ok(ProductAccumulator {
            bin_width_ps,
            bins: bin_count(bin_width_ps, duration_ps),
            current: 0,
            counts: vec![0; detectors],
            sum: 0.0,
            sum_sq: 0.0,
        })
    }

    #[inline]
    pub fn push(&mut self, t: u64, detector: u8) {
        let b = t / self.bin_width_ps;
        if b != self.current {
            self.flush();
            self.current = b;
        }
        self.counts[detector as usize] += 1;
    }

    fn flush(&mut self) {
        let p: f64 = self.counts.iter().map(|&c| c as f64).product();
        self.sum += p;
        self.sum_sq += p * p;
        self.counts.iter_mut().for_each(|c| *c = 0);
    }

    /// Mean product per bin and its standard error over bins.
    pub fn finish(mut self) -> (f64, f64) {
        self.flush();
        let n = self.bins.max(1) as f64;
        let mean = self.sum / n;
        let var = (self.sum_sq / n - mean * mean).max(0.0);
        (mean, (var / n).sqrt())
    }
}
