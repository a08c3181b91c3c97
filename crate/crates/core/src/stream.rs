//! Poisson photon arrivals and per-photon routing.
//!
//! A coherent beam is realised as a homogeneous Poisson process in integer
//! picoseconds. Photons are then routed one by one: a Bernoulli draw decides
//! the interferometer output port and a categorical draw picks a detector in
//! the beam-splitter tree. Independent thinning of a Poisson process yields
//! Poisson processes again, so this is exact for coherent light.
//!
//! Every random decision comes from its own seeded substream, so the list
//! operations here and the fused pipeline in [`crate::runner`] consume
//! identical random numbers and produce identical events.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Exp};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, PS_PER_SECOND};

/// Generator behind every random stream in the crate.
pub type SimRng = Xoshiro256PlusPlus;

/// Upper bound on the expected number of events in a single stream.
pub const MAX_STREAM_EVENTS: f64 = 1.0e10;

pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// SplitMix64 finaliser.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and a tag.
pub fn derive_seed(parent: u64, tag: u64) -> u64 {
    mix64(parent ^ mix64(tag))
}

const LOSS_TAG: u64 = 0x105;

/// Random stages of one scan-point realisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Arrivals,
    Interferometer,
    Tree(Port),
    Detector(u8),
}

impl Stage {
    fn tag(self) -> u64 {
        match self {
            Stage::Arrivals => 1,
            Stage::Interferometer => 2,
            Stage::Tree(Port::A) => 3,
            Stage::Tree(Port::B) => 4,
            Stage::Detector(d) => 0x100 + d as u64,
        }
    }
}

/// Seed hierarchy for one realisation of one scan point:
/// (master seed, point index, repetition) -> per-stage seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedPath {
    base: u64,
}

impl SeedPath {
    pub fn new(master: u64, point: u64, repetition: u32) -> Self {
        let base = derive_seed(derive_seed(master, point), repetition as u64 ^ 0xA5A5_0000);
        SeedPath { base }
    }

    pub fn seed(&self, stage: Stage) -> u64 {
        derive_seed(self.base, stage.tag())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Port {
    A,
    B,
}

/// Where a photon currently is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Location {
    /// Emitted by the laser, not yet routed.
    Source,
    Port(Port),
    Detector(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhotonEvent {
    /// Picoseconds since the start of the scan point.
    pub timestamp_ps: u64,
    pub location: Location,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamConfig {
    /// Photons per second.
    pub rate: f64,
    pub duration_ps: u64,
    pub seed: u64,
    /// Fraction of photons lost before the interferometer.
    pub loss: f64,
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate.is_finite() && self.rate >= 0.0) {
            return Err(Error::invalid("rate", "must be finite and >= 0"));
        }
        if self.duration_ps == 0 {
            return Err(Error::invalid("duration", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.loss) {
            return Err(Error::invalid("loss", "must lie in [0, 1]"));
        }
        check_stream_size(self.rate, self.duration_ps)
    }
}

pub(crate) fn check_stream_size(rate: f64, duration_ps: u64) -> Result<()> {
    let expected = rate * duration_ps as f64 / PS_PER_SECOND;
    if expected > MAX_STREAM_EVENTS {
        Err(Error::StreamTooLarge {
            expected,
            limit: MAX_STREAM_EVENTS,
        })
    } else {
        Ok(())
    }
}

/// Arrival times of a homogeneous Poisson process on `[0, duration)`.
///
/// Gaps are exponential with mean `1/rate`; times are floored to integer
/// picoseconds and a collision with the previous event is pushed 1 ps later,
/// so the output is strictly increasing.
pub struct PoissonArrivals {
    rng: SimRng,
    gap: Option<Exp<f64>>,
    clock: f64,
    /// Earliest timestamp the next arrival may take.
    floor: u64,
    duration_ps: u64,
}

impl PoissonArrivals {
    pub fn new(rate: f64, duration_ps: u64, seed: u64) -> Self {
        let per_ps = rate / PS_PER_SECOND;
        let gap = if per_ps > 0.0 { Exp::new(per_ps).ok() } else { None };
        PoissonArrivals {
            rng: rng_from_seed(seed),
            gap,
            clock: 0.0,
            floor: 0,
            duration_ps,
        }
    }
}

impl Iterator for PoissonArrivals {
    type Item = u64;

    #[inline]
    fn next(&mut self) -> Option<u64> {
        let gap = self.gap.as_ref()?;
        self.clock += gap.sample(&mut self.rng);
        // the clock is non-negative; the signed cast is much cheaper on x86
        let t = (self.clock as i64 as u64).max(self.floor);
        if t >= self.duration_ps || self.clock >= self.duration_ps as f64 {
            self.gap = None;
            return None;
        }
        self.floor = t + 1;
        Some(t)
    }
}

/// Independent Bernoulli thinning with keep probability `keep`.
///
/// A keep probability of exactly 1 consumes no random numbers.
#[derive(Debug, Clone, Copy)]
pub struct Thinning {
    keep: f64,
}

impl Thinning {
    pub fn new(keep: f64) -> Self {
        Thinning { keep }
    }

    #[inline]
    pub fn keeps<R: Rng>(&self, rng: &mut R) -> bool {
        self.keep >= 1.0 || rng.random::<f64>() < self.keep
    }
}

/// Per-photon port choice of a lossless interferometer,
/// `P(A) = (1 + V cos phi) / 2`.
#[derive(Debug, Clone, Copy)]
pub struct PortSplitter {
    p_a: f64,
}

impl PortSplitter {
    pub fn new(phase: f64, visibility: f64) -> Self {
        PortSplitter {
            p_a: (1.0 + visibility * phase.cos()) / 2.0,
        }
    }

    pub fn probability_a(&self) -> f64 {
        self.p_a
    }

    #[inline]
    pub fn route<R: Rng>(&self, rng: &mut R) -> Port {
        if rng.random::<f64>() < self.p_a {
            Port::A
        } else {
            Port::B
        }
    }
}

/// Splitting ratios of the beam-splitter tree in front of one port.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeSpec {
    probabilities: Vec<f64>,
}

/// How detectors share one port's light.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeLayout {
    /// Cascaded 50/50 splitters: (1), (1/2, 1/2), (1/2, 1/4, 1/4), (1/4 x 4).
    #[default]
    Cascade,
    /// Equal shares.
    Uniform,
}

impl TreeSpec {
    pub const MAX_DETECTORS: usize = 4;

    pub fn new(probabilities: Vec<f64>) -> Result<Self> {
        let k = probabilities.len();
        if k == 0 || k > Self::MAX_DETECTORS {
            return Err(Error::invalid("tree", format!("{k} detectors, expected 1 to 4")));
        }
        if probabilities.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::invalid("tree", "routing probabilities must be > 0"));
        }
        let sum: f64 = probabilities.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("tree", format!("probabilities sum to {sum}")));
        }
        Ok(TreeSpec { probabilities })
    }

    pub fn with_layout(layout: TreeLayout, detectors: usize) -> Result<Self> {
        match layout {
            TreeLayout::Uniform => {
                let k = detectors.max(1);
                Self::new(vec![1.0 / k as f64; detectors])
            }
            TreeLayout::Cascade => match detectors {
                1 => Self::new(vec![1.0]),
                2 => Self::new(vec![0.5, 0.5]),
                3 => Self::new(vec![0.5, 0.25, 0.25]),
                4 => Self::new(vec![0.25; 4]),
                k => Err(Error::invalid("tree", format!("{k} detectors, expected 1 to 4"))),
            },
        }
    }

    pub fn detector_count(&self) -> usize {
        self.probabilities.len()
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }
}

/// Categorical draw over a [`TreeSpec`]. A single-detector tree draws nothing.
#[derive(Debug, Clone)]
pub struct TreeRouter {
    /// Cumulative shares of the first three detectors, padded with +inf.
    cumulative: [f64; 3],
    single: bool,
}

impl TreeRouter {
    pub fn new(tree: &TreeSpec) -> Self {
        let mut cumulative = [f64::INFINITY; 3];
        let mut acc = 0.0;
        let k = tree.probabilities.len();
        for (i, p) in tree.probabilities[..k - 1].iter().enumerate() {
            acc += p;
            cumulative[i] = acc;
        }
        TreeRouter {
            cumulative,
            single: k == 1,
        }
    }

    #[inline]
    pub fn route<R: Rng>(&self, rng: &mut R) -> u8 {
        if self.single {
            return 0;
        }
        let u = rng.random::<f64>();
        // branch-free: the draws are unpredictable
        let c = &self.cumulative;
        (u >= c[0]) as u8 + (u >= c[1]) as u8 + (u >= c[2]) as u8
    }
}

/// Poisson photon stream of a coherent beam, with optional optical loss.
pub fn generate_poisson_stream(cfg: &StreamConfig) -> Result<Vec<PhotonEvent>> {
    cfg.validate()?;
    let expected = cfg.rate * cfg.duration_ps as f64 / PS_PER_SECOND;
    let mut out = Vec::with_capacity((expected + 5.0 * expected.sqrt()) as usize + 16);
    let thin = Thinning::new(1.0 - cfg.loss);
    let mut loss_rng = rng_from_seed(loss_seed(cfg.seed));
    for t in PoissonArrivals::new(cfg.rate, cfg.duration_ps, cfg.seed) {
        if thin.keeps(&mut loss_rng) {
            out.push(PhotonEvent {
                timestamp_ps: t,
                location: Location::Source,
            });
        }
    }
    Ok(out)
}

pub(crate) fn loss_seed(stream_seed: u64) -> u64 {
    derive_seed(stream_seed, LOSS_TAG)
}

/// Send each photon to port A with probability `(1 + V cos phi) / 2`.
pub fn route_through_mzi(
    events: &[PhotonEvent],
    phase: f64,
    visibility: f64,
    seed: u64,
) -> (Vec<PhotonEvent>, Vec<PhotonEvent>) {
    let splitter = PortSplitter::new(phase, visibility);
    let mut rng = rng_from_seed(seed);
    let mut a = Vec::new();
    let mut b = Vec::new();
    for ev in events {
        let port = splitter.route(&mut rng);
        let routed = PhotonEvent {
            timestamp_ps: ev.timestamp_ps,
            location: Location::Port(port),
        };
        match port {
            Port::A => a.push(routed),
            Port::B => b.push(routed),
        }
    }
    (a, b)
}

/// Distribute one port's photons over the detectors of a tree. Detector
/// indices in the output are local to the tree.
pub fn route_detector_tree(events: &[PhotonEvent], tree: &TreeSpec, seed: u64) -> Vec<Vec<PhotonEvent>> {
    let router = TreeRouter::new(tree);
    let mut rng = rng_from_seed(seed);
    let mut out = vec![Vec::new(); tree.detector_count()];
    for ev in events {
        let d = router.route(&mut rng);
        out[d as usize].push(PhotonEvent {
            timestamp_ps: ev.timestamp_ps,
            location: Location::Detector(d),
        });
    }
    out
}

/// Write events as `timestamp_ps,detector_index` lines in time order.
///
/// Events that have not reached a detector are written with index `-1`.
pub fn write_event_dump<W: Write>(mut w: W, per_detector: &[Vec<PhotonEvent>]) -> Result<()> {
    let mut all: Vec<PhotonEvent> = per_detector.iter().flatten().copied().collect();
    all.sort_by_key(|e| e.timestamp_ps);
    writeln!(w, "# mzi-ncoinc events {}", crate::FORMAT_VERSION)?;
    writeln!(w, "timestamp_ps,detector_index")?;
    for e in all {
        let d: i32 = match e.location {
            Location::Detector(d) => d as i32,
            _ => -1,
        };
        writeln!(w, "{},{}", e.timestamp_ps, d)?;
    }
    Ok(())
}

pub fn read_event_dump<R: BufRead>(r: R) -> Result<Vec<PhotonEvent>> {
    let mut out = Vec::new();
    let mut last: Option<u64> = None;
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("timestamp_ps") {
            continue;
        }
        let bad = || Error::Parse(format!("event dump line {}: {line:?}", lineno + 1));
        let (t, d) = line.split_once(',').ok_or_else(bad)?;
        let t: u64 = t.trim().parse().map_err(|_| bad())?;
        let d: i32 = d.trim().parse().map_err(|_| bad())?;
        if last.is_some_and(|l| t <= l) {
            return Err(Error::Parse(format!(
                "event dump line {}: timestamps must be strictly increasing",
                lineno + 1
            )));
        }
        last = Some(t);
        let location = if d >= 0 {
            Location::Detector(d as u8)
        } else {
            Location::Source
        };
        out.push(PhotonEvent {
            timestamp_ps: t,
            location,
        });
    }
    Ok(out)
}
