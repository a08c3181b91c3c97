//! `mzi-ncoinc` command-line front end.
//!
//! Exit status: 0 on success, 1 when a validation fails, 2 for usage,
//! configuration or I/O errors.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use mzi_ncoinc::analytic::{DetectionWindow, FringeOrder, PhaseAngle};
use mzi_ncoinc::detector::CoincidenceScheme;
use mzi_ncoinc::fringe::{compare_to_analytic, ValidationReport, ValidationTolerance};
use mzi_ncoinc::io::{
    load_config, predict_patterns, read_csv, topology_name, write_fwhm_table, write_json, write_predict_csv,
    write_scan_csv, AnalysisReport, OutputBundle, RunManifest, SimulationSummary,
};
use mzi_ncoinc::runner::{point_detector_streams, run_scan, DetectionMode, ScanConfig, Topology};
use mzi_ncoinc::stream::write_event_dump;
use mzi_ncoinc::validate::{run_suite, SuiteParams};

#[derive(Parser)]
#[command(name = "mzi-ncoinc", version, about = "N-photon coincidence fringes of a Mach-Zehnder interferometer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form fringe patterns or the width table.
    Predict(PredictArgs),
    /// Run a photon-level phase scan.
    Simulate(SimulateArgs),
    /// Extract widths from a CSV and compare with the closed form.
    Analyze(AnalyzeArgs),
    /// Run the acceptance suite.
    Validate(ValidateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TopologyArg {
    Single,
    Cross,
}

impl From<TopologyArg> for Topology {
    fn from(t: TopologyArg) -> Self {
        match t {
            TopologyArg::Single => Topology::SinglePortA,
            TopologyArg::Cross => Topology::CrossAb,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Spcm,
    Apd,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Tuples,
    FirstClick,
}

#[derive(clap::Args)]
struct PredictArgs {
    /// Highest order; patterns for n = 1..=nmax (even n only for cross).
    #[arg(long, default_value_t = 4)]
    nmax: u32,
    /// A single order instead of 1..=nmax.
    #[arg(long)]
    n: Option<u32>,
    #[arg(long, value_enum, default_value = "single")]
    topology: TopologyArg,
    #[arg(long, default_value_t = 360)]
    steps: usize,
    /// Phase range in radians, `START:END` or `HALF` for -HALF..HALF.
    #[arg(long, default_value = "6.283185307179586", allow_hyphen_values = true)]
    range: String,
    /// Write the closed-form width table for n = 1..=nmax instead.
    #[arg(long)]
    fwhm_table: bool,
    /// Output directory; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct SimulateArgs {
    /// TOML scan configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<u32>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    topology: Option<TopologyArg>,
    #[arg(long)]
    seed: Option<u64>,
    /// Dwell per point; seconds, or with a unit (ps, ns, us, ms, s).
    #[arg(long)]
    dwell: Option<String>,
    /// Photons per second.
    #[arg(long)]
    rate: Option<f64>,
    /// Coincidence window; nanoseconds, or with a unit.
    #[arg(long)]
    window: Option<String>,
    #[arg(long)]
    averages: Option<u32>,
    #[arg(long)]
    steps: Option<usize>,
    /// Phase range in radians, `START:END` or `HALF`.
    #[arg(long, allow_hyphen_values = true)]
    range: Option<String>,
    #[arg(long, value_enum)]
    scheme: Option<SchemeArg>,
    /// Also dump the detector photon streams of this scan point.
    #[arg(long)]
    dump_point: Option<usize>,
    /// Output directory; the CSV goes to standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct AnalyzeArgs {
    #[arg(long)]
    input: PathBuf,
    /// Order to compare against; defaults to the order in the file.
    #[arg(long)]
    n: Option<u32>,
    #[arg(long, value_enum)]
    topology: Option<TopologyArg>,
    /// Allowed relative width deviation.
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct ValidateArgs {
    /// Reduced statistics: lower rate, wider tolerance.
    #[arg(long)]
    quick: bool,
    /// Dead time (ps) for the fringe campaigns instead of ideal detectors.
    #[arg(long)]
    dead_time_ps: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Predict(a) => predict(a).map(|_| true),
        Command::Simulate(a) => simulate(a).map(|_| true),
        Command::Analyze(a) => analyze(a),
        Command::Validate(a) => validate(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// `START:END` or a half-width.
fn parse_range(s: &str) -> anyhow::Result<(f64, f64)> {
    let (a, b) = match s.split_once(':') {
        Some((a, b)) => (a.trim().parse::<f64>()?, b.trim().parse::<f64>()?),
        None => {
            let h: f64 = s.trim().parse()?;
            (-h, h)
        }
    };
    if !(a.is_finite() && b.is_finite() && b > a) {
        bail!("invalid range {s:?}: need START < END");
    }
    Ok((a, b))
}

/// Duration in picoseconds; a bare number is in `default_unit`.
fn parse_duration_ps(s: &str, default_unit: &str) -> anyhow::Result<u64> {
    let s = s.trim();
    let split = s
        .find(|c: char| c.is_ascii_alphabetic() && c != 'e' && c != 'E')
        .unwrap_or(s.len());
    let (num, unit) = s.split_at(split);
    let value: f64 = num.trim().parse().with_context(|| format!("invalid duration {s:?}"))?;
    let unit = if unit.is_empty() { default_unit } else { unit.trim() };
    let scale = match unit {
        "ps" => 1.0,
        "ns" => 1e3,
        "us" => 1e6,
        "ms" => 1e9,
        "s" => 1e12,
        other => bail!("unknown time unit {other:?} in {s:?}"),
    };
    let ps = (value * scale).round();
    if !(ps.is_finite() && ps > 0.0 && ps < u64::MAX as f64) {
        bail!("duration {s:?} out of range");
    }
    Ok(ps as u64)
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_manifest(dir: &Path, manifest: &RunManifest, bundle: &OutputBundle) -> anyhow::Result<()> {
    #[derive(serde::Serialize)]
    struct Out<'a> {
        #[serde(flatten)]
        manifest: &'a RunManifest,
        outputs: OutputBundle,
    }
    let path = dir.join("manifest.json");
    let outputs = OutputBundle {
        manifest: Some(path.clone()),
        ..bundle.clone()
    };
    let mut w = create(&path)?;
    write_json(&mut w, &Out { manifest, outputs })?;
    w.flush()?;
    Ok(())
}

fn predict(a: PredictArgs) -> anyhow::Result<()> {
    let topology: Topology = a.topology.into();
    if a.fwhm_table {
        FringeOrder::new(a.nmax)?;
        return match &a.out {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                let path = dir.join("fwhm_table.csv");
                let mut w = create(&path)?;
                write_fwhm_table(&mut w, a.nmax)?;
                w.flush()?;
                let bundle = OutputBundle {
                    report: Some(path),
                    ..Default::default()
                };
                write_manifest(dir, &RunManifest::new("predict", None, None, dir.clone()), &bundle)
            }
            None => Ok(write_fwhm_table(io::stdout().lock(), a.nmax)?),
        };
    }
    let orders: Vec<FringeOrder> = match a.n {
        Some(k) => vec![FringeOrder::new(k)?],
        None => (1..=FringeOrder::new(a.nmax)?.get())
            .filter(|k| topology == Topology::SinglePortA || k % 2 == 0)
            .map(FringeOrder::new)
            .collect::<Result<_, _>>()?,
    };
    if orders.is_empty() {
        bail!("no even order up to --nmax {} for the cross topology", a.nmax);
    }
    let (start, end) = parse_range(&a.range)?;
    let p = predict_patterns(&orders, topology, start, end, a.steps)?;
    match &a.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let path = dir.join("predict.csv");
            let mut w = create(&path)?;
            write_predict_csv(&mut w, &p)?;
            w.flush()?;
            let bundle = OutputBundle {
                scan_csv: Some(path),
                ..Default::default()
            };
            write_manifest(dir, &RunManifest::new("predict", None, None, dir.clone()), &bundle)
        }
        None => Ok(write_predict_csv(io::stdout().lock(), &p)?),
    }
}

fn resolve_config(a: &SimulateArgs) -> anyhow::Result<ScanConfig> {
    let mut cfg = match &a.config {
        Some(path) => load_config(path)?,
        None => ScanConfig::default(),
    };
    if let Some(k) = a.n {
        cfg.coincidence.order = FringeOrder::new(k)?;
    }
    if let Some(m) = a.mode {
        cfg.mode = match m {
            ModeArg::Spcm => DetectionMode::SpcmCoincidence,
            ModeArg::Apd => DetectionMode::ApdIntensityProduct,
        };
    }
    if let Some(t) = a.topology {
        cfg.topology = t.into();
    }
    if let Some(s) = a.seed {
        cfg.master_seed = s;
    }
    if let Some(d) = &a.dwell {
        cfg.dwell_ps = parse_duration_ps(d, "s")?;
    }
    if let Some(r) = a.rate {
        cfg.beam.rate = r;
    }
    if let Some(w) = &a.window {
        cfg.coincidence.window = DetectionWindow::from_ps(parse_duration_ps(w, "ns")?)?;
    }
    if let Some(n) = a.averages {
        cfg.averages = Some(n);
    }
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    if let Some(r) = &a.range {
        let (start, end) = parse_range(r)?;
        cfg.phase_start = PhaseAngle::new(start)?;
        cfg.phase_end = PhaseAngle::new(end)?;
    }
    if let Some(s) = a.scheme {
        cfg.coincidence.scheme = match s {
            SchemeArg::Tuples => CoincidenceScheme::WindowedTuples,
            SchemeArg::FirstClick => CoincidenceScheme::FirstClickWindow,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn simulate(a: SimulateArgs) -> anyhow::Result<()> {
    let cfg = resolve_config(&a)?;
    let t0 = Instant::now();
    let mut scan = run_scan(&cfg)?;
    let runtime = t0.elapsed().as_secs_f64();
    let Some(dir) = &a.out else {
        let mut out = io::stdout().lock();
        write_scan_csv(&mut out, &scan)?;
        if scan.saturated {
            eprintln!("warning: detector saturation at some scan points");
        }
        return Ok(());
    };
    fs::create_dir_all(dir)?;
    let mut bundle = OutputBundle::default();

    let csv = dir.join("scan.csv");
    let mut w = create(&csv)?;
    write_scan_csv(&mut w, &scan)?;
    w.flush()?;
    bundle.scan_csv = Some(csv);

    // the wall clock only goes into the summary, never into the CSV
    scan.metadata.created_unix = SystemTime::now().duration_since(UNIX_EPOCH).ok().map(|d| d.as_secs());
    let summary = SimulationSummary::from_scan(&scan, runtime);
    for warning in &summary.warnings {
        eprintln!("warning: {warning}");
    }
    let path = dir.join("summary.json");
    let mut w = create(&path)?;
    write_json(&mut w, &summary)?;
    w.flush()?;
    bundle.report = Some(path);

    if let Some(point) = a.dump_point {
        let grid = cfg.phase_grid();
        let Some(&phase) = grid.get(point) else {
            bail!("--dump-point {point} is beyond the {} scan points", grid.len());
        };
        let streams = point_detector_streams(&cfg, phase, point as u64, 0)?;
        let path = dir.join(format!("events_point{point}.csv"));
        let mut w = create(&path)?;
        write_event_dump(&mut w, &streams)?;
        w.flush()?;
        bundle.event_dump = Some(path);
    }
    let manifest = RunManifest::new("simulate", a.config.clone(), Some(cfg), dir.clone());
    write_manifest(dir, &manifest, &bundle)?;
    println!(
        "{} points, {} total counts, peak {} at {:.4} rad, {:.1} s",
        scan.points.len(),
        summary.total_counts,
        summary.peak_value,
        scan.peak().map_or(0.0, |p| p.phase),
        runtime
    );
    Ok(())
}

fn analyze(a: AnalyzeArgs) -> anyhow::Result<bool> {
    let file = File::open(&a.input).with_context(|| format!("opening {}", a.input.display()))?;
    let table = read_csv(BufReader::new(file)).with_context(|| format!("reading {}", a.input.display()))?;
    let topology: Topology = match a.topology {
        Some(t) => t.into(),
        None => table
            .topology
            .or(table.config.as_ref().map(|c| c.topology))
            .unwrap_or(Topology::SinglePortA),
    };
    let visibility = table.config.as_ref().map_or(1.0, |c| c.beam.visibility);
    let orders: Vec<FringeOrder> = match (a.n, &table.config) {
        (Some(k), _) => vec![FringeOrder::new(k)?],
        (None, Some(cfg)) => vec![cfg.coincidence.order],
        (None, None) => {
            // a prediction: every intensity column
            let found: Vec<FringeOrder> = table
                .columns
                .iter()
                .filter_map(|c| c.strip_prefix("intensity_n")?.parse::<u32>().ok())
                .filter_map(|k| FringeOrder::new(k).ok())
                .collect();
            if found.is_empty() {
                bail!("--n is required: the file names no order");
            }
            found
        }
    };
    let mut tol = if table.kind.as_deref() == Some("predict") {
        ValidationTolerance::analytic()
    } else {
        ValidationTolerance::default()
    };
    if let Some(t) = a.tolerance {
        if !(t > 0.0) {
            bail!("--tolerance must be positive");
        }
        tol.fwhm_relative = t;
    }
    let entries = orders
        .iter()
        .map(|&n| {
            let p = table.pattern(n)?;
            compare_to_analytic(&p, n, topology, visibility, &tol)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let report = AnalysisReport::new(Some(a.input.clone()), ValidationReport::new(tol, entries));

    println!("# {} ({} topology)", a.input.display(), topology_name(topology));
    println!("n,fwhm_rad,fwhm_error_rad,analytic_fwhm_rad,relative_deviation,chi2_per_dof,pass");
    for e in &report.entries {
        let chi = e.chi_square_per_dof.map_or("-".to_string(), |c| format!("{c:.3}"));
        println!(
            "{},{:.5},{:.5},{:.5},{:.4},{},{}",
            e.order, e.measured_fwhm, e.fwhm_error, e.analytic_fwhm, e.relative_deviation, chi, e.pass
        );
    }
    for r in &report.ratios {
        println!(
            "# ratio n={}: measured {:.4}, closed form {:.4}, 1/sqrt(n) {:.4}",
            r.order, r.measured_ratio, r.closed_form_ratio, r.inverse_sqrt
        );
    }
    println!("{}", if report.pass { "PASS" } else { "FAIL" });

    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        let path = dir.join("analysis.json");
        let mut w = create(&path)?;
        write_json(&mut w, &report)?;
        w.flush()?;
        let bundle = OutputBundle {
            report: Some(path),
            ..Default::default()
        };
        write_manifest(dir, &RunManifest::new("analyze", Some(a.input.clone()), None, dir.clone()), &bundle)?;
    }
    Ok(report.pass)
}

fn validate(a: ValidateArgs) -> anyhow::Result<bool> {
    let mut params = if a.quick { SuiteParams::quick() } else { SuiteParams::full() };
    params.dead_time_override_ps = a.dead_time_ps;
    println!(
        "suite {:?}: R = {:.1e}/s, window {} ps, {} points over [{:.4}, {:.4}] rad, width tolerance {}%",
        params.suite,
        params.rate,
        params.window_ps,
        params.steps,
        params.phase_start,
        params.phase_end,
        100.0 * params.tolerance.fwhm_relative
    );
    let t0 = Instant::now();
    let report = run_suite(&params, |c| {
        println!("{} ({:.1} s)", c.line(), c.seconds);
        for d in &c.details {
            println!("    {d}");
        }
    })?;
    for w in &report.warnings {
        println!("warning: {w}");
    }
    let pass = report.passed();
    let failed = report.criteria.iter().filter(|c| !c.pass).count();
    println!(
        "{}: {} of {} criteria passed in {:.1} s",
        if pass { "PASS" } else { "FAIL" },
        report.criteria.len() - failed,
        report.criteria.len(),
        t0.elapsed().as_secs_f64()
    );
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        let path = dir.join("validation.json");
        let mut w = create(&path)?;
        write_json(&mut w, &report)?;
        w.flush()?;
        let bundle = OutputBundle {
            report: Some(path),
            ..Default::default()
        };
        write_manifest(dir, &RunManifest::new("validate", None, None, dir.clone()), &bundle)?;
    }
    Ok(pass)
}
