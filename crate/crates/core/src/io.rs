//! Configuration files, scan CSVs and reports.
//!
//! Every file starts with a `# mzi-ncoinc <kind> v1` comment line. Scan
//! CSVs also echo the resolved configuration as `# config:` comment lines,
//! so a CSV alone is enough to re-run or re-analyse the campaign.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analytic::{cross_fwhm_analytic, fwhm_closed_form, fwhm_ratio, FringeOrder};
use crate::fringe::{FringePattern, RatioRow, ValidationEntry, ValidationReport, ValidationTolerance};
use crate::runner::{DetectionMode, ScanConfig, ScanResult, Topology};
use crate::{Error, Result, FORMAT_VERSION};

pub const SCAN_COLUMNS: [&str; 4] = ["phase_rad", "raw_value", "stat_error", "normalized_value"];

const CONFIG_PREFIX: &str = "# config: ";

/// Parse a TOML scan configuration and check its invariants.
pub fn parse_config(text: &str) -> Result<ScanConfig> {
    let cfg: ScanConfig = toml::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ScanConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text).map_err(|e| match e {
        Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn config_to_toml(cfg: &ScanConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::Parse(format!("config serialization: {e}")))
}

fn mode_name(mode: DetectionMode) -> &'static str {
    match mode {
        DetectionMode::SpcmCoincidence => "spcm_coincidence",
        DetectionMode::ApdIntensityProduct => "apd_intensity_product",
    }
}

/// Write a scan as CSV. The output depends only on the result, never on the
/// wall clock, so seeded runs are byte-identical.
pub fn write_scan_csv<W: Write>(mut w: W, scan: &ScanResult) -> Result<()> {
    writeln!(w, "# mzi-ncoinc scan {FORMAT_VERSION}")?;
    let unit = match scan.config.mode {
        DetectionMode::SpcmCoincidence => "coincidences per dwell (mean over repetitions)",
        DetectionMode::ApdIntensityProduct => "mean product of photons per bin",
    };
    writeln!(w, "# phase_rad: radians; raw_value, stat_error: {unit}; normalized_value: raw_value / max")?;
    writeln!(
        w,
        "# mode: {}; predicted: {}; repetitions: {}",
        mode_name(scan.config.mode),
        scan.metadata.predicted,
        scan.config.effective_averages()
    )?;
    for line in config_to_toml(&scan.config)?.lines() {
        writeln!(w, "{CONFIG_PREFIX}{line}")?;
    }
    writeln!(w, "{}", SCAN_COLUMNS.join(","))?;
    let max = scan.points.iter().map(|p| p.raw_value).fold(0.0, f64::max);
    for p in &scan.points {
        let norm = if max > 0.0 { p.raw_value / max } else { 0.0 };
        writeln!(w, "{},{},{},{}", p.phase, p.raw_value, p.stat_error, norm)?;
    }
    Ok(())
}

/// Columns and header metadata read back from a scan or prediction CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// Kind from the `# mzi-ncoinc <kind> <version>` line.
    pub kind: Option<String>,
    pub config: Option<ScanConfig>,
    pub predicted: bool,
    pub topology: Option<Topology>,
}

impl CsvTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    /// Pattern for order `n`: the scan columns if present, otherwise the
    /// `intensity_n<n>` column of a prediction (with zero errors).
    pub fn pattern(&self, n: FringeOrder) -> Result<FringePattern> {
        let phases = self
            .column("phase_rad")
            .ok_or_else(|| Error::SchemaMismatch(vec!["phase_rad".into()]))?;
        let predict_col = format!("intensity_n{}", n.get());
        if self.kind.as_deref() == Some("predict") || !self.columns.iter().any(|c| c == "raw_value") {
            if let Some(values) = self.column(&predict_col) {
                let zeros = vec![0.0; values.len()];
                return FringePattern::new(phases, values, zeros);
            }
            if self.kind.as_deref() == Some("predict") {
                return Err(Error::SchemaMismatch(vec![predict_col]));
            }
        }
        let missing: Vec<String> = SCAN_COLUMNS
            .iter()
            .filter(|c| !self.columns.iter().any(|x| x == *c))
            .map(|c| c.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(Error::SchemaMismatch(missing));
        }
        let mut p = FringePattern::new(phases, self.column("raw_value").unwrap(), self.column("stat_error").unwrap())?;
        if let Some(cfg) = &self.config {
            if cfg.mode == DetectionMode::SpcmCoincidence && !self.predicted {
                p.poisson_scale = Some(cfg.effective_averages() as f64);
            }
        }
        Ok(p)
    }
}

/// Read a CSV written by [`write_scan_csv`] or [`write_predict_csv`].
pub fn read_csv<R: BufRead>(r: R) -> Result<CsvTable> {
    let mut columns: Option<Vec<String>> = None;
    let mut rows = Vec::new();
    let mut kind = None;
    let mut config_text = String::new();
    let mut predicted = false;
    let mut topology = None;
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(c) = line.strip_prefix(CONFIG_PREFIX) {
            config_text.push_str(c);
            config_text.push('\n');
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            let comment = comment.trim();
            if let Some(rest) = comment.strip_prefix("mzi-ncoinc ") {
                kind = rest.split_whitespace().next().map(str::to_string);
            }
            if comment.contains("predicted: true") {
                predicted = true;
            }
            if let Some(t) = comment.strip_prefix("topology: ") {
                topology = parse_topology(t.trim()).ok();
            }
            continue;
        }
        match &columns {
            None => columns = Some(trimmed.split(',').map(|c| c.trim().to_string()).collect()),
            Some(cols) => {
                let row: Vec<f64> = trimmed
                    .split(',')
                    .map(|v| v.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
                if row.len() != cols.len() {
                    return Err(Error::Parse(format!(
                        "line {}: expected {} fields, found {}",
                        lineno + 1,
                        cols.len(),
                        row.len()
                    )));
                }
                rows.push(row);
            }
        }
    }
    let columns = columns.ok_or_else(|| Error::SchemaMismatch(SCAN_COLUMNS.iter().map(|c| c.to_string()).collect()))?;
    let config = if config_text.is_empty() {
        None
    } else {
        Some(toml::from_str(&config_text).map_err(|e| Error::Parse(format!("embedded config: {e}")))?)
    };
    if topology.is_none() {
        topology = config.as_ref().map(|c: &ScanConfig| c.topology);
    }
    Ok(CsvTable {
        columns,
        rows,
        kind,
        config,
        predicted,
        topology,
    })
}

pub fn parse_topology(s: &str) -> Result<Topology> {
    match s {
        "single" | "single_port_a" | "single_port_A" => Ok(Topology::SinglePortA),
        "cross" | "cross_ab" | "cross_AB" => Ok(Topology::CrossAb),
        other => Err(Error::invalid("topology", format!("unknown topology {other:?}"))),
    }
}

pub fn topology_name(t: Topology) -> &'static str {
    match t {
        Topology::SinglePortA => "single",
        Topology::CrossAb => "cross",
    }
}

/// Peak-normalized analytic patterns on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub topology: Topology,
    pub orders: Vec<FringeOrder>,
    pub phases: Vec<f64>,
    /// One column per order.
    pub columns: Vec<Vec<f64>>,
}

pub fn predict_patterns(orders: &[FringeOrder], topology: Topology, start: f64, end: f64, steps: usize) -> Result<Prediction> {
    if steps < 2 {
        return Err(Error::invalid("steps", "must be at least 2"));
    }
    if !(end > start) {
        return Err(Error::invalid("range", "end must exceed start"));
    }
    let phases: Vec<f64> = (0..steps)
        .map(|i| start + i as f64 * (end - start) / (steps - 1) as f64)
        .collect();
    let columns = orders
        .iter()
        .map(|&n| {
            // peak of the cross pattern is 4^(-n/2)
            let peak = match topology {
                Topology::SinglePortA => 1.0,
                Topology::CrossAb => 0.25f64.powi((n.get() / 2) as i32),
            };
            phases
                .iter()
                .map(|&phi| crate::fringe::model_intensity(n, topology, 1.0, phi).map(|v| v / peak))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Ok(Prediction {
        topology,
        orders: orders.to_vec(),
        phases,
        columns,
    })
}

pub fn write_predict_csv<W: Write>(mut w: W, p: &Prediction) -> Result<()> {
    writeln!(w, "# mzi-ncoinc predict {FORMAT_VERSION}")?;
    writeln!(w, "# phase_rad: radians; intensity_n<k>: peak-normalized k-photon pattern")?;
    writeln!(w, "# topology: {}", topology_name(p.topology))?;
    let mut header = vec!["phase_rad".to_string()];
    header.extend(p.orders.iter().map(|n| format!("intensity_n{}", n.get())));
    writeln!(w, "{}", header.join(","))?;
    for (i, phi) in p.phases.iter().enumerate() {
        write!(w, "{phi}")?;
        for c in &p.columns {
            write!(w, ",{}", c[i])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Closed-form widths for `n = 1..=nmax`.
pub fn write_fwhm_table<W: Write>(mut w: W, nmax: u32) -> Result<()> {
    writeln!(w, "# mzi-ncoinc fwhm {FORMAT_VERSION}")?;
    writeln!(w, "# widths in radians; cross_fwhm_rad empty for odd n")?;
    writeln!(w, "n,fwhm_rad,ratio_to_n1,inverse_sqrt_n,cross_fwhm_rad")?;
    for k in 1..=nmax {
        let n = FringeOrder::new(k)?;
        let cross = cross_fwhm_analytic(n).map(|c| c.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{k},{},{},{},{cross}",
            fwhm_closed_form(n),
            fwhm_ratio(n),
            1.0 / (k as f64).sqrt()
        )?;
    }
    Ok(())
}

/// Provenance record written next to every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub config: Option<ScanConfig>,
    pub output_dir: PathBuf,
    pub format_version: String,
}

impl RunManifest {
    pub fn new(command: &str, config_path: Option<PathBuf>, config: Option<ScanConfig>, output_dir: PathBuf) -> Self {
        RunManifest {
            command: command.to_string(),
            config_path,
            config,
            output_dir,
            format_version: FORMAT_VERSION.to_string(),
        }
    }
}

/// Files produced by one command.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OutputBundle {
    pub scan_csv: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub event_dump: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub format_version: String,
    pub master_seed: u64,
    pub software_version: String,
    pub created_unix: Option<u64>,
    pub runtime_seconds: f64,
    pub mode: DetectionMode,
    pub topology: Topology,
    pub order: u32,
    pub repetitions: u32,
    pub singles_rates: Vec<f64>,
    pub total_counts: f64,
    pub peak_value: f64,
    pub saturated: bool,
    pub warnings: Vec<String>,
}

impl SimulationSummary {
    pub fn from_scan(scan: &ScanResult, runtime_seconds: f64) -> Self {
        let mut warnings = Vec::new();
        if scan.saturated {
            warnings.push("detector saturation: incident rate beyond the linear range at some scan points".into());
        }
        SimulationSummary {
            format_version: FORMAT_VERSION.to_string(),
            master_seed: scan.metadata.master_seed,
            software_version: scan.metadata.software_version.clone(),
            created_unix: scan.metadata.created_unix,
            runtime_seconds,
            mode: scan.config.mode,
            topology: scan.config.topology,
            order: scan.config.coincidence.order.get(),
            repetitions: scan.config.effective_averages(),
            singles_rates: scan.singles_rates.clone(),
            total_counts: scan.total_counts(),
            peak_value: scan.peak().map_or(0.0, |p| p.raw_value),
            saturated: scan.saturated,
            warnings,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub format_version: String,
    pub input: Option<PathBuf>,
    pub tolerance: ValidationTolerance,
    pub entries: Vec<ValidationEntry>,
    /// Widths relative to n = 1; empty unless n = 1 was analysed.
    pub ratios: Vec<RatioRow>,
    pub pass: bool,
}

impl AnalysisReport {
    pub fn new(input: Option<PathBuf>, report: ValidationReport) -> Self {
        AnalysisReport {
            format_version: FORMAT_VERSION.to_string(),
            input,
            pass: report.passed(),
            tolerance: report.tolerance,
            entries: report.entries,
            ratios: report.ratios,
        }
    }
}

pub fn write_json<W: Write, T: Serialize>(mut w: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Parse(format!("json: {e}")))?;
    writeln!(w)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::PhaseAngle;
    use crate::fringe::{compare_to_analytic, estimate_fwhm, normalize_pattern, ValidationTolerance};
    use crate::runner::{predict_scan, run_scan};
    use std::f64::consts::PI;

    fn n(k: u32) -> FringeOrder {
        FringeOrder::new(k).unwrap()
    }

    #[test]
    fn config_round_trip() {
        let mut cfg = ScanConfig::default();
        cfg.master_seed = 42;
        cfg.topology = Topology::CrossAb;
        cfg.coincidence.order = n(4);
        let text = config_to_toml(&cfg).unwrap();
        assert_eq!(parse_config(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_config_uses_defaults() {
        let cfg = parse_config("steps = 10\n[coincidence]\norder = 2\n").unwrap();
        assert_eq!(cfg.steps, 10);
        assert_eq!(cfg.coincidence.order, n(2));
        assert_eq!(cfg.beam.rate, 2.0e7);
    }

    #[test]
    fn config_errors_name_the_field() {
        let e = parse_config("steps = 1\n").unwrap_err().to_string();
        assert!(e.contains("steps"), "{e}");
        let e = parse_config("[beam]\nrat = 3\n").unwrap_err().to_string();
        assert!(e.contains("rat"), "{e}");
        let e = parse_config("topology = \"cross_ab\"\n[coincidence]\norder = 3\n").unwrap_err().to_string();
        assert!(e.contains("even"), "{e}");
    }

    fn small_scan() -> ScanResult {
        let mut cfg = ScanConfig::default();
        cfg.steps = 7;
        cfg.dwell_ps = 1_000_000_000;
        cfg.master_seed = 5;
        run_scan(&cfg).unwrap()
    }

    #[test]
    fn scan_csv_round_trip() {
        let scan = small_scan();
        let mut buf = Vec::new();
        write_scan_csv(&mut buf, &scan).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# mzi-ncoinc scan v1\n"));
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 8);
        let table = read_csv(buf.as_slice()).unwrap();
        assert_eq!(table.config.as_ref(), Some(&scan.config));
        assert_eq!(table.rows.len(), 7);
        assert_eq!(table.column("phase_rad").unwrap(), scan.config.phase_grid());
        let p = table.pattern(n(1)).unwrap();
        assert_eq!(p.poisson_scale, Some(1.0));
        assert_eq!(p.values, scan.points.iter().map(|p| p.raw_value).collect::<Vec<_>>());
        let max = table.column("normalized_value").unwrap().into_iter().fold(0.0, f64::max);
        assert_eq!(max, 1.0);
    }

    #[test]
    fn missing_columns_are_listed() {
        let text = "# mzi-ncoinc scan v1\nphase_rad,raw_value\n0,1\n";
        let t = read_csv(text.as_bytes()).unwrap();
        match t.pattern(n(1)) {
            Err(Error::SchemaMismatch(cols)) => assert_eq!(cols, vec!["stat_error", "normalized_value"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn predict_output_analyses_to_closed_forms() {
        let orders: Vec<FringeOrder> = (1..=4).map(n).collect();
        let p = predict_patterns(&orders, Topology::SinglePortA, -2.0 * PI, 2.0 * PI, 360).unwrap();
        let mut buf = Vec::new();
        write_predict_csv(&mut buf, &p).unwrap();
        let table = read_csv(buf.as_slice()).unwrap();
        assert_eq!(table.rows.len(), 360);
        assert_eq!(table.topology, Some(Topology::SinglePortA));
        let col = table.column("intensity_n1").unwrap();
        let peak = table.rows.iter().zip(&col).max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        assert!((peak.1 - 1.0).abs() < 1e-3);
        for k in 1..=4 {
            let pat = normalize_pattern(&table.pattern(n(k)).unwrap()).unwrap();
            let w = estimate_fwhm(&pat, 0.0).unwrap().width;
            assert!((w - fwhm_closed_form(n(k))).abs() < 2e-3);
            let e = compare_to_analytic(&pat, n(k), Topology::SinglePortA, 1.0, &ValidationTolerance::analytic()).unwrap();
            assert!(e.pass);
        }
        assert!(matches!(table.pattern(n(5)), Err(Error::SchemaMismatch(_))));
    }

    #[test]
    fn cross_prediction_has_zeros() {
        let p = predict_patterns(&[n(4)], Topology::CrossAb, -PI, PI, 3).unwrap();
        assert_eq!(p.phases, vec![-PI, 0.0, PI]);
        for v in &p.columns[0] {
            assert!(v.abs() < 1e-30);
        }
        let q = predict_patterns(&[n(4)], Topology::CrossAb, 0.0, PI, 3).unwrap();
        assert!((q.columns[0][1] - 1.0).abs() < 1e-12);
        assert!(predict_patterns(&[n(3)], Topology::CrossAb, 0.0, PI, 3).is_err());
    }

    #[test]
    fn fwhm_table_values() {
        let mut buf = Vec::new();
        write_fwhm_table(&mut buf, 4).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows: Vec<Vec<&str>> = text.lines().skip(3).map(|l| l.split(',').collect()).collect();
        let w: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
        for (got, want) in w.iter().zip([PI, 2.28744, 1.88591, 1.64117]) {
            assert!((got - want).abs() < 1e-5);
        }
        assert_eq!(rows[0][4], "");
        assert!((rows[3][4].parse::<f64>().unwrap() - 1.14372).abs() < 1e-5);
    }

    #[test]
    fn predicted_scan_is_not_treated_as_counts() {
        let mut cfg = ScanConfig::default();
        cfg.steps = 5;
        cfg.phase_start = PhaseAngle::new(-1.0).unwrap();
        cfg.phase_end = PhaseAngle::new(1.0).unwrap();
        let mut buf = Vec::new();
        write_scan_csv(&mut buf, &predict_scan(&cfg).unwrap()).unwrap();
        let t = read_csv(buf.as_slice()).unwrap();
        assert!(t.predicted);
        assert_eq!(t.pattern(n(1)).unwrap().poisson_scale, None);
    }

    #[test]
    fn topology_names() {
        for t in [Topology::SinglePortA, Topology::CrossAb] {
            assert_eq!(parse_topology(topology_name(t)).unwrap(), t);
        }
        assert!(parse_topology("diagonal").is_err());
    }
}
