//! File formats.
//!
//! * `dataset.tsv`: header `sample_id, treatment, <probe ids>`, then one row
//!   per sample with its id, treatment label and proportions.
//! * `positions.tsv`: header `probe_id, position`, one row per probe.
//! * `truth.tsv`: per-probe ground truth of a simulated dataset.
//! * `trace.csv`, `posterior_summary.tsv`, `scores.tsv`: fit outputs.
//! * configs and reports: pretty JSON with a trailing newline.
//!
//! Every write goes to a temporary file in the target directory that is
//! renamed into place, so an interrupted run never leaves a truncated file.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::data::Dataset;
use crate::detection::PosteriorSummary;
use crate::error::{Error, Result};
use crate::franchise::Cuisine;
use crate::mcmc::TraceRow;
use crate::simgen::SimTruth;

pub const DATASET_FILE: &str = "dataset.tsv";
pub const POSITIONS_FILE: &str = "positions.tsv";
pub const TRUTH_FILE: &str = "truth.tsv";
pub const CONFIG_ECHO_FILE: &str = "config-echo.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const SUMMARY_FILE: &str = "posterior_summary.tsv";
pub const EVIDENCE_FILE: &str = "evidence.json";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";
pub const SCORES_FILE: &str = "scores.tsv";

/// Writes `bytes` to `path` through a temporary sibling file and a rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Pretty JSON followed by a newline.
pub fn to_json_text<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Validation(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    atomic_write(path, to_json_text(value)?.as_bytes())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Parses JSON text; errors carry the line of the offending token.
pub fn parse_json<T: DeserializeOwned>(text: &str, path: &Path) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    parse_json(&read_text(path)?, path)
}

/// Non-empty lines of a tab-separated file, numbered from 1.
fn tsv_rows(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r').split('\t').collect()))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: usize, what: &str, s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("cannot parse {what} from {s:?}")))
}

/// Writes `dataset.tsv` and `positions.tsv` into `dir`.
pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    let mut s = String::from("sample_id\ttreatment");
    for id in &ds.probe_ids {
        s.push('\t');
        s.push_str(id);
    }
    s.push('\n');
    for i in 0..ds.n {
        write!(s, "{}\t{}", ds.sample_ids[i], ds.treatments[i]).unwrap();
        for j in 0..ds.p {
            write!(s, "\t{}", ds.value(i, j)).unwrap();
        }
        s.push('\n');
    }
    atomic_write(&dir.join(DATASET_FILE), s.as_bytes())?;

    let mut s = String::from("probe_id\tposition\n");
    for (id, pos) in ds.probe_ids.iter().zip(&ds.positions) {
        writeln!(s, "{id}\t{pos}").unwrap();
    }
    atomic_write(&dir.join(POSITIONS_FILE), s.as_bytes())
}

/// Reads `positions.tsv` into `(probe_ids, positions)`.
pub fn read_positions(path: &Path) -> Result<(Vec<String>, Vec<u64>)> {
    let text = read_text(path)?;
    let mut ids = Vec::new();
    let mut pos = Vec::new();
    for (line, cols) in tsv_rows(&text).skip(1) {
        if cols.len() != 2 {
            return Err(parse_err(path, line, format!("expected 2 columns, found {}", cols.len())));
        }
        ids.push(cols[0].to_string());
        pos.push(parse_field(path, line, "a position", cols[1])?);
    }
    Ok((ids, pos))
}

/// Reads a dataset and its probe coordinates. Probe ids must agree between
/// the two files.
pub fn read_dataset(dataset_path: &Path, positions_path: &Path) -> Result<Dataset> {
    let text = read_text(dataset_path)?;
    let mut rows = tsv_rows(&text);
    let (hline, header) = rows.next().ok_or_else(|| parse_err(dataset_path, 1, "empty dataset file"))?;
    if header.len() < 3 {
        return Err(parse_err(dataset_path, hline, "header needs sample_id, treatment and at least one probe"));
    }
    let probe_ids: Vec<String> = header[2..].iter().map(|s| s.to_string()).collect();
    let p = probe_ids.len();
    let mut values = Vec::new();
    let mut treatments = Vec::new();
    let mut sample_ids = Vec::new();
    for (line, cols) in rows {
        if cols.len() != p + 2 {
            return Err(parse_err(
                dataset_path,
                line,
                format!("expected {} columns, found {}", p + 2, cols.len()),
            ));
        }
        sample_ids.push(cols[0].to_string());
        treatments.push(parse_field::<usize>(dataset_path, line, "a treatment label", cols[1])?);
        for c in &cols[2..] {
            let v: f64 = parse_field(dataset_path, line, "a proportion", c)?;
            if !(0.0..=1.0).contains(&v) {
                return Err(parse_err(dataset_path, line, format!("value {v} is not a proportion")));
            }
            values.push(v);
        }
    }
    let n = sample_ids.len();
    if n == 0 {
        return Err(parse_err(dataset_path, hline, "dataset has no samples"));
    }
    let (pos_ids, positions) = read_positions(positions_path)?;
    if pos_ids != probe_ids {
        let missing: Vec<&str> = probe_ids
            .iter()
            .filter(|id| !pos_ids.contains(id))
            .map(String::as_str)
            .collect();
        return Err(Error::Structure(format!(
            "{} and {} list different probes (unmatched: {})",
            dataset_path.display(),
            positions_path.display(),
            if missing.is_empty() { "order differs".to_string() } else { missing.join(", ") }
        )));
    }
    let mut ds = Dataset::new(values, n, p, treatments, positions)?.with_ids(probe_ids, sample_ids)?;
    ds.meta = dataset_path
        .parent()
        .and_then(|d| d.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(ds)
}

fn state_label(c: Cuisine) -> u8 {
    match c {
        Cuisine::NonDifferential => 1,
        Cuisine::Differential => 2,
    }
}

/// Writes `truth.tsv`: probe id, differential state (1 or 2), methylation
/// chain state, probe effect and the `T` treatment effects.
pub fn write_truth(path: &Path, probe_ids: &[String], truth: &SimTruth) -> Result<()> {
    let t = truth.theta_true.first().map_or(0, Vec::len);
    let mut s = String::from("probe_id\ts_true\th_true\tchi_true");
    for k in 1..=t {
        write!(s, "\ttheta_{k}").unwrap();
    }
    s.push('\n');
    for (j, id) in probe_ids.iter().enumerate() {
        write!(
            s,
            "{id}\t{}\t{}\t{}",
            state_label(truth.s_true[j]),
            truth.h_true[j],
            truth.chi_true[j]
        )
        .unwrap();
        for v in &truth.theta_true[j] {
            write!(s, "\t{v}").unwrap();
        }
        s.push('\n');
    }
    atomic_write(path, s.as_bytes())
}

/// Probe ids and differential flags of a truth file.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthTable {
    pub probe_ids: Vec<String>,
    pub differential: Vec<bool>,
}

pub fn read_truth(path: &Path) -> Result<TruthTable> {
    let text = read_text(path)?;
    let mut rows = tsv_rows(&text);
    let (hline, header) = rows.next().ok_or_else(|| parse_err(path, 1, "empty truth file"))?;
    let col = header
        .iter()
        .position(|h| *h == "s_true")
        .ok_or_else(|| parse_err(path, hline, "missing s_true column"))?;
    let mut out = TruthTable {
        probe_ids: Vec::new(),
        differential: Vec::new(),
    };
    for (line, cols) in rows {
        if cols.len() != header.len() {
            return Err(parse_err(path, line, format!("expected {} columns, found {}", header.len(), cols.len())));
        }
        let s: u8 = parse_field(path, line, "a differential state", cols[col])?;
        if !(s == 1 || s == 2) {
            return Err(parse_err(path, line, format!("differential state must be 1 or 2, got {s}")));
        }
        out.probe_ids.push(cols[0].to_string());
        out.differential.push(s == 2);
    }
    Ok(out)
}

pub fn write_trace(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut s = String::from("iteration,log_likelihood,sigma2,rho1,gamma,eta,d2,q,n_differential,log_odds_eta\n");
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.iteration, r.log_likelihood, r.sigma2, r.rho1, r.gamma, r.eta, r.d2, r.q, r.n_differential, r.log_odds_eta
        )
        .unwrap();
    }
    atomic_write(path, s.as_bytes())
}

/// Writes the per-probe posterior summary: differential probability, call,
/// the treatment pair with the largest posterior-mean contrast (`up` above
/// `down`) and the posterior mean of every treatment effect.
pub fn write_posterior_summary(path: &Path, ds: &Dataset, summary: &PosteriorSummary, theta_means: &[Vec<f64>]) -> Result<()> {
    let t = theta_means.first().map_or(0, Vec::len);
    let mut s = String::from("probe_id\tposition\tomega_hat\tcalled\tup\tdown\tdifference");
    for k in 1..=t {
        write!(s, "\ttheta_mean_{k}").unwrap();
    }
    s.push('\n');
    for j in 0..ds.p {
        let c = &summary.contrasts[j];
        write!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            ds.probe_ids[j],
            ds.positions[j],
            summary.omega_hat[j],
            summary.called[j] as u8,
            c.up,
            c.down,
            c.difference
        )
        .unwrap();
        for v in &theta_means[j] {
            write!(s, "\t{v}").unwrap();
        }
        s.push('\n');
    }
    atomic_write(path, s.as_bytes())
}

/// Scores of one method on one replicate. Higher scores mean stronger
/// evidence of a differential probe.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodScores {
    pub method: String,
    pub probe_ids: Vec<String>,
    pub scores: Vec<f64>,
    /// Discovery calls, when the method makes them.
    pub called: Option<Vec<bool>>,
}

/// Reads `posterior_summary.tsv` as the scores of the sampler.
pub fn read_posterior_summary(path: &Path) -> Result<MethodScores> {
    let text = read_text(path)?;
    let mut rows = tsv_rows(&text);
    let (hline, header) = rows.next().ok_or_else(|| parse_err(path, 1, "empty summary file"))?;
    let find = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| parse_err(path, hline, format!("missing {name} column")))
    };
    let (w_col, c_col) = (find("omega_hat")?, find("called")?);
    let mut out = MethodScores {
        method: "stickydiff".into(),
        probe_ids: Vec::new(),
        scores: Vec::new(),
        called: Some(Vec::new()),
    };
    for (line, cols) in rows {
        if cols.len() != header.len() {
            return Err(parse_err(path, line, format!("expected {} columns, found {}", header.len(), cols.len())));
        }
        out.probe_ids.push(cols[0].to_string());
        out.scores.push(parse_field(path, line, "omega_hat", cols[w_col])?);
        let c: u8 = parse_field(path, line, "a call flag", cols[c_col])?;
        out.called.as_mut().unwrap().push(c == 1);
    }
    Ok(out)
}

/// Reads `scores.tsv`: header `probe_id, <method name>`, one score per probe.
pub fn read_scores(path: &Path) -> Result<MethodScores> {
    let text = read_text(path)?;
    let mut rows = tsv_rows(&text);
    let (hline, header) = rows.next().ok_or_else(|| parse_err(path, 1, "empty scores file"))?;
    if header.len() != 2 {
        return Err(parse_err(path, hline, "header must be: probe_id, <method name>"));
    }
    let mut out = MethodScores {
        method: header[1].trim().to_string(),
        probe_ids: Vec::new(),
        scores: Vec::new(),
        called: None,
    };
    for (line, cols) in rows {
        if cols.len() != 2 {
            return Err(parse_err(path, line, format!("expected 2 columns, found {}", cols.len())));
        }
        out.probe_ids.push(cols[0].to_string());
        out.scores.push(parse_field(path, line, "a score", cols[1])?);
    }
    Ok(out)
}

/// The dataset stored next to `truth_path`, if any.
pub fn sibling_dataset(truth_path: &Path) -> Option<(PathBuf, PathBuf)> {
    let dir = truth_path.parent()?;
    let (d, p) = (dir.join(DATASET_FILE), dir.join(POSITIONS_FILE));
    (d.is_file() && p.is_file()).then_some((d, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::{generate_dataset_seeded, SimConfig};

    fn small() -> (Dataset, SimTruth) {
        let cfg = SimConfig {
            p: 6,
            n_treatments: 2,
            n_per_treatment: 2,
            truncation_l: 10,
            eta_0: 0.0,
            ..SimConfig::default()
        };
        generate_dataset_seeded(&cfg, 3).unwrap()
    }

    #[test]
    fn dataset_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let (ds, truth) = small();
        write_dataset(dir.path(), &ds).unwrap();
        let mut back = read_dataset(&dir.path().join(DATASET_FILE), &dir.path().join(POSITIONS_FILE)).unwrap();
        back.meta.clear();
        assert_eq!(back, ds);
        write_truth(&dir.path().join(TRUTH_FILE), &ds.probe_ids, &truth).unwrap();
        let t = read_truth(&dir.path().join(TRUTH_FILE)).unwrap();
        assert_eq!(t.probe_ids, ds.probe_ids);
        assert_eq!(t.differential, truth.differential());
    }

    #[test]
    fn malformed_rows_report_their_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(DATASET_FILE);
        fs::write(&path, "sample_id\ttreatment\ta\tb\ns1\t1\t0.5\t0.5\ns2\t2\t0.5\n").unwrap();
        fs::write(dir.path().join(POSITIONS_FILE), "probe_id\tposition\na\t1\nb\t2\n").unwrap();
        match read_dataset(&path, &dir.path().join(POSITIONS_FILE)) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn mismatched_positions_name_the_probes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(DATASET_FILE);
        fs::write(&path, "sample_id\ttreatment\ta\tb\ns1\t1\t0.5\t0.5\ns2\t2\t0.5\t0.4\n").unwrap();
        fs::write(dir.path().join(POSITIONS_FILE), "probe_id\tposition\na\t1\nc\t2\n").unwrap();
        let e = read_dataset(&path, &dir.path().join(POSITIONS_FILE)).unwrap_err();
        assert!(e.to_string().contains("unmatched: b"), "{e}");
    }

    #[test]
    fn json_errors_carry_line_numbers() {
        let e = parse_json::<crate::simgen::SimConfig>("{\n  \"schema\": \"x\"\n}\n", Path::new("c.json")).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e}");
        assert!(e.is_validation());
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.txt");
        atomic_write(&path, b"one").unwrap();
        atomic_write(&path, b"two").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
