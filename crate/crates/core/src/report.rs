//! Result persistence: run manifests and CSV tables.
//!
//! Every output directory carries a `manifest.txt` holding the exact
//! configuration snapshot and seed that produced it; re-running from that
//! snapshot reproduces every table byte for byte. Each table starts with a
//! `# manifest: <id>` line tying it to its manifest, where the id is a
//! deterministic digest of the command and configuration (never a timestamp).
//! Floats are serialized as shortest round-trip decimals.

use crate::error::{Error, Result};
use crate::estimators::{Cav, EstimatorKind};
use crate::linalg::Matrix;
use crate::scoring::TcavResult;
use crate::seeding::child_seed;
use crate::stability::{CurveFit, SweepTarget, VariancePoint};
use crate::theory::{AsymptoticReport, SurroundReport};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const VARIANCE_HEADER: &str =
    "target,estimator,N_or_s,run,mean_variance,spread,m,r,lambda,seed,failures";
pub const CURVE_HEADER: &str = "target,a,b,residual_rms,loglog_slope,points_used";
pub const TCAV_HEADER: &str = "s,N_per_subset,run_index,T_j,T_multi,p_value,discarded_samples";

/// Deterministic 16-hex digest of a command and its configuration snapshot.
pub fn manifest_id(command: &str, config_text: &str) -> String {
    let mut acc = 0xca55_7ab1_u64;
    for b in command.bytes().chain(config_text.bytes()) {
        acc = child_seed(acc, &[b as u64]);
    }
    format!("{acc:016x}")
}

/// Parsed manifest contents.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub id: String,
    pub command: String,
    pub seed: u64,
    pub config_text: String,
}

const CONFIG_DELIMITER: &str = "--- config ---";

/// Write `manifest.txt` into the output directory and return the manifest id.
pub fn write_manifest(dir: &Path, command: &str, seed: u64, config_text: &str) -> Result<String> {
    let id = manifest_id(command, config_text);
    let created = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let mut text = String::new();
    text.push_str(&format!("manifest_id: {id}\n"));
    text.push_str(&format!(
        "artifact_version: {}\n",
        env!("CARGO_PKG_VERSION")
    ));
    text.push_str(&format!("command: {command}\n"));
    text.push_str(&format!("seed: {seed}\n"));
    text.push_str(&format!("created_unix: {created}\n"));
    text.push_str(CONFIG_DELIMITER);
    text.push('\n');
    text.push_str(config_text);
    fs::create_dir_all(dir)?;
    fs::write(dir.join("manifest.txt"), text)?;
    Ok(id)
}

/// Read a manifest back; the config snapshot is returned verbatim.
pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read manifest {}: {e}", path.display())))?;
    let Some((head, config_text)) = text.split_once(&format!("{CONFIG_DELIMITER}\n")) else {
        return Err(Error::Config(
            "manifest is missing the config delimiter".into(),
        ));
    };
    let mut id = None;
    let mut command = None;
    let mut seed = None;
    for line in head.lines() {
        let Some((key, value)) = line.split_once(':') else {
            continue;
        };
        match key.trim() {
            "manifest_id" => id = Some(value.trim().to_string()),
            "command" => command = Some(value.trim().to_string()),
            "seed" => {
                seed = Some(value.trim().parse().map_err(|_| {
                    Error::Config(format!(
                        "manifest seed '{}' is not an integer",
                        value.trim()
                    ))
                })?)
            }
            _ => {}
        }
    }
    Ok(Manifest {
        id: id.ok_or_else(|| Error::Config("manifest missing manifest_id".into()))?,
        command: command.ok_or_else(|| Error::Config("manifest missing command".into()))?,
        seed: seed.ok_or_else(|| Error::Config("manifest missing seed".into()))?,
        config_text: config_text.to_string(),
    })
}

/// Metadata columns repeated on every variance row.
#[derive(Debug, Clone)]
pub struct VarianceTableMeta {
    pub target: SweepTarget,
    pub estimator: EstimatorKind,
    pub m: usize,
    pub r: usize,
    pub lambda: f64,
    pub seed: u64,
    pub failures: usize,
}

/// Write a variance table: one row per grid value per run, carrying that
/// run's variance sample in `mean_variance`; `spread` repeats the across-run
/// standard deviation of the grid value. The across-run mean is exactly the
/// mean of a grid value's rows.
pub fn write_variance_table(
    path: &Path,
    id: &str,
    points: &[VariancePoint],
    meta: &VarianceTableMeta,
) -> Result<()> {
    let mut text = format!("# manifest: {id}\n{VARIANCE_HEADER}\n");
    for p in points {
        for (run, value) in p.per_run.iter().enumerate() {
            text.push_str(&format!(
                "{},{},{},{run},{value},{},{},{},{},{},{}\n",
                meta.target.as_str(),
                meta.estimator.as_str(),
                p.x,
                p.spread,
                meta.m,
                meta.r,
                meta.lambda,
                meta.seed,
                meta.failures,
            ));
        }
    }
    fs::write(path, text)?;
    Ok(())
}

/// One parsed variance-table row.
#[derive(Debug, Clone)]
pub struct VarianceRow {
    pub target: String,
    pub estimator: String,
    pub x: f64,
    pub run: usize,
    pub value: f64,
    pub spread: f64,
}

/// Read a variance table produced by [`write_variance_table`].
pub fn read_variance_table(path: &Path) -> Result<Vec<VarianceRow>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read table {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    let mut saw_header = false;
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !saw_header {
            if line != VARIANCE_HEADER {
                return Err(Error::Ingest {
                    row: idx + 1,
                    message: format!("unexpected variance header '{line}'"),
                });
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 11 {
            return Err(Error::Ingest {
                row: idx + 1,
                message: format!("expected 11 fields, found {}", fields.len()),
            });
        }
        let parse_f = |s: &str, what: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Ingest {
                row: idx + 1,
                message: format!("bad {what} '{s}'"),
            })
        };
        rows.push(VarianceRow {
            target: fields[0].to_string(),
            estimator: fields[1].to_string(),
            x: parse_f(fields[2], "N_or_s")?,
            run: fields[3].parse().map_err(|_| Error::Ingest {
                row: idx + 1,
                message: format!("bad run index '{}'", fields[3]),
            })?,
            value: parse_f(fields[4], "mean_variance")?,
            spread: parse_f(fields[5], "spread")?,
        });
    }
    if !saw_header {
        return Err(Error::Ingest {
            row: 1,
            message: "missing variance header".into(),
        });
    }
    Ok(rows)
}

/// Regroup variance rows into points (sorted by grid value, runs in order).
pub fn group_variance_rows(rows: &[VarianceRow]) -> Vec<VariancePoint> {
    let mut xs: Vec<f64> = rows.iter().map(|r| r.x).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs.dedup();
    xs.iter()
        .map(|&x| {
            let mut group: Vec<&VarianceRow> = rows.iter().filter(|r| r.x == x).collect();
            group.sort_by_key(|r| r.run);
            let per_run: Vec<f64> = group.iter().map(|r| r.value).collect();
            let mean_variance = crate::stats::mean(&per_run);
            let spread = if per_run.len() >= 2 {
                crate::stats::sample_std(&per_run)
            } else {
                0.0
            };
            VariancePoint {
                x,
                mean_variance,
                spread,
                per_run,
            }
        })
        .collect()
}

/// Write curve fits, one row per target.
pub fn write_curve_table(path: &Path, id: &str, fits: &[(SweepTarget, CurveFit)]) -> Result<()> {
    let mut text = format!("# manifest: {id}\n{CURVE_HEADER}\n");
    for (target, fit) in fits {
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            target.as_str(),
            fit.a,
            fit.b,
            fit.residual_rms,
            fit.loglog_slope,
            fit.points_used
        ));
    }
    fs::write(path, text)?;
    Ok(())
}

/// Read the first curve fit from a curve table.
pub fn read_curve_table(path: &Path) -> Result<Vec<(String, CurveFit)>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read table {}: {e}", path.display())))?;
    let mut out = Vec::new();
    let mut saw_header = false;
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !saw_header {
            if line != CURVE_HEADER {
                return Err(Error::Ingest {
                    row: idx + 1,
                    message: format!("unexpected curve header '{line}'"),
                });
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Ingest {
                row: idx + 1,
                message: format!("expected 6 fields, found {}", fields.len()),
            });
        }
        let parse_f = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Ingest {
                row: idx + 1,
                message: format!("bad number '{s}'"),
            })
        };
        out.push((
            fields[0].to_string(),
            CurveFit {
                a: parse_f(fields[1])?,
                b: parse_f(fields[2])?,
                residual_rms: parse_f(fields[3])?,
                loglog_slope: parse_f(fields[4])?,
                points_used: fields[5].parse().map_err(|_| Error::Ingest {
                    row: idx + 1,
                    message: format!("bad points_used '{}'", fields[5]),
                })?,
            },
        ));
    }
    Ok(out)
}

/// Write fitted CAVs: `estimator,lambda,n,N,seed,alpha,beta_0..beta_{d-1}`,
/// with `alpha` reported in the uncentered convention.
pub fn write_cav_table(path: &Path, id: &str, cavs: &[Cav]) -> Result<()> {
    if cavs.is_empty() {
        return Err(Error::Domain("no CAVs to write".into()));
    }
    let d = cavs[0].dim();
    let mut header = String::from("estimator,lambda,n,N,seed,alpha");
    for k in 0..d {
        header.push_str(&format!(",beta_{k}"));
    }
    let mut text = format!("# manifest: {id}\n{header}\n");
    for cav in cavs {
        if cav.dim() != d {
            return Err(Error::ShapeMismatch {
                expected: d,
                got: cav.dim(),
            });
        }
        text.push_str(&format!(
            "{},{},{},{},{},{}",
            cav.estimator.as_str(),
            cav.lambda,
            cav.n_concept,
            cav.n_reference,
            cav.seed,
            cav.alpha_uncentered()
        ));
        for b in &cav.beta {
            text.push_str(&format!(",{b}"));
        }
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// Write a TCAV result: one row per subset run.
pub fn write_tcav_table(path: &Path, id: &str, result: &TcavResult) -> Result<()> {
    let mut text = format!("# manifest: {id}\n{TCAV_HEADER}\n");
    let p_value = result.p_value.map(|p| p.to_string()).unwrap_or_default();
    for (j, t) in result.per_run_scores.iter().enumerate() {
        text.push_str(&format!(
            "{},{},{j},{t},{},{p_value},{}\n",
            result.s, result.n_per_subset, result.multi_run_mean, result.discarded_samples
        ));
    }
    fs::write(path, text)?;
    Ok(())
}

/// Write a matrix as CSV with columns `c0..c{d-1}`.
pub fn write_matrix_csv(path: &Path, id: &str, matrix: &Matrix) -> Result<()> {
    let mut header = String::new();
    for k in 0..matrix.cols {
        if k > 0 {
            header.push(',');
        }
        header.push_str(&format!("c{k}"));
    }
    let mut text = format!("# manifest: {id}\n{header}\n");
    for i in 0..matrix.rows {
        for j in 0..matrix.cols {
            if j > 0 {
                text.push(',');
            }
            text.push_str(&format!("{}", matrix[(i, j)]));
        }
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// Write the 2-component projection behind the surround visualization.
pub fn write_scatter_csv(path: &Path, id: &str, points: &[(f64, f64)]) -> Result<()> {
    let mut text = format!("# manifest: {id}\npc1,pc2\n");
    for (a, b) in points {
        text.push_str(&format!("{a},{b}\n"));
    }
    fs::write(path, text)?;
    Ok(())
}

/// Structured text report of the theory checks (key: value lines).
pub fn write_theory_report(
    path: &Path,
    id: &str,
    surround: Option<&SurroundReport>,
    asymptotics: Option<&AsymptoticReport>,
    dom_closed_form: Option<(f64, usize, f64)>,
) -> Result<()> {
    let mut text = format!("# manifest: {id}\n");
    if let Some(s) = surround {
        text.push_str("[surround]\n");
        text.push_str(&format!("epsilon: {}\n", s.epsilon));
        text.push_str(&format!("num_directions: {}\n", s.num_directions));
        text.push_str(&format!("directions_tested: {}\n", s.directions_tested));
        text.push_str(&format!("min_cap_mass: {}\n", s.min_cap_mass));
        text.push_str(&format!("min_halfspace_mass: {}\n", s.min_halfspace_mass));
        text.push_str(&format!(
            "min_positive_part_mean: {}\n",
            s.min_positive_part_mean
        ));
        text.push_str(&format!("pass: {}\n", s.pass));
    }
    if let Some(a) = asymptotics {
        text.push_str("[logistic_asymptotics]\n");
        text.push_str(&format!("n_ref: {}\n", a.n_ref));
        text.push_str(&format!("alpha_ref: {}\n", a.alpha_ref));
        text.push_str(&format!("a0_estimate: {}\n", a.a0_estimate));
        text.push_str(&format!(
            "beta0_ref: {}\n",
            a.beta0_ref
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(",")
        ));
        text.push_str(&format!("h0_min_eigenvalue: {}\n", a.h0.min_eigenvalue));
        text.push_str(&format!("h0_condition_number: {}\n", a.h0.condition_number));
        text.push_str(&format!("trace_sigma: {}\n", a.trace_sigma));
    }
    if let Some((trace_sigma_z, n, value)) = dom_closed_form {
        text.push_str("[dom_closed_form]\n");
        text.push_str(&format!("trace_sigma_z: {trace_sigma_z}\n"));
        text.push_str(&format!("n_reference: {n}\n"));
        text.push_str(&format!("variance: {value}\n"));
    }
    fs::write(path, text)?;
    Ok(())
}

/// Output paths of a pipeline run.
#[derive(Debug, Clone)]
pub struct ResultBundle {
    pub dir: PathBuf,
    pub manifest_id: String,
    pub files: Vec<PathBuf>,
}

impl ResultBundle {
    pub fn new(dir: &Path, manifest_id: String) -> Self {
        ResultBundle {
            dir: dir.to_path_buf(),
            manifest_id,
            files: Vec::new(),
        }
    }

    pub fn record(&mut self, path: PathBuf) {
        self.files.push(path);
    }
}

/// Create the directory and refuse to scatter writes outside it.
pub fn prepare_output_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Helper for writers that need a file handle.
#[allow(dead_code)]
pub(crate) fn create_file(path: &Path) -> Result<fs::File> {
    Ok(fs::File::create(path)?)
}

#[allow(dead_code)]
pub(crate) fn write_all(mut f: fs::File, bytes: &[u8]) -> Result<()> {
    f.write_all(bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stability::VariancePoint;

    fn temp_dir(name: &str) -> PathBuf {
        let mut p = std::env::temp_dir();
        p.push(format!("cavstab_report_{}_{name}", std::process::id()));
        fs::create_dir_all(&p).unwrap();
        p
    }

    #[test]
    fn schema_headers_are_pinned() {
        assert_eq!(
            VARIANCE_HEADER,
            "target,estimator,N_or_s,run,mean_variance,spread,m,r,lambda,seed,failures"
        );
        assert_eq!(
            CURVE_HEADER,
            "target,a,b,residual_rms,loglog_slope,points_used"
        );
        assert_eq!(
            TCAV_HEADER,
            "s,N_per_subset,run_index,T_j,T_multi,p_value,discarded_samples"
        );
    }

    #[test]
    fn manifest_round_trip() {
        let dir = temp_dir("manifest");
        let config = "[scenario]\nkind = borderline\ndim = 3\n\n[estimator]\nkind = dom\n";
        let id = write_manifest(&dir, "sweep", 42, config).unwrap();
        let manifest = read_manifest(&dir.join("manifest.txt")).unwrap();
        assert_eq!(manifest.id, id);
        assert_eq!(manifest.command, "sweep");
        assert_eq!(manifest.seed, 42);
        assert_eq!(manifest.config_text, config);
        // The id is a pure function of command + config.
        assert_eq!(id, manifest_id("sweep", config));
        assert_ne!(id, manifest_id("multirun", config));
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn variance_table_round_trips_through_grouping() {
        let dir = temp_dir("variance");
        let points = vec![
            VariancePoint {
                x: 10.0,
                mean_variance: 0.2,
                spread: 0.1,
                per_run: vec![0.1, 0.3],
            },
            VariancePoint {
                x: 20.0,
                mean_variance: 0.15,
                spread: 0.05,
                per_run: vec![0.1, 0.2],
            },
        ];
        let meta = VarianceTableMeta {
            target: SweepTarget::CavVariance,
            estimator: EstimatorKind::Dom,
            m: 10,
            r: 2,
            lambda: 0.0,
            seed: 7,
            failures: 0,
        };
        let path = dir.join("variance.csv");
        write_variance_table(&path, "deadbeef00000000", &points, &meta).unwrap();
        let rows = read_variance_table(&path).unwrap();
        assert_eq!(rows.len(), 4);
        let grouped = group_variance_rows(&rows);
        assert_eq!(grouped.len(), 2);
        assert_eq!(grouped[0].per_run, vec![0.1, 0.3]);
        assert!((grouped[0].mean_variance - 0.2).abs() < 1e-15);
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn curve_table_round_trips() {
        let dir = temp_dir("curve");
        let fit = CurveFit {
            a: 2.0,
            b: 0.5,
            residual_rms: 0.0,
            loglog_slope: -1.0,
            points_used: 3,
        };
        let path = dir.join("curve.csv");
        write_curve_table(&path, "api", &[(SweepTarget::CavVariance, fit.clone())]).unwrap();
        let back = read_curve_table(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].0, "cav_variance");
        assert_eq!(back[0].1, fit);
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn cav_table_reports_uncentered_alpha() {
        let dir = temp_dir("cavs");
        let cav = Cav {
            beta: vec![2.0, 0.0],
            alpha: 1.0,
            center: vec![0.5, 0.0],
            estimator: EstimatorKind::Logistic,
            lambda: 1.0,
            n_concept: 3,
            n_reference: 10,
            seed: 9,
            a_n: Some(10.0 * 1.0f64.exp()),
        };
        let path = dir.join("cavs.csv");
        write_cav_table(&path, "id", &[cav]).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("# manifest:"));
        assert_eq!(
            lines.next().unwrap(),
            "estimator,lambda,n,N,seed,alpha,beta_0,beta_1"
        );
        // alpha_uncentered = 1.0 - (2.0 * 0.5) = 0.
        assert_eq!(lines.next().unwrap(), "logistic,1,3,10,9,0,2,0");
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn tcav_table_has_one_row_per_run() {
        let dir = temp_dir("tcav");
        let result = TcavResult {
            score: 0.5,
            per_run_scores: vec![0.4, 0.6],
            multi_run_mean: 0.5,
            p_value: Some(0.125),
            s: 2,
            n_per_subset: 50,
            discarded_samples: 3,
        };
        let path = dir.join("tcav.csv");
        write_tcav_table(&path, "id", &result).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[2], "2,50,0,0.4,0.5,0.125,3");
        assert_eq!(lines[3], "2,50,1,0.6,0.5,0.125,3");
        fs::remove_dir_all(&dir).ok();
    }
}
