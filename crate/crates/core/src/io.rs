//! CSV bundle format for measurement sets and estimates.
//!
//! A measurement bundle is a directory holding
//!
//! | file             | header                 |
//! |------------------|------------------------|
//! | `timestamps.csv` | `k,t`                  |
//! | `edm.csv`        | `k,i,j,value`          |
//! | `accel.csv`      | `k,node,axis,value`    |
//! | `truth.csv`      | `block,row,col,value`  |
//!
//! `accel.csv` and `truth.csv` are optional when reading. Indices are
//! zero-based, values use `.` as decimal separator and are written with the
//! shortest representation that round-trips exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::estimate::KinematicEstimate;
use crate::linalg::Matrix;
use crate::sim::{MeasurementSet, PolynomialTrajectory};

pub const TIMESTAMPS_FILE: &str = "timestamps.csv";
pub const EDM_FILE: &str = "edm.csv";
pub const ACCEL_FILE: &str = "accel.csv";
pub const TRUTH_FILE: &str = "truth.csv";

/// Serialized bundle as `(file name, contents)` pairs.
pub fn bundle_to_strings(meas: &MeasurementSet) -> Vec<(&'static str, String)> {
    let mut files = Vec::new();

    let mut ts = String::from("k,t\n");
    for (k, t) in meas.timestamps.iter().enumerate() {
        let _ = writeln!(ts, "{k},{t}");
    }
    files.push((TIMESTAMPS_FILE, ts));

    let mut edm = String::from("k,i,j,value\n");
    for (k, e) in meas.edms.iter().enumerate() {
        for i in 0..e.nrows() {
            for j in 0..e.ncols() {
                let _ = writeln!(edm, "{k},{i},{j},{}", e[(i, j)]);
            }
        }
    }
    files.push((EDM_FILE, edm));

    if let Some(accels) = &meas.accels {
        let mut acc = String::from("k,node,axis,value\n");
        for (k, a) in accels.iter().enumerate() {
            for node in 0..a.ncols() {
                for axis in 0..a.nrows() {
                    let _ = writeln!(acc, "{k},{node},{axis},{}", a[(axis, node)]);
                }
            }
        }
        files.push((ACCEL_FILE, acc));
    }

    if meas.truth.is_some() || meas.q_true.is_some() {
        let mut blocks: Vec<(String, &Matrix)> = Vec::new();
        if let Some(truth) = &meas.truth {
            for (l, y) in truth.coeffs().iter().enumerate() {
                blocks.push((format!("Y{l}"), y));
            }
        }
        if let Some(q) = &meas.q_true {
            blocks.push(("Q".into(), q));
        }
        files.push((TRUTH_FILE, blocks_to_csv(&blocks)));
    }
    files
}

pub fn write_bundle(dir: &Path, meas: &MeasurementSet) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (name, body) in bundle_to_strings(meas) {
        fs::write(dir.join(name), body)?;
    }
    Ok(())
}

pub fn read_bundle(dir: &Path) -> Result<MeasurementSet> {
    let ts_rows = read_rows(&dir.join(TIMESTAMPS_FILE), &["k", "t"])?;
    let mut timestamps = vec![f64::NAN; ts_rows.len()];
    for (file, line, row) in &ts_rows {
        let k = index(file, *line, &row[0])?;
        let slot = timestamps.get_mut(k).ok_or_else(|| Error::Parse {
            file: file.clone(),
            msg: format!("line {line}: sample index {k} out of range"),
        })?;
        *slot = number(file, *line, &row[1])?;
    }
    if timestamps.iter().any(|t| t.is_nan()) {
        return Err(parse_err(TIMESTAMPS_FILE, "missing sample indices"));
    }
    let samples = timestamps.len();

    let edm_rows = read_rows(&dir.join(EDM_FILE), &["k", "i", "j", "value"])?;
    let edms = assemble(&edm_rows, samples, None)?;

    let accel_path = dir.join(ACCEL_FILE);
    let accels = if accel_path.exists() {
        let rows = read_rows(&accel_path, &["k", "node", "axis", "value"])?;
        // stored as (k, node, axis); matrices are axis x node
        Some(assemble(&rows, samples, Some(()))?)
    } else {
        None
    };

    let truth_path = dir.join(TRUTH_FILE);
    let (truth, q_true) = if truth_path.exists() {
        let blocks = read_blocks(&truth_path)?;
        let mut coeffs = Vec::new();
        while let Some(y) = blocks.get(&format!("Y{}", coeffs.len())) {
            coeffs.push(y.clone());
        }
        let truth = if coeffs.is_empty() {
            None
        } else {
            Some(PolynomialTrajectory::new(coeffs)?)
        };
        (truth, blocks.get("Q").cloned())
    } else {
        (None, None)
    };

    let meas = MeasurementSet {
        timestamps,
        edms,
        accels,
        truth,
        q_true,
    };
    meas.validate()?;
    Ok(meas)
}

/// Builds one matrix per sample from `(k, a, b, value)` rows. With
/// `transpose` set, `a` indexes columns and `b` rows.
fn assemble(
    rows: &[(String, usize, Vec<String>)],
    samples: usize,
    transpose: Option<()>,
) -> Result<Vec<Matrix>> {
    let mut parsed = Vec::with_capacity(rows.len());
    let (mut max_a, mut max_b) = (0, 0);
    for (file, line, row) in rows {
        let k = index(file, *line, &row[0])?;
        let a = index(file, *line, &row[1])?;
        let b = index(file, *line, &row[2])?;
        let v = number(file, *line, &row[3])?;
        if k >= samples {
            return Err(Error::Parse {
                file: file.clone(),
                msg: format!("line {line}: sample {k} has no timestamp"),
            });
        }
        max_a = max_a.max(a);
        max_b = max_b.max(b);
        parsed.push((k, a, b, v));
    }
    let (nr, nc) = match transpose {
        None => (max_a + 1, max_b + 1),
        Some(()) => (max_b + 1, max_a + 1),
    };
    let mut out = vec![Matrix::zeros(nr, nc); samples];
    let mut seen = vec![0usize; samples];
    for (k, a, b, v) in parsed {
        let (r, c) = match transpose {
            None => (a, b),
            Some(()) => (b, a),
        };
        out[k][(r, c)] = v;
        seen[k] += 1;
    }
    if let Some(k) = seen.iter().position(|&s| s != nr * nc) {
        let file = rows.first().map(|r| r.0.clone()).unwrap_or_default();
        return Err(Error::Parse {
            file,
            msg: format!("sample {k} has {} of {} entries", seen[k], nr * nc),
        });
    }
    Ok(out)
}

fn parse_err(file: &str, msg: &str) -> Error {
    Error::Parse {
        file: file.to_string(),
        msg: msg.to_string(),
    }
}

fn index(file: &str, line: usize, s: &str) -> Result<usize> {
    s.trim().parse().map_err(|_| Error::Parse {
        file: file.to_string(),
        msg: format!("line {line}: bad index {s:?}"),
    })
}

fn number(file: &str, line: usize, s: &str) -> Result<f64> {
    let v: f64 = s.trim().parse().map_err(|_| Error::Parse {
        file: file.to_string(),
        msg: format!("line {line}: bad number {s:?}"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            file: file.to_string(),
            msg: format!("line {line}: non-finite value"),
        });
    }
    Ok(v)
}

type Rows = Vec<(String, usize, Vec<String>)>;

fn read_rows(path: &Path, header: &[&str]) -> Result<Rows> {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let text = fs::read_to_string(path).map_err(|e| Error::Parse {
        file: path.display().to_string(),
        msg: e.to_string(),
    })?;
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or_else(|| parse_err(&name, "empty file"))?;
    let got: Vec<&str> = first.split(',').map(str::trim).collect();
    if got != header {
        return Err(Error::Parse {
            file: name,
            msg: format!("expected header {:?}, found {:?}", header.join(","), first),
        });
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let fields: Vec<String> = line.split(',').map(|f| f.trim().to_string()).collect();
        if fields.len() != header.len() {
            return Err(Error::Parse {
                file: name,
                msg: format!("line {}: expected {} fields", i + 1, header.len()),
            });
        }
        rows.push((name.clone(), i + 1, fields));
    }
    Ok(rows)
}

/// `block,row,col,value` table for named matrices.
pub fn blocks_to_csv(blocks: &[(String, &Matrix)]) -> String {
    let mut out = String::from("block,row,col,value\n");
    for (name, m) in blocks {
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                let _ = writeln!(out, "{name},{r},{c},{}", m[(r, c)]);
            }
        }
    }
    out
}

pub fn read_blocks(path: &Path) -> Result<BTreeMap<String, Matrix>> {
    let rows = read_rows(path, &["block", "row", "col", "value"])?;
    let mut entries: BTreeMap<String, Vec<(usize, usize, f64)>> = BTreeMap::new();
    for (file, line, row) in &rows {
        let r = index(file, *line, &row[1])?;
        let c = index(file, *line, &row[2])?;
        let v = number(file, *line, &row[3])?;
        entries.entry(row[0].clone()).or_default().push((r, c, v));
    }
    let mut out = BTreeMap::new();
    for (name, vals) in entries {
        let nr = vals.iter().map(|v| v.0).max().unwrap_or(0) + 1;
        let nc = vals.iter().map(|v| v.1).max().unwrap_or(0) + 1;
        if vals.len() != nr * nc {
            return Err(Error::Parse {
                file: path.display().to_string(),
                msg: format!("block {name} is incomplete"),
            });
        }
        let mut m = Matrix::zeros(nr, nc);
        for (r, c, v) in vals {
            m[(r, c)] = v;
        }
        out.insert(name, m);
    }
    Ok(out)
}

/// Estimate as a `block,row,col,value` table (`Y0`, `Y1`, `Y2`, `rotation`).
pub fn estimate_to_csv(est: &KinematicEstimate) -> String {
    blocks_to_csv(&[
        ("Y0".into(), &est.y0),
        ("Y1".into(), &est.y1),
        ("Y2".into(), &est.y2),
        ("rotation".into(), &est.rotation),
    ])
}

/// Human-readable residuals and warnings.
pub fn diagnostics_text(est: &KinematicEstimate) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "method: {}", est.method);
    for (name, value) in &est.residuals {
        let _ = writeln!(out, "residual.{name}: {value:e}");
    }
    let _ = writeln!(out, "max_residual: {:e}", est.max_residual());
    if est.warnings.is_empty() {
        let _ = writeln!(out, "warnings: none");
    } else {
        for w in &est.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
    }
    out
}
