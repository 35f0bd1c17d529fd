//! Matrix CSV files.
//!
//! ```text
//! n,m,dt_hours
//! len_1,...,len_m
//! q(1,1),...,q(1,m+1),k(1,1),...,k(1,m)
//! ...                                      (n data rows)
//! ```
//!
//! Values use Rust's shortest round-trip decimal form, so saving and
//! loading is lossless.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Geometry, TrafficStateMatrix};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub fn format_matrix_csv(ts: &TrafficStateMatrix) -> String {
    let (n, m) = (ts.steps(), ts.cells());
    let mut out = String::new();
    let _ = writeln!(out, "{n},{m},{}", ts.geometry.dt);
    out.push_str(&join(&ts.geometry.cell_lengths));
    out.push('\n');
    for t in 0..n {
        out.push_str(&join(ts.flow.row(t)));
        out.push(',');
        out.push_str(&join(ts.density.row(t)));
        out.push('\n');
    }
    out
}

fn join(values: &[f64]) -> String {
    let mut s = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = write!(s, "{v}");
    }
    s
}

pub fn save_matrix_csv(ts: &TrafficStateMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_matrix_csv(ts)).map_err(|e| Error::io(path, e))
}

pub fn load_matrix_csv(path: impl AsRef<Path>) -> Result<TrafficStateMatrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_matrix_csv(&text, path)
}

pub fn parse_matrix_csv(text: &str, path: &Path) -> Result<TrafficStateMatrix> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));

    let (ln, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let fields: Vec<&str> = header.split(',').map(str::trim).collect();
    if fields.len() != 3 {
        return Err(err(ln, format!("header must be `n,m,dt_hours`, got {} fields", fields.len())));
    }
    let n: usize = fields[0]
        .parse()
        .map_err(|_| err(ln, format!("bad step count `{}`", fields[0])))?;
    let m: usize = fields[1]
        .parse()
        .map_err(|_| err(ln, format!("bad cell count `{}`", fields[1])))?;
    let dt: f64 = fields[2]
        .parse()
        .map_err(|_| err(ln, format!("bad dt `{}`", fields[2])))?;
    if n < 2 || m < 1 {
        return Err(err(ln, format!("need n >= 2 and m >= 1, got n={n}, m={m}")));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(err(ln, format!("dt must be positive, got {dt}")));
    }

    let (ln, lengths_line) = lines
        .next()
        .ok_or_else(|| err(2, "missing cell length line".into()))?;
    let cell_lengths = parse_row(lengths_line, m).map_err(|msg| err(ln, msg))?;
    if cell_lengths.iter().any(|&l| l <= 0.0) {
        return Err(err(ln, "cell lengths must be positive".into()));
    }

    let mut flow = Matrix::zeros(n, m + 1);
    let mut density = Matrix::zeros(n, m);
    let mut rows = 0;
    for (ln, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        if rows == n {
            return Err(err(ln, format!("more than the declared {n} data rows")));
        }
        let values = parse_row(line, 2 * m + 1).map_err(|msg| err(ln, msg))?;
        if let Some(v) = values.iter().find(|&&v| v < 0.0) {
            return Err(err(ln, format!("negative value {v}")));
        }
        flow.row_mut(rows).copy_from_slice(&values[..=m]);
        density.row_mut(rows).copy_from_slice(&values[m + 1..]);
        rows += 1;
    }
    if rows != n {
        return Err(err(
            text.lines().count(),
            format!("header declares {n} data rows, found {rows}"),
        ));
    }
    TrafficStateMatrix::new(flow, density, Geometry { dt, cell_lengths })
}

fn parse_row(line: &str, expected: usize) -> Result<Vec<f64>, String> {
    let values: Vec<f64> = line
        .split(',')
        .map(|f| {
            let f = f.trim();
            f.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format!("invalid number `{f}`"))
        })
        .collect::<Result<_, _>>()?;
    if values.len() != expected {
        return Err(format!("expected {expected} values, found {}", values.len()));
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ctm::{ctm_simulate, CtmConfig};

    #[test]
    fn save_then_load_is_lossless() {
        let mut cfg = CtmConfig::constant(12, 5, 1700.0);
        cfg.noise_std = 55.0;
        cfg.seed = 12;
        let ts = ctm_simulate(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        save_matrix_csv(&ts, &path).unwrap();
        assert_eq!(load_matrix_csv(&path).unwrap(), ts);
    }

    #[test]
    fn shape_comes_from_header() {
        let mut text = String::from("12,5,0.08333333333333333\n0.5,0.5,0.5,0.5,0.5\n");
        for _ in 0..12 {
            text.push_str("1,2,3,4,5,6,7,8,9,10,11\n");
        }
        let ts = parse_matrix_csv(&text, Path::new("x.csv")).unwrap();
        assert_eq!(ts.flow.shape(), (12, 6));
        assert_eq!(ts.density.shape(), (12, 5));
        assert_eq!(ts.density[(3, 0)], 7.0);
    }

    #[test]
    fn negative_entry_reports_its_line() {
        let text = "2,1,0.1\n0.5\n10,10,1\n10,-3,1\n";
        match parse_matrix_csv(text, Path::new("neg.csv")) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 4);
                assert!(message.contains("negative"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_inputs() {
        let p = Path::new("bad.csv");
        assert!(matches!(parse_matrix_csv("2,1\n", p), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(
            parse_matrix_csv("2,1,0.1\n0.5\n1,2,3\n1,2\n", p),
            Err(Error::Parse { line: 4, .. })
        ));
        assert!(matches!(
            parse_matrix_csv("3,1,0.1\n0.5\n1,2,3\n1,2,3\n", p),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            parse_matrix_csv("2,1,0.1\n0.5,0.5\n", p),
            Err(Error::Parse { line: 2, .. })
        ));
    }
}
