//! Plain-text matrix form: a `rows cols` header line followed by `rows` lines
//! of `cols` whitespace-separated decimals. Values are written with 17
//! significant digits so a write/read cycle is bit-exact.

use std::fmt::Write as _;

use super::Matrix;
use crate::error::{BhraError, Result};

/// Formats one value with 17 significant digits.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn format_matrix(m: &Matrix) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} {}", m.rows(), m.cols());
    for i in 0..m.rows() {
        let line: Vec<String> = m.row(i).iter().map(|&v| format_f64(v)).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_matrix(text: &str) -> Result<Matrix> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());

    let (hline, header) = lines.next().ok_or(BhraError::Parse {
        line: 1,
        msg: "missing header".into(),
    })?;
    let dims: Vec<&str> = header.split_whitespace().collect();
    if dims.len() != 2 {
        return Err(BhraError::Parse {
            line: hline,
            msg: format!("header must be `rows cols`, got {header:?}"),
        });
    }
    let parse_dim = |s: &str| {
        s.parse::<usize>().map_err(|e| BhraError::Parse {
            line: hline,
            msg: format!("bad dimension {s:?}: {e}"),
        })
    };
    let (rows, cols) = (parse_dim(dims[0])?, parse_dim(dims[1])?);
    if rows == 0 || cols == 0 {
        return Err(BhraError::Parse {
            line: hline,
            msg: "dimensions must be positive".into(),
        });
    }

    let mut data = Vec::with_capacity(rows * cols);
    let mut seen_rows = 0;
    for (lineno, line) in lines {
        if seen_rows == rows {
            return Err(BhraError::Parse {
                line: lineno,
                msg: format!("expected {rows} rows, found more"),
            });
        }
        let before = data.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|e| BhraError::Parse {
                line: lineno,
                msg: format!("bad value {tok:?}: {e}"),
            })?;
            if !v.is_finite() {
                return Err(BhraError::Parse {
                    line: lineno,
                    msg: format!("non-finite value {tok:?}"),
                });
            }
            data.push(v);
        }
        if data.len() - before != cols {
            return Err(BhraError::Parse {
                line: lineno,
                msg: format!("expected {cols} values, found {}", data.len() - before),
            });
        }
        seen_rows += 1;
    }
    if seen_rows != rows {
        return Err(BhraError::Parse {
            line: hline,
            msg: format!("expected {rows} rows, found {seen_rows}"),
        });
    }
    Matrix::new(rows, cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let m = Matrix::from_rows(&[[0.1, -1.0 / 3.0, 1e-300], [f64::MAX, 2.5e10, -0.0]]);
        let back = parse_matrix(&format_matrix(&m)).unwrap();
        for (a, b) in m.as_slice().iter().zip(back.as_slice()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn header_format() {
        let text = format_matrix(&Matrix::identity(2));
        assert!(text.starts_with("2 2\n"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn rejects_malformed() {
        assert!(parse_matrix("").is_err());
        assert!(parse_matrix("2\n1 2\n").is_err());
        assert!(parse_matrix("2 2\n1 2\n3\n").is_err());
        assert!(parse_matrix("1 2\n1 x\n").is_err());
        assert!(parse_matrix("1 1\nNaN\n").is_err());
        assert!(parse_matrix("1 1\n1\n2\n").is_err());
        assert!(parse_matrix("2 1\n1\n").is_err());
    }
}
