//! Plain-text complex matrix files.
//!
//! One row of the matrix per line, entries separated by commas, each entry a
//! real number or a complex number written `a+bi` (`j` is accepted for `i`).
//! Values are written with 17 significant digits so that a write/read cycle
//! reproduces every entry bit for bit.

use std::io::{BufRead, Write};

use thiserror::Error;

use crate::linalg::{CMatrix, Cplx};

#[derive(Debug, Error)]
pub enum MatrixIoError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn parse_error(line: usize, message: impl Into<String>) -> MatrixIoError {
    MatrixIoError::Parse { line, message: message.into() }
}

/// Parses `a`, `a+bi`, `a-bi`, `bi` (and the `j` spelling).
pub fn parse_complex(text: &str) -> Option<Cplx> {
    let s = text.trim();
    if s.is_empty() {
        return None;
    }
    let Some(body) = s.strip_suffix('i').or_else(|| s.strip_suffix('j')) else {
        return s.parse::<f64>().ok().filter(|x| x.is_finite()).map(|re| Cplx::new(re, 0.0));
    };
    let bytes = body.as_bytes();
    let split = (1..bytes.len())
        .rev()
        .find(|&k| (bytes[k] == b'+' || bytes[k] == b'-') && !matches!(bytes[k - 1], b'e' | b'E'));
    let (re, im) = match split {
        Some(k) => (body[..k].trim().parse::<f64>().ok()?, parse_imaginary(&body[k..])?),
        None => (0.0, parse_imaginary(body)?),
    };
    (re.is_finite() && im.is_finite()).then_some(Cplx::new(re, im))
}

fn parse_imaginary(s: &str) -> Option<f64> {
    match s.trim() {
        "" | "+" => Some(1.0),
        "-" => Some(-1.0),
        other => other.parse().ok(),
    }
}

pub fn format_complex(z: Cplx) -> String {
    format!("{:.16e}{:+.16e}i", z.re, z.im)
}

pub(crate) fn parse_row(line: &str, line_no: usize) -> Result<Vec<Cplx>, MatrixIoError> {
    line.split(',')
        .enumerate()
        .map(|(k, field)| {
            parse_complex(field)
                .ok_or_else(|| parse_error(line_no, format!("entry {} ({:?}) is not a number", k + 1, field.trim())))
        })
        .collect()
}

pub(crate) fn is_skippable(line: &str) -> bool {
    let t = line.trim();
    t.is_empty() || t.starts_with('#')
}

/// Reads a matrix, one row per line. Blank lines and `#` comments are skipped.
pub fn read_matrix<R: BufRead>(reader: R) -> Result<CMatrix, MatrixIoError> {
    let mut rows: Vec<Vec<Cplx>> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if is_skippable(&line) {
            continue;
        }
        let row = parse_row(&line, idx + 1)?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(parse_error(idx + 1, format!("expected {} entries, found {}", first.len(), row.len())));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_error(0, "no matrix rows found"));
    }
    let (nr, nc) = (rows.len(), rows[0].len());
    Ok(CMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

pub fn write_matrix<W: Write>(mut writer: W, m: &CMatrix) -> std::io::Result<()> {
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format_complex(m[(i, j)])).collect();
        writeln!(writer, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_common_spellings() {
        assert_eq!(parse_complex("1.5"), Some(Cplx::new(1.5, 0.0)));
        assert_eq!(parse_complex(" 1.5+2i "), Some(Cplx::new(1.5, 2.0)));
        assert_eq!(parse_complex("-1e-3-2.5e+2i"), Some(Cplx::new(-1e-3, -250.0)));
        assert_eq!(parse_complex("3j"), Some(Cplx::new(0.0, 3.0)));
        assert_eq!(parse_complex("-i"), Some(Cplx::new(0.0, -1.0)));
        assert_eq!(parse_complex("2-i"), Some(Cplx::new(2.0, -1.0)));
        assert_eq!(parse_complex("abc"), None);
        assert_eq!(parse_complex(""), None);
        assert_eq!(parse_complex("nan"), None);
    }

    #[test]
    fn formatted_values_round_trip_exactly() {
        for z in [Cplx::new(0.1, -1.0 / 3.0), Cplx::new(-0.0, 1e-300), Cplx::new(12345.678, 0.0)] {
            let back = parse_complex(&format_complex(z)).unwrap();
            assert_eq!(back.re.to_bits(), z.re.to_bits());
            assert_eq!(back.im.to_bits(), z.im.to_bits());
        }
    }

    #[test]
    fn matrix_round_trip() {
        let m = CMatrix::from_fn(3, 2, |i, j| Cplx::new(i as f64 / 7.0, -(j as f64) / 3.0));
        let mut buf = Vec::new();
        write_matrix(&mut buf, &m).unwrap();
        assert_eq!(read_matrix(buf.as_slice()).unwrap(), m);
    }

    #[test]
    fn ragged_rows_name_the_line() {
        let err = read_matrix("1,2\n# note\n3\n".as_bytes()).unwrap_err();
        match err {
            MatrixIoError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let err = read_matrix("1,2\n3,x\n".as_bytes()).unwrap_err();
        assert!(err.to_string().starts_with("line 2"), "{err}");
    }
}
