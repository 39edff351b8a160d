//! Plain-text matrix format.
//!
//! ```text
//! <rows> <cols>
//! v00 v01 ...
//! v10 v11 ...
//! ```
//!
//! Values are written in scientific notation with 17 significant digits so
//! that a write/read cycle is lossless. Readers accept any decimal or
//! scientific literal Rust's `f64` parser accepts.

use std::fmt::Write as _;
use std::path::Path;

use super::Matrix;
use crate::error::{Error, Result};

pub fn render_matrix(m: &Matrix) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} {}", m.rows(), m.cols());
    for row in m.as_slice().chunks(m.cols()) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_matrix(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, render_matrix(m)).map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_matrix(&text, path)
}

/// Parses the text format; `origin` is only used in error messages.
pub fn parse_matrix(text: &str, origin: &Path) -> Result<Matrix> {
    let perr = |line: usize, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let (hline, header) = lines.next().ok_or_else(|| perr(1, "empty matrix file".into()))?;
    let dims: Vec<&str> = header.split_whitespace().collect();
    if dims.len() != 2 {
        return Err(perr(hline, format!("expected `<rows> <cols>`, got `{header}`")));
    }
    let parse_dim = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| perr(hline, format!("invalid dimension `{s}`")))
    };
    let rows = parse_dim(dims[0])?;
    let cols = parse_dim(dims[1])?;
    if rows == 0 || cols == 0 {
        return Err(perr(hline, format!("dimensions must be positive, got {rows}x{cols}")));
    }
    let mut data = Vec::with_capacity(rows * cols);
    let mut seen = 0;
    for (lineno, line) in lines {
        if seen == rows {
            return Err(perr(lineno, format!("more than {rows} data rows")));
        }
        let before = data.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| perr(lineno, format!("invalid number `{tok}`")))?;
            if !v.is_finite() {
                return Err(perr(lineno, format!("non-finite value `{tok}`")));
            }
            data.push(v);
        }
        if data.len() - before != cols {
            return Err(perr(
                lineno,
                format!("expected {cols} values, found {}", data.len() - before),
            ));
        }
        seen += 1;
    }
    if seen != rows {
        return Err(perr(
            text.lines().count().max(1),
            format!("expected {rows} data rows, found {seen}"),
        ));
    }
    Matrix::from_vec(rows, cols, data)
}
