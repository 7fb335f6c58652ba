//! MacKay alist files.
//!
//! ```text
//! N M                  columns (variables) and rows (checks)
//! max_col max_row
//! col degrees (N)
//! row degrees (M)
//! N lines: 1-based row indices of each column, zero padded
//! M lines: 1-based column indices of each row, zero padded
//! ```

use std::fmt::Write as _;
use std::path::Path;

use super::{Gf2Matrix, TannerGraph};
use crate::{Error, Result};

fn bad(msg: impl Into<String>) -> Error {
    Error::Alist(msg.into())
}

struct Tokens<'a> {
    it: std::str::SplitWhitespace<'a>,
}

impl Tokens<'_> {
    fn next(&mut self, what: &str) -> Result<usize> {
        let tok = self.it.next().ok_or_else(|| bad(format!("unexpected end of file reading {what}")))?;
        tok.parse().map_err(|_| bad(format!("expected a nonnegative integer for {what}, got {tok:?}")))
    }
}

/// Parses alist text into a parity-check matrix.
pub fn parse_alist(text: &str) -> Result<Gf2Matrix> {
    let mut t = Tokens { it: text.split_whitespace() };
    let n = t.next("column count")?;
    let m = t.next("row count")?;
    if n == 0 {
        return Err(bad("zero columns"));
    }
    let max_col = t.next("max column degree")?;
    let max_row = t.next("max row degree")?;
    let col_deg = (0..n).map(|_| t.next("column degree")).collect::<Result<Vec<_>>>()?;
    let row_deg = (0..m).map(|_| t.next("row degree")).collect::<Result<Vec<_>>>()?;
    if col_deg.iter().any(|&x| x > max_col) || row_deg.iter().any(|&x| x > max_row) {
        return Err(bad("degree exceeds the declared maximum"));
    }
    if col_deg.iter().sum::<usize>() != row_deg.iter().sum::<usize>() {
        return Err(bad("column and row degree sums differ"));
    }

    let mut h = Gf2Matrix::zeros(m, n);
    for (j, &deg) in col_deg.iter().enumerate() {
        let mut seen = 0;
        for _ in 0..max_col {
            let r = t.next("column adjacency")?;
            if r == 0 {
                continue;
            }
            if r > m {
                return Err(bad(format!("row index {r} out of range in column {}", j + 1)));
            }
            if h.get(r - 1, j) {
                return Err(bad(format!("duplicate entry ({r}, {})", j + 1)));
            }
            h.set(r - 1, j, true);
            seen += 1;
        }
        if seen != deg {
            return Err(bad(format!("column {} lists {seen} entries, degree says {deg}", j + 1)));
        }
    }
    for (i, &deg) in row_deg.iter().enumerate() {
        let mut seen = 0;
        for _ in 0..max_row {
            let c = t.next("row adjacency")?;
            if c == 0 {
                continue;
            }
            if c > n {
                return Err(bad(format!("column index {c} out of range in row {}", i + 1)));
            }
            if !h.get(i, c - 1) {
                return Err(bad(format!("row {} lists column {c}, which the column lists omit", i + 1)));
            }
            seen += 1;
        }
        if seen != deg {
            return Err(bad(format!("row {} lists {seen} entries, degree says {deg}", i + 1)));
        }
    }
    Ok(h)
}

/// Reads an alist file and builds its Tanner graph.
pub fn load_alist(path: impl AsRef<Path>) -> Result<(Gf2Matrix, TannerGraph)> {
    let h = parse_alist(&std::fs::read_to_string(path)?)?;
    let g = TannerGraph::from_parity(&h);
    Ok((h, g))
}

/// Formats `h` as alist text, padding short lists with zeros.
pub fn to_alist(h: &Gf2Matrix) -> String {
    let (m, n) = (h.nrows(), h.ncols());
    let rows: Vec<Vec<usize>> = (0..m).map(|i| h.row_support(i)).collect();
    let cols: Vec<Vec<usize>> = (0..n).map(|j| (0..m).filter(|&i| h.get(i, j)).collect()).collect();
    let max_col = cols.iter().map(Vec::len).max().unwrap_or(0);
    let max_row = rows.iter().map(Vec::len).max().unwrap_or(0);
    let join = |v: &[usize]| v.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ");
    let padded = |v: &[usize], width: usize| {
        let mut out: Vec<usize> = v.iter().map(|x| x + 1).collect();
        out.resize(width, 0);
        join(&out)
    };
    let mut s = String::new();
    let _ = writeln!(s, "{n} {m}");
    let _ = writeln!(s, "{max_col} {max_row}");
    let _ = writeln!(s, "{}", join(&cols.iter().map(Vec::len).collect::<Vec<_>>()));
    let _ = writeln!(s, "{}", join(&rows.iter().map(Vec::len).collect::<Vec<_>>()));
    for c in &cols {
        let _ = writeln!(s, "{}", padded(c, max_col));
    }
    for r in &rows {
        let _ = writeln!(s, "{}", padded(r, max_row));
    }
    s
}

pub fn write_alist(h: &Gf2Matrix, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_alist(h))?;
    Ok(())
}
