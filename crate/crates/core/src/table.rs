//! Minimal CSV reading and writing shared by every exported file.
//!
//! Files may start with `#`-prefixed provenance lines; they are preserved on
//! read so callers can check them.

use crate::error::{Error, Result};

/// Formats `x` with `digits` significant digits in plain decimal notation.
pub fn fmt_sig(x: f64, digits: usize) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let magnitude = x.abs().log10().floor() as i64;
    let decimals = (digits as i64 - 1 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

/// A parsed CSV file: leading comment lines, header and string cells.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub comments: Vec<String>,
    pub header: Vec<String>,
    /// `(line_number, cells)` with 1-based line numbers for diagnostics.
    pub rows: Vec<(usize, Vec<String>)>,
}

impl CsvTable {
    pub fn parse(text: &str, expected_header: &str) -> Result<Self> {
        let mut comments = Vec::new();
        let mut header: Option<Vec<String>> = None;
        let mut rows = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            if let Some(c) = line.strip_prefix('#') {
                if header.is_none() {
                    comments.push(c.trim().to_string());
                }
                continue;
            }
            let cells: Vec<String> = line.split(',').map(|s| s.trim().to_string()).collect();
            match &header {
                None => {
                    if line != expected_header {
                        return Err(Error::Parse {
                            line: line_no,
                            message: format!("expected header `{expected_header}`, found `{line}`"),
                        });
                    }
                    header = Some(cells);
                }
                Some(h) => {
                    if cells.len() != h.len() {
                        return Err(Error::Parse {
                            line: line_no,
                            message: format!("expected {} fields, found {}", h.len(), cells.len()),
                        });
                    }
                    rows.push((line_no, cells));
                }
            }
        }
        let header = header.ok_or(Error::Parse {
            line: 0,
            message: format!("missing header `{expected_header}`"),
        })?;
        Ok(Self {
            comments,
            header,
            rows,
        })
    }
}

pub(crate) fn parse_f64(line: usize, cell: &str) -> Result<f64> {
    cell.parse::<f64>().map_err(|_| Error::Parse {
        line,
        message: format!("not a number: `{cell}`"),
    })
}

pub(crate) fn parse_opt_u32(line: usize, cell: &str) -> Result<Option<u32>> {
    if cell.is_empty() {
        return Ok(None);
    }
    cell.parse::<u32>().map(Some).map_err(|_| Error::Parse {
        line,
        message: format!("not a pixel row: `{cell}`"),
    })
}

/// Writes `# ...` provenance lines followed by a header.
pub fn write_preamble(out: &mut String, comments: &[String], header: &str) {
    for c in comments {
        out.push_str("# ");
        out.push_str(c);
        out.push('\n');
    }
    out.push_str(header);
    out.push('\n');
}
