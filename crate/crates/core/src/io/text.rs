//! Line-oriented reader shared by the text formats.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{file_err, parse_err, Error, Result};

pub(crate) struct Lines {
    lines: Vec<(usize, String)>,
    pos: usize,
}

impl Lines {
    pub(crate) fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(file_err(path))?;
        Ok(Self::parse(&text))
    }

    /// Keeps non-blank lines that are not `#` comments, with 1-based numbers.
    pub(crate) fn parse(text: &str) -> Self {
        let lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
            .map(|(i, l)| (i, l.to_string()))
            .collect();
        Self { lines, pos: 0 }
    }

    /// Line number of the next record, or one past the last line at EOF.
    pub(crate) fn line_no(&self) -> usize {
        self.lines
            .get(self.pos)
            .map_or_else(|| self.lines.last().map_or(1, |l| l.0 + 1), |l| l.0)
    }

    pub(crate) fn next(&mut self, what: &str) -> Result<(usize, &str)> {
        let line = self.line_no();
        let (no, text) = self
            .lines
            .get(self.pos)
            .ok_or_else(|| parse_err(line, format!("unexpected end of file, expected {what}")))?;
        self.pos += 1;
        Ok((*no, text.as_str()))
    }

    /// Reads `key value` and returns the value text.
    pub(crate) fn field(&mut self, key: &str) -> Result<(usize, String)> {
        let (no, text) = self.next(key)?;
        let mut parts = text.splitn(2, char::is_whitespace);
        let k = parts.next().unwrap_or("");
        if k != key {
            return Err(parse_err(no, format!("expected `{key}`, found `{text}`")));
        }
        Ok((no, parts.next().unwrap_or("").trim().to_string()))
    }

    pub(crate) fn usize_field(&mut self, key: &str) -> Result<(usize, usize)> {
        let (no, v) = self.field(key)?;
        let n = v
            .parse()
            .map_err(|_| parse_err(no, format!("`{key}` must be a non-negative integer, got `{v}`")))?;
        Ok((no, n))
    }

    /// Expects a bare marker line such as `body`.
    pub(crate) fn marker(&mut self, marker: &str) -> Result<()> {
        let (no, text) = self.next(marker)?;
        if text != marker {
            return Err(parse_err(no, format!("expected `{marker}`, found `{text}`")));
        }
        Ok(())
    }

    pub(crate) fn floats(&mut self, count: usize, what: &str) -> Result<(usize, Vec<f64>)> {
        let (no, text) = self.next(what)?;
        let vals = parse_floats(text, no)?;
        if vals.len() != count {
            return Err(parse_err(
                no,
                format!("{what}: expected {count} values, found {}", vals.len()),
            ));
        }
        Ok((no, vals))
    }

    pub(crate) fn expect_end(&self) -> Result<()> {
        match self.lines.get(self.pos) {
            Some((no, _)) => Err(parse_err(*no, "unexpected trailing record")),
            None => Ok(()),
        }
    }
}

pub(crate) fn parse_floats(text: &str, line: usize) -> Result<Vec<f64>> {
    text.split_whitespace()
        .map(|tok| match tok.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            Ok(_) => Err(parse_err(line, format!("non-finite value `{tok}`"))),
            Err(_) => Err(parse_err(line, format!("malformed number `{tok}`"))),
        })
        .collect()
}

pub(crate) fn check_version(lines: &mut Lines, expected: u32) -> Result<()> {
    let (no, v) = lines.field("version")?;
    if v != expected.to_string() {
        return Err(parse_err(
            no,
            format!("unsupported format version `{v}`, expected {expected}"),
        ));
    }
    Ok(())
}

/// Appends values separated by spaces in shortest round-trip form.
pub(crate) fn push_row(out: &mut String, values: impl IntoIterator<Item = f64>) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(' ');
        }
        first = false;
        write!(out, "{v:?}").expect("writing to a String");
    }
    out.push('\n');
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(file_err(path))
}

pub(crate) fn json_err(path: &Path, e: serde_json::Error) -> Error {
    parse_err(e.line(), format!("{}: {e}", path.display()))
}
