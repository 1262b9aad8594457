//! Line-oriented reader for the plain-text checkpoint formats.

use std::io::BufRead;
use std::str::FromStr;

use crate::error::{Error, Result};

pub(crate) struct LineReader<R> {
    inner: R,
    line: usize,
    buf: String,
}

impl<R: BufRead> LineReader<R> {
    pub fn new(inner: R) -> Self {
        Self {
            inner,
            line: 0,
            buf: String::new(),
        }
    }

    pub fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            line: self.line,
            msg: msg.into(),
        }
    }

    /// Next non-blank line, without comments (`#`).
    pub fn next_line(&mut self) -> Result<&str> {
        loop {
            self.buf.clear();
            self.line += 1;
            if self.inner.read_line(&mut self.buf)? == 0 {
                return Err(self.err("unexpected end of file"));
            }
            let content = self.buf.split('#').next().unwrap_or("").trim();
            if !content.is_empty() {
                let start = self.buf.find(content).unwrap_or(0);
                return Ok(&self.buf[start..start + content.len()]);
            }
        }
    }

    /// Reads a line starting with `keyword` and returns the remaining fields.
    pub fn keyed(&mut self, keyword: &str) -> Result<Vec<String>> {
        let line = self.next_line()?.to_string();
        let mut it = line.split_whitespace();
        match it.next() {
            Some(k) if k == keyword => Ok(it.map(str::to_string).collect()),
            _ => Err(self.err(format!("expected `{keyword}`, found `{line}`"))),
        }
    }

    pub fn parse<T: FromStr>(&self, field: &str) -> Result<T> {
        field
            .parse()
            .map_err(|_| self.err(format!("cannot parse `{field}`")))
    }

    /// Reads one row of exactly `n` numbers.
    pub fn row(&mut self, n: usize) -> Result<Vec<f64>> {
        let line = self.next_line()?.to_string();
        let vals = line
            .split_whitespace()
            .map(|t| self.parse::<f64>(t))
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != n {
            return Err(self.err(format!("expected {n} values, found {}", vals.len())));
        }
        Ok(vals)
    }
}

pub(crate) fn write_row<W: std::io::Write>(w: &mut W, vals: &[f64]) -> std::io::Result<()> {
    let mut first = true;
    for v in vals {
        if !first {
            w.write_all(b" ")?;
        }
        write!(w, "{v:e}")?;
        first = false;
    }
    w.write_all(b"\n")
}
