//! Tab-separated tables and atomic file output.
//!
//! Every table has a header on line 1, `\t` separators and `\n` line endings.
//! Lines starting with `#` after the header are comments (summary lines).

use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub comments: Vec<String>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
            comments: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("missing column {name:?}")))
    }

    pub fn expect_header(&self, expected: &[&str]) -> Result<()> {
        if self.header.len() < expected.len()
            || self.header.iter().zip(expected).any(|(a, b)| a != b)
        {
            return Err(Error::Format(format!(
                "expected header starting with {:?}, found {:?}",
                expected.join("\t"),
                self.header.join("\t")
            )));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.header.join("\t"));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join("\t"));
            out.push('\n');
        }
        for c in &self.comments {
            out.push_str("# ");
            out.push_str(c);
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Table> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty table".into()))?;
        let mut table = Table::new(header.split('\t'));
        for (i, line) in lines.enumerate() {
            if let Some(c) = line.strip_prefix('#') {
                table.comments.push(c.trim().to_string());
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let row: Vec<String> = line.split('\t').map(str::to_string).collect();
            if row.len() != table.header.len() {
                return Err(Error::Format(format!(
                    "line {}: expected {} columns, found {}",
                    i + 2,
                    table.header.len(),
                    row.len()
                )));
            }
            table.rows.push(row);
        }
        Ok(table)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Table> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut text = String::new();
        for line in BufReader::new(file).lines() {
            text.push_str(&line.map_err(|e| Error::io(path, e))?);
            text.push('\n');
        }
        Table::parse(&text).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }
}

pub(crate) fn parse_field<T: std::str::FromStr>(field: &str, what: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::Format(format!("invalid {what} {field:?}")))
}

/// Writes to a sibling temporary file and renames it into place.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(
        ".{}.tmp{}",
        file_name.to_string_lossy(),
        std::process::id()
    ));
    {
        let mut f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_roundtrip_with_comment() {
        let mut t = Table::new(["a", "b"]);
        t.push(vec!["1".into(), "x".into()]);
        t.comments.push("exponent=1.5 r2=1".into());
        let text = t.to_text();
        assert_eq!(text, "a\tb\n1\tx\n# exponent=1.5 r2=1\n");
        assert_eq!(Table::parse(&text).unwrap(), t);
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(Table::parse("a\tb\n1\n").is_err());
    }
}
