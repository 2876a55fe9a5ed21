//! Text file formats, experiment configuration and the metrics stream.
//!
//! Every format is line oriented: a magic header line, then keyword-led
//! records. Reals are printed with Rust's shortest round-trip formatting, so
//! reading a written file reproduces the same bits.

mod config;
mod data_files;
mod lattice_text;

use std::fs;
use std::io::Write;
use std::path::{Path as FsPath, PathBuf};

use thiserror::Error;

pub use config::{read_metrics, ExperimentConfig, MetricsWriter, PathsConfig};
pub use data_files::{
    read_dataset_split, read_model, write_dataset_split, write_model, DATASET_MAGIC, MODEL_MAGIC,
};
pub use lattice_text::{
    parse_lattice, parse_lattice_unchecked, parse_path, parse_scores, print_lattice, print_path,
    print_scores, LATTICE_MAGIC, PATH_MAGIC, SCORES_MAGIC,
};

use crate::lattice::LatticeError;
use crate::toy::ToyError;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Toy(#[from] ToyError),
}

pub(crate) fn parse_err(line: usize, msg: impl Into<String>) -> IoError {
    IoError::Parse {
        line,
        msg: msg.into(),
    }
}

pub fn read_file(path: &FsPath) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never observe a half-written file.
pub fn write_atomic(path: &FsPath, contents: &str) -> Result<(), IoError> {
    let wrap = |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => FsPath::new("."),
    };
    fs::create_dir_all(dir).map_err(wrap)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(wrap)?;
    tmp.write_all(contents.as_bytes()).map_err(wrap)?;
    tmp.persist(path).map_err(|e| wrap(e.error))?;
    Ok(())
}

/// Non-empty, non-comment lines with their 1-based numbers.
pub(crate) fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub(crate) fn parse_num<T: std::str::FromStr>(line: usize, tok: &str) -> Result<T, IoError> {
    tok.parse()
        .map_err(|_| parse_err(line, format!("cannot parse '{tok}'")))
}

pub(crate) fn parse_all<T: std::str::FromStr>(
    line: usize,
    toks: &[&str],
) -> Result<Vec<T>, IoError> {
    toks.iter().map(|t| parse_num(line, t)).collect()
}

pub(crate) fn join<T: std::fmt::Display>(xs: &[T]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Checks the magic header and returns the remaining lines.
pub(crate) fn expect_header<'a>(
    text: &'a str,
    magic: &str,
) -> Result<Vec<(usize, &'a str)>, IoError> {
    let mut lines = content_lines(text);
    match lines.next() {
        Some((_, l)) if l == magic => Ok(lines.collect()),
        Some((n, l)) => Err(parse_err(n, format!("expected '{magic}', found '{l}'"))),
        None => Err(parse_err(0, format!("empty file, expected '{magic}'"))),
    }
}

/// Splits `keyword rest...` and checks the keyword.
pub(crate) fn keyword<'a>(
    line: usize,
    text: &'a str,
    expected: &str,
) -> Result<Vec<&'a str>, IoError> {
    let mut toks = text.split_whitespace();
    match toks.next() {
        Some(k) if k == expected => Ok(toks.collect()),
        Some(k) => Err(parse_err(
            line,
            format!("expected '{expected}', found '{k}'"),
        )),
        None => Err(parse_err(line, format!("expected '{expected}'"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_contents() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub").join("f.txt");
        write_atomic(&p, "one").unwrap();
        write_atomic(&p, "two").unwrap();
        assert_eq!(read_file(&p).unwrap(), "two");
    }

    #[test]
    fn header_mismatch_reports_line() {
        match expect_header("\n# c\nNOPE\n", "LATTICE v1") {
            Err(IoError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }
}
