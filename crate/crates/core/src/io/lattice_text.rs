//! Text formats for lattices, score tables and paths.
//!
//! ```text
//! LATTICE v1
//! frames 2
//! states 3
//! start 0
//! finals 2
//! state 0 0
//! state 1 1
//! state 2 2
//! arc 0 1 4 7 -0.5
//! arc 1 2 3 0 0
//! ```
//!
//! `arc` fields are source, destination, pdf id, word id (0 for none) and
//! graph log-weight. States are listed in id order; arcs in id order.

use std::fmt::Write;

use super::{expect_header, join, keyword, parse_all, parse_err, parse_num, IoError};
use crate::lattice::{Arc, Lattice, Path, ScoreTable};

pub const LATTICE_MAGIC: &str = "LATTICE v1";
pub const SCORES_MAGIC: &str = "SCORES v1";
pub const PATH_MAGIC: &str = "PATH v1";

pub fn print_lattice(lat: &Lattice) -> String {
    let mut s = String::new();
    writeln!(s, "{LATTICE_MAGIC}").unwrap();
    writeln!(s, "frames {}", lat.num_frames()).unwrap();
    writeln!(s, "states {}", lat.num_states()).unwrap();
    writeln!(s, "start {}", lat.start()).unwrap();
    writeln!(s, "finals {}", join(lat.finals())).unwrap();
    for (id, f) in lat.state_frames().iter().enumerate() {
        writeln!(s, "state {id} {f}").unwrap();
    }
    for a in lat.arcs() {
        writeln!(
            s,
            "arc {} {} {} {} {}",
            a.src, a.dst, a.pdf_id, a.word_id, a.graph_weight
        )
        .unwrap();
    }
    s
}

/// Parses the lattice format without checking the structural invariants,
/// so that malformed lattices can still be loaded and diagnosed.
pub fn parse_lattice_unchecked(text: &str) -> Result<Lattice, IoError> {
    let lines = expect_header(text, LATTICE_MAGIC)?;
    let mut it = lines.into_iter();
    let mut next = |kw: &str| -> Result<(usize, Vec<&str>), IoError> {
        let (n, l) = it
            .next()
            .ok_or_else(|| parse_err(0, format!("missing '{kw}' line")))?;
        Ok((n, keyword(n, l, kw)?))
    };
    let single = |n: usize, toks: &[&str]| -> Result<usize, IoError> {
        match toks {
            [t] => parse_num(n, t),
            _ => Err(parse_err(n, "expected exactly one value")),
        }
    };
    let (n, t) = next("frames")?;
    let num_frames = single(n, &t)?;
    let (n, t) = next("states")?;
    let num_states = single(n, &t)?;
    let (n, t) = next("start")?;
    let start = single(n, &t)?;
    let (n, t) = next("finals")?;
    let finals: Vec<usize> = parse_all(n, &t)?;
    let mut state_frames = Vec::with_capacity(num_states);
    for id in 0..num_states {
        let (n, t) = next("state")?;
        match t[..] {
            [sid, frame] => {
                if parse_num::<usize>(n, sid)? != id {
                    return Err(parse_err(n, format!("expected state {id}")));
                }
                state_frames.push(parse_num(n, frame)?);
            }
            _ => return Err(parse_err(n, "state line needs an id and a frame")),
        }
    }
    let mut arcs = Vec::new();
    for (n, l) in it {
        match keyword(n, l, "arc")?[..] {
            [src, dst, pdf, word, w] => arcs.push(Arc {
                src: parse_num(n, src)?,
                dst: parse_num(n, dst)?,
                pdf_id: parse_num(n, pdf)?,
                word_id: parse_num(n, word)?,
                graph_weight: parse_num(n, w)?,
            }),
            _ => return Err(parse_err(n, "arc line needs src dst pdf word weight")),
        }
    }
    Ok(Lattice::new_unchecked(
        num_frames,
        state_frames,
        start,
        finals,
        arcs,
    ))
}

/// Parses and validates a lattice.
pub fn parse_lattice(text: &str) -> Result<Lattice, IoError> {
    let lat = parse_lattice_unchecked(text)?;
    let violations = crate::lattice::validate(&lat);
    if violations.is_empty() {
        Ok(lat)
    } else {
        Err(crate::lattice::LatticeError::Invalid(violations).into())
    }
}

/// `SCORES v1`, a `frames T pdfs P` line, then one line of P reals per frame.
pub fn print_scores(scores: &ScoreTable) -> String {
    let mut s = String::new();
    writeln!(s, "{SCORES_MAGIC}").unwrap();
    writeln!(
        s,
        "frames {} pdfs {}",
        scores.num_frames(),
        scores.num_pdfs()
    )
    .unwrap();
    for t in 0..scores.num_frames() {
        writeln!(s, "{}", join(scores.row(t))).unwrap();
    }
    s
}

pub fn parse_scores(text: &str) -> Result<ScoreTable, IoError> {
    let lines = expect_header(text, SCORES_MAGIC)?;
    let (n, first) = *lines
        .first()
        .ok_or_else(|| parse_err(0, "missing shape line"))?;
    let (frames, pdfs) = match first.split_whitespace().collect::<Vec<_>>()[..] {
        ["frames", t, "pdfs", p] => (parse_num::<usize>(n, t)?, parse_num::<usize>(n, p)?),
        _ => return Err(parse_err(n, "expected 'frames T pdfs P'")),
    };
    let rows = &lines[1..];
    if rows.len() != frames {
        return Err(parse_err(
            n,
            format!("{} score rows for {frames} frames", rows.len()),
        ));
    }
    let mut data = Vec::with_capacity(frames * pdfs);
    for &(n, l) in rows {
        let vals: Vec<f64> = parse_all(n, &l.split_whitespace().collect::<Vec<_>>())?;
        if vals.len() != pdfs {
            return Err(parse_err(
                n,
                format!("{} values, expected {pdfs}", vals.len()),
            ));
        }
        data.extend(vals);
    }
    Ok(ScoreTable::new(frames, pdfs, data)?)
}

/// `PATH v1` then `arcs` followed by the arc ids of the path.
pub fn print_path(path: &Path) -> String {
    format!("{PATH_MAGIC}\narcs {}\n", join(path.arc_ids()))
}

/// Reads a path file against the lattice it refers to.
pub fn parse_path(text: &str, lattice: &Lattice) -> Result<Path, IoError> {
    let lines = expect_header(text, PATH_MAGIC)?;
    let (n, l) = *lines
        .first()
        .ok_or_else(|| parse_err(0, "missing 'arcs' line"))?;
    let ids = parse_all(n, &keyword(n, l, "arcs")?)?;
    Ok(Path::from_arc_ids(lattice, ids)?)
}
