//! Dataset and scorer model files.
//!
//! ```text
//! DATASET v1
//! utterances 1
//! utterance train-0000 frames 3 dim 2
//! words 2 1
//! alignment 0 0 1
//! arcs 0 1 3
//! frame 0.5 -1.25
//! frame 0.5 -1.0
//! frame 2 0.75
//! ```

use std::fmt::Write;

use super::{expect_header, join, keyword, parse_all, parse_err, parse_num, IoError};
use crate::toy::{Features, ScorerParams, Utterance};

pub const DATASET_MAGIC: &str = "DATASET v1";
pub const MODEL_MAGIC: &str = "SCORER v1";

pub fn write_dataset_split(utterances: &[Utterance]) -> String {
    let mut s = String::new();
    writeln!(s, "{DATASET_MAGIC}").unwrap();
    writeln!(s, "utterances {}", utterances.len()).unwrap();
    for u in utterances {
        let f = &u.features;
        writeln!(
            s,
            "utterance {} frames {} dim {}",
            u.id,
            f.num_frames(),
            f.dim()
        )
        .unwrap();
        writeln!(s, "words {}", join(&u.words)).unwrap();
        writeln!(s, "alignment {}", join(&u.alignment)).unwrap();
        writeln!(s, "arcs {}", join(&u.alignment_arcs)).unwrap();
        for t in 0..f.num_frames() {
            writeln!(s, "frame {}", join(f.row(t))).unwrap();
        }
    }
    s
}

pub fn read_dataset_split(text: &str) -> Result<Vec<Utterance>, IoError> {
    let lines = expect_header(text, DATASET_MAGIC)?;
    let mut it = lines.into_iter();
    let mut next = |kw: &str| -> Result<(usize, Vec<&str>), IoError> {
        let (n, l) = it
            .next()
            .ok_or_else(|| parse_err(0, format!("missing '{kw}' line")))?;
        Ok((n, keyword(n, l, kw)?))
    };
    let (n, t) = next("utterances")?;
    let count: usize = match t[..] {
        [c] => parse_num(n, c)?,
        _ => return Err(parse_err(n, "expected an utterance count")),
    };
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let (n, t) = next("utterance")?;
        let (id, frames, dim) = match t[..] {
            [id, "frames", fr, "dim", d] => (
                id.to_string(),
                parse_num::<usize>(n, fr)?,
                parse_num::<usize>(n, d)?,
            ),
            _ => return Err(parse_err(n, "expected 'utterance ID frames T dim F'")),
        };
        let (n, t) = next("words")?;
        let words = parse_all(n, &t)?;
        let (n, t) = next("alignment")?;
        let alignment: Vec<usize> = parse_all(n, &t)?;
        if alignment.len() != frames {
            return Err(parse_err(
                n,
                format!(
                    "alignment has {} frames, expected {frames}",
                    alignment.len()
                ),
            ));
        }
        let (n, t) = next("arcs")?;
        let alignment_arcs: Vec<usize> = parse_all(n, &t)?;
        if alignment_arcs.len() != frames {
            return Err(parse_err(
                n,
                format!("{} alignment arcs, expected {frames}", alignment_arcs.len()),
            ));
        }
        let mut data = Vec::with_capacity(frames * dim);
        for _ in 0..frames {
            let (n, t) = next("frame")?;
            if t.len() != dim {
                return Err(parse_err(
                    n,
                    format!("{} feature values, expected {dim}", t.len()),
                ));
            }
            data.extend(parse_all::<f64>(n, &t)?);
        }
        out.push(Utterance {
            id,
            features: Features::new(frames, dim, data)?,
            words,
            alignment,
            alignment_arcs,
        });
    }
    if let Some((n, _)) = it.next() {
        return Err(parse_err(n, "trailing content after the last utterance"));
    }
    Ok(out)
}

/// `SCORER v1`, a `pdfs P dim F` line, then one `row` per pdf holding its
/// F weights followed by its bias.
pub fn write_model(params: &ScorerParams) -> String {
    let mut s = String::new();
    writeln!(s, "{MODEL_MAGIC}").unwrap();
    writeln!(s, "pdfs {} dim {}", params.num_pdfs(), params.feature_dim()).unwrap();
    for row in params.weights().chunks(params.feature_dim() + 1) {
        writeln!(s, "row {}", join(row)).unwrap();
    }
    s
}

pub fn read_model(text: &str) -> Result<ScorerParams, IoError> {
    let lines = expect_header(text, MODEL_MAGIC)?;
    let (n, first) = *lines
        .first()
        .ok_or_else(|| parse_err(0, "missing shape line"))?;
    let (pdfs, dim) = match first.split_whitespace().collect::<Vec<_>>()[..] {
        ["pdfs", p, "dim", d] => (parse_num::<usize>(n, p)?, parse_num::<usize>(n, d)?),
        _ => return Err(parse_err(n, "expected 'pdfs P dim F'")),
    };
    let rows = &lines[1..];
    if rows.len() != pdfs {
        return Err(parse_err(n, format!("{} rows for {pdfs} pdfs", rows.len())));
    }
    let mut weights = Vec::with_capacity(pdfs * (dim + 1));
    for &(n, l) in rows {
        let vals: Vec<f64> = parse_all(n, &keyword(n, l, "row")?)?;
        if vals.len() != dim + 1 {
            return Err(parse_err(
                n,
                format!("{} values, expected {}", vals.len(), dim + 1),
            ));
        }
        weights.extend(vals);
    }
    Ok(ScorerParams::from_weights(pdfs, dim, weights)?)
}
