use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CodeVocabulary, DataKind, RecordDataset};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    id: String,
    codes: BTreeMap<String, serde_json::Number>,
}

#[derive(Serialize)]
struct RecordLineOut<'a> {
    id: &'a str,
    codes: BTreeMap<&'a str, u64>,
}

/// Reads one `{"id": .., "codes": {code: count}}` object per line.
///
/// Without a vocabulary, the codes seen in the file are sorted to form one,
/// so the column order does not depend on line order. `kind` defaults to
/// count. Blank lines are skipped.
pub fn load_records(
    path: impl AsRef<Path>,
    vocab: Option<&CodeVocabulary>,
    kind: Option<DataKind>,
) -> Result<RecordDataset> {
    let path = path.as_ref();
    let kind = kind.unwrap_or(DataKind::Count);
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut records: Vec<(usize, String, Vec<(String, u64)>)> = Vec::new();
    let mut seen_ids = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RecordLine =
            serde_json::from_str(&line).map_err(|e| parse_err(lineno, e.to_string()))?;
        if !seen_ids.insert(rec.id.clone()) {
            return Err(parse_err(
                lineno,
                format!("duplicate record id `{}`", rec.id),
            ));
        }
        let mut codes = Vec::with_capacity(rec.codes.len());
        for (code, n) in rec.codes {
            let count = match (n.as_u64(), n.as_i64()) {
                (Some(c), _) => c,
                (None, Some(neg)) => {
                    return Err(parse_err(
                        lineno,
                        format!("negative count {neg} for code `{code}`"),
                    ))
                }
                _ => {
                    return Err(parse_err(
                        lineno,
                        format!("count {n} for code `{code}` is not a non-negative integer"),
                    ))
                }
            };
            if kind == DataKind::Binary && count > 1 {
                return Err(parse_err(
                    lineno,
                    format!("binary record has count {count} for code `{code}`"),
                ));
            }
            codes.push((code, count));
        }
        records.push((lineno, rec.id, codes));
    }

    let vocab = match vocab {
        Some(v) => v.clone(),
        None => {
            let all: BTreeSet<&str> = records
                .iter()
                .flat_map(|(_, _, c)| c.iter().map(|(code, _)| code.as_str()))
                .collect();
            CodeVocabulary::new(all.into_iter().map(str::to_owned).collect())?
        }
    };

    let mut x = Matrix::zeros(records.len(), vocab.len());
    let mut ids = Vec::with_capacity(records.len());
    for (row, (lineno, id, codes)) in records.into_iter().enumerate() {
        for (code, count) in codes {
            let dim = vocab.dim(&code).ok_or_else(|| {
                parse_err(lineno, format!("code `{code}` is not in the vocabulary"))
            })?;
            x[(row, dim)] = count as f64;
        }
        ids.push(id);
    }
    RecordDataset::new(x, kind, vocab)?.with_ids(ids)
}

/// Writes the dataset as JSONL with only the non-zero codes of each record.
/// Records without ids are written as `r0, r1, ...`.
pub fn save_records(d: &RecordDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file =
        File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(format!("writing {}", path.display()), e);
    for (i, row) in d.matrix().row_iter().enumerate() {
        let fallback;
        let id = match d.ids() {
            Some(ids) => ids[i].as_str(),
            None => {
                fallback = format!("r{i}");
                fallback.as_str()
            }
        };
        let codes = row
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(j, &v)| (d.vocabulary().code(j), v as u64))
            .collect();
        serde_json::to_writer(&mut w, &RecordLineOut { id, codes })?;
        w.write_all(b"\n").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// One code per line, in dimension order.
pub fn load_vocabulary(path: impl AsRef<Path>) -> Result<CodeVocabulary> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let codes = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect();
    CodeVocabulary::new(codes)
}

pub fn save_vocabulary(vocab: &CodeVocabulary, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for c in vocab.codes() {
        text.push_str(c);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
