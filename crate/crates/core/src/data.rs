//! Task records and their on-disk formats.
//!
//! C-STS: JSONL with `sentence1`, `sentence2`, `condition`, `label`,
//! `pair_id`. KG triples: UTF-8 TSV `head<TAB>relation<TAB>tail`.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CstsQuadruplet {
    pub sentence1: String,
    pub sentence2: String,
    pub condition: String,
    pub label: f64,
    pub pair_id: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct KgTriple {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl KgTriple {
    pub fn new(head: impl Into<String>, relation: impl Into<String>, tail: impl Into<String>) -> Result<Self> {
        let t = KgTriple {
            head: head.into(),
            relation: relation.into(),
            tail: tail.into(),
        };
        if t.head.is_empty() || t.relation.is_empty() || t.tail.is_empty() {
            return Err(Error::invalid(format!("empty field in triple {t:?}")));
        }
        Ok(t)
    }

    /// `(t, inverse r, h)`.
    pub fn inverse(&self) -> KgTriple {
        KgTriple {
            head: self.tail.clone(),
            relation: inverse_relation(&self.relation),
            tail: self.head.clone(),
        }
    }
}

/// Condition text used for head prediction through relation `r`.
pub fn inverse_relation(r: &str) -> String {
    format!("inverse {r}")
}

/// A C-STS instance with both twin conditions resolved.
#[derive(Clone, Debug, PartialEq)]
pub struct TwinInstance {
    pub pair_id: u64,
    pub sentence1: String,
    pub sentence2: String,
    pub cond_high: String,
    pub cond_low: String,
    pub label_high: f64,
    pub label_low: f64,
}

/// Pairs quadruplets into twin instances; see [`crate::losses::pair_twins`].
pub fn twin_instances(quads: &[CstsQuadruplet]) -> Result<Vec<TwinInstance>> {
    let pairs = crate::losses::pair_twins(quads, |q| q.pair_id, |q| q.label)?;
    pairs
        .into_iter()
        .map(|(hi, lo)| {
            let (a, b) = (&quads[hi], &quads[lo]);
            if a.sentence1 != b.sentence1 || a.sentence2 != b.sentence2 {
                return Err(Error::invalid(format!(
                    "twins of pair_id {} have different sentences",
                    a.pair_id
                )));
            }
            Ok(TwinInstance {
                pair_id: a.pair_id,
                sentence1: a.sentence1.clone(),
                sentence2: a.sentence2.clone(),
                cond_high: a.condition.clone(),
                cond_low: b.condition.clone(),
                label_high: a.label,
                label_low: b.label,
            })
        })
        .collect()
}

pub fn load_csts(path: impl AsRef<Path>) -> Result<Vec<CstsQuadruplet>> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let q: CstsQuadruplet = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(q);
    }
    Ok(out)
}

pub fn save_csts(path: impl AsRef<Path>, quads: &[CstsQuadruplet]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for q in quads {
        serde_json::to_writer(&mut w, q)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_triples(path: impl AsRef<Path>) -> Result<Vec<KgTriple>> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(parse_err(format!("expected 3 tab-separated fields, got {}", fields.len())));
        }
        out.push(KgTriple::new(fields[0], fields[1], fields[2]).map_err(|e| parse_err(e.to_string()))?);
    }
    Ok(out)
}

pub fn save_triples(path: impl AsRef<Path>, triples: &[KgTriple]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for t in triples {
        writeln!(w, "{}\t{}\t{}", t.head, t.relation, t.tail)?;
    }
    w.flush()?;
    Ok(())
}

/// Every entity mentioned by any triple, sorted.
pub fn entities<'a>(triples: impl IntoIterator<Item = &'a KgTriple>) -> Vec<String> {
    let set: BTreeSet<&str> = triples
        .into_iter()
        .flat_map(|t| [t.head.as_str(), t.tail.as_str()])
        .collect();
    set.into_iter().map(str::to_owned).collect()
}
