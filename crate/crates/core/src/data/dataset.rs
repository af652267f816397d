//! Line-delimited JSON dataset files.
//!
//! One record per line:
//! `{"tokens":[..],"aspect":[start,end],"polarity":"positive","dep_heads":[..],"con_tree":"(..)","kge":[[..],..]}`
//! with 1-based heads (0 = root) and an optional `kge` field. Records labelled
//! `conflict` are skipped.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::instance::{AspectInstance, Polarity};
use crate::error::{EmgfError, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    tokens: Vec<String>,
    aspect: [usize; 2],
    polarity: String,
    dep_heads: Vec<usize>,
    con_tree: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kge: Option<Vec<Vec<f64>>>,
}

impl From<&AspectInstance> for Record {
    fn from(inst: &AspectInstance) -> Self {
        let (s, e) = inst.aspect();
        Record {
            tokens: inst.tokens().to_vec(),
            aspect: [s, e],
            polarity: inst.polarity().to_string(),
            dep_heads: inst.dep_heads().to_vec(),
            con_tree: inst.con_tree().to_string(),
            kge: inst.kge().map(<[Vec<f64>]>::to_vec),
        }
    }
}

/// Per-class counts in [`Polarity::ALL`] order.
pub fn label_counts(instances: &[AspectInstance]) -> [usize; 3] {
    let mut counts = [0; 3];
    for inst in instances {
        counts[inst.polarity().index()] += 1;
    }
    counts
}

/// Parses records from `reader`; `origin` is used in error messages.
pub fn read_dataset(reader: impl Read, origin: &Path) -> Result<Vec<AspectInstance>> {
    let mut out = Vec::new();
    let mut skipped = 0usize;
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| EmgfError::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec_err = |msg: String| EmgfError::Record {
            path: origin.to_path_buf(),
            line: lineno,
            msg,
        };
        let rec: Record = serde_json::from_str(&line).map_err(|e| rec_err(e.to_string()))?;
        if rec.polarity.eq_ignore_ascii_case("conflict") {
            skipped += 1;
            continue;
        }
        let polarity: Polarity = rec.polarity.parse().map_err(|e: EmgfError| rec_err(e.to_string()))?;
        let inst = AspectInstance::new(
            rec.tokens,
            (rec.aspect[0], rec.aspect[1]),
            polarity,
            rec.dep_heads,
            rec.con_tree,
            rec.kge,
        )
        .map_err(|e| rec_err(e.to_string()))?;
        out.push(inst);
    }
    if out.is_empty() {
        log::warn!("{}: no instances", origin.display());
    } else {
        let [p, u, n] = label_counts(&out);
        log::info!(
            "{}: {} instances (positive {p}, neutral {u}, negative {n}), {skipped} conflict skipped",
            origin.display(),
            out.len()
        );
    }
    Ok(out)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<AspectInstance>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| EmgfError::io(path, e))?;
    read_dataset(file, path)
}

/// Serializes one instance as a single JSON line (no trailing newline).
pub fn to_json_line(inst: &AspectInstance) -> String {
    serde_json::to_string(&Record::from(inst)).expect("record serializes")
}

pub fn write_dataset(path: impl AsRef<Path>, instances: &[AspectInstance]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for inst in instances {
        buf.extend_from_slice(to_json_line(inst).as_bytes());
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| EmgfError::io(path, e))?;
    f.write_all(&buf).map_err(|e| EmgfError::io(path, e))
}
