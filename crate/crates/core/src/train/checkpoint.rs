//! Plain-text checkpoints.
//!
//! ```text
//! EMGF-CHECKPOINT 1
//! arch {"model":{...},"preprocess":{...},"fusion":{...}}
//! params 42
//! param gcn_dep/0.weight 16 16
//! 0.0123 -0.5 ...
//! ```
//!
//! Values are written with round-trip precision, so a loaded model is
//! bit-identical to the saved one.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{EmgfError, Result};
use crate::model::{Architecture, Emgf};
use crate::tensor::Tensor;

const MAGIC: &str = "EMGF-CHECKPOINT 1";

pub fn to_string(model: &Emgf) -> String {
    let mut out = String::new();
    let arch = serde_json::to_string(model.net.arch()).expect("architecture serializes");
    writeln!(out, "{MAGIC}").unwrap();
    writeln!(out, "arch {arch}").unwrap();
    writeln!(out, "params {}", model.params.len()).unwrap();
    for (_, p) in model.params.iter() {
        writeln!(out, "param {} {} {}", p.name, p.value.rows(), p.value.cols()).unwrap();
        let values: Vec<String> = p.value.data().iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", values.join(" ")).unwrap();
    }
    out
}

pub fn from_str(text: &str) -> Result<Emgf> {
    let bad = |msg: String| EmgfError::Checkpoint(msg);
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(bad(format!("missing '{MAGIC}' header")));
    }
    let arch_json = lines
        .next()
        .and_then(|l| l.strip_prefix("arch "))
        .ok_or_else(|| bad("missing 'arch' line".into()))?;
    let arch: Architecture =
        serde_json::from_str(arch_json).map_err(|e| bad(format!("architecture: {e}")))?;
    let count: usize = lines
        .next()
        .and_then(|l| l.strip_prefix("params "))
        .and_then(|c| c.trim().parse().ok())
        .ok_or_else(|| bad("missing 'params' line".into()))?;

    let mut model = Emgf::new(arch, 0)?;
    if count != model.params.len() {
        return Err(bad(format!(
            "checkpoint has {count} parameters, architecture defines {}",
            model.params.len()
        )));
    }
    let mut seen = vec![false; count];
    for _ in 0..count {
        let header = lines.next().ok_or_else(|| bad("truncated parameter list".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let [tag, name, rows, cols] = fields[..] else {
            return Err(bad(format!("malformed parameter header '{header}'")));
        };
        let (Ok(rows), Ok(cols)) = (rows.parse::<usize>(), cols.parse::<usize>()) else {
            return Err(bad(format!("malformed parameter header '{header}'")));
        };
        if tag != "param" {
            return Err(bad(format!("malformed parameter header '{header}'")));
        }
        let id = model
            .params
            .find(name)
            .ok_or_else(|| bad(format!("unknown parameter '{name}'")))?;
        let values = lines
            .next()
            .ok_or_else(|| bad(format!("missing values for '{name}'")))?
            .split_whitespace()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| bad(format!("parameter '{name}': {e}")))?;
        let param = model.params.get_mut(id);
        if param.value.shape() != [rows, cols] {
            return Err(bad(format!(
                "parameter '{name}' is {rows}x{cols}, expected {}x{}",
                param.value.rows(),
                param.value.cols()
            )));
        }
        param.value = Tensor::from_vec(rows, cols, values)
            .map_err(|_| bad(format!("parameter '{name}' has the wrong number of values")))?;
        seen[id.index()] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        let name = &model.params.iter().nth(missing).unwrap().1.name;
        return Err(bad(format!("parameter '{name}' missing")));
    }
    Ok(model)
}

pub fn save(model: &Emgf, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_string(model)).map_err(|e| EmgfError::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Emgf> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| EmgfError::io(path, e))?;
    from_str(&text).map_err(|e| match e {
        EmgfError::Checkpoint(msg) => EmgfError::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Architecture {
        let mut a = Architecture::default();
        a.model.dim = 4;
        a.model.kge_dim = Some(3);
        a.fusion.blocks = 2;
        a
    }

    #[test]
    fn round_trip_is_exact() {
        let model = Emgf::new(small(), 17).unwrap();
        let back = from_str(&to_string(&model)).unwrap();
        assert_eq!(back.net.arch(), model.net.arch());
        for ((_, a), (_, b)) in model.params.iter().zip(back.params.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let text = to_string(&Emgf::new(small(), 1).unwrap());
        assert!(from_str("nonsense").is_err());
        assert!(from_str(&text.replace("param classifier/bias 1 3", "param classifier/bias 3 1")).is_err());
        assert!(from_str(&text.replace("classifier/bias", "classifier/offset")).is_err());
        let truncated: String = text.lines().take(5).map(|l| format!("{l}\n")).collect();
        assert!(from_str(&truncated).is_err());
    }
}
