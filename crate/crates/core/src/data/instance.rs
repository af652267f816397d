use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::constituency::{parse_bracketed, ConTree};
use crate::error::{EmgfError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Neutral,
    Negative,
}

impl Polarity {
    pub const ALL: [Polarity; 3] = [Polarity::Positive, Polarity::Neutral, Polarity::Negative];

    pub fn index(self) -> usize {
        match self {
            Polarity::Positive => 0,
            Polarity::Neutral => 1,
            Polarity::Negative => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Polarity> {
        Polarity::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Neutral => "neutral",
            Polarity::Negative => "negative",
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Polarity {
    type Err = EmgfError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "positive" | "pos" => Ok(Polarity::Positive),
            "neutral" | "neu" => Ok(Polarity::Neutral),
            "negative" | "neg" => Ok(Polarity::Negative),
            other => Err(EmgfError::Instance(format!("unknown polarity '{other}'"))),
        }
    }
}

/// One sentence with a single aspect span, its label, and both parses.
#[derive(Debug, Clone, PartialEq)]
pub struct AspectInstance {
    tokens: Vec<String>,
    aspect: (usize, usize),
    polarity: Polarity,
    /// 1-based head per token, 0 for the root.
    dep_heads: Vec<usize>,
    con_tree: String,
    tree: ConTree,
    kge: Option<Vec<Vec<f64>>>,
}

/// Checks that 1-based `heads` form a single-rooted tree over `heads.len()` tokens.
pub fn validate_heads(heads: &[usize]) -> Result<()> {
    let n = heads.len();
    let roots = heads.iter().filter(|&&h| h == 0).count();
    if roots != 1 {
        return Err(EmgfError::Instance(format!(
            "dependency tree must have exactly one root, found {roots}"
        )));
    }
    for (i, &h) in heads.iter().enumerate() {
        if h > n {
            return Err(EmgfError::Instance(format!(
                "token {i} has head {h} outside 0..={n}"
            )));
        }
        if h == i + 1 {
            return Err(EmgfError::Instance(format!("token {i} is its own head")));
        }
    }
    // 0 = unvisited, 1 = on current path, 2 = known to reach the root
    let mut state = vec![0u8; n];
    for start in 0..n {
        let mut path = Vec::new();
        let mut cur = start;
        loop {
            match state[cur] {
                2 => break,
                1 => {
                    return Err(EmgfError::Instance(format!(
                        "dependency heads contain a cycle through token {cur}"
                    )))
                }
                _ => {}
            }
            state[cur] = 1;
            path.push(cur);
            match heads[cur] {
                0 => break,
                h => cur = h - 1,
            }
        }
        for p in path {
            state[p] = 2;
        }
    }
    Ok(())
}

impl AspectInstance {
    pub fn new(
        tokens: Vec<String>,
        aspect: (usize, usize),
        polarity: Polarity,
        dep_heads: Vec<usize>,
        con_tree: impl Into<String>,
        kge: Option<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let n = tokens.len();
        if n == 0 {
            return Err(EmgfError::Instance("sentence has no tokens".into()));
        }
        let (s, e) = aspect;
        if s >= e || e > n {
            return Err(EmgfError::Instance(format!(
                "aspect span [{s}, {e}) is empty or outside [0, {n})"
            )));
        }
        if dep_heads.len() != n {
            return Err(EmgfError::Instance(format!(
                "{} dependency heads for {n} tokens",
                dep_heads.len()
            )));
        }
        validate_heads(&dep_heads)?;
        let con_tree = con_tree.into();
        let tree = parse_bracketed(&con_tree)?;
        tree.check_tokens(&tokens)?;
        if let Some(k) = &kge {
            if k.len() != n {
                return Err(EmgfError::Instance(format!(
                    "{} knowledge vectors for {n} tokens",
                    k.len()
                )));
            }
            let w = k[0].len();
            if let Some(i) = k.iter().position(|v| v.len() != w) {
                return Err(EmgfError::Instance(format!(
                    "knowledge vector width inconsistent: token 0 has {w}, token {i} has {}",
                    k[i].len()
                )));
            }
        }
        Ok(AspectInstance {
            tokens,
            aspect,
            polarity,
            dep_heads,
            con_tree,
            tree,
            kge,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn aspect(&self) -> (usize, usize) {
        self.aspect
    }

    pub fn aspect_indices(&self) -> Vec<usize> {
        (self.aspect.0..self.aspect.1).collect()
    }

    pub fn polarity(&self) -> Polarity {
        self.polarity
    }

    pub fn dep_heads(&self) -> &[usize] {
        &self.dep_heads
    }

    pub fn con_tree(&self) -> &str {
        &self.con_tree
    }

    pub fn tree(&self) -> &ConTree {
        &self.tree
    }

    pub fn kge(&self) -> Option<&[Vec<f64>]> {
        self.kge.as_deref()
    }

    /// Width of the knowledge vectors, if present.
    pub fn kge_width(&self) -> Option<usize> {
        self.kge.as_ref().map(|k| k[0].len())
    }

    /// Same sentence and parses with a different aspect span and label.
    pub fn with_aspect(&self, aspect: (usize, usize), polarity: Polarity) -> Result<Self> {
        AspectInstance::new(
            self.tokens.clone(),
            aspect,
            polarity,
            self.dep_heads.clone(),
            self.con_tree.clone(),
            self.kge.clone(),
        )
    }
}
