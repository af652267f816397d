//! Bracketed (PTB-style) constituency trees and the layered phrase graphs
//! built from them.
//!
//! Levels are counted bottom-up by phrase height: a word has height 0 and a
//! phrase has height one more than its tallest child. At level `k` every
//! token belongs to its highest ancestor phrase whose height is at most `k`
//! (or stays alone when even its parent is taller). Two tokens are connected
//! in the level-`k` slice when they share that phrase, so each slice is an
//! equivalence relation and higher levels coarsen lower ones.

use std::fmt;

use crate::error::{EmgfError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConTree {
    Leaf { word: String, index: usize },
    Phrase { label: String, children: Vec<ConTree> },
}

fn unescape(word: &str) -> &str {
    match word {
        "-LRB-" => "(",
        "-RRB-" => ")",
        "-LCB-" => "{",
        "-RCB-" => "}",
        "-LSB-" => "[",
        "-RSB-" => "]",
        w => w,
    }
}

fn escape(word: &str) -> &str {
    match word {
        "(" => "-LRB-",
        ")" => "-RRB-",
        w => w,
    }
}

#[derive(Debug, PartialEq)]
enum Lexeme<'a> {
    Open,
    Close,
    Atom(&'a str),
}

fn lex(s: &str) -> Vec<Lexeme<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in s.char_indices() {
        if ch == '(' || ch == ')' || ch.is_whitespace() {
            if let Some(st) = start.take() {
                out.push(Lexeme::Atom(&s[st..i]));
            }
            match ch {
                '(' => out.push(Lexeme::Open),
                ')' => out.push(Lexeme::Close),
                _ => {}
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(st) = start {
        out.push(Lexeme::Atom(&s[st..]));
    }
    out
}

struct Parser<'a> {
    lexemes: Vec<Lexeme<'a>>,
    pos: usize,
    next_leaf: usize,
}

impl<'a> Parser<'a> {
    fn phrase(&mut self) -> Result<ConTree> {
        // caller has consumed '('
        let label = match self.lexemes.get(self.pos) {
            Some(Lexeme::Atom(a)) => {
                self.pos += 1;
                (*a).to_string()
            }
            _ => String::new(),
        };
        let mut children = Vec::new();
        loop {
            match self.lexemes.get(self.pos) {
                None => return Err(EmgfError::Tree("unbalanced brackets: missing ')'".into())),
                Some(Lexeme::Close) => {
                    self.pos += 1;
                    break;
                }
                Some(Lexeme::Open) => {
                    self.pos += 1;
                    children.push(self.phrase()?);
                }
                Some(Lexeme::Atom(w)) => {
                    self.pos += 1;
                    children.push(ConTree::Leaf {
                        word: unescape(w).to_string(),
                        index: self.next_leaf,
                    });
                    self.next_leaf += 1;
                }
            }
        }
        if children.is_empty() {
            return Err(EmgfError::Tree(format!("phrase '{label}' has no children")));
        }
        Ok(ConTree::Phrase { label, children })
    }
}

/// Parses a bracketed tree such as `(S (NP Looks) (VP nice))`.
///
/// Words may sit directly under any phrase; `-LRB-`/`-RRB-` style escapes
/// are mapped back to the bracket characters.
pub fn parse_bracketed(s: &str) -> Result<ConTree> {
    let lexemes = lex(s);
    let mut p = Parser {
        lexemes,
        pos: 0,
        next_leaf: 0,
    };
    match p.lexemes.first() {
        Some(Lexeme::Open) => p.pos = 1,
        Some(_) => return Err(EmgfError::Tree("tree must start with '('".into())),
        None => return Err(EmgfError::Tree("empty tree string".into())),
    }
    let tree = p.phrase()?;
    if p.pos != p.lexemes.len() {
        return Err(EmgfError::Tree(
            "unbalanced brackets: trailing input after root".into(),
        ));
    }
    Ok(tree)
}

impl ConTree {
    pub fn is_leaf(&self) -> bool {
        matches!(self, ConTree::Leaf { .. })
    }

    pub fn label(&self) -> Option<&str> {
        match self {
            ConTree::Phrase { label, .. } => Some(label),
            ConTree::Leaf { .. } => None,
        }
    }

    pub fn children(&self) -> &[ConTree] {
        match self {
            ConTree::Phrase { children, .. } => children,
            ConTree::Leaf { .. } => &[],
        }
    }

    /// Leaf words left to right.
    pub fn leaves(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            ConTree::Leaf { word, .. } => out.push(word),
            ConTree::Phrase { children, .. } => {
                children.iter().for_each(|c| c.collect_leaves(out))
            }
        }
    }

    pub fn num_leaves(&self) -> usize {
        match self {
            ConTree::Leaf { .. } => 1,
            ConTree::Phrase { children, .. } => children.iter().map(ConTree::num_leaves).sum(),
        }
    }

    /// Token span `[start, end)` covered by this node.
    pub fn span(&self) -> (usize, usize) {
        match self {
            ConTree::Leaf { index, .. } => (*index, index + 1),
            ConTree::Phrase { children, .. } => {
                let first = children.first().expect("phrase has children").span().0;
                let last = children.last().expect("phrase has children").span().1;
                (first, last)
            }
        }
    }

    /// Height: 0 for words, `1 + max child height` for phrases.
    pub fn height(&self) -> usize {
        match self {
            ConTree::Leaf { .. } => 0,
            ConTree::Phrase { children, .. } => {
                1 + children.iter().map(ConTree::height).max().unwrap_or(0)
            }
        }
    }

    /// Checks that the leaves spell out `tokens` exactly.
    pub fn check_tokens(&self, tokens: &[String]) -> Result<()> {
        let leaves = self.leaves();
        for (i, (leaf, tok)) in leaves.iter().zip(tokens).enumerate() {
            if leaf != tok {
                return Err(EmgfError::Tree(format!(
                    "leaf/token mismatch at position {i}: tree has '{leaf}', tokens have '{tok}'"
                )));
            }
        }
        if leaves.len() != tokens.len() {
            return Err(EmgfError::Tree(format!(
                "leaf/token mismatch at position {}: tree has {} leaves, sentence has {} tokens",
                leaves.len().min(tokens.len()),
                leaves.len(),
                tokens.len()
            )));
        }
        Ok(())
    }

    /// Group id of every token at the given level. Tokens with equal ids share
    /// a phrase.
    pub fn level_groups(&self, level: usize) -> Vec<usize> {
        let n = self.num_leaves();
        let mut groups = vec![usize::MAX; n];
        let mut next_id = 0;
        self.assign_groups(level, &mut groups, &mut next_id);
        groups
    }

    fn assign_groups(&self, level: usize, groups: &mut [usize], next_id: &mut usize) {
        match self {
            ConTree::Leaf { index, .. } => {
                // reached only when every enclosing phrase is taller than `level`
                groups[*index] = *next_id;
                *next_id += 1;
            }
            ConTree::Phrase { children, .. } => {
                if self.height() <= level {
                    let (s, e) = self.span();
                    groups[s..e].iter_mut().for_each(|g| *g = *next_id);
                    *next_id += 1;
                } else {
                    for c in children {
                        c.assign_groups(level, groups, next_id);
                    }
                }
            }
        }
    }

    /// Binary `n×n` matrix with 1 where two tokens share the level's phrase.
    pub fn level_adjacency(&self, level: usize) -> Tensor {
        let groups = self.level_groups(level);
        let n = groups.len();
        let mut adj = Tensor::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if groups[i] == groups[j] {
                    adj.set(i, j, 1.0);
                }
            }
        }
        adj
    }
}

impl fmt::Display for ConTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConTree::Leaf { word, .. } => f.write_str(escape(word)),
            ConTree::Phrase { label, children } => {
                f.write_str("(")?;
                f.write_str(label)?;
                for (i, c) in children.iter().enumerate() {
                    if i > 0 || !label.is_empty() {
                        f.write_str(" ")?;
                    }
                    write!(f, "{c}")?;
                }
                f.write_str(")")
            }
        }
    }
}

/// Layered constituent adjacency: one slice per selected level, bottom-up.
#[derive(Debug, Clone)]
pub struct ConGraphStack {
    pub slices: Vec<Tensor>,
    pub levels: Vec<usize>,
}

impl ConGraphStack {
    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    /// The lowest selected level.
    pub fn finest(&self) -> &Tensor {
        &self.slices[0]
    }
}

/// Levels picked for `count` slices: 1, 3, 5, ... clamped at the root height.
pub fn select_levels(root_height: usize, count: usize) -> Vec<usize> {
    (0..count).map(|m| (2 * m + 1).min(root_height)).collect()
}

pub fn build_con_stack(tree: &ConTree, count: usize) -> ConGraphStack {
    let levels = select_levels(tree.height(), count);
    let slices = levels.iter().map(|&l| tree.level_adjacency(l)).collect();
    ConGraphStack { slices, levels }
}
