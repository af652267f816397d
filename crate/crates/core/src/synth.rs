//! Generated data with planted aspect-opinion structure.
//!
//! Each sentence has one or two clauses joined by `but`. A clause reads
//! `the <aspect> is [<adverb>] <opinion>`; the aspect noun is a dependency
//! child of its opinion adjective and the constituent tree keeps each clause
//! in its own `S`. The gold label is the lexicon polarity of the opinion in
//! the aspect's clause, so the other clause acts as a distractor.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{AspectInstance, ConTree, Polarity};
use crate::encoders::embedding::fnv1a;
use crate::error::{EmgfError, Result};

/// Width of the generated knowledge vectors.
pub const KGE_WIDTH: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    pub instances: usize,
    /// Number of distinct content words (aspects, opinions, adverbs).
    pub vocab: usize,
    pub seed: u64,
    pub with_kge: bool,
    /// Probability that a sentence has a second clause.
    pub two_clause_prob: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            instances: 64,
            vocab: 50,
            seed: 7,
            with_kge: true,
            two_clause_prob: 0.8,
        }
    }
}

/// Word lists drawn for one generated corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    pub aspects: Vec<String>,
    pub adverbs: Vec<String>,
    /// Opinion words per polarity, indexed by [`Polarity::index`].
    pub opinions: [Vec<String>; 3],
}

impl Lexicon {
    pub fn new(vocab: usize) -> Result<Self> {
        if vocab < 5 {
            return Err(EmgfError::Config(format!(
                "synthetic vocabulary needs at least 5 words, got {vocab}"
            )));
        }
        let n_opinion = (vocab * 3 / 10).max(1);
        let n_aspect = ((vocab - 3 * n_opinion) * 2 / 3).max(1);
        let n_adverb = (vocab - 3 * n_opinion - n_aspect).max(1);
        let words = |prefix: &str, n: usize| (0..n).map(|i| format!("{prefix}{i}")).collect();
        Ok(Lexicon {
            aspects: words("item", n_aspect),
            adverbs: words("adv", n_adverb),
            opinions: [words("good", n_opinion), words("plain", n_opinion), words("bad", n_opinion)],
        })
    }

    pub fn polarity(&self, word: &str) -> Option<Polarity> {
        Polarity::ALL
            .into_iter()
            .find(|p| self.opinions[p.index()].iter().any(|w| w == word))
    }

    /// `word<TAB>polarity` lines for every opinion word.
    pub fn to_tsv(&self) -> String {
        let mut entries = BTreeMap::new();
        for p in Polarity::ALL {
            for w in &self.opinions[p.index()] {
                entries.insert(w.clone(), p);
            }
        }
        let mut out = String::new();
        for (w, p) in entries {
            writeln!(out, "{w}\t{p}").unwrap();
        }
        out
    }

    /// Deterministic knowledge vector: polarity one-hot for opinion words,
    /// an aspect flag for aspect nouns, plus small token-seeded jitter.
    pub fn knowledge_vector(&self, word: &str) -> Vec<f64> {
        let mut v = vec![0.0; KGE_WIDTH];
        if let Some(p) = self.polarity(word) {
            v[p.index()] = 1.0;
        } else if self.aspects.iter().any(|a| a == word) {
            v[3] = 1.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(word.as_bytes()));
        for x in &mut v {
            *x += rng.random_range(-0.05..0.05);
        }
        v
    }
}

struct Clause {
    tokens: Vec<String>,
    /// 1-based heads relative to the clause start; 0 marks the opinion word.
    heads: Vec<usize>,
    aspect: (usize, usize),
    opinion: usize,
    tree: String,
}

fn make_clause<R: Rng>(lex: &Lexicon, polarity: Polarity, rng: &mut R) -> Clause {
    let compound = rng.random_bool(0.25);
    let adverb = rng.random_bool(0.4);
    let mut tokens = vec!["the".to_string()];
    let mut aspect_words = vec![lex.aspects.choose(rng).unwrap().clone()];
    if compound {
        aspect_words.push(lex.aspects.choose(rng).unwrap().clone());
    }
    tokens.extend(aspect_words.iter().cloned());
    tokens.push("is".into());
    let adv = adverb.then(|| lex.adverbs.choose(rng).unwrap().clone());
    tokens.extend(adv.iter().cloned());
    let opinion_word = lex.opinions[polarity.index()].choose(rng).unwrap().clone();
    tokens.push(opinion_word.clone());

    let opinion = tokens.len() - 1;
    let head_noun = aspect_words.len(); // last aspect word
    let mut heads = vec![0; tokens.len()];
    heads[0] = head_noun + 1;
    if compound {
        heads[1] = 3;
    }
    heads[head_noun] = opinion + 1;
    heads[head_noun + 1] = opinion + 1;
    if adverb {
        heads[opinion - 1] = opinion + 1;
    }
    heads[opinion] = 0;

    let np = format!("(NP the {})", aspect_words.join(" "));
    let adjp = match &adv {
        Some(a) => format!("(ADJP {a} {opinion_word})"),
        None => format!("(ADJP {opinion_word})"),
    };
    Clause {
        tokens,
        heads,
        aspect: (1, 1 + aspect_words.len()),
        opinion,
        tree: format!("(S {np} (VP is {adjp}))"),
    }
}

fn random_other(p: Polarity, rng: &mut impl Rng) -> Polarity {
    // distractor polarity: usually different from the gold one
    if rng.random_bool(0.75) {
        let others: Vec<Polarity> = Polarity::ALL.into_iter().filter(|&q| q != p).collect();
        *others.choose(rng).unwrap()
    } else {
        p
    }
}

fn make_instance<R: Rng>(lex: &Lexicon, opts: &SynthOptions, label: Polarity, rng: &mut R) -> Result<AspectInstance> {
    let first = make_clause(lex, label, rng);
    if !rng.random_bool(opts.two_clause_prob) {
        let mut tokens = first.tokens;
        let mut heads = first.heads;
        let root = first.opinion + 1;
        tokens.push(".".into());
        heads.push(root);
        let tree = format!("(S {} (. .))", &first.tree[3..first.tree.len() - 1]);
        return build(lex, opts, tokens, heads, first.aspect, label, tree);
    }

    let other = make_clause(lex, random_other(label, rng), rng);
    let gold_first = rng.random_bool(0.5);
    let (c1, c2) = if gold_first { (&first, &other) } else { (&other, &first) };

    let off2 = c1.tokens.len() + 1;
    let root = c1.opinion + 1;
    let mut tokens = c1.tokens.clone();
    let mut heads = c1.heads.clone();
    tokens.push("but".into());
    heads.push(off2 + c2.opinion + 1);
    tokens.extend(c2.tokens.iter().cloned());
    heads.extend(c2.heads.iter().map(|&h| if h == 0 { root } else { h + off2 }));
    tokens.push(".".into());
    heads.push(root);

    let aspect = if gold_first {
        c1.aspect
    } else {
        (c2.aspect.0 + off2, c2.aspect.1 + off2)
    };
    let tree = format!("(S {} (CC but) {} (. .))", c1.tree, c2.tree);
    build(lex, opts, tokens, heads, aspect, label, tree)
}

fn build(
    lex: &Lexicon,
    opts: &SynthOptions,
    tokens: Vec<String>,
    heads: Vec<usize>,
    aspect: (usize, usize),
    label: Polarity,
    tree: String,
) -> Result<AspectInstance> {
    let kge = opts
        .with_kge
        .then(|| tokens.iter().map(|t| lex.knowledge_vector(t)).collect());
    AspectInstance::new(tokens, aspect, label, heads, tree, kge)
}

/// Generates `opts.instances` instances with balanced labels.
pub fn generate(opts: &SynthOptions) -> Result<(Vec<AspectInstance>, Lexicon)> {
    if opts.instances == 0 {
        return Err(EmgfError::Config("instance count must be positive".into()));
    }
    if !(0.0..=1.0).contains(&opts.two_clause_prob) {
        return Err(EmgfError::Config("two_clause_prob must be in [0, 1]".into()));
    }
    let lex = Lexicon::new(opts.vocab)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let data = (0..opts.instances)
        .map(|i| make_instance(&lex, opts, Polarity::ALL[i % 3], &mut rng))
        .collect::<Result<Vec<_>>>()?;
    Ok((data, lex))
}

/// Writes the dataset and, next to it, `<path>.lexicon.tsv`.
pub fn write(opts: &SynthOptions, path: impl AsRef<Path>) -> Result<Vec<AspectInstance>> {
    let path = path.as_ref();
    let (data, lex) = generate(opts)?;
    crate::data::write_dataset(path, &data)?;
    let lex_path = lexicon_path(path);
    std::fs::write(&lex_path, lex.to_tsv()).map_err(|e| EmgfError::io(&lex_path, e))?;
    Ok(data)
}

pub fn lexicon_path(dataset: &Path) -> std::path::PathBuf {
    let mut name = dataset.as_os_str().to_owned();
    name.push(".lexicon.tsv");
    name.into()
}

/// Majority vote of lexicon words inside the smallest clause (`S` node)
/// covering the aspect; ties and empty clauses give neutral.
pub fn lexicon_baseline(inst: &AspectInstance, lex: &Lexicon) -> Polarity {
    let (s, e) = inst.aspect();
    let (lo, hi) = smallest_clause(inst.tree(), s, e).unwrap_or((0, inst.len()));
    let mut votes = [0usize; 3];
    for t in &inst.tokens()[lo..hi] {
        if let Some(p) = lex.polarity(t) {
            votes[p.index()] += 1;
        }
    }
    let max = *votes.iter().max().unwrap();
    let winners: Vec<usize> = (0..3).filter(|&i| votes[i] == max).collect();
    if max == 0 || winners.len() > 1 {
        Polarity::Neutral
    } else {
        Polarity::ALL[winners[0]]
    }
}

fn smallest_clause(tree: &ConTree, s: usize, e: usize) -> Option<(usize, usize)> {
    if tree.is_leaf() {
        return None;
    }
    let (lo, hi) = tree.span();
    if s < lo || e > hi {
        return None;
    }
    tree.children()
        .iter()
        .find_map(|c| smallest_clause(c, s, e))
        .or_else(|| (tree.label() == Some("S")).then_some((lo, hi)))
}

/// The 6-token two-clause instance used for full-model gradient checks.
pub fn gradcheck_instance(with_kge: bool) -> AspectInstance {
    let lex = Lexicon::new(10).expect("valid vocabulary");
    let tokens: Vec<String> = ["item0", "good0", "but", "item1", "bad0", "."]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let kge = with_kge.then(|| tokens.iter().map(|t| lex.knowledge_vector(t)).collect());
    AspectInstance::new(
        tokens,
        (0, 1),
        Polarity::Positive,
        vec![2, 0, 5, 5, 2, 2],
        "(S (S (NP item0) (ADJP good0)) (CC but) (S (NP item1) (ADJP bad0)) (. .))".to_string(),
        kge,
    )
    .expect("valid gradcheck instance")
}

/// Random bracketed tree over `tokens`: every phrase has 1-3 children and
/// phrase labels come from a small fixed set.
pub fn random_tree<R: Rng + ?Sized>(tokens: &[String], rng: &mut R) -> String {
    const LABELS: [&str; 5] = ["S", "NP", "VP", "PP", "ADJP"];
    fn go<R: Rng + ?Sized>(tokens: &[String], rng: &mut R, out: &mut String) {
        let label = LABELS[rng.random_range(0..LABELS.len())];
        out.push('(');
        out.push_str(label);
        if tokens.len() == 1 {
            if rng.random_bool(0.5) {
                write!(out, " {})", tokens[0]).unwrap();
            } else {
                write!(out, " (X {}))", tokens[0]).unwrap();
            }
            return;
        }
        let parts = rng.random_range(1..=3).min(tokens.len()).max(2);
        let mut cuts: Vec<usize> = Vec::new();
        while cuts.len() < parts - 1 {
            let c = rng.random_range(1..tokens.len());
            if !cuts.contains(&c) {
                cuts.push(c);
            }
        }
        cuts.sort_unstable();
        let mut start = 0;
        for end in cuts.into_iter().chain([tokens.len()]) {
            let piece = &tokens[start..end];
            if piece.len() == 1 && rng.random_bool(0.5) {
                write!(out, " {}", piece[0]).unwrap();
            } else {
                out.push(' ');
                go(piece, rng, out);
            }
            start = end;
        }
        out.push(')');
    }
    let mut out = String::new();
    go(tokens, rng, &mut out);
    out
}

/// Random projective-or-not dependency heads (1-based, exactly one root).
pub fn random_heads<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    // random attachment order guarantees a tree
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut heads = vec![0; n];
    for k in 1..n {
        let parent = order[rng.random_range(0..k)];
        heads[order[k]] = parent + 1;
    }
    heads
}

/// `w0 w1 ...` placeholder tokens.
pub fn placeholder_tokens(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("w{i}")).collect()
}
