//! Treebank reading, vocabularies and the grow/smooth split.
//!
//! Two bracketed notations are understood:
//!
//! * underscore-suffix, where every leaf is a `word_TAG` token:
//!   `(S (N Each_DD1 code_NN1) (V is_VBZ listed_VVN))`
//! * penn-paren, where every pre-terminal is a `(TAG word)` pair:
//!   `(S (NP (DT the) (NN dog)) (VP (VBD barked)))`
//!
//! Both produce the same [`RawTree`] value.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorpusError {
    #[error("unbalanced brackets at byte {position}")]
    UnbalancedBrackets { position: usize },
    #[error("token `{token}` has no part-of-speech tag")]
    MissingTag { token: String },
    #[error("empty constituent at byte {position}")]
    EmptyConstituent { position: usize },
    #[error("bare pre-terminal at byte {position} is not a tree")]
    BareLeaf { position: usize },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("grow fraction {0} is outside (0, 1)")]
    FractionOutOfRange(f64),
}

/// Bracketed notation of a treebank file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TreebankFormat {
    Underscore,
    Penn,
}

impl FromStr for TreebankFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "underscore" | "underscore-suffix" => Ok(TreebankFormat::Underscore),
            "penn" | "penn-paren" => Ok(TreebankFormat::Penn),
            other => Err(format!("unknown treebank format `{other}`")),
        }
    }
}

impl fmt::Display for TreebankFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TreebankFormat::Underscore => f.write_str("underscore"),
            TreebankFormat::Penn => f.write_str("penn"),
        }
    }
}

/// A treebank tree before any symbol interning.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RawTree {
    Node { label: String, children: Vec<RawTree> },
    Leaf { word: String, tag: String },
}

impl RawTree {
    pub fn node(label: impl Into<String>, children: Vec<RawTree>) -> Self {
        RawTree::Node { label: label.into(), children }
    }

    pub fn leaf(word: impl Into<String>, tag: impl Into<String>) -> Self {
        RawTree::Leaf { word: word.into(), tag: tag.into() }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, RawTree::Leaf { .. })
    }

    /// Label of an internal node, tag of a leaf.
    pub fn symbol(&self) -> &str {
        match self {
            RawTree::Node { label, .. } => label,
            RawTree::Leaf { tag, .. } => tag,
        }
    }

    pub fn children(&self) -> &[RawTree] {
        match self {
            RawTree::Node { children, .. } => children,
            RawTree::Leaf { .. } => &[],
        }
    }

    /// Leaves in sentence order as `(word, tag)` pairs.
    pub fn leaves(&self) -> Vec<(&str, &str)> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<(&'a str, &'a str)>) {
        match self {
            RawTree::Leaf { word, tag } => out.push((word, tag)),
            RawTree::Node { children, .. } => {
                for c in children {
                    c.collect_leaves(out);
                }
            }
        }
    }

    pub fn words(&self) -> Vec<&str> {
        self.leaves().into_iter().map(|(w, _)| w).collect()
    }

    pub fn tags(&self) -> Vec<&str> {
        self.leaves().into_iter().map(|(_, t)| t).collect()
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            RawTree::Leaf { .. } => 1,
            RawTree::Node { children, .. } => children.iter().map(RawTree::leaf_count).sum(),
        }
    }

    pub fn internal_count(&self) -> usize {
        match self {
            RawTree::Leaf { .. } => 0,
            RawTree::Node { children, .. } => 1 + children.iter().map(RawTree::internal_count).sum::<usize>(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.leaf_count() + self.internal_count()
    }

    /// Longest run of single-child internal nodes stacked on one span.
    pub fn max_unary_chain(&self) -> usize {
        fn walk(t: &RawTree) -> (usize, usize) {
            // (chain ending at this node, best in subtree)
            match t {
                RawTree::Leaf { .. } => (0, 0),
                RawTree::Node { children, .. } => {
                    let parts: Vec<_> = children.iter().map(walk).collect();
                    let best_below = parts.iter().map(|p| p.1).max().unwrap_or(0);
                    let here = if children.len() == 1 { parts[0].0 + 1 } else { 0 };
                    (here, best_below.max(here))
                }
            }
        }
        walk(self).1
    }

    /// Underscore-suffix bracketing on a single line.
    pub fn to_underscore_string(&self) -> String {
        let mut s = String::new();
        self.write_underscore(&mut s);
        s
    }

    fn write_underscore(&self, out: &mut String) {
        match self {
            RawTree::Leaf { word, tag } => {
                out.push_str(word);
                out.push('_');
                out.push_str(tag);
            }
            RawTree::Node { label, children } => {
                out.push('(');
                out.push_str(label);
                for c in children {
                    out.push(' ');
                    c.write_underscore(out);
                }
                out.push(')');
            }
        }
    }

    /// Penn-style bracketing on a single line.
    pub fn to_penn_string(&self) -> String {
        let mut s = String::new();
        self.write_penn(&mut s);
        s
    }

    fn write_penn(&self, out: &mut String) {
        match self {
            RawTree::Leaf { word, tag } => {
                out.push('(');
                out.push_str(tag);
                out.push(' ');
                out.push_str(word);
                out.push(')');
            }
            RawTree::Node { label, children } => {
                out.push('(');
                out.push_str(label);
                for c in children {
                    out.push(' ');
                    c.write_penn(out);
                }
                out.push(')');
            }
        }
    }

    pub fn to_format_string(&self, format: TreebankFormat) -> String {
        match format {
            TreebankFormat::Underscore => self.to_underscore_string(),
            TreebankFormat::Penn => self.to_penn_string(),
        }
    }
}

impl fmt::Display for RawTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_underscore_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Open,
    Close,
    Symbol(String),
}

fn tokenize(text: &str) -> Vec<(usize, Token)> {
    let mut tokens = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c == '(' || c == ')' || c.is_whitespace() {
            if let Some(s) = start.take() {
                tokens.push((s, Token::Symbol(text[s..i].to_string())));
            }
            if c == '(' {
                tokens.push((i, Token::Open));
            } else if c == ')' {
                tokens.push((i, Token::Close));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        tokens.push((s, Token::Symbol(text[s..].to_string())));
    }
    tokens
}

fn split_underscore_leaf(token: &str) -> Result<RawTree, CorpusError> {
    match token.rfind('_') {
        Some(i) if i > 0 && i + 1 < token.len() => Ok(RawTree::leaf(&token[..i], &token[i + 1..])),
        _ => Err(CorpusError::MissingTag { token: token.to_string() }),
    }
}

struct Reader {
    tokens: Vec<(usize, Token)>,
    pos: usize,
    end: usize,
    format: TreebankFormat,
}

impl Reader {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.tokens.get(self.pos).map(|(o, _)| *o).unwrap_or(self.end)
    }

    fn expect_open(&mut self) -> Result<usize, CorpusError> {
        match self.tokens.get(self.pos) {
            Some((o, Token::Open)) => {
                self.pos += 1;
                Ok(*o)
            }
            _ => Err(CorpusError::UnbalancedBrackets { position: self.offset() }),
        }
    }

    /// Reads one bracketed expression; the opening paren is next.
    fn read(&mut self) -> Result<RawTree, CorpusError> {
        let open_at = self.expect_open()?;
        let label = match self.peek() {
            Some(Token::Symbol(s)) => {
                let s = s.clone();
                self.pos += 1;
                s
            }
            Some(Token::Close) => return Err(CorpusError::EmptyConstituent { position: open_at }),
            Some(Token::Open) => String::new(),
            None => return Err(CorpusError::UnbalancedBrackets { position: self.end }),
        };

        if self.format == TreebankFormat::Penn {
            // (TAG word)
            if let (Some(Token::Symbol(word)), Some((_, Token::Close))) = (self.peek(), self.tokens.get(self.pos + 1)) {
                if label.is_empty() {
                    return Err(CorpusError::MissingTag { token: word.clone() });
                }
                let leaf = RawTree::leaf(word.clone(), label);
                self.pos += 2;
                return Ok(leaf);
            }
        }

        let mut children = Vec::new();
        loop {
            match self.peek() {
                None => return Err(CorpusError::UnbalancedBrackets { position: self.end }),
                Some(Token::Close) => {
                    self.pos += 1;
                    break;
                }
                Some(Token::Open) => children.push(self.read()?),
                Some(Token::Symbol(s)) => {
                    let s = s.clone();
                    self.pos += 1;
                    match self.format {
                        TreebankFormat::Underscore => children.push(split_underscore_leaf(&s)?),
                        TreebankFormat::Penn => return Err(CorpusError::MissingTag { token: s }),
                    }
                }
            }
        }
        if children.is_empty() {
            return Err(CorpusError::EmptyConstituent { position: open_at });
        }
        if label.is_empty() {
            // `( (S ...) )` wrapper
            if children.len() == 1 && !children[0].is_leaf() {
                return Ok(children.pop().unwrap());
            }
            return Ok(RawTree::node("ROOT", children));
        }
        Ok(RawTree::node(label, children))
    }
}

/// Reads every top-level bracketed tree in `text`.
pub fn parse_treebank(text: &str, format: TreebankFormat) -> Result<Vec<RawTree>, CorpusError> {
    let mut reader = Reader { tokens: tokenize(text), pos: 0, end: text.len(), format };
    let mut trees = Vec::new();
    while reader.pos < reader.tokens.len() {
        let at = reader.offset();
        match reader.peek() {
            Some(Token::Open) => {
                let t = reader.read()?;
                if t.is_leaf() {
                    return Err(CorpusError::BareLeaf { position: at });
                }
                trees.push(t);
            }
            _ => return Err(CorpusError::UnbalancedBrackets { position: at }),
        }
    }
    Ok(trees)
}

/// Reads a single tree; anything other than exactly one tree is an error.
pub fn parse_tree(text: &str, format: TreebankFormat) -> Result<RawTree, CorpusError> {
    let mut trees = parse_treebank(text, format)?;
    match trees.len() {
        0 => Err(CorpusError::EmptyCorpus),
        1 => Ok(trees.pop().unwrap()),
        _ => Err(CorpusError::UnbalancedBrackets { position: text.len() }),
    }
}

/// 1-based line number of a byte offset, for error messages.
pub fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

/// Drops Penn Treebank empty elements (`-NONE-`) and strips function tags and
/// coindexing from labels (`NP-SBJ-1` becomes `NP`). Returns `None` when
/// nothing but empty elements remain.
pub fn strip_penn_annotations(tree: &RawTree) -> Option<RawTree> {
    match tree {
        RawTree::Leaf { tag, .. } if tag == "-NONE-" => None,
        RawTree::Leaf { .. } => Some(tree.clone()),
        RawTree::Node { label, children } => {
            let kept: Vec<RawTree> = children.iter().filter_map(strip_penn_annotations).collect();
            if kept.is_empty() {
                return None;
            }
            Some(RawTree::node(base_label(label), kept))
        }
    }
}

fn base_label(label: &str) -> String {
    if label.starts_with('-') {
        return label.to_string();
    }
    let cut = label.find(['-', '=']).unwrap_or(label.len());
    label[..cut].to_string()
}

/// Interned symbols with occurrence counts. Ids are dense and stable.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(from = "SymbolTableRepr", into = "SymbolTableRepr")]
pub struct SymbolTable {
    symbols: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct SymbolTableRepr {
    symbols: Vec<String>,
    counts: Vec<u64>,
}

impl From<SymbolTableRepr> for SymbolTable {
    fn from(r: SymbolTableRepr) -> Self {
        let index = r.symbols.iter().enumerate().map(|(i, s)| (s.clone(), i as u32)).collect();
        SymbolTable { symbols: r.symbols, counts: r.counts, index }
    }
}

impl From<SymbolTable> for SymbolTableRepr {
    fn from(t: SymbolTable) -> Self {
        SymbolTableRepr { symbols: t.symbols, counts: t.counts }
    }
}

impl PartialEq for SymbolTable {
    fn eq(&self, other: &Self) -> bool {
        self.symbols == other.symbols && self.counts == other.counts
    }
}

impl SymbolTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Interns `symbol` and adds `count` occurrences.
    pub fn add(&mut self, symbol: &str, count: u64) -> u32 {
        let id = match self.index.get(symbol) {
            Some(&id) => id,
            None => {
                let id = self.symbols.len() as u32;
                self.symbols.push(symbol.to_string());
                self.counts.push(0);
                self.index.insert(symbol.to_string(), id);
                id
            }
        };
        self.counts[id as usize] += count;
        id
    }

    pub fn get(&self, symbol: &str) -> Option<u32> {
        self.index.get(symbol).copied()
    }

    pub fn symbol(&self, id: u32) -> &str {
        &self.symbols[id as usize]
    }

    pub fn count(&self, id: u32) -> u64 {
        self.counts[id as usize]
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn contains(&self, symbol: &str) -> bool {
        self.index.contains_key(symbol)
    }

    pub fn symbols(&self) -> impl Iterator<Item = &str> {
        self.symbols.iter().map(String::as_str)
    }
}

pub const UNK_SYMBOL: &str = "<unk>";
pub const UNK_ID: u32 = 0;
pub const DEFAULT_UNK_THRESHOLD: u64 = 3;

/// Word, tag and label inventories of a training corpus.
///
/// The word table always holds [`UNK_SYMBOL`] at [`UNK_ID`]; words seen fewer
/// than `unk_threshold` times are folded into it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabularies {
    pub words: SymbolTable,
    pub tags: SymbolTable,
    pub labels: SymbolTable,
    pub unk_threshold: u64,
}

impl Vocabularies {
    pub fn word_id(&self, word: &str) -> u32 {
        self.words.get(word).unwrap_or(UNK_ID)
    }

    pub fn is_unknown(&self, word: &str) -> bool {
        self.word_id(word) == UNK_ID
    }

    pub fn tag_id(&self, tag: &str) -> Option<u32> {
        self.tags.get(tag)
    }

    pub fn label_id(&self, label: &str) -> Option<u32> {
        self.labels.get(label)
    }
}

pub fn build_vocabularies(trees: &[RawTree], unk_threshold: u64) -> Result<Vocabularies, CorpusError> {
    if trees.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let mut word_counts: HashMap<&str, u64> = HashMap::new();
    let mut first_seen: Vec<&str> = Vec::new();
    let mut tags = SymbolTable::new();
    let mut labels = SymbolTable::new();

    fn walk<'a>(
        t: &'a RawTree,
        words: &mut HashMap<&'a str, u64>,
        order: &mut Vec<&'a str>,
        tags: &mut SymbolTable,
        labels: &mut SymbolTable,
    ) {
        match t {
            RawTree::Leaf { word, tag } => {
                let c = words.entry(word.as_str()).or_insert(0);
                if *c == 0 {
                    order.push(word);
                }
                *c += 1;
                tags.add(tag, 1);
            }
            RawTree::Node { label, children } => {
                labels.add(label, 1);
                for c in children {
                    walk(c, words, order, tags, labels);
                }
            }
        }
    }
    for t in trees {
        walk(t, &mut word_counts, &mut first_seen, &mut tags, &mut labels);
    }

    let mut words = SymbolTable::new();
    words.add(UNK_SYMBOL, 0);
    for w in first_seen {
        let c = word_counts[w];
        if c >= unk_threshold {
            words.add(w, c);
        } else {
            words.add(UNK_SYMBOL, c);
        }
    }
    Ok(Vocabularies { words, tags, labels, unk_threshold })
}

/// Result of [`split_corpus`].
#[derive(Debug, Clone)]
pub struct CorpusSplit<T> {
    pub grow: Vec<T>,
    pub smooth: Vec<T>,
    /// Set when the held-out part came out empty.
    pub degenerate: bool,
}

/// Seeded random partition into a growing set and a smoothing set. Both parts
/// keep the input order.
pub fn split_corpus<T>(items: Vec<T>, grow_fraction: f64, seed: u64) -> Result<CorpusSplit<T>, CorpusError> {
    if !(grow_fraction > 0.0 && grow_fraction < 1.0) {
        return Err(CorpusError::FractionOutOfRange(grow_fraction));
    }
    let n = items.len();
    let mut grow_n = (n as f64 * grow_fraction).round() as usize;
    if n >= 2 {
        grow_n = grow_n.clamp(1, n - 1);
    } else {
        grow_n = n;
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut in_grow = vec![false; n];
    for &i in &order[..grow_n] {
        in_grow[i] = true;
    }
    let mut grow = Vec::with_capacity(grow_n);
    let mut smooth = Vec::with_capacity(n - grow_n);
    for (i, item) in items.into_iter().enumerate() {
        if in_grow[i] {
            grow.push(item);
        } else {
            smooth.push(item);
        }
    }
    let degenerate = smooth.is_empty();
    if degenerate {
        log::warn!("corpus of {n} tree(s) leaves no held-out data for smoothing");
    }
    Ok(CorpusSplit { grow, smooth, degenerate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub const EXAMPLE: &str =
        "(S (N Each_DD1 code_NN1 (Tn used_VVN (P by_II (N the_AT PC_NN1)))) (V is_VBZ listed_VVN))";

    #[test]
    fn reads_example_sentence() {
        let trees = parse_treebank(EXAMPLE, TreebankFormat::Underscore).unwrap();
        assert_eq!(trees.len(), 1);
        let t = &trees[0];
        assert_eq!(t.leaf_count(), 8);
        assert_eq!(t.internal_count(), 6);
        assert_eq!(t.words(), vec!["Each", "code", "used", "by", "the", "PC", "is", "listed"]);
        assert_eq!(t.to_underscore_string(), EXAMPLE);
    }

    #[test]
    fn minimal_tree() {
        let t = parse_tree("(X a_T)", TreebankFormat::Underscore).unwrap();
        assert_eq!(t, RawTree::node("X", vec![RawTree::leaf("a", "T")]));
        assert_eq!(t.max_unary_chain(), 1);
    }

    #[test]
    fn malformed_inputs() {
        assert!(matches!(
            parse_treebank("(S (A b_T", TreebankFormat::Underscore),
            Err(CorpusError::UnbalancedBrackets { .. })
        ));
        assert!(matches!(
            parse_treebank("(S b_T))", TreebankFormat::Underscore),
            Err(CorpusError::UnbalancedBrackets { position: 7 })
        ));
        assert_eq!(
            parse_treebank("(S word)", TreebankFormat::Underscore),
            Err(CorpusError::MissingTag { token: "word".into() })
        );
        assert_eq!(
            parse_treebank("(S _T)", TreebankFormat::Underscore),
            Err(CorpusError::MissingTag { token: "_T".into() })
        );
        assert_eq!(
            parse_treebank("(S (A))", TreebankFormat::Underscore),
            Err(CorpusError::EmptyConstituent { position: 3 })
        );
        assert_eq!(
            parse_treebank("()", TreebankFormat::Underscore),
            Err(CorpusError::EmptyConstituent { position: 0 })
        );
    }

    #[test]
    fn penn_and_underscore_agree() {
        let penn = "( (S (NP (DT the) (NN dog)) (VP (VBD barked))) )";
        let a = parse_tree(penn, TreebankFormat::Penn).unwrap();
        let b = parse_tree("(S (NP the_DT dog_NN) (VP barked_VBD))", TreebankFormat::Underscore).unwrap();
        assert_eq!(a, b);
        assert_eq!(parse_tree(&a.to_penn_string(), TreebankFormat::Penn).unwrap(), a);
    }

    #[test]
    fn words_with_underscores_split_at_last() {
        let t = parse_tree("(X a_b_T)", TreebankFormat::Underscore).unwrap();
        assert_eq!(t.leaves(), vec![("a_b", "T")]);
    }

    #[test]
    fn penn_bare_word_is_missing_tag() {
        assert!(matches!(
            parse_treebank("(S (NP dog cat))", TreebankFormat::Penn),
            Err(CorpusError::MissingTag { .. })
        ));
        assert!(matches!(parse_treebank("(DT the)", TreebankFormat::Penn), Err(CorpusError::BareLeaf { .. })));
    }

    #[test]
    fn strips_penn_annotations() {
        let t =
            parse_tree("(S (NP-SBJ-1 (DT the) (NN dog)) (VP (VBD barked) (NP (-NONE- *T*-1))))", TreebankFormat::Penn)
                .unwrap();
        let s = strip_penn_annotations(&t).unwrap();
        assert_eq!(s.to_penn_string(), "(S (NP (DT the) (NN dog)) (VP (VBD barked)))");
    }

    #[test]
    fn vocabularies_of_example() {
        let trees = parse_treebank(EXAMPLE, TreebankFormat::Underscore).unwrap();
        let v = build_vocabularies(&trees, 0).unwrap();
        let words: Vec<_> = v.words.symbols().filter(|&w| w != UNK_SYMBOL).collect();
        assert_eq!(words, vec!["Each", "code", "used", "by", "the", "PC", "is", "listed"]);
        assert_eq!(v.tags.symbols().collect::<Vec<_>>(), vec!["DD1", "NN1", "VVN", "II", "AT", "VBZ"]);
        assert_eq!(v.labels.symbols().collect::<Vec<_>>(), vec!["S", "N", "Tn", "P", "V"]);
        assert_eq!(v.words.count(UNK_ID), 0);
        for w in words {
            assert_ne!(v.word_id(w), UNK_ID);
        }
    }

    #[test]
    fn rare_words_fold_into_unk() {
        let text = "(S (N the_AT dog_NN1) (V barked_VVD))
                    (S (N the_AT dog_NN1) (V sat_VVD))
                    (S (N the_AT zyx_NN1) (V sat_VVD))";
        let trees = parse_treebank(text, TreebankFormat::Underscore).unwrap();
        let v = build_vocabularies(&trees, 2).unwrap();
        assert_eq!(v.word_id("zyx"), UNK_ID);
        assert_eq!(v.word_id("barked"), UNK_ID);
        assert_ne!(v.word_id("dog"), UNK_ID);
        assert_ne!(v.word_id("sat"), UNK_ID);
        assert_eq!(v.words.count(UNK_ID), 2);
        assert!(matches!(build_vocabularies(&[], 2), Err(CorpusError::EmptyCorpus)));
    }

    #[test]
    fn split_sizes() {
        let s = split_corpus((0..100).collect(), 0.9, 7).unwrap();
        assert_eq!((s.grow.len(), s.smooth.len()), (90, 10));
        assert!(!s.degenerate);
        let s = split_corpus(vec![1], 0.9, 7).unwrap();
        assert_eq!((s.grow.len(), s.smooth.len()), (1, 0));
        assert!(s.degenerate);
        assert_eq!(split_corpus(vec![1], 1.5, 0).unwrap_err(), CorpusError::FractionOutOfRange(1.5));
        assert!(split_corpus(vec![1], 0.0, 0).is_err());
    }

    #[test]
    fn split_is_deterministic() {
        let a = split_corpus((0..50).collect::<Vec<_>>(), 0.9, 42).unwrap();
        let b = split_corpus((0..50).collect::<Vec<_>>(), 0.9, 42).unwrap();
        assert_eq!(a.grow, b.grow);
        assert_eq!(a.smooth, b.smooth);
    }

    fn arb_symbol() -> impl Strategy<Value = String> {
        "[A-Za-z][A-Za-z0-9$.,-]{0,4}"
    }

    fn arb_tree() -> impl Strategy<Value = RawTree> {
        let leaf = (arb_symbol(), arb_symbol()).prop_map(|(w, t)| RawTree::leaf(w, t));
        let inner = leaf.prop_recursive(4, 24, 4, |inner| {
            (arb_symbol(), prop::collection::vec(inner, 1..4)).prop_map(|(l, c)| RawTree::node(l, c))
        });
        (arb_symbol(), prop::collection::vec(inner, 1..4)).prop_map(|(l, c)| RawTree::node(l, c))
    }

    proptest! {
        #[test]
        fn serialize_parse_identity(t in arb_tree()) {
            for format in [TreebankFormat::Underscore, TreebankFormat::Penn] {
                let text = t.to_format_string(format);
                let back = parse_tree(&text, format).unwrap();
                prop_assert_eq!(&back, &t);
                prop_assert_eq!(back.leaf_count(), t.words().len());
            }
        }

        #[test]
        fn split_partitions(n in 0usize..200, frac in 0.05f64..0.95, seed in any::<u64>()) {
            let s = split_corpus((0..n).collect::<Vec<_>>(), frac, seed).unwrap();
            prop_assert_eq!(s.grow.len() + s.smooth.len(), n);
            let mut all: Vec<_> = s.grow.iter().chain(s.smooth.iter()).copied().collect();
            all.sort();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }
}
