//! PARSEVAL scoring: bracket precision and recall (unlabelled and labelled),
//! crossing brackets, tagging accuracy, and length-range reports.
//!
//! Constituents are the internal nodes of a tree as `(first word, end, label)`
//! with multiset semantics. A test constituent crosses when it overlaps some
//! gold constituent without either containing the other.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::RawTree;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParsevalError {
    #[error("word sequences differ at position {position}")]
    WordMismatch { position: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsevalOptions {
    pub include_root: bool,
    /// Count every level of a unary chain; otherwise only the topmost node of
    /// each span is kept.
    pub count_unary_levels: bool,
}

impl Default for ParsevalOptions {
    fn default() -> Self {
        ParsevalOptions { include_root: true, count_unary_levels: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Constituent {
    pub start: usize,
    /// One past the last word.
    pub end: usize,
    pub label: String,
}

/// Constituents of `tree` in pre-order.
pub fn constituents(tree: &RawTree, options: &ParsevalOptions) -> Vec<Constituent> {
    fn walk(
        t: &RawTree,
        pos: usize,
        parent: Option<(usize, usize)>,
        opts: &ParsevalOptions,
        out: &mut Vec<Constituent>,
    ) {
        let RawTree::Node { label, children } = t else { return };
        let span = (pos, pos + t.leaf_count());
        if opts.count_unary_levels || parent != Some(span) {
            out.push(Constituent { start: span.0, end: span.1, label: label.clone() });
        }
        let mut p = pos;
        for c in children {
            walk(c, p, Some(span), opts, out);
            p += c.leaf_count();
        }
    }
    let mut out = Vec::new();
    walk(tree, 0, None, options, &mut out);
    if !options.include_root && !out.is_empty() {
        out.remove(0);
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceScore {
    pub correct_unlabelled: usize,
    pub correct_labelled: usize,
    pub test_constituents: usize,
    pub gold_constituents: usize,
    pub crossings: usize,
    pub tags_correct: usize,
    pub length: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

impl SentenceScore {
    pub fn precision(&self) -> f64 {
        ratio(self.correct_unlabelled, self.test_constituents)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.correct_unlabelled, self.gold_constituents)
    }

    pub fn labelled_precision(&self) -> f64 {
        ratio(self.correct_labelled, self.test_constituents)
    }

    pub fn labelled_recall(&self) -> f64 {
        ratio(self.correct_labelled, self.gold_constituents)
    }

    pub fn tagging_accuracy(&self) -> f64 {
        ratio(self.tags_correct, self.length)
    }
}

fn check_words(gold: &RawTree, test: &RawTree) -> Result<(), ParsevalError> {
    let (g, t) = (gold.words(), test.words());
    if let Some(position) = (0..g.len().max(t.len())).find(|&i| g.get(i) != t.get(i)) {
        return Err(ParsevalError::WordMismatch { position });
    }
    Ok(())
}

fn multiset_matches<K: std::hash::Hash + Eq>(gold: impl Iterator<Item = K>, test: impl Iterator<Item = K>) -> usize {
    let mut counts: HashMap<K, usize> = HashMap::new();
    for k in gold {
        *counts.entry(k).or_insert(0) += 1;
    }
    let mut hits = 0;
    for k in test {
        if let Some(c) = counts.get_mut(&k) {
            if *c > 0 {
                *c -= 1;
                hits += 1;
            }
        }
    }
    hits
}

fn crosses(a: (usize, usize), b: (usize, usize)) -> bool {
    (a.0 < b.0 && b.0 < a.1 && a.1 < b.1) || (b.0 < a.0 && a.0 < b.1 && b.1 < a.1)
}

pub fn score_pair_with(
    gold: &RawTree,
    test: &RawTree,
    options: &ParsevalOptions,
) -> Result<SentenceScore, ParsevalError> {
    check_words(gold, test)?;
    let g = constituents(gold, options);
    let t = constituents(test, options);
    let correct_unlabelled = multiset_matches(g.iter().map(|c| (c.start, c.end)), t.iter().map(|c| (c.start, c.end)));
    let correct_labelled = multiset_matches(g.iter(), t.iter());
    let crossings = t.iter().filter(|tc| g.iter().any(|gc| crosses((tc.start, tc.end), (gc.start, gc.end)))).count();
    let tags_correct = gold.tags().iter().zip(test.tags()).filter(|(a, b)| **a == *b).count();
    Ok(SentenceScore {
        correct_unlabelled,
        correct_labelled,
        test_constituents: t.len(),
        gold_constituents: g.len(),
        crossings,
        tags_correct,
        length: gold.leaf_count(),
    })
}

pub fn score_pair(gold: &RawTree, test: &RawTree) -> Result<SentenceScore, ParsevalError> {
    score_pair_with(gold, test, &ParsevalOptions::default())
}

/// Fraction of leaves whose tags agree.
pub fn tagging_accuracy(gold: &RawTree, test: &RawTree) -> Result<f64, ParsevalError> {
    check_words(gold, test)?;
    let right = gold.tags().iter().zip(test.tags()).filter(|(a, b)| **a == *b).count();
    Ok(ratio(right, gold.leaf_count()))
}

/// The standard length ranges.
pub const DEFAULT_RANGES: [(usize, usize); 3] = [(4, 40), (4, 25), (10, 20)];

/// Aggregates for one sentence-length range. Percentages are in `[0, 100]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeRow {
    pub min: usize,
    pub max: usize,
    pub comparisons: usize,
    pub avg_length: f64,
    pub gold_constituents: f64,
    pub test_constituents: f64,
    pub tagging_accuracy: f64,
    pub crossings_per_sentence: f64,
    pub zero_crossings: f64,
    pub at_most_one_crossing: f64,
    pub at_most_two_crossings: f64,
    pub precision: f64,
    pub recall: f64,
    pub labelled_precision: f64,
    pub labelled_recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<RangeRow>,
    /// Ranges without any sentence; left out of `rows`.
    pub empty_ranges: Vec<(usize, usize)>,
}

fn summarize(min: usize, max: usize, scores: &[&SentenceScore]) -> RangeRow {
    let n = scores.len() as f64;
    let sum = |f: &dyn Fn(&SentenceScore) -> usize| scores.iter().map(|s| f(s)).sum::<usize>();
    let pct = |num: usize, den: usize| 100.0 * ratio(num, den);
    let within = |k: usize| pct(scores.iter().filter(|s| s.crossings <= k).count(), scores.len());
    let test = sum(&|s| s.test_constituents);
    let gold = sum(&|s| s.gold_constituents);
    RangeRow {
        min,
        max,
        comparisons: scores.len(),
        avg_length: sum(&|s| s.length) as f64 / n,
        gold_constituents: gold as f64 / n,
        test_constituents: test as f64 / n,
        tagging_accuracy: pct(sum(&|s| s.tags_correct), sum(&|s| s.length)),
        crossings_per_sentence: sum(&|s| s.crossings) as f64 / n,
        zero_crossings: within(0),
        at_most_one_crossing: within(1),
        at_most_two_crossings: within(2),
        precision: pct(sum(&|s| s.correct_unlabelled), test),
        recall: pct(sum(&|s| s.correct_unlabelled), gold),
        labelled_precision: pct(sum(&|s| s.correct_labelled), test),
        labelled_recall: pct(sum(&|s| s.correct_labelled), gold),
    }
}

/// Micro-averaged scores per inclusive length range.
pub fn aggregate(scores: &[SentenceScore], ranges: &[(usize, usize)]) -> Report {
    let mut rows = Vec::new();
    let mut empty_ranges = Vec::new();
    for &(min, max) in ranges {
        let inside: Vec<&SentenceScore> = scores.iter().filter(|s| min <= s.length && s.length <= max).collect();
        if inside.is_empty() {
            log::warn!("no sentences of length {min}-{max}; range omitted");
            empty_ranges.push((min, max));
        } else {
            rows.push(summarize(min, max, &inside));
        }
    }
    Report { rows, empty_ranges }
}

type RowFormatter = fn(&RangeRow) -> String;

const TABLE_ROWS: [(&str, RowFormatter); 13] = [
    ("Comparisons", |r| r.comparisons.to_string()),
    ("Avg. Sent. Length", |r| format!("{:.1}", r.avg_length)),
    ("Treebank Constituents", |r| format!("{:.2}", r.gold_constituents)),
    ("Parse Constituents", |r| format!("{:.2}", r.test_constituents)),
    ("Tagging Accuracy", |r| format!("{:.1}%", r.tagging_accuracy)),
    ("Crossings Per Sentence", |r| format!("{:.2}", r.crossings_per_sentence)),
    ("Sent. with 0 Crossings", |r| format!("{:.1}%", r.zero_crossings)),
    ("Sent. with 1 Crossing", |r| format!("{:.1}%", r.at_most_one_crossing)),
    ("Sent. with 2 Crossings", |r| format!("{:.1}%", r.at_most_two_crossings)),
    ("Precision", |r| format!("{:.1}%", r.precision)),
    ("Recall", |r| format!("{:.1}%", r.recall)),
    ("Labelled Precision", |r| format!("{:.1}%", r.labelled_precision)),
    ("Labelled Recall", |r| format!("{:.1}%", r.labelled_recall)),
];

impl Report {
    /// One line per measure, one column per range. The "1 Crossing" and
    /// "2 Crossings" rows are cumulative (at most 1, at most 2).
    pub fn to_csv(&self) -> String {
        let mut s = String::from("Sent. Length Range");
        for r in &self.rows {
            let _ = write!(s, ",{}-{}", r.min, r.max);
        }
        s.push('\n');
        for (name, f) in TABLE_ROWS {
            s.push_str(name);
            for r in &self.rows {
                s.push(',');
                s.push_str(&f(r));
            }
            s.push('\n');
        }
        s
    }
}

/// Tab-separated per-sentence scores with a header line.
pub fn sentence_tsv(scores: &[SentenceScore]) -> String {
    let mut s = String::from("id\tlength\tgold\ttest\tcorrect\tlabelled_correct\tcrossings\ttags_correct\n");
    for (i, x) in scores.iter().enumerate() {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            i + 1,
            x.length,
            x.gold_constituents,
            x.test_constituents,
            x.correct_unlabelled,
            x.correct_labelled,
            x.crossings,
            x.tags_correct
        );
    }
    s
}

/// `length,crossings,precision,recall,frequency` with crossings as a
/// per-sentence mean and precision/recall micro-averaged in percent.
pub fn per_length_csv(scores: &[SentenceScore]) -> String {
    let mut by_len: BTreeMap<usize, Vec<&SentenceScore>> = BTreeMap::new();
    for s in scores {
        by_len.entry(s.length).or_default().push(s);
    }
    let mut out = String::from("length,crossings,precision,recall,frequency\n");
    for (len, group) in by_len {
        let row = summarize(len, len, &group);
        let _ = writeln!(
            out,
            "{len},{:.4},{:.2},{:.2},{}",
            row.crossings_per_sentence, row.precision, row.recall, row.comparisons
        );
    }
    out
}
