//! Toy treebanks for integration tests.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dtparse::corpus::{split_corpus, RawTree};
use dtparse::derivation::DEFAULT_MAX_UNARY;
use dtparse::headfinder::HeadRuleTable;
use dtparse::models::{train, ModelConfig, ModelSet};

/// Head rules for the toy grammar.
pub const HEAD_RULES: &str = "S right V\nN right NN1 NP1\nV left VVD\nP left II\n";

const AT: &[&str] = &["the", "a", "every"];
const JJ: &[&str] = &["old", "big", "red", "small"];
const NN1: &[&str] = &["dog", "cat", "park", "man", "telescope", "bird"];
const NP1: &[&str] = &["Kim", "Sandy", "Lee"];
const VVD: &[&str] = &["saw", "liked", "chased", "barked", "slept"];
const II: &[&str] = &["in", "with", "near"];

fn leaf(rng: &mut ChaCha8Rng, words: &[&str], tag: &str) -> RawTree {
    RawTree::leaf(*words.choose(rng).unwrap(), tag)
}

fn noun_phrase(rng: &mut ChaCha8Rng) -> RawTree {
    let r: f64 = rng.gen();
    let kids = if r < 0.4 {
        vec![leaf(rng, AT, "AT"), leaf(rng, NN1, "NN1")]
    } else if r < 0.7 {
        vec![leaf(rng, AT, "AT"), leaf(rng, JJ, "JJ"), leaf(rng, NN1, "NN1")]
    } else {
        vec![leaf(rng, NP1, "NP1")]
    };
    RawTree::node("N", kids)
}

fn prep_phrase(rng: &mut ChaCha8Rng) -> RawTree {
    RawTree::node("P", vec![leaf(rng, II, "II"), noun_phrase(rng)])
}

/// One tree of the grammar
///
/// ```text
/// S -> N V
/// N -> AT NN1 | AT JJ NN1 | NP1
/// V -> VVD | VVD N | VVD N P | VVD N P P
/// P -> II N
/// ```
///
/// Every word belongs to exactly one tag and the tag sequence fixes the tree.
pub fn toy_tree(rng: &mut ChaCha8Rng) -> RawTree {
    let subject = noun_phrase(rng);
    let r: f64 = rng.gen();
    let mut v = vec![leaf(rng, VVD, "VVD")];
    if r >= 0.2 {
        v.push(noun_phrase(rng));
    }
    if r >= 0.7 {
        v.push(prep_phrase(rng));
    }
    if r >= 0.9 {
        v.push(prep_phrase(rng));
    }
    RawTree::node("S", vec![subject, RawTree::node("V", v)])
}

pub fn toy_treebank(n: usize, seed: u64) -> Vec<RawTree> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| toy_tree(&mut rng)).collect()
}

/// Grammar trees of between `min_len` and `max_len` words.
pub fn toy_trees_in(n: usize, min_len: usize, max_len: usize, seed: u64) -> Vec<RawTree> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let t = toy_tree(&mut rng);
        if (min_len..=max_len).contains(&t.leaf_count()) {
            out.push(t);
        }
    }
    out
}

/// Models trained on `trees` with the default 90/10 split.
pub fn train_toy(trees: &[RawTree], seed: u64) -> ModelSet {
    let split = split_corpus(trees.to_vec(), 0.9, seed).unwrap();
    train(
        &split.grow,
        &split.smooth,
        HeadRuleTable::parse(HEAD_RULES).unwrap(),
        1,
        DEFAULT_MAX_UNARY,
        &ModelConfig::default(),
    )
    .unwrap()
}

/// A tree of arbitrary shape: 1 to `max_leaves` leaves, up to 4 children per
/// node, unary chains of at most `max_unary` (which must be at least 1).
pub fn random_tree(rng: &mut ChaCha8Rng, max_leaves: usize, max_unary: usize) -> RawTree {
    let n = rng.gen_range(1..=max_leaves);
    let t = random_span(rng, n, max_unary);
    if t.is_leaf() {
        RawTree::node("X0", vec![t])
    } else {
        t
    }
}

fn random_span(rng: &mut ChaCha8Rng, n: usize, max_unary: usize) -> RawTree {
    let mut t = if n == 1 {
        RawTree::leaf(format!("w{}", rng.gen_range(0..12)), format!("T{}", rng.gen_range(0..5)))
    } else {
        let k = rng.gen_range(2..=n.min(4));
        let mut cuts: Vec<usize> = (1..n).collect();
        cuts.shuffle(rng);
        cuts.truncate(k - 1);
        cuts.sort_unstable();
        let mut bounds = vec![0];
        bounds.extend(cuts);
        bounds.push(n);
        let kids = bounds.windows(2).map(|w| random_span(rng, w[1] - w[0], max_unary)).collect();
        RawTree::node(format!("X{}", rng.gen_range(0..6)), kids)
    };
    let wraps = if rng.gen_bool(0.6) { 0 } else { rng.gen_range(1..=max_unary) };
    for _ in 0..wraps {
        t = RawTree::node(format!("X{}", rng.gen_range(0..6)), vec![t]);
    }
    t
}
