//! Binary classification trees over a vocabulary.
//!
//! Items are clustered bottom-up by greedily merging the pair of clusters whose
//! merge loses the least average mutual information between adjacent
//! clusters. The merge history is a binary tree; an item's code is the path
//! from the root, bit `b` being the branch taken at depth `b` (0 = left). A
//! question about a k-valued item thus becomes one yes/no question per bit.
//!
//! Large vocabularies use the usual windowed variant: items enter in order of
//! decreasing frequency and at most `window + 1` clusters are live at once.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ClassTreeError {
    #[error("cannot build a class tree over an empty vocabulary")]
    EmptyVocabulary,
    #[error("id {0} is not covered by the class tree")]
    UnknownId(u32),
    #[error("bit budget {0} is outside 1..=32")]
    BadBudget(u8),
}

pub const WORD_BIT_BUDGET: u8 = 30;
pub const SYMBOL_BIT_BUDGET: u8 = 8;
pub const DEFAULT_WINDOW: usize = 64;

/// Fixed-width path code of one item, or the reserved code of a missing value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BitString {
    bits: u32,
    width: u8,
    null: bool,
}

impl BitString {
    pub fn null(width: u8) -> Self {
        BitString { bits: 0, width, null: true }
    }

    pub fn is_null(&self) -> bool {
        self.null
    }

    pub fn width(&self) -> u8 {
        self.width
    }

    /// Branch taken at depth `b`; `None` for the null code.
    pub fn bit(&self, b: u8) -> Option<bool> {
        if self.null || b >= self.width {
            None
        } else {
            Some((self.bits >> b) & 1 == 1)
        }
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.null {
            return f.write_str("NULL");
        }
        for b in 0..self.width {
            f.write_str(if (self.bits >> b) & 1 == 1 { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Counts of item `a` immediately followed by item `b`.
#[derive(Debug, Clone, Default)]
pub struct BigramCounts {
    counts: HashMap<(u32, u32), f64>,
}

impl BigramCounts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, a: u32, b: u32, count: f64) {
        *self.counts.entry((a, b)).or_insert(0.0) += count;
    }

    pub fn from_sequences<'a>(seqs: impl IntoIterator<Item = &'a [u32]>) -> Self {
        let mut bc = Self::new();
        for s in seqs {
            for w in s.windows(2) {
                bc.add(w[0], w[1], 1.0);
            }
        }
        bc
    }

    pub fn get(&self, a: u32, b: u32) -> f64 {
        self.counts.get(&(a, b)).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = ((u32, u32), f64)> + '_ {
        self.counts.iter().map(|(&k, &v)| (k, v))
    }
}

/// One agglomeration step. Node ids below the item count are items; merge
/// `k` creates node `n_items + k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: u32,
    pub right: u32,
    /// Mutual information lost by this merge, in nats.
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTree {
    codes: Vec<u32>,
    depths: Vec<u16>,
    budget: u8,
    merges: Vec<Merge>,
    truncated: bool,
    collisions: bool,
}

impl ClassTree {
    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn budget(&self) -> u8 {
        self.budget
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    /// Depth of the deepest item before truncation.
    pub fn depth(&self) -> usize {
        self.depths.iter().copied().max().unwrap_or(0) as usize
    }

    pub fn item_depth(&self, id: u32) -> usize {
        self.depths[id as usize] as usize
    }

    /// Number of bits that carry information: `min(depth, budget)`.
    pub fn effective_width(&self) -> u8 {
        self.depth().min(self.budget as usize) as u8
    }

    /// Some item sat deeper than the bit budget.
    pub fn truncated(&self) -> bool {
        self.truncated
    }

    /// Truncation made two items share a code.
    pub fn has_collisions(&self) -> bool {
        self.collisions
    }

    pub fn code(&self, id: u32) -> u32 {
        self.codes[id as usize]
    }

    pub fn codes(&self) -> &[u32] {
        &self.codes
    }

    pub fn encode_item(&self, id: Option<u32>) -> Result<BitString, ClassTreeError> {
        match id {
            None => Ok(BitString::null(self.budget)),
            Some(id) => self
                .codes
                .get(id as usize)
                .map(|&bits| BitString { bits, width: self.budget, null: false })
                .ok_or(ClassTreeError::UnknownId(id)),
        }
    }

    /// `id TAB bitstring` lines, with symbols when a namer is given.
    pub fn export_text(&self, name: impl Fn(u32) -> String) -> String {
        let mut s = String::new();
        for id in 0..self.codes.len() as u32 {
            let b = self.encode_item(Some(id)).unwrap();
            s.push_str(&format!("{id}\t{}\t{b}\n", name(id)));
        }
        s
    }

    /// A tree with a caller-supplied code per item (no clustering).
    pub fn from_codes(codes: Vec<u32>, width: u8) -> Self {
        let depths = vec![width as u16; codes.len()];
        let mut sorted = codes.clone();
        sorted.sort_unstable();
        let collisions = sorted.windows(2).any(|w| w[0] == w[1]);
        ClassTree { codes, depths, budget: width, merges: Vec::new(), truncated: false, collisions }
    }
}

/// Mutual information of a cluster bigram table, in nats.
pub fn mutual_information(table: &[Vec<f64>]) -> f64 {
    let k = table.len();
    let total: f64 = table.iter().flatten().sum();
    if total == 0.0 {
        return 0.0;
    }
    let left: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let right: Vec<f64> = (0..k).map(|d| table.iter().map(|r| r[d]).sum()).collect();
    let mut mi = 0.0;
    for c in 0..k {
        for d in 0..k {
            let n = table[c][d];
            if n > 0.0 {
                mi += n / total * (n * total / (left[c] * right[d])).ln();
            }
        }
    }
    mi
}

struct Clustering {
    // dense matrix over slots
    cap: usize,
    n: Vec<f64>,
    left: Vec<f64>,
    right: Vec<f64>,
    total: f64,
    live: Vec<usize>,
    node_of_slot: Vec<u32>,
}

impl Clustering {
    fn at(&self, c: usize, d: usize) -> f64 {
        self.n[c * self.cap + d]
    }

    fn q(&self, n: f64, l: f64, r: f64) -> f64 {
        if n > 0.0 {
            n / self.total * (n * self.total / (l * r)).ln()
        } else {
            0.0
        }
    }

    fn loss(&self, a: usize, b: usize) -> f64 {
        if self.total == 0.0 {
            return 0.0;
        }
        let mut before = 0.0;
        let mut after = 0.0;
        for &d in &self.live {
            if d == a || d == b {
                continue;
            }
            before += self.q(self.at(a, d), self.left[a], self.right[d]);
            before += self.q(self.at(b, d), self.left[b], self.right[d]);
            before += self.q(self.at(d, a), self.left[d], self.right[a]);
            before += self.q(self.at(d, b), self.left[d], self.right[b]);
            let lm = self.left[a] + self.left[b];
            let rm = self.right[a] + self.right[b];
            after += self.q(self.at(a, d) + self.at(b, d), lm, self.right[d]);
            after += self.q(self.at(d, a) + self.at(d, b), self.left[d], rm);
        }
        for &(x, y) in &[(a, a), (a, b), (b, a), (b, b)] {
            before += self.q(self.at(x, y), self.left[x], self.right[y]);
        }
        let self_m = self.at(a, a) + self.at(a, b) + self.at(b, a) + self.at(b, b);
        after += self.q(self_m, self.left[a] + self.left[b], self.right[a] + self.right[b]);
        before - after
    }

    fn best_pair(&self) -> (usize, usize, f64) {
        let mut best: Option<(usize, usize, f64)> = None;
        for (i, &a) in self.live.iter().enumerate() {
            for &b in &self.live[i + 1..] {
                let l = self.loss(a, b);
                // strict `<` keeps the earliest pair on ties
                if best.is_none_or(|(_, _, bl)| l < bl) {
                    best = Some((a, b, l));
                }
            }
        }
        best.expect("best_pair needs two live clusters")
    }

    /// Folds slot `b` into slot `a`.
    fn merge(&mut self, a: usize, b: usize) {
        let cap = self.cap;
        for d in 0..cap {
            self.n[a * cap + d] += self.n[b * cap + d];
            self.n[b * cap + d] = 0.0;
        }
        for c in 0..cap {
            self.n[c * cap + a] += self.n[c * cap + b];
            self.n[c * cap + b] = 0.0;
        }
        self.left[a] += self.left[b];
        self.right[a] += self.right[b];
        self.left[b] = 0.0;
        self.right[b] = 0.0;
        self.live.retain(|&s| s != b);
    }
}

/// Greedy agglomerative clustering of `n_items` items.
pub fn build_class_tree(
    n_items: usize,
    bigrams: &BigramCounts,
    bit_budget: u8,
    window: usize,
) -> Result<ClassTree, ClassTreeError> {
    if n_items == 0 {
        return Err(ClassTreeError::EmptyVocabulary);
    }
    if bit_budget == 0 || bit_budget > 32 {
        return Err(ClassTreeError::BadBudget(bit_budget));
    }
    let window = window.max(2);

    let mut out_adj: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n_items];
    let mut in_adj: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n_items];
    let mut freq = vec![0.0f64; n_items];
    let mut pairs: Vec<_> =
        bigrams.iter().filter(|&((a, b), c)| (a as usize) < n_items && (b as usize) < n_items && c > 0.0).collect();
    pairs.sort_by_key(|x| x.0);
    for ((a, b), c) in pairs {
        out_adj[a as usize].push((b, c));
        in_adj[b as usize].push((a, c));
        freq[a as usize] += c;
        freq[b as usize] += c;
    }
    let mut order: Vec<u32> = (0..n_items as u32).collect();
    order.sort_by(|&x, &y| freq[y as usize].total_cmp(&freq[x as usize]).then(x.cmp(&y)));

    let cap = window + 1;
    let mut cl = Clustering {
        cap,
        n: vec![0.0; cap * cap],
        left: vec![0.0; cap],
        right: vec![0.0; cap],
        total: 0.0,
        live: Vec::new(),
        node_of_slot: vec![u32::MAX; cap],
    };
    let mut slot_of_item: Vec<Option<usize>> = vec![None; n_items];
    let mut merges: Vec<Merge> = Vec::new();
    let mut next = 0usize;

    let add_item = |cl: &mut Clustering, slot_of_item: &mut Vec<Option<usize>>, item: u32| {
        let slot = (0..cap).find(|s| !cl.live.contains(s)).expect("free slot");
        cl.live.push(slot);
        cl.live.sort_unstable();
        cl.node_of_slot[slot] = item;
        slot_of_item[item as usize] = Some(slot);
        // edges to already-placed items, both directions; self-loops once
        for &(other, c) in &out_adj[item as usize] {
            if let Some(os) = slot_of_item[other as usize] {
                cl.n[slot * cap + os] += c;
                cl.left[slot] += c;
                cl.right[os] += c;
                cl.total += c;
            }
        }
        for &(other, c) in &in_adj[item as usize] {
            if other == item {
                continue;
            }
            if let Some(os) = slot_of_item[other as usize] {
                cl.n[os * cap + slot] += c;
                cl.left[os] += c;
                cl.right[slot] += c;
                cl.total += c;
            }
        }
    };

    while next < n_items && cl.live.len() < window {
        add_item(&mut cl, &mut slot_of_item, order[next]);
        next += 1;
    }
    loop {
        if next < n_items {
            add_item(&mut cl, &mut slot_of_item, order[next]);
            next += 1;
        } else if cl.live.len() < 2 {
            break;
        }
        let (a, b, loss) = cl.best_pair();
        let node = (n_items + merges.len()) as u32;
        merges.push(Merge { left: cl.node_of_slot[a], right: cl.node_of_slot[b], loss });
        // every item inside `b` now lives in `a`
        for s in slot_of_item.iter_mut() {
            if *s == Some(b) {
                *s = Some(a);
            }
        }
        cl.merge(a, b);
        cl.node_of_slot[a] = node;
    }

    Ok(assign_codes(n_items, merges, bit_budget))
}

fn assign_codes(n_items: usize, merges: Vec<Merge>, budget: u8) -> ClassTree {
    let mut codes = vec![0u32; n_items];
    let mut depths = vec![0u16; n_items];
    let root = (n_items + merges.len() - 1) as u32;
    let mut stack = vec![(root, 0u32, 0u16)];
    while let Some((node, code, depth)) = stack.pop() {
        if (node as usize) < n_items {
            codes[node as usize] = code;
            depths[node as usize] = depth;
            continue;
        }
        let m = merges[node as usize - n_items];
        let right_code = if (depth as usize) < budget as usize { code | (1 << depth) } else { code };
        stack.push((m.right, right_code, depth + 1));
        stack.push((m.left, code, depth + 1));
    }
    let truncated = depths.iter().any(|&d| d as usize > budget as usize);
    let mut sorted = codes.clone();
    sorted.sort_unstable();
    let collisions = sorted.windows(2).any(|w| w[0] == w[1]);
    if collisions {
        log::warn!("class tree deeper than {budget} bits: truncated codes collide");
    }
    ClassTree { codes, depths, budget, merges, truncated, collisions }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(n: usize) -> Vec<Vec<f64>> {
        vec![vec![0.0; n]; n]
    }

    /// Cluster table obtained by applying `merges` to `assign`.
    fn table_for(bg: &BigramCounts, assign: &[usize], k: usize) -> Vec<Vec<f64>> {
        let mut t = square(k);
        for ((a, b), c) in bg.iter() {
            t[assign[a as usize]][assign[b as usize]] += c;
        }
        t
    }

    /// Reference greedy step: the smallest MI loss over every pair, each
    /// evaluated by recomputing MI from scratch.
    fn brute_force_min_loss(bg: &BigramCounts, assign: &[usize], k: usize) -> f64 {
        let base = mutual_information(&table_for(bg, assign, k));
        let mut best = f64::INFINITY;
        for a in 0..k {
            for b in a + 1..k {
                let merged: Vec<usize> =
                    assign.iter().map(|&c| if c == b { a } else { c }).map(|c| if c > b { c - 1 } else { c }).collect();
                let mi = mutual_information(&table_for(bg, &merged, k - 1));
                best = best.min(base - mi);
            }
        }
        best
    }

    fn four_items() -> BigramCounts {
        // a=0, b=1 precede c=2, d=3 and vice versa
        let mut bg = BigramCounts::new();
        for (x, y) in [(0, 2), (0, 3), (1, 2), (1, 3), (2, 0), (2, 1), (3, 0), (3, 1)] {
            bg.add(x, y, 1.0);
        }
        bg
    }

    #[test]
    fn two_items() {
        let mut bg = BigramCounts::new();
        bg.add(0, 1, 3.0);
        let t = build_class_tree(2, &bg, 30, 8).unwrap();
        assert_eq!(t.depth(), 1);
        let a = t.encode_item(Some(0)).unwrap();
        let b = t.encode_item(Some(1)).unwrap();
        assert_ne!(a.bit(0), b.bit(0));
        for bit in 1..30 {
            assert_eq!(a.bit(bit), Some(false));
            assert_eq!(b.bit(bit), Some(false));
        }
    }

    #[test]
    fn single_item_and_empty() {
        let t = build_class_tree(1, &BigramCounts::new(), 8, 8).unwrap();
        assert_eq!(t.depth(), 0);
        assert_eq!(t.code(0), 0);
        assert_eq!(build_class_tree(0, &BigramCounts::new(), 8, 8), Err(ClassTreeError::EmptyVocabulary));
    }

    #[test]
    fn first_merges_pair_similar_items() {
        let bg = four_items();
        let t = build_class_tree(4, &bg, 30, 8).unwrap();
        let m = t.merges();
        let pair = |m: &Merge| {
            let mut p = [m.left, m.right];
            p.sort();
            p
        };
        let first_two = [pair(&m[0]), pair(&m[1])];
        assert!(first_two.contains(&[0, 1]), "{m:?}");
        assert!(first_two.contains(&[2, 3]), "{m:?}");
    }

    #[test]
    fn greedy_matches_brute_force_on_small_vocabularies() {
        // pseudo-random bigram tables over 3..=6 items
        let mut seed = 0x9e3779b97f4a7c15u64;
        let mut rnd = move || {
            seed ^= seed << 13;
            seed ^= seed >> 7;
            seed ^= seed << 17;
            seed
        };
        for n in 3..=6usize {
            for _ in 0..10 {
                let mut bg = BigramCounts::new();
                for a in 0..n as u32 {
                    for b in 0..n as u32 {
                        let c = rnd() % 4;
                        if c > 0 {
                            bg.add(a, b, c as f64);
                        }
                    }
                }
                let t = build_class_tree(n, &bg, 30, 16).unwrap();
                // replay the merges, checking each against the brute-force optimum
                let mut members: Vec<Vec<u32>> = (0..n as u32).map(|i| vec![i]).collect();
                let mut node_members: HashMap<u32, Vec<u32>> = (0..n as u32).map(|i| (i, vec![i])).collect();
                for (k, m) in t.merges().iter().enumerate() {
                    let mut assign = vec![0usize; n];
                    for (ci, mem) in members.iter().enumerate() {
                        for &i in mem {
                            assign[i as usize] = ci;
                        }
                    }
                    let want = brute_force_min_loss(&bg, &assign, members.len());
                    assert!(m.loss <= want + 1e-9, "n={n} step {k}: {} > {want}", m.loss);
                    let l = node_members.remove(&m.left).unwrap();
                    let r = node_members.remove(&m.right).unwrap();
                    members.retain(|g| g != &l && g != &r);
                    let mut joined = l.clone();
                    joined.extend(r);
                    joined.sort();
                    members.push(joined.clone());
                    node_members.insert((n + k) as u32, joined);
                }
                assert_eq!(members.len(), 1);
            }
        }
    }

    #[test]
    fn codes_are_injective_within_budget() {
        let mut bg = BigramCounts::new();
        for a in 0..40u32 {
            bg.add(a, (a * 7 + 3) % 40, 1.0 + (a % 3) as f64);
        }
        let t = build_class_tree(40, &bg, 30, 10).unwrap();
        assert!(t.depth() <= 30);
        assert!(!t.has_collisions());
        let mut codes = t.codes().to_vec();
        codes.sort();
        codes.dedup();
        assert_eq!(codes.len(), 40);
    }

    #[test]
    fn truncation_collisions_are_flagged() {
        // a chain-shaped tree: 6 items, budget 2
        let mut bg = BigramCounts::new();
        for a in 0..6u32 {
            bg.add(a, a, (a + 1) as f64 * 10.0);
        }
        let t = build_class_tree(6, &bg, 2, 8).unwrap();
        assert!(t.truncated());
        assert!(t.has_collisions());
    }

    #[test]
    fn null_code_is_distinct() {
        let t = build_class_tree(2, &BigramCounts::new(), 8, 8).unwrap();
        let null = t.encode_item(None).unwrap();
        assert!(null.is_null());
        assert_eq!(null.bit(0), None);
        assert_ne!(null, t.encode_item(Some(0)).unwrap());
        assert_eq!(t.encode_item(Some(9)), Err(ClassTreeError::UnknownId(9)));
        assert_eq!(null.to_string(), "NULL");
    }

    #[test]
    fn windowed_build_covers_every_item() {
        let mut bg = BigramCounts::new();
        for a in 0..30u32 {
            bg.add(a, (a + 1) % 30, (30 - a) as f64);
        }
        let t = build_class_tree(30, &bg, 30, 4).unwrap();
        assert_eq!(t.merges().len(), 29);
        assert_eq!(t.len(), 30);
    }
}
