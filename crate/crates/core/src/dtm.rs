//! Decision-tree conditional models `P(future | history)`.
//!
//! A history is a fixed-length vector of optional slot values. Every question
//! is binary: whether a slot is empty, one bit of a slot value's class code, or
//! whether a numeric slot is at most some threshold.
//!
//! Trees are grown greedily by information gain. Leaf distributions are
//! relative frequencies, smoothed by interpolating each node with its smoothed
//! parent:
//!
//! ```text
//! P~(f | n) = λ(n) · P(f | n) + (1 − λ(n)) · P~(f | parent(n)),   P~(f | parent(root)) = 1/|F|
//! ```
//!
//! The λs are tied by `⌊log₂ count(n)⌋` and estimated by EM on held-out events.

use std::collections::HashMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DtmError {
    #[error("no events to grow from")]
    NoEvents,
    #[error("history has {got} slots, the model expects {expected}")]
    SlotLayoutMismatch { expected: usize, got: usize },
    #[error("future {future} is outside the vocabulary of {size}")]
    FutureOutOfRange { future: u32, size: usize },
}

/// Something with a history and a future.
pub trait Observation {
    fn history(&self) -> &[Option<u32>];
    fn future(&self) -> u32;
}

/// A plain owned observation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub history: Vec<Option<u32>>,
    pub future: u32,
}

impl Observation for Event {
    fn history(&self) -> &[Option<u32>] {
        &self.history
    }

    fn future(&self) -> u32 {
        self.future
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QuestionKind {
    IsNull,
    /// Bit `b` of the slot value's code is 1.
    Bit(u8),
    /// The slot value is at most `t`.
    AtMost(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Question {
    pub slot: u16,
    pub kind: QuestionKind,
}

impl Question {
    pub fn new(slot: usize, kind: QuestionKind) -> Self {
        Question { slot: slot as u16, kind }
    }
}

impl std::fmt::Display for Question {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.kind {
            QuestionKind::IsNull => write!(f, "s{}:null", self.slot),
            QuestionKind::Bit(b) => write!(f, "s{}:bit{}", self.slot, b),
            QuestionKind::AtMost(t) => write!(f, "s{}:<={}", self.slot, t),
        }
    }
}

/// Per-value bit codes for a family of categorical slots.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeTable {
    pub codes: Vec<u32>,
    /// Bits worth asking about.
    pub width: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotSpec {
    Coded { table: usize },
    Numeric { thresholds: Vec<u32> },
}

/// The question inventory for one history layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionSet {
    tables: Vec<CodeTable>,
    slots: Vec<SlotSpec>,
}

impl QuestionSet {
    pub fn new(tables: Vec<CodeTable>, slots: Vec<SlotSpec>) -> Self {
        QuestionSet { tables, slots }
    }

    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }

    pub fn slots(&self) -> &[SlotSpec] {
        &self.slots
    }

    /// The binary answer to `q` given a slot value.
    pub fn answer_value(&self, q: &Question, value: Option<u32>) -> bool {
        match (q.kind, value) {
            (QuestionKind::IsNull, v) => v.is_none(),
            (_, None) => false,
            (QuestionKind::Bit(b), Some(v)) => match &self.slots[q.slot as usize] {
                SlotSpec::Coded { table } => {
                    self.tables[*table].codes.get(v as usize).is_some_and(|c| (c >> b) & 1 == 1)
                }
                SlotSpec::Numeric { .. } => (v >> b) & 1 == 1,
            },
            (QuestionKind::AtMost(t), Some(v)) => v <= t,
        }
    }

    pub fn answer(&self, q: &Question, history: &[Option<u32>]) -> bool {
        self.answer_value(q, history[q.slot as usize])
    }

    /// Every question about `slot`, in ascending order.
    pub fn slot_questions(&self, slot: usize) -> Vec<Question> {
        let mut out = vec![Question::new(slot, QuestionKind::IsNull)];
        match &self.slots[slot] {
            SlotSpec::Coded { table } => {
                for b in 0..self.tables[*table].width {
                    out.push(Question::new(slot, QuestionKind::Bit(b)));
                }
            }
            SlotSpec::Numeric { thresholds } => {
                for &t in thresholds {
                    out.push(Question::new(slot, QuestionKind::AtMost(t)));
                }
            }
        }
        out
    }

    /// All candidate questions, ordered by (slot, kind).
    pub fn candidates(&self) -> Vec<Question> {
        (0..self.slots.len()).flat_map(|s| self.slot_questions(s)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowConfig {
    pub min_events: usize,
    /// Bits per event.
    pub min_gain: f64,
    pub max_depth: usize,
}

impl Default for GrowConfig {
    fn default() -> Self {
        GrowConfig { min_events: 8, min_gain: 0.01, max_depth: 24 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtNode {
    pub question: Option<Question>,
    /// Child taken when the answer is yes.
    pub yes: u32,
    pub no: u32,
    pub parent: Option<u32>,
    pub depth: u16,
    /// Future counts from the growing data.
    pub counts: Vec<u32>,
    pub total: u64,
    /// Information gain of this node's split, in bits per event.
    pub gain: f64,
}

impl DtNode {
    pub fn is_leaf(&self) -> bool {
        self.question.is_none()
    }

    /// Relative frequencies; all zero when the node saw no events.
    pub fn empirical(&self) -> Vec<f64> {
        if self.total == 0 {
            return vec![0.0; self.counts.len()];
        }
        self.counts.iter().map(|&c| c as f64 / self.total as f64).collect()
    }

    /// `⌊log₂ count⌋`, the λ bucket.
    pub fn bucket(&self) -> usize {
        if self.total == 0 {
            0
        } else {
            63 - self.total.leading_zeros() as usize
        }
    }
}

/// A grown tree. Nodes are stored parents-before-children; index 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<DtNode>,
    n_futures: usize,
    slot_count: usize,
}

impl DecisionTree {
    pub fn nodes(&self) -> &[DtNode] {
        &self.nodes
    }

    pub fn n_futures(&self) -> usize {
        self.n_futures
    }

    pub fn slot_count(&self) -> usize {
        self.slot_count
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    /// Index of the leaf `history` reaches.
    pub fn leaf_for(&self, questions: &QuestionSet, history: &[Option<u32>]) -> usize {
        let mut i = 0usize;
        while let Some(q) = &self.nodes[i].question {
            i = if questions.answer(q, history) { self.nodes[i].yes } else { self.nodes[i].no } as usize;
        }
        i
    }

    /// Root-to-leaf node indices for `history`.
    pub fn path_for(&self, questions: &QuestionSet, history: &[Option<u32>]) -> Vec<usize> {
        let mut path = vec![0usize];
        let mut i = 0usize;
        while let Some(q) = &self.nodes[i].question {
            i = if questions.answer(q, history) { self.nodes[i].yes } else { self.nodes[i].no } as usize;
            path.push(i);
        }
        path
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth as usize).max().unwrap_or(0)
    }
}

fn entropy_bits(counts: &[u32], total: u64) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

fn check_layout<O: Observation>(events: &[O], slots: usize, n_futures: usize) -> Result<(), DtmError> {
    for e in events {
        if e.history().len() != slots {
            return Err(DtmError::SlotLayoutMismatch { expected: slots, got: e.history().len() });
        }
        if e.future() as usize >= n_futures {
            return Err(DtmError::FutureOutOfRange { future: e.future(), size: n_futures });
        }
    }
    Ok(())
}

fn count_futures<O: Observation>(events: &[O], idx: &[u32], n_futures: usize) -> Vec<u32> {
    let mut counts = vec![0u32; n_futures];
    for &i in idx {
        counts[events[i as usize].future() as usize] += 1;
    }
    counts
}

/// Best split of one node: `(gain, question)` with ties to the smallest question.
fn best_question<O: Observation + Sync>(
    questions: &QuestionSet,
    events: &[O],
    idx: &[u32],
    counts: &[u32],
) -> Option<(f64, Question)> {
    let n = idx.len() as u64;
    let parent_h = entropy_bits(counts, n);
    let n_futures = counts.len();
    let per_slot: Vec<Option<(f64, Question)>> = (0..questions.slot_count())
        .into_par_iter()
        .map(|slot| {
            // histogram of futures per distinct slot value
            let mut by_value: HashMap<Option<u32>, Vec<u32>> = HashMap::new();
            for &i in idx {
                let e = &events[i as usize];
                by_value.entry(e.history()[slot]).or_insert_with(|| vec![0; n_futures])[e.future() as usize] += 1;
            }
            if by_value.len() < 2 {
                return None;
            }
            let mut best: Option<(f64, Question)> = None;
            let mut yes = vec![0u32; n_futures];
            for q in questions.slot_questions(slot) {
                yes.iter_mut().for_each(|c| *c = 0);
                for (v, c) in &by_value {
                    if questions.answer_value(&q, *v) {
                        yes.iter_mut().zip(c).for_each(|(y, x)| *y += x);
                    }
                }
                let n_yes: u64 = yes.iter().map(|&c| c as u64).sum();
                if n_yes == 0 || n_yes == n {
                    continue;
                }
                let no: Vec<u32> = counts.iter().zip(&yes).map(|(t, y)| t - y).collect();
                let n_no = n - n_yes;
                let h = (n_yes as f64 * entropy_bits(&yes, n_yes) + n_no as f64 * entropy_bits(&no, n_no)) / n as f64;
                let gain = parent_h - h;
                if best.is_none_or(|(g, _)| gain > g) {
                    best = Some((gain, q));
                }
            }
            best
        })
        .collect();
    let mut best: Option<(f64, Question)> = None;
    for c in per_slot.into_iter().flatten() {
        if best.is_none_or(|(g, _)| c.0 > g) {
            best = Some(c);
        }
    }
    best
}

/// Grows a tree by recursive information-gain splitting.
pub fn grow<O: Observation + Sync>(
    events: &[O],
    questions: &QuestionSet,
    n_futures: usize,
    config: &GrowConfig,
) -> Result<DecisionTree, DtmError> {
    if events.is_empty() {
        return Err(DtmError::NoEvents);
    }
    check_layout(events, questions.slot_count(), n_futures)?;
    let mut tree = DecisionTree { nodes: Vec::new(), n_futures, slot_count: questions.slot_count() };
    let all: Vec<u32> = (0..events.len() as u32).collect();
    build(&mut tree, events, questions, config, all, None, 0, &mut |_, _| None);
    Ok(tree)
}

type Chooser<'a> = dyn FnMut(usize, &[u32]) -> Option<Question> + 'a;

/// Creates the subtree for `idx` in pre-order. `forced` picks the question
/// for a node (forced-order trees); when it declines, the best split by gain
/// is used subject to `config`.
#[allow(clippy::too_many_arguments)]
fn build<O: Observation + Sync>(
    tree: &mut DecisionTree,
    events: &[O],
    questions: &QuestionSet,
    config: &GrowConfig,
    idx: Vec<u32>,
    parent: Option<u32>,
    depth: usize,
    forced: &mut Chooser<'_>,
) -> u32 {
    let counts = count_futures(events, &idx, tree.n_futures);
    let total = idx.len() as u64;
    let me = tree.nodes.len() as u32;
    tree.nodes.push(DtNode { question: None, yes: 0, no: 0, parent, depth: depth as u16, counts, total, gain: 0.0 });

    let split = match forced(depth, &idx) {
        Some(q) => Some((0.0, q)),
        None => {
            let pure = tree.nodes[me as usize].counts.iter().filter(|&&c| c > 0).count() <= 1;
            if pure || depth >= config.max_depth || idx.len() < config.min_events {
                None
            } else {
                best_question(questions, events, &idx, &tree.nodes[me as usize].counts)
                    .filter(|(g, _)| *g >= config.min_gain)
            }
        }
    };
    let Some((gain, q)) = split else { return me };

    let (yes_idx, no_idx): (Vec<u32>, Vec<u32>) =
        idx.iter().partition(|&&i| questions.answer(&q, events[i as usize].history()));
    drop(idx);
    let yes = build(tree, events, questions, config, yes_idx, Some(me), depth + 1, forced);
    let no = build(tree, events, questions, config, no_idx, Some(me), depth + 1, forced);
    let node = &mut tree.nodes[me as usize];
    node.question = Some(q);
    node.gain = gain;
    node.yes = yes;
    node.no = no;
    me
}

/// A tree that asks `order[k]` at every node of depth `k`, whatever the gain,
/// and stops below nodes without events.
pub fn as_forced_order_tree<O: Observation + Sync>(
    events: &[O],
    questions: &QuestionSet,
    order: &[Question],
    n_futures: usize,
) -> Result<DecisionTree, DtmError> {
    if events.is_empty() {
        return Err(DtmError::NoEvents);
    }
    check_layout(events, questions.slot_count(), n_futures)?;
    let mut tree = DecisionTree { nodes: Vec::new(), n_futures, slot_count: questions.slot_count() };
    let all: Vec<u32> = (0..events.len() as u32).collect();
    let no_growth = GrowConfig { min_events: usize::MAX, min_gain: f64::INFINITY, max_depth: 0 };
    let mut chooser = |depth: usize, idx: &[u32]| -> Option<Question> {
        if idx.is_empty() {
            None
        } else {
            order.get(depth).copied()
        }
    };
    build(&mut tree, events, questions, &no_growth, all, None, 0, &mut chooser);
    Ok(tree)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothConfig {
    pub max_iterations: usize,
    /// Stop once the relative change in held-out log-likelihood falls below this.
    pub tolerance: f64,
    pub initial_lambda: f64,
    /// Upper bound on every λ; keeps every smoothed probability positive.
    pub max_lambda: f64,
}

impl Default for SmoothConfig {
    fn default() -> Self {
        SmoothConfig { max_iterations: 100, tolerance: 1e-6, initial_lambda: 0.5, max_lambda: 1.0 - 1e-6 }
    }
}

/// What smoothing did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingReport {
    /// Held-out log-likelihood before the first and after every EM iteration.
    pub log_likelihoods: Vec<f64>,
    pub iterations: usize,
    /// No held-out data: λs come from the fixed schedule.
    pub fallback: bool,
    pub heldout_events: usize,
}

/// A grown tree with its interpolation weights and the smoothed distribution
/// of every node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedModel {
    tree: DecisionTree,
    questions: QuestionSet,
    lambdas: Vec<f64>,
    smoothed: Vec<Vec<f64>>,
    report: SmoothingReport,
}

/// λ for bucket `b` when there is no held-out data.
pub fn fallback_lambda(bucket: usize) -> f64 {
    (bucket as f64 + 1.0) / (bucket as f64 + 2.0)
}

fn smoothed_distributions(tree: &DecisionTree, lambdas: &[f64]) -> Vec<Vec<f64>> {
    let uniform = vec![1.0 / tree.n_futures as f64; tree.n_futures];
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(tree.nodes.len());
    for node in &tree.nodes {
        let parent = node.parent.map(|p| &out[p as usize]).unwrap_or(&uniform);
        let dist = if node.total == 0 {
            parent.clone()
        } else {
            let lambda = lambdas[node.bucket()];
            node.empirical().iter().zip(parent).map(|(e, p)| lambda * e + (1.0 - lambda) * p).collect()
        };
        out.push(dist);
    }
    out
}

impl SmoothedModel {
    /// Uses the given per-bucket λs as they are.
    pub fn with_lambdas(tree: DecisionTree, questions: QuestionSet, lambdas: Vec<f64>) -> Self {
        let mut lambdas = lambdas;
        let buckets = tree.nodes.iter().map(DtNode::bucket).max().unwrap_or(0) + 1;
        if lambdas.len() < buckets {
            let last = lambdas.last().copied().unwrap_or(0.0);
            lambdas.resize(buckets, last);
        }
        let smoothed = smoothed_distributions(&tree, &lambdas);
        SmoothedModel {
            tree,
            questions,
            lambdas,
            smoothed,
            report: SmoothingReport { log_likelihoods: Vec::new(), iterations: 0, fallback: false, heldout_events: 0 },
        }
    }

    pub fn tree(&self) -> &DecisionTree {
        &self.tree
    }

    pub fn questions(&self) -> &QuestionSet {
        &self.questions
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn report(&self) -> &SmoothingReport {
        &self.report
    }

    pub fn n_futures(&self) -> usize {
        self.tree.n_futures
    }

    /// Smoothed distribution of node `i`.
    pub fn node_distribution(&self, i: usize) -> &[f64] {
        &self.smoothed[i]
    }

    /// The smoothed distribution at the leaf `history` reaches.
    pub fn predict(&self, history: &[Option<u32>]) -> Result<&[f64], DtmError> {
        if history.len() != self.tree.slot_count {
            return Err(DtmError::SlotLayoutMismatch { expected: self.tree.slot_count, got: history.len() });
        }
        Ok(&self.smoothed[self.tree.leaf_for(&self.questions, history)])
    }

    pub fn log_likelihood<O: Observation>(&self, events: &[O]) -> f64 {
        events
            .iter()
            .map(|e| self.predict(e.history()).map(|d| d[e.future() as usize].ln()).unwrap_or(f64::NEG_INFINITY))
            .sum()
    }

    /// Pre-order dump: `node_id question|LEAF lambda_bucket sparse-counts`.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for (i, n) in self.tree.nodes.iter().enumerate() {
            let q = n.question.map(|q| q.to_string()).unwrap_or_else(|| "LEAF".into());
            let counts: Vec<String> =
                n.counts.iter().enumerate().filter(|(_, &c)| c > 0).map(|(f, c)| format!("{f}:{c}")).collect();
            let _ = writeln!(s, "{i} {q} {} {}", n.bucket(), counts.join(","));
        }
        s
    }
}

/// Estimates the per-bucket λs on `heldout` by EM and returns the smoothed model.
pub fn smooth<O: Observation>(
    tree: DecisionTree,
    questions: QuestionSet,
    heldout: &[O],
    config: &SmoothConfig,
) -> Result<SmoothedModel, DtmError> {
    check_layout(heldout, questions.slot_count(), tree.n_futures)?;
    let buckets = tree.nodes.iter().map(DtNode::bucket).max().unwrap_or(0) + 1;
    if heldout.is_empty() {
        log::warn!("no held-out events; using the fixed λ schedule");
        let lambdas: Vec<f64> = (0..buckets).map(|b| fallback_lambda(b).min(config.max_lambda)).collect();
        let mut m = SmoothedModel::with_lambdas(tree, questions, lambdas);
        m.report.fallback = true;
        return Ok(m);
    }

    let uniform = 1.0 / tree.n_futures as f64;
    let empirical: Vec<Vec<f64>> = tree.nodes.iter().map(DtNode::empirical).collect();
    let paths: Vec<Vec<usize>> = heldout.iter().map(|e| tree.path_for(&questions, e.history())).collect();
    let mut lambdas = vec![config.initial_lambda.min(config.max_lambda); buckets];

    let log_likelihood = |lambdas: &[f64]| -> f64 {
        heldout
            .iter()
            .zip(&paths)
            .map(|(e, path)| {
                let f = e.future() as usize;
                let mut p = uniform;
                for &k in path {
                    let n = &tree.nodes[k];
                    if n.total > 0 {
                        let l = lambdas[n.bucket()];
                        p = l * empirical[k][f] + (1.0 - l) * p;
                    }
                }
                p.ln()
            })
            .sum()
    };

    let mut lls = vec![log_likelihood(&lambdas)];
    let mut iterations = 0;
    let mut weights: Vec<f64> = Vec::new();
    for _ in 0..config.max_iterations {
        let mut chose = vec![0.0f64; buckets];
        let mut reached = vec![0.0f64; buckets];
        for (e, path) in heldout.iter().zip(&paths) {
            let f = e.future() as usize;
            // weight of each path term in the mixture, leaf backwards
            let steps: Vec<usize> = path.iter().copied().filter(|&k| tree.nodes[k].total > 0).collect();
            weights.clear();
            let mut carry = 1.0;
            for &k in steps.iter().rev() {
                let l = lambdas[tree.nodes[k].bucket()];
                weights.push(carry * l * empirical[k][f]);
                carry *= 1.0 - l;
            }
            let w_uniform = carry * uniform;
            let total: f64 = weights.iter().sum::<f64>() + w_uniform;
            // walk from the root down: mass not yet claimed above
            let mut below = w_uniform;
            for (j, &k) in steps.iter().enumerate() {
                let w = weights[steps.len() - 1 - j];
                below += w;
                let b = tree.nodes[k].bucket();
                chose[b] += w / total;
                reached[b] += below / total;
            }
        }
        for b in 0..buckets {
            if reached[b] > 0.0 {
                lambdas[b] = (chose[b] / reached[b]).clamp(0.0, config.max_lambda);
            }
        }
        iterations += 1;
        let ll = log_likelihood(&lambdas);
        let prev = *lls.last().unwrap();
        debug_assert!(ll >= prev - 1e-9 * prev.abs().max(1.0), "EM decreased log-likelihood: {prev} -> {ll}");
        lls.push(ll);
        if ((ll - prev) / prev.abs().max(f64::MIN_POSITIVE)).abs() < config.tolerance {
            break;
        }
    }

    let mut m = SmoothedModel::with_lambdas(tree, questions, lambdas);
    m.report = SmoothingReport { log_likelihoods: lls, iterations, fallback: false, heldout_events: heldout.len() };
    Ok(m)
}
