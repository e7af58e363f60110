//! Search for the most probable derivation of a word sequence.
//!
//! [`parse`] runs in two phases. A best-first pass with a per-depth beam finds
//! a complete parse quickly; as soon as one has probability above the switch
//! threshold, every remaining open hypothesis is exhausted breadth-first,
//! dropping those already less probable than the best complete parse. Scores
//! are products of probabilities, so a hypothesis never gains probability by
//! being extended and the pruning cannot lose the optimum.
//!
//! Equal-probability parses are ordered by their decision sequences; the
//! lexicographically smallest wins.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::rc::Rc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::RawTree;
use crate::derivation::{Action, DerivationError, DerivationState};
use crate::models::ModelSet;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SearchError {
    #[error("empty input")]
    EmptyInput,
    #[error("sentence of {len} words exceeds the limit of {max}")]
    TooLong { len: usize, max: usize },
    #[error("enumeration visited more than {budget} states")]
    EnumerationBudgetExceeded { budget: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Hypotheses expanded per decision depth before the rest are deferred.
    pub beam_width: usize,
    /// A first-pass completion above this probability starts the second pass.
    pub switch_threshold: f64,
    pub max_hypotheses: usize,
    pub max_length: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig { beam_width: 10, switch_threshold: 1e-5, max_hypotheses: 2_000_000, max_length: 40 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SearchStatus {
    Optimal,
    /// The hypothesis cap was hit; the result may not be the most probable parse.
    SearchErrorMemory,
    NoParse,
}

impl SearchStatus {
    pub fn name(self) -> &'static str {
        match self {
            SearchStatus::Optimal => "optimal",
            SearchStatus::SearchErrorMemory => "search-error-memory",
            SearchStatus::NoParse => "no-parse",
        }
    }
}

impl std::fmt::Display for SearchStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub tree: Option<RawTree>,
    /// `-inf` when there is no tree.
    pub logprob: f64,
    pub actions: Vec<Action>,
    pub status: SearchStatus,
    /// Hypotheses expanded (or states visited, for enumeration).
    pub expanded: u64,
}

/// Decision sequence stored as a shared parent-linked list.
#[derive(Debug)]
struct Link {
    action: Action,
    parent: Option<Rc<Link>>,
}

fn collect_actions(mut link: &Option<Rc<Link>>) -> Vec<Action> {
    let mut out = Vec::new();
    while let Some(l) = link {
        out.push(l.action);
        link = &l.parent;
    }
    out.reverse();
    out
}

/// A partial derivation with its log-probability.
#[derive(Debug, Clone)]
pub struct Hypothesis {
    pub state: DerivationState,
    pub logprob: f64,
    pub depth: u32,
    path: Option<Rc<Link>>,
}

impl Hypothesis {
    fn initial(state: DerivationState) -> Self {
        Hypothesis { state, logprob: 0.0, depth: 0, path: None }
    }

    pub fn actions(&self) -> Vec<Action> {
        collect_actions(&self.path)
    }

    fn extend(&self, models: &ModelSet, action: Action, p: f64) -> Hypothesis {
        Hypothesis {
            state: self.state.apply_unchecked(&models.ctx, action),
            logprob: self.logprob + p.ln(),
            depth: self.depth + 1,
            path: Some(Rc::new(Link { action, parent: self.path.clone() })),
        }
    }

    fn children(&self, models: &ModelSet) -> Result<Vec<Hypothesis>, DerivationError> {
        let (kind, dist) = models.legal_distribution(&self.state)?;
        Ok(dist.into_iter().map(|(v, p)| self.extend(models, Action::new(kind, v), p)).collect())
    }
}

/// Best complete parse so far.
struct Best {
    logprob: f64,
    actions: Vec<Action>,
    state: Option<DerivationState>,
}

impl Best {
    fn new() -> Self {
        Best { logprob: f64::NEG_INFINITY, actions: Vec::new(), state: None }
    }

    fn found(&self) -> bool {
        self.state.is_some()
    }

    fn offer(&mut self, h: &Hypothesis) {
        if !self.found() || h.logprob > self.logprob {
            self.take(h);
        } else if h.logprob == self.logprob {
            let actions = h.actions();
            if actions < self.actions {
                self.logprob = h.logprob;
                self.actions = actions;
                self.state = Some(h.state.clone());
            }
        }
    }

    fn take(&mut self, h: &Hypothesis) {
        self.logprob = h.logprob;
        self.actions = h.actions();
        self.state = Some(h.state.clone());
    }

    /// Whether a hypothesis can still match or beat the best.
    fn admits(&self, logprob: f64) -> bool {
        !self.found() || logprob >= self.logprob
    }

    fn into_result(self, models: &ModelSet, surface: &[&str], status: SearchStatus, expanded: u64) -> SearchResult {
        match self.state {
            Some(s) => SearchResult {
                tree: s.to_raw_tree(&models.ctx, surface),
                logprob: self.logprob,
                actions: self.actions,
                status,
                expanded,
            },
            None => no_parse(expanded),
        }
    }
}

fn no_parse(expanded: u64) -> SearchResult {
    SearchResult {
        tree: None,
        logprob: f64::NEG_INFINITY,
        actions: Vec::new(),
        status: SearchStatus::NoParse,
        expanded,
    }
}

struct Ranked {
    h: Hypothesis,
    seq: u64,
}

impl PartialEq for Ranked {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Ranked {}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        self.h.logprob.total_cmp(&other.h.logprob).then(other.seq.cmp(&self.seq))
    }
}

fn check_input(words: &[&str], max_length: usize) -> Result<(), SearchError> {
    if words.is_empty() {
        return Err(SearchError::EmptyInput);
    }
    if words.len() > max_length {
        return Err(SearchError::TooLong { len: words.len(), max: max_length });
    }
    Ok(())
}

/// Follows the most probable legal action from `h` until the derivation ends.
fn greedy_completion(models: &ModelSet, h: &Hypothesis) -> Option<Hypothesis> {
    let mut cur = h.clone();
    while !cur.state.is_complete() {
        let (kind, dist) = models.legal_distribution(&cur.state).ok()?;
        let &(v, p) = dist.iter().max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))?;
        cur = cur.extend(models, Action::new(kind, v), p);
    }
    Some(cur)
}

/// Gives up under the hypothesis cap, returning the best parse found or a
/// greedy completion of the most probable live hypothesis.
fn memory_exhausted<'a>(
    models: &ModelSet,
    surface: &[&str],
    mut best: Best,
    live: impl Iterator<Item = &'a Hypothesis>,
    expanded: u64,
) -> SearchResult {
    log::debug!("hypothesis cap reached after {expanded} expansions");
    if !best.found() {
        let top = live.max_by(|a, b| a.logprob.total_cmp(&b.logprob));
        if let Some(done) = top.and_then(|h| greedy_completion(models, h)) {
            best.take(&done);
        }
    }
    best.into_result(models, surface, SearchStatus::SearchErrorMemory, expanded)
}

/// The most probable parse of `words` under `models`.
pub fn parse(models: &ModelSet, words: &[&str], config: &SearchConfig) -> Result<SearchResult, SearchError> {
    check_input(words, config.max_length)?;
    let ids = models.word_ids(words);
    let start = DerivationState::new(&ids).map_err(|_| SearchError::EmptyInput)?;
    let switch = config.switch_threshold.ln();

    let mut best = Best::new();
    let mut expanded = 0u64;
    let mut seq = 0u64;
    let mut heap = BinaryHeap::new();
    heap.push(Ranked { h: Hypothesis::initial(start), seq });
    let mut deferred: Vec<Hypothesis> = Vec::new();
    let mut per_depth: Vec<usize> = Vec::new();
    let mut beam = config.beam_width.max(1);

    // first pass: best-first with a per-depth beam
    loop {
        let Some(Ranked { h, .. }) = heap.pop() else {
            if best.found() || deferred.is_empty() {
                break;
            }
            // nothing completed inside the beam: widen it and retry the deferred
            beam = beam.saturating_mul(2);
            per_depth.iter_mut().for_each(|c| *c = 0);
            for h in deferred.drain(..) {
                seq += 1;
                heap.push(Ranked { h, seq });
            }
            continue;
        };
        if !best.admits(h.logprob) {
            continue;
        }
        let d = h.depth as usize;
        if per_depth.len() <= d {
            per_depth.resize(d + 1, 0);
        }
        if per_depth[d] >= beam {
            deferred.push(h);
            continue;
        }
        per_depth[d] += 1;
        expanded += 1;
        let Ok(children) = h.children(models) else { continue };
        for c in children {
            debug_assert!(c.logprob <= h.logprob);
            if c.state.is_complete() {
                best.offer(&c);
            } else if best.admits(c.logprob) {
                seq += 1;
                heap.push(Ranked { h: c, seq });
            }
        }
        if heap.len() + deferred.len() > config.max_hypotheses {
            let live: Vec<Hypothesis> = heap.into_iter().map(|r| r.h).chain(deferred).collect();
            return Ok(memory_exhausted(models, words, best, live.iter(), expanded));
        }
        if best.found() && best.logprob > switch {
            break;
        }
    }

    // second pass: exhaust everything still open, shallowest first
    let mut levels: BTreeMap<u32, Vec<Hypothesis>> = BTreeMap::new();
    let mut live = 0usize;
    for h in heap.into_iter().map(|r| r.h).chain(deferred) {
        if best.admits(h.logprob) {
            levels.entry(h.depth).or_default().push(h);
            live += 1;
        }
    }
    while let Some((_, level)) = levels.pop_first() {
        live -= level.len();
        let mut next: Vec<Hypothesis> = Vec::new();
        for (i, h) in level.iter().enumerate() {
            if !best.admits(h.logprob) {
                continue;
            }
            expanded += 1;
            let Ok(children) = h.children(models) else { continue };
            for c in children {
                debug_assert!(c.logprob <= h.logprob, "extension raised the score");
                if c.state.is_complete() {
                    best.offer(&c);
                } else if best.admits(c.logprob) {
                    next.push(c);
                }
            }
            if live + next.len() + (level.len() - i - 1) > config.max_hypotheses {
                let rest = levels.values().flatten().chain(&next).chain(&level[i + 1..]);
                return Ok(memory_exhausted(models, words, best, rest, expanded));
            }
        }
        if !next.is_empty() {
            live += next.len();
            let depth = next[0].depth;
            levels.entry(depth).or_default().extend(next);
        }
    }
    Ok(best.into_result(models, words, SearchStatus::Optimal, expanded))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnumerationLimits {
    pub max_states: u64,
    /// Skip subtrees already less probable than the best complete parse.
    pub prune: bool,
}

impl Default for EnumerationLimits {
    fn default() -> Self {
        EnumerationLimits { max_states: 50_000_000, prune: true }
    }
}

/// Depth-first enumeration of every legal derivation, returning the most
/// probable one. With `prune` set, subtrees whose score has fallen below the
/// best complete parse are skipped.
pub fn exhaustive_parse(
    models: &ModelSet,
    words: &[&str],
    limits: &EnumerationLimits,
) -> Result<SearchResult, SearchError> {
    check_input(words, usize::MAX)?;
    let ids = models.word_ids(words);
    let start = DerivationState::new(&ids).map_err(|_| SearchError::EmptyInput)?;
    let mut best = Best::new();
    let mut visited = 0u64;
    let mut stack = vec![Hypothesis::initial(start)];
    while let Some(h) = stack.pop() {
        visited += 1;
        if visited > limits.max_states {
            return Err(SearchError::EnumerationBudgetExceeded { budget: limits.max_states });
        }
        if h.state.is_complete() {
            best.offer(&h);
            continue;
        }
        if limits.prune && !best.admits(h.logprob) {
            continue;
        }
        let Ok(mut children) = h.children(models) else { continue };
        // most probable first; pushed in reverse so it is popped first
        children.sort_by(|a, b| a.logprob.total_cmp(&b.logprob).then_with(|| b.path_last().cmp(&a.path_last())));
        stack.extend(children);
    }
    Ok(best.into_result(models, words, SearchStatus::Optimal, visited))
}

impl Hypothesis {
    fn path_last(&self) -> Option<Action> {
        self.path.as_ref().map(|l| l.action)
    }
}
