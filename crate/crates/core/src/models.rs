//! The tagging, extension and labelling models, their question schemas, the
//! training pipeline and action scoring.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classtree::{
    build_class_tree, BigramCounts, ClassTree, ClassTreeError, DEFAULT_WINDOW, SYMBOL_BIT_BUDGET, WORD_BIT_BUDGET,
};
use crate::corpus::{build_vocabularies, CorpusError, RawTree, Vocabularies};
use crate::derivation::{
    encode, slot_kinds, Action, DerivationContext, DerivationError, DerivationEvent, DerivationState, Extension,
    ModelKind, SlotKind,
};
use crate::dtm::{
    grow, smooth, CodeTable, DtmError, GrowConfig, Observation, QuestionSet, SlotSpec, SmoothConfig, SmoothedModel,
};
use crate::headfinder::HeadRuleTable;

pub const SCHEMA_VERSION: u32 = 1;

/// Thresholds for "at most t" questions on child counts and span widths.
pub const COUNT_THRESHOLDS: [u32; 11] = [1, 2, 3, 4, 6, 8, 12, 16, 24, 32, 40];

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("sentence {sentence}: {source}")]
    Derivation { sentence: usize, source: DerivationError },
    #[error(transparent)]
    Dtm(#[from] DtmError),
    #[error(transparent)]
    ClassTree(#[from] ClassTreeError),
    #[error("no trees to grow from")]
    EmptyGrowSet,
}

impl Observation for DerivationEvent {
    fn history(&self) -> &[Option<u32>] {
        &self.history
    }

    fn future(&self) -> u32 {
        self.future
    }
}

/// Binary codes for words, tags and labels. The label tree has one extra item,
/// the tagged-leaf marker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTrees {
    pub words: ClassTree,
    pub tags: ClassTree,
    pub labels: ClassTree,
}

fn label_item(ctx_labels: u32, t: &RawTree, vocab: &Vocabularies) -> Option<u32> {
    match t {
        RawTree::Leaf { .. } => Some(ctx_labels),
        RawTree::Node { label, .. } => vocab.label_id(label),
    }
}

/// Clusters words and tags by their left-to-right bigrams, and labels by
/// sibling adjacency plus parent-child pairs.
pub fn build_class_trees(trees: &[RawTree], vocab: &Vocabularies, window: usize) -> Result<ClassTrees, ClassTreeError> {
    let word_seqs: Vec<Vec<u32>> = trees.iter().map(|t| t.words().iter().map(|w| vocab.word_id(w)).collect()).collect();
    let tag_seqs: Vec<Vec<u32>> =
        trees.iter().map(|t| t.tags().iter().filter_map(|g| vocab.tag_id(g)).collect()).collect();
    let word_bigrams = BigramCounts::from_sequences(word_seqs.iter().map(Vec::as_slice));
    let tag_bigrams = BigramCounts::from_sequences(tag_seqs.iter().map(Vec::as_slice));

    let n_labels = vocab.labels.len() as u32;
    let mut label_bigrams = BigramCounts::new();
    fn walk(t: &RawTree, vocab: &Vocabularies, n_labels: u32, out: &mut BigramCounts) {
        if let RawTree::Node { children, .. } = t {
            let me = label_item(n_labels, t, vocab);
            let kids: Vec<Option<u32>> = children.iter().map(|c| label_item(n_labels, c, vocab)).collect();
            for k in &kids {
                if let (Some(p), Some(c)) = (me, k) {
                    out.add(p, *c, 1.0);
                }
            }
            for w in kids.windows(2) {
                if let (Some(a), Some(b)) = (w[0], w[1]) {
                    out.add(a, b, 1.0);
                }
            }
            for c in children {
                walk(c, vocab, n_labels, out);
            }
        }
    }
    for t in trees {
        walk(t, vocab, n_labels, &mut label_bigrams);
    }

    Ok(ClassTrees {
        words: build_class_tree(vocab.words.len(), &word_bigrams, WORD_BIT_BUDGET, window)?,
        tags: build_class_tree(vocab.tags.len(), &tag_bigrams, SYMBOL_BIT_BUDGET, window)?,
        labels: build_class_tree(vocab.labels.len() + 1, &label_bigrams, SYMBOL_BIT_BUDGET, window)?,
    })
}

/// The question inventory for one model's history layout.
pub fn question_set(kind: ModelKind, classes: &ClassTrees) -> QuestionSet {
    let table = |t: &ClassTree| CodeTable { codes: t.codes().to_vec(), width: t.effective_width() };
    let tables = vec![
        table(&classes.words),
        table(&classes.tags),
        table(&classes.labels),
        CodeTable { codes: Extension::ALL.iter().map(|e| e.id()).collect(), width: 3 },
    ];
    let slots = slot_kinds(kind)
        .into_iter()
        .map(|k| match k {
            SlotKind::Word => SlotSpec::Coded { table: 0 },
            SlotKind::Tag => SlotSpec::Coded { table: 1 },
            SlotKind::Label => SlotSpec::Coded { table: 2 },
            SlotKind::Extension => SlotSpec::Coded { table: 3 },
            SlotKind::Count => SlotSpec::Numeric { thresholds: COUNT_THRESHOLDS.to_vec() },
        })
        .collect();
    QuestionSet::new(tables, slots)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub grow: GrowConfig,
    pub smooth: SmoothConfig,
    /// Rescale each decision's distribution over its legal values.
    pub renormalize: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounts {
    pub tag: usize,
    pub extension: usize,
    pub label: usize,
}

impl EventCounts {
    fn of(events: &RoutedEvents) -> Self {
        EventCounts { tag: events.tag.len(), extension: events.extension.len(), label: events.label.len() }
    }

    pub fn total(&self) -> usize {
        self.tag + self.extension + self.label
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingStats {
    pub grow_sentences: usize,
    pub smooth_sentences: usize,
    pub grow_events: EventCounts,
    pub smooth_events: EventCounts,
}

/// Events split by the model they train.
#[derive(Debug, Default, Clone)]
pub struct RoutedEvents {
    pub tag: Vec<DerivationEvent>,
    pub extension: Vec<DerivationEvent>,
    pub label: Vec<DerivationEvent>,
}

impl RoutedEvents {
    pub fn get(&self, kind: ModelKind) -> &[DerivationEvent] {
        match kind {
            ModelKind::Tag => &self.tag,
            ModelKind::Extension => &self.extension,
            ModelKind::Label => &self.label,
        }
    }
}

/// Encodes every tree and routes each event to its model.
pub fn extract_events(ctx: &DerivationContext, trees: &[RawTree]) -> Result<RoutedEvents, TrainError> {
    let per_tree: Vec<Vec<DerivationEvent>> = trees
        .par_iter()
        .enumerate()
        .map(|(i, t)| encode(ctx, t).map_err(|source| TrainError::Derivation { sentence: i, source }))
        .collect::<Result<_, _>>()?;
    let mut out = RoutedEvents::default();
    for e in per_tree.into_iter().flatten() {
        match e.kind {
            ModelKind::Tag => out.tag.push(e),
            ModelKind::Extension => out.extension.push(e),
            ModelKind::Label => out.label.push(e),
        }
    }
    Ok(out)
}

/// The three trained models with everything needed to score derivations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSet {
    pub ctx: DerivationContext,
    pub classes: ClassTrees,
    pub tag: SmoothedModel,
    pub extension: SmoothedModel,
    pub label: SmoothedModel,
    pub config: ModelConfig,
    pub stats: TrainingStats,
}

/// Trains with vocabularies and class trees built from `grow ∪ smooth`.
pub fn train(
    grow_trees: &[RawTree],
    smooth_trees: &[RawTree],
    head_rules: HeadRuleTable,
    unk_threshold: u64,
    max_unary: usize,
    config: &ModelConfig,
) -> Result<ModelSet, TrainError> {
    let all: Vec<RawTree> = grow_trees.iter().chain(smooth_trees).cloned().collect();
    let vocab = build_vocabularies(&all, unk_threshold)?;
    let classes = build_class_trees(&all, &vocab, DEFAULT_WINDOW)?;
    let ctx = DerivationContext::new(vocab, head_rules, max_unary);
    train_with(grow_trees, smooth_trees, ctx, classes, config)
}

/// Trains against fixed vocabularies and class trees.
pub fn train_with(
    grow_trees: &[RawTree],
    smooth_trees: &[RawTree],
    ctx: DerivationContext,
    classes: ClassTrees,
    config: &ModelConfig,
) -> Result<ModelSet, TrainError> {
    if grow_trees.is_empty() {
        return Err(TrainError::EmptyGrowSet);
    }
    let grow_events = extract_events(&ctx, grow_trees)?;
    let smooth_events = extract_events(&ctx, smooth_trees).map_err(|e| match e {
        TrainError::Derivation { sentence, source } => {
            TrainError::Derivation { sentence: sentence + grow_trees.len(), source }
        }
        e => e,
    })?;

    let fit = |kind: ModelKind| -> Result<SmoothedModel, TrainError> {
        let qs = question_set(kind, &classes);
        let events = grow_events.get(kind);
        let tree = grow(events, &qs, ctx.future_size(kind), &config.grow)?;
        let model = smooth(tree, qs, smooth_events.get(kind), &config.smooth)?;
        log::info!(
            "{kind} model: {} events, {} leaves, depth {}, held-out LL {:?}",
            events.len(),
            model.tree().leaf_count(),
            model.tree().depth(),
            model.report().log_likelihoods.last()
        );
        Ok(model)
    };
    let (tag, (extension, label)) =
        rayon::join(|| fit(ModelKind::Tag), || rayon::join(|| fit(ModelKind::Extension), || fit(ModelKind::Label)));

    let stats = TrainingStats {
        grow_sentences: grow_trees.len(),
        smooth_sentences: smooth_trees.len(),
        grow_events: EventCounts::of(&grow_events),
        smooth_events: EventCounts::of(&smooth_events),
    };
    Ok(ModelSet { ctx, classes, tag: tag?, extension: extension?, label: label?, config: *config, stats })
}

impl ModelSet {
    pub fn model(&self, kind: ModelKind) -> &SmoothedModel {
        match kind {
            ModelKind::Tag => &self.tag,
            ModelKind::Extension => &self.extension,
            ModelKind::Label => &self.label,
        }
    }

    /// The pending decision's kind and `(value, probability)` for every legal
    /// value, in ascending value order.
    pub fn legal_distribution(&self, state: &DerivationState) -> Result<(ModelKind, Vec<(u32, f64)>), DerivationError> {
        let (kind, values) = state.legal_actions(&self.ctx)?;
        let history = state.extract_history(&self.ctx, kind);
        let dist = self.model(kind).predict(&history).expect("history layout matches the model");
        let mut out: Vec<(u32, f64)> = values.into_iter().map(|v| (v, dist[v as usize])).collect();
        if self.config.renormalize {
            let z: f64 = out.iter().map(|(_, p)| p).sum();
            out.iter_mut().for_each(|(_, p)| *p /= z);
        }
        Ok((kind, out))
    }

    /// Probability of taking `action` in `state`.
    pub fn score_action(&self, state: &DerivationState, action: Action) -> Result<f64, DerivationError> {
        let (kind, dist) = self.legal_distribution(state)?;
        if kind != action.kind {
            return Err(DerivationError::IllegalAction { kind: action.kind, value: action.value });
        }
        dist.iter()
            .find(|(v, _)| *v == action.value)
            .map(|&(_, p)| p)
            .ok_or(DerivationError::IllegalAction { kind: action.kind, value: action.value })
    }

    /// Log-probability of a complete tree: the sum of its decisions' log scores.
    pub fn tree_logprob(&self, tree: &RawTree) -> Result<f64, DerivationError> {
        let mut lp = 0.0;
        let mut err = None;
        crate::derivation::walk_derivation(&self.ctx, tree, |s, a| match self.score_action(s, a) {
            Ok(p) => lp += p.ln(),
            Err(e) => {
                err.get_or_insert(e);
            }
        })?;
        match err {
            Some(e) => Err(e),
            None => Ok(lp),
        }
    }

    /// Word ids for parsing; unseen words map to the unknown-word id.
    pub fn word_ids(&self, words: &[&str]) -> Vec<u32> {
        self.ctx.word_ids(words)
    }
}
