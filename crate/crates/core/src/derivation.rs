//! The derivation state machine.
//!
//! A parse tree is built bottom-up, left to right, one feature at a time. Every
//! node carries four features: head word, tag, label and extension. Leaves get
//! a tag then an extension; internal nodes get a label then an extension. The
//! extension records how a node attaches to its parent:
//!
//! * `right`: first child of a constituent
//! * `left`: last child of a constituent
//! * `up`: a middle child
//! * `unary`: the only child
//! * `root`: the root of the tree
//!
//! Assigning `left` closes the constituent: the decision node together with the
//! pending `up` nodes and the one `right` node to its left become the children
//! of a new, unlabelled node. Assigning `unary` wraps the node in a new parent.
//!
//! The next decision always concerns the leftmost active node with an unset
//! feature, so every tree has exactly one decision sequence.

use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{RawTree, Vocabularies};
use crate::headfinder::HeadRuleTable;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DerivationError {
    #[error("no legal action in this state")]
    DeadEnd,
    #[error("action {kind}={value} is not legal in this state")]
    IllegalAction { kind: ModelKind, value: u32 },
    #[error("unary chain longer than the cap of {max}")]
    UnaryChainTooLong { max: usize },
    #[error("tree cannot be derived left to right")]
    NonContiguousTree,
    #[error("unknown {kind} `{symbol}`")]
    UnknownSymbol { kind: &'static str, symbol: String },
    #[error("a tree needs a labelled root")]
    NotATree,
    #[error("derivation is already complete")]
    Complete,
    #[error("sentence is empty")]
    EmptySentence,
}

pub const DEFAULT_MAX_UNARY: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Extension {
    Right = 0,
    Left = 1,
    Up = 2,
    Unary = 3,
    Root = 4,
}

impl Extension {
    pub const ALL: [Extension; 5] =
        [Extension::Right, Extension::Left, Extension::Up, Extension::Unary, Extension::Root];

    pub fn id(self) -> u32 {
        self as u32
    }

    pub fn from_id(id: u32) -> Option<Extension> {
        Self::ALL.get(id as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Extension::Right => "right",
            Extension::Left => "left",
            Extension::Up => "up",
            Extension::Unary => "unary",
            Extension::Root => "root",
        }
    }
}

impl fmt::Display for Extension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which of the three decision models a decision belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    Tag,
    Extension,
    Label,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Tag, ModelKind::Extension, ModelKind::Label];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Tag => "tag",
            ModelKind::Extension => "extension",
            ModelKind::Label => "label",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Action {
    pub kind: ModelKind,
    pub value: u32,
}

impl Action {
    pub fn new(kind: ModelKind, value: u32) -> Self {
        Action { kind, value }
    }
}

/// Symbol inventories, head rules and the unary cap a derivation runs against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivationContext {
    pub vocab: Vocabularies,
    pub head_rules: HeadRuleTable,
    pub max_unary: usize,
}

impl DerivationContext {
    pub fn new(vocab: Vocabularies, head_rules: HeadRuleTable, max_unary: usize) -> Self {
        DerivationContext { vocab, head_rules, max_unary }
    }

    pub fn n_tags(&self) -> usize {
        self.vocab.tags.len()
    }

    pub fn n_labels(&self) -> usize {
        self.vocab.labels.len()
    }

    /// Label-slot value standing for "this node is a tagged leaf".
    pub fn tag_label(&self) -> u32 {
        self.n_labels() as u32
    }

    pub fn future_size(&self, kind: ModelKind) -> usize {
        match kind {
            ModelKind::Tag => self.n_tags(),
            ModelKind::Extension => Extension::ALL.len(),
            ModelKind::Label => self.n_labels(),
        }
    }

    pub fn word_ids(&self, words: &[&str]) -> Vec<u32> {
        words.iter().map(|w| self.vocab.word_id(w)).collect()
    }
}

/// One node of a (partial) derivation. Nodes are immutable and shared between
/// states; setting a feature makes a new node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub word: Option<u32>,
    pub tag: Option<u32>,
    pub label: Option<u32>,
    pub extension: Option<Extension>,
    /// First and last word index covered, inclusive.
    pub span: (u16, u16),
    pub children: Vec<Rc<Node>>,
    /// Number of unary edges directly below this node.
    pub unary_chain: u8,
    /// Index of the head child, once labelled.
    pub head: Option<u8>,
}

impl Node {
    fn leaf(pos: u16, word: u32) -> Self {
        Node {
            word: Some(word),
            tag: None,
            label: None,
            extension: None,
            span: (pos, pos),
            children: Vec::new(),
            unary_chain: 0,
            head: None,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn width(&self) -> u32 {
        (self.span.1 - self.span.0) as u32 + 1
    }

    /// The feature still awaiting a decision, if any.
    pub fn pending_kind(&self) -> Option<ModelKind> {
        if self.is_leaf() {
            if self.tag.is_none() {
                return Some(ModelKind::Tag);
            }
        } else if self.label.is_none() {
            return Some(ModelKind::Label);
        }
        if self.extension.is_none() {
            Some(ModelKind::Extension)
        } else {
            None
        }
    }

    fn leaf_at(&self, pos: u16) -> &Node {
        let mut n = self;
        while !n.is_leaf() {
            n = n.children.iter().find(|c| c.span.0 <= pos && pos <= c.span.1).expect("position inside node span");
        }
        n
    }
}

/// Attachment status of an active node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pending {
    AwaitingFeatures,
    OpenRight,
    OpenUp,
    Closed,
}

#[derive(Debug, Clone)]
pub struct DerivationState {
    words: Rc<[u32]>,
    active: Vec<Rc<Node>>,
    cursor: usize,
    complete: bool,
}

impl DerivationState {
    pub fn new(words: &[u32]) -> Result<Self, DerivationError> {
        if words.is_empty() {
            return Err(DerivationError::EmptySentence);
        }
        let active = words.iter().enumerate().map(|(i, &w)| Rc::new(Node::leaf(i as u16, w))).collect();
        Ok(DerivationState { words: words.into(), active, cursor: 0, complete: false })
    }

    pub fn words(&self) -> &[u32] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn active(&self) -> &[Rc<Node>] {
        &self.active
    }

    pub fn is_complete(&self) -> bool {
        self.complete
    }

    /// Index into [`active`](Self::active) of the node being decided.
    pub fn cursor(&self) -> Option<usize> {
        (!self.complete).then_some(self.cursor)
    }

    pub fn decision_node(&self) -> Option<&Rc<Node>> {
        self.cursor().map(|c| &self.active[c])
    }

    pub fn decision_kind(&self) -> Option<ModelKind> {
        self.decision_node().and_then(|n| n.pending_kind())
    }

    pub fn pending(&self, i: usize) -> Pending {
        match self.active[i].extension {
            None => Pending::AwaitingFeatures,
            Some(Extension::Right) => Pending::OpenRight,
            Some(Extension::Up) => Pending::OpenUp,
            Some(_) => Pending::Closed,
        }
    }

    pub fn root(&self) -> Option<&Rc<Node>> {
        self.complete.then(|| &self.active[0])
    }

    /// Decision kind and the candidate values allowed in this state.
    pub fn legal_actions(&self, ctx: &DerivationContext) -> Result<(ModelKind, Vec<u32>), DerivationError> {
        if self.complete {
            return Err(DerivationError::Complete);
        }
        let node = &self.active[self.cursor];
        let kind = node.pending_kind().ok_or(DerivationError::DeadEnd)?;
        let values: Vec<u32> = match kind {
            ModelKind::Tag => (0..ctx.n_tags() as u32).collect(),
            ModelKind::Label => (0..ctx.n_labels() as u32).collect(),
            ModelKind::Extension => self.legal_extensions(ctx).into_iter().map(Extension::id).collect(),
        };
        if values.is_empty() {
            return Err(DerivationError::DeadEnd);
        }
        Ok((kind, values))
    }

    fn legal_extensions(&self, ctx: &DerivationContext) -> Vec<Extension> {
        let node = &self.active[self.cursor];
        let n = self.words.len() as u16;
        let full = node.span == (0, n - 1);
        let at_end = node.span.1 == n - 1;
        // every active node left of the cursor is open-right or open-up
        let open_left = self.cursor > 0;
        let mut out = Vec::with_capacity(5);
        if !full && !at_end {
            out.push(Extension::Right);
        }
        if open_left {
            out.push(Extension::Left);
            if !at_end {
                out.push(Extension::Up);
            }
        }
        if (node.unary_chain as usize) < ctx.max_unary {
            out.push(Extension::Unary);
        }
        if full && !node.is_leaf() {
            out.push(Extension::Root);
        }
        out
    }

    pub fn is_legal(&self, ctx: &DerivationContext, action: Action) -> bool {
        match self.legal_actions(ctx) {
            Ok((kind, values)) => kind == action.kind && values.contains(&action.value),
            Err(_) => false,
        }
    }

    /// The state after `action`. Fails unless the action is legal.
    pub fn apply(&self, ctx: &DerivationContext, action: Action) -> Result<DerivationState, DerivationError> {
        if !self.is_legal(ctx, action) {
            return Err(DerivationError::IllegalAction { kind: action.kind, value: action.value });
        }
        Ok(self.apply_unchecked(ctx, action))
    }

    /// [`apply`](Self::apply) without the legality check. The action must be
    /// one returned by [`legal_actions`](Self::legal_actions).
    pub fn apply_unchecked(&self, ctx: &DerivationContext, action: Action) -> DerivationState {
        let mut next = self.clone();
        let i = self.cursor;
        let mut node = (*self.active[i]).clone();
        match action.kind {
            ModelKind::Tag => {
                node.tag = Some(action.value);
                next.active[i] = Rc::new(node);
            }
            ModelKind::Label => {
                node.label = Some(action.value);
                let label = ctx.vocab.labels.symbol(action.value);
                let syms: Vec<&str> = node
                    .children
                    .iter()
                    .map(|c| match (c.is_leaf(), c.tag, c.label) {
                        (true, Some(t), _) => ctx.vocab.tags.symbol(t),
                        (false, _, Some(l)) => ctx.vocab.labels.symbol(l),
                        _ => "",
                    })
                    .collect();
                let h = ctx.head_rules.head_child(label, &syms);
                node.head = Some(h as u8);
                node.word = node.children[h].word;
                node.tag = node.children[h].tag;
                next.active[i] = Rc::new(node);
            }
            ModelKind::Extension => {
                let ext = Extension::from_id(action.value).expect("extension id");
                node.extension = Some(ext);
                let node = Rc::new(node);
                match ext {
                    Extension::Right | Extension::Up => {
                        next.active[i] = node;
                        next.cursor = i + 1;
                    }
                    Extension::Unary => {
                        let parent = Node {
                            word: None,
                            tag: None,
                            label: None,
                            extension: None,
                            span: node.span,
                            unary_chain: node.unary_chain + 1,
                            children: vec![node],
                            head: None,
                        };
                        next.active[i] = Rc::new(parent);
                    }
                    Extension::Left => {
                        let mut j = i - 1;
                        while self.active[j].extension == Some(Extension::Up) {
                            j -= 1;
                        }
                        debug_assert_eq!(self.active[j].extension, Some(Extension::Right));
                        let mut children: Vec<Rc<Node>> = self.active[j..i].to_vec();
                        children.push(node);
                        let parent = Node {
                            word: None,
                            tag: None,
                            label: None,
                            extension: None,
                            span: (children[0].span.0, children[children.len() - 1].span.1),
                            unary_chain: 0,
                            children,
                            head: None,
                        };
                        next.active.splice(j..=i, std::iter::once(Rc::new(parent)));
                        next.cursor = j;
                    }
                    Extension::Root => {
                        next.active[i] = node;
                        next.complete = true;
                    }
                }
            }
        }
        next
    }

    /// History slot values for the pending decision, laid out per
    /// [`slot_kinds`].
    pub fn extract_history(&self, ctx: &DerivationContext, kind: ModelKind) -> Vec<Option<u32>> {
        let mut h = Vec::with_capacity(slot_count(kind));
        let c = self.cursor.min(self.active.len() - 1);
        let cur = &self.active[c];
        let at = |k: isize| -> Option<&Node> {
            let idx = c as isize + k;
            (idx >= 0 && (idx as usize) < self.active.len()).then(|| &*self.active[idx as usize])
        };
        let kids = &cur.children;
        let child = |k: usize, from_right: bool| -> Option<&Node> {
            if k >= kids.len() {
                None
            } else if from_right {
                Some(&*kids[kids.len() - 1 - k])
            } else {
                Some(&*kids[k])
            }
        };
        let queried = [
            Some(&**cur),
            at(-1),
            at(-2),
            at(1),
            at(2),
            child(0, false),
            child(1, false),
            child(0, true),
            child(1, true),
        ];
        for n in queried {
            push_node_features(&mut h, ctx, n);
        }
        if kind == ModelKind::Tag {
            let pos = cur.span.0;
            for back in 1..=2u16 {
                let prev = pos.checked_sub(back).map(|p| self.leaf_at_position(p));
                h.push(prev.and_then(|l| l.word));
                h.push(prev.and_then(|l| l.tag));
            }
        }
        debug_assert_eq!(h.len(), slot_count(kind));
        h
    }

    fn leaf_at_position(&self, pos: u16) -> &Node {
        let n =
            self.active.iter().find(|n| n.span.0 <= pos && pos <= n.span.1).expect("active nodes cover the sentence");
        n.leaf_at(pos)
    }

    /// The finished tree, using `surface` for the leaf words.
    pub fn to_raw_tree(&self, ctx: &DerivationContext, surface: &[&str]) -> Option<RawTree> {
        self.root().map(|r| node_to_raw(r, ctx, surface))
    }
}

fn node_to_raw(n: &Node, ctx: &DerivationContext, surface: &[&str]) -> RawTree {
    if n.is_leaf() {
        let tag = n.tag.map(|t| ctx.vocab.tags.symbol(t)).unwrap_or("");
        RawTree::leaf(surface[n.span.0 as usize], tag)
    } else {
        let label = n.label.map(|l| ctx.vocab.labels.symbol(l)).unwrap_or("");
        RawTree::node(label, n.children.iter().map(|c| node_to_raw(c, ctx, surface)).collect())
    }
}

fn push_node_features(h: &mut Vec<Option<u32>>, ctx: &DerivationContext, n: Option<&Node>) {
    match n {
        None => h.extend([None; FEATURES_PER_NODE]),
        Some(n) => {
            let label = if n.is_leaf() { n.tag.map(|_| ctx.tag_label()) } else { n.label };
            h.push(n.word);
            h.push(n.tag);
            h.push(label);
            h.push(n.extension.map(Extension::id));
            h.push(Some(n.children.len() as u32));
            h.push(Some(n.width()));
        }
    }
}

/// Value type of one history slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SlotKind {
    Word,
    Tag,
    Label,
    Extension,
    Count,
}

const FEATURES_PER_NODE: usize = 6;
const NODE_FEATURES: [(&str, SlotKind); FEATURES_PER_NODE] = [
    ("word", SlotKind::Word),
    ("tag", SlotKind::Tag),
    ("label", SlotKind::Label),
    ("ext", SlotKind::Extension),
    ("nchildren", SlotKind::Count),
    ("span", SlotKind::Count),
];
const QUERIED_NODES: [&str; 9] =
    ["cur", "left1", "left2", "right1", "right2", "child.l1", "child.l2", "child.r1", "child.r2"];
const TAG_EXTRAS: [(&str, SlotKind); 4] = [
    ("prev1.word", SlotKind::Word),
    ("prev1.tag", SlotKind::Tag),
    ("prev2.word", SlotKind::Word),
    ("prev2.tag", SlotKind::Tag),
];

pub fn slot_count(kind: ModelKind) -> usize {
    QUERIED_NODES.len() * FEATURES_PER_NODE + if kind == ModelKind::Tag { TAG_EXTRAS.len() } else { 0 }
}

/// Value type of every history slot of `kind`, in layout order.
pub fn slot_kinds(kind: ModelKind) -> Vec<SlotKind> {
    slot_layout(kind).into_iter().map(|(_, k)| k).collect()
}

/// Printable slot names, in layout order.
pub fn slot_names(kind: ModelKind) -> Vec<String> {
    slot_layout(kind).into_iter().map(|(n, _)| n).collect()
}

fn slot_layout(kind: ModelKind) -> Vec<(String, SlotKind)> {
    let mut out = Vec::new();
    for node in QUERIED_NODES {
        for (feat, k) in NODE_FEATURES {
            out.push((format!("{node}.{feat}"), k));
        }
    }
    if kind == ModelKind::Tag {
        out.extend(TAG_EXTRAS.iter().map(|&(n, k)| (n.to_string(), k)));
    }
    out
}

/// One decision: the history at a state and the value chosen there.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DerivationEvent {
    pub kind: ModelKind,
    pub history: Vec<Option<u32>>,
    pub future: u32,
}

impl DerivationEvent {
    /// `kind TAB future TAB slot=value,...`
    pub fn dump_line(&self) -> String {
        let names = slot_names(self.kind);
        let slots: Vec<String> = names
            .iter()
            .zip(&self.history)
            .map(|(n, v)| match v {
                Some(v) => format!("{n}={v}"),
                None => format!("{n}=NULL"),
            })
            .collect();
        format!("{}\t{}\t{}", self.kind, self.future, slots.join(","))
    }
}

/// Gold features of one tree node, keyed by `(first, last, unary level)`.
struct GoldTree {
    words: Vec<u32>,
    nodes: HashMap<(u16, u16, u8), (Option<u32>, Extension)>,
}

fn gold_tree(ctx: &DerivationContext, tree: &RawTree) -> Result<GoldTree, DerivationError> {
    if tree.is_leaf() {
        return Err(DerivationError::NotATree);
    }
    let mut g = GoldTree { words: Vec::new(), nodes: HashMap::new() };

    fn walk(
        ctx: &DerivationContext,
        t: &RawTree,
        ext: Extension,
        g: &mut GoldTree,
    ) -> Result<(u16, u16, u8), DerivationError> {
        match t {
            RawTree::Leaf { word, tag } => {
                let pos = g.words.len() as u16;
                g.words.push(ctx.vocab.word_id(word));
                let tag = ctx
                    .vocab
                    .tag_id(tag)
                    .ok_or_else(|| DerivationError::UnknownSymbol { kind: "tag", symbol: tag.clone() })?;
                g.nodes.insert((pos, pos, 0), (Some(tag), ext));
                Ok((pos, pos, 0))
            }
            RawTree::Node { label, children } => {
                let id = ctx
                    .vocab
                    .label_id(label)
                    .ok_or_else(|| DerivationError::UnknownSymbol { kind: "label", symbol: label.clone() })?;
                let n = children.len();
                let mut first = None;
                let mut last = (0, 0, 0);
                for (k, c) in children.iter().enumerate() {
                    let e = if n == 1 {
                        Extension::Unary
                    } else if k == 0 {
                        Extension::Right
                    } else if k == n - 1 {
                        Extension::Left
                    } else {
                        Extension::Up
                    };
                    last = walk(ctx, c, e, g)?;
                    first.get_or_insert(last);
                }
                let first = first.ok_or(DerivationError::NonContiguousTree)?;
                let level = if n == 1 { last.2 + 1 } else { 0 };
                let key = (first.0, last.1, level);
                g.nodes.insert(key, (Some(id), ext));
                Ok(key)
            }
        }
    }
    walk(ctx, tree, Extension::Root, &mut g)?;
    Ok(g)
}

/// Walks the unique derivation of `tree`, calling `visit` with each state and
/// the gold action taken from it. Returns the final state.
pub fn walk_derivation(
    ctx: &DerivationContext,
    tree: &RawTree,
    mut visit: impl FnMut(&DerivationState, Action),
) -> Result<DerivationState, DerivationError> {
    let gold = gold_tree(ctx, tree)?;
    let mut state = DerivationState::new(&gold.words)?;
    while !state.is_complete() {
        let (kind, legal) = state.legal_actions(ctx)?;
        let node = state.decision_node().unwrap();
        let (sym, ext) = gold
            .nodes
            .get(&(node.span.0, node.span.1, node.unary_chain))
            .copied()
            .ok_or(DerivationError::NonContiguousTree)?;
        let value = match kind {
            ModelKind::Tag | ModelKind::Label => sym.ok_or(DerivationError::NonContiguousTree)?,
            ModelKind::Extension => ext.id(),
        };
        if !legal.contains(&value) {
            if kind == ModelKind::Extension && value == Extension::Unary.id() {
                return Err(DerivationError::UnaryChainTooLong { max: ctx.max_unary });
            }
            return Err(DerivationError::IllegalAction { kind, value });
        }
        let action = Action::new(kind, value);
        visit(&state, action);
        state = state.apply_unchecked(ctx, action);
    }
    Ok(state)
}

/// The gold decision sequence of `tree`.
pub fn gold_actions(ctx: &DerivationContext, tree: &RawTree) -> Result<Vec<Action>, DerivationError> {
    let mut out = Vec::new();
    walk_derivation(ctx, tree, |_, a| out.push(a))?;
    Ok(out)
}

/// The gold event sequence of `tree`: one event per decision.
pub fn encode(ctx: &DerivationContext, tree: &RawTree) -> Result<Vec<DerivationEvent>, DerivationError> {
    let mut out = Vec::new();
    walk_derivation(ctx, tree, |s, a| {
        out.push(DerivationEvent { kind: a.kind, history: s.extract_history(ctx, a.kind), future: a.value })
    })?;
    Ok(out)
}

/// Applies `actions` from the initial state of `words`.
pub fn replay(ctx: &DerivationContext, words: &[u32], actions: &[Action]) -> Result<DerivationState, DerivationError> {
    let mut state = DerivationState::new(words)?;
    for &a in actions {
        state = state.apply(ctx, a)?;
    }
    Ok(state)
}

/// Rebuilds a tree from its event sequence.
pub fn decode(
    ctx: &DerivationContext,
    surface: &[&str],
    events: &[DerivationEvent],
) -> Result<RawTree, DerivationError> {
    let words = ctx.word_ids(surface);
    let actions: Vec<Action> = events.iter().map(|e| Action::new(e.kind, e.future)).collect();
    let state = replay(ctx, &words, &actions)?;
    state.to_raw_tree(ctx, surface).ok_or(DerivationError::DeadEnd)
}
