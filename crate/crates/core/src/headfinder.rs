//! Deterministic head-child lookup.
//!
//! Rule file format, one rule per line:
//!
//! ```text
//! # parent  direction  priority children...
//! NP        right      NN NNS NNP NP
//! VP        left       VBD VBZ VB VP
//! *         right
//! ```
//!
//! `direction` is `left` (search from the left) or `right` (search from the
//! right). For each priority symbol in turn the children are scanned in the
//! search direction and the first match wins; when nothing matches the first
//! child in the search direction is the head. `*` matches any parent without
//! its own rule. Lookup falls back to the rightmost child.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HeadRuleError {
    #[error("line {line}: {reason}")]
    BadRuleSyntax { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    FromLeft,
    FromRight,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::FromLeft => "left",
            Direction::FromRight => "right",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadRule {
    /// Parent label, or `*`.
    pub parent: String,
    pub direction: Direction,
    pub priority: Vec<String>,
}

impl HeadRule {
    fn pick(&self, children: &[&str]) -> usize {
        let n = children.len();
        let order: Box<dyn Fn(usize) -> usize> = match self.direction {
            Direction::FromLeft => Box::new(|k| k),
            Direction::FromRight => Box::new(move |k| n - 1 - k),
        };
        for want in &self.priority {
            for k in 0..n {
                let i = order(k);
                if children[i] == want {
                    return i;
                }
            }
        }
        order(0)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "Vec<HeadRule>", into = "Vec<HeadRule>")]
pub struct HeadRuleTable {
    /// Rules in file order, the default rule last.
    rules: Vec<HeadRule>,
    by_parent: HashMap<String, usize>,
    warnings: Vec<String>,
}

impl From<Vec<HeadRule>> for HeadRuleTable {
    fn from(rules: Vec<HeadRule>) -> Self {
        let mut by_parent = HashMap::new();
        for (i, r) in rules.iter().enumerate().take(rules.len().saturating_sub(1)) {
            by_parent.insert(r.parent.clone(), i);
        }
        HeadRuleTable { rules, by_parent, warnings: Vec::new() }
    }
}

impl PartialEq for HeadRuleTable {
    fn eq(&self, other: &Self) -> bool {
        self.rules == other.rules
    }
}

impl From<HeadRuleTable> for Vec<HeadRule> {
    fn from(t: HeadRuleTable) -> Self {
        t.rules
    }
}

impl Default for HeadRuleTable {
    fn default() -> Self {
        HeadRuleTable::from(vec![Self::default_rule()])
    }
}

impl HeadRuleTable {
    fn default_rule() -> HeadRule {
        HeadRule { parent: "*".into(), direction: Direction::FromRight, priority: Vec::new() }
    }

    pub fn parse(text: &str) -> Result<Self, HeadRuleError> {
        let mut rules = Vec::new();
        let mut warnings = Vec::new();
        let mut seen: HashMap<String, usize> = HashMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let parent = fields.next().unwrap().to_string();
            let direction = match fields.next() {
                Some("left") | Some("from-left") => Direction::FromLeft,
                Some("right") | Some("from-right") => Direction::FromRight,
                Some(other) => {
                    return Err(HeadRuleError::BadRuleSyntax {
                        line: lineno + 1,
                        reason: format!("direction must be `left` or `right`, got `{other}`"),
                    })
                }
                None => {
                    return Err(HeadRuleError::BadRuleSyntax { line: lineno + 1, reason: "missing direction".into() })
                }
            };
            let priority = fields.map(str::to_string).collect();
            if let Some(prev) = seen.insert(parent.clone(), lineno + 1) {
                let w = format!("line {}: rule for `{parent}` shadows the one on line {prev}", lineno + 1);
                log::warn!("{w}");
                warnings.push(w);
            }
            rules.push(HeadRule { parent, direction, priority });
        }
        rules.push(Self::default_rule());
        let mut table = HeadRuleTable::from(rules);
        table.warnings = warnings;
        Ok(table)
    }

    /// Number of rules including the built-in default.
    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn rules(&self) -> &[HeadRule] {
        &self.rules
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn rule_for(&self, parent: &str) -> &HeadRule {
        let i = self.by_parent.get(parent).or_else(|| self.by_parent.get("*")).copied().unwrap_or(self.rules.len() - 1);
        &self.rules[i]
    }

    /// Index of the head among `children`. Leaves are represented by their tag.
    pub fn head_child(&self, parent: &str, children: &[&str]) -> usize {
        assert!(!children.is_empty(), "head_child on a constituent without children");
        if children.len() == 1 {
            return 0;
        }
        self.rule_for(parent).pick(children)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for r in &self.rules[..self.rules.len() - 1] {
            s.push_str(&r.parent);
            s.push(' ');
            s.push_str(&r.direction.to_string());
            for p in &r.priority {
                s.push(' ');
                s.push_str(p);
            }
            s.push('\n');
        }
        s
    }
}
