//! A statistical parser built from decision-tree models.
//!
//! A parse is a sequence of decisions (tags, labels and extensions) made
//! bottom-up, left to right. Three decision trees estimate the probability of
//! each decision given its context; the parser searches for the decision
//! sequence with the highest product of probabilities.
//!
//! The pipeline: read a treebank ([`corpus`]), cluster words, tags and labels
//! into binary class trees ([`classtree`]), encode every tree into decision
//! events ([`derivation`]), grow and smooth the three models ([`dtm`],
//! [`models`]), parse ([`search`]) and score the output ([`parseval`]).

pub mod classtree;
pub mod corpus;
pub mod derivation;
pub mod dtm;
pub mod headfinder;
pub mod modelfile;
pub mod models;
pub mod parseval;
pub mod search;
