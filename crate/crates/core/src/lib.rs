//! A trainable, config-driven NLP pipeline toolkit: hashed-embedding token
//! encoder, POS tagger, transition-based dependency parser, transition-based
//! NER, and a bag-of-words + feed-forward text categorizer, together with
//! the full evaluation harness (UAS/LAS, tag accuracy, span F1, Cohen's
//! kappa, k-fold cross-validation, multi-trial aggregation).

pub mod config;
pub mod corpus;
pub mod error;
pub mod hash;
pub mod metrics;
pub mod ner;
pub mod nn;
pub mod parser;
pub mod pipeline;
pub mod tagger;
pub mod textcat;
pub mod tok2vec;
pub mod toygen;

pub use error::{Error, Result};
