//! Evaluation harness for LLM robustness-improvement strategies.
//!
//! The crate is organised around the experiment workflow it automates:
//!
//! 1. [`ingest`] loads adversarial and out-of-distribution benchmarks from
//!    user-supplied files and applies deterministic subsampling rules.
//! 2. [`gateway`] provides a uniform text-generation interface over remote
//!    chat-completion endpoints and a deterministic scripted backend for
//!    tests, with caching, retry, and bounded concurrency.
//! 3. [`strategies`] runs the inference pipelines — plain baseline, the
//!    iterative inspect/refine/compare/evaluate defense (two prompt
//!    variants), and in-context rewriting — producing one audit record per
//!    sample.
//! 4. [`metrics`] turns records into accuracy/precision/recall/F1 tables,
//!    per attack type or task and overall.
//! 5. [`correlation`] normalizes strategy scores, pairs adversarial and OOD
//!    benchmarks, and fits least-squares lines whose slope classifies the
//!    robustness correlation.
//! 6. [`harness`] ties it together: experiment config, reproducible run
//!    directories, analysis, and report rendering.

pub mod correlation;
pub mod gateway;
pub mod harness;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod strategies;
