//! Behavior-forest itinerary planning.
//!
//! A travel query is split into four subtasks (transportation,
//! accommodation, dining, attractions), each planned by its own behavior
//! tree. The trees run in parallel and are coordinated through a shared
//! budget, a memo of rejected combinations and a bounded number of rounds.
//! The `evaluation` module scores delivered plans with micro and macro
//! pass rates.

pub mod btree;
pub mod catalog;
pub mod config;
pub mod coordination;
pub mod domain;
pub mod evaluation;
pub mod extraction;
pub mod llm;
pub mod pipeline;
pub mod prompts;
pub mod synth;
pub mod util;
