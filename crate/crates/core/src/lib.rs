//! Collaborative audio annotation: projects, tasks and time-aligned regions,
//! pluggable model backends over HTTP, inter-annotator agreement and
//! pairwise preference ranking.

pub mod api;
pub mod cli;
pub mod consensus;
pub mod domain;
pub mod export;
pub mod gateway;
pub mod preference;
pub mod storage;
