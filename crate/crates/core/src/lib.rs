//! GNN-based standard-cell library characterization at desk scale.
//!
//! The crate covers the whole flow: transistor-level cell netlists and a
//! 33-cell catalog ([`netlist`]), directed cell graphs with per-task feature
//! layouts ([`cellgraph`]), an analytical characterization oracle that stands
//! in for circuit simulation ([`oracle`]), corner-grid dataset generation and
//! normalization ([`dataset`]), the graph-convolution models and trainer
//! ([`gnn`]), Liberty-subset library emission plus accuracy metrics
//! ([`libgen`]), and a gate-level timing/power/sizing evaluator ([`sta`]).
//!
//! The `cellchar` binary (see [`cli`]) orchestrates these pieces into
//! reproducible runs.

pub mod cellgraph;
pub mod cli;
pub mod dataset;
pub mod gnn;
pub mod libgen;
pub mod netlist;
pub mod oracle;
pub mod sta;
pub mod util;
