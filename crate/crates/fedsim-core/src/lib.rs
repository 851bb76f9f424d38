//! Deterministic single-process simulation of cross-device federated
//! learning.
//!
//! The crate is organised around one round of federated training: a server
//! holds global parameters, samples a subset of clients, each sampled client
//! runs local SGD on its private shard and uploads a (possibly compressed)
//! update delta, and the server aggregates the deltas and applies one of five
//! update rules (plain averaging, server momentum, or per-coordinate adaptive
//! scaling in the Adagrad/Adam/Yogi style). A network model prices every
//! download and upload in simulated seconds and exact bytes.
//!
//! Everything is driven by a single master seed: partitioning, parameter
//! init, client sampling, batch order, codec masks. Identical configuration
//! and seed give byte-identical metrics, with one thread or many.
//!
//! Modules:
//! - [`param`]: flat f64 parameter vectors, fixed-order reductions
//! - [`model`]: logistic regression and a one-hidden-layer tanh MLP with
//!   hand-written gradients
//! - [`data`]: synthetic cluster data, CSV ingestion, label-skew and
//!   quantity-skew partitioners
//! - [`client`]: one client's local training for a round
//! - [`server`]: delta aggregation and the five server update rules
//! - [`codec`]: update compression with exact wire-byte accounting
//! - [`net`]: bandwidth/compute profiles, round timing, client sampling
//! - [`config`] / [`engine`]: run configuration, the round loop, metrics

pub mod client;
pub mod codec;
pub mod config;
pub mod data;
pub mod engine;
pub mod error;
pub mod model;
pub mod net;
pub mod param;
pub mod seeds;
pub mod server;

pub use client::{local_train, ClientConfig, ClientUpdate};
pub use codec::{
    decode, dense_wire_bytes, encode, measure_bytes, CompressionScheme, EncodedUpdate,
};
pub use config::{parse_sweep, DataSource, GenDataSpec, PartitionKind, RunConfig, SweepVariant};
pub use data::{
    holdout_split, load_csv, partition_dirichlet, partition_quantity_skew,
    scale_features_geometric, synth_generate, write_csv, Dataset, Shard,
};
pub use engine::{compare, run, CompareReport, CompareRow, MetricsLog, RoundRecord, RunOutput};
pub use error::{Error, Result};
pub use model::{evaluate, grad, loss, Batch, EvalMetrics, LayoutEntry, ModelKind, ModelSpec};
pub use net::{
    assign_profiles, round_time, sample_clients, ClientTiming, NetMix, NetworkProfile, RoundPart,
    RoundTiming, SamplingStrategy,
};
pub use param::{axpy, dot, elem_map, hadamard, ElemMap, ParamVector};
pub use server::{
    aggregate, average_models, server_step, ServerDelta, ServerHyper, ServerOptimizerState,
    ServerRule, Weighting,
};
