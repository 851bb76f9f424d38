//! The federated round loop: sample, broadcast, train locally, compress,
//! price the network, aggregate, step the server, evaluate.
//!
//! Everything derives from the run's master seed through labeled streams
//! (`"data"`, `"partition"`, `"init"`, `"sample"` per round, `"train"` per
//! round and client, ...), so one seed pins the whole trajectory. Client
//! work inside a round may run on a thread pool; results are collected in
//! client-id order and reduced serially, which keeps the metrics
//! byte-identical across thread counts.

use crate::client::{local_train, ClientUpdate};
use crate::codec;
use crate::config::{DataSource, PartitionKind, RunConfig, SweepVariant};
use crate::data::{
    holdout_split, load_csv, partition_dirichlet, partition_quantity_skew,
    scale_features_geometric, synth_generate, Dataset, Shard,
};
use crate::error::{Error, Result};
use crate::model::{evaluate, EvalMetrics, ModelKind, ModelSpec};
use crate::net::{assign_profiles, round_time, sample_clients, RoundPart};
use crate::param::{self, ParamVector};
use crate::seeds;
use crate::server::{aggregate, average_models, server_step, ServerOptimizerState, ServerRule};
use rayon::prelude::*;
use std::path::Path;

/// One row of the metrics log. `sim_seconds`, `bytes_up`, and `bytes_down`
/// are cumulative over the run.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: u64,
    pub sim_seconds: f64,
    /// Example-weighted mean of the participants' shard loss at the
    /// broadcast parameters, i.e. the quality of the global model entering
    /// the round. On a round with no reachable participants the previous
    /// value is carried.
    pub train_loss: f64,
    pub eval_acc: f64,
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub participants: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub records: Vec<RoundRecord>,
}

/// Reals print as `{:.8e}`: 9 significant digits, locale-free, and
/// byte-stable for identical inputs.
fn format_real(x: f64) -> String {
    format!("{x:.8e}")
}

impl MetricsLog {
    pub const CSV_HEADER: &'static str =
        "round,sim_seconds,train_loss,eval_acc,bytes_up,bytes_down,participants";

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.round,
                format_real(r.sim_seconds),
                format_real(r.train_loss),
                format_real(r.eval_acc),
                r.bytes_up,
                r.bytes_down,
                r.participants
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: MetricsLog,
    pub final_params: ParamVector,
    pub final_eval: EvalMetrics,
    /// Training loss measured at round 0, the baseline for target-loss
    /// reporting.
    pub initial_train_loss: f64,
}

fn with_round_context(err: Error, round: u64, client: Option<usize>) -> Error {
    match err {
        Error::Divergence {
            origin,
            step,
            detail,
        } => {
            let place = match client {
                Some(c) => format!("round {round}, client {c}"),
                None => format!("round {round}"),
            };
            Error::Divergence {
                origin,
                step,
                detail: format!("{place}: {detail}"),
            }
        }
        Error::NonFinite { context } => Error::Divergence {
            origin: "engine".into(),
            step: round as usize,
            detail: format!(
                "{}: non-finite value in {context}",
                match client {
                    Some(c) => format!("round {round}, client {c}"),
                    None => format!("round {round}"),
                }
            ),
        },
        other => other,
    }
}

fn build_dataset(config: &RunConfig, master: u64) -> Result<Dataset> {
    let data = match &config.source {
        DataSource::Synthetic {
            num_classes,
            input_dim,
            per_class,
            spread,
        } => synth_generate(
            *num_classes,
            *input_dim,
            *per_class,
            *spread,
            seeds::derive_seed(master, "data", &[]),
        )?,
        DataSource::Csv {
            path,
            label_column,
            num_classes,
        } => load_csv(path, label_column, *num_classes)?,
    };
    if config.scale_span > 1.0 {
        scale_features_geometric(&data, config.scale_span)
    } else {
        Ok(data)
    }
}

fn build_shards(config: &RunConfig, train: &Dataset, master: u64) -> Result<Vec<Shard>> {
    let seed = seeds::derive_seed(master, "partition", &[]);
    match config.partition {
        PartitionKind::Dirichlet { alpha } => {
            partition_dirichlet(train, config.num_clients, alpha, seed)
        }
        PartitionKind::Zipf { s } => {
            partition_quantity_skew(train, config.num_clients, s, seed)
        }
    }
}

/// Execute the full run. Deterministic: identical config (including thread
/// count 1 vs N) and seed give identical output.
pub fn run(config: &RunConfig) -> Result<RunOutput> {
    let master = config.seed;

    let data = build_dataset(config, master)?;
    let (train_idx, eval_idx) = holdout_split(
        data.n(),
        config.eval_fraction,
        seeds::derive_seed(master, "eval_split", &[]),
    )?;
    let train_ds = data.select(&train_idx)?;
    let eval_ds = data.select(&eval_idx)?;
    let eval_all: Vec<usize> = (0..eval_ds.n()).collect();
    let train_all: Vec<usize> = (0..train_ds.n()).collect();

    let shards = build_shards(config, &train_ds, master)?;

    let spec = match config.model_kind {
        ModelKind::LogisticRegression => {
            ModelSpec::logistic_regression(train_ds.input_dim(), train_ds.num_classes())?
        }
        ModelKind::MlpOneHidden => ModelSpec::mlp_one_hidden(
            train_ds.input_dim(),
            config.hidden_dim,
            train_ds.num_classes(),
        )?,
    };
    let init = spec.init_params(seeds::derive_seed(master, "init", &[]));

    let profiles = assign_profiles(
        config.num_clients,
        &config.net_mix,
        seeds::derive_seed(master, "net", &[]),
    )?;

    let codec_seed = seeds::derive_seed(master, "codec", &[]);
    let model_bytes_down = codec::dense_wire_bytes(spec.param_dim());

    let pool = if config.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(config.threads)
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?,
        )
    } else {
        None
    };

    let mut state = ServerOptimizerState::new(
        config.server_rule,
        init,
        config.server_hyper,
    )?;
    let mut history = vec![0u64; config.num_clients];
    let mut records = Vec::with_capacity(config.rounds as usize);
    let mut sim_seconds = 0.0f64;
    let mut bytes_up = 0u64;
    let mut bytes_down = 0u64;
    let mut prev_train_loss: Option<f64> = None;
    let mut last_eval = EvalMetrics {
        accuracy: 0.0,
        mean_loss: f64::INFINITY,
    };

    for round in 0..config.rounds {
        let mut sample_rng = seeds::stream(master, "sample", &[round]);
        let sampled = sample_clients(
            config.sampling,
            config.num_clients,
            config.sampling_ratio,
            &history,
            &mut sample_rng,
        )?;

        // unreachable sampled clients drop out of the round
        let mut avail_rng = seeds::stream(master, "avail", &[round]);
        let participants: Vec<usize> = sampled
            .into_iter()
            .filter(|_| {
                let u: f64 = rand::Rng::random(&mut avail_rng);
                u < config.net_mix.availability
            })
            .collect();

        let train_loss = if participants.is_empty() {
            match prev_train_loss {
                Some(l) => l,
                None => {
                    evaluate(&spec, state.params(), &train_ds, &train_all)
                        .map_err(|e| with_round_context(e, round, None))?
                        .mean_loss
                }
            }
        } else {
            let worker = |&client: &usize| -> Result<(ClientUpdate, usize, ParamVector)> {
                let mut rng = seeds::stream(master, "train", &[round, client as u64]);
                let update = local_train(
                    &spec,
                    state.params(),
                    &train_ds,
                    &shards[client].indices,
                    &config.client,
                    &mut rng,
                )
                .map_err(|e| with_round_context(e, round, Some(client)))?;
                let enc = codec::encode(
                    &update.delta,
                    spec.layout(),
                    config.compression,
                    round as u32,
                    client as u32,
                    codec_seed,
                    update.n_examples,
                )?;
                let wire = codec::measure_bytes(&enc);
                let decoded = codec::decode(&enc, spec.layout())?;
                Ok((update, wire, decoded))
            };
            let results: Vec<(ClientUpdate, usize, ParamVector)> = match &pool {
                Some(pool) => pool.install(|| {
                    participants
                        .par_iter()
                        .map(worker)
                        .collect::<Result<Vec<_>>>()
                })?,
                None => participants
                    .iter()
                    .map(worker)
                    .collect::<Result<Vec<_>>>()?,
            };

            let total_examples: usize = results.iter().map(|(u, _, _)| u.n_examples).sum();
            let loss_sum: f64 = results
                .iter()
                .map(|(u, _, _)| u.local_loss_before * u.n_examples as f64)
                .sum();
            let train_loss = loss_sum / total_examples as f64;

            let parts: Vec<RoundPart> = participants
                .iter()
                .zip(&results)
                .map(|(&client, (update, wire, _))| RoundPart {
                    profile: profiles[client],
                    model_bytes_down,
                    update_bytes_up: *wire,
                    samples_processed: update.samples_processed,
                })
                .collect();
            let timing = round_time(&parts)?;
            sim_seconds += timing.round_wall_s;
            bytes_up += timing.bytes_up as u64;
            bytes_down += timing.bytes_down as u64;
            for (&client, (update, _, _)) in participants.iter().zip(&results) {
                history[client] += update.samples_processed as u64;
            }

            // fedavg at unit server lr is exact model averaging: form each
            // client's final parameters and average those, instead of the
            // algebraically equal but not bitwise-equal `x - mean(delta)`
            if state.rule() == ServerRule::FedAvg && state.hyper().server_lr == 1.0 {
                let finals = results
                    .iter()
                    .map(|(update, _, decoded)| {
                        Ok((param::sub(state.params(), decoded)?, update.n_examples))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let mean = average_models(&finals, config.weighting)
                    .map_err(|e| with_round_context(e, round, None))?;
                state = state.advance_with_params(mean);
            } else {
                let for_agg: Vec<ClientUpdate> = results
                    .iter()
                    .map(|(update, _, decoded)| ClientUpdate {
                        delta: decoded.clone(),
                        ..update.clone()
                    })
                    .collect();
                let agg = aggregate(&for_agg, config.weighting)?;
                state = server_step(&state, &agg)
                    .map_err(|e| with_round_context(e, round, None))?;
            }
            train_loss
        };
        prev_train_loss = Some(train_loss);

        last_eval = evaluate(&spec, state.params(), &eval_ds, &eval_all)
            .map_err(|e| with_round_context(e, round, None))?;

        records.push(RoundRecord {
            round,
            sim_seconds,
            train_loss,
            eval_acc: last_eval.accuracy,
            bytes_up,
            bytes_down,
            participants: participants.len(),
        });
    }

    let initial_train_loss = records[0].train_loss;
    Ok(RunOutput {
        metrics: MetricsLog { records },
        final_params: state.params().clone(),
        final_eval: last_eval,
        initial_train_loss,
    })
}

/// One variant's outcome in a comparison sweep.
#[derive(Debug, Clone)]
pub struct CompareRow {
    pub label: String,
    /// First round index whose measured training loss was at or below the
    /// target; `None` if the run never reached it.
    pub rounds_to_target: Option<u64>,
    pub final_train_loss: f64,
    pub final_eval_acc: f64,
    /// A variant that failed reports here; the others still run.
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct CompareReport {
    /// The target loss is this fraction of each variant's own round-0
    /// training loss.
    pub target_fraction: f64,
    pub rows: Vec<CompareRow>,
}

/// Run every sweep variant against the base config (same master seed, hence
/// same data, partition, and init wherever the overrides leave them
/// untouched) and tabulate convergence.
pub fn compare(base: &RunConfig, sweep: &[SweepVariant]) -> Result<CompareReport> {
    if sweep.is_empty() {
        return Err(Error::EmptyInput("compare sweep"));
    }
    let mut rows = Vec::with_capacity(sweep.len());
    for variant in sweep {
        let row = match base
            .with_overrides(&variant.overrides)
            .and_then(|cfg| run(&cfg))
        {
            Ok(out) => {
                let target = base.target_fraction * out.initial_train_loss;
                let reached = out
                    .metrics
                    .records
                    .iter()
                    .find(|r| r.train_loss <= target)
                    .map(|r| r.round);
                let last = out.metrics.records.last().expect("rounds >= 1");
                CompareRow {
                    label: variant.label.clone(),
                    rounds_to_target: reached,
                    final_train_loss: last.train_loss,
                    final_eval_acc: last.eval_acc,
                    error: None,
                }
            }
            Err(e) => CompareRow {
                label: variant.label.clone(),
                rounds_to_target: None,
                final_train_loss: f64::NAN,
                final_eval_acc: f64::NAN,
                error: Some(e.to_string()),
            },
        };
        rows.push(row);
    }
    Ok(CompareReport {
        target_fraction: base.target_fraction,
        rows,
    })
}
