//! One client's local training for a single round.
//!
//! A client receives the current global parameters, runs a few epochs of
//! mini-batch SGD with heavy-ball momentum on its private shard, and reports
//! the pseudo-gradient `delta = global - local_final`. Velocity starts at
//! zero every round, so clients carry no state between rounds and any subset
//! of them can be scheduled in any order.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{self, ModelSpec};
use crate::param::{self, ParamVector};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClientConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub shuffle: bool,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            momentum: 0.9,
            local_epochs: 1,
            batch_size: 32,
            shuffle: true,
        }
    }
}

impl ClientConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "client learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.momentum.is_finite() && (0.0..1.0).contains(&self.momentum)) {
            return Err(Error::InvalidArgument(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// What a client uploads after a round.
#[derive(Debug, Clone)]
pub struct ClientUpdate {
    /// Pseudo-gradient `global - local_final`; positive dot product with the
    /// local gradient for small steps.
    pub delta: ParamVector,
    pub n_examples: usize,
    pub samples_processed: usize,
    /// Full-shard loss at the incoming global parameters.
    pub local_loss_before: f64,
    /// Full-shard loss at the final local parameters.
    pub local_loss_after: f64,
}

/// Run `cfg.local_epochs` passes of momentum-SGD over the shard and return
/// the resulting update. `global_params` is never modified; batch order is
/// drawn from `rng`, which the engine seeds per (round, client).
pub fn local_train(
    spec: &ModelSpec,
    global_params: &ParamVector,
    data: &Dataset,
    shard_indices: &[usize],
    cfg: &ClientConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ClientUpdate> {
    cfg.validate()?;
    if shard_indices.is_empty() {
        return Err(Error::EmptyInput("client shard is empty"));
    }
    let full = data.batch(shard_indices)?;
    let loss_before = model::loss(spec, global_params, &full)?;
    let n = shard_indices.len();

    if cfg.local_epochs == 0 {
        return Ok(ClientUpdate {
            delta: ParamVector::zeros(global_params.dim()),
            n_examples: n,
            samples_processed: 0,
            local_loss_before: loss_before,
            local_loss_after: loss_before,
        });
    }

    let diverged = |step: usize, detail: String| Error::Divergence {
        origin: "local_train".into(),
        step,
        detail,
    };

    let mut params = global_params.clone();
    let mut velocity = ParamVector::zeros(global_params.dim());
    let mut order: Vec<usize> = shard_indices.to_vec();
    let mut samples_processed = 0usize;
    let mut step = 0usize;
    for _ in 0..cfg.local_epochs {
        if cfg.shuffle {
            order.shuffle(rng);
        }
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.batch(chunk)?;
            let (_, grad) = model::loss_and_grad(spec, &params, &batch)
                .map_err(|e| diverged(step, e.to_string()))?;
            velocity = param::axpy(cfg.momentum, &velocity, &grad)
                .map_err(|e| diverged(step, e.to_string()))?;
            params = param::axpy(-cfg.learning_rate, &velocity, &params)
                .map_err(|e| diverged(step, e.to_string()))?;
            samples_processed += batch.len();
            step += 1;
        }
    }

    let loss_after =
        model::loss(spec, &params, &full).map_err(|e| diverged(step, e.to_string()))?;
    Ok(ClientUpdate {
        delta: param::sub(global_params, &params)?,
        n_examples: n,
        samples_processed,
        local_loss_before: loss_before,
        local_loss_after: loss_after,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_generate;
    use crate::param::dot;
    use crate::seeds;
    use rand::Rng;

    fn setup(seed: u64) -> (ModelSpec, Dataset, Vec<usize>) {
        let ds = synth_generate(3, 4, 12, 0.8, seed).unwrap();
        let spec = ModelSpec::logistic_regression(4, 3).unwrap();
        let idx: Vec<usize> = (0..ds.n()).collect();
        (spec, ds, idx)
    }

    #[test]
    fn zero_epochs_is_a_noop() {
        let (spec, ds, idx) = setup(1);
        let global = spec.init_params(5);
        let cfg = ClientConfig {
            local_epochs: 0,
            ..ClientConfig::default()
        };
        let mut rng = seeds::stream(0, "train", &[0, 0]);
        let up = local_train(&spec, &global, &ds, &idx, &cfg, &mut rng).unwrap();
        assert!(up.delta.values().iter().all(|&v| v == 0.0));
        assert_eq!(up.samples_processed, 0);
        assert_eq!(up.local_loss_before, up.local_loss_after);
    }

    #[test]
    fn single_full_batch_delta_is_lr_times_grad() {
        let (spec, ds, idx) = setup(2);
        let global = spec.init_params(6);
        let cfg = ClientConfig {
            learning_rate: 0.05,
            momentum: 0.9,
            local_epochs: 1,
            batch_size: idx.len(),
            shuffle: true,
        };
        let mut rng = seeds::stream(0, "train", &[0, 0]);
        let up = local_train(&spec, &global, &ds, &idx, &cfg, &mut rng).unwrap();
        // first step: velocity == gradient, so delta == lr * grad
        let batch = ds.batch(&idx).unwrap();
        let g = crate::model::grad(&spec, &global, &batch).unwrap();
        for (d, gi) in up.delta.values().iter().zip(g.values()) {
            assert!((d - cfg.learning_rate * gi).abs() <= 1e-13);
        }
        assert_eq!(up.samples_processed, idx.len());
        assert!(up.local_loss_after < up.local_loss_before);
    }

    #[test]
    fn two_full_batch_steps_match_hand_rollout() {
        let (spec, ds, idx) = setup(3);
        let global = spec.init_params(7);
        let cfg = ClientConfig {
            learning_rate: 0.02,
            momentum: 0.5,
            local_epochs: 2,
            batch_size: idx.len(),
            shuffle: false,
        };
        let mut rng = seeds::stream(0, "train", &[0, 0]);
        let up = local_train(&spec, &global, &ds, &idx, &cfg, &mut rng).unwrap();

        // replicate the exact op sequence
        let batch = ds.batch(&idx).unwrap();
        let mut params = global.clone();
        let mut v = ParamVector::zeros(global.dim());
        for _ in 0..2 {
            let g = crate::model::grad(&spec, &params, &batch).unwrap();
            v = param::axpy(0.5, &v, &g).unwrap();
            params = param::axpy(-0.02, &v, &params).unwrap();
        }
        let expect = param::sub(&global, &params).unwrap();
        assert!(up.delta.bitwise_eq(&expect));
        assert_eq!(up.samples_processed, 2 * idx.len());
    }

    #[test]
    fn identical_streams_give_identical_deltas() {
        let (spec, ds, idx) = setup(4);
        let global = spec.init_params(8);
        let cfg = ClientConfig {
            batch_size: 5,
            ..ClientConfig::default()
        };
        let mut r1 = seeds::stream(9, "train", &[3, 1]);
        let mut r2 = seeds::stream(9, "train", &[3, 1]);
        let a = local_train(&spec, &global, &ds, &idx, &cfg, &mut r1).unwrap();
        let b = local_train(&spec, &global, &ds, &idx, &cfg, &mut r2).unwrap();
        assert!(a.delta.bitwise_eq(&b.delta));
        let mut r3 = seeds::stream(9, "train", &[3, 2]);
        let c = local_train(&spec, &global, &ds, &idx, &cfg, &mut r3).unwrap();
        assert!(!c.delta.bitwise_eq(&a.delta), "distinct streams should differ");
    }

    #[test]
    fn partial_final_batch_is_kept() {
        let (spec, ds, _) = setup(5);
        let idx: Vec<usize> = (0..10).collect();
        let global = spec.init_params(9);
        let cfg = ClientConfig {
            batch_size: 4, // batches of 4, 4, 2
            ..ClientConfig::default()
        };
        let mut rng = seeds::stream(1, "train", &[0, 0]);
        let up = local_train(&spec, &global, &ds, &idx, &cfg, &mut rng).unwrap();
        assert_eq!(up.samples_processed, 10);
        assert_eq!(up.n_examples, 10);
    }

    #[test]
    fn delta_points_along_the_gradient() {
        // convex objective, small lr: dot(delta, grad) > 0 nearly always
        let mut hits = 0;
        for trial in 0..50u64 {
            let ds = synth_generate(2, 3, 10, 1.0, 100 + trial).unwrap();
            let spec = ModelSpec::logistic_regression(3, 2).unwrap();
            let idx: Vec<usize> = (0..ds.n()).collect();
            let global = spec.init_params(trial);
            let cfg = ClientConfig {
                learning_rate: 1e-3,
                batch_size: 4,
                ..ClientConfig::default()
            };
            let mut rng = seeds::stream(trial, "train", &[0, 0]);
            let up = local_train(&spec, &global, &ds, &idx, &cfg, &mut rng).unwrap();
            let full = ds.batch(&idx).unwrap();
            let g = crate::model::grad(&spec, &global, &full).unwrap();
            if dot(&up.delta, &g).unwrap() > 0.0 {
                hits += 1;
            }
        }
        assert!(hits >= 48, "pseudo-gradient aligned in only {hits}/50 trials");
    }

    #[test]
    fn runaway_learning_rate_reports_divergence() {
        let ds = synth_generate(2, 5, 20, 10.0, 3).unwrap();
        let spec = ModelSpec::logistic_regression(5, 2).unwrap();
        let idx: Vec<usize> = (0..ds.n()).collect();
        let global = ParamVector::zeros(spec.param_dim());
        let cfg = ClientConfig {
            learning_rate: f64::MAX,
            momentum: 0.9,
            local_epochs: 3,
            batch_size: 5,
            shuffle: true,
        };
        let mut rng = seeds::stream(2, "train", &[0, 0]);
        let err = local_train(&spec, &global, &ds, &idx, &cfg, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "got {err:?}");
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn empty_shard_is_rejected() {
        let (spec, ds, _) = setup(6);
        let global = spec.init_params(1);
        let mut rng = seeds::stream(0, "train", &[0, 0]);
        assert!(matches!(
            local_train(&spec, &global, &ds, &[], &ClientConfig::default(), &mut rng),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn global_params_are_not_consumed_or_changed() {
        let (spec, ds, idx) = setup(7);
        let global = spec.init_params(2);
        let snapshot = global.clone();
        let mut rng = seeds::stream(0, "train", &[1, 1]);
        let _ = local_train(&spec, &global, &ds, &idx, &ClientConfig::default(), &mut rng)
            .unwrap();
        assert!(global.bitwise_eq(&snapshot));
        // unused rng draw count must not depend on ambient state
        let next: u64 = rng.random();
        let mut replay = seeds::stream(0, "train", &[1, 1]);
        let _ = local_train(&spec, &global, &ds, &idx, &ClientConfig::default(), &mut replay)
            .unwrap();
        let replay_next: u64 = replay.random();
        assert_eq!(next, replay_next);
    }
}
