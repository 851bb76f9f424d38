//! Delta aggregation and the five server update rules.
//!
//! The aggregated client delta is a pseudo-gradient (old params minus new),
//! so every rule moves against it: plain averaging (`fedavg`), server-side
//! momentum (`fedavgm`), and three adaptive rules (`fedadagrad`, `fedadam`,
//! `fedyogi`) that differ only in how the second-moment accumulator evolves.
//! No bias correction is applied to either moment. All reductions run in the
//! caller-provided order, which the engine fixes to ascending client id.

use crate::client::ClientUpdate;
use crate::error::{Error, Result};
use crate::param::{self, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServerRule {
    FedAvg,
    FedAvgM,
    FedAdagrad,
    FedAdam,
    FedYogi,
}

impl ServerRule {
    pub fn name(&self) -> &'static str {
        match self {
            ServerRule::FedAvg => "fedavg",
            ServerRule::FedAvgM => "fedavgm",
            ServerRule::FedAdagrad => "fedadagrad",
            ServerRule::FedAdam => "fedadam",
            ServerRule::FedYogi => "fedyogi",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fedavg" => Ok(ServerRule::FedAvg),
            "fedavgm" => Ok(ServerRule::FedAvgM),
            "fedadagrad" => Ok(ServerRule::FedAdagrad),
            "fedadam" => Ok(ServerRule::FedAdam),
            "fedyogi" => Ok(ServerRule::FedYogi),
            other => Err(Error::Config(format!("unknown server rule `{other}`"))),
        }
    }

    /// Adaptive rules keep a second-moment accumulator and divide by
    /// `sqrt(v) + tau`.
    pub fn is_adaptive(&self) -> bool {
        matches!(
            self,
            ServerRule::FedAdagrad | ServerRule::FedAdam | ServerRule::FedYogi
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    Uniform,
    ByExamples,
}

impl Weighting {
    pub fn name(&self) -> &'static str {
        match self {
            Weighting::Uniform => "uniform",
            Weighting::ByExamples => "by_examples",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Weighting::Uniform),
            "by_examples" => Ok(Weighting::ByExamples),
            other => Err(Error::Config(format!("unknown weighting `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServerHyper {
    pub server_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub tau: f64,
}

impl ServerHyper {
    /// Rule-dependent defaults: averaging rules step at 1.0, adaptive rules
    /// at 0.01; beta1 0.9, beta2 0.99, tau 1e-3.
    pub fn defaults_for(rule: ServerRule) -> Self {
        Self {
            server_lr: if rule.is_adaptive() { 0.01 } else { 1.0 },
            beta1: 0.9,
            beta2: 0.99,
            tau: 1e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.server_lr.is_finite() && self.server_lr > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "server lr must be positive, got {}",
                self.server_lr
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b.is_finite() && (0.0..1.0).contains(&b)) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must lie in [0, 1), got {b}"
                )));
            }
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

/// Aggregated pseudo-gradient for one round.
#[derive(Debug, Clone)]
pub struct ServerDelta {
    pub delta: ParamVector,
    pub total_examples: usize,
    pub num_updates: usize,
}

/// Global parameters plus the optimizer accumulators that persist across
/// rounds.
#[derive(Debug, Clone)]
pub struct ServerOptimizerState {
    rule: ServerRule,
    params: ParamVector,
    momentum: ParamVector,
    second_moment: ParamVector,
    hyper: ServerHyper,
    round: usize,
}

impl ServerOptimizerState {
    /// Fresh state at round 0. The second moment starts at `tau^2` for
    /// adaptive rules and at zero (and stays zero) otherwise.
    pub fn new(rule: ServerRule, params: ParamVector, hyper: ServerHyper) -> Result<Self> {
        hyper.validate()?;
        let dim = params.dim();
        let second_moment = if rule.is_adaptive() {
            ParamVector::new(vec![hyper.tau * hyper.tau; dim])?
        } else {
            ParamVector::zeros(dim)
        };
        Ok(Self {
            rule,
            params,
            momentum: ParamVector::zeros(dim),
            second_moment,
            hyper,
            round: 0,
        })
    }

    #[cfg(test)]
    fn from_parts(
        rule: ServerRule,
        params: ParamVector,
        momentum: ParamVector,
        second_moment: ParamVector,
        hyper: ServerHyper,
        round: usize,
    ) -> Self {
        Self {
            rule,
            params,
            momentum,
            second_moment,
            hyper,
            round,
        }
    }

    pub fn rule(&self) -> ServerRule {
        self.rule
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn momentum(&self) -> &ParamVector {
        &self.momentum
    }

    pub fn second_moment(&self) -> &ParamVector {
        &self.second_moment
    }

    pub fn hyper(&self) -> ServerHyper {
        self.hyper
    }

    pub fn round(&self) -> usize {
        self.round
    }

    /// Replace the global parameters directly and advance the round counter.
    /// This is the engine's exact model-averaging path for `fedavg` with
    /// server lr 1, where the new params are the mean of client finals
    /// rather than `x - eta * d`.
    pub fn advance_with_params(&self, params: ParamVector) -> Self {
        Self {
            params,
            round: self.round + 1,
            ..self.clone()
        }
    }
}

fn weighted_mean<'a, I>(items: I, weighting: Weighting, context: &'static str) -> Result<ParamVector>
where
    I: Iterator<Item = (&'a ParamVector, usize)> + Clone,
{
    let mut iter = items.clone();
    let first = match iter.next() {
        Some((v, _)) => v,
        None => return Err(Error::EmptyInput("weighted mean over no vectors")),
    };
    let dim = first.dim();
    let mut acc = vec![0.0; dim];
    let mut total_weight = 0.0;
    for (vector, n) in items {
        if vector.dim() != dim {
            return Err(Error::DimMismatch {
                context,
                left: vector.dim(),
                right: dim,
            });
        }
        let w = match weighting {
            Weighting::Uniform => 1.0,
            Weighting::ByExamples => n as f64,
        };
        for (a, v) in acc.iter_mut().zip(vector.values()) {
            *a += w * v;
        }
        total_weight += w;
    }
    for a in acc.iter_mut() {
        *a /= total_weight;
    }
    ParamVector::new(acc)
}

/// Mean of client deltas in the order given (the engine passes ascending
/// client id). `uniform` averages plainly; `by_examples` weights each delta
/// by its shard size. Sum first, divide once.
pub fn aggregate(updates: &[ClientUpdate], weighting: Weighting) -> Result<ServerDelta> {
    if updates.is_empty() {
        return Err(Error::EmptyInput("aggregate requires at least one update"));
    }
    let delta = weighted_mean(
        updates.iter().map(|u| (&u.delta, u.n_examples)),
        weighting,
        "aggregate deltas",
    )?;
    Ok(ServerDelta {
        delta,
        total_examples: updates.iter().map(|u| u.n_examples).sum(),
        num_updates: updates.len(),
    })
}

/// Mean of client-final parameter vectors, same conventions as
/// [`aggregate`]. Backs the exact model-averaging form of `fedavg`.
pub fn average_models(finals: &[(ParamVector, usize)], weighting: Weighting) -> Result<ParamVector> {
    weighted_mean(
        finals.iter().map(|(p, n)| (p, *n)),
        weighting,
        "average models",
    )
}

fn sgn(t: f64) -> f64 {
    if t > 0.0 {
        1.0
    } else if t < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Apply one server update and return the advanced state; the input state is
/// untouched. Produces a divergence error naming the rule and round if any
/// parameter stops being finite.
pub fn server_step(state: &ServerOptimizerState, agg: &ServerDelta) -> Result<ServerOptimizerState> {
    if agg.delta.dim() != state.params.dim() {
        return Err(Error::DimMismatch {
            context: "server_step delta",
            left: agg.delta.dim(),
            right: state.params.dim(),
        });
    }
    let diverged = |e: Error| Error::Divergence {
        origin: format!("server_step({})", state.rule.name()),
        step: state.round,
        detail: e.to_string(),
    };
    let h = state.hyper;
    let d = &agg.delta;

    let (params, momentum, second_moment) = match state.rule {
        ServerRule::FedAvg => {
            let params = param::axpy(-h.server_lr, d, &state.params).map_err(diverged)?;
            (params, state.momentum.clone(), state.second_moment.clone())
        }
        ServerRule::FedAvgM => {
            let momentum = param::axpy(h.beta1, &state.momentum, d).map_err(diverged)?;
            let params = param::axpy(-h.server_lr, &momentum, &state.params).map_err(diverged)?;
            (params, momentum, state.second_moment.clone())
        }
        rule => {
            let dim = d.dim();
            let mut m = Vec::with_capacity(dim);
            let mut v = Vec::with_capacity(dim);
            let mut x = Vec::with_capacity(dim);
            for i in 0..dim {
                let di = d.values()[i];
                let d2 = di * di;
                let mi = h.beta1 * state.momentum.values()[i] + (1.0 - h.beta1) * di;
                let v_prev = state.second_moment.values()[i];
                let vi = match rule {
                    ServerRule::FedAdagrad => v_prev + d2,
                    ServerRule::FedAdam => h.beta2 * v_prev + (1.0 - h.beta2) * d2,
                    ServerRule::FedYogi => v_prev - (1.0 - h.beta2) * d2 * sgn(v_prev - d2),
                    _ => unreachable!("averaging rules handled above"),
                };
                if vi < 0.0 {
                    return Err(Error::SqrtNegative {
                        index: i,
                        value: vi,
                    });
                }
                x.push(state.params.values()[i] - h.server_lr * mi / (vi.sqrt() + h.tau));
                m.push(mi);
                v.push(vi);
            }
            (
                ParamVector::new(x).map_err(diverged)?,
                ParamVector::new(m).map_err(diverged)?,
                ParamVector::new(v).map_err(diverged)?,
            )
        }
    };

    Ok(ServerOptimizerState {
        rule: state.rule,
        params,
        momentum,
        second_moment,
        hyper: state.hyper,
        round: state.round + 1,
    })
}
