//! Run configuration: a flat `key = value` text format with dotted section
//! keys, strict about unknown and duplicate keys.
//!
//! Every key has a default, so the empty file is a valid config. Lines whose
//! first non-space character is `#` are comments; values are taken verbatim
//! after trimming, so paths may contain spaces but not leading/trailing
//! ones.

use crate::client::ClientConfig;
use crate::codec::CompressionScheme;
use crate::error::{Error, Result};
use crate::model::ModelKind;
use crate::net::{NetMix, SamplingStrategy};
use crate::server::{ServerHyper, ServerRule, Weighting};
use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};

/// Where the global dataset comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic {
        num_classes: usize,
        input_dim: usize,
        per_class: usize,
        spread: f64,
    },
    Csv {
        path: PathBuf,
        label_column: String,
        num_classes: usize,
    },
}

/// How the training split is carved into client shards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PartitionKind {
    /// Label skew: per-client class proportions drawn from Dirichlet(alpha).
    Dirichlet { alpha: f64 },
    /// Quantity skew: shard sizes proportional to `rank^(-s)`.
    Zipf { s: f64 },
}

/// A fully resolved simulation configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub rounds: u64,
    pub seed: u64,
    pub eval_fraction: f64,
    pub weighting: Weighting,
    pub threads: usize,
    /// `compare` declares its target loss as this fraction of the initial
    /// training loss.
    pub target_fraction: f64,
    pub source: DataSource,
    /// Geometric per-coordinate feature scaling over `[1, 1/scale_span]`;
    /// 1.0 leaves features untouched.
    pub scale_span: f64,
    pub partition: PartitionKind,
    pub num_clients: usize,
    pub sampling_ratio: f64,
    pub client: ClientConfig,
    pub model_kind: ModelKind,
    pub hidden_dim: usize,
    pub server_rule: ServerRule,
    pub server_hyper: ServerHyper,
    pub compression: CompressionScheme,
    pub net_mix: NetMix,
    pub sampling: SamplingStrategy,
    /// The keys the user actually set, for override merging.
    raw: BTreeMap<String, String>,
}

const KNOWN_KEYS: &[&str] = &[
    "run.rounds",
    "run.seed",
    "run.eval_fraction",
    "run.weighting",
    "run.threads",
    "run.target_fraction",
    "data.source",
    "data.path",
    "data.label_column",
    "data.num_classes",
    "data.input_dim",
    "data.per_class",
    "data.spread",
    "data.scale_span",
    "partition.kind",
    "partition.alpha",
    "partition.zipf_s",
    "clients.count",
    "clients.sampling_ratio",
    "client.lr",
    "client.momentum",
    "client.epochs",
    "client.batch_size",
    "client.shuffle",
    "model.kind",
    "model.hidden_dim",
    "server.rule",
    "server.lr",
    "server.beta1",
    "server.beta2",
    "server.tau",
    "compress.kind",
    "compress.rank",
    "compress.keep_fraction",
    "compress.bits",
    "net.fraction_3g",
    "net.compute_rate",
    "net.availability",
    "net.sampling",
    "net.alpha",
];

/// Parse `key = value` lines into an ordered map, rejecting duplicates and
/// malformed lines. Shared by run configs, sweep overrides, and gen-data
/// specs.
fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "line {}: expected `key = value`, got `{line}`",
                lineno + 1
            ))
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
        }
        if map.insert(key.clone(), value).is_some() {
            return Err(Error::Config(format!(
                "duplicate config key `{key}` (line {})",
                lineno + 1
            )));
        }
    }
    Ok(map)
}

struct Pairs<'a> {
    map: &'a BTreeMap<String, String>,
}

impl<'a> Pairs<'a> {
    fn get(&self, key: &str) -> Option<&'a str> {
        self.map.get(key).map(String::as_str)
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(raw) => raw.parse().map_err(|_| {
                Error::Config(format!(
                    "config key `{key}`: cannot parse `{raw}` as {}",
                    std::any::type_name::<T>()
                ))
            }),
        }
    }

    fn parse_bool(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(raw) => Err(Error::Config(format!(
                "config key `{key}`: expected `true` or `false`, got `{raw}`"
            ))),
        }
    }
}

fn check_known(map: &BTreeMap<String, String>) -> Result<()> {
    for key in map.keys() {
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(Error::Config(format!("unknown config key `{key}`")));
        }
    }
    Ok(())
}

impl RunConfig {
    /// Build a config from flat `key = value` text. Unknown keys, duplicate
    /// keys, unparseable values, and out-of-range values are all errors.
    pub fn from_str_text(text: &str) -> Result<RunConfig> {
        Self::from_pairs(parse_pairs(text)?)
    }

    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_str_text(&text)
    }

    /// Re-parse with extra `key = value` pairs layered on top of the keys
    /// this config was built from (overrides replace earlier settings).
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<RunConfig> {
        let mut map = self.raw.clone();
        for (key, value) in overrides {
            map.insert(key.trim().to_string(), value.trim().to_string());
        }
        Self::from_pairs(map)
    }

    fn from_pairs(map: BTreeMap<String, String>) -> Result<RunConfig> {
        check_known(&map)?;
        let p = Pairs { map: &map };

        let rounds: u64 = p.parse("run.rounds", 100)?;
        if rounds == 0 || rounds > u64::from(u32::MAX) {
            return Err(Error::Config(format!(
                "run.rounds must lie in 1..=2^32-1, got {rounds}"
            )));
        }
        let seed: u64 = p.parse("run.seed", 42)?;
        let eval_fraction: f64 = p.parse("run.eval_fraction", 0.2)?;
        if !(eval_fraction.is_finite() && eval_fraction > 0.0 && eval_fraction < 1.0) {
            return Err(Error::Config(format!(
                "run.eval_fraction must lie in (0, 1), got {eval_fraction}"
            )));
        }
        let weighting = match p.get("run.weighting").unwrap_or("uniform") {
            "uniform" => Weighting::Uniform,
            "by_examples" => Weighting::ByExamples,
            other => {
                return Err(Error::Config(format!(
                    "run.weighting must be `uniform` or `by_examples`, got `{other}`"
                )))
            }
        };
        let threads: usize = p.parse("run.threads", 1)?;
        if threads == 0 {
            return Err(Error::Config("run.threads must be >= 1".into()));
        }
        let target_fraction: f64 = p.parse("run.target_fraction", 0.5)?;
        if !(target_fraction.is_finite() && target_fraction > 0.0 && target_fraction < 1.0) {
            return Err(Error::Config(format!(
                "run.target_fraction must lie in (0, 1), got {target_fraction}"
            )));
        }

        // every key is parsed and range-checked even when the active
        // source/kind selectors leave it unused, so a bad value never hides
        // behind a selector default
        let num_classes: usize = p.parse("data.num_classes", 10)?;
        if num_classes < 2 {
            return Err(Error::Config("data.num_classes must be >= 2".into()));
        }
        let input_dim: usize = p.parse("data.input_dim", 50)?;
        if input_dim == 0 {
            return Err(Error::Config("data.input_dim must be >= 1".into()));
        }
        let per_class: usize = p.parse("data.per_class", 100)?;
        if per_class == 0 {
            return Err(Error::Config("data.per_class must be >= 1".into()));
        }
        let spread: f64 = p.parse("data.spread", 1.0)?;
        if !(spread.is_finite() && spread > 0.0) {
            return Err(Error::Config(format!(
                "data.spread must be > 0, got {spread}"
            )));
        }
        let source = match p.get("data.source").unwrap_or("synthetic") {
            "synthetic" => DataSource::Synthetic {
                num_classes,
                input_dim,
                per_class,
                spread,
            },
            "csv" => {
                let path = p.get("data.path").ok_or_else(|| {
                    Error::Config("data.source = csv requires data.path".into())
                })?;
                DataSource::Csv {
                    path: PathBuf::from(path),
                    label_column: p.get("data.label_column").unwrap_or("label").to_string(),
                    num_classes,
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "data.source must be `synthetic` or `csv`, got `{other}`"
                )))
            }
        };
        let scale_span: f64 = p.parse("data.scale_span", 1.0)?;
        if !(scale_span.is_finite() && scale_span >= 1.0) {
            return Err(Error::Config(format!(
                "data.scale_span must be >= 1, got {scale_span}"
            )));
        }

        let alpha: f64 = p.parse("partition.alpha", 0.5)?;
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::Config(format!(
                "partition.alpha must be > 0, got {alpha}"
            )));
        }
        let zipf_s: f64 = p.parse("partition.zipf_s", 1.0)?;
        if !(zipf_s.is_finite() && zipf_s >= 0.0) {
            return Err(Error::Config(format!(
                "partition.zipf_s must be >= 0, got {zipf_s}"
            )));
        }
        let partition = match p.get("partition.kind").unwrap_or("dirichlet") {
            "dirichlet" => PartitionKind::Dirichlet { alpha },
            "zipf" => PartitionKind::Zipf { s: zipf_s },
            other => {
                return Err(Error::Config(format!(
                    "partition.kind must be `dirichlet` or `zipf`, got `{other}`"
                )))
            }
        };

        let num_clients: usize = p.parse("clients.count", 4)?;
        if num_clients == 0 {
            return Err(Error::Config("clients.count must be >= 1".into()));
        }
        let sampling_ratio: f64 = p.parse("clients.sampling_ratio", 0.5)?;
        if !(sampling_ratio.is_finite() && sampling_ratio > 0.0 && sampling_ratio <= 1.0) {
            return Err(Error::Config(format!(
                "clients.sampling_ratio must lie in (0, 1], got {sampling_ratio}"
            )));
        }

        let client = ClientConfig {
            learning_rate: p.parse("client.lr", 0.001)?,
            momentum: p.parse("client.momentum", 0.9)?,
            local_epochs: p.parse("client.epochs", 1)?,
            batch_size: p.parse("client.batch_size", 32)?,
            shuffle: p.parse_bool("client.shuffle", true)?,
        };
        client.validate().map_err(|e| Error::Config(e.to_string()))?;

        let model_kind = match p.get("model.kind").unwrap_or("logistic_regression") {
            "logistic_regression" => ModelKind::LogisticRegression,
            "mlp" => ModelKind::MlpOneHidden,
            other => {
                return Err(Error::Config(format!(
                    "model.kind must be `logistic_regression` or `mlp`, got `{other}`"
                )))
            }
        };
        let hidden_dim: usize = p.parse("model.hidden_dim", 32)?;
        if hidden_dim == 0 {
            return Err(Error::Config("model.hidden_dim must be >= 1".into()));
        }

        let server_rule = match p.get("server.rule").unwrap_or("fedavg") {
            "fedavg" => ServerRule::FedAvg,
            "fedavgm" => ServerRule::FedAvgM,
            "fedadagrad" => ServerRule::FedAdagrad,
            "fedadam" => ServerRule::FedAdam,
            "fedyogi" => ServerRule::FedYogi,
            other => {
                return Err(Error::Config(format!(
                    "server.rule must be one of fedavg, fedavgm, fedadagrad, fedadam, fedyogi; got `{other}`"
                )))
            }
        };
        let defaults = ServerHyper::defaults_for(server_rule);
        let server_hyper = ServerHyper {
            server_lr: p.parse("server.lr", defaults.server_lr)?,
            beta1: p.parse("server.beta1", defaults.beta1)?,
            beta2: p.parse("server.beta2", defaults.beta2)?,
            tau: p.parse("server.tau", defaults.tau)?,
        };
        server_hyper
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;

        let rank: usize = p.parse("compress.rank", 2)?;
        let keep_fraction: f64 = p.parse("compress.keep_fraction", 0.1)?;
        let bits: u8 = p.parse("compress.bits", 8)?;
        let compression = match p.get("compress.kind").unwrap_or("identity") {
            "identity" => CompressionScheme::Identity,
            "low_rank" => CompressionScheme::LowRank { rank },
            "random_mask" => CompressionScheme::RandomMask { keep_fraction },
            "subsample" => CompressionScheme::Subsample { keep_fraction },
            "quantize" => CompressionScheme::Quantize { bits },
            "rotate_quantize" => CompressionScheme::RotateQuantize { bits },
            other => {
                return Err(Error::Config(format!(
                    "compress.kind must be one of identity, low_rank, random_mask, subsample, quantize, rotate_quantize; got `{other}`"
                )))
            }
        };
        compression
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        // inactive compressor knobs still get range-checked when set
        for probe in [
            CompressionScheme::LowRank { rank },
            CompressionScheme::RandomMask { keep_fraction },
            CompressionScheme::Quantize { bits },
        ] {
            probe.validate().map_err(|e| Error::Config(e.to_string()))?;
        }

        let net_mix = NetMix {
            fraction_3g: p.parse("net.fraction_3g", 0.0)?,
            compute_rate: p.parse("net.compute_rate", 1e4)?,
            availability: p.parse("net.availability", 1.0)?,
        };
        net_mix.validate().map_err(|e| Error::Config(e.to_string()))?;

        let net_alpha: f64 = p.parse("net.alpha", 2.0)?;
        if !(net_alpha.is_finite() && net_alpha >= 0.0) {
            return Err(Error::Config(format!(
                "net.alpha must be >= 0, got {net_alpha}"
            )));
        }
        let sampling = match p.get("net.sampling").unwrap_or("uniform") {
            "uniform" => SamplingStrategy::Uniform,
            "speed_adaptive" => SamplingStrategy::SpeedAdaptive { alpha: net_alpha },
            other => {
                return Err(Error::Config(format!(
                    "net.sampling must be `uniform` or `speed_adaptive`, got `{other}`"
                )))
            }
        };

        Ok(RunConfig {
            rounds,
            seed,
            eval_fraction,
            weighting,
            threads,
            target_fraction,
            source,
            scale_span,
            partition,
            num_clients,
            sampling_ratio,
            client,
            model_kind,
            hidden_dim,
            server_rule,
            server_hyper,
            compression,
            net_mix,
            sampling,
            raw: map,
        })
    }

    /// Every effective setting as `(key, value)` pairs in file order,
    /// defaults included. Rendering these as `key = value` lines reproduces
    /// this config exactly.
    pub fn resolved(&self) -> Vec<(String, String)> {
        fn kv(key: &str, value: impl Display) -> (String, String) {
            (key.to_string(), value.to_string())
        }
        let mut out = vec![
            kv("run.rounds", self.rounds),
            kv("run.seed", self.seed),
            kv("run.eval_fraction", self.eval_fraction),
            kv("run.weighting", self.weighting.name()),
            kv("run.threads", self.threads),
            kv("run.target_fraction", self.target_fraction),
        ];
        match &self.source {
            DataSource::Synthetic {
                num_classes,
                input_dim,
                per_class,
                spread,
            } => {
                out.push(kv("data.source", "synthetic"));
                out.push(kv("data.num_classes", num_classes));
                out.push(kv("data.input_dim", input_dim));
                out.push(kv("data.per_class", per_class));
                out.push(kv("data.spread", spread));
            }
            DataSource::Csv {
                path,
                label_column,
                num_classes,
            } => {
                out.push(kv("data.source", "csv"));
                out.push(kv("data.path", path.display()));
                out.push(kv("data.label_column", label_column));
                out.push(kv("data.num_classes", num_classes));
            }
        }
        out.push(kv("data.scale_span", self.scale_span));
        match self.partition {
            PartitionKind::Dirichlet { alpha } => {
                out.push(kv("partition.kind", "dirichlet"));
                out.push(kv("partition.alpha", alpha));
            }
            PartitionKind::Zipf { s } => {
                out.push(kv("partition.kind", "zipf"));
                out.push(kv("partition.zipf_s", s));
            }
        }
        out.push(kv("clients.count", self.num_clients));
        out.push(kv("clients.sampling_ratio", self.sampling_ratio));
        out.push(kv("client.lr", self.client.learning_rate));
        out.push(kv("client.momentum", self.client.momentum));
        out.push(kv("client.epochs", self.client.local_epochs));
        out.push(kv("client.batch_size", self.client.batch_size));
        out.push(kv("client.shuffle", self.client.shuffle));
        out.push(kv(
            "model.kind",
            match self.model_kind {
                ModelKind::LogisticRegression => "logistic_regression",
                ModelKind::MlpOneHidden => "mlp",
            },
        ));
        if self.model_kind == ModelKind::MlpOneHidden {
            out.push(kv("model.hidden_dim", self.hidden_dim));
        }
        out.push(kv("server.rule", self.server_rule.name()));
        out.push(kv("server.lr", self.server_hyper.server_lr));
        if self.server_rule != ServerRule::FedAvg {
            out.push(kv("server.beta1", self.server_hyper.beta1));
        }
        if self.server_rule.is_adaptive() {
            out.push(kv("server.beta2", self.server_hyper.beta2));
            out.push(kv("server.tau", self.server_hyper.tau));
        }
        out.push(kv("compress.kind", self.compression.name()));
        match self.compression {
            CompressionScheme::Identity => {}
            CompressionScheme::LowRank { rank } => out.push(kv("compress.rank", rank)),
            CompressionScheme::RandomMask { keep_fraction }
            | CompressionScheme::Subsample { keep_fraction } => {
                out.push(kv("compress.keep_fraction", keep_fraction))
            }
            CompressionScheme::Quantize { bits }
            | CompressionScheme::RotateQuantize { bits } => {
                out.push(kv("compress.bits", bits))
            }
        }
        out.push(kv("net.fraction_3g", self.net_mix.fraction_3g));
        out.push(kv("net.compute_rate", self.net_mix.compute_rate));
        out.push(kv("net.availability", self.net_mix.availability));
        out.push(kv("net.sampling", self.sampling.name()));
        if let SamplingStrategy::SpeedAdaptive { alpha } = self.sampling {
            out.push(kv("net.alpha", alpha));
        }
        out
    }
}

/// One `compare` variant: a display label plus the overrides it applies.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepVariant {
    pub label: String,
    pub overrides: Vec<(String, String)>,
}

/// Parse a sweep file: one variant per non-comment line, formatted
/// `label key=value [key=value ...]`. A bare label is a valid variant (runs
/// the base config unchanged).
pub fn parse_sweep(text: &str) -> Result<Vec<SweepVariant>> {
    let mut variants: Vec<SweepVariant> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let label = tokens.next().expect("non-empty line").to_string();
        if label.contains('=') {
            return Err(Error::Config(format!(
                "sweep line {}: first token must be a label, got `{label}`",
                lineno + 1
            )));
        }
        if variants.iter().any(|v| v.label == label) {
            return Err(Error::Config(format!(
                "sweep line {}: duplicate label `{label}`",
                lineno + 1
            )));
        }
        let mut overrides = Vec::new();
        for token in tokens {
            let (key, value) = token.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "sweep line {}: expected key=value, got `{token}`",
                    lineno + 1
                ))
            })?;
            overrides.push((key.to_string(), value.to_string()));
        }
        variants.push(SweepVariant { label, overrides });
    }
    if variants.is_empty() {
        return Err(Error::EmptyInput("sweep file has no variants"));
    }
    Ok(variants)
}

/// Spec for `gen-data`: the synthetic generator's knobs in the same flat
/// format, unprefixed (`num_classes = 10`, `seed = 7`, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct GenDataSpec {
    pub num_classes: usize,
    pub input_dim: usize,
    pub per_class: usize,
    pub spread: f64,
    pub scale_span: f64,
    pub seed: u64,
}

impl GenDataSpec {
    pub fn from_str_text(text: &str) -> Result<GenDataSpec> {
        let map = parse_pairs(text)?;
        const KEYS: &[&str] = &[
            "num_classes",
            "input_dim",
            "per_class",
            "spread",
            "scale_span",
            "seed",
        ];
        for key in map.keys() {
            if !KEYS.contains(&key.as_str()) {
                return Err(Error::Config(format!("unknown gen-data key `{key}`")));
            }
        }
        let p = Pairs { map: &map };
        let spec = GenDataSpec {
            num_classes: p.parse("num_classes", 10)?,
            input_dim: p.parse("input_dim", 50)?,
            per_class: p.parse("per_class", 100)?,
            spread: p.parse("spread", 1.0)?,
            scale_span: p.parse("scale_span", 1.0)?,
            seed: p.parse("seed", 42)?,
        };
        if spec.num_classes < 2 {
            return Err(Error::Config("num_classes must be >= 2".into()));
        }
        if spec.input_dim == 0 || spec.per_class == 0 {
            return Err(Error::Config(
                "input_dim and per_class must be >= 1".into(),
            ));
        }
        if !(spec.spread.is_finite() && spec.spread > 0.0) {
            return Err(Error::Config(format!(
                "spread must be > 0, got {}",
                spec.spread
            )));
        }
        if !(spec.scale_span.is_finite() && spec.scale_span >= 1.0) {
            return Err(Error::Config(format!(
                "scale_span must be >= 1, got {}",
                spec.scale_span
            )));
        }
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> Result<GenDataSpec> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_str_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_all_defaults() {
        let cfg = RunConfig::from_str_text("").unwrap();
        assert_eq!(cfg.rounds, 100);
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.num_clients, 4);
        assert_eq!(cfg.sampling_ratio, 0.5);
        assert_eq!(cfg.client.learning_rate, 0.001);
        assert_eq!(cfg.client.momentum, 0.9);
        assert_eq!(cfg.server_rule, ServerRule::FedAvg);
        assert_eq!(cfg.server_hyper.server_lr, 1.0);
        assert_eq!(cfg.compression, CompressionScheme::Identity);
        assert_eq!(cfg.weighting, Weighting::Uniform);
        assert!(matches!(
            cfg.source,
            DataSource::Synthetic {
                num_classes: 10,
                input_dim: 50,
                per_class: 100,
                ..
            }
        ));
        assert!(matches!(cfg.partition, PartitionKind::Dirichlet { alpha } if alpha == 0.5));
    }

    #[test]
    fn unknown_key_is_an_error_naming_the_key() {
        let err = RunConfig::from_str_text("serverr.rule = fedavg").unwrap_err();
        assert!(err.to_string().contains("serverr.rule"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn duplicate_key_is_an_error() {
        let err = RunConfig::from_str_text("run.seed = 1\nrun.seed = 2").unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn comments_and_blanks_are_skipped() {
        let cfg = RunConfig::from_str_text("# a comment\n\n  run.seed = 7\n").unwrap();
        assert_eq!(cfg.seed, 7);
    }

    #[test]
    fn adaptive_rules_default_to_small_server_lr() {
        for rule in ["fedadagrad", "fedadam", "fedyogi"] {
            let cfg = RunConfig::from_str_text(&format!("server.rule = {rule}")).unwrap();
            assert_eq!(cfg.server_hyper.server_lr, 0.01, "{rule}");
            assert_eq!(cfg.server_hyper.tau, 1e-3);
        }
        let cfg = RunConfig::from_str_text("server.rule = fedavgm").unwrap();
        assert_eq!(cfg.server_hyper.server_lr, 1.0);
        let cfg =
            RunConfig::from_str_text("server.rule = fedadam\nserver.lr = 0.5").unwrap();
        assert_eq!(cfg.server_hyper.server_lr, 0.5);
    }

    #[test]
    fn value_errors_name_the_key() {
        for bad in [
            "run.rounds = zero",
            "run.rounds = 0",
            "client.momentum = 1.5",
            "client.shuffle = yes",
            "compress.kind = gzip",
            "compress.bits = 9",
            "clients.sampling_ratio = 0",
            "data.source = csv",
            "net.availability = 0",
            "run.eval_fraction = 1.0",
        ] {
            let err = RunConfig::from_str_text(bad).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{bad} -> {err}");
        }
    }

    #[test]
    fn overrides_layer_on_top_and_revalidate() {
        let base = RunConfig::from_str_text("run.seed = 5\nserver.rule = fedadam").unwrap();
        let out = base
            .with_overrides(&[("run.seed".into(), "9".into())])
            .unwrap();
        assert_eq!(out.seed, 9);
        assert_eq!(out.server_rule, ServerRule::FedAdam);
        assert!(base
            .with_overrides(&[("compress.bits".into(), "99".into())])
            .is_err());
        assert!(base
            .with_overrides(&[("nope".into(), "1".into())])
            .is_err());
    }

    #[test]
    fn resolved_roundtrips_through_the_parser() {
        let cfg = RunConfig::from_str_text(
            "server.rule = fedyogi\ncompress.kind = quantize\ncompress.bits = 4\nnet.sampling = speed_adaptive\nmodel.kind = mlp\n",
        )
        .unwrap();
        let rendered: String = cfg
            .resolved()
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect();
        let reparsed = RunConfig::from_str_text(&rendered).unwrap();
        assert_eq!(reparsed.resolved(), cfg.resolved());
    }

    #[test]
    fn sweep_lines_parse_labels_and_overrides() {
        let sweep = parse_sweep(
            "# optimizers\nbase\navg server.rule=fedavg\nadam server.rule=fedadam server.lr=0.02\n",
        )
        .unwrap();
        assert_eq!(sweep.len(), 3);
        assert_eq!(sweep[0].label, "base");
        assert!(sweep[0].overrides.is_empty());
        assert_eq!(
            sweep[2].overrides,
            vec![
                ("server.rule".to_string(), "fedadam".to_string()),
                ("server.lr".to_string(), "0.02".to_string())
            ]
        );
        assert!(parse_sweep("a=b broken\n").is_err());
        assert!(parse_sweep("dup x=1\ndup y=2\n").is_err());
        assert!(parse_sweep("# nothing\n").is_err());
        assert!(parse_sweep("label stray_token\n").is_err());
    }

    #[test]
    fn gen_data_spec_parses_and_validates() {
        let spec = GenDataSpec::from_str_text("num_classes = 3\nseed = 9\nspread = 2.5\n").unwrap();
        assert_eq!(spec.num_classes, 3);
        assert_eq!(spec.seed, 9);
        assert_eq!(spec.spread, 2.5);
        assert_eq!(spec.input_dim, 50);
        assert!(GenDataSpec::from_str_text("bogus = 1").is_err());
        assert!(GenDataSpec::from_str_text("num_classes = 1").is_err());
    }
}
