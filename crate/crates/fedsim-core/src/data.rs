//! Datasets and how they get split across clients.
//!
//! Three sources of heterogeneity are modelled: label skew (per-class
//! Dirichlet proportions), quantity skew (Zipf shard sizes), and feature
//! scaling (a geometric per-coordinate ramp for ill-conditioned problems).
//! All partitioners are deterministic in their seed and produce shards that
//! are pairwise disjoint and cover the dataset exactly.

use crate::error::{Error, Result};
use crate::model::Batch;
use crate::seeds;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use std::path::Path;

/// In-memory classification dataset: `n x input_dim` features (row-major)
/// with integer labels in `0..num_classes`.
#[derive(Debug, Clone)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    input_dim: usize,
    num_classes: usize,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        input_dim: usize,
        num_classes: usize,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyInput("dataset requires at least one example"));
        }
        if input_dim == 0 {
            return Err(Error::InvalidArgument("input_dim must be >= 1".into()));
        }
        if features.len() != labels.len() * input_dim {
            return Err(Error::DimMismatch {
                context: "dataset features",
                left: features.len(),
                right: labels.len() * input_dim,
            });
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("dataset feature {i}"),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            features,
            labels,
            input_dim,
            num_classes,
        })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn feature_row(&self, i: usize) -> &[f64] {
        &self.features[i * self.input_dim..(i + 1) * self.input_dim]
    }

    /// Example indices grouped by label, each group in dataset order.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.num_classes];
        for (i, &y) in self.labels.iter().enumerate() {
            groups[y].push(i);
        }
        groups
    }

    /// Materialize the rows named by `indices` as a new dataset.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        let mut features = Vec::with_capacity(indices.len() * self.input_dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &ix in indices {
            if ix >= self.n() {
                return Err(Error::InvalidArgument(format!(
                    "index {ix} out of bounds for dataset of {}",
                    self.n()
                )));
            }
            features.extend_from_slice(self.feature_row(ix));
            labels.push(self.labels[ix]);
        }
        Dataset::new(features, labels, self.input_dim, self.num_classes)
    }

    /// Gather the rows named by `indices` into a training batch.
    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let mut features = Vec::with_capacity(indices.len() * self.input_dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &ix in indices {
            features.extend_from_slice(self.feature_row(ix));
            labels.push(self.labels[ix]);
        }
        Batch::new(features, labels, self.input_dim)
    }
}

/// One client's slice of a dataset: indices into the parent, kept sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shard {
    pub owner: usize,
    pub indices: Vec<usize>,
}

impl Shard {
    pub fn n_examples(&self) -> usize {
        self.indices.len()
    }
}

/// Gaussian cluster per class: the class mean sits on a random direction at
/// radius `4 * cluster_spread` and examples scatter around it with standard
/// deviation `cluster_spread` per coordinate. Examples are emitted grouped
/// by class (class 0 first).
pub fn synth_generate(
    num_classes: usize,
    input_dim: usize,
    n_per_class: usize,
    cluster_spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_classes == 0 || input_dim == 0 || n_per_class == 0 {
        return Err(Error::InvalidArgument(
            "num_classes, input_dim, n_per_class must all be >= 1".into(),
        ));
    }
    if !(cluster_spread.is_finite() && cluster_spread > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "cluster_spread must be positive and finite, got {cluster_spread}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means = Vec::with_capacity(num_classes);
    for _ in 0..num_classes {
        let mut dir: Vec<f64> = (0..input_dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            dir[0] = 1.0;
        } else {
            for v in dir.iter_mut() {
                *v /= norm;
            }
        }
        for v in dir.iter_mut() {
            *v *= 4.0 * cluster_spread;
        }
        means.push(dir);
    }

    let n = num_classes * n_per_class;
    let mut features = Vec::with_capacity(n * input_dim);
    let mut labels = Vec::with_capacity(n);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..n_per_class {
            for &m in mean.iter() {
                let noise: f64 = StandardNormal.sample(&mut rng);
                features.push(m + cluster_spread * noise);
            }
            labels.push(c);
        }
    }
    Dataset::new(features, labels, input_dim, num_classes)
}

/// Multiply coordinate `j` by `span^(-j/(d-1))`, so the first feature keeps
/// scale 1 and the last shrinks by the full span. A large span makes the
/// problem badly conditioned for un-preconditioned SGD while leaving labels
/// untouched.
pub fn scale_features_geometric(data: &Dataset, span: f64) -> Result<Dataset> {
    if !(span.is_finite() && span >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "scale span must be >= 1, got {span}"
        )));
    }
    let d = data.input_dim();
    let factors: Vec<f64> = (0..d)
        .map(|j| {
            if d == 1 {
                1.0
            } else {
                span.powf(-(j as f64) / (d as f64 - 1.0))
            }
        })
        .collect();
    let features = data
        .features()
        .iter()
        .enumerate()
        .map(|(k, &v)| v * factors[k % d])
        .collect();
    Dataset::new(features, data.labels().to_vec(), d, data.num_classes())
}

/// Integer apportionment: floor every quota, then hand the leftover units to
/// the largest fractional remainders (ties to the lower index).
fn largest_remainder(quotas: &[f64], total: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor().max(0.0) as usize).collect();
    let assigned: usize = counts.iter().sum();
    let leftover = total.saturating_sub(assigned);
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    // stable sort: equal remainders keep ascending index order
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap()
    });
    for &i in order.iter().take(leftover) {
        counts[i] += 1;
    }
    counts
}

fn shards_from(mut per_client: Vec<Vec<usize>>) -> Vec<Shard> {
    per_client
        .iter_mut()
        .enumerate()
        .map(|(owner, indices)| {
            indices.sort_unstable();
            Shard {
                owner,
                indices: std::mem::take(indices),
            }
        })
        .collect()
}

/// Label-skew partition: for every class, per-client proportions are drawn
/// from a symmetric Dirichlet(alpha) and realized by largest-remainder
/// counts over that class's examples. Draws are retried (up to 100 times)
/// until every client owns at least one example.
pub fn partition_dirichlet(
    data: &Dataset,
    num_clients: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<Shard>> {
    if num_clients == 0 {
        return Err(Error::InvalidArgument("num_clients must be >= 1".into()));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "dirichlet alpha must be positive, got {alpha}"
        )));
    }
    let gamma = Gamma::new(alpha, 1.0)
        .map_err(|e| Error::InvalidArgument(format!("dirichlet alpha {alpha}: {e}")))?;
    let by_class = data.class_indices();

    const MAX_ATTEMPTS: usize = 100;
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = seeds::stream(seed, "dirichlet", &[attempt as u64]);
        let mut per_client: Vec<Vec<usize>> = vec![Vec::new(); num_clients];
        for class_indices in by_class.iter().filter(|g| !g.is_empty()) {
            let draws: Vec<f64> = (0..num_clients).map(|_| gamma.sample(&mut rng)).collect();
            let total: f64 = draws.iter().sum();
            let quotas: Vec<f64> = if total > 0.0 && total.is_finite() {
                draws
                    .iter()
                    .map(|g| g / total * class_indices.len() as f64)
                    .collect()
            } else {
                // all-zero gamma underflow: fall back to even quotas
                vec![class_indices.len() as f64 / num_clients as f64; num_clients]
            };
            let counts = largest_remainder(&quotas, class_indices.len());
            let mut order = class_indices.clone();
            order.shuffle(&mut rng);
            let mut cursor = 0;
            for (client, &count) in counts.iter().enumerate() {
                per_client[client].extend_from_slice(&order[cursor..cursor + count]);
                cursor += count;
            }
        }
        if per_client.iter().all(|s| !s.is_empty()) {
            return Ok(shards_from(per_client));
        }
    }
    Err(Error::PartitionRetriesExhausted {
        attempts: MAX_ATTEMPTS,
        hint: format!(
            "could not give each of {num_clients} clients an example from n={}; \
             use more data or a larger alpha",
            data.n()
        ),
    })
}

/// Quantity-skew partition: shard sizes proportional to `rank^(-zipf_s)`
/// (rank 1 = client 0), rounded by largest remainder to sum exactly `n`,
/// then topped up so every client keeps at least one example. Examples are
/// assigned by a seeded shuffle.
pub fn partition_quantity_skew(
    data: &Dataset,
    num_clients: usize,
    zipf_s: f64,
    seed: u64,
) -> Result<Vec<Shard>> {
    if num_clients == 0 {
        return Err(Error::InvalidArgument("num_clients must be >= 1".into()));
    }
    if num_clients > data.n() {
        return Err(Error::InvalidArgument(format!(
            "cannot split {} examples across {num_clients} clients",
            data.n()
        )));
    }
    if !(zipf_s.is_finite() && zipf_s >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "zipf_s must be >= 0, got {zipf_s}"
        )));
    }
    let n = data.n();
    let weights: Vec<f64> = (0..num_clients)
        .map(|i| ((i + 1) as f64).powf(-zipf_s))
        .collect();
    let total: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| w / total * n as f64).collect();
    let mut counts = largest_remainder(&quotas, n);

    // every client keeps >= 1 example: take from the currently largest shard
    for i in 0..num_clients {
        while counts[i] == 0 {
            let donor = (0..num_clients)
                .max_by(|&a, &b| counts[a].cmp(&counts[b]))
                .expect("non-empty");
            counts[donor] -= 1;
            counts[i] += 1;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seeds::stream(seed, "zipf", &[]);
    order.shuffle(&mut rng);
    let mut per_client = Vec::with_capacity(num_clients);
    let mut cursor = 0;
    for &count in &counts {
        per_client.push(order[cursor..cursor + count].to_vec());
        cursor += count;
    }
    Ok(shards_from(per_client))
}

/// Split `0..n` into (train, eval) index sets by seeded shuffle. The eval
/// side gets `max(1, floor(eval_fraction * n))` examples; both sides are
/// returned sorted.
pub fn holdout_split(n: usize, eval_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::InvalidArgument(
            "holdout split needs at least 2 examples".into(),
        ));
    }
    if !(eval_fraction.is_finite() && eval_fraction > 0.0 && eval_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "eval_fraction must lie in (0, 1), got {eval_fraction}"
        )));
    }
    let n_eval = ((eval_fraction * n as f64).floor() as usize).max(1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seeds::stream(seed, "holdout", &[]);
    order.shuffle(&mut rng);
    let mut eval: Vec<usize> = order[..n_eval].to_vec();
    let mut train: Vec<usize> = order[n_eval..].to_vec();
    eval.sort_unstable();
    train.sort_unstable();
    Ok((train, eval))
}

/// Load a comma-separated dataset. If the first cell of the first row does
/// not parse as a number the row is treated as a header. The label column is
/// chosen by header name, or by zero-based column index when no name
/// matches (or no header exists); all remaining columns become features in
/// file order. Row/column numbers in errors are 1-based.
pub fn load_csv(path: &Path, label_column: &str, num_classes: usize) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::File {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let rows: Vec<(usize, Vec<&str>)> = text
        .lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| (i + 1, line.split(',').map(str::trim).collect()))
        .collect();
    if rows.is_empty() {
        return Err(Error::EmptyInput("csv file has no rows"));
    }

    let ncols = rows[0].1.len();
    let has_header = rows[0].1[0].parse::<f64>().is_err();
    let header: Option<&[&str]> = has_header.then(|| rows[0].1.as_slice());

    let label_col = match header.and_then(|h| h.iter().position(|name| *name == label_column)) {
        Some(ix) => ix,
        None => label_column.parse::<usize>().map_err(|_| {
            Error::Config(format!(
                "label column `{label_column}` is neither a header name nor a column index"
            ))
        })?,
    };
    if label_col >= ncols {
        return Err(Error::Config(format!(
            "label column {label_col} out of range for {ncols} columns"
        )));
    }
    if ncols < 2 {
        return Err(Error::Config(
            "csv needs at least one feature column besides the label".into(),
        ));
    }

    let data_rows = &rows[usize::from(has_header)..];
    if data_rows.is_empty() {
        return Err(Error::EmptyInput("csv file has no data rows"));
    }

    let mut features = Vec::with_capacity(data_rows.len() * (ncols - 1));
    let mut labels = Vec::with_capacity(data_rows.len());
    for (row_no, cells) in data_rows {
        if cells.len() != ncols {
            return Err(Error::CsvParse {
                row: *row_no,
                col: cells.len(),
                message: format!("expected {ncols} columns, found {}", cells.len()),
            });
        }
        for (col_ix, cell) in cells.iter().enumerate() {
            if col_ix == label_col {
                let value: f64 = cell.parse().map_err(|_| Error::CsvParse {
                    row: *row_no,
                    col: col_ix + 1,
                    message: format!("unparsable label `{cell}`"),
                })?;
                if value.fract() != 0.0 || value < 0.0 || value >= num_classes as f64 {
                    return Err(Error::CsvParse {
                        row: *row_no,
                        col: col_ix + 1,
                        message: format!(
                            "label `{cell}` is not an integer in 0..{num_classes}"
                        ),
                    });
                }
                labels.push(value as usize);
            } else {
                let value: f64 = cell.parse().map_err(|_| Error::CsvParse {
                    row: *row_no,
                    col: col_ix + 1,
                    message: format!("unparsable value `{cell}`"),
                })?;
                features.push(value);
            }
        }
    }
    Dataset::new(features, labels, ncols - 1, num_classes)
}

/// Write a dataset as CSV with header `f0,..,f{d-1},label`. Feature values
/// use the shortest representation that round-trips, so a written file
/// reloads bit-identically.
pub fn write_csv(data: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    let d = data.input_dim();
    for j in 0..d {
        out.push_str(&format!("f{j},"));
    }
    out.push_str("label\n");
    for i in 0..data.n() {
        for v in data.feature_row(i) {
            out.push_str(&format!("{v},"));
        }
        out.push_str(&format!("{}\n", data.labels()[i]));
    }
    std::fs::write(path, out).map_err(|e| Error::File {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{self, ModelSpec};
    use crate::param::{axpy, ParamVector};

    fn assert_partition_exact(shards: &[Shard], n: usize) {
        let mut seen = vec![false; n];
        for shard in shards {
            let mut prev = None;
            for &ix in &shard.indices {
                assert!(ix < n, "index out of bounds");
                assert!(!seen[ix], "index {ix} assigned twice");
                seen[ix] = true;
                if let Some(p) = prev {
                    assert!(p < ix, "shard indices not sorted");
                }
                prev = Some(ix);
            }
        }
        assert!(seen.iter().all(|&s| s), "partition does not cover dataset");
    }

    #[test]
    fn synth_is_deterministic() {
        let a = synth_generate(3, 4, 5, 0.7, 99).unwrap();
        let b = synth_generate(3, 4, 5, 0.7, 99).unwrap();
        assert_eq!(a.labels(), b.labels());
        assert!(a
            .features()
            .iter()
            .zip(b.features())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn synth_size_arithmetic() {
        let ds = synth_generate(3, 2, 1, 1.0, 0).unwrap();
        assert_eq!(ds.n(), 3);
        assert_eq!(ds.labels(), &[0, 1, 2]);
    }

    #[test]
    fn tiny_spread_clusters_are_separable() {
        // tight clusters: class means ~7 noise-sigmas apart under this seed,
        // so logistic regression trained to convergence must fit perfectly
        let ds = synth_generate(2, 5, 50, 0.01, 1).unwrap();
        let spec = ModelSpec::logistic_regression(5, 2).unwrap();
        let mut params = ParamVector::zeros(spec.param_dim());
        let all: Vec<usize> = (0..ds.n()).collect();
        let batch = ds.batch(&all).unwrap();
        for _ in 0..500 {
            let g = model::grad(&spec, &params, &batch).unwrap();
            params = axpy(-50.0, &g, &params).unwrap();
        }
        let metrics = model::evaluate(&spec, &params, &ds, &all).unwrap();
        assert_eq!(metrics.accuracy, 1.0);
        assert!(metrics.mean_loss < 1e-2, "loss {}", metrics.mean_loss);
    }

    #[test]
    fn dirichlet_single_client_gets_everything() {
        let ds = synth_generate(3, 2, 10, 1.0, 1).unwrap();
        let shards = partition_dirichlet(&ds, 1, 0.5, 42).unwrap();
        assert_eq!(shards.len(), 1);
        assert_eq!(shards[0].indices, (0..30).collect::<Vec<_>>());
    }

    #[test]
    fn dirichlet_partitions_exactly() {
        let ds = synth_generate(4, 2, 25, 1.0, 3).unwrap();
        for seed in [0, 1, 2] {
            for alpha in [0.1, 1.0, 100.0] {
                let shards = partition_dirichlet(&ds, 5, alpha, seed).unwrap();
                assert_eq!(shards.len(), 5);
                assert_partition_exact(&shards, ds.n());
                assert!(shards.iter().all(|s| s.n_examples() >= 1));
            }
        }
        let a = partition_dirichlet(&ds, 5, 0.5, 9).unwrap();
        let b = partition_dirichlet(&ds, 5, 0.5, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dirichlet_high_alpha_is_balanced() {
        // alpha=1000 concentrates proportions near 1/m; every client's class
        // histogram must sit within 20% of the global one
        let ds = synth_generate(4, 2, 2500, 1.0, 11).unwrap();
        for seed in 0..20 {
            let shards = partition_dirichlet(&ds, 10, 1000.0, seed).unwrap();
            for shard in &shards {
                let mut hist = vec![0usize; 4];
                for &ix in &shard.indices {
                    hist[ds.labels()[ix]] += 1;
                }
                for &count in &hist {
                    let frac = count as f64 / shard.n_examples() as f64;
                    assert!(
                        (frac - 0.25).abs() <= 0.05,
                        "class fraction {frac} strays from 0.25 at seed {seed}"
                    );
                }
            }
        }
    }

    #[test]
    fn dirichlet_low_alpha_is_skewed() {
        let ds = synth_generate(4, 2, 2500, 1.0, 11).unwrap();
        let mut skewed_seeds = 0;
        for seed in 0..20 {
            let shards = partition_dirichlet(&ds, 10, 0.1, seed).unwrap();
            let any_dominated = shards.iter().any(|shard| {
                let mut hist = vec![0usize; 4];
                for &ix in &shard.indices {
                    hist[ds.labels()[ix]] += 1;
                }
                hist.iter()
                    .any(|&c| c as f64 > 0.5 * shard.n_examples() as f64)
            });
            skewed_seeds += usize::from(any_dominated);
        }
        assert!(
            skewed_seeds >= 15,
            "only {skewed_seeds}/20 seeds produced a dominated client"
        );
    }

    #[test]
    fn dirichlet_entropy_grows_with_alpha() {
        let ds = synth_generate(4, 2, 1000, 1.0, 5).unwrap();
        let mut means = Vec::new();
        for &alpha in &[0.05, 0.5, 5.0, 500.0] {
            let mut total = 0.0;
            let mut count = 0usize;
            for seed in 0..20 {
                let shards = partition_dirichlet(&ds, 8, alpha, seed).unwrap();
                for shard in &shards {
                    let mut hist = vec![0usize; 4];
                    for &ix in &shard.indices {
                        hist[ds.labels()[ix]] += 1;
                    }
                    let n = shard.n_examples() as f64;
                    let entropy: f64 = hist
                        .iter()
                        .filter(|&&c| c > 0)
                        .map(|&c| {
                            let p = c as f64 / n;
                            -p * p.ln()
                        })
                        .sum();
                    total += entropy;
                    count += 1;
                }
            }
            means.push(total / count as f64);
        }
        for pair in means.windows(2) {
            assert!(
                pair[1] >= pair[0],
                "mean label entropy not monotone in alpha: {means:?}"
            );
        }
    }

    #[test]
    fn dirichlet_retries_then_reports() {
        let ds = synth_generate(2, 2, 1, 1.0, 0).unwrap(); // n=2
        let err = partition_dirichlet(&ds, 3, 0.5, 0).unwrap_err();
        match err {
            Error::PartitionRetriesExhausted { attempts, .. } => assert_eq!(attempts, 100),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn zipf_harmonic_sizes() {
        let ds = synth_generate(4, 2, 25, 1.0, 2).unwrap(); // n=100
        let shards = partition_quantity_skew(&ds, 4, 1.0, 17).unwrap();
        let sizes: Vec<usize> = shards.iter().map(Shard::n_examples).collect();
        assert_eq!(sizes, vec![48, 24, 16, 12]);
        assert_partition_exact(&shards, 100);
    }

    #[test]
    fn zipf_zero_exponent_is_even() {
        let ds = synth_generate(2, 2, 51, 1.0, 2).unwrap(); // n=102
        let shards = partition_quantity_skew(&ds, 4, 0.0, 3).unwrap();
        let sizes: Vec<usize> = shards.iter().map(Shard::n_examples).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 102);
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn zipf_keeps_every_client_nonempty() {
        let ds = synth_generate(2, 2, 3, 1.0, 2).unwrap(); // n=6
        let shards = partition_quantity_skew(&ds, 6, 3.0, 1).unwrap();
        assert!(shards.iter().all(|s| s.n_examples() == 1));
        assert_partition_exact(&shards, 6);
    }

    #[test]
    fn zipf_rejects_more_clients_than_examples() {
        let ds = synth_generate(2, 2, 2, 1.0, 2).unwrap(); // n=4
        assert!(partition_quantity_skew(&ds, 5, 1.0, 0).is_err());
    }

    #[test]
    fn zipf_is_deterministic() {
        let ds = synth_generate(3, 2, 20, 1.0, 8).unwrap();
        let a = partition_quantity_skew(&ds, 4, 1.5, 12).unwrap();
        let b = partition_quantity_skew(&ds, 4, 1.5, 12).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn holdout_split_partitions() {
        let (train, eval) = holdout_split(10, 0.2, 4).unwrap();
        assert_eq!(eval.len(), 2);
        assert_eq!(train.len(), 8);
        let mut all: Vec<usize> = train.iter().chain(&eval).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        let again = holdout_split(10, 0.2, 4).unwrap();
        assert_eq!(again.0, train);
        assert_eq!(again.1, eval);
        // a different seed moves the boundary
        assert_ne!(holdout_split(10, 0.2, 5).unwrap().1, eval);
    }

    #[test]
    fn holdout_split_keeps_one_eval_minimum() {
        let (train, eval) = holdout_split(3, 0.05, 0).unwrap();
        assert_eq!(eval.len(), 1);
        assert_eq!(train.len(), 2);
    }

    #[test]
    fn geometric_scaling_ramps_columns() {
        let ds = Dataset::new(vec![1.0, 1.0, 1.0, 1.0, 2.0, 4.0, 8.0, 16.0], vec![0, 1], 4, 2)
            .unwrap();
        let scaled = scale_features_geometric(&ds, 1000.0).unwrap();
        assert_eq!(scaled.feature_row(0)[0], 1.0);
        let last = scaled.feature_row(0)[3];
        assert!((last - 1e-3).abs() < 1e-15, "last column factor {last}");
        let mid = scaled.feature_row(1)[2] / 8.0;
        assert!((mid - 1000.0f64.powf(-2.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn csv_roundtrip_and_header_rules() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let ds = synth_generate(3, 4, 6, 0.5, 21).unwrap();
        write_csv(&ds, &path).unwrap();
        let back = load_csv(&path, "label", 3).unwrap();
        assert_eq!(back.n(), ds.n());
        assert_eq!(back.labels(), ds.labels());
        assert!(back
            .features()
            .iter()
            .zip(ds.features())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn csv_fixed_values_headerless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plain.csv");
        std::fs::write(&path, "1.5,2.5,0\n-1.0,0.25,1\n3.0,4.0,1\n").unwrap();
        let ds = load_csv(&path, "2", 2).unwrap();
        assert_eq!(ds.n(), 3);
        assert_eq!(ds.input_dim(), 2);
        assert_eq!(ds.labels(), &[0, 1, 1]);
        assert_eq!(ds.feature_row(1), &[-1.0, 0.25]);
    }

    #[test]
    fn csv_label_column_in_the_middle() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mid.csv");
        std::fs::write(&path, "a,label,b\n1.0,1,2.0\n3.0,0,4.0\n").unwrap();
        let ds = load_csv(&path, "label", 2).unwrap();
        assert_eq!(ds.labels(), &[1, 0]);
        assert_eq!(ds.feature_row(0), &[1.0, 2.0]);
        assert_eq!(ds.feature_row(1), &[3.0, 4.0]);
    }

    #[test]
    fn csv_errors_name_row_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "f0,label\n1.0,0\nx,1\n").unwrap();
        match load_csv(&path, "label", 2).unwrap_err() {
            Error::CsvParse { row, col, .. } => {
                assert_eq!((row, col), (3, 1));
            }
            other => panic!("unexpected error {other:?}"),
        }
        std::fs::write(&path, "f0,label\n1.0,7\n").unwrap();
        assert!(matches!(
            load_csv(&path, "label", 2).unwrap_err(),
            Error::CsvParse { row: 2, col: 2, .. }
        ));
    }

    #[test]
    fn csv_empty_and_missing_files_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        std::fs::write(&path, "").unwrap();
        assert!(load_csv(&path, "label", 2).is_err());
        assert!(matches!(
            load_csv(&dir.path().join("nope.csv"), "label", 2),
            Err(Error::File { .. })
        ));
    }

    #[test]
    fn select_materializes_rows() {
        let ds = Dataset::new(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], vec![0, 1, 0], 2, 2).unwrap();
        let sub = ds.select(&[2, 0]).unwrap();
        assert_eq!(sub.feature_row(0), &[5.0, 6.0]);
        assert_eq!(sub.feature_row(1), &[1.0, 2.0]);
        assert_eq!(sub.labels(), &[0, 0]);
        assert!(ds.select(&[3]).is_err());
    }
}
