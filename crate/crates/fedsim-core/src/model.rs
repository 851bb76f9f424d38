//! Small differentiable classifiers with closed-form gradients.
//!
//! Two kinds: multinomial logistic regression and a one-hidden-layer tanh
//! MLP, both under mean softmax cross-entropy. Parameters live in one flat
//! [`ParamVector`]; a layout table maps named `(rows x cols)` blocks into it,
//! which keeps the optimizers and codecs model-agnostic. Weight blocks are
//! stored input-major (rows = fan-in), so weight matrices are tall whenever
//! the input is wider than the output.

use crate::error::{Error, Result};
use crate::param::ParamVector;
use rand::distr::{Distribution, Uniform};
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    LogisticRegression,
    MlpOneHidden,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::LogisticRegression => "logistic_regression",
            ModelKind::MlpOneHidden => "mlp_one_hidden",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "logistic_regression" => Ok(ModelKind::LogisticRegression),
            "mlp_one_hidden" => Ok(ModelKind::MlpOneHidden),
            other => Err(Error::Config(format!("unknown model kind `{other}`"))),
        }
    }
}

/// One named block of the flat parameter vector, `rows x cols`, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayoutEntry {
    pub name: &'static str,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl LayoutEntry {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// True for blocks that are genuinely two-dimensional; bias vectors are
    /// `(n x 1)` and treated as raw vectors by the codecs.
    pub fn is_matrix(&self) -> bool {
        self.rows >= 2 && self.cols >= 2
    }
}

#[derive(Debug, Clone)]
pub struct ModelSpec {
    kind: ModelKind,
    input_dim: usize,
    num_classes: usize,
    hidden_dim: Option<usize>,
    layout: Vec<LayoutEntry>,
}

impl ModelSpec {
    pub fn logistic_regression(input_dim: usize, num_classes: usize) -> Result<Self> {
        check_dims(input_dim, num_classes)?;
        let layout = vec![
            LayoutEntry {
                name: "w",
                offset: 0,
                rows: input_dim,
                cols: num_classes,
            },
            LayoutEntry {
                name: "b",
                offset: input_dim * num_classes,
                rows: num_classes,
                cols: 1,
            },
        ];
        Ok(Self {
            kind: ModelKind::LogisticRegression,
            input_dim,
            num_classes,
            hidden_dim: None,
            layout,
        })
    }

    pub fn mlp_one_hidden(input_dim: usize, hidden_dim: usize, num_classes: usize) -> Result<Self> {
        check_dims(input_dim, num_classes)?;
        if hidden_dim == 0 {
            return Err(Error::InvalidArgument("hidden_dim must be >= 1".into()));
        }
        let mut offset = 0;
        let mut layout = Vec::with_capacity(4);
        for (name, rows, cols) in [
            ("w1", input_dim, hidden_dim),
            ("b1", hidden_dim, 1),
            ("w2", hidden_dim, num_classes),
            ("b2", num_classes, 1),
        ] {
            layout.push(LayoutEntry {
                name,
                offset,
                rows,
                cols,
            });
            offset += rows * cols;
        }
        Ok(Self {
            kind: ModelKind::MlpOneHidden,
            input_dim,
            num_classes,
            hidden_dim: Some(hidden_dim),
            layout,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn hidden_dim(&self) -> Option<usize> {
        self.hidden_dim
    }

    pub fn layout(&self) -> &[LayoutEntry] {
        &self.layout
    }

    /// Total flat parameter dimension (sum of layout extents).
    pub fn param_dim(&self) -> usize {
        self.layout.iter().map(LayoutEntry::len).sum()
    }

    pub fn layout_entry(&self, name: &str) -> Option<&LayoutEntry> {
        self.layout.iter().find(|e| e.name == name)
    }

    /// Per-block uniform init in `[-1/sqrt(fan_in), +1/sqrt(fan_in)]`, drawn
    /// in layout order from the seeded stream.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = vec![0.0; self.param_dim()];
        for entry in &self.layout {
            let fan_in = match (self.kind, entry.name) {
                (ModelKind::LogisticRegression, _) => self.input_dim,
                (ModelKind::MlpOneHidden, "w1" | "b1") => self.input_dim,
                _ => self.hidden_dim.unwrap_or(self.input_dim),
            };
            let bound = 1.0 / (fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("valid init bounds");
            for v in values[entry.offset..entry.offset + entry.len()].iter_mut() {
                *v = dist.sample(&mut rng);
            }
        }
        ParamVector::new(values).expect("init values are finite")
    }

    fn check_params(&self, params: &ParamVector) -> Result<()> {
        if params.dim() != self.param_dim() {
            return Err(Error::DimMismatch {
                context: "model params",
                left: params.dim(),
                right: self.param_dim(),
            });
        }
        Ok(())
    }
}

fn check_dims(input_dim: usize, num_classes: usize) -> Result<()> {
    if input_dim == 0 {
        return Err(Error::InvalidArgument("input_dim must be >= 1".into()));
    }
    if num_classes < 2 {
        return Err(Error::InvalidArgument("num_classes must be >= 2".into()));
    }
    Ok(())
}

/// A mini-batch: `len x input_dim` features (row-major) with integer labels.
#[derive(Debug, Clone)]
pub struct Batch {
    features: Vec<f64>,
    labels: Vec<usize>,
    input_dim: usize,
}

impl Batch {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, input_dim: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyInput("batch requires at least one example"));
        }
        if input_dim == 0 || features.len() != labels.len() * input_dim {
            return Err(Error::DimMismatch {
                context: "batch features",
                left: features.len(),
                right: labels.len() * input_dim,
            });
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("batch feature {i}"),
            });
        }
        Ok(Self {
            features,
            labels,
            input_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn feature_row(&self, i: usize) -> &[f64] {
        &self.features[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    /// Fraction of argmax-correct predictions; ties go to the lowest class.
    pub accuracy: f64,
    pub mean_loss: f64,
}

struct Forward {
    /// Per-example hidden activations (MLP only), `len x hidden`.
    hidden: Vec<f64>,
    /// Per-example softmax probabilities, `len x num_classes`.
    probs: Vec<f64>,
    mean_loss: f64,
}

fn check_batch(spec: &ModelSpec, batch: &Batch) -> Result<()> {
    if batch.input_dim() != spec.input_dim() {
        return Err(Error::DimMismatch {
            context: "batch input_dim",
            left: batch.input_dim(),
            right: spec.input_dim(),
        });
    }
    if let Some(&bad) = batch.labels().iter().find(|&&y| y >= spec.num_classes()) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {} classes",
            spec.num_classes()
        )));
    }
    Ok(())
}

/// Forward pass shared by loss and gradient. Uses log-sum-exp so the loss
/// stays finite for any finite parameters.
fn forward(spec: &ModelSpec, params: &ParamVector, batch: &Batch) -> Result<Forward> {
    spec.check_params(params)?;
    check_batch(spec, batch)?;
    let p = params.values();
    let n = batch.len();
    let classes = spec.num_classes();
    let d = spec.input_dim();

    let hidden_dim = spec.hidden_dim().unwrap_or(0);
    let mut hidden = vec![0.0; n * hidden_dim];
    let mut probs = vec![0.0; n * classes];
    let mut loss_sum = 0.0;

    let mut logits = vec![0.0; classes];
    for i in 0..n {
        let x = batch.feature_row(i);
        match spec.kind() {
            ModelKind::LogisticRegression => {
                let w = &p[..d * classes];
                let b = &p[d * classes..];
                for (c, l) in logits.iter_mut().enumerate() {
                    *l = b[c];
                }
                for (j, &xj) in x.iter().enumerate() {
                    let row = &w[j * classes..(j + 1) * classes];
                    for (c, l) in logits.iter_mut().enumerate() {
                        *l += xj * row[c];
                    }
                }
            }
            ModelKind::MlpOneHidden => {
                let h = hidden_dim;
                let w1 = &p[..d * h];
                let b1 = &p[d * h..d * h + h];
                let w2 = &p[d * h + h..d * h + h + h * classes];
                let b2 = &p[d * h + h + h * classes..];
                let hrow = &mut hidden[i * h..(i + 1) * h];
                hrow.copy_from_slice(b1);
                for (j, &xj) in x.iter().enumerate() {
                    let row = &w1[j * h..(j + 1) * h];
                    for (k, hv) in hrow.iter_mut().enumerate() {
                        *hv += xj * row[k];
                    }
                }
                for hv in hrow.iter_mut() {
                    *hv = hv.tanh();
                }
                for (c, l) in logits.iter_mut().enumerate() {
                    *l = b2[c];
                }
                for (k, &hk) in hrow.iter().enumerate() {
                    let row = &w2[k * classes..(k + 1) * classes];
                    for (c, l) in logits.iter_mut().enumerate() {
                        *l += hk * row[c];
                    }
                }
            }
        }

        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for &l in logits.iter() {
            sum += (l - max).exp();
        }
        let lse = max + sum.ln();
        loss_sum += lse - logits[batch.labels()[i]];
        for (c, &l) in logits.iter().enumerate() {
            probs[i * classes + c] = (l - lse).exp();
        }
    }

    let mean_loss = loss_sum / n as f64;
    if !mean_loss.is_finite() {
        return Err(Error::NonFinite {
            context: "mean cross-entropy".into(),
        });
    }
    Ok(Forward {
        hidden,
        probs,
        mean_loss,
    })
}

/// Mean softmax cross-entropy of `batch` under `params`.
pub fn loss(spec: &ModelSpec, params: &ParamVector, batch: &Batch) -> Result<f64> {
    Ok(forward(spec, params, batch)?.mean_loss)
}

/// Gradient of [`loss`] with respect to the flat parameters.
pub fn grad(spec: &ModelSpec, params: &ParamVector, batch: &Batch) -> Result<ParamVector> {
    Ok(loss_and_grad(spec, params, batch)?.1)
}

/// Loss and gradient from one shared forward pass.
pub fn loss_and_grad(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &Batch,
) -> Result<(f64, ParamVector)> {
    let fwd = forward(spec, params, batch)?;
    let p = params.values();
    let n = batch.len();
    let inv_n = 1.0 / n as f64;
    let classes = spec.num_classes();
    let d = spec.input_dim();
    let mut g = vec![0.0; params.dim()];

    match spec.kind() {
        ModelKind::LogisticRegression => {
            let (gw, gb) = g.split_at_mut(d * classes);
            for i in 0..n {
                let x = batch.feature_row(i);
                let y = batch.labels()[i];
                let prow = &fwd.probs[i * classes..(i + 1) * classes];
                for c in 0..classes {
                    let e = (prow[c] - if c == y { 1.0 } else { 0.0 }) * inv_n;
                    gb[c] += e;
                    for (j, &xj) in x.iter().enumerate() {
                        gw[j * classes + c] += xj * e;
                    }
                }
            }
        }
        ModelKind::MlpOneHidden => {
            let h = spec.hidden_dim().unwrap_or(0);
            let w2 = &p[d * h + h..d * h + h + h * classes];
            let mut dlogits = vec![0.0; classes];
            let mut dpre = vec![0.0; h];
            for i in 0..n {
                let x = batch.feature_row(i);
                let y = batch.labels()[i];
                let prow = &fwd.probs[i * classes..(i + 1) * classes];
                let hrow = &fwd.hidden[i * h..(i + 1) * h];
                for c in 0..classes {
                    dlogits[c] = (prow[c] - if c == y { 1.0 } else { 0.0 }) * inv_n;
                }
                // output layer
                {
                    let gw2 = &mut g[d * h + h..d * h + h + h * classes];
                    for (k, &hk) in hrow.iter().enumerate() {
                        for c in 0..classes {
                            gw2[k * classes + c] += hk * dlogits[c];
                        }
                    }
                }
                {
                    let gb2 = &mut g[d * h + h + h * classes..];
                    for c in 0..classes {
                        gb2[c] += dlogits[c];
                    }
                }
                // backprop through tanh
                for k in 0..h {
                    let mut dh = 0.0;
                    let row = &w2[k * classes..(k + 1) * classes];
                    for c in 0..classes {
                        dh += row[c] * dlogits[c];
                    }
                    dpre[k] = dh * (1.0 - hrow[k] * hrow[k]);
                }
                {
                    let gw1 = &mut g[..d * h];
                    for (j, &xj) in x.iter().enumerate() {
                        for k in 0..h {
                            gw1[j * h + k] += xj * dpre[k];
                        }
                    }
                }
                {
                    let gb1 = &mut g[d * h..d * h + h];
                    for k in 0..h {
                        gb1[k] += dpre[k];
                    }
                }
            }
        }
    }

    Ok((fwd.mean_loss, ParamVector::new(g)?))
}

/// Accuracy and mean loss over an index slice of a feature/label store.
///
/// Argmax ties break to the lowest class index, so the all-zero model
/// predicts class 0 everywhere.
pub fn evaluate_on(
    spec: &ModelSpec,
    params: &ParamVector,
    features: &[f64],
    labels: &[usize],
    indices: &[usize],
) -> Result<EvalMetrics> {
    if indices.is_empty() {
        return Err(Error::EmptyInput("evaluate requires a non-empty shard"));
    }
    let d = spec.input_dim();
    let mut feats = Vec::with_capacity(indices.len() * d);
    let mut labs = Vec::with_capacity(indices.len());
    for &ix in indices {
        feats.extend_from_slice(&features[ix * d..(ix + 1) * d]);
        labs.push(labels[ix]);
    }
    let batch = Batch::new(feats, labs, d)?;
    let fwd = forward(spec, params, &batch)?;
    let classes = spec.num_classes();
    let mut correct = 0usize;
    for i in 0..batch.len() {
        let prow = &fwd.probs[i * classes..(i + 1) * classes];
        let mut best = 0usize;
        for c in 1..classes {
            if prow[c] > prow[best] {
                best = c;
            }
        }
        if best == batch.labels()[i] {
            correct += 1;
        }
    }
    Ok(EvalMetrics {
        accuracy: correct as f64 / batch.len() as f64,
        mean_loss: fwd.mean_loss,
    })
}

/// [`evaluate_on`] against a [`crate::data::Dataset`] shard.
pub fn evaluate(
    spec: &ModelSpec,
    params: &ParamVector,
    dataset: &crate::data::Dataset,
    indices: &[usize],
) -> Result<EvalMetrics> {
    evaluate_on(spec, params, dataset.features(), dataset.labels(), indices)
}
