//! Flat dense parameter vectors and the elementwise algebra every other
//! module builds on.
//!
//! Numeric contract: 64-bit floats, reductions in ascending index order, no
//! reassociation, no mutation of inputs. Two runs over identical inputs
//! produce bit-identical outputs regardless of how callers are scheduled.

use crate::error::{Error, Result};

/// Dense vector of model parameters or an update delta.
///
/// Entries are finite; construction and every public operation reject
/// NaN/Inf so downstream code can treat non-finiteness as divergence.
/// Values are immutable once constructed and safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("ParamVector requires dim >= 1"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("ParamVector entry {i}"),
            });
        }
        Ok(Self { values })
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "ParamVector requires dim >= 1");
        Self {
            values: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// True when every entry is bitwise equal to the corresponding entry of
    /// `other` (stricter than `==` for signed zeros).
    pub fn bitwise_eq(&self, other: &ParamVector) -> bool {
        self.dim() == other.dim()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

fn check_dims(context: &'static str, x: &ParamVector, y: &ParamVector) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(Error::DimMismatch {
            context,
            left: x.dim(),
            right: y.dim(),
        });
    }
    Ok(())
}

/// `a * x + y`, elementwise. Inputs are unmodified.
pub fn axpy(a: f64, x: &ParamVector, y: &ParamVector) -> Result<ParamVector> {
    check_dims("axpy", x, y)?;
    let values = x
        .values
        .iter()
        .zip(&y.values)
        .map(|(xi, yi)| a * xi + yi)
        .collect();
    ParamVector::new(values)
}

/// `x - y`, elementwise.
pub fn sub(x: &ParamVector, y: &ParamVector) -> Result<ParamVector> {
    check_dims("sub", x, y)?;
    let values = x
        .values
        .iter()
        .zip(&y.values)
        .map(|(xi, yi)| xi - yi)
        .collect();
    ParamVector::new(values)
}

/// Elementwise product.
pub fn hadamard(x: &ParamVector, y: &ParamVector) -> Result<ParamVector> {
    check_dims("hadamard", x, y)?;
    let values = x
        .values
        .iter()
        .zip(&y.values)
        .map(|(xi, yi)| xi * yi)
        .collect();
    ParamVector::new(values)
}

/// Dot product, accumulated in ascending index order.
pub fn dot(x: &ParamVector, y: &ParamVector) -> Result<f64> {
    check_dims("dot", x, y)?;
    let mut acc = 0.0;
    for (xi, yi) in x.values.iter().zip(&y.values) {
        acc += xi * yi;
    }
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElemMap {
    /// -1, 0, +1 with sign(0) = 0.
    Sign,
    /// Requires every entry >= 0.
    Sqrt,
    Abs,
}

/// Elementwise map. `Sqrt` of a negative entry is a structured error naming
/// the offending index.
pub fn elem_map(kind: ElemMap, x: &ParamVector) -> Result<ParamVector> {
    let mut values = Vec::with_capacity(x.dim());
    for (i, &v) in x.values.iter().enumerate() {
        let mapped = match kind {
            ElemMap::Sign => {
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            ElemMap::Sqrt => {
                if v < 0.0 {
                    return Err(Error::SqrtNegative { index: i, value: v });
                }
                v.sqrt()
            }
            ElemMap::Abs => v.abs(),
        };
        values.push(mapped);
    }
    ParamVector::new(values)
}
