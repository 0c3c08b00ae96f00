//! Combining per-loss gradients into a single update direction.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::autodiff::GradientVector;
use crate::error::{PincError, Result};

/// Default bound on the norm of the combined gradient.
pub const DEFAULT_CLIP: f64 = 5.0;
/// Gradients with a smaller norm are left out of a combination.
pub const ZERO_NORM: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradScheme {
    Sum,
    Config,
    Norm,
}

impl fmt::Display for GradScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GradScheme::Sum => "sum",
            GradScheme::Config => "config",
            GradScheme::Norm => "norm",
        })
    }
}

impl FromStr for GradScheme {
    type Err = PincError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sum" => Ok(GradScheme::Sum),
            "config" => Ok(GradScheme::Config),
            "norm" => Ok(GradScheme::Norm),
            other => Err(PincError::config("grad_scheme", format!("expected sum, config or norm, got `{other}`"))),
        }
    }
}

fn check_lengths(grads: &[GradientVector]) -> Result<usize> {
    let len = grads.first().map_or(0, GradientVector::len);
    for g in grads {
        if g.len() != len {
            return Err(PincError::LengthMismatch { expected: len, got: g.len() });
        }
    }
    Ok(len)
}

/// `sum_i w_i g_i`.
pub fn sum_combine(grads: &[GradientVector], weights: &[f64]) -> Result<GradientVector> {
    let len = check_lengths(grads)?;
    if weights.len() != grads.len() {
        return Err(PincError::LengthMismatch { expected: grads.len(), got: weights.len() });
    }
    let mut out = vec![0.0; len];
    for (g, w) in grads.iter().zip(weights) {
        for (o, x) in out.iter_mut().zip(&g.0) {
            *o += w * x;
        }
    }
    Ok(GradientVector(out))
}

/// Conflict-free combination: the direction has equal projection onto every
/// unit input gradient (least-squares solution of `G_hat d = 1`), and its
/// length is `sum_i g_i . d_hat`.
pub fn config_combine(grads: &[GradientVector]) -> Result<GradientVector> {
    let len = check_lengths(grads)?;
    let active: Vec<&GradientVector> = grads.iter().filter(|g| g.norm() >= ZERO_NORM).collect();
    if active.is_empty() {
        return Err(PincError::DegenerateGradient("all gradients are zero".into()));
    }
    let k = active.len();
    let units: Vec<Vec<f64>> = active.iter().map(|g| g.scaled(1.0 / g.norm()).0).collect();
    // d = G_hat^T (G_hat G_hat^T)^+ 1
    let gram = DMatrix::from_fn(k, k, |i, j| units[i].iter().zip(&units[j]).map(|(a, b)| a * b).sum::<f64>());
    let pinv = gram
        .pseudo_inverse(1e-12)
        .map_err(|e| PincError::DegenerateGradient(format!("pseudo-inverse failed: {e}")))?;
    let coeffs = pinv * DMatrix::from_element(k, 1, 1.0);
    let mut dir = vec![0.0; len];
    for (unit, c) in units.iter().zip(coeffs.iter()) {
        for (d, u) in dir.iter_mut().zip(unit) {
            *d += c * u;
        }
    }
    let dir = GradientVector(dir);
    let norm = dir.norm();
    if !(norm > ZERO_NORM) {
        return Err(PincError::DegenerateGradient("no common descent direction".into()));
    }
    let unit_dir = dir.scaled(1.0 / norm);
    let magnitude: f64 = active.iter().map(|g| g.dot(&unit_dir)).sum();
    Ok(unit_dir.scaled(magnitude))
}

/// Rescales every gradient to the norm of the reference `grads[0]`, forms
/// the weighted sum, and rescales the sum to the reference norm again.
pub fn norm_combine(grads: &[GradientVector], weights: &[f64]) -> Result<GradientVector> {
    let len = check_lengths(grads)?;
    if weights.len() != grads.len() {
        return Err(PincError::LengthMismatch { expected: grads.len(), got: weights.len() });
    }
    let Some(reference) = grads.first() else {
        return Err(PincError::DegenerateGradient("no gradients to combine".into()));
    };
    let ref_norm = reference.norm();
    if !(ref_norm >= ZERO_NORM) {
        return Err(PincError::DegenerateGradient("reference gradient is zero".into()));
    }
    let mut sum = vec![0.0; len];
    for (g, w) in grads.iter().zip(weights) {
        let n = g.norm();
        if n < ZERO_NORM {
            continue;
        }
        let s = w * ref_norm / n;
        for (o, x) in sum.iter_mut().zip(&g.0) {
            *o += s * x;
        }
    }
    let sum = GradientVector(sum);
    let n = sum.norm();
    if !(n >= ZERO_NORM) {
        return Err(PincError::DegenerateGradient("normalized gradients cancel".into()));
    }
    Ok(sum.scaled(ref_norm / n))
}

/// Scales `g` down to norm `c_max` if it is longer. Norms within a few ulp
/// of the bound count as inside, which makes clipping idempotent.
pub fn clip_norm(g: &GradientVector, c_max: f64) -> GradientVector {
    let n = g.norm();
    if n > c_max * (1.0 + 8.0 * f64::EPSILON) {
        g.scaled(c_max / n)
    } else {
        g.clone()
    }
}

/// Applies `scheme`; `grads[0]` is the reference for the norm scheme.
pub fn combine(scheme: GradScheme, grads: &[GradientVector], weights: &[f64]) -> Result<GradientVector> {
    match scheme {
        GradScheme::Sum => sum_combine(grads, weights),
        GradScheme::Config => config_combine(grads),
        GradScheme::Norm => norm_combine(grads, weights),
    }
}
