use std::sync::Arc;

use rand::Rng;

use super::arch::{Architecture, ParamLayout};
use super::{NnError, Result};
use crate::seed;

/// Flat parameter vector with a named per-layer layout.
///
/// All elementwise operations (averaging, proximal pulls, cosine similarity)
/// act on the flat vector; layer views are slices into it.
#[derive(Debug, Clone)]
pub struct ModelParams {
    architecture_id: String,
    layout: Arc<ParamLayout>,
    data: Vec<f64>,
}

impl PartialEq for ModelParams {
    fn eq(&self, other: &Self) -> bool {
        self.architecture_id == other.architecture_id && self.data == other.data
    }
}

impl ModelParams {
    pub fn zeros(arch: &Architecture) -> Self {
        let layout = arch.layout();
        let data = vec![0.0; layout.total()];
        Self {
            architecture_id: arch.id(),
            layout: layout.shared(),
            data,
        }
    }

    /// He-uniform initialization: weights ~ U(-sqrt(6/fan_in), sqrt(6/fan_in)),
    /// biases zero.
    pub fn init(arch: &Architecture, init_seed: u64) -> Self {
        let mut params = Self::zeros(arch);
        let mut rng = seed::rng(init_seed);
        let layout = Arc::clone(&params.layout);
        for slot in &layout.slots {
            if slot.fan_in == 0 {
                continue;
            }
            let bound = (6.0 / slot.fan_in as f64).sqrt();
            for w in &mut params.data[slot.offset..slot.offset + slot.len] {
                *w = rng.gen_range(-bound..bound);
            }
        }
        params
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            architecture_id: self.architecture_id.clone(),
            layout: Arc::clone(&self.layout),
            data: vec![0.0; self.data.len()],
        }
    }

    pub fn architecture_id(&self) -> &str {
        &self.architecture_id
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn layer(&self, name: &str) -> Option<&[f64]> {
        let slot = self.layout.slot(name)?;
        Some(&self.data[slot.offset..slot.offset + slot.len])
    }

    pub fn layer_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let slot = self.layout.slot(name)?;
        let (offset, len) = (slot.offset, slot.len);
        Some(&mut self.data[offset..offset + len])
    }

    /// Iterates `(name, shape, values)` in layout order.
    pub fn layers(&self) -> impl Iterator<Item = (&str, &[usize], &[f64])> {
        self.layout.slots.iter().map(move |s| {
            (
                s.name.as_str(),
                s.shape.as_slice(),
                &self.data[s.offset..s.offset + s.len],
            )
        })
    }

    pub fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.architecture_id != other.architecture_id {
            return Err(NnError::ArchitectureMismatch(
                self.architecture_id.clone(),
                other.architecture_id.clone(),
            ));
        }
        Ok(())
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Self) -> Result<()> {
        self.check_compatible(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        let mut out = self.clone();
        out.axpy(1.0, other)?;
        Ok(out)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        let mut out = self.clone();
        out.axpy(-1.0, other)?;
        Ok(out)
    }

    pub fn scale(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= factor);
        out
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.check_compatible(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Euclidean distance between two parameter vectors.
    pub fn distance(&self, other: &Self) -> Result<f64> {
        self.check_compatible(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    /// Cosine similarity; `None` when either vector has zero norm.
    pub fn cosine(&self, other: &Self) -> Result<Option<f64>> {
        let dot = self.dot(other)?;
        let denom = self.norm() * other.norm();
        Ok((denom > 0.0).then(|| dot / denom))
    }

    /// Exact proximal map of `(strength / 2) * ||theta - anchor||^2` scaled
    /// by the step: `theta <- (theta + strength * anchor) / (1 + strength)`.
    pub fn pull_toward(&mut self, anchor: &Self, strength: f64) -> Result<()> {
        self.check_compatible(anchor)?;
        if strength == 0.0 {
            return Ok(());
        }
        let denom = 1.0 + strength;
        for (t, a) in self.data.iter_mut().zip(&anchor.data) {
            *t = (*t + strength * a) / denom;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Weighted elementwise mean, weights normalized internally.
///
/// Computed as `m0 + sum_i w_i (m_i - m0)` in the given model order: the
/// result is reproducible, and averaging identical models returns them
/// bit-for-bit.
pub fn average_params(models: &[&ModelParams], weights: &[f64]) -> Result<ModelParams> {
    let first = *models.first().ok_or(NnError::BadWeights)?;
    if models.len() != weights.len() || weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(NnError::BadWeights);
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(NnError::BadWeights);
    }
    for m in models {
        first.check_compatible(m)?;
    }
    let mut out = first.clone();
    for (m, w) in models.iter().zip(weights).skip(1) {
        let w = w / total;
        if w == 0.0 {
            continue;
        }
        for ((o, v), base) in out.data.iter_mut().zip(&m.data).zip(&first.data) {
            *o += w * (v - base);
        }
    }
    Ok(out)
}
