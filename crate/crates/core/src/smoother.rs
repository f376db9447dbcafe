//! Fixed-interval extended Rauch–Tung–Striebel smoothing.
//!
//! The forward pass records, per step, the chain of operations that led from
//! the previous filtered belief to the current one. Measurement updates need
//! no record: the smoothed density at a time instant does not depend on
//! whether it is taken before or after conditioning. Predictions, block
//! insertions and block removals are reversed one by one:
//!
//! * prediction — the usual gain `G = P Fᵀ P_pred⁻¹`;
//! * insertion — the smoothed marginal of the pre-existing entries;
//! * removal — future data depend on the removed block only through the kept
//!   entries, so it is recovered by an RTS step with a selection matrix and no
//!   process noise.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::math::{scaled_condition, symmetrize};
use crate::state::{GaussianBelief, NavState};

/// Largest accepted (scaled) condition number of a predicted covariance.
pub const MAX_PREDICTED_CONDITION: f64 = 1e12;

/// Flattened Gaussian moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl Moments {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        Self { mean, cov }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

impl From<&GaussianBelief> for Moments {
    fn from(b: &GaussianBelief) -> Self {
        Self { mean: b.mean.flatten(), cov: b.cov.clone() }
    }
}

/// One dimension-preserving or dimension-changing operation of the forward pass.
#[derive(Clone, Debug, PartialEq)]
pub enum Transition {
    /// `x⁺ = f(x)` with Jacobian `transition` and the predicted moments.
    Predict { transition: DMatrix<f64>, predicted: Moments },
    /// `len` entries inserted at `offset`.
    Append { offset: usize, len: usize },
    /// `len` entries at `offset` marginalized out of `before`.
    Remove { offset: usize, len: usize, before: Moments },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceStep {
    pub t: f64,
    /// Operations since the previous step's filtered belief, in order.
    pub ops: Vec<Transition>,
    pub filtered: Moments,
}

/// Smoothed moments for every step of `steps`.
pub fn rts_smooth_moments(steps: &[TraceStep]) -> Result<Vec<Moments>> {
    let Some(last) = steps.last() else {
        return Ok(Vec::new());
    };
    let mut out = vec![last.filtered.clone(); steps.len()];
    let mut smoothed = last.filtered.clone();
    for k in (1..steps.len()).rev() {
        for op in steps[k].ops.iter().rev() {
            smoothed = match op {
                Transition::Predict { transition, predicted } => {
                    rts_step(&steps[k - 1].filtered, transition, predicted, &smoothed, k)?
                }
                Transition::Append { offset, len } => drop_entries(&smoothed, *offset, *len),
                Transition::Remove { offset, len, before } => restore_removed(before, *offset, *len, &smoothed, k)?,
            };
        }
        let expected = steps[k - 1].filtered.dim();
        if smoothed.dim() != expected {
            return Err(Error::DimensionMismatch { expected, found: smoothed.dim() });
        }
        out[k - 1] = smoothed.clone();
    }
    Ok(out)
}

/// Solves `P_pred Gᵀ = F P` for the gain, refusing ill-conditioned `P_pred`.
fn gain(cross: &DMatrix<f64>, predicted_cov: &DMatrix<f64>, step: usize) -> Result<DMatrix<f64>> {
    let condition = scaled_condition(predicted_cov);
    if !(condition <= MAX_PREDICTED_CONDITION) {
        return Err(Error::SingularPredictedCovariance { step, condition });
    }
    let chol = predicted_cov.clone().cholesky().ok_or(Error::SingularPredictedCovariance { step, condition })?;
    Ok(chol.solve(&cross.transpose()).transpose())
}

fn rts_step(
    filtered: &Moments,
    transition: &DMatrix<f64>,
    predicted: &Moments,
    next: &Moments,
    step: usize,
) -> Result<Moments> {
    let cross = &filtered.cov * transition.transpose();
    let g = gain(&cross, &predicted.cov, step)?;
    let mean = &filtered.mean + &g * (&next.mean - &predicted.mean);
    let mut cov = &filtered.cov + &g * (&next.cov - &predicted.cov) * g.transpose();
    symmetrize(&mut cov);
    Ok(Moments { mean, cov })
}

fn kept_indices(n: usize, offset: usize, len: usize) -> Vec<usize> {
    (0..n).filter(|&i| i < offset || i >= offset + len).collect()
}

fn drop_entries(m: &Moments, offset: usize, len: usize) -> Moments {
    let keep = kept_indices(m.dim(), offset, len);
    Moments {
        mean: DVector::from_fn(keep.len(), |i, _| m.mean[keep[i]]),
        cov: DMatrix::from_fn(keep.len(), keep.len(), |i, j| m.cov[(keep[i], keep[j])]),
    }
}

fn restore_removed(before: &Moments, offset: usize, len: usize, next: &Moments, step: usize) -> Result<Moments> {
    let keep = kept_indices(before.dim(), offset, len);
    let kept = drop_entries(before, offset, len);
    let cross = DMatrix::from_fn(before.dim(), keep.len(), |i, j| before.cov[(i, keep[j])]);
    let g = gain(&cross, &kept.cov, step)?;
    let mean = &before.mean + &g * (&next.mean - &kept.mean);
    let mut cov = &before.cov + &g * (&next.cov - &kept.cov) * g.transpose();
    symmetrize(&mut cov);
    Ok(Moments { mean, cov })
}

/// A recorded filtering pass over navigation states.
#[derive(Clone, Debug, Default)]
pub struct FilterTrace {
    pub steps: Vec<TraceStep>,
    /// Filtered mean state of each step; carries the block structure.
    pub templates: Vec<NavState>,
}

impl FilterTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn push(&mut self, ops: Vec<Transition>, filtered: &GaussianBelief) {
        self.steps.push(TraceStep { t: filtered.t, ops, filtered: filtered.into() });
        self.templates.push(filtered.mean.clone());
    }

    pub fn filtered(&self, k: usize) -> Result<GaussianBelief> {
        let step = &self.steps[k];
        to_belief(&self.templates[k], &step.filtered, step.t)
    }
}

fn to_belief(template: &NavState, m: &Moments, t: f64) -> Result<GaussianBelief> {
    let mut mean = template.unflatten(&m.mean)?;
    mean.attitude = mean.attitude.normalize()?;
    GaussianBelief::new(mean, m.cov.clone(), t)
}

/// Smoothed beliefs `p(x_k | y_{1:N})` for every step of `trace`.
pub fn rts_smooth(trace: &FilterTrace) -> Result<Vec<GaussianBelief>> {
    let smoothed = rts_smooth_moments(&trace.steps)?;
    smoothed
        .iter()
        .zip(&trace.templates)
        .zip(&trace.steps)
        .map(|((m, template), step)| to_belief(template, m, step.t))
        .collect()
}
