//! Rolling-window stationarity detection on the accelerometer magnitude.
//!
//! Movement shows up as trends in the signal. A Dickey–Fuller regression
//! `Δz_t = α + ρ z_{t−1} + e_t` over the window tests for mean reversion; a
//! window is stationary when the statistic `ρ̂ / se(ρ̂)` rejects a unit root
//! and the sample standard deviation is small.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::propagation::ImuSample;

/// Samples needed before a verdict can be positive.
pub const MIN_WINDOW_SAMPLES: usize = 8;

/// Floor on the regression residual variance; keeps noiseless windows finite.
const RESIDUAL_VAR_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    /// Window length (s).
    pub window: f64,
    /// Threshold on the test statistic; more negative is stricter.
    pub df_critical: f64,
    /// Largest window standard deviation accepted as rest (m/s²).
    pub std_max: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self { window: 0.25, df_critical: -3.43, std_max: 0.04 }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.window > 0.0 && self.window.is_finite()) {
            return Err(Error::Config(format!("detector window must be positive, got {}", self.window)));
        }
        if !(self.std_max > 0.0 && self.std_max.is_finite()) {
            return Err(Error::Config(format!("detector std_max must be positive, got {}", self.std_max)));
        }
        if !self.df_critical.is_finite() {
            return Err(Error::Config("detector df_critical must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StationarityVerdict {
    pub t: f64,
    pub stationary: bool,
    /// NaN during warm-up.
    pub df_stat: f64,
    pub window_std: f64,
}

/// Dickey–Fuller statistic of `z` (constant, no trend).
///
/// Returns `-∞` for an exactly constant series, which has no unit root.
/// Requires at least three samples.
pub fn dickey_fuller(z: &[f64]) -> f64 {
    let m = z.len().saturating_sub(1);
    if m < 3 {
        return f64::NAN;
    }
    let mf = m as f64;
    let lagged = &z[..m];
    let diffs: Vec<f64> = z.windows(2).map(|w| w[1] - w[0]).collect();
    let x_mean = lagged.iter().sum::<f64>() / mf;
    let d_mean = diffs.iter().sum::<f64>() / mf;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, d) in lagged.iter().zip(&diffs) {
        sxx += (x - x_mean) * (x - x_mean);
        sxy += (x - x_mean) * (d - d_mean);
    }
    if sxx == 0.0 {
        return f64::NEG_INFINITY;
    }
    let rho = sxy / sxx;
    let alpha = d_mean - rho * x_mean;
    let ssr: f64 = lagged.iter().zip(&diffs).map(|(x, d)| (d - alpha - rho * x).powi(2)).sum();
    let var = (ssr / (mf - 2.0)).max(RESIDUAL_VAR_FLOOR);
    rho / (var / sxx).sqrt()
}

/// Sample standard deviation (n − 1 denominator).
pub fn sample_std(z: &[f64]) -> f64 {
    let n = z.len() as f64;
    if z.len() < 2 {
        return 0.0;
    }
    let mean = z.iter().sum::<f64>() / n;
    (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Detector state: the rolling window of `(t, ‖a‖)`.
#[derive(Clone, Debug)]
pub struct Detector {
    cfg: DetectorConfig,
    window: VecDeque<(f64, f64)>,
}

impl Detector {
    pub fn new(cfg: DetectorConfig) -> Self {
        Self { cfg, window: VecDeque::new() }
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.cfg
    }

    pub fn reset(&mut self) {
        self.window.clear();
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }

    pub fn push(&mut self, sample: &ImuSample) -> StationarityVerdict {
        let t = sample.t;
        self.window.push_back((t, sample.accel.norm()));
        // keep samples with t − window < t_i ≤ t
        while let Some(&(t0, _)) = self.window.front() {
            if t - t0 >= self.cfg.window - 1e-9 {
                self.window.pop_front();
            } else {
                break;
            }
        }
        let z: Vec<f64> = self.window.iter().map(|(_, v)| *v).collect();
        if z.len() < MIN_WINDOW_SAMPLES {
            return StationarityVerdict { t, stationary: false, df_stat: f64::NAN, window_std: sample_std(&z) };
        }
        let df_stat = dickey_fuller(&z);
        let window_std = sample_std(&z);
        let stationary = df_stat < self.cfg.df_critical && window_std < self.cfg.std_max;
        StationarityVerdict { t, stationary, df_stat, window_std }
    }
}
