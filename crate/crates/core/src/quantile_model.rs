//! Affine quantile regression heads trained on the pinball loss.
//!
//! The conformal layers only need `(q_lo(x), q_hi(x))`; any model would do.
//! This one is deliberately small: two affine heads fitted by seeded
//! mini-batch subgradient descent on standardized features and labels.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Pinball (quantile) loss of `prediction` against `y` at level `tau`.
pub fn pinball_loss(prediction: f64, y: f64, tau: f64) -> f64 {
    if y >= prediction {
        tau * (y - prediction)
    } else {
        (1.0 - tau) * (prediction - y)
    }
}

/// Subgradient of [`pinball_loss`] with respect to the prediction; zero at
/// the kink.
fn pinball_slope(prediction: f64, y: f64, tau: f64) -> f64 {
    if y > prediction {
        -tau
    } else if y < prediction {
        1.0 - tau
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub learning_rate: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            iterations: 2000,
            batch_size: 256,
            seed: 0,
        }
    }
}

/// Per-column centering and scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    pub label_center: f64,
    pub label_scale: f64,
}

fn mean_and_scale(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count().max(1) as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    (mean, if sd > 1e-12 { sd } else { 1.0 })
}

/// Lower and upper conditional quantile heads.
///
/// Weights are stored in raw feature units, intercept first, so prediction is
/// a plain dot product. The standardization used during training is kept for
/// reference and serialization.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileModel {
    levels: (f64, f64),
    lower_weights: Vec<f64>,
    upper_weights: Vec<f64>,
    standardization: Option<Standardization>,
    iterations: usize,
    final_loss: (f64, f64),
}

impl QuantileModel {
    /// Builds a model from raw-unit weights (intercept first).
    pub fn from_weights(
        levels: (f64, f64),
        lower_weights: Vec<f64>,
        upper_weights: Vec<f64>,
    ) -> Result<Self> {
        check_levels(levels)?;
        if lower_weights.is_empty() || lower_weights.len() != upper_weights.len() {
            return Err(Error::Shape {
                expected: lower_weights.len().max(1),
                actual: upper_weights.len(),
            });
        }
        if lower_weights
            .iter()
            .chain(&upper_weights)
            .any(|w| !w.is_finite())
        {
            return Err(Error::Config("model weights must be finite".into()));
        }
        Ok(Self {
            levels,
            lower_weights,
            upper_weights,
            standardization: None,
            iterations: 0,
            final_loss: (f64::NAN, f64::NAN),
        })
    }

    /// Fits both heads on row-major `features` (`labels.len()` rows).
    pub fn fit(
        features: &[f64],
        feature_count: usize,
        labels: &[f64],
        levels: (f64, f64),
        options: &FitOptions,
    ) -> Result<Self> {
        check_levels(levels)?;
        let n = labels.len();
        if n == 0 {
            return Err(Error::EmptyInput("no training samples"));
        }
        if features.len() != n * feature_count {
            return Err(Error::Shape {
                expected: n * feature_count,
                actual: features.len(),
            });
        }
        if options.iterations > 0 && options.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        let p = feature_count;
        let mut feature_mean = Vec::with_capacity(p);
        let mut feature_scale = Vec::with_capacity(p);
        for j in 0..p {
            let (m, s) = mean_and_scale((0..n).map(|i| features[i * p + j]));
            feature_mean.push(m);
            feature_scale.push(s);
        }
        let (label_center, label_scale) = mean_and_scale(labels.iter().copied());
        let x: Vec<f64> = features
            .iter()
            .enumerate()
            .map(|(k, v)| (v - feature_mean[k % p.max(1)]) / feature_scale[k % p.max(1)])
            .collect();
        let z: Vec<f64> = labels
            .iter()
            .map(|y| (y - label_center) / label_scale)
            .collect();

        let lower = fit_head(&x, p, &z, levels.0, options, options.seed)?;
        let upper = fit_head(&x, p, &z, levels.1, options, options.seed.wrapping_add(1))?;

        let to_raw = |w: &[f64]| -> Vec<f64> {
            let mut raw = vec![0.0; p + 1];
            let mut intercept = w[0];
            for j in 0..p {
                raw[j + 1] = label_scale * w[j + 1] / feature_scale[j];
                intercept -= w[j + 1] * feature_mean[j] / feature_scale[j];
            }
            raw[0] = label_scale * intercept + label_center;
            raw
        };
        let mut model = Self {
            levels,
            lower_weights: to_raw(&lower),
            upper_weights: to_raw(&upper),
            standardization: Some(Standardization {
                feature_mean,
                feature_scale,
                label_center,
                label_scale,
            }),
            iterations: options.iterations,
            final_loss: (0.0, 0.0),
        };
        let mut loss = (0.0, 0.0);
        for (i, &y) in labels.iter().enumerate() {
            let row = &features[i * p..(i + 1) * p];
            loss.0 += pinball_loss(affine(&model.lower_weights, row), y, levels.0);
            loss.1 += pinball_loss(affine(&model.upper_weights, row), y, levels.1);
        }
        model.final_loss = (loss.0 / n as f64, loss.1 / n as f64);
        let finite = model
            .lower_weights
            .iter()
            .chain(&model.upper_weights)
            .chain([&model.final_loss.0, &model.final_loss.1])
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Divergence {
                iteration: options.iterations,
                learning_rate: options.learning_rate,
            });
        }
        Ok(model)
    }

    /// Fits on a dataset's features and labels.
    pub fn fit_dataset(data: &Dataset, levels: (f64, f64), options: &FitOptions) -> Result<Self> {
        Self::fit(
            data.features(),
            data.feature_count(),
            data.labels(),
            levels,
            options,
        )
    }

    pub fn levels(&self) -> (f64, f64) {
        self.levels
    }

    pub fn feature_count(&self) -> usize {
        self.lower_weights.len() - 1
    }

    pub fn lower_weights(&self) -> &[f64] {
        &self.lower_weights
    }

    pub fn upper_weights(&self) -> &[f64] {
        &self.upper_weights
    }

    pub fn standardization(&self) -> Option<&Standardization> {
        self.standardization.as_ref()
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Mean training pinball loss of the (lower, upper) heads.
    pub fn final_loss(&self) -> (f64, f64) {
        self.final_loss
    }

    /// `(q_lo, q_hi)` at `x`, reordered if the heads cross.
    pub fn predict_interval(&self, x: &[f64]) -> Result<(f64, f64)> {
        if x.len() != self.feature_count() {
            return Err(Error::Shape {
                expected: self.feature_count(),
                actual: x.len(),
            });
        }
        Ok(self.predict_unchecked(x))
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> (f64, f64) {
        let lo = affine(&self.lower_weights, x);
        let hi = affine(&self.upper_weights, x);
        if lo <= hi {
            (lo, hi)
        } else {
            (hi, lo)
        }
    }

    /// Interval for every row of `data`.
    pub fn predict_dataset(&self, data: &Dataset) -> Result<Vec<(f64, f64)>> {
        if data.feature_count() != self.feature_count() {
            return Err(Error::Shape {
                expected: self.feature_count(),
                actual: data.feature_count(),
            });
        }
        Ok(data.rows().map(|r| self.predict_unchecked(r)).collect())
    }

    /// Plain-text `key = value` serialization; see the repository README for
    /// the field list.
    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:?}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let mut out = String::from("# bfqr quantile model v1\n");
        let _ = writeln!(out, "level_lo = {:?}", self.levels.0);
        let _ = writeln!(out, "level_hi = {:?}", self.levels.1);
        let _ = writeln!(out, "features = {}", self.feature_count());
        let _ = writeln!(out, "lower_weights = {}", join(&self.lower_weights));
        let _ = writeln!(out, "upper_weights = {}", join(&self.upper_weights));
        if let Some(s) = &self.standardization {
            let _ = writeln!(out, "feature_mean = {}", join(&s.feature_mean));
            let _ = writeln!(out, "feature_scale = {}", join(&s.feature_scale));
            let _ = writeln!(out, "label_center = {:?}", s.label_center);
            let _ = writeln!(out, "label_scale = {:?}", s.label_scale);
        }
        let _ = writeln!(out, "iterations = {}", self.iterations);
        let _ = writeln!(out, "final_loss_lo = {:?}", self.final_loss.0);
        let _ = writeln!(out, "final_loss_hi = {:?}", self.final_loss.1);
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut fields = std::collections::HashMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::ModelFormat(format!("malformed line {line:?}")))?;
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| {
            fields
                .get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::ModelFormat(format!("missing key `{k}`")))
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?
                .parse::<f64>()
                .map_err(|_| Error::ModelFormat(format!("bad number for `{k}`")))
        };
        let vec = |k: &str| -> Result<Vec<f64>> {
            get(k)?
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| Error::ModelFormat(format!("bad number in `{k}`")))
                })
                .collect()
        };
        let features: usize = get("features")?
            .parse()
            .map_err(|_| Error::ModelFormat("bad feature count".into()))?;
        let mut model = Self::from_weights(
            (num("level_lo")?, num("level_hi")?),
            vec("lower_weights")?,
            vec("upper_weights")?,
        )?;
        if model.feature_count() != features {
            return Err(Error::ModelFormat(format!(
                "declared {features} features but weights have {}",
                model.feature_count()
            )));
        }
        if fields.contains_key("feature_mean") {
            model.standardization = Some(Standardization {
                feature_mean: vec("feature_mean")?,
                feature_scale: vec("feature_scale")?,
                label_center: num("label_center")?,
                label_scale: num("label_scale")?,
            });
        }
        model.iterations = get("iterations")?
            .parse()
            .map_err(|_| Error::ModelFormat("bad iteration count".into()))?;
        model.final_loss = (num("final_loss_lo")?, num("final_loss_hi")?);
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

fn check_levels((lo, hi): (f64, f64)) -> Result<()> {
    if !(lo > 0.0 && hi < 1.0 && lo < hi) {
        return Err(Error::Config(format!(
            "quantile levels must satisfy 0 < lo < hi < 1, got ({lo}, {hi})"
        )));
    }
    Ok(())
}

fn affine(weights: &[f64], x: &[f64]) -> f64 {
    weights[0] + weights[1..].iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
}

/// One head in standardized units. Returns `[intercept, w_1, .., w_p]`.
fn fit_head(
    x: &[f64],
    p: usize,
    z: &[f64],
    tau: f64,
    options: &FitOptions,
    seed: u64,
) -> Result<Vec<f64>> {
    let n = z.len();
    let mut w = vec![0.0; p + 1];
    // intercept starts at the marginal quantile
    let mut sorted = z.to_vec();
    sorted.sort_by(f64::total_cmp);
    w[0] = sorted[((tau * (n - 1) as f64).floor() as usize).min(n - 1)];

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut grad = vec![0.0; p + 1];
    let iterations = options.iterations;
    for t in 0..iterations {
        // linear decay to zero
        let lr = options.learning_rate * (1.0 - t as f64 / iterations as f64);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for _ in 0..options.batch_size {
            let i = rng.random_range(0..n);
            let row = &x[i * p..(i + 1) * p];
            let pred = affine(&w, row);
            loss += pinball_loss(pred, z[i], tau);
            let s = pinball_slope(pred, z[i], tau);
            grad[0] += s;
            for (g, v) in grad[1..].iter_mut().zip(row) {
                *g += s * v;
            }
        }
        if !loss.is_finite() {
            return Err(Error::Divergence {
                iteration: t,
                learning_rate: options.learning_rate,
            });
        }
        let scale = lr / options.batch_size as f64;
        for (wj, g) in w.iter_mut().zip(&grad) {
            *wj -= scale * g;
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                iteration: t,
                learning_rate: options.learning_rate,
            });
        }
    }
    Ok(w)
}
