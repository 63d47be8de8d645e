//! Conformity scores, finite-sample conformal quantiles and the split CQR,
//! group-conditional CQR and label-conditional CQR baselines.

use serde::{Deserialize, Serialize};

use crate::bfqr::{union_over_bins, BinEdges};
use crate::dataset::BinPartition;
use crate::error::{Error, Result};
use crate::interval::IntervalUnion;
use crate::quantile_model::QuantileModel;

/// `max(q_lo - y, y - q_hi)`: negative strictly inside the interval, else the
/// distance to the violated bound.
pub fn conformity_score(q_lo: f64, q_hi: f64, y: f64) -> f64 {
    (q_lo - y).max(y - q_hi)
}

/// `ceil(level * (n + 1))` without counting float noise in the product as an
/// extra rank (`0.07 * 100` must give 7, not 8).
pub(crate) fn raw_rank(n: usize, level: f64) -> usize {
    let x = level * (n + 1) as f64;
    let k = (x - 1e-9 * x.abs().max(1.0)).ceil();
    if k <= 0.0 {
        0
    } else {
        k as usize
    }
}

/// 1-based rank used by [`conformal_quantile`], clamped to `[1, n]`.
pub fn conformal_rank(n: usize, level: f64) -> usize {
    raw_rank(n, level).clamp(1, n.max(1))
}

/// The `ceil(level * (n + 1))`-th smallest score, rank clamped to `[1, n]`.
pub fn conformal_quantile(scores: &[f64], level: f64) -> Result<f64> {
    SortedScores::new(scores.to_vec()).quantile(level)
}

/// Scores held in ascending order so quantile queries are O(1).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SortedScores(Vec<f64>);

impl SortedScores {
    pub fn new(mut scores: Vec<f64>) -> Self {
        scores.sort_by(f64::total_cmp);
        Self(scores)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Conformal quantile at `level`; see [`conformal_quantile`].
    pub fn quantile(&self, level: f64) -> Result<f64> {
        if self.0.is_empty() {
            return Err(Error::EmptyInput("no scores to take a quantile of"));
        }
        Ok(self.0[conformal_rank(self.0.len(), level) - 1])
    }

    /// Like [`Self::quantile`] but without the clamp: a level whose rank
    /// rounds to zero returns a value just below the smallest score, and a
    /// rank past `n` returns `+inf`. Panics on an empty sequence.
    pub fn beta_quantile(&self, beta: f64) -> f64 {
        let n = self.0.len();
        assert!(n > 0, "beta_quantile on empty scores");
        match raw_rank(n, beta) {
            0 => {
                let min = self.0[0];
                min - 1e-9 * min.abs().max(1.0)
            }
            k if k > n => f64::INFINITY,
            k => self.0[k - 1],
        }
    }

    /// Interquartile range by nearest-rank quartiles; zero below two scores.
    pub fn iqr(&self) -> f64 {
        let n = self.0.len();
        if n < 2 {
            return 0.0;
        }
        let at = |q: f64| self.0[((q * (n - 1) as f64).round() as usize).min(n - 1)];
        at(0.75) - at(0.25)
    }
}

/// One calibration sample's score with its group and label bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConformityRecord {
    pub score: f64,
    pub group: usize,
    pub bin: usize,
    pub index: usize,
}

/// Scores every calibration sample and tags it with its bin under `partition`
/// (which must have been built from exactly these labels).
pub fn conformity_records(
    predictions: &[(f64, f64)],
    labels: &[f64],
    groups: &[usize],
    partition: &BinPartition,
) -> Vec<ConformityRecord> {
    let bins = partition.assignments();
    predictions
        .iter()
        .zip(labels)
        .zip(groups)
        .enumerate()
        .map(|(index, ((&(lo, hi), &y), &group))| ConformityRecord {
            score: conformity_score(lo, hi, y),
            group,
            bin: bins[index],
            index,
        })
        .collect()
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    Ok(())
}

/// Split conformalized quantile regression: one pooled correction.
#[derive(Debug, Clone, PartialEq)]
pub struct CqrPredictor {
    correction: f64,
}

impl CqrPredictor {
    pub fn calibrate(scores: &[f64], alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(Self {
            correction: conformal_quantile(scores, 1.0 - alpha)?,
        })
    }

    pub fn from_correction(correction: f64) -> Self {
        Self { correction }
    }

    pub fn correction(&self) -> f64 {
        self.correction
    }

    pub fn interval(&self, q_lo: f64, q_hi: f64) -> IntervalUnion {
        IntervalUnion::single(q_lo - self.correction, q_hi + self.correction)
    }

    pub fn predict(&self, model: &QuantileModel, x: &[f64]) -> Result<IntervalUnion> {
        let (lo, hi) = model.predict_interval(x)?;
        Ok(self.interval(lo, hi))
    }
}

/// Group-conditional CQR: a separate correction per protected group.
#[derive(Debug, Clone, PartialEq)]
pub struct GcqrPredictor {
    corrections: Vec<Option<f64>>,
}

impl GcqrPredictor {
    /// `scores[i]` belongs to group `groups[i]`; groups range over
    /// `0..group_count`.
    pub fn calibrate(
        scores: &[f64],
        groups: &[usize],
        group_count: usize,
        alpha: f64,
    ) -> Result<Self> {
        check_alpha(alpha)?;
        if scores.len() != groups.len() {
            return Err(Error::Shape {
                expected: scores.len(),
                actual: groups.len(),
            });
        }
        let mut per_group = vec![Vec::new(); group_count];
        for (&s, &g) in scores.iter().zip(groups) {
            per_group
                .get_mut(g)
                .ok_or_else(|| Error::Config(format!("group id {g} >= {group_count}")))?
                .push(s);
        }
        let corrections = per_group
            .into_iter()
            .map(|s| SortedScores::new(s).quantile(1.0 - alpha).ok())
            .collect();
        Ok(Self { corrections })
    }

    pub fn correction(&self, group: usize) -> Result<f64> {
        self.corrections
            .get(group)
            .copied()
            .flatten()
            .ok_or(Error::MissingGroup(group))
    }

    pub fn interval(&self, q_lo: f64, q_hi: f64, group: usize) -> Result<IntervalUnion> {
        let q = self.correction(group)?;
        Ok(IntervalUnion::single(q_lo - q, q_hi + q))
    }

    pub fn predict(&self, model: &QuantileModel, x: &[f64], group: usize) -> Result<IntervalUnion> {
        let (lo, hi) = model.predict_interval(x)?;
        self.interval(lo, hi, group)
    }
}

/// Label-conditional CQR: per-bin, group-blind corrections at level
/// `1 - alpha`, each intersected with its bin and unioned.
#[derive(Debug, Clone, PartialEq)]
pub struct LcqrPredictor {
    partition: BinPartition,
    corrections: Vec<f64>,
    edges: BinEdges,
}

impl LcqrPredictor {
    /// `records` must carry bins from `partition`.
    pub fn calibrate(
        records: &[ConformityRecord],
        partition: &BinPartition,
        alpha: f64,
        edges: BinEdges,
    ) -> Result<Self> {
        check_alpha(alpha)?;
        let mut per_bin = vec![Vec::new(); partition.bin_count()];
        for r in records {
            per_bin[r.bin].push(r.score);
        }
        let corrections = per_bin
            .into_iter()
            .enumerate()
            .map(|(m, s)| {
                SortedScores::new(s)
                    .quantile(1.0 - alpha)
                    .map_err(|_| Error::Config(format!("label bin {m} has no calibration samples")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            partition: partition.clone(),
            corrections,
            edges,
        })
    }

    pub fn corrections(&self) -> &[f64] {
        &self.corrections
    }

    pub fn interval(&self, q_lo: f64, q_hi: f64) -> IntervalUnion {
        union_over_bins(q_lo, q_hi, &self.partition, self.edges, |m| {
            self.corrections[m]
        })
    }

    pub fn predict(&self, model: &QuantileModel, x: &[f64]) -> Result<IntervalUnion> {
        let (lo, hi) = model.predict_interval(x)?;
        Ok(self.interval(lo, hi))
    }
}
