//! Per (group, bin) conformity quantiles and the binned fair predictor.
//!
//! For a test point with group `a` and base interval `[q_lo, q_hi]`, bin `m`
//! contributes
//!
//! ```text
//! C_m = B_m ∩ [q_lo - G_{a,m}(beta_m), q_hi + G_{a,m}(beta_m)]
//! ```
//!
//! where `G_{a,m}(beta)` is the conformal `beta`-quantile of calibration
//! scores with group `a` and label in `B_m`. The prediction set is the union
//! of all `C_m`; its convex hull is the single-interval variant.

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::conformal::{check_alpha, ConformityRecord, SortedScores};
use crate::dataset::BinPartition;
use crate::error::{Error, Result};
use crate::interval::IntervalUnion;
use crate::quantile_model::QuantileModel;

/// How the outermost bins treat labels beyond the calibration range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinEdges {
    /// The first and last bins extend to -inf / +inf, matching
    /// [`BinPartition::bin_of`], which clamps out-of-range labels into them.
    #[default]
    Open,
    /// Sub-intervals are clipped to `[b_0, b_M]`.
    Clipped,
}

/// Label range of bin `m` as used for interval construction.
pub fn bin_range(partition: &BinPartition, m: usize, edges: BinEdges) -> (f64, f64) {
    let (mut lo, mut hi) = partition.bounds(m);
    if edges == BinEdges::Open {
        if m == 0 {
            lo = f64::NEG_INFINITY;
        }
        if m + 1 == partition.bin_count() {
            hi = f64::INFINITY;
        }
    }
    (lo, hi)
}

/// `[band_lo, band_hi] ∩ B_m` as a closed interval, where `B_m` is
/// `[bin_lo, bin_hi)`, or `[bin_lo, bin_hi]` for the last bin. Non-emptiness
/// follows the half-open convention; the returned piece is its closure.
pub(crate) fn clip_to_bin(
    band_lo: f64,
    band_hi: f64,
    (bin_lo, bin_hi): (f64, f64),
    last: bool,
) -> Option<(f64, f64)> {
    if band_lo > band_hi || band_hi < bin_lo {
        return None;
    }
    let reaches = if last {
        band_lo <= bin_hi
    } else {
        band_lo < bin_hi
    };
    if !reaches {
        return None;
    }
    Some((band_lo.max(bin_lo), band_hi.min(bin_hi)))
}

/// Union over bins of `B_m ∩ [q_lo - g(m), q_hi + g(m)]`.
pub fn union_over_bins(
    q_lo: f64,
    q_hi: f64,
    partition: &BinPartition,
    edges: BinEdges,
    correction: impl Fn(usize) -> f64,
) -> IntervalUnion {
    let bins = partition.bin_count();
    IntervalUnion::from_intervals((0..bins).filter_map(|m| {
        let g = correction(m);
        clip_to_bin(
            q_lo - g,
            q_hi + g,
            bin_range(partition, m, edges),
            m + 1 == bins,
        )
    }))
}

/// Sorted calibration scores for every (group, bin) cell, plus the pooled
/// sequences used as fallbacks and by the optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupBinQuantiles {
    groups: usize,
    bins: usize,
    cells: Vec<SortedScores>,
    pooled_bins: Vec<SortedScores>,
    pooled_groups: Vec<SortedScores>,
    pooled: SortedScores,
}

impl GroupBinQuantiles {
    /// Buckets records by `(group, bin)`. Records outside `0..groups` or
    /// `0..bins` are rejected.
    pub fn build(records: &[ConformityRecord], groups: usize, bins: usize) -> Result<Self> {
        let mut cells = vec![Vec::new(); groups * bins];
        let mut pooled_bins = vec![Vec::new(); bins];
        let mut pooled_groups = vec![Vec::new(); groups];
        for r in records {
            if r.group >= groups || r.bin >= bins {
                return Err(Error::Config(format!(
                    "record {} has (group {}, bin {}) outside {groups} x {bins}",
                    r.index, r.group, r.bin
                )));
            }
            cells[r.group * bins + r.bin].push(r.score);
            pooled_bins[r.bin].push(r.score);
            pooled_groups[r.group].push(r.score);
        }
        let gbq = Self {
            groups,
            bins,
            cells: cells.into_iter().map(SortedScores::new).collect(),
            pooled_bins: pooled_bins.into_iter().map(SortedScores::new).collect(),
            pooled_groups: pooled_groups.into_iter().map(SortedScores::new).collect(),
            pooled: SortedScores::new(records.iter().map(|r| r.score).collect()),
        };
        for a in 0..groups {
            for m in 0..bins {
                if gbq.cell(a, m).is_empty() && !gbq.pooled_groups[a].is_empty() {
                    warn!("no calibration samples for group {a} in bin {m}; using the pooled bin quantile");
                }
            }
        }
        Ok(gbq)
    }

    pub fn group_count(&self) -> usize {
        self.groups
    }

    pub fn bin_count(&self) -> usize {
        self.bins
    }

    pub fn cell(&self, group: usize, bin: usize) -> &SortedScores {
        &self.cells[group * self.bins + bin]
    }

    pub fn count(&self, group: usize, bin: usize) -> usize {
        self.cell(group, bin).len()
    }

    pub fn total_count(&self) -> usize {
        self.pooled.len()
    }

    pub fn pooled(&self) -> &SortedScores {
        &self.pooled
    }

    pub fn pooled_bin(&self, bin: usize) -> &SortedScores {
        &self.pooled_bins[bin]
    }

    pub fn pooled_group(&self, group: usize) -> Option<&SortedScores> {
        self.pooled_groups.get(group).filter(|s| !s.is_empty())
    }

    /// Scores that back `G_{a,m}`: the cell itself, or the group-blind bin
    /// when the cell is empty or the group is unknown. The flag reports the
    /// fallback.
    pub fn effective_cell(&self, group: usize, bin: usize) -> (&SortedScores, bool) {
        if group < self.groups {
            let cell = self.cell(group, bin);
            if !cell.is_empty() {
                return (cell, false);
            }
        }
        (&self.pooled_bins[bin], true)
    }

    /// Number of (group, bin) cells that fall back to the pooled bin.
    pub fn fallback_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.is_empty()).count()
    }

    /// `G_{a,m}(beta)`: the `ceil(beta (n + 1))`-th smallest cell score,
    /// `+inf` when that rank exceeds `n`; `beta = 0` gives a value below
    /// every score.
    ///
    /// # Panics
    /// If both the cell and the pooled bin are empty.
    pub fn lookup(&self, group: usize, bin: usize, beta: f64) -> f64 {
        let (scores, fallback) = self.effective_cell(group, bin);
        if fallback {
            debug!("G lookup for empty cell (group {group}, bin {bin}) uses pooled bin scores");
        }
        scores.beta_quantile(beta)
    }
}

/// Per-bin coverage targets whose (weighted) mean is `1 - alpha`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaVector {
    values: Vec<f64>,
    target: f64,
    /// Normalized bin weights; `None` means equal weights.
    weights: Option<Vec<f64>>,
    /// Per-bin upper bounds, 1 unless set by [`BetaVector::project_bounded`].
    upper: Vec<f64>,
}

pub const BETA_TOLERANCE: f64 = 1e-9;

impl BetaVector {
    /// Validates `values` against the mean constraint. `weights`, if given,
    /// are relative bin masses and are normalized to sum to one.
    pub fn new(values: Vec<f64>, alpha: f64, weights: Option<Vec<f64>>) -> Result<Self> {
        check_alpha(alpha)?;
        if values.is_empty() {
            return Err(Error::Config("beta vector needs at least one bin".into()));
        }
        if values.iter().any(|b| !(0.0..=1.0).contains(b)) {
            return Err(Error::Config("every beta must lie in [0, 1]".into()));
        }
        let weights = normalize_weights(weights, values.len())?;
        let upper = vec![1.0; values.len()];
        let v = Self {
            values,
            target: 1.0 - alpha,
            weights,
            upper,
        };
        if (v.mean() - v.target).abs() > BETA_TOLERANCE {
            return Err(Error::Config(format!(
                "beta mean {} differs from target {}",
                v.mean(),
                v.target
            )));
        }
        Ok(v)
    }

    /// Every bin at `1 - alpha`.
    pub fn uniform(bins: usize, alpha: f64) -> Result<Self> {
        Self::new(vec![1.0 - alpha; bins], alpha, None)
    }

    /// Shifts `values` by a common amount (clipping to `[0, 1]`, repeated on
    /// the unclipped entries) until the weighted mean hits `1 - alpha`.
    pub fn project(values: Vec<f64>, alpha: f64, weights: Option<Vec<f64>>) -> Result<Self> {
        let bins = values.len();
        Self::project_bounded(values, alpha, weights, vec![1.0; bins])
    }

    /// [`Self::project`] with bin `m` clipped to `[0, upper[m]]` instead.
    ///
    /// A group-bin quantile cannot grow past its largest score, so a target
    /// above `n / (n + 1)` for a cell of `n` scores buys no extra coverage;
    /// bounding each bin keeps the mean constraint honest.
    pub fn project_bounded(
        values: Vec<f64>,
        alpha: f64,
        weights: Option<Vec<f64>>,
        upper: Vec<f64>,
    ) -> Result<Self> {
        check_alpha(alpha)?;
        let target = 1.0 - alpha;
        let bins = values.len();
        if bins == 0 {
            return Err(Error::Config("beta vector needs at least one bin".into()));
        }
        if upper.len() != bins {
            return Err(Error::Shape {
                expected: bins,
                actual: upper.len(),
            });
        }
        if upper.iter().any(|u| !(0.0..=1.0).contains(u)) {
            return Err(Error::Config("beta upper bounds must lie in [0, 1]".into()));
        }
        let weights = normalize_weights(weights, bins)?;
        let w = |m: usize| weights.as_ref().map_or(1.0 / bins as f64, |w| w[m]);
        let capacity: f64 = (0..bins).map(|m| w(m) * upper[m]).sum();
        if capacity < target - BETA_TOLERANCE {
            return Err(Error::Config(format!(
                "bins can reach a mean coverage of at most {capacity}, below {target}"
            )));
        }
        let mut values: Vec<f64> = values
            .into_iter()
            .zip(&upper)
            .map(|(b, &u)| b.clamp(0.0, u))
            .collect();
        for _ in 0..=bins {
            let mean: f64 = values.iter().enumerate().map(|(m, b)| w(m) * b).sum();
            let gap = target - mean;
            if gap.abs() <= 1e-13 {
                break;
            }
            let free: Vec<usize> = (0..bins)
                .filter(|&m| {
                    if gap > 0.0 {
                        values[m] < upper[m]
                    } else {
                        values[m] > 0.0
                    }
                })
                .collect();
            let free_mass: f64 = free.iter().map(|&m| w(m)).sum();
            if free_mass <= 0.0 {
                break;
            }
            let shift = gap / free_mass;
            for m in free {
                values[m] = (values[m] + shift).clamp(0.0, upper[m]);
            }
        }
        Ok(Self {
            values,
            target,
            weights,
            upper,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, m: usize) -> f64 {
        self.values[m]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn target(&self) -> f64 {
        self.target
    }

    /// Normalized weight of bin `m`.
    pub fn weight(&self, m: usize) -> f64 {
        self.weights
            .as_ref()
            .map_or(1.0 / self.values.len() as f64, |w| w[m])
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    /// Weighted mean coverage target.
    pub fn mean(&self) -> f64 {
        (0..self.values.len())
            .map(|m| self.weight(m) * self.values[m])
            .sum()
    }

    /// Largest admissible target of bin `m`.
    pub fn upper(&self, m: usize) -> f64 {
        self.upper[m]
    }

    pub(crate) fn set(&mut self, m: usize, value: f64) {
        self.values[m] = value.clamp(0.0, self.upper[m]);
    }
}

fn normalize_weights(weights: Option<Vec<f64>>, bins: usize) -> Result<Option<Vec<f64>>> {
    let Some(w) = weights else { return Ok(None) };
    if w.len() != bins {
        return Err(Error::Shape {
            expected: bins,
            actual: w.len(),
        });
    }
    let total: f64 = w.iter().sum();
    if w.iter().any(|x| !x.is_finite() || *x < 0.0) || total <= 0.0 {
        return Err(Error::Config(
            "bin weights must be non-negative with a positive sum".into(),
        ));
    }
    Ok(Some(w.into_iter().map(|x| x / total).collect()))
}

/// `C(x) = ∪_m B_m ∩ [q_lo - G_{a,m}(beta_m), q_hi + G_{a,m}(beta_m)]`.
pub fn bfqr_interval(
    q_lo: f64,
    q_hi: f64,
    group: usize,
    betas: &BetaVector,
    gbq: &GroupBinQuantiles,
    partition: &BinPartition,
    edges: BinEdges,
) -> IntervalUnion {
    union_over_bins(q_lo, q_hi, partition, edges, |m| {
        gbq.lookup(group, m, betas.get(m))
    })
}

pub fn hull_interval(u: &IntervalUnion) -> IntervalUnion {
    u.hull()
}

/// The coverage indicator `1[y ∈ u]`.
pub fn covered(u: &IntervalUnion, y: f64) -> bool {
    u.covers(y)
}

/// A calibrated BFQR predictor with fixed coverage targets.
#[derive(Debug, Clone)]
pub struct BfqrPredictor {
    gbq: GroupBinQuantiles,
    partition: BinPartition,
    betas: BetaVector,
    edges: BinEdges,
    /// `G_{a,m}(beta_m)`, cached row-major by group.
    table: Vec<f64>,
}

impl BfqrPredictor {
    pub fn new(
        gbq: GroupBinQuantiles,
        partition: BinPartition,
        betas: BetaVector,
        edges: BinEdges,
    ) -> Result<Self> {
        let bins = partition.bin_count();
        if gbq.bin_count() != bins || betas.len() != bins {
            return Err(Error::Shape {
                expected: bins,
                actual: if gbq.bin_count() != bins {
                    gbq.bin_count()
                } else {
                    betas.len()
                },
            });
        }
        if (0..bins).any(|m| gbq.pooled_bin(m).is_empty()) {
            return Err(Error::Config(
                "every label bin needs calibration samples".into(),
            ));
        }
        let table = (0..gbq.group_count())
            .flat_map(|a| (0..bins).map(move |m| (a, m)))
            .map(|(a, m)| gbq.lookup(a, m, betas.get(m)))
            .collect();
        Ok(Self {
            gbq,
            partition,
            betas,
            edges,
            table,
        })
    }

    pub fn betas(&self) -> &BetaVector {
        &self.betas
    }

    pub fn quantiles(&self) -> &GroupBinQuantiles {
        &self.gbq
    }

    pub fn partition(&self) -> &BinPartition {
        &self.partition
    }

    /// `G_{a,m}(beta_m)` for this predictor's targets.
    pub fn correction(&self, group: usize, bin: usize) -> f64 {
        if group < self.gbq.group_count() {
            self.table[group * self.partition.bin_count() + bin]
        } else {
            self.gbq.lookup(group, bin, self.betas.get(bin))
        }
    }

    pub fn interval(&self, q_lo: f64, q_hi: f64, group: usize) -> IntervalUnion {
        union_over_bins(q_lo, q_hi, &self.partition, self.edges, |m| {
            self.correction(group, m)
        })
    }

    /// Convex-hull (single interval) variant.
    pub fn hull(&self, q_lo: f64, q_hi: f64, group: usize) -> IntervalUnion {
        self.interval(q_lo, q_hi, group).hull()
    }

    pub fn predict(&self, model: &QuantileModel, x: &[f64], group: usize) -> Result<IntervalUnion> {
        let (lo, hi) = model.predict_interval(x)?;
        Ok(self.interval(lo, hi, group))
    }
}
