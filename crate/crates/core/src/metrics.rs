//! Coverage, width and equal-opportunity-of-coverage metrics.

use log::debug;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::dataset::make_equal_mass_bins;
use crate::error::{Error, Result};
use crate::interval::IntervalUnion;

/// Default evaluation bin count for [`mean_max_gap`].
pub const GAP_BINS: usize = 20;

/// Largest bin the exhaustive U-statistic oracle accepts.
pub const ORACLE_LIMIT: usize = 14;

/// Outcome of one test point under one method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub covered: bool,
    pub group: usize,
    pub label: f64,
    /// Lebesgue measure of the prediction set.
    pub width: f64,
    pub hull_width: f64,
    /// Number of disjoint pieces.
    pub pieces: usize,
}

impl EvaluationRecord {
    pub fn new(set: &IntervalUnion, group: usize, label: f64) -> Self {
        Self {
            covered: set.covers(label),
            group,
            label,
            width: set.total_width(),
            hull_width: set.hull_width(),
            pieces: set.count(),
        }
    }
}

/// How the independence statistic is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TSettings {
    /// Evaluations averaged when subsampling; ignored otherwise since the
    /// full-bin statistic is deterministic.
    pub repeats: usize,
    /// Evaluate each bin on a `Poisson(sigma / 2)`-sized random subset.
    pub subsample: bool,
    pub seed: u64,
}

impl Default for TSettings {
    fn default() -> Self {
        Self {
            repeats: 10,
            subsample: false,
            seed: 0,
        }
    }
}

/// Value of `T` plus bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TStatistic {
    pub value: f64,
    pub repeats: usize,
    pub bins: usize,
    /// Bins with at most four samples, which contribute nothing.
    pub small_bins: usize,
}

/// All metrics of one method on one evaluation set. Coverages are fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub marginal_coverage: f64,
    /// `None` for groups absent from the evaluation set.
    pub group_coverage: Vec<Option<f64>>,
    pub mean_width: f64,
    pub mean_hull_width: f64,
    pub mean_pieces: f64,
    pub mean_max_gap: f64,
    pub t: TStatistic,
    /// Coverage per evaluation bin (rows) and group (columns).
    pub bin_coverage: Vec<Vec<Option<f64>>>,
    /// Calibration cells that fell back to the pooled bin.
    pub fallback_cells: usize,
}

/// Marginal and per-group coverage and mean widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageStats {
    pub marginal: f64,
    pub groups: Vec<Option<f64>>,
    pub mean_width: f64,
    pub mean_hull_width: f64,
    pub mean_pieces: f64,
}

pub fn coverage_stats(records: &[EvaluationRecord], group_count: usize) -> Result<CoverageStats> {
    if records.is_empty() {
        return Err(Error::EmptyInput("no evaluation records"));
    }
    let n = records.len() as f64;
    let k = group_count.max(records.iter().map(|r| r.group + 1).max().unwrap_or(0));
    let mut hits = vec![0usize; k];
    let mut totals = vec![0usize; k];
    for r in records {
        totals[r.group] += 1;
        hits[r.group] += usize::from(r.covered);
    }
    Ok(CoverageStats {
        marginal: records.iter().filter(|r| r.covered).count() as f64 / n,
        groups: hits
            .iter()
            .zip(&totals)
            .map(|(&h, &t)| (t > 0).then(|| h as f64 / t as f64))
            .collect(),
        mean_width: records.iter().map(|r| r.width).sum::<f64>() / n,
        mean_hull_width: records.iter().map(|r| r.hull_width).sum::<f64>() / n,
        mean_pieces: records.iter().map(|r| r.pieces as f64).sum::<f64>() / n,
    })
}

/// Per evaluation bin and group coverage over `bins` equal-mass label bins.
pub fn bin_coverage(
    records: &[EvaluationRecord],
    bins: usize,
    group_count: usize,
) -> Result<Vec<Vec<Option<f64>>>> {
    if records.is_empty() {
        return Err(Error::EmptyInput("no evaluation records"));
    }
    let labels: Vec<f64> = records.iter().map(|r| r.label).collect();
    let partition = make_equal_mass_bins(&labels, bins.min(records.len()))?;
    let k = group_count.max(records.iter().map(|r| r.group + 1).max().unwrap_or(0));
    Ok((0..partition.bin_count())
        .map(|m| {
            let mut hits = vec![0usize; k];
            let mut totals = vec![0usize; k];
            for &i in partition.members(m) {
                totals[records[i].group] += 1;
                hits[records[i].group] += usize::from(records[i].covered);
            }
            hits.iter()
                .zip(&totals)
                .map(|(&h, &t)| (t > 0).then(|| h as f64 / t as f64))
                .collect()
        })
        .collect())
}

/// Mean over `bins` equal-mass label bins of the largest between-group
/// coverage difference. Bins holding a single group count as zero.
pub fn mean_max_gap(records: &[EvaluationRecord], bins: usize) -> Result<f64> {
    let table = bin_coverage(records, bins, 0)?;
    let gaps: Vec<f64> = table
        .iter()
        .enumerate()
        .map(|(m, row)| {
            let present: Vec<f64> = row.iter().flatten().copied().collect();
            if present.len() < 2 {
                debug!("evaluation bin {m} holds a single group");
                return 0.0;
            }
            let hi = present.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = present.iter().copied().fold(f64::INFINITY, f64::min);
            hi - lo
        })
        .collect();
    Ok(gaps.iter().sum::<f64>() / gaps.len() as f64)
}

/// Unbiased energy-distance independence estimate between group and coverage
/// within one bin, from pairwise distance matrices under the discrete metric.
/// Needs at least four samples; returns 0 otherwise.
pub fn energy_independence(groups: &[usize], covered: &[bool]) -> f64 {
    let n = groups.len();
    if n < 4 {
        return 0.0;
    }
    let a = u_centered(n, |i, j| f64::from(u8::from(groups[i] != groups[j])));
    let v = u_centered(n, |i, j| f64::from(u8::from(covered[i] != covered[j])));
    let dot: f64 = a.iter().zip(&v).map(|(x, y)| x * y).sum();
    dot / (n * (n - 3)) as f64
}

/// U-centered distance matrix with zero diagonal.
fn u_centered(n: usize, dist: impl Fn(usize, usize) -> f64) -> Vec<f64> {
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                d[i * n + j] = dist(i, j);
            }
        }
    }
    let rows: Vec<f64> = (0..n).map(|i| d[i * n..(i + 1) * n].iter().sum()).collect();
    let total: f64 = rows.iter().sum();
    let nf = n as f64;
    for i in 0..n {
        for j in 0..n {
            d[i * n + j] = if i == j {
                0.0
            } else {
                d[i * n + j] - rows[i] / (nf - 2.0) - rows[j] / (nf - 2.0)
                    + total / ((nf - 1.0) * (nf - 2.0))
            };
        }
    }
    d
}

/// `T = sum_m 1(sigma_m > 4) sigma_m U_m` over `ceil(n^(2/5))` equal-mass
/// label bins.
pub fn t_statistic(records: &[EvaluationRecord], settings: &TSettings) -> Result<TStatistic> {
    if records.is_empty() {
        return Err(Error::EmptyInput("no evaluation records"));
    }
    let n = records.len();
    let d = ((n as f64).powf(0.4).ceil() as usize).clamp(1, n);
    let labels: Vec<f64> = records.iter().map(|r| r.label).collect();
    let partition = make_equal_mass_bins(&labels, d)?;
    let small_bins = partition
        .member_counts()
        .iter()
        .filter(|&&s| s <= 4)
        .count();

    let bin_value = |members: &[usize]| -> f64 {
        let sigma = members.len();
        if sigma <= 4 {
            return 0.0;
        }
        let groups: Vec<usize> = members.iter().map(|&i| records[i].group).collect();
        let covered: Vec<bool> = members.iter().map(|&i| records[i].covered).collect();
        sigma as f64 * energy_independence(&groups, &covered)
    };

    if !settings.subsample {
        let value = (0..d).map(|m| bin_value(partition.members(m))).sum();
        return Ok(TStatistic {
            value,
            repeats: 1,
            bins: d,
            small_bins,
        });
    }
    let repeats = settings.repeats.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut total = 0.0;
    for _ in 0..repeats {
        for m in 0..d {
            let members = partition.members(m);
            let sigma = members.len();
            if sigma == 0 {
                continue;
            }
            let size = Poisson::new(sigma as f64 / 2.0)
                .map(|p| p.sample(&mut rng) as usize)
                .unwrap_or(0)
                .min(sigma);
            let picked: Vec<usize> = sample(&mut rng, sigma, size)
                .into_iter()
                .map(|k| members[k])
                .collect();
            total += bin_value(&picked);
        }
    }
    Ok(TStatistic {
        value: total / repeats as f64,
        repeats,
        bins: d,
        small_bins,
    })
}

/// Exact 4-subset U-statistic with the kernel
/// `phi_ij(a, v) = 1[A_i = a, V_i = v] - 1[A_i = a] 1[V_j = v]`,
/// `h_ijkl = mean over orderings pi of sum_{a,v} phi_{pi1 pi2} phi_{pi3 pi4}`.
/// Exponential in the bin size, so bins above [`ORACLE_LIMIT`] are refused.
pub fn t_statistic_u_oracle(groups: &[usize], covered: &[bool]) -> Result<f64> {
    let n = groups.len();
    if n > ORACLE_LIMIT {
        return Err(Error::SizeGuard {
            size: n,
            limit: ORACLE_LIMIT,
        });
    }
    if n < 4 {
        return Err(Error::EmptyInput("the U-statistic needs four samples"));
    }
    let k = groups.iter().max().map_or(0, |g| g + 1);
    let phi = |i: usize, j: usize, a: usize, v: bool| -> f64 {
        let joint = f64::from(u8::from(groups[i] == a && covered[i] == v));
        joint - f64::from(u8::from(groups[i] == a)) * f64::from(u8::from(covered[j] == v))
    };
    let orderings = permutations4();
    let mut sum = 0.0;
    let mut subsets = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            for l in j + 1..n {
                for m in l + 1..n {
                    let idx = [i, j, l, m];
                    let mut h = 0.0;
                    for p in &orderings {
                        let (w, x, y, z) = (idx[p[0]], idx[p[1]], idx[p[2]], idx[p[3]]);
                        for a in 0..k {
                            for v in [false, true] {
                                h += phi(w, x, a, v) * phi(y, z, a, v);
                            }
                        }
                    }
                    sum += h / orderings.len() as f64;
                    subsets += 1;
                }
            }
        }
    }
    Ok(sum / subsets as f64)
}

fn permutations4() -> Vec<[usize; 4]> {
    let mut out = Vec::with_capacity(24);
    for a in 0..4 {
        for b in 0..4 {
            for c in 0..4 {
                for d in 0..4 {
                    if a != b && a != c && a != d && b != c && b != d && c != d {
                        out.push([a, b, c, d]);
                    }
                }
            }
        }
    }
    out
}

/// Every metric for one method's evaluation records.
pub fn evaluate(
    records: &[EvaluationRecord],
    group_count: usize,
    gap_bins: usize,
    t_settings: &TSettings,
    fallback_cells: usize,
) -> Result<MetricsReport> {
    let stats = coverage_stats(records, group_count)?;
    Ok(MetricsReport {
        marginal_coverage: stats.marginal,
        group_coverage: stats.groups,
        mean_width: stats.mean_width,
        mean_hull_width: stats.mean_hull_width,
        mean_pieces: stats.mean_pieces,
        mean_max_gap: mean_max_gap(records, gap_bins)?,
        t: t_statistic(records, t_settings)?,
        bin_coverage: bin_coverage(records, gap_bins, group_count)?,
        fallback_cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn record(covered: bool, group: usize, label: f64) -> EvaluationRecord {
        EvaluationRecord {
            covered,
            group,
            label,
            width: 1.0,
            hull_width: 1.0,
            pieces: 1,
        }
    }

    fn random_records(rng: &mut ChaCha8Rng, n: usize, groups: usize) -> Vec<EvaluationRecord> {
        (0..n)
            .map(|_| {
                record(
                    rng.random_bool(0.7),
                    rng.random_range(0..groups),
                    rng.random::<f64>(),
                )
            })
            .collect()
    }

    #[test]
    fn coverage_cases() {
        let all: Vec<_> = (0..10).map(|i| record(true, i % 2, i as f64)).collect();
        let s = coverage_stats(&all, 2).unwrap();
        assert_eq!(s.marginal, 1.0);

        let mut mixed: Vec<_> = (0..10).map(|i| record(i < 8, 0, i as f64)).collect();
        mixed.extend((0..5).map(|i| record(true, 1, i as f64)));
        let s = coverage_stats(&mixed, 3).unwrap();
        assert_eq!(s.groups, vec![Some(0.8), Some(1.0), None]);
        assert!(coverage_stats(&[], 1).is_err());
    }

    #[test]
    fn gap_arithmetic() {
        // bin 0: groups cover 0.8 and 0.6; bin 1: both 1.0
        let mut recs = Vec::new();
        for i in 0..10 {
            recs.push(record(i < 8, 0, i as f64 * 0.01));
            recs.push(record(i < 6, 1, i as f64 * 0.01 + 0.001));
        }
        for i in 0..20 {
            recs.push(record(true, i % 2, 10.0 + i as f64));
        }
        let gap = mean_max_gap(&recs, 2).unwrap();
        assert!((gap - 0.1).abs() < 1e-12);

        let single: Vec<_> = (0..20).map(|i| record(i % 3 == 0, 0, i as f64)).collect();
        assert_eq!(mean_max_gap(&single, 5).unwrap(), 0.0);
    }

    /// Enumerates every (bin, group) cell by sorting labels directly.
    fn gap_oracle(records: &[EvaluationRecord], bins: usize) -> f64 {
        let mut order: Vec<usize> = (0..records.len()).collect();
        order.sort_by(|&i, &j| {
            records[i]
                .label
                .total_cmp(&records[j].label)
                .then(i.cmp(&j))
        });
        let n = records.len();
        let mut total = 0.0;
        let mut start = 0;
        for m in 0..bins {
            let size = n / bins + usize::from(m < n % bins);
            let cell = &order[start..start + size];
            start += size;
            let groups: std::collections::BTreeSet<usize> =
                cell.iter().map(|&i| records[i].group).collect();
            let rates: Vec<f64> = groups
                .iter()
                .map(|&g| {
                    let members: Vec<_> = cell.iter().filter(|&&i| records[i].group == g).collect();
                    members.iter().filter(|&&&i| records[i].covered).count() as f64
                        / members.len() as f64
                })
                .collect();
            if rates.len() > 1 {
                total += rates.iter().cloned().fold(f64::MIN, f64::max)
                    - rates.iter().cloned().fold(f64::MAX, f64::min);
            }
        }
        total / bins as f64
    }

    #[test]
    fn gap_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let n = rng.random_range(10..200);
            let recs = random_records(&mut rng, n, 3);
            let got = mean_max_gap(&recs, 5).unwrap();
            assert!((got - gap_oracle(&recs, 5)).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_inputs_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let groups: Vec<usize> = (0..8).map(|_| rng.random_range(0..3)).collect();
        let covered: Vec<bool> = (0..8).map(|_| rng.random_bool(0.5)).collect();
        let all = vec![true; 8];
        let one = vec![1usize; 8];
        assert_eq!(energy_independence(&groups, &all), 0.0);
        assert_eq!(energy_independence(&one, &covered), 0.0);
        assert!(t_statistic_u_oracle(&groups, &all).unwrap().abs() < 1e-15);
        assert!(t_statistic_u_oracle(&one, &covered).unwrap().abs() < 1e-15);

        let recs: Vec<_> = (0..500).map(|i| record(true, i % 3, i as f64)).collect();
        assert_eq!(
            t_statistic(&recs, &TSettings::default()).unwrap().value,
            0.0
        );
    }

    #[test]
    fn oracle_limits() {
        let g = vec![0usize; 15];
        let c = vec![true; 15];
        assert!(matches!(
            t_statistic_u_oracle(&g, &c),
            Err(Error::SizeGuard {
                size: 15,
                limit: 14
            })
        ));
        let v = t_statistic_u_oracle(&[0, 1, 0, 1], &[true, false, false, true]).unwrap();
        assert!(v.is_finite());
        let dep = t_statistic_u_oracle(
            &[0, 1, 0, 1, 0, 1, 0, 1],
            &[false, true, false, true, false, true, false, true],
        )
        .unwrap();
        assert!(dep > 0.0);
    }

    #[test]
    fn v_statistic_equals_u_oracle_per_bin() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let n = rng.random_range(4..=10);
            let groups: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
            let covered: Vec<bool> = (0..n).map(|_| rng.random_bool(0.6)).collect();
            let fast = energy_independence(&groups, &covered);
            let slow = t_statistic_u_oracle(&groups, &covered).unwrap();
            assert!((fast - slow).abs() < 1e-9, "{fast} vs {slow}");
        }
    }

    #[test]
    fn separates_dependence_from_independence() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let trials = 100;
        let (mut indep, mut dep) = (0.0, 0.0);
        for _ in 0..trials {
            let labels: Vec<f64> = (0..2000).map(|_| rng.random::<f64>()).collect();
            let groups: Vec<usize> = (0..2000)
                .map(|_| usize::from(rng.random_bool(0.3)))
                .collect();
            let a: Vec<_> = (0..2000)
                .map(|i| record(rng.random_bool(0.5 + 0.4 * labels[i]), groups[i], labels[i]))
                .collect();
            let b: Vec<_> = (0..2000)
                .map(|i| {
                    let p = if groups[i] == 0 { 0.95 } else { 0.6 };
                    record(rng.random_bool(p), groups[i], labels[i])
                })
                .collect();
            indep += t_statistic(&a, &TSettings::default()).unwrap().value;
            dep += t_statistic(&b, &TSettings::default()).unwrap().value;
        }
        let (indep, dep) = (indep / trials as f64, dep / trials as f64);
        assert!(dep > 10.0 * indep.abs(), "dep {dep} indep {indep}");
    }

    #[test]
    fn subsampled_statistic_is_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let recs = random_records(&mut rng, 3000, 2);
        let s = TSettings {
            subsample: true,
            repeats: 4,
            seed: 11,
        };
        let a = t_statistic(&recs, &s).unwrap();
        assert_eq!(a, t_statistic(&recs, &s).unwrap());
        assert_eq!(a.repeats, 4);
        assert_eq!(a.bins, (3000f64).powf(0.4).ceil() as usize);
    }

    proptest! {
        #[test]
        fn label_affine_invariance(seed in 0u64..1000, scale in 0.1f64..50.0, shift in -100.0f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let recs = random_records(&mut rng, 300, 3);
            let moved: Vec<_> = recs
                .iter()
                .map(|r| EvaluationRecord { label: scale * r.label + shift, ..*r })
                .collect();
            let s = TSettings::default();
            prop_assert_eq!(mean_max_gap(&recs, 20).unwrap(), mean_max_gap(&moved, 20).unwrap());
            prop_assert_eq!(t_statistic(&recs, &s).unwrap().value, t_statistic(&moved, &s).unwrap().value);
        }

        #[test]
        fn identical_rates_have_no_gap(per_cell in 1usize..6, bins in 1usize..6) {
            // each bin holds the same covered pattern for both groups
            let mut recs = Vec::new();
            let mut label = 0.0;
            for _ in 0..bins {
                for g in 0..2 {
                    for k in 0..2 * per_cell {
                        recs.push(record(k < per_cell, g, label));
                        label += 1.0;
                    }
                }
            }
            prop_assert_eq!(mean_max_gap(&recs, bins).unwrap(), 0.0);
        }
    }
}
