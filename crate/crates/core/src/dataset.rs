//! Datasets, the synthetic generator, CSV ingestion, seeded splits and
//! equal-mass label binning.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Features, continuous labels and protected-group ids for `n` samples.
///
/// Features are stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    feature_count: usize,
    labels: Vec<f64>,
    groups: Vec<usize>,
    group_count: usize,
}

impl Dataset {
    /// Builds a dataset after checking lengths, finiteness and group range.
    pub fn new(
        features: Vec<f64>,
        feature_count: usize,
        labels: Vec<f64>,
        groups: Vec<usize>,
        group_count: usize,
    ) -> Result<Self> {
        let n = labels.len();
        if groups.len() != n {
            return Err(Error::Shape {
                expected: n,
                actual: groups.len(),
            });
        }
        if features.len() != n * feature_count {
            return Err(Error::Shape {
                expected: n * feature_count,
                actual: features.len(),
            });
        }
        if let Some(&g) = groups.iter().find(|&&g| g >= group_count) {
            return Err(Error::Config(format!(
                "group id {g} outside [0, {group_count})"
            )));
        }
        if features.iter().chain(&labels).any(|v| !v.is_finite()) {
            return Err(Error::Config("non-finite feature or label value".into()));
        }
        Ok(Self {
            features,
            feature_count,
            labels,
            groups,
            group_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_count(&self) -> usize {
        self.feature_count
    }

    pub fn group_count(&self) -> usize {
        self.group_count
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_count..(i + 1) * self.feature_count]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        // chunks_exact(0) panics, and a zero-width dataset still has rows.
        (0..self.len()).map(move |i| self.row(i))
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn groups(&self) -> &[usize] {
        &self.groups
    }

    /// Rows at `indices`, in that order. Keeps the parent's group count.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.feature_count);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Dataset {
            features,
            feature_count: self.feature_count,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            groups: indices.iter().map(|&i| self.groups[i]).collect(),
            group_count: self.group_count,
        }
    }

    /// Copy with the group id appended as an extra numeric feature column.
    pub fn with_group_feature(&self) -> Dataset {
        let p = self.feature_count + 1;
        let mut features = Vec::with_capacity(self.len() * p);
        for (row, &g) in self.rows().zip(&self.groups) {
            features.extend_from_slice(row);
            features.push(g as f64);
        }
        Dataset {
            features,
            feature_count: p,
            labels: self.labels.clone(),
            groups: self.groups.clone(),
            group_count: self.group_count,
        }
    }

    /// Copy with `K - 1` appended 0/1 columns, column `j` marking group
    /// `j + 1` (group 0 is the baseline).
    pub fn with_group_indicators(&self) -> Dataset {
        let extra = self.group_count.saturating_sub(1);
        let p = self.feature_count + extra;
        let mut features = Vec::with_capacity(self.len() * p);
        for (row, &g) in self.rows().zip(&self.groups) {
            features.extend_from_slice(row);
            features.extend((1..=extra).map(|a| f64::from(u8::from(g == a))));
        }
        Dataset {
            features,
            feature_count: p,
            labels: self.labels.clone(),
            groups: self.groups.clone(),
            group_count: self.group_count,
        }
    }
}

/// Options for [`generate_synthetic`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorOptions {
    /// Replace the standard-normal label multiplier with its absolute value.
    pub abs_multiplier: bool,
}

pub const SYNTHETIC_FEATURES: usize = 10;
pub const SYNTHETIC_GROUPS: usize = 3;

/// Random draws consumed by the synthetic generator.
pub trait NoiseSource {
    /// Exp(1) draw.
    fn exponential(&mut self) -> f64;
    /// N(0, 1) draw.
    fn normal(&mut self) -> f64;
    /// U(0, 1) draw.
    fn uniform(&mut self) -> f64;
}

/// Seeded ChaCha8 noise.
pub struct RngNoise(ChaCha8Rng);

impl RngNoise {
    pub fn seeded(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }
}

impl NoiseSource for RngNoise {
    fn exponential(&mut self) -> f64 {
        Exp1.sample(&mut self.0)
    }

    fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.0)
    }

    fn uniform(&mut self) -> f64 {
        self.0.random::<f64>()
    }
}

/// Draws `n` rows of the three-group synthetic benchmark.
///
/// Ten Exp(1) features; the group is chosen by a uniform selector with
/// probabilities 0.1 / 0.2 / 0.7. Groups 0 and 2 get
/// `y = (a + sum(x) + 10 e1) * e3`, group 1 gets `y = 10 e2`.
pub fn generate_synthetic(n: usize, seed: u64, options: GeneratorOptions) -> Dataset {
    generate_with_noise(n, options, &mut RngNoise::seeded(seed))
}

/// [`generate_synthetic`] with an explicit noise source.
///
/// Every row consumes the same draws in the same order (ten features, the
/// group selector, then e1, e2, e3) regardless of the group.
pub fn generate_with_noise(
    n: usize,
    options: GeneratorOptions,
    noise: &mut impl NoiseSource,
) -> Dataset {
    let mut features = Vec::with_capacity(n * SYNTHETIC_FEATURES);
    let mut labels = Vec::with_capacity(n);
    let mut groups = Vec::with_capacity(n);
    for _ in 0..n {
        let mut sum = 0.0;
        for _ in 0..SYNTHETIC_FEATURES {
            let x = noise.exponential();
            sum += x;
            features.push(x);
        }
        let selector = noise.uniform();
        let e1 = noise.normal();
        let e2 = noise.normal();
        let mut e3 = noise.normal();
        if options.abs_multiplier {
            e3 = e3.abs();
        }
        let group = if selector <= 0.1 {
            0
        } else if selector <= 0.3 {
            1
        } else {
            2
        };
        let y = match group {
            1 => 10.0 * e2,
            a => (a as f64 + sum + 10.0 * e1) * e3,
        };
        labels.push(y);
        groups.push(group);
    }
    Dataset {
        features,
        feature_count: SYNTHETIC_FEATURES,
        labels,
        groups,
        group_count: SYNTHETIC_GROUPS,
    }
}

/// Column mapping for [`load_csv`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    pub features: Vec<String>,
    pub label: String,
    pub group: String,
}

/// Reads a headered, comma-separated numeric file.
///
/// Row numbers in parse errors are 1-based data rows (the header is not
/// counted). The group count is one more than the largest group id seen.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

/// [`load_csv`] over any reader.
pub fn read_csv(reader: impl std::io::Read, schema: &CsvSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .quoting(false)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::EmptyInput("csv file has no header"));
    }
    let position = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn {
                column: name.to_string(),
            })
    };
    let feature_cols = schema
        .features
        .iter()
        .map(|c| position(c))
        .collect::<Result<Vec<_>>>()?;
    let label_col = position(&schema.label)?;
    let group_col = position(&schema.group)?;

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut groups = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let record = record?;
        let row = idx + 1;
        let cell = |col: usize, name: &str| -> Result<f64> {
            let raw = record.get(col).unwrap_or("").trim();
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    row,
                    column: name.to_string(),
                    value: raw.to_string(),
                    expected: "a finite number",
                })
        };
        for (&col, name) in feature_cols.iter().zip(&schema.features) {
            features.push(cell(col, name)?);
        }
        labels.push(cell(label_col, &schema.label)?);
        let raw = record.get(group_col).unwrap_or("").trim();
        let group = raw.parse::<usize>().map_err(|_| Error::Parse {
            row,
            column: schema.group.clone(),
            value: raw.to_string(),
            expected: "a non-negative integer group id",
        })?;
        groups.push(group);
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput("csv file has no data rows"));
    }
    let group_count = groups.iter().max().map_or(0, |&g| g + 1);
    Dataset::new(features, schema.features.len(), labels, groups, group_count)
}

/// Disjoint train / calibration / test index sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub calibration: Vec<usize>,
    pub test: Vec<usize>,
}

/// Split sizes for `n` samples: floor each share, then hand the remainder
/// out one at a time to train, calibration, test, train, ...
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> Result<[usize; 3]> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(Error::Config(format!(
            "split ratios must be finite and non-negative, got {ratios:?}"
        )));
    }
    let total: f64 = ratios.iter().sum();
    if total <= 0.0 {
        return Err(Error::Config("split ratios are all zero".into()));
    }
    let mut sizes = ratios.map(|r| ((n as f64) * r / total).floor() as usize);
    let mut assigned: usize = sizes.iter().sum();
    let mut k = 0;
    while assigned < n {
        if ratios[k % 3] > 0.0 {
            sizes[k % 3] += 1;
            assigned += 1;
        }
        k += 1;
    }
    Ok(sizes)
}

/// Seeded uniform random split of `0..n` by `ratios`.
pub fn split_indices(n: usize, ratios: [f64; 3], seed: u64) -> Result<SplitIndices> {
    if n == 0 {
        return Err(Error::EmptyInput("cannot split an empty dataset"));
    }
    let [tr, cal, _] = split_sizes(n, ratios)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = order.split_off(tr + cal);
    let calibration = order.split_off(tr);
    Ok(SplitIndices {
        train: order,
        calibration,
        test,
    })
}

pub fn split(dataset: &Dataset, ratios: [f64; 3], seed: u64) -> Result<SplitIndices> {
    split_indices(dataset.len(), ratios, seed)
}

/// `M` label bins holding (nearly) equal numbers of samples.
///
/// Bin `m` (0-based) is `[b_m, b_{m+1})`; the last bin is closed on the
/// right. With tied labels two boundaries may coincide; membership is then
/// decided by sorted position, not by value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinPartition {
    boundaries: Vec<f64>,
    members: Vec<Vec<usize>>,
}

/// Cuts `labels` into `bins` equal-mass bins.
///
/// Samples are ordered by label (ties by index) and the first `n % bins`
/// bins take one extra sample. Interior boundaries sit halfway between the
/// last label of one bin and the first label of the next.
pub fn make_equal_mass_bins(labels: &[f64], bins: usize) -> Result<BinPartition> {
    let n = labels.len();
    if bins == 0 {
        return Err(Error::Config("bin count must be at least 1".into()));
    }
    if bins > n {
        return Err(Error::Config(format!(
            "cannot cut {n} samples into {bins} bins"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| labels[i].total_cmp(&labels[j]).then(i.cmp(&j)));

    let base = n / bins;
    let extra = n % bins;
    let mut boundaries = Vec::with_capacity(bins + 1);
    let mut members = Vec::with_capacity(bins);
    boundaries.push(labels[order[0]]);
    let mut start = 0;
    for m in 0..bins {
        let end = start + base + usize::from(m < extra);
        let mut bin: Vec<usize> = order[start..end].to_vec();
        bin.sort_unstable();
        members.push(bin);
        if end < n {
            boundaries.push(0.5 * (labels[order[end - 1]] + labels[order[end]]));
        }
        start = end;
    }
    boundaries.push(labels[order[n - 1]]);
    Ok(BinPartition {
        boundaries,
        members,
    })
}

impl BinPartition {
    pub fn bin_count(&self) -> usize {
        self.members.len()
    }

    /// `b_0 <= b_1 <= ... <= b_M`.
    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    /// Sample indices (into the labels used to build the partition) of bin `m`.
    pub fn members(&self, m: usize) -> &[usize] {
        &self.members[m]
    }

    pub fn member_counts(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }

    /// Bin index of every sample the partition was built from.
    pub fn assignments(&self) -> Vec<usize> {
        let n = self.members.iter().map(Vec::len).sum();
        let mut out = vec![0; n];
        for (m, bin) in self.members.iter().enumerate() {
            for &i in bin {
                out[i] = m;
            }
        }
        out
    }

    /// `(b_m, b_{m+1})` for 0-based bin `m`.
    pub fn bounds(&self, m: usize) -> (f64, f64) {
        (self.boundaries[m], self.boundaries[m + 1])
    }

    /// 0-based bin containing `y`. Values below `b_0` go to the first bin and
    /// values at or above `b_M` to the last.
    pub fn bin_of(&self, y: f64) -> usize {
        let interior = &self.boundaries[1..self.boundaries.len() - 1];
        interior.partition_point(|&b| b <= y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_generation() {
        let ds = generate_synthetic(0, 7, GeneratorOptions::default());
        assert!(ds.is_empty());
        assert_eq!(ds.group_count(), 3);
        assert_eq!(ds.feature_count(), 10);
    }

    #[test]
    fn generator_is_seed_deterministic() {
        let a = generate_synthetic(500, 11, GeneratorOptions::default());
        let b = generate_synthetic(500, 11, GeneratorOptions::default());
        let c = generate_synthetic(500, 12, GeneratorOptions::default());
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn group_zero_share_at_scale() {
        let ds = generate_synthetic(100_000, 0, GeneratorOptions::default());
        let frac = ds.groups().iter().filter(|&&g| g == 0).count() as f64 / 1e5;
        assert!((frac - 0.1).abs() < 0.01, "{frac}");
    }

    #[test]
    fn group_marginals_within_three_standard_errors() {
        let n = 200_000;
        let ds = generate_synthetic(n, 3, GeneratorOptions::default());
        for (g, p) in [(0, 0.1), (1, 0.2), (2, 0.7)] {
            let frac = ds.groups().iter().filter(|&&a| a == g).count() as f64 / n as f64;
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((frac - p).abs() < 3.0 * se, "group {g}: {frac} vs {p}");
        }
    }

    /// Fixed draws: features 1..=10, selector picks group 0, e1 = 0, e3 = 1.
    struct Scripted {
        selector: f64,
        normals: [f64; 3],
        next_exp: f64,
        next_normal: usize,
    }

    impl NoiseSource for Scripted {
        fn exponential(&mut self) -> f64 {
            self.next_exp += 1.0;
            self.next_exp
        }
        fn normal(&mut self) -> f64 {
            let v = self.normals[self.next_normal % 3];
            self.next_normal += 1;
            v
        }
        fn uniform(&mut self) -> f64 {
            self.selector
        }
    }

    #[test]
    fn injected_noise_reproduces_label_formula() {
        let mut noise = Scripted {
            selector: 0.05,
            normals: [0.0, 3.0, 1.0],
            next_exp: 0.0,
            next_normal: 0,
        };
        let ds = generate_with_noise(1, GeneratorOptions::default(), &mut noise);
        let s: f64 = ds.row(0).iter().sum();
        assert_eq!(ds.groups(), &[0]);
        assert_eq!(s, 55.0);
        assert_eq!(ds.labels(), &[s]);

        // group 1 ignores the features entirely
        let mut noise = Scripted {
            selector: 0.2,
            normals: [0.0, 0.5, 1.0],
            next_exp: 0.0,
            next_normal: 0,
        };
        let ds = generate_with_noise(1, GeneratorOptions::default(), &mut noise);
        assert_eq!(ds.groups(), &[1]);
        assert_eq!(ds.labels(), &[5.0]);

        // group 2 with a negative multiplier, and its absolute-value variant
        for (abs, expected) in [(false, -(2.0 + 55.0 + 10.0)), (true, 2.0 + 55.0 + 10.0)] {
            let mut noise = Scripted {
                selector: 0.9,
                normals: [1.0, 0.0, -1.0],
                next_exp: 0.0,
                next_normal: 0,
            };
            let opts = GeneratorOptions {
                abs_multiplier: abs,
            };
            let ds = generate_with_noise(1, opts, &mut noise);
            assert_eq!(ds.groups(), &[2]);
            assert_eq!(ds.labels(), &[expected]);
        }
    }

    fn schema() -> CsvSchema {
        CsvSchema {
            features: vec!["x1".into(), "x2".into()],
            label: "y".into(),
            group: "a".into(),
        }
    }

    #[test]
    fn csv_three_rows() {
        let text = "x1,x2,y,a\n1,2,3.5,0\n4,5,6,1\n7,8,-9e1,0\n";
        let ds = read_csv(text.as_bytes(), &schema()).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.feature_count(), 2);
        assert_eq!(ds.group_count(), 2);
        assert_eq!(ds.labels(), &[3.5, 6.0, -90.0]);
        assert_eq!(ds.row(1), &[4.0, 5.0]);
    }

    #[test]
    fn csv_missing_column() {
        let mut s = schema();
        s.label = "salary".into();
        let err = read_csv("x1,x2,y,a\n1,2,3,0\n".as_bytes(), &s).unwrap_err();
        match err {
            Error::MissingColumn { column } => assert_eq!(column, "salary"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_parse_error_reports_row() {
        let text = "x1,x2,y,a\n1,2,3,0\n1,2,abc,0\n";
        let err = read_csv(text.as_bytes(), &schema()).unwrap_err();
        match err {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "y");
            }
            other => panic!("unexpected {other:?}"),
        }
        let bad_group = "x1,x2,y,a\n1,2,3,-1\n";
        assert!(matches!(
            read_csv(bad_group.as_bytes(), &schema()),
            Err(Error::Parse { row: 1, .. })
        ));
    }

    #[test]
    fn csv_empty_file() {
        assert!(matches!(
            read_csv("".as_bytes(), &schema()),
            Err(Error::EmptyInput(_))
        ));
        assert!(matches!(
            read_csv("x1,x2,y,a\n".as_bytes(), &schema()),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn split_sizes_follow_ratio() {
        let s = split_indices(5000, [3.0, 1.0, 1.0], 1).unwrap();
        assert_eq!(
            (s.train.len(), s.calibration.len(), s.test.len()),
            (3000, 1000, 1000)
        );
        assert_eq!(split_sizes(5, [3.0, 1.0, 1.0]).unwrap(), [3, 1, 1]);
    }

    #[test]
    fn small_split_sizes_match_enumeration() {
        // Oracle: the floors plus remainder handed out round-robin, done by
        // counting unit by unit instead of the closed form.
        for n in 0..40usize {
            let ratios = [3.0, 1.0, 1.0];
            let mut sizes = [0usize; 3];
            for (k, r) in ratios.iter().enumerate() {
                let mut c = 0;
                while ((c + 1) as f64) * 5.0 <= n as f64 * r {
                    c += 1;
                }
                sizes[k] = c;
            }
            let mut k = 0;
            while sizes.iter().sum::<usize>() < n {
                sizes[k % 3] += 1;
                k += 1;
            }
            assert_eq!(split_sizes(n, ratios).unwrap(), sizes, "n={n}");
        }
    }

    #[test]
    fn split_is_deterministic_partition() {
        let a = split_indices(997, [3.0, 1.0, 1.0], 42).unwrap();
        let b = split_indices(997, [3.0, 1.0, 1.0], 42).unwrap();
        assert_eq!(a, b);
        let mut all: Vec<usize> = a
            .train
            .iter()
            .chain(&a.calibration)
            .chain(&a.test)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..997).collect::<Vec<_>>());
    }

    #[test]
    fn split_errors() {
        assert!(matches!(
            split_indices(10, [0.0, 0.0, 0.0], 0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            split_indices(0, [3.0, 1.0, 1.0], 0),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn six_labels_three_bins() {
        let p = make_equal_mass_bins(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 3).unwrap();
        assert_eq!(p.member_counts(), vec![2, 2, 2]);
        assert_eq!(p.boundaries(), &[1.0, 2.5, 4.5, 6.0]);
    }

    #[test]
    fn single_bin() {
        let p = make_equal_mass_bins(&[3.0, -1.0, 2.0], 1).unwrap();
        assert_eq!(p.boundaries(), &[-1.0, 3.0]);
        assert_eq!(p.members(0), &[0, 1, 2]);
    }

    #[test]
    fn thousand_uniform_into_twenty() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let labels: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
        let p = make_equal_mass_bins(&labels, 20).unwrap();
        // brute force: count labels falling strictly between boundaries
        let b = p.boundaries();
        for m in 0..20 {
            let count = labels
                .iter()
                .filter(|&&y| y >= b[m] && (y < b[m + 1] || (m == 19 && y <= b[m + 1])))
                .count();
            assert_eq!(count, 50);
            assert_eq!(p.members(m).len(), 50);
        }
    }

    #[test]
    fn too_many_bins() {
        assert!(matches!(
            make_equal_mass_bins(&[1.0, 2.0], 3),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn bin_lookup() {
        let p = make_equal_mass_bins(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 3).unwrap();
        assert_eq!(p.bin_of(3.0), 1);
        assert_eq!(p.bin_of(2.5), 1);
        assert_eq!(p.bin_of(100.0), 2);
        assert_eq!(p.bin_of(-100.0), 0);
        assert_eq!(p.bin_of(6.0), 2);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn equal_mass_partition(
                labels in proptest::collection::vec(-50i32..50, 1..200),
                m in 1usize..30,
            ) {
                let labels: Vec<f64> = labels.into_iter().map(f64::from).collect();
                prop_assume!(m <= labels.len());
                let p = make_equal_mass_bins(&labels, m).unwrap();
                let counts = p.member_counts();
                let max = *counts.iter().max().unwrap();
                let min = *counts.iter().min().unwrap();
                prop_assert!(max - min <= 1);
                let mut seen = vec![false; labels.len()];
                for bin in 0..m {
                    for &i in p.members(bin) {
                        prop_assert!(!seen[i]);
                        seen[i] = true;
                    }
                }
                prop_assert!(seen.iter().all(|&s| s));
                let b = p.boundaries();
                prop_assert!(b.windows(2).all(|w| w[0] <= w[1]));
                let lo = labels.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = labels.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(b[0] <= lo && b[m] >= hi);
            }
        }
    }
}
