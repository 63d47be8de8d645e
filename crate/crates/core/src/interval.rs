use serde::{Deserialize, Serialize};

/// A finite union of disjoint closed intervals, kept sorted.
///
/// Intervals that overlap or touch are merged on construction, so
/// `u_j < l_{j+1}` always holds and the interval count reflects topology.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IntervalUnion {
    intervals: Vec<(f64, f64)>,
}

impl IntervalUnion {
    pub fn empty() -> Self {
        Self::default()
    }

    /// `[lo, hi]`, or the empty set when `lo > hi`.
    pub fn single(lo: f64, hi: f64) -> Self {
        if lo <= hi {
            Self {
                intervals: vec![(lo, hi)],
            }
        } else {
            Self::empty()
        }
    }

    /// Union of arbitrary closed intervals; pairs with `lo > hi` are dropped.
    pub fn from_intervals(parts: impl IntoIterator<Item = (f64, f64)>) -> Self {
        let mut parts: Vec<(f64, f64)> = parts.into_iter().filter(|(l, h)| l <= h).collect();
        parts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(parts.len());
        for (lo, hi) in parts {
            match merged.last_mut() {
                Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
                _ => merged.push((lo, hi)),
            }
        }
        Self { intervals: merged }
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    /// Number of disjoint pieces.
    pub fn count(&self) -> usize {
        self.intervals.len()
    }

    pub fn total_width(&self) -> f64 {
        self.intervals.iter().map(|(l, h)| h - l).sum()
    }

    /// Convex hull as a union with at most one interval.
    pub fn hull(&self) -> IntervalUnion {
        match (self.intervals.first(), self.intervals.last()) {
            (Some(first), Some(last)) => Self::single(first.0, last.1),
            _ => Self::empty(),
        }
    }

    pub fn hull_width(&self) -> f64 {
        self.hull().total_width()
    }

    /// Whether `y` lies in some member interval (endpoints included).
    pub fn covers(&self, y: f64) -> bool {
        let idx = self.intervals.partition_point(|&(lo, _)| lo <= y);
        idx > 0 && y <= self.intervals[idx - 1].1
    }
}
