//! Width-minimizing choice of per-bin coverage targets.
//!
//! The objective is the mean width of the BFQR prediction sets over a set of
//! objective points (test features by default) subject to the weighted mean
//! of the targets staying at `1 - alpha`. The exact objective is a step
//! function of the targets, so the search works on the relaxed upper bound
//!
//! ```text
//! D(beta) = W^S + mean_i [G_{a_i,m-_i} + G_{a_i,m+_i} - 2 Q_{1-alpha}(a_i)]
//! ```
//!
//! where `m-_i`, `m+_i` are the first and last bins with a non-empty
//! sub-interval for point `i`. Each round estimates, per bin, the width cost
//! of raising and the width saved by lowering its target from one-step
//! quantile slopes weighted by the number of affected points, then moves
//! mass from the bin that saves the most to the bin that costs the least.
//! It stops once the best trade no longer beats twice the slope error
//! tolerance.

use log::debug;
use serde::{Deserialize, Serialize};

use crate::bfqr::{bin_range, clip_to_bin, BetaVector, BinEdges, GroupBinQuantiles};
use crate::conformal::{check_alpha, ConformityRecord, SortedScores};
use crate::dataset::BinPartition;
use crate::error::{Error, Result};

/// Smallest step the optimizer will take.
pub const MIN_STEP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSettings {
    /// Maximum number of accepted steps.
    pub max_iterations: usize,
    /// Slope error tolerance; `None` uses the per-cell `IQR / sqrt(n)` rule.
    pub epsilon: Option<f64>,
    /// How many ranked (raise, lower) bin pairs to try in one round before
    /// giving up when every trial would increase the relaxed bound.
    pub max_candidates: usize,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            epsilon: None,
            max_candidates: 1,
        }
    }
}

/// One evaluation of the objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    /// Mean union width `W`.
    pub width: f64,
    /// Mean convex-hull width.
    pub hull_width: f64,
    /// Relaxed upper bound `D`.
    pub dummy_bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIterations,
    /// Best descent slope within `2 epsilon` of the best ascent slope.
    WithinTolerance,
    /// No bin pair has room to move.
    NoFeasiblePair,
    /// Every tried step would have increased the relaxed bound.
    NoDescent,
}

/// An objective point: base interval and protected group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectivePoint {
    pub q_lo: f64,
    pub q_hi: f64,
    pub group: usize,
}

/// Initial targets: the per-bin calibration coverage of split CQR, shifted
/// so the (weighted) mean is exactly `1 - alpha`.
///
/// The two outer bins are bounded above by `n / (n + 1)` for their smallest
/// non-empty group cell of `n` scores.
pub fn init_betas(
    records: &[ConformityRecord],
    partition: &BinPartition,
    alpha: f64,
    weights: Option<Vec<f64>>,
) -> Result<BetaVector> {
    check_alpha(alpha)?;
    if records.is_empty() {
        return Err(Error::EmptyInput("no calibration records"));
    }
    let pooled = SortedScores::new(records.iter().map(|r| r.score).collect());
    let q = pooled.quantile(1.0 - alpha)?;
    let bins = partition.bin_count();
    let groups = records.iter().map(|r| r.group + 1).max().unwrap_or(0);
    let mut hits = vec![0usize; bins];
    let mut totals = vec![0usize; bins];
    let mut cells = vec![0usize; groups * bins];
    for r in records {
        totals[r.bin] += 1;
        cells[r.group * bins + r.bin] += 1;
        if r.score <= q {
            hits[r.bin] += 1;
        }
    }
    let upper = (0..bins)
        .map(|m| {
            if m != 0 && m + 1 != bins {
                return 1.0;
            }
            (0..groups)
                .map(|a| cells[a * bins + m])
                .filter(|&n| n > 0)
                .map(|n| n as f64 / (n as f64 + 1.0))
                .fold(1.0, f64::min)
        })
        .collect();
    let raw = hits
        .iter()
        .zip(&totals)
        .map(|(&h, &t)| {
            if t == 0 {
                1.0 - alpha
            } else {
                h as f64 / t as f64
            }
        })
        .collect();
    BetaVector::project_bounded(raw, alpha, weights, upper)
}

/// One-sided slopes of `beta -> G_{a,m}(beta)` over a step `delta`:
/// `((G(beta + delta) - G(beta)) / delta, (G(beta) - G(beta - delta)) / delta)`,
/// shortened at 0 and 1. A step that reaches an infinite quantile has slope
/// `+inf`; cells with fewer than two scores have zero slope.
pub fn estimate_slopes(
    gbq: &GroupBinQuantiles,
    group: usize,
    bin: usize,
    beta: f64,
    delta: f64,
) -> (f64, f64) {
    let (scores, _) = gbq.effective_cell(group, bin);
    cell_slopes(scores, beta, delta)
}

fn cell_slopes(scores: &SortedScores, beta: f64, delta: f64) -> (f64, f64) {
    if scores.len() < 2 {
        debug!("slope requested on a cell with {} scores", scores.len());
        return (0.0, 0.0);
    }
    let here = scores.beta_quantile(beta);
    let up = (beta + delta).min(1.0);
    let down = (beta - delta).max(0.0);
    let slope = |hi: f64, lo: f64, run: f64| {
        if hi.is_infinite() {
            f64::INFINITY
        } else {
            (hi - lo) / run
        }
    };
    let plus = if up > beta {
        slope(scores.beta_quantile(up), here, up - beta)
    } else {
        0.0
    };
    let minus = if down < beta {
        slope(here, scores.beta_quantile(down), beta - down)
    } else {
        0.0
    };
    (plus, minus)
}

/// Relaxed width bound evaluated from scratch.
///
/// `start_widths[i]` is the width of point `i`'s starting interval and
/// `group_quantiles[a]` the `1 - alpha` score quantile subtracted for group
/// `a`. Points whose prediction set is empty contribute zero. An infinite
/// boundary correction is replaced by the distance its clipped piece extends
/// past the base interval.
pub fn dummy_width_bound(
    betas: &BetaVector,
    gbq: &GroupBinQuantiles,
    partition: &BinPartition,
    edges: BinEdges,
    points: &[ObjectivePoint],
    start_widths: &[f64],
    group_quantiles: &[f64],
) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let bins = partition.bin_count();
    let mut total = 0.0;
    for (p, &start) in points.iter().zip(start_widths) {
        let g = |m: usize| gbq.lookup(p.group, m, betas.get(m));
        let nonempty = |m: usize| {
            let gm = g(m);
            clip_to_bin(
                p.q_lo - gm,
                p.q_hi + gm,
                bin_range(partition, m, edges),
                m + 1 == bins,
            )
            .is_some()
        };
        let first = (0..bins).find(|&m| nonempty(m));
        let last = (0..bins).rev().find(|&m| nonempty(m));
        if let (Some(lo), Some(hi)) = (first, last) {
            let extent = |m: usize, below: bool| {
                let gm = g(m);
                if gm.is_finite() {
                    return gm;
                }
                let (bin_lo, bin_hi) = bin_range(partition, m, edges);
                if below {
                    p.q_lo - bin_lo
                } else {
                    bin_hi - p.q_hi
                }
            };
            total += start + extent(lo, true) + extent(hi, false) - 2.0 * group_quantiles[p.group];
        }
    }
    total / points.len() as f64
}

/// Incremental optimizer state.
///
/// Sub-intervals are cached per (point, bin) so that a step touching two bins
/// only recomputes those two columns, the affected hull boundaries and the
/// counters that depend on them.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    betas: BetaVector,
    gbq: GroupBinQuantiles,
    partition: BinPartition,
    edges: BinEdges,
    points: Vec<ObjectivePoint>,
    groups: usize,
    bins: usize,
    /// Current `G_{a,m}(beta_m)`, row-major by group.
    corrections: Vec<f64>,
    /// `1 / (n_{a,m} + 1)` of each effective cell.
    cell_steps: Vec<f64>,
    /// Per-cell default slope error `IQR / sqrt(n)`.
    cell_eps: Vec<f64>,
    group_quantiles: Vec<f64>,
    start_widths: Vec<f64>,
    /// Sub-interval of point `i` in bin `m` at `i * bins + m`.
    segments: Vec<Option<(f64, f64)>>,
    first: Vec<Option<usize>>,
    last: Vec<Option<usize>>,
    in_counter: Vec<bool>,
    /// `u_{a,m}`: points of group `a` whose bin `m` is a hull boundary or a
    /// partial intersection.
    counters: Vec<usize>,
    union_widths: Vec<f64>,
    iteration: usize,
    trace: Vec<TracePoint>,
    stop: Option<StopReason>,
}

impl OptimizerState {
    /// Sets up the state at `betas` (normally from [`init_betas`]).
    pub fn new(
        betas: BetaVector,
        gbq: GroupBinQuantiles,
        partition: BinPartition,
        edges: BinEdges,
        points: Vec<ObjectivePoint>,
        alpha: f64,
    ) -> Result<Self> {
        check_alpha(alpha)?;
        let bins = partition.bin_count();
        if betas.len() != bins || gbq.bin_count() != bins {
            return Err(Error::Shape {
                expected: bins,
                actual: betas.len(),
            });
        }
        if (0..bins).any(|m| gbq.pooled_bin(m).is_empty()) {
            return Err(Error::Config(
                "every label bin needs calibration samples".into(),
            ));
        }
        let groups = gbq
            .group_count()
            .max(points.iter().map(|p| p.group + 1).max().unwrap_or(0));
        let pooled_q = gbq.pooled().quantile(1.0 - alpha)?;
        let group_quantiles: Vec<f64> = (0..groups)
            .map(|a| {
                gbq.pooled_group(a)
                    .map_or(Ok(pooled_q), |s| s.quantile(1.0 - alpha))
            })
            .collect::<Result<_>>()?;
        let mut cell_steps = Vec::with_capacity(groups * bins);
        let mut cell_eps = Vec::with_capacity(groups * bins);
        for a in 0..groups {
            for m in 0..bins {
                let (cell, _) = gbq.effective_cell(a, m);
                let n = cell.len();
                cell_steps.push(1.0 / (n as f64 + 1.0));
                cell_eps.push(cell.iqr() / (n.max(1) as f64).sqrt());
            }
        }
        let start_widths = points
            .iter()
            .map(|p| p.q_hi - p.q_lo + 2.0 * group_quantiles[p.group])
            .collect();
        let n = points.len();
        let mut state = Self {
            betas,
            gbq,
            partition,
            edges,
            points,
            groups,
            bins,
            corrections: vec![0.0; groups * bins],
            cell_steps,
            cell_eps,
            group_quantiles,
            start_widths,
            segments: vec![None; n * bins],
            first: vec![None; n],
            last: vec![None; n],
            in_counter: vec![false; n * bins],
            counters: vec![0; groups * bins],
            union_widths: vec![0.0; n],
            iteration: 0,
            trace: Vec::new(),
            stop: None,
        };
        for m in 0..bins {
            state.refresh_corrections(m);
            for i in 0..n {
                state.segments[i * bins + m] = state.segment(i, m);
            }
        }
        for i in 0..n {
            state.union_widths[i] = (0..bins)
                .filter_map(|m| state.segments[i * bins + m])
                .map(|(l, h)| h - l)
                .sum();
            state.rescan_boundaries(i);
            for m in 0..bins {
                state.refresh_counter(i, m);
            }
        }
        state.record();
        Ok(state)
    }

    pub fn betas(&self) -> &BetaVector {
        &self.betas
    }

    pub fn into_betas(self) -> BetaVector {
        self.betas
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn trace(&self) -> &[TracePoint] {
        &self.trace
    }

    pub fn stop_reason(&self) -> Option<StopReason> {
        self.stop
    }

    pub fn group_quantiles(&self) -> &[f64] {
        &self.group_quantiles
    }

    pub fn start_widths(&self) -> &[f64] {
        &self.start_widths
    }

    /// `u_{a,m}`.
    pub fn counter(&self, group: usize, bin: usize) -> usize {
        self.counters[group * self.bins + bin]
    }

    /// Hull boundary bins `(m-, m+)` of point `i`, if its set is non-empty.
    pub fn boundary_bins(&self, i: usize) -> Option<(usize, usize)> {
        self.first[i].zip(self.last[i])
    }

    /// Mean union width `W`.
    pub fn mean_width(&self) -> f64 {
        mean(&self.union_widths)
    }

    pub fn mean_hull_width(&self) -> f64 {
        let widths: Vec<f64> = (0..self.points.len()).map(|i| self.hull_width(i)).collect();
        mean(&widths)
    }

    /// Relaxed bound `D` at the current targets.
    pub fn dummy_bound(&self) -> f64 {
        let bounds: Vec<f64> = (0..self.points.len())
            .map(|i| self.point_bound(i))
            .collect();
        mean(&bounds)
    }

    /// `(grad+_m, grad-_m)` for every bin.
    pub fn gradients(&self) -> Vec<(f64, f64)> {
        (0..self.bins).map(|m| self.bin_gradient(m)).collect()
    }

    /// Runs rounds until a stopping rule fires or `max_iterations` steps
    /// have been accepted.
    pub fn optimize(&mut self, settings: &OptimizerSettings) -> &BetaVector {
        self.stop = None;
        while self.stop.is_none() {
            if self.iteration >= settings.max_iterations {
                self.stop = Some(StopReason::MaxIterations);
                break;
            }
            self.stop = self.round(settings);
        }
        debug!(
            "optimizer stopped after {} steps: {:?}",
            self.iteration, self.stop
        );
        &self.betas
    }

    fn round(&mut self, settings: &OptimizerSettings) -> Option<StopReason> {
        let grads = self.gradients();
        let mut pairs = Vec::new();
        for down in 0..self.bins {
            if self.room_down(down) < MIN_STEP {
                continue;
            }
            for up in 0..self.bins {
                if up == down || self.room_up(up) < MIN_STEP {
                    continue;
                }
                pairs.push((grads[down].1 - grads[up].0, up, down));
            }
        }
        if pairs.is_empty() {
            return Some(StopReason::NoFeasiblePair);
        }
        // ties broken by bin index
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let before = self.dummy_bound();
        let mut outcome = StopReason::WithinTolerance;
        for &(gain, up, down) in pairs.iter().take(settings.max_candidates.max(1)) {
            let eps = settings
                .epsilon
                .unwrap_or_else(|| self.default_epsilon(up, down));
            if gain <= 2.0 * eps {
                break;
            }
            let saved = (self.betas.get(up), self.betas.get(down));
            self.step(up, down);
            if self.dummy_bound() <= before + 1e-12 {
                self.iteration += 1;
                self.record();
                return None;
            }
            self.set_beta(up, saved.0);
            self.set_beta(down, saved.1);
            outcome = StopReason::NoDescent;
        }
        Some(outcome)
    }

    fn default_epsilon(&self, up: usize, down: usize) -> f64 {
        let mut eps: f64 = 0.0;
        for m in [up, down] {
            for a in 0..self.groups {
                if self.counter(a, m) > 0 {
                    eps = eps.max(self.cell_eps[a * self.bins + m]);
                }
            }
        }
        eps
    }

    /// Largest target at which every cell of bin `m` has a finite correction.
    fn finite_cap(&self, m: usize) -> f64 {
        let widest = (0..self.groups)
            .map(|a| self.cell_steps[a * self.bins + m])
            .fold(0.0, f64::max);
        (1.0 - widest).min(self.betas.upper(m))
    }

    /// Bins initialised above their finite cap stay where they are.
    fn frozen(&self, m: usize) -> bool {
        self.betas.get(m) > self.finite_cap(m) + 1e-12
    }

    /// Largest admissible raise of bin `m`, in target units.
    fn room_up(&self, m: usize) -> f64 {
        if self.frozen(m) {
            return 0.0;
        }
        self.bin_step(m)
            .min(self.finite_cap(m) - self.betas.get(m))
            .max(0.0)
    }

    fn room_down(&self, m: usize) -> f64 {
        if self.frozen(m) {
            return 0.0;
        }
        self.bin_step(m).min(self.betas.get(m))
    }

    /// One rank of the smallest cell in bin `m`.
    fn bin_step(&self, m: usize) -> f64 {
        (0..self.groups)
            .map(|a| self.cell_steps[a * self.bins + m])
            .fold(f64::INFINITY, f64::min)
    }

    /// Mass-preserving paired step: raise `up`, lower `down`.
    fn step(&mut self, up: usize, down: usize) {
        let scale = |m: usize| self.bins as f64 * self.betas.weight(m);
        let mass = (self.room_up(up) * scale(up)).min(self.room_down(down) * scale(down));
        let new_up = self.betas.get(up) + mass / scale(up);
        let new_down = self.betas.get(down) - mass / scale(down);
        self.set_beta(up, new_up);
        self.set_beta(down, new_down);
    }

    fn bin_gradient(&self, m: usize) -> (f64, f64) {
        let n = self.points.len();
        if n == 0 {
            return (0.0, 0.0);
        }
        let delta = self.bin_step(m).max(MIN_STEP);
        let beta = self.betas.get(m);
        let (mut plus, mut minus) = (0.0, 0.0);
        for a in 0..self.groups {
            let u = self.counter(a, m);
            if u == 0 {
                continue;
            }
            let (tp, tm) = estimate_slopes(&self.gbq, a, m, beta, delta);
            plus += u as f64 * tp;
            minus += u as f64 * tm;
        }
        // per unit of coverage mass, so unequal bins trade fairly
        let scale = n as f64 * self.bins as f64 * self.betas.weight(m);
        (plus / scale, minus / scale)
    }

    fn set_beta(&mut self, m: usize, value: f64) {
        self.betas.set(m, value);
        self.refresh_corrections(m);
        let bins = self.bins;
        for i in 0..self.points.len() {
            let idx = i * bins + m;
            let old = self.segments[idx];
            let new = self.segment(i, m);
            if old == new {
                continue;
            }
            self.segments[idx] = new;
            self.union_widths[i] += len(new) - len(old);
            let (f, l) = (self.first[i], self.last[i]);
            if old.is_some() != new.is_some() || f == Some(m) || l == Some(m) {
                self.rescan_boundaries(i);
            }
            for k in [Some(m), f, l, self.first[i], self.last[i]]
                .into_iter()
                .flatten()
            {
                self.refresh_counter(i, k);
            }
        }
    }

    fn refresh_corrections(&mut self, m: usize) {
        let beta = self.betas.get(m);
        for a in 0..self.groups {
            self.corrections[a * self.bins + m] = self.gbq.lookup(a, m, beta);
        }
    }

    fn segment(&self, i: usize, m: usize) -> Option<(f64, f64)> {
        let p = &self.points[i];
        let g = self.corrections[p.group * self.bins + m];
        clip_to_bin(
            p.q_lo - g,
            p.q_hi + g,
            bin_range(&self.partition, m, self.edges),
            m + 1 == self.bins,
        )
    }

    fn rescan_boundaries(&mut self, i: usize) {
        let row = &self.segments[i * self.bins..(i + 1) * self.bins];
        self.first[i] = row.iter().position(Option::is_some);
        self.last[i] = row.iter().rposition(Option::is_some);
    }

    fn refresh_counter(&mut self, i: usize, m: usize) {
        let idx = i * self.bins + m;
        let member = match self.segments[idx] {
            None => false,
            Some(seg) => {
                let (lo, hi) = bin_range(&self.partition, m, self.edges);
                let partial = len(Some(seg)) < hi - lo;
                partial || self.first[i] == Some(m) || self.last[i] == Some(m)
            }
        };
        if member != self.in_counter[idx] {
            let c = self.points[i].group * self.bins + m;
            if member {
                self.counters[c] += 1;
            } else {
                self.counters[c] -= 1;
            }
            self.in_counter[idx] = member;
        }
    }

    fn hull_width(&self, i: usize) -> f64 {
        match (self.first[i], self.last[i]) {
            (Some(f), Some(l)) => {
                let lo = self.segments[i * self.bins + f].map_or(0.0, |s| s.0);
                let hi = self.segments[i * self.bins + l].map_or(0.0, |s| s.1);
                hi - lo
            }
            _ => 0.0,
        }
    }

    fn point_bound(&self, i: usize) -> f64 {
        match (self.first[i], self.last[i]) {
            (Some(f), Some(l)) => {
                let p = &self.points[i];
                let a = p.group;
                let g = |m: usize| self.corrections[a * self.bins + m];
                let seg = |m: usize| self.segments[i * self.bins + m].unwrap_or((0.0, 0.0));
                let below = if g(f).is_finite() {
                    g(f)
                } else {
                    p.q_lo - seg(f).0
                };
                let above = if g(l).is_finite() {
                    g(l)
                } else {
                    seg(l).1 - p.q_hi
                };
                self.start_widths[i] + below + above - 2.0 * self.group_quantiles[a]
            }
            _ => 0.0,
        }
    }

    fn record(&mut self) {
        self.trace.push(TracePoint {
            iteration: self.iteration,
            width: self.mean_width(),
            hull_width: self.mean_hull_width(),
            dummy_bound: self.dummy_bound(),
        });
    }
}

fn len(seg: Option<(f64, f64)>) -> f64 {
    seg.map_or(0.0, |(l, h)| h - l)
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Optimizes from `init` and returns the final targets; `max_iterations == 0`
/// returns `init` unchanged.
pub fn optimize(state: &mut OptimizerState, settings: &OptimizerSettings) -> BetaVector {
    state.optimize(settings).clone()
}
