//! Forgetting and stability scores, priority distributions and batch TD statistics.

use std::collections::VecDeque;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("score curve is empty")]
    EmptyCurve,
    #[error("score curve steps must be strictly increasing (row {0})")]
    NotIncreasing(usize),
    #[error("non-finite score at row {0}")]
    NonFinite(usize),
    #[error("horizon {horizon} outside 1..={len}")]
    Horizon { horizon: usize, len: usize },
    #[error("zero denominator")]
    ZeroDenominator,
    #[error("empty input")]
    Empty,
}

/// Evaluation scores at strictly increasing training steps.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreCurve {
    steps: Vec<u64>,
    scores: Vec<f64>,
}

impl ScoreCurve {
    pub fn new(steps: Vec<u64>, scores: Vec<f64>) -> Result<Self, MetricsError> {
        if steps.len() != scores.len() || steps.is_empty() {
            return Err(MetricsError::EmptyCurve);
        }
        if let Some(i) = steps.windows(2).position(|w| w[1] <= w[0]) {
            return Err(MetricsError::NotIncreasing(i + 1));
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(MetricsError::NonFinite(i));
        }
        Ok(Self { steps, scores })
    }

    /// Curve indexed by position (steps 1, 2, ...).
    pub fn from_scores(scores: &[f64]) -> Result<Self, MetricsError> {
        Self::new((1..=scores.len() as u64).collect(), scores.to_vec())
    }

    pub fn steps(&self) -> &[u64] {
        &self.steps
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

fn first_argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn suffix_min(values: &[f64]) -> Vec<f64> {
    let mut out = values.to_vec();
    for i in (0..out.len().saturating_sub(1)).rev() {
        out[i] = out[i].min(out[i + 1]);
    }
    out
}

/// Drop from the first peak within the first `horizon` points to the lowest
/// score anywhere after it.
pub fn forget_at(curve: &ScoreCurve, horizon: usize) -> Result<f64, MetricsError> {
    let n = curve.len();
    if horizon == 0 || horizon > n {
        return Err(MetricsError::Horizon { horizon, len: n });
    }
    let s = curve.scores();
    let peak = first_argmax(&s[..horizon]);
    let min_after = s[peak..].iter().copied().fold(f64::INFINITY, f64::min);
    Ok(s[peak] - min_after)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForgetResult {
    /// Normalized forgetting in `[0, 1]`.
    pub value: f64,
    /// Horizon (1-based point count) of the first maximal forgetting.
    pub horizon: usize,
    /// Index of the peak behind that forgetting.
    pub peak: usize,
    /// Set when the denominator vanished and `value` was defined as 0.
    pub degenerate: bool,
}

/// Largest forgetting over all horizons, normalized by the gap between its
/// peak and the global minimum. Linear time.
pub fn normalized_max_forget(curve: &ScoreCurve) -> ForgetResult {
    let s = curve.scores();
    let suffix = suffix_min(s);
    let global_min = suffix[0];
    let mut peak = 0;
    let mut best = (f64::NEG_INFINITY, 0usize, 0usize);
    for t in 0..s.len() {
        if s[t] > s[peak] {
            peak = t;
        }
        let forget = s[peak] - suffix[peak];
        if forget > best.0 {
            best = (forget, t + 1, peak);
        }
    }
    let (numerator, horizon, peak) = best;
    let denominator = s[peak] - global_min;
    if denominator == 0.0 {
        return ForgetResult {
            value: 0.0,
            horizon,
            peak,
            degenerate: true,
        };
    }
    ForgetResult {
        value: numerator / denominator,
        horizon,
        peak,
        degenerate: false,
    }
}

pub fn relative_stability_score(per: &ScoreCurve, pper: &ScoreCurve) -> f64 {
    normalized_max_forget(per).value - normalized_max_forget(pper).value
}

pub fn relative_test_score(
    pper: f64,
    per: f64,
    human: f64,
    random: f64,
) -> Result<f64, MetricsError> {
    let denominator = human.max(per) - random;
    if denominator == 0.0 || !denominator.is_finite() {
        return Err(MetricsError::ZeroDenominator);
    }
    Ok((pper - per) / denominator)
}

/// Log-binned counts of raw priorities over `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorityHistogram {
    pub step: u64,
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl PriorityHistogram {
    /// `bins` log-spaced bins from `floor` to the largest priority. Values
    /// below the floor land in the first bin.
    pub fn from_priorities(
        priorities: &[f64],
        floor: f64,
        bins: usize,
        step: u64,
    ) -> Result<Self, MetricsError> {
        if priorities.is_empty() || bins == 0 || !(floor > 0.0) {
            return Err(MetricsError::Empty);
        }
        if let Some(i) = priorities.iter().position(|p| !p.is_finite()) {
            return Err(MetricsError::NonFinite(i));
        }
        let hi = priorities.iter().copied().fold(floor, f64::max);
        if hi <= floor {
            return Ok(Self {
                step,
                edges: vec![floor, floor],
                counts: vec![priorities.len() as u64],
            });
        }
        let span = (hi / floor).ln();
        let mut edges: Vec<f64> = (0..=bins)
            .map(|i| floor * (span * i as f64 / bins as f64).exp())
            .collect();
        edges[bins] = hi;
        let mut counts = vec![0u64; bins];
        for &p in priorities {
            let idx = if p <= floor {
                0
            } else {
                ((p / floor).ln() / span * bins as f64) as usize
            };
            counts[idx.min(bins - 1)] += 1;
        }
        Ok(Self {
            step,
            edges,
            counts,
        })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Exact empirical CDF as `(value, fraction <= value)` at each distinct value.
pub fn empirical_cdf(priorities: &[f64]) -> Result<Vec<(f64, f64)>, MetricsError> {
    if priorities.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut sorted = priorities.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, &v) in sorted.iter().enumerate() {
        if i + 1 == n || sorted[i + 1] != v {
            out.push((v, (i + 1) as f64 / n as f64));
        }
    }
    Ok(out)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation.
pub fn population_std(values: &[f64]) -> f64 {
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64).sqrt()
}

/// Lag-1 autocorrelation; `None` for fewer than 3 points or zero variance.
pub fn lag1_autocorrelation(values: &[f64]) -> Option<f64> {
    if values.len() < 3 {
        return None;
    }
    let m = mean(values);
    let var: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    if var == 0.0 {
        return None;
    }
    let cov: f64 = values.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
    Some(cov / var)
}

/// One batch summary row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchRow {
    pub mean_td: f64,
    pub std_td: Option<f64>,
    pub mean_pred: Option<f64>,
    pub std_pred: Option<f64>,
}

/// Rolling window of batch means of the TD error and its prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    window: usize,
    td_means: VecDeque<f64>,
    pred_means: VecDeque<f64>,
}

impl BatchStats {
    pub const DEFAULT_WINDOW: usize = 1000;

    pub fn new(window: usize) -> Self {
        Self {
            window: window.max(2),
            td_means: VecDeque::new(),
            pred_means: VecDeque::new(),
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Appends one batch; the reported stds are over the current window of
    /// batch means and appear once the window holds two batches.
    pub fn update(
        &mut self,
        deltas: &[f64],
        delta_hats: Option<&[f64]>,
    ) -> Result<BatchRow, MetricsError> {
        if deltas.is_empty() {
            return Err(MetricsError::Empty);
        }
        push_window(&mut self.td_means, mean(deltas), self.window);
        let mean_pred = match delta_hats {
            Some(h) if !h.is_empty() => {
                let m = mean(h);
                push_window(&mut self.pred_means, m, self.window);
                Some(m)
            }
            _ => None,
        };
        Ok(BatchRow {
            mean_td: *self.td_means.back().expect("just pushed"),
            std_td: self.std_td(),
            mean_pred,
            std_pred: mean_pred.and(self.std_pred()),
        })
    }

    pub fn td_means(&self) -> Vec<f64> {
        self.td_means.iter().copied().collect()
    }

    pub fn pred_means(&self) -> Vec<f64> {
        self.pred_means.iter().copied().collect()
    }

    pub fn std_td(&self) -> Option<f64> {
        window_std(&self.td_means)
    }

    pub fn std_pred(&self) -> Option<f64> {
        window_std(&self.pred_means)
    }

    /// `|mean|` of the windowed batch means of the TD error.
    pub fn magnitude_td(&self) -> Option<f64> {
        (!self.td_means.is_empty()).then(|| mean(&self.td_means()).abs())
    }

    pub fn magnitude_pred(&self) -> Option<f64> {
        (!self.pred_means.is_empty()).then(|| mean(&self.pred_means()).abs())
    }
}

fn push_window(q: &mut VecDeque<f64>, v: f64, window: usize) {
    if q.len() == window {
        q.pop_front();
    }
    q.push_back(v);
}

fn window_std(q: &VecDeque<f64>) -> Option<f64> {
    if q.len() < 2 {
        return None;
    }
    let v: Vec<f64> = q.iter().copied().collect();
    Some(population_std(&v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn curve(s: &[f64]) -> ScoreCurve {
        ScoreCurve::from_scores(s).unwrap()
    }

    /// Quadratic restatement of the definition.
    fn brute_force(s: &[f64]) -> (f64, bool) {
        let n = s.len();
        let mut best = (f64::NEG_INFINITY, 0);
        for t in 1..=n {
            let mut peak = 0;
            for i in 0..t {
                if s[i] > s[peak] {
                    peak = i;
                }
            }
            let mut lo = f64::INFINITY;
            for &v in &s[peak..] {
                lo = lo.min(v);
            }
            if s[peak] - lo > best.0 {
                best = (s[peak] - lo, peak);
            }
        }
        let global = s.iter().copied().fold(f64::INFINITY, f64::min);
        let den = s[best.1] - global;
        if den == 0.0 {
            (0.0, true)
        } else {
            (best.0 / den, false)
        }
    }

    #[test]
    fn curve_validation() {
        assert_eq!(
            ScoreCurve::new(vec![], vec![]),
            Err(MetricsError::EmptyCurve)
        );
        assert_eq!(
            ScoreCurve::new(vec![1, 1], vec![0.0, 1.0]),
            Err(MetricsError::NotIncreasing(1))
        );
        assert_eq!(
            ScoreCurve::new(vec![1], vec![f64::NAN]),
            Err(MetricsError::NonFinite(0))
        );
    }

    #[test]
    fn forget_examples() {
        let c = curve(&[0.0, 10.0, 2.0, 5.0]);
        assert_eq!(forget_at(&c, 2).unwrap(), 8.0);
        let mono = curve(&[0.0, 1.0, 2.0, 3.0]);
        for t in 1..=4 {
            assert_eq!(forget_at(&mono, t).unwrap(), 0.0);
        }
        assert_eq!(forget_at(&curve(&[3.0, 3.0, 3.0]), 2).unwrap(), 0.0);
        assert!(forget_at(&c, 0).is_err());
        assert!(forget_at(&c, 5).is_err());
    }

    #[test]
    fn normalized_examples() {
        assert_eq!(
            normalized_max_forget(&curve(&[0.0, 10.0, 2.0, 5.0])).value,
            0.8
        );
        let mono = normalized_max_forget(&curve(&[0.0, 1.0, 2.0, 3.0]));
        assert_eq!(mono.value, 0.0);
        assert!(mono.degenerate);
        assert_eq!(
            normalized_max_forget(&curve(&[1.0, 5.0, 3.0, 0.0])).value,
            1.0
        );
        let flat = normalized_max_forget(&curve(&[2.0, 2.0, 2.0]));
        assert_eq!(flat.value, 0.0);
        assert!(flat.degenerate);
    }

    #[test]
    fn first_peak_is_used() {
        let r = normalized_max_forget(&curve(&[0.0, 4.0, 1.0, 4.0, 2.0]));
        assert_eq!(r.peak, 1);
        assert_eq!(r.horizon, 2);
        assert_eq!(r.value, 0.75);
    }

    #[test]
    fn relative_scores() {
        let c = curve(&[0.0, 10.0, 2.0, 5.0]);
        assert_eq!(relative_stability_score(&c, &c), 0.0);
        let forgets = curve(&[0.0, 1.0, 0.0]);
        let stable = curve(&[0.0, 1.0, 1.0]);
        assert_eq!(relative_stability_score(&forgets, &stable), 1.0);
        assert_eq!(relative_test_score(5.0, 5.0, 100.0, 0.0).unwrap(), 0.0);
        assert_eq!(relative_test_score(20.0, 10.0, 100.0, 0.0).unwrap(), 0.1);
        assert!((relative_test_score(200.0, 150.0, 100.0, 0.0).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(
            relative_test_score(1.0, 0.0, 0.0, 0.0),
            Err(MetricsError::ZeroDenominator)
        );
    }

    #[test]
    fn histogram_of_equal_priorities() {
        let h = PriorityHistogram::from_priorities(&[0.5; 10], 1e-6, 20, 7).unwrap();
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(h.total(), 10);
        let cdf = empirical_cdf(&[0.5; 10]).unwrap();
        assert_eq!(cdf, vec![(0.5, 1.0)]);
    }

    #[test]
    fn histogram_places_values() {
        let h = PriorityHistogram::from_priorities(&[0.0, 1e-6, 1e-3, 1.0], 1e-6, 6, 0).unwrap();
        assert_eq!(h.counts, vec![2, 0, 0, 1, 0, 1]);
        assert_eq!(h.edges.len(), 7);
        assert_eq!(*h.edges.last().unwrap(), 1.0);
    }

    #[test]
    fn batch_stats_examples() {
        let mut s = BatchStats::new(1000);
        for _ in 0..10 {
            s.update(&[0.5, 0.5], None).unwrap();
        }
        assert_eq!(s.std_td(), Some(0.0));
        let mut s = BatchStats::new(1000);
        for i in 0..100 {
            let m = if i % 2 == 0 { 1.0 } else { -1.0 };
            s.update(&[m, m], Some(&[0.0])).unwrap();
        }
        assert_eq!(s.std_td(), Some(1.0));
        assert_eq!(s.magnitude_td(), Some(0.0));
        let mut s = BatchStats::new(3);
        let row = s.update(&[-1.0, 1.0], None).unwrap();
        assert_eq!(row.mean_td.abs(), 0.0);
        assert_eq!(row.std_td, None);
        for v in [1.0, 2.0, 3.0, 4.0] {
            s.update(&[v], None).unwrap();
        }
        assert_eq!(s.td_means(), vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn autocorrelation_examples() {
        assert_eq!(lag1_autocorrelation(&[1.0, 2.0]), None);
        assert_eq!(lag1_autocorrelation(&[1.0, 1.0, 1.0]), None);
        assert!(lag1_autocorrelation(&[1.0, -1.0, 1.0, -1.0, 1.0, -1.0]).unwrap() < -0.5);
        assert!(lag1_autocorrelation(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap() > 0.4);
    }

    proptest! {
        #[test]
        fn linear_scan_matches_brute_force(s in prop::collection::vec(-5i32..5, 1..40)) {
            let s: Vec<f64> = s.into_iter().map(f64::from).collect();
            let r = normalized_max_forget(&curve(&s));
            let (v, degenerate) = brute_force(&s);
            prop_assert_eq!(r.value, v);
            prop_assert_eq!(r.degenerate, degenerate);
            prop_assert!((0.0..=1.0).contains(&r.value));
        }

        #[test]
        fn value_in_unit_interval(s in prop::collection::vec(-1e3f64..1e3, 1..100)) {
            let r = normalized_max_forget(&curve(&s));
            prop_assert!((0.0..=1.0).contains(&r.value));
        }

        #[test]
        fn later_equal_peaks_do_not_move_the_peak(s in prop::collection::vec(0i32..5, 2..30), extra in 0usize..5) {
            let mut s: Vec<f64> = s.into_iter().map(f64::from).collect();
            let peak = first_argmax(&s);
            let top = s[peak];
            for v in s.iter_mut().skip(peak + 1).take(extra) {
                *v = top;
            }
            prop_assert_eq!(first_argmax(&s), peak);
            prop_assert_eq!(forget_at(&curve(&s), s.len()).unwrap() >= 0.0, true);
        }

        #[test]
        fn cdf_is_monotone_and_ends_at_one(p in prop::collection::vec(0.0f64..10.0, 1..200)) {
            let cdf = empirical_cdf(&p).unwrap();
            prop_assert!(cdf.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 < w[1].1));
            prop_assert_eq!(cdf.last().unwrap().1, 1.0);
            let h = PriorityHistogram::from_priorities(&p, 1e-6, 16, 0).unwrap();
            prop_assert_eq!(h.total(), p.len() as u64);
        }
    }
}
