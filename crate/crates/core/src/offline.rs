//! Offline prediction metrics: six error metrics over ground-truth vs
//! predicted steering (with speeds), a 4-way discrete-accuracy breakdown,
//! and a policy-over-validation-set evaluator.
//!
//! Ground truth `a`, predictions `a_hat`, and speeds `v` are parallel slices;
//! the cumulative metric additionally needs the temporal sequence structure.

use crate::float::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("empty validation set")]
    EmptySet,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("negative speed at index {index}")]
    NegativeSpeed { index: usize },
    #[error("no sequence long enough for a window of {window} steps")]
    NoValidWindow { window: usize },
    #[error("unknown class label `{name}`")]
    UnknownClass { name: String },
}

fn check_pair<F>(a: &[F], b: &[F]) -> Result<(), MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::LengthMismatch { left: a.len(), right: b.len() });
    }
    if a.is_empty() {
        return Err(MetricError::EmptySet);
    }
    Ok(())
}

fn check_speeds<F: Float>(v: &[F]) -> Result<(), MetricError> {
    match v.iter().position(|s| *s < F::zero()) {
        Some(index) => Err(MetricError::NegativeSpeed { index }),
        None => Ok(()),
    }
}

/// Mean squared error.
pub fn mse<F: Float>(actual: &[F], predicted: &[F]) -> Result<F, MetricError> {
    check_pair(actual, predicted)?;
    let s: F = actual.iter().zip(predicted).map(|(a, p)| (*a - *p) * (*a - *p)).sum();
    Ok(s / F::from_n(actual.len()))
}

/// Mean absolute error.
pub fn mae<F: Float>(actual: &[F], predicted: &[F]) -> Result<F, MetricError> {
    check_pair(actual, predicted)?;
    let s: F = actual.iter().zip(predicted).map(|(a, p)| (*a - *p).abs()).sum();
    Ok(s / F::from_n(actual.len()))
}

/// Mean absolute error weighted by the sample speed.
pub fn speed_weighted_mae<F: Float>(
    actual: &[F],
    predicted: &[F],
    speeds: &[F],
) -> Result<F, MetricError> {
    check_pair(actual, predicted)?;
    check_pair(actual, speeds)?;
    check_speeds(speeds)?;
    let s: F = actual
        .iter()
        .zip(predicted)
        .zip(speeds)
        .map(|((a, p), v)| (*a - *p).abs() * *v)
        .sum();
    Ok(s / F::from_n(actual.len()))
}

/// Sum of |window sums| and the window count for one temporally ordered
/// sequence; only windows of `window + 1` steps fully inside the sequence
/// contribute.
fn cumulative_windows<F: Float>(
    actual: &[F],
    predicted: &[F],
    speeds: &[F],
    window: usize,
) -> (F, usize) {
    let n = actual.len();
    if n < window + 1 {
        return (F::zero(), 0);
    }
    let starts = n - window;
    let mut total = F::zero();
    for i in 0..starts {
        let mut acc = F::zero();
        for t in 0..=window {
            acc += (actual[i + t] - predicted[i + t]) * speeds[i + t];
        }
        total += acc.abs();
    }
    (total, starts)
}

/// Cumulative speed-weighted absolute error over one temporally ordered
/// sequence: mean over window starts of |sum over T+1 steps of
/// (a - a_hat) * v|.
pub fn cumulative_swae<F: Float>(
    actual: &[F],
    predicted: &[F],
    speeds: &[F],
    window: usize,
) -> Result<F, MetricError> {
    check_pair(actual, predicted)?;
    check_pair(actual, speeds)?;
    check_speeds(speeds)?;
    let (total, count) = cumulative_windows(actual, predicted, speeds, window);
    if count == 0 {
        return Err(MetricError::NoValidWindow { window });
    }
    Ok(total / F::from_n(count))
}

/// Cumulative speed-weighted absolute error pooled over several sequences.
pub fn cumulative_swae_multi<F: Float>(
    sequences: &[(&[F], &[F], &[F])],
    window: usize,
) -> Result<F, MetricError> {
    if sequences.is_empty() {
        return Err(MetricError::EmptySet);
    }
    let mut total = F::zero();
    let mut count = 0usize;
    for (a, p, v) in sequences {
        check_pair(a, p)?;
        check_pair(a, v)?;
        check_speeds(v)?;
        let (t, c) = cumulative_windows(a, p, v, window);
        total += t;
        count += c;
    }
    if count == 0 {
        return Err(MetricError::NoValidWindow { window });
    }
    Ok(total / F::from_n(count))
}

/// Three-way quantization: -1 if `x < -sigma`, 0 if `-sigma <= x < sigma`,
/// 1 if `x >= sigma`.
pub fn quantize<F: Float>(x: F, sigma: F) -> i8 {
    if x < -sigma {
        -1
    } else if x < sigma {
        0
    } else {
        1
    }
}

/// Fraction of samples whose quantized prediction disagrees with the
/// quantized ground truth.
pub fn quantized_classification_error<F: Float>(
    actual: &[F],
    predicted: &[F],
    sigma: F,
) -> Result<F, MetricError> {
    assert!(sigma > F::zero(), "sigma must be positive");
    check_pair(actual, predicted)?;
    let wrong = actual
        .iter()
        .zip(predicted)
        .filter(|(a, p)| quantize(**a, sigma) != quantize(**p, sigma))
        .count();
    Ok(F::from_n(wrong) / F::from_n(actual.len()))
}

/// Fraction of samples with |a_hat - a| strictly greater than alpha * |a|
/// (exact predictions never count as errors).
pub fn thresholded_relative_error<F: Float>(
    actual: &[F],
    predicted: &[F],
    alpha: F,
) -> Result<F, MetricError> {
    assert!(alpha >= F::zero(), "alpha must be non-negative");
    check_pair(actual, predicted)?;
    let over = actual
        .iter()
        .zip(predicted)
        .filter(|(a, p)| (**p - **a).abs() > alpha * a.abs())
        .count();
    Ok(F::from_n(over) / F::from_n(actual.len()))
}

/// 4-way high-level action class used by the discrete-accuracy breakdown.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriveClass {
    Straight,
    Stop,
    Left,
    Right,
}

impl DriveClass {
    pub fn parse(name: &str) -> Result<Self, MetricError> {
        match name.to_ascii_lowercase().as_str() {
            "straight" => Ok(Self::Straight),
            "stop" => Ok(Self::Stop),
            "left" => Ok(Self::Left),
            "right" => Ok(Self::Right),
            _ => Err(MetricError::UnknownClass { name: name.to_string() }),
        }
    }

    pub fn is_turn(self) -> bool {
        matches!(self, Self::Left | Self::Right)
    }
}

/// Classification-accuracy breakdown: overall, per ground-truth subset
/// (turns merge left and right), and speed-weighted variants. Subsets with
/// no samples report `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownReport<F> {
    pub all_data: F,
    pub straight: Option<F>,
    pub stop: Option<F>,
    pub turns: Option<F>,
    pub speed_weighted_all: Option<F>,
    pub speed_weighted_turns: Option<F>,
    pub n: usize,
}

pub fn discrete_accuracy<F: Float>(
    labels: &[DriveClass],
    preds: &[DriveClass],
    speeds: &[F],
) -> Result<BreakdownReport<F>, MetricError> {
    if labels.len() != preds.len() {
        return Err(MetricError::LengthMismatch { left: labels.len(), right: preds.len() });
    }
    if labels.len() != speeds.len() {
        return Err(MetricError::LengthMismatch { left: labels.len(), right: speeds.len() });
    }
    if labels.is_empty() {
        return Err(MetricError::EmptySet);
    }
    check_speeds(speeds)?;

    let mut hits = 0usize;
    let mut subset_hits = [0usize; 3]; // straight, stop, turns
    let mut subset_n = [0usize; 3];
    let mut w_hit = F::zero();
    let mut w_tot = F::zero();
    let mut w_hit_turn = F::zero();
    let mut w_tot_turn = F::zero();
    for ((l, p), v) in labels.iter().zip(preds).zip(speeds) {
        let ok = l == p;
        let sub = match l {
            DriveClass::Straight => 0,
            DriveClass::Stop => 1,
            DriveClass::Left | DriveClass::Right => 2,
        };
        subset_n[sub] += 1;
        if ok {
            hits += 1;
            subset_hits[sub] += 1;
            w_hit += *v;
        }
        w_tot += *v;
        if l.is_turn() {
            w_tot_turn += *v;
            if ok {
                w_hit_turn += *v;
            }
        }
    }
    let frac = |h: usize, n: usize| {
        if n == 0 {
            None
        } else {
            Some(F::from_n(h) / F::from_n(n))
        }
    };
    Ok(BreakdownReport {
        all_data: F::from_n(hits) / F::from_n(labels.len()),
        straight: frac(subset_hits[0], subset_n[0]),
        stop: frac(subset_hits[1], subset_n[1]),
        turns: frac(subset_hits[2], subset_n[2]),
        speed_weighted_all: if w_tot > F::zero() { Some(w_hit / w_tot) } else { None },
        speed_weighted_turns: if w_tot_turn > F::zero() {
            Some(w_hit_turn / w_tot_turn)
        } else {
            None
        },
        n: labels.len(),
    })
}

/// Parameters of the parameterized offline metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OfflineParams<F> {
    /// Cumulative window length T (the window spans T + 1 steps).
    pub window: usize,
    /// Quantization threshold, steering units.
    pub sigma: F,
    /// Relative-error threshold.
    pub alpha: F,
}

impl<F: Float> Default for OfflineParams<F> {
    fn default() -> Self {
        Self { window: 64, sigma: F::from_f(0.03), alpha: F::from_f(0.1) }
    }
}

/// One value per offline metric, with the parameters that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineReport<F> {
    pub params: OfflineParams<F>,
    /// Manifest tag of the validation set the report was computed on.
    pub validation: String,
    pub n: usize,
    pub mse: F,
    pub mae: F,
    pub speed_weighted_mae: F,
    /// `None` when no sequence is long enough for the window.
    pub cumulative_swae: Option<F>,
    pub quantized_classification_error: F,
    pub thresholded_relative_error: F,
}

impl<F: Float> OfflineReport<F> {
    /// Look up a metric value by its identifier.
    pub fn value(&self, metric: &str) -> Option<F> {
        match metric {
            "mse" => Some(self.mse),
            "mae" => Some(self.mae),
            "swae" => Some(self.speed_weighted_mae),
            "cum_swae" => self.cumulative_swae,
            "qce" => Some(self.quantized_classification_error),
            "tre" => Some(self.thresholded_relative_error),
            _ => None,
        }
    }
}

/// Metric identifiers accepted by [`OfflineReport::value`].
pub const METRIC_IDS: [&str; 6] = ["mse", "mae", "swae", "cum_swae", "qce", "tre"];

/// Run a policy over a validation set and compute all six offline metrics.
///
/// The policy is cloned, so the caller's noise state is untouched. Each
/// (sequence, viewpoint) stream is predicted in temporal order with the
/// sample's flat index seeding any stochastic wrapper, which makes reports
/// of perturbed policies reproducible.
pub fn evaluate_offline(
    policy: &dyn crate::policy::Policy,
    validation: &crate::dataset::ValidationSet,
    params: &OfflineParams<f64>,
) -> Result<OfflineReport<f64>, MetricError> {
    if validation.is_empty() {
        return Err(MetricError::EmptySet);
    }
    let mut p = policy.clone_box();
    let mut sequences: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = Vec::new();
    for (sid, vp, idxs) in validation.streams() {
        p.begin_episode(u64::from(sid) * 3 + vp.episode_stream());
        let mut actual = Vec::with_capacity(idxs.len());
        let mut predicted = Vec::with_capacity(idxs.len());
        let mut speeds = Vec::with_capacity(idxs.len());
        for i in idxs {
            let s = &validation.samples[i];
            let pred = p.predict(&s.observation, i as u64);
            actual.push(s.action.steering);
            predicted.push(pred.steering);
            speeds.push(s.speed());
        }
        sequences.push((actual, predicted, speeds));
    }

    let mut a = Vec::with_capacity(validation.len());
    let mut pr = Vec::with_capacity(validation.len());
    let mut v = Vec::with_capacity(validation.len());
    for (sa, sp, sv) in &sequences {
        a.extend_from_slice(sa);
        pr.extend_from_slice(sp);
        v.extend_from_slice(sv);
    }

    let seq_views: Vec<(&[f64], &[f64], &[f64])> = sequences
        .iter()
        .map(|(sa, sp, sv)| (sa.as_slice(), sp.as_slice(), sv.as_slice()))
        .collect();
    let cumulative = match cumulative_swae_multi(&seq_views, params.window) {
        Ok(c) => Some(c),
        Err(MetricError::NoValidWindow { .. }) => None,
        Err(e) => return Err(e),
    };

    Ok(OfflineReport {
        params: *params,
        validation: validation.manifest.variant(),
        n: validation.len(),
        mse: mse(&a, &pr)?,
        mae: mae(&a, &pr)?,
        speed_weighted_mae: speed_weighted_mae(&a, &pr, &v)?,
        cumulative_swae: cumulative,
        quantized_classification_error: quantized_classification_error(&a, &pr, params.sigma)?,
        thresholded_relative_error: thresholded_relative_error(&a, &pr, params.alpha)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // -------- naive oracles (independent loop re-implementations) --------

    fn naive_mse(a: &[f64], p: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..a.len() {
            s += (a[i] - p[i]).powi(2);
        }
        s / a.len() as f64
    }

    fn naive_mae(a: &[f64], p: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..a.len() {
            s += (a[i] - p[i]).abs();
        }
        s / a.len() as f64
    }

    #[test]
    fn mae_matches_oracle_on_random_vectors() {
        let (a, p, _) = random_vectors(8, 1000);
        let got = mae(&a, &p).unwrap();
        let want = naive_mae(&a, &p);
        assert!((got - want).abs() <= 1e-12 * want.abs());
    }

    fn naive_swae(a: &[f64], p: &[f64], v: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..a.len() {
            s += (a[i] - p[i]).abs() * v[i];
        }
        s / a.len() as f64
    }

    fn random_vectors(seed: u64, n: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..12.0)).collect();
        (a, p, v)
    }

    #[test]
    fn mse_examples() {
        assert!((mse::<f64>(&[0.1, -0.2], &[0.0, 0.0]).unwrap() - 0.025).abs() < 1e-15);
        let a = [0.3, -0.4, 0.05f64];
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn mse_matches_oracle_on_random_vectors() {
        let (a, p, _) = random_vectors(1, 1000);
        let got = mse(&a, &p).unwrap();
        let want = naive_mse(&a, &p);
        assert!((got - want).abs() <= 1e-12 * want.abs());
    }

    #[test]
    fn mae_examples_and_homogeneity() {
        assert!((mae::<f64>(&[0.1, -0.2], &[0.0, 0.0]).unwrap() - 0.15).abs() < 1e-15);
        let (a, p, _) = random_vectors(2, 100);
        let base = mae(&a, &p).unwrap();
        let a3: Vec<f64> = a.iter().map(|x| 3.0 * x).collect();
        let p3: Vec<f64> = p.iter().map(|x| 3.0 * x).collect();
        let scaled = mae(&a3, &p3).unwrap();
        assert!((scaled - 3.0 * base).abs() < 1e-12);
    }

    #[test]
    fn swae_examples() {
        // errors [0.1, 0.2], speeds [2, 4] -> (0.2 + 0.8) / 2 = 0.5
        let got = speed_weighted_mae::<f64>(&[0.1, 0.2], &[0.0, 0.0], &[2.0, 4.0]).unwrap();
        assert!((got - 0.5).abs() < 1e-15);
        let zero = speed_weighted_mae(&[0.1, 0.2], &[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(zero, 0.0);
        let (a, p, v) = random_vectors(3, 500);
        let got = speed_weighted_mae(&a, &p, &v).unwrap();
        let want = naive_swae(&a, &p, &v);
        assert!((got - want).abs() <= 1e-12 * want.abs());
        assert!(matches!(
            speed_weighted_mae(&[0.1], &[0.0], &[-1.0]),
            Err(MetricError::NegativeSpeed { index: 0 })
        ));
    }

    #[test]
    fn cumulative_window_zero_equals_swae() {
        let (a, p, v) = random_vectors(4, 300);
        let c = cumulative_swae(&a, &p, &v, 0).unwrap();
        let s = speed_weighted_mae(&a, &p, &v).unwrap();
        assert!((c - s).abs() < 1e-12);
    }

    #[test]
    fn cumulative_alternating_errors_cancel() {
        // Predictions off by +-e alternating at constant speed, T = 1: each
        // 2-step window sums to zero.
        let n = 40;
        let a: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 0.1 } else { -0.1 }).collect();
        let p = vec![0.0; n];
        let v = vec![5.0; n];
        let c = cumulative_swae(&a, &p, &v, 1).unwrap();
        assert!(c.abs() < 1e-12, "c = {c}");
    }

    #[test]
    fn cumulative_constant_bias_accumulates() {
        // Constant error e at constant speed v, T = 63: each window is 64*e*v.
        let n = 200;
        let e = 0.05;
        let v_val = 7.0;
        let a: Vec<f64> = vec![e; n];
        let p = vec![0.0; n];
        let v = vec![v_val; n];
        let c = cumulative_swae(&a, &p, &v, 63).unwrap();
        assert!((c - 64.0 * e * v_val).abs() < 1e-9, "c = {c}");
    }

    #[test]
    fn cumulative_requires_full_windows() {
        let a = [0.1, 0.2];
        assert!(matches!(
            cumulative_swae(&a, &[0.0, 0.0], &[1.0, 1.0], 2),
            Err(MetricError::NoValidWindow { window: 2 })
        ));
    }

    #[test]
    fn quantizer_follows_half_open_intervals() {
        assert_eq!(quantize(0.05, 0.03), 1);
        assert_eq!(quantize(-0.05, 0.03), -1);
        assert_eq!(quantize(0.01, 0.03), 0);
        // boundary: -sigma <= x keeps Q = 0
        assert_eq!(quantize(-0.03, 0.03), 0);
        assert_eq!(quantize(0.03, 0.03), 1);
    }

    #[test]
    fn qce_examples() {
        // a=0.05 vs p=-0.05 at sigma 0.03: classes 1 vs -1, misclassified.
        let e = quantized_classification_error(&[0.05], &[-0.05], 0.03).unwrap();
        assert_eq!(e, 1.0);
        let e = quantized_classification_error(&[0.01], &[0.02], 0.03).unwrap();
        assert_eq!(e, 0.0);
    }

    #[test]
    fn tre_examples() {
        let e = thresholded_relative_error(&[1.0], &[1.05], 0.1).unwrap();
        assert_eq!(e, 0.0);
        let e = thresholded_relative_error(&[0.0], &[0.01], 0.1).unwrap();
        assert_eq!(e, 1.0);
        let a = [0.4, -0.2, 0.0];
        assert_eq!(thresholded_relative_error(&a, &a, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn discrete_accuracy_example() {
        use DriveClass::*;
        let labels = [Left, Right, Straight, Stop];
        let preds = [Left, Left, Straight, Stop];
        let r = discrete_accuracy::<f64>(&labels, &preds, &[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!((r.all_data - 0.75).abs() < 1e-15);
        assert_eq!(r.turns, Some(0.5));
        assert_eq!(r.straight, Some(1.0));
        assert_eq!(r.stop, Some(1.0));
    }

    #[test]
    fn discrete_accuracy_speed_weighted_all_correct() {
        use DriveClass::*;
        let labels = [Left, Straight, Stop];
        let r = discrete_accuracy(&labels, &labels, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r.speed_weighted_all, Some(1.0));
    }

    #[test]
    fn discrete_accuracy_matches_oracle_on_random_case() {
        use DriveClass::*;
        let classes = [Straight, Stop, Left, Right];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 500;
        let labels: Vec<DriveClass> = (0..n).map(|_| classes[rng.random_range(0..4)]).collect();
        let preds: Vec<DriveClass> = (0..n).map(|_| classes[rng.random_range(0..4)]).collect();
        let speeds: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..12.0)).collect();
        let r = discrete_accuracy(&labels, &preds, &speeds).unwrap();

        // brute-force oracle
        let mut hit = 0;
        let mut turn_hit = 0;
        let mut turn_n = 0;
        let mut wv = 0.0;
        let mut wh = 0.0;
        for i in 0..n {
            if labels[i] == preds[i] {
                hit += 1;
                wh += speeds[i];
            }
            wv += speeds[i];
            if labels[i].is_turn() {
                turn_n += 1;
                if labels[i] == preds[i] {
                    turn_hit += 1;
                }
            }
        }
        assert!((r.all_data - hit as f64 / n as f64).abs() < 1e-12);
        assert!((r.turns.unwrap() - turn_hit as f64 / turn_n as f64).abs() < 1e-12);
        assert!((r.speed_weighted_all.unwrap() - wh / wv).abs() < 1e-12);
    }

    #[test]
    fn class_parse_rejects_unknown() {
        assert!(matches!(
            DriveClass::parse("reverse"),
            Err(MetricError::UnknownClass { .. })
        ));
        assert_eq!(DriveClass::parse("Left").unwrap(), DriveClass::Left);
    }

    #[test]
    fn empty_inputs_are_rejected() {
        let e: [f64; 0] = [];
        assert!(matches!(mse(&e, &e), Err(MetricError::EmptySet)));
        assert!(matches!(
            mse(&[1.0], &[1.0, 2.0]),
            Err(MetricError::LengthMismatch { .. })
        ));
    }

    proptest! {
        #[test]
        fn jensen_mae_squared_below_mse(
            pairs in proptest::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 1..200)
        ) {
            let a: Vec<f64> = pairs.iter().map(|x| x.0).collect();
            let p: Vec<f64> = pairs.iter().map(|x| x.1).collect();
            let m2 = mse(&a, &p).unwrap();
            let m1 = mae(&a, &p).unwrap();
            prop_assert!(m1 * m1 <= m2 + 1e-12);
        }

        #[test]
        fn qce_and_tre_bounded(
            pairs in proptest::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 1..200),
            sigma in 0.001..0.5f64,
            alpha in 0.0..2.0f64,
        ) {
            let a: Vec<f64> = pairs.iter().map(|x| x.0).collect();
            let p: Vec<f64> = pairs.iter().map(|x| x.1).collect();
            let q = quantized_classification_error(&a, &p, sigma).unwrap();
            let t = thresholded_relative_error(&a, &p, alpha).unwrap();
            prop_assert!((0.0..=1.0).contains(&q));
            prop_assert!((0.0..=1.0).contains(&t));
        }

        #[test]
        fn tre_non_increasing_in_alpha(
            pairs in proptest::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 1..100),
            alpha in 0.0..1.0f64,
            bump in 0.0..1.0f64,
        ) {
            let a: Vec<f64> = pairs.iter().map(|x| x.0).collect();
            let p: Vec<f64> = pairs.iter().map(|x| x.1).collect();
            let lo = thresholded_relative_error(&a, &p, alpha).unwrap();
            let hi = thresholded_relative_error(&a, &p, alpha + bump).unwrap();
            prop_assert!(hi <= lo);
        }

        #[test]
        fn pointwise_metrics_permutation_invariant(
            pairs in proptest::collection::vec((-1.0..1.0f64, -1.0..1.0f64, 0.0..10.0f64), 2..100),
            seed in 0u64..1000,
        ) {
            let a: Vec<f64> = pairs.iter().map(|x| x.0).collect();
            let p: Vec<f64> = pairs.iter().map(|x| x.1).collect();
            let v: Vec<f64> = pairs.iter().map(|x| x.2).collect();
            // Fisher-Yates with a seeded rng.
            let mut idx: Vec<usize> = (0..a.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in (1..idx.len()).rev() {
                let j = rng.random_range(0..=i);
                idx.swap(i, j);
            }
            let pa: Vec<f64> = idx.iter().map(|&i| a[i]).collect();
            let pp: Vec<f64> = idx.iter().map(|&i| p[i]).collect();
            let pv: Vec<f64> = idx.iter().map(|&i| v[i]).collect();
            prop_assert!((mse(&a, &p).unwrap() - mse(&pa, &pp).unwrap()).abs() < 1e-12);
            prop_assert!((mae(&a, &p).unwrap() - mae(&pa, &pp).unwrap()).abs() < 1e-12);
            prop_assert!((speed_weighted_mae(&a, &p, &v).unwrap()
                - speed_weighted_mae(&pa, &pp, &pv).unwrap()).abs() < 1e-12);
        }
    }

    mod evaluator {
        use super::super::*;
        use crate::dataset::{collect, Cameras, Condition};
        use crate::policy::{make_perturbed, ExpertPolicy, Observation, PerturbationSpec, Policy};
        use crate::vehicle::Action;
        use crate::world::{build_town, TownId};

        /// Test-only policy that replays the ground-truth labels by flat
        /// sample index.
        struct ReplayPolicy {
            labels: Vec<f64>,
        }

        impl Policy for ReplayPolicy {
            fn begin_episode(&mut self, _episode: u64) {}
            fn predict(&mut self, _obs: &Observation, step: u64) -> Action<f64> {
                Action::new(self.labels[step as usize], 0.0, 0.0)
            }
            fn clone_box(&self) -> Box<dyn Policy> {
                Box::new(ReplayPolicy { labels: self.labels.clone() })
            }
        }

        #[test]
        fn label_replay_scores_zero_error() {
            let m = build_town(TownId::A, 0);
            let d = collect(&m, 0.005, Cameras::One, false, &Condition::clear(), 4);
            let labels: Vec<f64> = d.samples.iter().map(|s| s.action.steering).collect();
            let r = evaluate_offline(&ReplayPolicy { labels }, &d, &OfflineParams::default())
                .unwrap();
            assert_eq!(r.mse, 0.0);
            assert_eq!(r.mae, 0.0);
            assert_eq!(r.speed_weighted_mae, 0.0);
            assert_eq!(r.cumulative_swae, Some(0.0));
            assert_eq!(r.quantized_classification_error, 0.0);
            assert_eq!(r.thresholded_relative_error, 0.0);
        }

        #[test]
        fn constant_zero_policy_scores_label_power() {
            let m = build_town(TownId::A, 0);
            let d = collect(&m, 0.005, Cameras::One, false, &Condition::clear(), 4);
            let zero = crate::policy::ConstantPolicy { action: Action::coast() };
            let r = evaluate_offline(&zero, &d, &OfflineParams::default()).unwrap();
            let mean_sq: f64 =
                d.samples.iter().map(|s| s.action.steering.powi(2)).sum::<f64>() / d.len() as f64;
            assert!((r.mse - mean_sq).abs() < 1e-15);
        }

        #[test]
        fn expert_is_self_consistent_on_own_data() {
            let m = build_town(TownId::A, 0);
            let d = collect(&m, 0.01, Cameras::One, false, &Condition::clear(), 4);
            let r = evaluate_offline(&ExpertPolicy, &d, &OfflineParams::default()).unwrap();
            assert!(r.mse < 1e-8, "mse {}", r.mse);
        }

        #[test]
        fn perturbed_policy_reports_are_reproducible() {
            let m = build_town(TownId::A, 0);
            let d = collect(&m, 0.005, Cameras::Three, false, &Condition::clear(), 4);
            let p = make_perturbed(
                Box::new(ExpertPolicy),
                PerturbationSpec::WhiteNoise { std: 0.1 },
                17,
            );
            let r1 = evaluate_offline(&p, &d, &OfflineParams::default()).unwrap();
            let r2 = evaluate_offline(&p, &d, &OfflineParams::default()).unwrap();
            assert_eq!(r1, r2);
            assert!(r1.mse > 0.0);
        }
    }

    #[test]
    fn cumulative_is_order_sensitive() {
        // A sequence whose bias flips sign halfway: sorted-by-sign ordering
        // accumulates, interleaved ordering cancels.
        let n = 64;
        let mut a = vec![0.2; n / 2];
        a.extend(vec![-0.2; n / 2]);
        let mut interleaved = Vec::with_capacity(n);
        for i in 0..n / 2 {
            interleaved.push(0.2);
            let _ = i;
            interleaved.push(-0.2);
        }
        let p = vec![0.0; n];
        let v = vec![5.0; n];
        let blocked = cumulative_swae(&a, &p, &v, 15).unwrap();
        let mixed = cumulative_swae(&interleaved, &p, &v, 15).unwrap();
        assert!(blocked > 10.0 * mixed, "blocked {blocked}, mixed {mixed}");
    }
}
