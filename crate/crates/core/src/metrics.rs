//! Error metrics on denormalized kW values.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Actuals at or below this magnitude are left out of MAPE.
pub const DEFAULT_ZERO_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {actual} actuals vs {forecast} forecasts")]
    LengthMismatch { actual: usize, forecast: usize },
    #[error("empty input")]
    Empty,
    #[error("every actual is within the zero floor {0}")]
    AllBelowFloor(f64),
    #[error("zero floor must be non-negative, got {0}")]
    BadFloor(f64),
    #[error("window must be at least 1")]
    ZeroWindow,
}

fn check(actual: &[f64], forecast: &[f64]) -> Result<(), MetricError> {
    if actual.len() != forecast.len() {
        return Err(MetricError::LengthMismatch {
            actual: actual.len(),
            forecast: forecast.len(),
        });
    }
    if actual.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(())
}

/// Mean squared error.
pub fn mse(actual: &[f64], forecast: &[f64]) -> Result<f64, MetricError> {
    check(actual, forecast)?;
    let sum: f64 = actual.iter().zip(forecast).map(|(a, f)| (a - f) * (a - f)).sum();
    Ok(sum / actual.len() as f64)
}

/// Mean absolute percentage error in percent, skipping `|A| <= zero_floor`.
pub fn mape(actual: &[f64], forecast: &[f64], zero_floor: f64) -> Result<f64, MetricError> {
    check(actual, forecast)?;
    if !(zero_floor >= 0.0) {
        return Err(MetricError::BadFloor(zero_floor));
    }
    let (sum, n) = actual
        .iter()
        .zip(forecast)
        .filter(|(a, _)| a.abs() > zero_floor)
        .fold((0.0, 0usize), |(s, n), (a, f)| (s + ((a - f) / a).abs(), n + 1));
    if n == 0 {
        return Err(MetricError::AllBelowFloor(zero_floor));
    }
    Ok(100.0 * sum / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// 1-based lead time or elapsed hours.
    pub hour: usize,
    /// `None` while every actual so far is within the zero floor.
    pub cum_mape: Option<f64>,
    pub cum_mse: f64,
    pub roll_mape: Option<f64>,
    pub roll_mse: f64,
}

/// Cumulative and trailing-window errors at every hour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorCurve {
    pub window: usize,
    pub points: Vec<CurvePoint>,
}

pub fn error_curve(
    actual: &[f64],
    forecast: &[f64],
    window: usize,
    zero_floor: f64,
) -> Result<ErrorCurve, MetricError> {
    if window == 0 {
        return Err(MetricError::ZeroWindow);
    }
    if actual.len() != forecast.len() {
        return Err(MetricError::LengthMismatch {
            actual: actual.len(),
            forecast: forecast.len(),
        });
    }
    let n = actual.len();
    // prefix sums of squared error, absolute percentage error and included count
    let mut sq = vec![0.0; n + 1];
    let mut ape = vec![0.0; n + 1];
    let mut cnt = vec![0usize; n + 1];
    for i in 0..n {
        let (a, f) = (actual[i], forecast[i]);
        sq[i + 1] = sq[i] + (a - f) * (a - f);
        let included = a.abs() > zero_floor;
        ape[i + 1] = ape[i] + if included { ((a - f) / a).abs() } else { 0.0 };
        cnt[i + 1] = cnt[i] + included as usize;
    }
    let ratio = |s: f64, c: usize| (c > 0).then(|| 100.0 * s / c as f64);
    let points = (1..=n)
        .map(|h| {
            let lo = h.saturating_sub(window);
            CurvePoint {
                hour: h,
                cum_mape: ratio(ape[h], cnt[h]),
                cum_mse: sq[h] / h as f64,
                roll_mape: ratio(ape[h] - ape[lo], cnt[h] - cnt[lo]),
                roll_mse: (sq[h] - sq[lo]) / (h - lo) as f64,
            }
        })
        .collect();
    Ok(ErrorCurve { window, points })
}

impl ErrorCurve {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Cumulative MAPE at 1-based hour `h`.
    pub fn cum_mape_at(&self, h: usize) -> Option<f64> {
        h.checked_sub(1)
            .and_then(|i| self.points.get(i))
            .and_then(|p| p.cum_mape)
    }

    /// First hour whose cumulative MAPE is strictly above `threshold` percent.
    pub fn first_crossing(&self, threshold: f64) -> Option<usize> {
        self.points
            .iter()
            .find(|p| p.cum_mape.is_some_and(|m| m > threshold))
            .map(|p| p.hour)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["hour", "cum_mape", "cum_mse", "roll_mape", "roll_mse"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for p in &self.points {
            w.write_record([
                p.hour.to_string(),
                opt(p.cum_mape),
                p.cum_mse.to_string(),
                opt(p.roll_mape),
                p.roll_mse.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_mse(a: &[f64], f: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..a.len() {
            s += (a[i] - f[i]).powi(2);
        }
        s / a.len() as f64
    }

    #[test]
    fn hand_examples() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse(&[1.0, 2.0], &[2.0, 4.0]).unwrap(), 2.5);
        assert_eq!(mape(&[3.0, 4.0], &[3.0, 4.0], DEFAULT_ZERO_FLOOR).unwrap(), 0.0);
        assert!((mape(&[10.0], &[9.0], DEFAULT_ZERO_FLOOR).unwrap() - 10.0).abs() < 1e-12);
        assert!((mape(&[10.0, 0.0], &[9.0, 5.0], 1e-6).unwrap() - 10.0).abs() < 1e-12);
        assert!(matches!(mse(&[1.0], &[1.0, 2.0]), Err(MetricError::LengthMismatch { .. })));
        assert!(matches!(mape(&[0.0], &[1.0], 1e-6), Err(MetricError::AllBelowFloor(_))));
        assert!(matches!(mse(&[], &[]), Err(MetricError::Empty)));
    }

    #[test]
    fn random_length_100_matches_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        let a: Vec<f64> = (0..100).map(|_| rng.random_range(0.1..5.0)).collect();
        let f: Vec<f64> = (0..100).map(|_| rng.random_range(0.0..5.0)).collect();
        assert!((mse(&a, &f).unwrap() - naive_mse(&a, &f)).abs() < 1e-12);
    }

    #[test]
    fn constant_relative_error_gives_flat_curve() {
        let a: Vec<f64> = (1..=50).map(|i| i as f64).collect();
        let f: Vec<f64> = a.iter().map(|x| 1.1 * x).collect();
        let curve = error_curve(&a, &f, 24, DEFAULT_ZERO_FLOOR).unwrap();
        for p in &curve.points {
            assert!((p.cum_mape.unwrap() - 10.0).abs() < 1e-9);
            assert!((p.roll_mape.unwrap() - 10.0).abs() < 1e-9);
        }
    }

    #[test]
    fn single_early_error_dilutes() {
        let a = vec![2.0; 100];
        let mut f = a.clone();
        f[0] = 3.0;
        let curve = error_curve(&a, &f, 24, DEFAULT_ZERO_FLOOR).unwrap();
        for w in curve.points.windows(2) {
            assert!(w[1].cum_mape.unwrap() < w[0].cum_mape.unwrap());
        }
        assert_eq!(curve.points[30].roll_mape, Some(0.0));
    }

    #[test]
    fn late_spike_crosses_after_day_one() {
        // 4% for the first 24 hours, 30% afterwards
        let a = vec![1.0; 72];
        let f: Vec<f64> = (0..72).map(|i| if i < 24 { 1.04 } else { 1.3 }).collect();
        let curve = error_curve(&a, &f, 24, DEFAULT_ZERO_FLOOR).unwrap();
        assert!(curve.cum_mape_at(24).unwrap() < 10.0);
        // (4*24 + 30k)/(24 + k) > 10 first holds at k = 8
        assert_eq!(curve.first_crossing(10.0), Some(32));
    }

    #[test]
    fn rolling_window_matches_direct_metric() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a: Vec<f64> = (0..60).map(|_| rng.random_range(0.5..3.0)).collect();
        let f: Vec<f64> = (0..60).map(|_| rng.random_range(0.5..3.0)).collect();
        let curve = error_curve(&a, &f, 7, DEFAULT_ZERO_FLOOR).unwrap();
        for h in [1usize, 5, 7, 8, 33, 60] {
            let lo = h.saturating_sub(7);
            let p = &curve.points[h - 1];
            assert!((p.roll_mse - naive_mse(&a[lo..h], &f[lo..h])).abs() < 1e-12);
            assert!((p.cum_mse - naive_mse(&a[..h], &f[..h])).abs() < 1e-12);
            let m = mape(&a[lo..h], &f[lo..h], DEFAULT_ZERO_FLOOR).unwrap();
            assert!((p.roll_mape.unwrap() - m).abs() < 1e-9);
        }
    }

    #[test]
    fn csv_has_expected_header() {
        let curve = error_curve(&[1.0, 0.0], &[1.5, 1.0], 2, DEFAULT_ZERO_FLOOR).unwrap();
        let mut buf = Vec::new();
        curve.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("hour,cum_mape,cum_mse,roll_mape,roll_mse"));
        assert_eq!(lines.next(), Some("1,50,0.25,50,0.25"));
        assert_eq!(lines.next(), Some("2,50,0.625,50,0.625"));
        let zero = error_curve(&[0.0], &[1.0], 1, DEFAULT_ZERO_FLOOR).unwrap();
        assert_eq!(zero.points[0].cum_mape, None);
    }

    proptest! {
        #[test]
        fn non_negative_and_scaling(
            pairs in prop::collection::vec((0.1f64..10.0, 0.0f64..10.0), 1..50),
            c in 0.1f64..10.0,
        ) {
            let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let f: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let m = mse(&a, &f).unwrap();
            let p = mape(&a, &f, DEFAULT_ZERO_FLOOR).unwrap();
            prop_assert!(m >= 0.0 && p >= 0.0);
            let ca: Vec<f64> = a.iter().map(|x| c * x).collect();
            let cf: Vec<f64> = f.iter().map(|x| c * x).collect();
            prop_assert!((mse(&ca, &cf).unwrap() - c * c * m).abs() <= 1e-9 * (1.0 + c * c * m));
            prop_assert!((mape(&ca, &cf, DEFAULT_ZERO_FLOOR).unwrap() - p).abs() <= 1e-9 * (1.0 + p));
            prop_assert_eq!(mse(&a, &a).unwrap(), 0.0);
        }
    }
}
