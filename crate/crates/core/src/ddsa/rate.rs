//! Log-log fits of metric series against the horizon.

use serde::{Deserialize, Serialize};

pub const LOG_FLOOR: f64 = 1e-16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerFit {
    pub slope: f64,
    pub intercept: f64,
    /// Points whose value was raised to the floor before taking logs.
    pub floored: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    /// Fit of the metric; the theory predicts a slope near -1/2.
    pub metric: PowerFit,
    /// Fit of the violation norm; the worst-case prediction is -1/4.
    pub violation: Option<PowerFit>,
}

/// Least-squares line through `(ln T, ln max(v, floor))`.
pub fn power_fit(points: &[(usize, f64)]) -> Result<PowerFit, String> {
    if points.len() < 2 {
        return Err(format!("need at least 2 points, got {}", points.len()));
    }
    let mut floored = 0;
    let xy: Vec<(f64, f64)> = points
        .iter()
        .map(|&(t, v)| {
            let v = if v > LOG_FLOOR && v.is_finite() {
                v
            } else {
                floored += 1;
                LOG_FLOOR
            };
            ((t as f64).ln(), v.ln())
        })
        .collect();
    let n = xy.len() as f64;
    let mx = xy.iter().map(|p| p.0).sum::<f64>() / n;
    let my = xy.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = xy.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err("all horizons are equal".into());
    }
    let sxy: f64 = xy.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Ok(PowerFit {
        slope,
        intercept: my - slope * mx,
        floored,
    })
}

/// `series` holds `(T, V_T, violation_T)`, one fresh run per horizon.
pub fn rate_fit(series: &[(usize, f64, Option<f64>)]) -> Result<RateReport, String> {
    if series.len() < 4 {
        return Err(format!("rate fit needs at least 4 horizons, got {}", series.len()));
    }
    let metric = power_fit(&series.iter().map(|s| (s.0, s.1)).collect::<Vec<_>>())?;
    let violation = if series.iter().all(|s| s.2.is_some()) {
        Some(power_fit(&series.iter().map(|s| (s.0, s.2.unwrap())).collect::<Vec<_>>())?)
    } else {
        None
    };
    Ok(RateReport { metric, violation })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const GRID: [usize; 4] = [100, 1000, 10_000, 100_000];

    #[test]
    fn inverse_square_root_law() {
        let s: Vec<_> = GRID.iter().map(|&t| (t, 3.0 / (t as f64).sqrt(), None)).collect();
        let r = rate_fit(&s).unwrap();
        assert!((r.metric.slope + 0.5).abs() < 1e-12);
        assert!((r.metric.intercept - 3f64.ln()).abs() < 1e-12);
        assert!(r.violation.is_none());
    }

    #[test]
    fn constant_series() {
        let s: Vec<_> = GRID.iter().map(|&t| (t, 0.7, Some(2.0))).collect();
        let r = rate_fit(&s).unwrap();
        assert!(r.metric.slope.abs() < 1e-12);
        assert!(r.violation.unwrap().slope.abs() < 1e-12);
    }

    #[test]
    fn floors_are_counted() {
        let s = [(10, 1.0, None), (100, 0.0, None), (1000, -1.0, None), (10_000, 1e-3, None)];
        assert_eq!(rate_fit(&s).unwrap().metric.floored, 2);
        assert!(rate_fit(&s[..3]).is_err());
    }

    proptest! {
        #[test]
        fn recovers_any_power_law(a in -2.0f64..2.0, c in 0.01f64..100.0) {
            let s: Vec<_> = GRID.iter().map(|&t| (t, c * (t as f64).powf(a), None)).collect();
            let r = rate_fit(&s).unwrap();
            prop_assert!((r.metric.slope - a).abs() < 1e-9);
        }
    }
}
