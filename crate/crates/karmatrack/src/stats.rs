//! Summary statistics over run means.

use statrs::distribution::{ContinuousCDF, StudentsT};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n − 1); 0 for a single value.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

/// One-sided Welch test of `mean(a) > mean(b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchTest {
    pub diff: f64,
    pub t: f64,
    pub df: f64,
    /// P(T ≥ t) under equal means.
    pub p_value: f64,
}

impl WelchTest {
    pub fn significant(&self, level: f64) -> bool {
        self.p_value < 1.0 - level
    }
}

/// `None` when either side has fewer than two values.
pub fn welch_greater(a: &[f64], b: &[f64]) -> Option<WelchTest> {
    if a.len() < 2 || b.len() < 2 {
        return None;
    }
    let diff = mean(a) - mean(b);
    let va = sample_std(a).powi(2) / a.len() as f64;
    let vb = sample_std(b).powi(2) / b.len() as f64;
    let se2 = va + vb;
    if se2 == 0.0 {
        let p_value = if diff > 0.0 { 0.0 } else { 1.0 };
        return Some(WelchTest {
            diff,
            t: if diff > 0.0 { f64::INFINITY } else { f64::NEG_INFINITY },
            df: (a.len() + b.len() - 2) as f64,
            p_value,
        });
    }
    let t = diff / se2.sqrt();
    let df = se2 * se2 / (va * va / (a.len() - 1) as f64 + vb * vb / (b.len() - 1) as f64);
    let dist = StudentsT::new(0.0, 1.0, df).ok()?;
    Some(WelchTest {
        diff,
        t,
        df,
        p_value: dist.sf(t),
    })
}

/// `mean (std)` with one decimal.
pub fn format_mean_std(xs: &[f64]) -> String {
    format!("{:.1} ({:.1})", mean(xs), sample_std(xs))
}
