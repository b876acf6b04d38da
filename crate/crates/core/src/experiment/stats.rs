use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

/// z quantile for a two-sided 95% normal interval.
const Z_95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator); 0 for n < 2.
    pub sd: f64,
    pub ci95_low: f64,
    pub ci95_high: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = mean(values);
        let sd = if n > 1 { variance(values, mean).sqrt() } else { 0.0 };
        let half = Z_95 * sd / (n as f64).sqrt();
        Some(Summary {
            n,
            mean,
            sd,
            ci95_low: mean - half,
            ci95_high: mean + half,
        })
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn variance(values: &[f64], mean: f64) -> f64 {
    values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WelchTest {
    pub t: f64,
    pub df: f64,
    /// One-sided p-value for H1: mean(a) > mean(b).
    pub p_greater: f64,
}

/// Welch's unequal-variance t-test. Needs at least two samples per group.
pub fn welch(a: &[f64], b: &[f64]) -> Option<WelchTest> {
    if a.len() < 2 || b.len() < 2 {
        return None;
    }
    let (ma, mb) = (mean(a), mean(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let sa = variance(a, ma) / na;
    let sb = variance(b, mb) / nb;
    let se2 = sa + sb;
    if se2 == 0.0 {
        // Degenerate: identical constants. Decide by the sign of the difference.
        let p = if ma > mb { 0.0 } else { 1.0 };
        return Some(WelchTest {
            t: if ma == mb { 0.0 } else { (ma - mb).signum() * f64::INFINITY },
            df: na + nb - 2.0,
            p_greater: p,
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).ok()?;
    Some(WelchTest {
        t,
        df,
        p_greater: 1.0 - dist.cdf(t),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_matches_hand_values() {
        let s = Summary::of(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]).unwrap();
        assert_eq!(s.mean, 5.0);
        assert!((s.sd - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
        assert!((s.ci95_high - s.mean - 1.96 * s.sd / 8f64.sqrt()).abs() < 1e-4);
        assert!(Summary::of(&[]).is_none());
        assert_eq!(Summary::of(&[3.0]).unwrap().sd, 0.0);
    }

    #[test]
    fn welch_reference_value() {
        // Values checked against scipy.stats.ttest_ind(equal_var=False).
        let a = [27.5, 21.0, 19.0, 23.6, 17.0, 17.9, 16.9, 20.1, 21.9, 22.6, 23.1, 19.6, 19.0, 21.7, 21.4];
        let b = [27.1, 22.0, 20.8, 23.4, 23.4, 23.5, 25.8, 22.0, 24.8, 20.2, 21.9, 22.1, 22.9, 20.5, 24.4];
        let w = welch(&a, &b).unwrap();
        assert!((w.t - (-2.46)).abs() < 0.01, "{w:?}");
        assert!((w.df - 24.99).abs() < 0.05, "{w:?}");
        let two_sided = 2.0 * (1.0 - w.p_greater);
        assert!((two_sided - 0.021).abs() < 0.001, "{w:?}");
    }

    #[test]
    fn welch_is_antisymmetric() {
        let a = [1.0, 2.0, 3.0, 4.5];
        let b = [0.5, 1.0, 1.5, 1.7, 2.2];
        let ab = welch(&a, &b).unwrap();
        let ba = welch(&b, &a).unwrap();
        assert!((ab.t + ba.t).abs() < 1e-12);
        assert!((ab.p_greater + ba.p_greater - 1.0).abs() < 1e-12);
    }
}
