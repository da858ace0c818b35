use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampleSummary {
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator).
    pub std: f64,
    pub n: usize,
}

pub fn summarize(xs: &[f64]) -> SampleSummary {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    SampleSummary {
        mean,
        std: var.sqrt(),
        n,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TTest {
    pub a: SampleSummary,
    pub b: SampleSummary,
    pub t: f64,
    pub df: f64,
    /// Two-tailed.
    pub p: f64,
}

impl TTest {
    /// `**` for p < 0.01, `*` for p < 0.05.
    pub fn stars(&self) -> &'static str {
        if self.p < 0.01 {
            "**"
        } else if self.p < 0.05 {
            "*"
        } else {
            ""
        }
    }
}

/// Welch's unequal-variance two-tailed t-test of `a` against `b`.
///
/// With both variances zero, equal means give `p = 1` and unequal means
/// `p = 0`.
pub fn welch_ttest(a: &[f64], b: &[f64]) -> TTest {
    assert!(
        a.len() >= 2 && b.len() >= 2,
        "each sample needs at least two values"
    );
    let (sa, sb) = (summarize(a), summarize(b));
    let va = sa.std * sa.std / sa.n as f64;
    let vb = sb.std * sb.std / sb.n as f64;
    let se2 = va + vb;
    if se2 == 0.0 {
        let (t, p) = if sa.mean == sb.mean {
            (0.0, 1.0)
        } else {
            ((sa.mean - sb.mean).signum() * f64::INFINITY, 0.0)
        };
        return TTest {
            a: sa,
            b: sb,
            t,
            df: (sa.n + sb.n - 2) as f64,
            p,
        };
    }
    let t = (sa.mean - sb.mean) / se2.sqrt();
    let df = se2 * se2 / (va * va / (sa.n - 1) as f64 + vb * vb / (sb.n - 1) as f64);
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    let p = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    TTest {
        a: sa,
        b: sb,
        t,
        df,
        p,
    }
}
