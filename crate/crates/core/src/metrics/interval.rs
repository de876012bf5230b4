//! Student's t confidence intervals.
//!
//! The t quantile is found by bisection on the CDF, which is expressed
//! through the regularized incomplete beta function.

use serde::{Deserialize, Serialize};

use super::MetricsError;

pub const DEFAULT_LEVEL: f64 = 0.95;

/// Mean with a symmetric confidence half-width, one row of a results table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub half_width: f64,
    pub n: usize,
    pub level: f64,
    /// Set when `n == 1`: the half-width is undefined and reported as 0.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub point_estimate_only: bool,
}

fn ln_gamma(x: f64) -> f64 {
    // Lanczos, g = 7, n = 9
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let t = x + 7.5;
    let series = COEF[1..]
        .iter()
        .enumerate()
        .fold(COEF[0], |acc, (i, c)| acc + c / (x + i as f64 + 1.0));
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + series.ln()
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=300 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-15 {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// CDF of Student's t with `df` degrees of freedom.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    let tail = 0.5 * regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Inverse CDF of Student's t by bisection, `p` in (0, 1).
pub fn student_t_quantile(p: f64, df: f64) -> f64 {
    if p == 0.5 {
        return 0.0;
    }
    if p < 0.5 {
        return -student_t_quantile(1.0 - p, df);
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while student_t_cdf(hi, df) < p {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if student_t_cdf(mid, df) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 * hi.max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

fn mean_and_sd(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 || samples.iter().all(|&x| x == samples[0]) {
        return (mean, 0.0);
    }
    let ss: f64 = samples.iter().map(|x| (x - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// `mean ± t_{(1+level)/2, n-1} · s / √n` with `s` the sample standard
/// deviation.
pub fn t_confidence_interval(samples: &[f64], level: f64) -> Result<MetricSummary, MetricsError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(MetricsError::InvalidLevel(level));
    }
    if samples.len() < 2 {
        return Err(MetricsError::TooFewSamples(samples.len()));
    }
    let n = samples.len();
    let (mean, sd) = mean_and_sd(samples);
    let half_width = if sd == 0.0 {
        0.0
    } else {
        let t = student_t_quantile((1.0 + level) / 2.0, (n - 1) as f64);
        t * sd / (n as f64).sqrt()
    };
    Ok(MetricSummary {
        mean,
        half_width,
        n,
        level,
        point_estimate_only: false,
    })
}

/// Like [`t_confidence_interval`] but tolerates a single sample (flagged
/// point estimate). Returns `None` for no samples.
pub fn summarize(samples: &[f64], level: f64) -> Option<MetricSummary> {
    match samples.len() {
        0 => None,
        1 => Some(MetricSummary {
            mean: samples[0],
            half_width: 0.0,
            n: 1,
            level,
            point_estimate_only: true,
        }),
        _ => t_confidence_interval(samples, level).ok(),
    }
}
