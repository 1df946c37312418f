//! Trend statistics: Pearson correlation with a two-tailed Student-t
//! p-value, and monotonicity diagnostics for error curves.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::network::CheckpointRecord;

const LENTZ_MAX_ITER: usize = 200;
const LENTZ_EPS: f64 = 1e-15;
const LENTZ_TINY: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationResult {
    pub r: f64,
    pub p_two_tailed: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesDiagnostics {
    pub is_monotone_nonincreasing: bool,
    /// Largest rise above the running minimum.
    pub overfit_rebound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pairing {
    /// One (mean error, mean layer-2 crest) pair per over-sampling factor.
    #[default]
    PerModelAverage,
    /// One pair per (factor, checkpoint) record.
    PerCheckpoint,
}

impl fmt::Display for Pairing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pairing::PerModelAverage => "per-model-average",
            Pairing::PerCheckpoint => "per-checkpoint",
        })
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!(
            "series lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::DegenerateInput(
            "correlation needs at least 2 points".into(),
        ));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateInput("series has zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Lanczos approximation (g = 7, 9 terms) of ln Γ(x) for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
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

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> Result<f64> {
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let guard = |v: f64| if v.abs() < LENTZ_TINY { LENTZ_TINY } else { v };
    let mut c = 1.0;
    let mut d = 1.0 / guard(1.0 - qab * x / qap);
    let mut h = d;
    for m in 1..=LENTZ_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let even = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 / guard(1.0 + even * d);
        c = guard(1.0 + even / c);
        h *= d * c;
        let odd = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 / guard(1.0 + odd * d);
        c = guard(1.0 + odd / c);
        let step = d * c;
        h *= step;
        if (step - 1.0).abs() < LENTZ_EPS {
            return Ok(h);
        }
    }
    Err(Error::Numerics(format!(
        "incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})"
    )))
}

/// Regularized incomplete beta function I_x(a, b).
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) || !(0.0..=1.0).contains(&x) {
        return Err(Error::Numerics(format!(
            "incomplete beta outside domain (a={a}, b={b}, x={x})"
        )));
    }
    if x == 0.0 || x == 1.0 {
        return Ok(x);
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        Ok(front * beta_continued_fraction(a, b, x)? / a)
    } else {
        Ok(1.0 - front * beta_continued_fraction(b, a, 1.0 - x)? / b)
    }
}

/// CDF of Student's t with `df` degrees of freedom.
pub fn student_t_cdf(t: f64, df: f64) -> Result<f64> {
    let tail = 0.5 * regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))?;
    Ok(if t >= 0.0 { 1.0 - tail } else { tail })
}

/// Two-tailed significance of a sample correlation `r` over `n` pairs.
pub fn p_value_two_tailed(r: f64, n: usize) -> Result<f64> {
    if n < 3 {
        return Err(Error::DegenerateInput(format!(
            "p-value needs n >= 3, got {n}"
        )));
    }
    if r.is_nan() {
        return Err(Error::DegenerateInput("correlation is NaN".into()));
    }
    if r.abs() >= 1.0 {
        return Ok(0.0);
    }
    let df = (n - 2) as f64;
    let t = r * (df / (1.0 - r * r)).sqrt();
    let p = 2.0 * (1.0 - student_t_cdf(t.abs(), df)?);
    Ok(p.clamp(0.0, 1.0))
}

pub fn correlation(x: &[f64], y: &[f64]) -> Result<CorrelationResult> {
    let r = pearson_r(x, y)?;
    Ok(CorrelationResult {
        r,
        p_two_tailed: p_value_two_tailed(r, x.len())?,
        n: x.len(),
    })
}

pub fn series_diagnostics(series: &[f64]) -> SeriesDiagnostics {
    let is_monotone_nonincreasing = series.windows(2).all(|w| w[1] <= w[0]);
    let mut running_min = f64::INFINITY;
    let mut rebound: f64 = 0.0;
    for &v in series {
        running_min = running_min.min(v);
        rebound = rebound.max(v - running_min);
    }
    SeriesDiagnostics {
        is_monotone_nonincreasing,
        overfit_rebound: rebound,
    }
}

/// Correlates test error with mean layer-2 crest factor across records.
pub fn correlate_error_vs_crest(
    records: &[CheckpointRecord],
    pairing: Pairing,
) -> Result<CorrelationResult> {
    let (errors, crests): (Vec<f64>, Vec<f64>) = match pairing {
        Pairing::PerCheckpoint => records
            .iter()
            .map(|r| (r.test_error, r.mean_crest_db_per_layer[1]))
            .unzip(),
        Pairing::PerModelAverage => {
            let mut by_model: BTreeMap<usize, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
            for r in records {
                let entry = by_model.entry(r.oversample_factor).or_default();
                entry.0.push(r.test_error);
                entry.1.push(r.mean_crest_db_per_layer[1]);
            }
            by_model.values().map(|(e, c)| (mean(e), mean(c))).unzip()
        }
    };
    if errors.len() < 3 {
        return Err(Error::DegenerateInput(format!(
            "{} {pairing} pairs; at least 3 are needed",
            errors.len()
        )));
    }
    correlation(&errors, &crests)
}
