use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::classify::{classify_metrics, DecisionRule, MetricKind};
use crate::error::{Error, Result};

pub const BOOTSTRAP_RESAMPLES: usize = 10_000;

/// Linear-interpolated percentile of sorted data, `q` in [0, 100].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

fn percentile_interval(mut stats: Vec<f64>) -> (f64, f64) {
    stats.sort_by(f64::total_cmp);
    (percentile(&stats, 2.5), percentile(&stats, 97.5))
}

/// 95% percentile bootstrap interval for `metric`, resampling rows with
/// replacement.
pub fn bootstrap_ci<R: Rng + ?Sized>(
    scores: &[f64],
    truth: &[bool],
    rule: DecisionRule<'_>,
    metric: MetricKind,
    resamples: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let n = scores.len();
    if n == 0 || truth.len() != n {
        return Err(Error::Dimension(format!(
            "bootstrap over {n} scores and {} labels",
            truth.len()
        )));
    }
    if resamples == 0 {
        return Err(Error::Config(
            "bootstrap needs at least one resample".into(),
        ));
    }
    let mut s = vec![0.0; n];
    let mut y = vec![false; n];
    let mut d = vec![false; n];
    let mut out = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        for k in 0..n {
            let i = rng.random_range(0..n);
            s[k] = scores[i];
            y[k] = truth[i];
            if let DecisionRule::Given(g) = rule {
                d[k] = g[i];
            }
        }
        let r = match rule {
            DecisionRule::Threshold(t) => DecisionRule::Threshold(t),
            DecisionRule::Given(_) => DecisionRule::Given(&d),
        };
        out.push(classify_metrics(&s, &y, r)?.get(metric));
    }
    Ok(percentile_interval(out))
}

/// 95% percentile bootstrap interval of the mean of `values`.
pub fn bootstrap_mean_ci<R: Rng + ?Sized>(
    values: &[f64],
    resamples: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let n = values.len();
    if n == 0 || resamples == 0 {
        return Err(Error::Config(
            "bootstrap of the mean needs values and resamples".into(),
        ));
    }
    let out = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    Ok(percentile_interval(out))
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (n − 1); 0 for fewer than two values.
pub fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    Welch,
    Paired,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatReport {
    pub test: TestKind,
    pub n_a: usize,
    pub n_b: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    pub sd_a: f64,
    pub sd_b: f64,
    /// mean(a) − mean(b).
    pub delta: f64,
    pub t: f64,
    pub dof: f64,
    /// Two-sided.
    pub p_value: f64,
    pub cohens_d: f64,
    /// Zero variance: t and d are infinite (or 0 when delta is 0).
    pub degenerate: bool,
}

fn two_sided_p(t: f64, dof: f64) -> Result<f64> {
    if t.is_infinite() {
        return Ok(f64::MIN_POSITIVE);
    }
    let dist = StudentsT::new(0.0, 1.0, dof)
        .map_err(|e| Error::Numeric(format!("student t with {dof} dof: {e}")))?;
    Ok((2.0 * (1.0 - dist.cdf(t.abs()))).clamp(f64::MIN_POSITIVE, 1.0))
}

/// `x / s` with the zero-variance cases made explicit.
fn safe_ratio(x: f64, s: f64) -> f64 {
    if s > 0.0 {
        x / s
    } else if x == 0.0 {
        0.0
    } else {
        x.signum() * f64::INFINITY
    }
}

/// Welch's unequal-variance t-test. Cohen's d uses the root mean of the
/// two sample variances.
pub fn welch_t(a: &[f64], b: &[f64]) -> Result<StatReport> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Config(format!(
            "welch test needs two values per side, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let (sa, sb) = (sample_sd(a), sample_sd(b));
    let (va, vb) = (sa * sa / na, sb * sb / nb);
    let se = (va + vb).sqrt();
    let delta = ma - mb;
    let t = safe_ratio(delta, se);
    let dof = if se > 0.0 {
        (va + vb).powi(2) / (va * va / (na - 1.0) + vb * vb / (nb - 1.0))
    } else {
        na + nb - 2.0
    };
    let p = if t == 0.0 { 1.0 } else { two_sided_p(t, dof)? };
    Ok(StatReport {
        test: TestKind::Welch,
        n_a: a.len(),
        n_b: b.len(),
        mean_a: ma,
        mean_b: mb,
        sd_a: sa,
        sd_b: sb,
        delta,
        t,
        dof,
        p_value: p,
        cohens_d: safe_ratio(delta, ((sa * sa + sb * sb) / 2.0).sqrt()),
        degenerate: se == 0.0,
    })
}

/// Paired t-test on per-seed differences. Cohen's d is mean difference
/// over the standard deviation of the differences.
pub fn paired_t(a: &[f64], b: &[f64]) -> Result<StatReport> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "paired test over {} and {} values",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::Config("paired test needs at least two pairs".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = diffs.len() as f64;
    let md = mean(&diffs);
    let sd = sample_sd(&diffs);
    let t = safe_ratio(md, sd / n.sqrt());
    let dof = n - 1.0;
    let p = if t == 0.0 { 1.0 } else { two_sided_p(t, dof)? };
    Ok(StatReport {
        test: TestKind::Paired,
        n_a: a.len(),
        n_b: b.len(),
        mean_a: mean(a),
        mean_b: mean(b),
        sd_a: sample_sd(a),
        sd_b: sample_sd(b),
        delta: md,
        t,
        dof,
        p_value: p,
        cohens_d: safe_ratio(md, sd),
        degenerate: sd == 0.0,
    })
}
