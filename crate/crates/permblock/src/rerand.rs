//! Percentile confidence interval for the ratio of two mortality rates by
//! rerandomizing the ordered observations between arms.
//!
//! Walking the pooled observations in time order, a death is assigned to
//! arm 1 with probability p*n1/(p*n1 + n2) and a censored observation with
//! probability n1/(n1 + n2), decrementing the assigned arm's at-risk count;
//! p is the observed mortality-rate ratio. Each realization yields one
//! simulated ratio; the interval is the percentile band of those ratios.

use rand::Rng;
use serde::Serialize;

use crate::design::{Arm, Outcome, TrialData};
use crate::error::{Error, Result};

/// Deaths, follow-up and mortality rates per arm, and their ratio.
#[derive(Debug, Clone, Serialize)]
pub struct MortalitySummary {
    pub deaths_1: u64,
    pub deaths_2: u64,
    pub followup_1: f64,
    pub followup_2: f64,
    pub rate_1: f64,
    pub rate_2: f64,
    pub ratio: f64,
}

/// Pooled observations sorted by time, plus original arm sizes.
#[derive(Debug, Clone)]
pub struct PooledSurvival {
    /// (time, event) ascending by time.
    pub observations: Vec<(f64, bool)>,
    pub n1: usize,
    pub n2: usize,
}

fn survival_obs(data: &TrialData) -> Result<Vec<(f64, bool, Arm)>> {
    data.records
        .iter()
        .map(|r| {
            let arm = r
                .arm
                .ok_or_else(|| Error::InvalidData("unassigned arm".into()))?;
            match r.outcome {
                Outcome::Survival { time, event } if time > 0.0 => Ok((time, event, arm)),
                Outcome::Survival { time, .. } => Err(Error::InvalidData(format!(
                    "nonpositive survival time {time}"
                ))),
                other => Err(Error::InvalidData(format!(
                    "mortality ratio needs survival outcomes, got {}",
                    other.kind()
                ))),
            }
        })
        .collect()
}

/// Observed mortality summary; arm A is "treatment 1".
pub fn mortality_ratio(data: &TrialData) -> Result<MortalitySummary> {
    let obs = survival_obs(data)?;
    let mut deaths = [0u64; 2];
    let mut followup = [0.0f64; 2];
    for (t, e, arm) in &obs {
        let g = if *arm == Arm::A { 0 } else { 1 };
        deaths[g] += *e as u64;
        followup[g] += t;
    }
    if followup[0] <= 0.0 || followup[1] <= 0.0 {
        return Err(Error::InvalidData("both arms need positive follow-up".into()));
    }
    if deaths[1] == 0 {
        return Err(Error::InvalidData(
            "no deaths on arm 2: mortality ratio undefined".into(),
        ));
    }
    let rate_1 = deaths[0] as f64 / followup[0];
    let rate_2 = deaths[1] as f64 / followup[1];
    Ok(MortalitySummary {
        deaths_1: deaths[0],
        deaths_2: deaths[1],
        followup_1: followup[0],
        followup_2: followup[1],
        rate_1,
        rate_2,
        ratio: rate_1 / rate_2,
    })
}

/// Pool a survival trial for rerandomization.
pub fn pool(data: &TrialData) -> Result<PooledSurvival> {
    let obs = survival_obs(data)?;
    let n1 = obs.iter().filter(|(_, _, a)| *a == Arm::A).count();
    let n2 = obs.len() - n1;
    let mut observations: Vec<(f64, bool)> = obs.into_iter().map(|(t, e, _)| (t, e)).collect();
    observations.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    Ok(PooledSurvival { observations, n1, n2 })
}

/// One rerandomization pass: returns the simulated mortality ratio, or None
/// for a degenerate realization (no deaths or no follow-up on an arm).
pub fn rerandomize_once<R: Rng + ?Sized>(
    pooled: &PooledSurvival,
    ratio: f64,
    rng: &mut R,
) -> Option<f64> {
    let mut n = [pooled.n1 as f64, pooled.n2 as f64];
    let mut deaths = [0u64; 2];
    let mut followup = [0.0f64; 2];
    for &(t, e) in &pooled.observations {
        let p1 = if e {
            ratio * n[0] / (ratio * n[0] + n[1])
        } else {
            n[0] / (n[0] + n[1])
        };
        let g = if rng.gen::<f64>() < p1 { 0 } else { 1 };
        n[g] -= 1.0;
        deaths[g] += e as u64;
        followup[g] += t;
    }
    if deaths[0] == 0 || deaths[1] == 0 || followup[0] <= 0.0 || followup[1] <= 0.0 {
        return None;
    }
    Some((deaths[0] as f64 / followup[0]) / (deaths[1] as f64 / followup[1]))
}

/// Rerandomization confidence interval for the mortality-rate ratio.
#[derive(Debug, Clone, Serialize)]
pub struct RatioInterval {
    pub low: f64,
    pub high: f64,
    pub level: f64,
    pub reps: usize,
    pub discarded: usize,
    /// Set when more than 5% of realizations were degenerate.
    pub discard_warning: bool,
    pub summary: MortalitySummary,
}

pub fn confidence_interval<R: Rng + ?Sized>(
    data: &TrialData,
    reps: usize,
    level: f64,
    rng: &mut R,
) -> Result<RatioInterval> {
    if reps < 100 {
        return Err(Error::Config(format!("need at least 100 reps, got {reps}")));
    }
    if !(0.0 < level && level < 1.0) {
        return Err(Error::Config(format!("level must be in (0,1), got {level}")));
    }
    let summary = mortality_ratio(data)?;
    let pooled = pool(data)?;
    let mut ratios = Vec::with_capacity(reps);
    let mut discarded = 0usize;
    for _ in 0..reps {
        match rerandomize_once(&pooled, summary.ratio, rng) {
            Some(r) => ratios.push(r),
            None => discarded += 1,
        }
    }
    if ratios.is_empty() {
        return Err(Error::Numeric("all rerandomizations were degenerate".into()));
    }
    ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let (low, high) = percentile_interval(&ratios, level);
    Ok(RatioInterval {
        low,
        high,
        level,
        reps,
        discarded,
        discard_warning: (discarded as f64) > 0.05 * reps as f64,
        summary,
    })
}

/// Seeded variant with one RNG stream per realization, so the interval is
/// identical for any worker count.
pub fn confidence_interval_seeded(
    data: &TrialData,
    reps: usize,
    level: f64,
    master_seed: u64,
    workers: usize,
) -> Result<RatioInterval> {
    use rayon::prelude::*;
    if reps < 100 {
        return Err(Error::Config(format!("need at least 100 reps, got {reps}")));
    }
    if !(0.0 < level && level < 1.0) {
        return Err(Error::Config(format!("level must be in (0,1), got {level}")));
    }
    if workers == 0 {
        return Err(Error::Config("worker count must be >= 1".into()));
    }
    let summary = mortality_ratio(data)?;
    let pooled = pool(data)?;
    let pool_ = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let draws: Vec<Option<f64>> = pool_.install(|| {
        (0..reps as u64)
            .into_par_iter()
            .map(|rep| {
                let mut rng = crate::sim::rng::stream_rng(&[master_seed, 0xC1, rep]);
                rerandomize_once(&pooled, summary.ratio, &mut rng)
            })
            .collect()
    });
    let mut ratios: Vec<f64> = draws.iter().filter_map(|r| *r).collect();
    let discarded = reps - ratios.len();
    if ratios.is_empty() {
        return Err(Error::Numeric("all rerandomizations were degenerate".into()));
    }
    ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let (low, high) = percentile_interval(&ratios, level);
    Ok(RatioInterval {
        low,
        high,
        level,
        reps,
        discarded,
        discard_warning: (discarded as f64) > 0.05 * reps as f64,
        summary,
    })
}

/// Empirical percentile interval on a sorted sample.
fn percentile_interval(sorted: &[f64], level: f64) -> (f64, f64) {
    (quantile(sorted, (1.0 - level) / 2.0), quantile(sorted, (1.0 + level) / 2.0))
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}
