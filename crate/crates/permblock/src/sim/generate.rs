//! Outcome generators for the simulation scenarios.
//!
//! Continuous: y = exp(Z + delta * 1[arm A]) + b_k, Z ~ N(0,1), institution
//! effect b_k ~ N(0, sd^2). A log-scale shift of delta = 0.5 makes the raw
//! group means differ by e - sqrt(e) ~ 1.07. Optional block effects add
//! (-1, -0.5, 0.5, 1) by block quartile.
//!
//! Binary: logit P(y=1) = logit(p_treat/p_control contrast) * 1[arm A] + b_k.
//!
//! Survival: exponential with mean mu_arm * c_k, mean ratio given by the
//! scenario, institution factor c_k from a chi-squared spec normalized to
//! mean 1, and independent uniform censoring on [0, tau] with tau calibrated
//! ahead of the run so that the overall censoring fraction hits its target.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::design::{randomize_trial, Outcome, TrialData};
use crate::error::{Error, Result};

use super::scenario::{InstitutionEffect, Scenario};

/// Institution arrival sequence: every institution contributes floor(n/K)
/// or ceil(n/K) patients, order a uniform random permutation.
pub fn assign_institutions<R: Rng + ?Sized>(
    n_total: usize,
    k: usize,
    rng: &mut R,
) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..n_total).map(|i| i % k).collect();
    // Fisher-Yates on the multiset
    for i in (1..labels.len()).rev() {
        let j = rng.gen_range(0..=i);
        labels.swap(i, j);
    }
    labels
}

fn block_effect(block: usize, num_blocks: usize) -> f64 {
    // quartile trend (-1, -0.5, 0.5, 1)
    const EFFECTS: [f64; 4] = [-1.0, -0.5, 0.5, 1.0];
    let q = (4 * block / num_blocks).min(3);
    EFFECTS[q]
}

fn institution_factors<R: Rng + ?Sized>(spec: InstitutionEffect, k: usize, rng: &mut R) -> Vec<f64> {
    match spec {
        InstitutionEffect::Normal { sd } => {
            (0..k).map(|_| sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)).collect()
        }
        InstitutionEffect::ChiSquared { df } => {
            // sum of df squared normals, normalized to mean 1
            (0..k)
                .map(|_| {
                    let mut s = 0.0;
                    for _ in 0..df {
                        let z: f64 = StandardNormal.sample(rng);
                        s += z * z;
                    }
                    s / df as f64
                })
                .collect()
        }
        InstitutionEffect::None => vec![0.0; k],
    }
}

/// Generate one replication of a continuous-outcome trial.
pub fn gen_continuous<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Result<TrialData> {
    let design = scenario.design()?;
    let labels = assign_institutions(scenario.n_total, scenario.num_institutions, rng);
    let b = institution_factors(scenario.institution_effect, scenario.num_institutions, rng);
    // placeholder outcomes; filled after arms are known
    let zero = vec![Outcome::Continuous(0.0); scenario.n_total];
    let mut data = randomize_trial(design, &labels, &zero, rng)?;
    let p = design.num_blocks();
    let n = design.block_size();
    for (idx, r) in data.records.iter_mut().enumerate() {
        let z: f64 = StandardNormal.sample(rng);
        let treated = r.arm == Some(crate::design::Arm::A);
        let mut y = (z + if treated { scenario.log_shift } else { 0.0 }).exp() + b[r.institution];
        if scenario.block_effects {
            y += block_effect(idx / n, p);
        }
        r.outcome = Outcome::Continuous(y);
    }
    Ok(data)
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn expit(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Generate one replication of a binary-outcome trial.
pub fn gen_binary<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Result<TrialData> {
    let design = scenario.design()?;
    let labels = assign_institutions(scenario.n_total, scenario.num_institutions, rng);
    let b = institution_factors(scenario.institution_effect, scenario.num_institutions, rng);
    let beta = logit(scenario.p_treatment) - logit(scenario.p_control);
    let intercept = logit(scenario.p_control);
    let zero = vec![Outcome::Binary(0); scenario.n_total];
    let mut data = randomize_trial(design, &labels, &zero, rng)?;
    for r in &mut data.records {
        let treated = r.arm == Some(crate::design::Arm::A);
        let eta = intercept + if treated { beta } else { 0.0 } + b[r.institution];
        let y = rng.gen::<f64>() < expit(eta);
        r.outcome = Outcome::Binary(y as u8);
    }
    Ok(data)
}

/// Generate one replication of a survival-outcome trial. `tau` is the
/// precalibrated uniform-censoring horizon from [`calibrate_censoring`].
pub fn gen_survival<R: Rng + ?Sized>(
    scenario: &Scenario,
    tau: f64,
    rng: &mut R,
) -> Result<TrialData> {
    let design = scenario.design()?;
    let labels = assign_institutions(scenario.n_total, scenario.num_institutions, rng);
    let c = institution_factors(scenario.institution_effect, scenario.num_institutions, rng);
    let zero = vec![Outcome::Survival { time: 1.0, event: false }; scenario.n_total];
    let mut data = randomize_trial(design, &labels, &zero, rng)?;
    for r in &mut data.records {
        let treated = r.arm == Some(crate::design::Arm::A);
        let mean = if treated { scenario.survival_mean_ratio } else { 1.0 } * c[r.institution].max(1e-12);
        let event_time = mean * <Exp1 as Distribution<f64>>::sample(&Exp1, rng);
        let censor_time = rng.gen::<f64>() * tau;
        let (time, event) = if event_time <= censor_time {
            (event_time, true)
        } else {
            (censor_time, false)
        };
        r.outcome = Outcome::Survival { time: time.max(1e-12), event };
    }
    Ok(data)
}

/// Find the uniform-censoring horizon hitting the target censoring
/// fraction, by bisection on a fixed Monte Carlo sample of event times.
pub fn calibrate_censoring<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Result<f64> {
    let target = scenario.censor_target;
    if target <= 0.0 {
        return Ok(f64::INFINITY);
    }
    if target >= 1.0 {
        return Err(Error::Config(format!("censoring target {target} must be < 1")));
    }
    const SAMPLE: usize = 200_000;
    let factors = institution_factors(scenario.institution_effect, SAMPLE, rng);
    let times: Vec<f64> = factors
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let mean = if i % 2 == 0 { scenario.survival_mean_ratio } else { 1.0 };
            mean * c.max(1e-12) * <Exp1 as Distribution<f64>>::sample(&Exp1, rng)
        })
        .collect();
    let uniforms: Vec<f64> = (0..SAMPLE).map(|_| rng.gen::<f64>()).collect();
    let censored_frac = |tau: f64| -> f64 {
        times
            .iter()
            .zip(&uniforms)
            .filter(|(&t, &u)| u * tau < t)
            .count() as f64
            / SAMPLE as f64
    };
    let (mut lo, mut hi) = (1e-9_f64, 1e12_f64);
    for _ in 0..200 {
        let tau = (lo * hi).sqrt();
        if censored_frac(tau) > target {
            lo = tau;
        } else {
            hi = tau;
        }
    }
    let tau = (lo * hi).sqrt();
    let realized = censored_frac(tau);
    if (realized - target).abs() > 0.005 {
        return Err(Error::Numeric(format!(
            "censoring calibration missed the target: {realized:.4} vs {target:.4}"
        )));
    }
    Ok(tau)
}

/// Generate a replication for any outcome kind.
pub fn generate<R: Rng + ?Sized>(
    scenario: &Scenario,
    tau: Option<f64>,
    rng: &mut R,
) -> Result<TrialData> {
    match scenario.outcome_kind {
        crate::design::OutcomeKind::Continuous => gen_continuous(scenario, rng),
        crate::design::OutcomeKind::Binary => gen_binary(scenario, rng),
        crate::design::OutcomeKind::Survival => {
            let tau = tau.ok_or_else(|| {
                Error::Config("survival generation needs a calibrated censoring horizon".into())
            })?;
            gen_survival(scenario, tau, rng)
        }
    }
}
