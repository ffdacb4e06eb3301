//! Scenario definitions for the power studies.

use serde::Serialize;

use crate::design::{OutcomeKind, TrialDesign};
use crate::error::{Error, Result};
use crate::scores::ScoreKind;

/// Institution-effect specification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum InstitutionEffect {
    /// Additive N(0, sd^2) shift (continuous outcome) or logit shift
    /// (binary outcome).
    Normal { sd: f64 },
    /// Multiplicative chi-squared factor with `df` degrees of freedom,
    /// normalized to mean 1 (survival outcome).
    ChiSquared { df: u32 },
    None,
}

/// A single simulation scenario: design grid cell plus generator knobs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub outcome_kind: OutcomeKind,
    pub n_total: usize,
    pub num_institutions: usize,
    pub block_size: usize,
    pub block_effects: bool,
    /// Continuous: treatment shift on the log scale (0.5 gives a raw mean
    /// difference of e - sqrt(e) ~ 1.07).
    pub log_shift: f64,
    /// Binary success probabilities.
    pub p_control: f64,
    pub p_treatment: f64,
    /// Survival: ratio of mean survival times (treated / control).
    pub survival_mean_ratio: f64,
    pub institution_effect: InstitutionEffect,
    /// Overall censoring fraction target; 0 disables censoring.
    pub censor_target: f64,
    pub replications: usize,
    pub master_seed: u64,
    pub scenario_id: u64,
    /// Score used by the randomization tests (survival only choice).
    pub score_kind: ScoreKind,
}

impl Scenario {
    pub fn design(&self) -> Result<TrialDesign> {
        if self.n_total % self.block_size != 0 {
            return Err(Error::Config(format!(
                "n_total {} not divisible by block size {}",
                self.n_total, self.block_size
            )));
        }
        TrialDesign::new(
            self.block_size,
            self.n_total / self.block_size,
            self.num_institutions,
        )
    }

    /// Continuous-outcome scenario matching the first power table's
    /// generator: lognormal outcomes, institution sd 2, mean difference
    /// ~1.07.
    pub fn continuous_table1(
        n_total: usize,
        num_institutions: usize,
        block_size: usize,
        replications: usize,
        master_seed: u64,
    ) -> Scenario {
        Scenario {
            outcome_kind: OutcomeKind::Continuous,
            n_total,
            num_institutions,
            block_size,
            block_effects: false,
            log_shift: 0.5,
            p_control: 0.5,
            p_treatment: 0.7,
            survival_mean_ratio: 1.5,
            institution_effect: InstitutionEffect::Normal { sd: 2.0 },
            censor_target: 0.0,
            replications,
            master_seed,
            scenario_id: 1,
            score_kind: ScoreKind::Identity,
        }
    }

    /// Same with the quartile block trend enabled.
    pub fn continuous_table2(
        n_total: usize,
        num_institutions: usize,
        block_size: usize,
        replications: usize,
        master_seed: u64,
    ) -> Scenario {
        let mut s =
            Scenario::continuous_table1(n_total, num_institutions, block_size, replications, master_seed);
        s.block_effects = true;
        s.scenario_id = 2;
        s
    }

    /// Binary-outcome scenario: success probabilities 0.5 / 0.7, logit
    /// institution sd 1.73.
    pub fn binary_table3(
        n_total: usize,
        num_institutions: usize,
        block_size: usize,
        replications: usize,
        master_seed: u64,
    ) -> Scenario {
        Scenario {
            outcome_kind: OutcomeKind::Binary,
            n_total,
            num_institutions,
            block_size,
            block_effects: false,
            log_shift: 0.0,
            p_control: 0.5,
            p_treatment: 0.7,
            survival_mean_ratio: 1.5,
            institution_effect: InstitutionEffect::Normal { sd: 1.73 },
            censor_target: 0.0,
            replications,
            master_seed,
            scenario_id: 3,
            score_kind: ScoreKind::Binary,
        }
    }

    /// Survival scenario: exponential times with mean ratio 1.5,
    /// chi-squared(1) institution factor, 19% censoring.
    pub fn survival_table4(
        n_total: usize,
        num_institutions: usize,
        block_size: usize,
        replications: usize,
        master_seed: u64,
    ) -> Scenario {
        Scenario {
            outcome_kind: OutcomeKind::Survival,
            n_total,
            num_institutions,
            block_size,
            block_effects: false,
            log_shift: 0.0,
            p_control: 0.5,
            p_treatment: 0.7,
            survival_mean_ratio: 1.5,
            institution_effect: InstitutionEffect::ChiSquared { df: 1 },
            censor_target: 0.19,
            replications,
            master_seed,
            scenario_id: 4,
            score_kind: ScoreKind::Gehan,
        }
    }

    /// Group-sequential variants: 240 patients, institution effects per
    /// outcome kind, censoring target 18.5% for survival with a
    /// chi-squared(4) factor.
    pub fn gst(
        outcome_kind: OutcomeKind,
        num_institutions: usize,
        block_size: usize,
        replications: usize,
        master_seed: u64,
    ) -> Scenario {
        let base = match outcome_kind {
            OutcomeKind::Continuous => {
                Scenario::continuous_table1(240, num_institutions, block_size, replications, master_seed)
            }
            OutcomeKind::Binary => {
                Scenario::binary_table3(240, num_institutions, block_size, replications, master_seed)
            }
            OutcomeKind::Survival => {
                let mut s = Scenario::survival_table4(
                    240,
                    num_institutions,
                    block_size,
                    replications,
                    master_seed,
                );
                s.institution_effect = InstitutionEffect::ChiSquared { df: 4 };
                s.censor_target = 0.185;
                s.score_kind = ScoreKind::Logrank;
                s
            }
        };
        Scenario { scenario_id: 5, ..base }
    }

    /// Null version: no treatment effect, everything else unchanged.
    pub fn null(&self) -> Scenario {
        let mut s = self.clone();
        s.log_shift = 0.0;
        s.p_treatment = s.p_control;
        s.survival_mean_ratio = 1.0;
        s.scenario_id = self.scenario_id | 0x8000_0000;
        s
    }
}
