//! Conditional group-sequential monitoring: interim looks at information
//! fractions t_l = P_l / P_max compared against O'Brien-Fleming boundaries
//! C_l = c_final * sqrt(L / l).

use serde::{Deserialize, Serialize};

use crate::conditional::conditional_test_scored;
use crate::design::TrialData;
use crate::error::{Error, Result};
use crate::moments::{unconditional_test, TestResult};
use crate::scores::{compute_scores, ScoreKind};

/// Default final-look critical value: L = 4 equally spaced looks at
/// one-sided alpha 0.025.
pub const OBF_C_FINAL_L4: f64 = 2.024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sidedness {
    One,
    Two,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LookDecision {
    Reject,
    Continue,
    AcceptAtFinal,
}

/// Monitoring plan: which block counts trigger looks and the boundary at
/// each look.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GstPlan {
    pub look_blocks: Vec<usize>,
    pub boundaries: Vec<f64>,
    pub alpha: f64,
    pub sidedness: Sidedness,
}

/// One interim analysis outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GstLook {
    pub look: usize,
    pub information_fraction: f64,
    pub statistic: f64,
    pub boundary: f64,
    pub decision: LookDecision,
}

/// O'Brien-Fleming boundary at look l of L: c_final * sqrt(L / l).
pub fn obf_boundary(l: usize, total_looks: usize, c_final: f64) -> Result<f64> {
    if l == 0 || l > total_looks {
        return Err(Error::Config(format!(
            "look {l} out of range 1..={total_looks}"
        )));
    }
    if !(c_final > 0.0) {
        return Err(Error::Config(format!("c_final must be positive, got {c_final}")));
    }
    Ok(c_final * (total_looks as f64 / l as f64).sqrt())
}

impl GstPlan {
    /// Equally spaced looks over `p_max` blocks with O'Brien-Fleming
    /// boundaries.
    pub fn obrien_fleming(
        num_looks: usize,
        p_max: usize,
        c_final: f64,
        alpha: f64,
        sidedness: Sidedness,
    ) -> Result<GstPlan> {
        if num_looks == 0 {
            return Err(Error::Config("need at least one look".into()));
        }
        if p_max < num_looks {
            return Err(Error::Config(format!(
                "{p_max} blocks cannot support {num_looks} looks"
            )));
        }
        let look_blocks: Vec<usize> =
            (1..=num_looks).map(|l| p_max * l / num_looks).collect();
        let boundaries = (1..=num_looks)
            .map(|l| obf_boundary(l, num_looks, c_final))
            .collect::<Result<Vec<_>>>()?;
        GstPlan::new(look_blocks, boundaries, alpha, sidedness)
    }

    pub fn new(
        look_blocks: Vec<usize>,
        boundaries: Vec<f64>,
        alpha: f64,
        sidedness: Sidedness,
    ) -> Result<GstPlan> {
        if look_blocks.is_empty() || look_blocks.len() != boundaries.len() {
            return Err(Error::Config(
                "look schedule and boundaries must be non-empty and equal length".into(),
            ));
        }
        if look_blocks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("look blocks must be strictly increasing".into()));
        }
        if boundaries.iter().any(|&c| !(c > 0.0)) {
            return Err(Error::Config("boundaries must be positive".into()));
        }
        if boundaries.windows(2).any(|w| w[0] < w[1] - 1e-12) {
            return Err(Error::Config("boundaries must be non-increasing".into()));
        }
        Ok(GstPlan { look_blocks, boundaries, alpha, sidedness })
    }

    pub fn num_looks(&self) -> usize {
        self.look_blocks.len()
    }

    pub fn p_max(&self) -> usize {
        *self.look_blocks.last().unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GstMode {
    Conditional,
    Unconditional,
}

fn look_statistic(data: &TrialData, kind: ScoreKind, mode: GstMode) -> Result<TestResult> {
    let scores = compute_scores(data, kind)?;
    match mode {
        GstMode::Conditional => conditional_test_scored(data, &scores),
        GstMode::Unconditional => unconditional_test(data, &scores),
    }
}

/// Run the interim analysis at look `l` (1-based) on cumulative data that
/// must contain exactly P_l complete blocks. The statistic conditions on
/// the counts accumulated through the data included in the look.
pub fn interim_test(
    cumulative: &TrialData,
    plan: &GstPlan,
    l: usize,
    kind: ScoreKind,
    mode: GstMode,
) -> Result<GstLook> {
    if l == 0 || l > plan.num_looks() {
        return Err(Error::Config(format!("look {l} out of range")));
    }
    let p_l = plan.look_blocks[l - 1];
    if cumulative.design.num_blocks() != p_l {
        return Err(Error::InvalidData(format!(
            "look {l} expects {p_l} blocks, data has {}",
            cumulative.design.num_blocks()
        )));
    }
    let t = look_statistic(cumulative, kind, mode)?;
    let boundary = plan.boundaries[l - 1];
    let crossed = match plan.sidedness {
        Sidedness::One => t.z > boundary,
        Sidedness::Two => t.z.abs() > boundary,
    };
    let decision = if crossed {
        LookDecision::Reject
    } else if l == plan.num_looks() {
        LookDecision::AcceptAtFinal
    } else {
        LookDecision::Continue
    };
    Ok(GstLook {
        look: l,
        information_fraction: p_l as f64 / plan.p_max() as f64,
        statistic: t.z,
        boundary,
        decision,
    })
}

/// Monitor a full trial: test at each planned look on the data prefix,
/// stopping at the first rejection.
pub fn run_sequential(
    data: &TrialData,
    plan: &GstPlan,
    kind: ScoreKind,
    mode: GstMode,
) -> Result<Vec<GstLook>> {
    if data.design.num_blocks() < plan.p_max() {
        return Err(Error::InvalidData(format!(
            "trial has {} blocks but the plan needs {}",
            data.design.num_blocks(),
            plan.p_max()
        )));
    }
    let mut looks = Vec::with_capacity(plan.num_looks());
    for l in 1..=plan.num_looks() {
        let prefix = data.prefix(plan.look_blocks[l - 1])?;
        let look = interim_test(&prefix, plan, l, kind, mode)?;
        let stop = look.decision == LookDecision::Reject;
        looks.push(look);
        if stop {
            break;
        }
    }
    Ok(looks)
}

/// True if the procedure rejected at any look.
pub fn rejected(looks: &[GstLook]) -> bool {
    looks.iter().any(|l| l.decision == LookDecision::Reject)
}
