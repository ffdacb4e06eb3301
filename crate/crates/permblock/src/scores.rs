//! Per-patient scores feeding the randomization statistics.
//!
//! Continuous outcomes are used directly; binary outcomes enter as 0/1;
//! survival outcomes are replaced with logrank or Gehan scores computed
//! within each block (risk sets never cross blocks), so the survival
//! scores sum to zero per block.

use serde::{Deserialize, Serialize};

use crate::design::{Outcome, TrialData};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScoreKind {
    Identity,
    Binary,
    Logrank,
    Gehan,
}

impl std::fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ScoreKind::Identity => "identity",
            ScoreKind::Binary => "binary",
            ScoreKind::Logrank => "logrank",
            ScoreKind::Gehan => "gehan",
        };
        write!(f, "{s}")
    }
}

/// Per-block score vectors, same shape as the blocks they were computed
/// from.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub per_block: Vec<Vec<f64>>,
    pub kind: ScoreKind,
}

impl ScoreVector {
    pub fn flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.per_block.iter().flatten().copied()
    }
}

/// Identity scores for a block of continuous outcomes.
pub fn identity_scores(block: &[Outcome]) -> Result<Vec<f64>> {
    block
        .iter()
        .map(|o| match o {
            Outcome::Continuous(v) => Ok(*v),
            other => Err(Error::InvalidData(format!(
                "identity scores need continuous outcomes, got {}",
                other.kind()
            ))),
        })
        .collect()
}

/// 0/1 scores for a block of binary outcomes.
pub fn binary_scores(block: &[Outcome]) -> Result<Vec<f64>> {
    block
        .iter()
        .map(|o| match o {
            Outcome::Binary(v) if *v <= 1 => Ok(*v as f64),
            Outcome::Binary(v) => {
                Err(Error::InvalidData(format!("binary outcome {v} not in {{0,1}}")))
            }
            other => Err(Error::InvalidData(format!(
                "binary scores need binary outcomes, got {}",
                other.kind()
            ))),
        })
        .collect()
}

fn survival_block(block: &[Outcome]) -> Result<Vec<(f64, bool)>> {
    if block.is_empty() {
        return Err(Error::InvalidData("empty block".into()));
    }
    block
        .iter()
        .map(|o| match o {
            Outcome::Survival { time, event } if *time > 0.0 => Ok((*time, *event)),
            Outcome::Survival { time, .. } => {
                Err(Error::InvalidData(format!("nonpositive survival time {time}")))
            }
            other => Err(Error::InvalidData(format!(
                "survival scores need survival outcomes, got {}",
                other.kind()
            ))),
        })
        .collect()
}

/// Logrank score for each patient in one block: event indicator minus the
/// Nelson-Aalen cumulative hazard at the patient's time, all within-block.
/// A censoring tied with a death counts as occurring after the death, so it
/// stays in the risk set at that time and picks up that death's hazard term.
pub fn logrank_scores(block: &[Outcome]) -> Result<Vec<f64>> {
    let obs = survival_block(block)?;
    // distinct death times, ascending
    let mut death_times: Vec<f64> = obs.iter().filter(|(_, e)| *e).map(|(t, _)| *t).collect();
    death_times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    death_times.dedup();
    let terms: Vec<(f64, f64)> = death_times
        .iter()
        .map(|&tm| {
            let d = obs.iter().filter(|(t, e)| *e && *t == tm).count() as f64;
            let at_risk = obs.iter().filter(|(t, _)| *t >= tm).count() as f64;
            (tm, d / at_risk)
        })
        .collect();
    let scores = obs
        .iter()
        .map(|&(t, e)| {
            let hazard: f64 = terms.iter().filter(|(tm, _)| *tm <= t).map(|(_, h)| h).sum();
            (if e { 1.0 } else { 0.0 }) - hazard
        })
        .collect();
    Ok(scores)
}

/// Gehan score for each patient in one block: (# block patients the patient
/// definitely outlives) minus (# that definitely outlive the patient).
/// "i definitely outlives r" requires r's death at a time strictly before
/// t_i, or at t_i with i censored (death-before-censoring tie rule).
pub fn gehan_scores(block: &[Outcome]) -> Result<Vec<f64>> {
    let obs = survival_block(block)?;
    let n = obs.len();
    let outlives = |i: usize, r: usize| -> bool {
        let (ti, ei) = obs[i];
        let (tr, er) = obs[r];
        er && (tr < ti || (tr == ti && !ei))
    };
    let scores = (0..n)
        .map(|i| {
            let mut s = 0i64;
            for r in 0..n {
                if r == i {
                    continue;
                }
                if outlives(i, r) {
                    s += 1;
                }
                if outlives(r, i) {
                    s -= 1;
                }
            }
            s as f64
        })
        .collect();
    Ok(scores)
}

/// Compute scores for every block of a trial.
pub fn compute_scores(data: &TrialData, kind: ScoreKind) -> Result<ScoreVector> {
    let per_block = data
        .blocks()
        .map(|block| {
            let outcomes: Vec<Outcome> = block.iter().map(|r| r.outcome).collect();
            match kind {
                ScoreKind::Identity => identity_scores(&outcomes),
                ScoreKind::Binary => binary_scores(&outcomes),
                ScoreKind::Logrank => logrank_scores(&outcomes),
                ScoreKind::Gehan => gehan_scores(&outcomes),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoreVector { per_block, kind })
}

/// Default score kind for an outcome kind.
pub fn default_score_kind(kind: crate::design::OutcomeKind) -> ScoreKind {
    match kind {
        crate::design::OutcomeKind::Continuous => ScoreKind::Identity,
        crate::design::OutcomeKind::Binary => ScoreKind::Binary,
        crate::design::OutcomeKind::Survival => ScoreKind::Logrank,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn surv(times: &[f64], events: &[bool]) -> Vec<Outcome> {
        times
            .iter()
            .zip(events)
            .map(|(&t, &e)| Outcome::Survival { time: t, event: e })
            .collect()
    }

    #[test]
    fn identity_passes_values_through() {
        let block = [Outcome::Continuous(1.0), Outcome::Continuous(2.0)];
        assert_eq!(identity_scores(&block).unwrap(), vec![1.0, 2.0]);
        let zeros = [Outcome::Continuous(0.0); 4];
        assert_eq!(identity_scores(&zeros).unwrap(), vec![0.0; 4]);
        assert!(identity_scores(&[Outcome::Binary(1)]).is_err());
    }

    #[test]
    fn binary_passes_values_through() {
        let block = [Outcome::Binary(1), Outcome::Binary(0), Outcome::Binary(1), Outcome::Binary(0)];
        assert_eq!(binary_scores(&block).unwrap(), vec![1.0, 0.0, 1.0, 0.0]);
        assert!(binary_scores(&[Outcome::Continuous(0.5)]).is_err());
    }

    #[test]
    fn logrank_all_deaths_three() {
        // times (1,2,3) all deaths -> (2/3, 1/6, -5/6)
        let s = logrank_scores(&surv(&[1.0, 2.0, 3.0], &[true, true, true])).unwrap();
        assert!((s[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((s[1] - 1.0 / 6.0).abs() < 1e-12);
        assert!((s[2] + 5.0 / 6.0).abs() < 1e-12);
        assert!(s.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn logrank_all_censored_is_zero() {
        let s = logrank_scores(&surv(&[1.0, 2.0, 3.0, 4.0], &[false; 4])).unwrap();
        assert_eq!(s, vec![0.0; 4]);
    }

    #[test]
    fn logrank_death_then_censored() {
        // times (1,2), second censored -> (1/2, -1/2)
        let s = logrank_scores(&surv(&[1.0, 2.0], &[true, false])).unwrap();
        assert!((s[0] - 0.5).abs() < 1e-12);
        assert!((s[1] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn gehan_all_deaths_three() {
        let s = gehan_scores(&surv(&[1.0, 2.0, 3.0], &[true, true, true])).unwrap();
        assert_eq!(s, vec![-2.0, 0.0, 2.0]);
    }

    #[test]
    fn gehan_all_censored_is_zero() {
        let s = gehan_scores(&surv(&[1.0, 5.0], &[false, false])).unwrap();
        assert_eq!(s, vec![0.0, 0.0]);
    }

    #[test]
    fn gehan_death_then_censored() {
        // death at 1, censored at 5 -> (-1, 1)
        let s = gehan_scores(&surv(&[1.0, 5.0], &[true, false])).unwrap();
        assert_eq!(s, vec![-1.0, 1.0]);
    }

    #[test]
    fn empty_block_rejected() {
        assert!(logrank_scores(&[]).is_err());
        assert!(gehan_scores(&[]).is_err());
    }

    #[test]
    fn nonpositive_time_rejected() {
        assert!(logrank_scores(&surv(&[0.0, 1.0], &[true, true])).is_err());
    }

    fn censored_block_strategy(max_n: usize) -> impl Strategy<Value = Vec<Outcome>> {
        prop::collection::vec((1u32..20u32, any::<bool>()), 2..=max_n).prop_map(|v| {
            v.into_iter()
                .map(|(t, e)| Outcome::Survival { time: t as f64, event: e })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn zero_sum_within_block(block in censored_block_strategy(10)) {
            let n = block.len() as f64;
            let lr = logrank_scores(&block).unwrap();
            prop_assert!(lr.iter().sum::<f64>().abs() <= 1e-12 * n);
            let ge = gehan_scores(&block).unwrap();
            prop_assert!(ge.iter().sum::<f64>().abs() <= 1e-12 * n);
        }

        #[test]
        fn permutation_equivariance(block in censored_block_strategy(8), seed in 0u64..1000) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut idx: Vec<usize> = (0..block.len()).collect();
            idx.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let permuted: Vec<Outcome> = idx.iter().map(|&i| block[i]).collect();
            for f in [logrank_scores, gehan_scores] {
                let base = f(&block).unwrap();
                let perm = f(&permuted).unwrap();
                for (pos, &i) in idx.iter().enumerate() {
                    prop_assert!((perm[pos] - base[i]).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn time_scale_invariance(block in censored_block_strategy(8), c in 1u32..50u32) {
            let scaled: Vec<Outcome> = block
                .iter()
                .map(|o| match o {
                    Outcome::Survival { time, event } =>
                        Outcome::Survival { time: time * c as f64, event: *event },
                    other => *other,
                })
                .collect();
            for f in [logrank_scores, gehan_scores] {
                prop_assert_eq!(f(&block).unwrap(), f(&scaled).unwrap());
            }
        }

        #[test]
        fn gehan_swap_antisymmetry(block in censored_block_strategy(8)) {
            // swapping two patients' data swaps their scores
            let n = block.len();
            let mut swapped = block.clone();
            swapped.swap(0, n - 1);
            let a = gehan_scores(&block).unwrap();
            let b = gehan_scores(&swapped).unwrap();
            prop_assert_eq!(a[0], b[n - 1]);
            prop_assert_eq!(a[n - 1], b[0]);
        }
    }
}
