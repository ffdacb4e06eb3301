//! Classical comparator tests used alongside the randomization tests in
//! the power studies: pooled and stratified t, pooled chi-squared and
//! Mantel-Haenszel, and pooled / stratified logrank.

use std::collections::BTreeMap;

use crate::design::{Arm, Outcome, OutcomeKind, TrialData};
use crate::error::{Error, Result};
use crate::moments;
use crate::scores::{self, ScoreKind};
use crate::stats;

fn arm_of(r: &crate::design::PatientRecord) -> Result<Arm> {
    r.arm
        .ok_or_else(|| Error::InvalidData("unassigned arm in reference test".into()))
}

fn continuous_values(data: &TrialData) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut a = Vec::new();
    let mut b = Vec::new();
    for r in &data.records {
        let y = match r.outcome {
            Outcome::Continuous(y) => y,
            Outcome::Binary(y) => y as f64,
            Outcome::Survival { .. } => {
                return Err(Error::InvalidData(
                    "t test needs a continuous or binary outcome".into(),
                ))
            }
        };
        match arm_of(r)? {
            Arm::A => a.push(y),
            Arm::B => b.push(y),
        }
    }
    Ok((a, b))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Two-sample pooled-variance t test (df = n1 + n2 - 2); two-sided p.
pub fn t_test(data: &TrialData) -> Result<f64> {
    let (a, b) = continuous_values(data)?;
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidData("t test needs >= 2 per arm".into()));
    }
    let (ma, mb) = (mean(&a), mean(&b));
    let ss: f64 = a.iter().map(|y| (y - ma).powi(2)).sum::<f64>()
        + b.iter().map(|y| (y - mb).powi(2)).sum::<f64>();
    let df = (a.len() + b.len() - 2) as f64;
    let sp2 = ss / df;
    let se = (sp2 * (1.0 / a.len() as f64 + 1.0 / b.len() as f64)).sqrt();
    if se == 0.0 {
        return Ok(1.0);
    }
    Ok(stats::t_p_two_sided((ma - mb) / se, df))
}

/// One-sample t on per-block mean differences (df = P - 1); two-sided p.
pub fn stratified_t(data: &TrialData) -> Result<f64> {
    let mut diffs = Vec::with_capacity(data.design.num_blocks());
    for block in data.blocks() {
        let (mut sa, mut na, mut sb, mut nb) = (0.0, 0usize, 0.0, 0usize);
        for r in block {
            let y = match r.outcome {
                Outcome::Continuous(y) => y,
                Outcome::Binary(y) => y as f64,
                Outcome::Survival { .. } => {
                    return Err(Error::InvalidData(
                        "stratified t needs a continuous or binary outcome".into(),
                    ))
                }
            };
            match arm_of(r)? {
                Arm::A => {
                    sa += y;
                    na += 1;
                }
                Arm::B => {
                    sb += y;
                    nb += 1;
                }
            }
        }
        diffs.push(sa / na as f64 - sb / nb as f64);
    }
    let p = diffs.len();
    if p < 2 {
        return Err(Error::InvalidData("stratified t needs >= 2 blocks".into()));
    }
    let m = mean(&diffs);
    let var = diffs.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (p as f64 - 1.0);
    if var == 0.0 {
        return Ok(if m == 0.0 { 1.0 } else { 0.0 });
    }
    let t = m / (var / p as f64).sqrt();
    Ok(stats::t_p_two_sided(t, p as f64 - 1.0))
}

fn binary_2x2(records: &[crate::design::PatientRecord]) -> Result<[[f64; 2]; 2]> {
    // rows: arm A, B; cols: y = 1, 0
    let mut t = [[0.0; 2]; 2];
    for r in records {
        let y = match r.outcome {
            Outcome::Binary(y) => y as usize,
            _ => return Err(Error::InvalidData("binary test needs a 0/1 outcome".into())),
        };
        let row = match arm_of(r)? {
            Arm::A => 0,
            Arm::B => 1,
        };
        t[row][1 - y] += 1.0;
    }
    Ok(t)
}

/// Pearson chi-squared on the pooled 2x2 table (df 1); p = 1 when a margin
/// is empty.
pub fn pooled_2x2_chi2(data: &TrialData) -> Result<f64> {
    let t = binary_2x2(&data.records)?;
    let n = t[0][0] + t[0][1] + t[1][0] + t[1][1];
    let r = [t[0][0] + t[0][1], t[1][0] + t[1][1]];
    let c = [t[0][0] + t[1][0], t[0][1] + t[1][1]];
    if r.contains(&0.0) || c.contains(&0.0) {
        return Ok(1.0);
    }
    let mut x2 = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let e = r[i] * c[j] / n;
            x2 += (t[i][j] - e).powi(2) / e;
        }
    }
    Ok(stats::chi2_p(x2, 1.0))
}

/// Cochran-Mantel-Haenszel test stratified by block (df 1); strata with an
/// empty margin contribute nothing.
pub fn mantel_haenszel(data: &TrialData) -> Result<f64> {
    let (mut num, mut var) = (0.0, 0.0);
    for block in data.blocks() {
        let t = binary_2x2(block)?;
        let n = t[0][0] + t[0][1] + t[1][0] + t[1][1];
        let r1 = t[0][0] + t[0][1];
        let r2 = t[1][0] + t[1][1];
        let c1 = t[0][0] + t[1][0];
        let c2 = t[0][1] + t[1][1];
        if n < 2.0 || r1 == 0.0 || r2 == 0.0 || c1 == 0.0 || c2 == 0.0 {
            continue;
        }
        num += t[0][0] - r1 * c1 / n;
        var += r1 * r2 * c1 * c2 / (n * n * (n - 1.0));
    }
    if var == 0.0 {
        return Ok(1.0);
    }
    Ok(stats::chi2_p(num * num / var, 1.0))
}

fn survival_triples(records: &[crate::design::PatientRecord]) -> Result<Vec<(f64, bool, Arm)>> {
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        match r.outcome {
            Outcome::Survival { time, event } => out.push((time, event, arm_of(r)?)),
            _ => return Err(Error::InvalidData("logrank needs a survival outcome".into())),
        }
    }
    Ok(out)
}

/// Logrank O - E and hypergeometric variance accumulated over one stratum.
fn logrank_oe_v(mut obs: Vec<(f64, bool, Arm)>) -> (f64, f64) {
    obs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (mut oe, mut v) = (0.0, 0.0);
    let mut n1 = obs.iter().filter(|o| o.2 == Arm::A).count() as f64;
    let mut n = obs.len() as f64;
    let mut i = 0;
    while i < obs.len() {
        let t = obs[i].0;
        let mut j = i;
        let (mut d, mut d1, mut removed, mut removed1) = (0.0, 0.0, 0.0, 0.0);
        while j < obs.len() && obs[j].0 == t {
            removed += 1.0;
            if obs[j].2 == Arm::A {
                removed1 += 1.0;
            }
            if obs[j].1 {
                d += 1.0;
                if obs[j].2 == Arm::A {
                    d1 += 1.0;
                }
            }
            j += 1;
        }
        if d > 0.0 && n > 1.0 {
            oe += d1 - d * n1 / n;
            v += d * (n - d) * n1 * (n - n1) / (n * n * (n - 1.0));
        }
        n -= removed;
        n1 -= removed1;
        i = j;
    }
    (oe, v)
}

/// Whole-sample (unstratified) logrank test; two-sided p.
pub fn logrank_test(data: &TrialData) -> Result<f64> {
    let (oe, v) = logrank_oe_v(survival_triples(&data.records)?);
    if v == 0.0 {
        return Ok(1.0);
    }
    Ok(stats::chi2_p(oe * oe / v, 1.0))
}

/// Logrank stratified by block; two-sided p.
pub fn stratified_logrank(data: &TrialData) -> Result<f64> {
    let (mut oe, mut v) = (0.0, 0.0);
    for block in data.blocks() {
        let (o, w) = logrank_oe_v(survival_triples(block)?);
        oe += o;
        v += w;
    }
    if v == 0.0 {
        return Ok(1.0);
    }
    Ok(stats::chi2_p(oe * oe / v, 1.0))
}

/// Block-stratified Gehan test: sum of arm-A Gehan scores over blocks,
/// normalized by the permutation variance; two-sided p.
pub fn stratified_gehan(data: &TrialData) -> Result<f64> {
    let sv = scores::compute_scores(data, ScoreKind::Gehan)?;
    Ok(moments::unconditional_test(data, &sv)?.p_two_sided)
}

/// All comparator p-values appropriate to the outcome kind, keyed by name.
pub fn reference_tests(data: &TrialData) -> Result<BTreeMap<String, f64>> {
    let kind = data
        .records
        .first()
        .map(|r| r.outcome.kind())
        .ok_or_else(|| Error::InvalidData("empty trial".into()))?;
    let mut out = BTreeMap::new();
    match kind {
        OutcomeKind::Continuous => {
            out.insert("t_test".into(), t_test(data)?);
            out.insert("stratified_t".into(), stratified_t(data)?);
        }
        OutcomeKind::Binary => {
            out.insert("chi2_pooled".into(), pooled_2x2_chi2(data)?);
            out.insert("mantel_haenszel".into(), mantel_haenszel(data)?);
        }
        OutcomeKind::Survival => {
            out.insert("logrank_pooled".into(), logrank_test(data)?);
            out.insert("stratified_logrank".into(), stratified_logrank(data)?);
            out.insert("stratified_gehan".into(), stratified_gehan(data)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{PatientRecord, TrialDesign};

    fn trial(block_size: usize, rows: Vec<(usize, Arm, Outcome)>) -> TrialData {
        let design = TrialDesign::new(block_size, rows.len() / block_size, 4).unwrap();
        let records = rows
            .into_iter()
            .map(|(institution, arm, outcome)| PatientRecord {
                institution,
                arm: Some(arm),
                outcome,
            })
            .collect();
        TrialData::new(design, records).unwrap()
    }

    #[test]
    fn t_test_matches_hand_calc() {
        // A: 1, 2, 3; B: 4, 5, 6. Pooled sd = 1, se = sqrt(2/3),
        // t = -3/sqrt(2/3) = -3.6742, df = 4 -> p ~ 0.02131.
        let rows = [(Arm::A, 1.0), (Arm::B, 4.0), (Arm::A, 2.0), (Arm::B, 5.0), (Arm::A, 3.0), (Arm::B, 6.0)]
            .iter()
            .map(|&(a, y)| (0, a, Outcome::Continuous(y)))
            .collect();
        let data = trial(2, rows);
        let p = t_test(&data).unwrap();
        assert!((p - 0.021312).abs() < 1e-4, "p = {p}");
    }

    #[test]
    fn stratified_t_on_constant_differences() {
        // Every block has mean difference exactly 1 -> zero variance, p = 0.
        let rows = vec![
            (0, Arm::A, Outcome::Continuous(2.0)),
            (0, Arm::B, Outcome::Continuous(1.0)),
            (1, Arm::A, Outcome::Continuous(5.0)),
            (1, Arm::B, Outcome::Continuous(4.0)),
            (0, Arm::A, Outcome::Continuous(9.0)),
            (0, Arm::B, Outcome::Continuous(8.0)),
        ];
        let data = trial(2, rows);
        assert_eq!(stratified_t(&data).unwrap(), 0.0);
    }

    #[test]
    fn chi2_degenerate_margin_gives_p_one() {
        let rows = vec![
            (0, Arm::A, Outcome::Binary(1)),
            (0, Arm::B, Outcome::Binary(1)),
            (1, Arm::A, Outcome::Binary(1)),
            (1, Arm::B, Outcome::Binary(1)),
        ];
        let data = trial(4, rows);
        assert_eq!(pooled_2x2_chi2(&data).unwrap(), 1.0);
        assert_eq!(mantel_haenszel(&data).unwrap(), 1.0);
    }

    #[test]
    fn chi2_matches_hand_calc() {
        // A: 3 of 4 events; B: 1 of 4. X2 = 8 * (3*3 - 1*1)^2 / (4*4*4*4) = 2.0.
        let mut rows = Vec::new();
        for y in [1, 1, 1, 0] {
            rows.push((0, Arm::A, Outcome::Binary(y)));
        }
        for y in [1, 0, 0, 0] {
            rows.push((0, Arm::B, Outcome::Binary(y)));
        }
        let data = trial(8, rows);
        let p = pooled_2x2_chi2(&data).unwrap();
        assert!((p - stats::chi2_p(2.0, 1.0)).abs() < 1e-12);
    }

    #[test]
    fn logrank_null_on_identical_arms() {
        // Same death times in both arms: O - E = 0 at every time.
        let rows = vec![
            (0, Arm::A, Outcome::Survival { time: 1.0, event: true }),
            (0, Arm::B, Outcome::Survival { time: 1.0, event: true }),
            (0, Arm::A, Outcome::Survival { time: 2.0, event: true }),
            (0, Arm::B, Outcome::Survival { time: 2.0, event: true }),
        ];
        let data = trial(4, rows);
        assert!((logrank_test(&data).unwrap() - 1.0).abs() < 1e-12);
        assert!((stratified_logrank(&data).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn logrank_single_stratum_agrees_with_pooled() {
        let rows = vec![
            (0, Arm::A, Outcome::Survival { time: 5.0, event: true }),
            (1, Arm::B, Outcome::Survival { time: 1.0, event: true }),
            (2, Arm::A, Outcome::Survival { time: 6.0, event: false }),
            (3, Arm::B, Outcome::Survival { time: 2.0, event: true }),
        ];
        let data = trial(4, rows);
        let p1 = logrank_test(&data).unwrap();
        let p2 = stratified_logrank(&data).unwrap();
        assert!((p1 - p2).abs() < 1e-12);
        assert!(p1 < 1.0);
    }

    #[test]
    fn reference_map_keys_by_outcome() {
        let rows = vec![
            (0, Arm::A, Outcome::Continuous(1.0)),
            (0, Arm::B, Outcome::Continuous(2.0)),
            (1, Arm::A, Outcome::Continuous(3.0)),
            (1, Arm::B, Outcome::Continuous(0.0)),
        ];
        let data = trial(2, rows);
        let map = reference_tests(&data).unwrap();
        assert!(map.contains_key("t_test") && map.contains_key("stratified_t"));
    }
}
