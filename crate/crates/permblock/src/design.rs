//! Trial frame: permuted-block design, patient records, treatment
//! randomization and count tabulation.
//!
//! Blocks are positional: consecutive runs of `block_size` enrollees form a
//! block. Within every block exactly half the patients receive arm A, all
//! balanced patterns equiprobable. Institution membership is observed data,
//! never generated here.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Treatment arm. A is the arm whose score totals form the test statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arm {
    A,
    B,
}

impl Arm {
    pub fn flipped(self) -> Arm {
        match self {
            Arm::A => Arm::B,
            Arm::B => Arm::A,
        }
    }
}

/// Patient outcome, one of the three kinds the analysis supports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Outcome {
    Continuous(f64),
    /// 0 or 1.
    Binary(u8),
    /// `event == true` means a death was observed; `false` means censored.
    Survival { time: f64, event: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutcomeKind {
    Continuous,
    Binary,
    Survival,
}

impl Outcome {
    pub fn kind(&self) -> OutcomeKind {
        match self {
            Outcome::Continuous(_) => OutcomeKind::Continuous,
            Outcome::Binary(_) => OutcomeKind::Binary,
            Outcome::Survival { .. } => OutcomeKind::Survival,
        }
    }
}

impl std::fmt::Display for OutcomeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OutcomeKind::Continuous => write!(f, "continuous"),
            OutcomeKind::Binary => write!(f, "binary"),
            OutcomeKind::Survival => write!(f, "survival"),
        }
    }
}

/// The fixed frame of the randomization distribution: block size N, number
/// of blocks P and number of institutions K.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialDesign {
    block_size: usize,
    num_blocks: usize,
    num_institutions: usize,
}

impl TrialDesign {
    pub fn new(block_size: usize, num_blocks: usize, num_institutions: usize) -> Result<Self> {
        if block_size < 2 || block_size % 2 != 0 {
            return Err(Error::InvalidDesign(format!(
                "block size must be even and >= 2, got {block_size}"
            )));
        }
        if num_blocks < 1 {
            return Err(Error::InvalidDesign("need at least one block".into()));
        }
        if num_institutions < 1 {
            return Err(Error::InvalidDesign("need at least one institution".into()));
        }
        Ok(TrialDesign { block_size, num_blocks, num_institutions })
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn num_blocks(&self) -> usize {
        self.num_blocks
    }

    pub fn num_institutions(&self) -> usize {
        self.num_institutions
    }

    pub fn num_patients(&self) -> usize {
        self.block_size * self.num_blocks
    }
}

/// One enrollee. Block membership and within-block position are positional
/// in [`TrialData::records`]; institutions are 0-based indices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub institution: usize,
    pub arm: Option<Arm>,
    pub outcome: Outcome,
}

/// Ordered patient records for a complete trial: exactly N records per
/// block, blocks in enrollment order.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialData {
    pub design: TrialDesign,
    pub records: Vec<PatientRecord>,
}

impl TrialData {
    pub fn new(design: TrialDesign, records: Vec<PatientRecord>) -> Result<Self> {
        if records.len() != design.num_patients() {
            return Err(Error::InvalidData(format!(
                "expected {} records ({} blocks of {}), got {}",
                design.num_patients(),
                design.num_blocks(),
                design.block_size(),
                records.len()
            )));
        }
        for (i, r) in records.iter().enumerate() {
            if r.institution >= design.num_institutions() {
                return Err(Error::InvalidData(format!(
                    "record {i}: institution {} out of range (K = {})",
                    r.institution + 1,
                    design.num_institutions()
                )));
            }
        }
        Ok(TrialData { design, records })
    }

    /// Records of block `j` (0-based).
    pub fn block(&self, j: usize) -> &[PatientRecord] {
        let n = self.design.block_size();
        &self.records[j * n..(j + 1) * n]
    }

    pub fn blocks(&self) -> impl Iterator<Item = &[PatientRecord]> {
        self.records.chunks(self.design.block_size())
    }

    /// Truncate to the first `num_blocks` blocks (for interim looks).
    pub fn prefix(&self, num_blocks: usize) -> Result<TrialData> {
        if num_blocks == 0 || num_blocks > self.design.num_blocks() {
            return Err(Error::InvalidData(format!(
                "prefix of {num_blocks} blocks out of range (P = {})",
                self.design.num_blocks()
            )));
        }
        let design = TrialDesign::new(
            self.design.block_size(),
            num_blocks,
            self.design.num_institutions(),
        )?;
        let records = self.records[..design.num_patients()].to_vec();
        Ok(TrialData { design, records })
    }

    /// Swap arm labels A and B on every record.
    pub fn with_flipped_arms(&self) -> TrialData {
        let mut out = self.clone();
        for r in &mut out.records {
            r.arm = r.arm.map(Arm::flipped);
        }
        out
    }
}

/// Per-block and per-institution patient and arm-A counts.
///
/// `n_jk[j][k]` = patients from institution k in block j; `n_ka_j[j][k]` =
/// of those, the number assigned to A. Totals are sums over blocks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountTable {
    pub n_jk: Vec<Vec<usize>>,
    pub n_dot_k: Vec<usize>,
    pub n_ka_j: Vec<Vec<usize>>,
    pub n_ka: Vec<usize>,
}

/// Randomize one block of `n` patients: exactly n/2 receive A, all
/// balanced orderings equiprobable.
pub fn randomize_block<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Vec<Arm>> {
    if n < 2 || n % 2 != 0 {
        return Err(Error::InvalidDesign(format!(
            "block size must be even and >= 2, got {n}"
        )));
    }
    let mut arms: Vec<Arm> = std::iter::repeat(Arm::A)
        .take(n / 2)
        .chain(std::iter::repeat(Arm::B).take(n / 2))
        .collect();
    arms.shuffle(rng);
    Ok(arms)
}

/// Assign treatments block by block over a given institution arrival
/// sequence (0-based labels, length N*P).
pub fn randomize_trial<R: Rng + ?Sized>(
    design: TrialDesign,
    institution_sequence: &[usize],
    outcomes: &[Outcome],
    rng: &mut R,
) -> Result<TrialData> {
    if institution_sequence.len() != design.num_patients() {
        return Err(Error::InvalidData(format!(
            "institution sequence length {} != N*P = {}",
            institution_sequence.len(),
            design.num_patients()
        )));
    }
    if outcomes.len() != design.num_patients() {
        return Err(Error::InvalidData(format!(
            "outcome count {} != N*P = {}",
            outcomes.len(),
            design.num_patients()
        )));
    }
    let mut records = Vec::with_capacity(design.num_patients());
    for j in 0..design.num_blocks() {
        let arms = randomize_block(design.block_size(), rng)?;
        for i in 0..design.block_size() {
            let idx = j * design.block_size() + i;
            records.push(PatientRecord {
                institution: institution_sequence[idx],
                arm: Some(arms[i]),
                outcome: outcomes[idx],
            });
        }
    }
    TrialData::new(design, records)
}

/// Tabulate the per-block, per-institution counts. Fails with a block-naming
/// error on an unbalanced block or an unassigned arm.
pub fn tabulate_counts(data: &TrialData) -> Result<CountTable> {
    let k = data.design.num_institutions();
    let n = data.design.block_size();
    let p = data.design.num_blocks();
    let mut n_jk = vec![vec![0usize; k]; p];
    let mut n_ka_j = vec![vec![0usize; k]; p];
    for (j, block) in data.blocks().enumerate() {
        let mut a_count = 0;
        for r in block {
            n_jk[j][r.institution] += 1;
            match r.arm {
                Some(Arm::A) => {
                    n_ka_j[j][r.institution] += 1;
                    a_count += 1;
                }
                Some(Arm::B) => {}
                None => {
                    return Err(Error::InvalidData(format!(
                        "block {}: unassigned arm",
                        j + 1
                    )))
                }
            }
        }
        if a_count != n / 2 {
            return Err(Error::InvalidData(format!(
                "block {}: {} of {} patients on arm A, expected {}",
                j + 1,
                a_count,
                n,
                n / 2
            )));
        }
    }
    let mut n_dot_k = vec![0usize; k];
    let mut n_ka = vec![0usize; k];
    for j in 0..p {
        for kk in 0..k {
            n_dot_k[kk] += n_jk[j][kk];
            n_ka[kk] += n_ka_j[j][kk];
        }
    }
    Ok(CountTable { n_jk, n_dot_k, n_ka_j, n_ka })
}

/// Non-throwing structural checks; returns human-readable violations
/// (empty = valid).
pub fn validate(records: &[PatientRecord], design: TrialDesign) -> Vec<String> {
    let mut violations = Vec::new();
    let n = design.block_size();
    if records.len() % n != 0 {
        violations.push(format!(
            "incomplete final block: {} trailing patients with block size {}",
            records.len() % n,
            n
        ));
    }
    if records.len() != design.num_patients() {
        violations.push(format!(
            "record count {} does not match design N*P = {}",
            records.len(),
            design.num_patients()
        ));
    }
    for (i, r) in records.iter().enumerate() {
        if r.institution >= design.num_institutions() {
            violations.push(format!(
                "record {}: institution {} out of range (K = {})",
                i + 1,
                r.institution + 1,
                design.num_institutions()
            ));
        }
    }
    if let Some(first) = records.first() {
        let kind = first.outcome.kind();
        if records.iter().any(|r| r.outcome.kind() != kind) {
            violations.push("heterogeneous outcomes: all records must share one outcome kind".into());
        }
    }
    for (j, block) in records.chunks(n).enumerate() {
        if block.len() != n {
            continue; // already reported above
        }
        let assigned: Vec<_> = block.iter().filter_map(|r| r.arm).collect();
        if assigned.len() == block.len() {
            let a = assigned.iter().filter(|a| **a == Arm::A).count();
            if a != n / 2 {
                violations.push(format!(
                    "block {}: unbalanced assignment ({} of {} on arm A)",
                    j + 1,
                    a,
                    n
                ));
            }
        }
    }
    for (i, r) in records.iter().enumerate() {
        match r.outcome {
            Outcome::Binary(v) if v > 1 => {
                violations.push(format!("record {}: binary outcome {} not in {{0,1}}", i + 1, v))
            }
            Outcome::Survival { time, .. } if !(time > 0.0) => {
                violations.push(format!("record {}: nonpositive survival time {}", i + 1, time))
            }
            _ => {}
        }
    }
    violations
}
