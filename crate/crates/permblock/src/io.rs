//! Data ingestion and machine-readable reports.
//!
//! CSV schemas (strict: exact header, no extra columns, UTF-8):
//!   continuous/binary:  patient_id,block,institution,arm,y
//!   survival:           patient_id,block,institution,arm,time,event
//! `block` and `institution` are 1-based, `arm` is A or B, `event` is 0/1.
//! Rows may appear in any order; they are sorted by (block, patient_id).

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::design::{Arm, Outcome, OutcomeKind, PatientRecord, TrialData, TrialDesign};
use crate::error::{Error, Result};
use crate::moments::{TestMode, TestResult};
use crate::scores::ScoreKind;

pub const CONTINUOUS_HEADER: [&str; 5] = ["patient_id", "block", "institution", "arm", "y"];
pub const SURVIVAL_HEADER: [&str; 6] = ["patient_id", "block", "institution", "arm", "time", "event"];

struct RawRow {
    patient_id: u64,
    block: usize,
    institution: usize,
    arm: Arm,
    outcome: Outcome,
}

fn parse_field<T: std::str::FromStr>(row: u64, name: &str, s: &str) -> Result<T> {
    s.trim().parse().map_err(|_| {
        Error::InvalidData(format!("row {row}: cannot parse {name} from {s:?}"))
    })
}

/// Read trial data from CSV. The header picks the schema; it must agree
/// with `kind` (binary files use the continuous schema with y in 0/1).
pub fn read_trial_csv<R: Read>(reader: R, kind: OutcomeKind) -> Result<TrialData> {
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = csv
        .headers()
        .map_err(|e| Error::InvalidData(format!("bad CSV header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    let survival = kind == OutcomeKind::Survival;
    let expected: &[&str] = if survival { &SURVIVAL_HEADER } else { &CONTINUOUS_HEADER };
    if header != expected {
        return Err(Error::InvalidData(format!(
            "header must be exactly {:?} for a {kind} outcome, got {:?}",
            expected.join(","),
            header.join(",")
        )));
    }

    let mut rows = Vec::new();
    for (i, rec) in csv.records().enumerate() {
        let line = i as u64 + 2; // 1-based, after the header
        let rec = rec.map_err(|e| Error::InvalidData(format!("row {line}: {e}")))?;
        if rec.len() != expected.len() {
            return Err(Error::InvalidData(format!(
                "row {line}: expected {} fields, got {}",
                expected.len(),
                rec.len()
            )));
        }
        let arm = match &rec[3] {
            "A" => Arm::A,
            "B" => Arm::B,
            other => {
                return Err(Error::InvalidData(format!(
                    "row {line}: arm must be A or B, got {other:?}"
                )))
            }
        };
        let outcome = if survival {
            let time: f64 = parse_field(line, "time", &rec[4])?;
            let event: u8 = parse_field(line, "event", &rec[5])?;
            if !(time > 0.0) || !time.is_finite() {
                return Err(Error::InvalidData(format!(
                    "row {line}: time must be a positive finite number"
                )));
            }
            if event > 1 {
                return Err(Error::InvalidData(format!("row {line}: event must be 0 or 1")));
            }
            Outcome::Survival { time, event: event == 1 }
        } else {
            let y: f64 = parse_field(line, "y", &rec[4])?;
            if !y.is_finite() {
                return Err(Error::InvalidData(format!("row {line}: y must be finite")));
            }
            match kind {
                OutcomeKind::Binary => {
                    if y != 0.0 && y != 1.0 {
                        return Err(Error::InvalidData(format!(
                            "row {line}: binary outcome y must be 0 or 1, got {y}"
                        )));
                    }
                    Outcome::Binary(y as u8)
                }
                _ => Outcome::Continuous(y),
            }
        };
        let block: usize = parse_field(line, "block", &rec[1])?;
        let institution: usize = parse_field(line, "institution", &rec[2])?;
        if block == 0 || institution == 0 {
            return Err(Error::InvalidData(format!(
                "row {line}: block and institution are 1-based"
            )));
        }
        rows.push(RawRow {
            patient_id: parse_field(line, "patient_id", &rec[0])?,
            block,
            institution: institution - 1,
            arm,
            outcome,
        });
    }
    if rows.is_empty() {
        return Err(Error::InvalidData("no data rows".into()));
    }

    rows.sort_by_key(|r| (r.block, r.patient_id));
    let num_blocks = rows.iter().map(|r| r.block).max().unwrap();
    let mut per_block = vec![0usize; num_blocks];
    for r in &rows {
        per_block[r.block - 1] += 1;
    }
    let n = per_block[0];
    for (j, &count) in per_block.iter().enumerate() {
        if count != n {
            return Err(Error::InvalidData(format!(
                "block {} has {count} patients but block 1 has {n}; blocks must be complete and equal-sized",
                j + 1
            )));
        }
    }
    let k = rows.iter().map(|r| r.institution).max().unwrap() + 1;
    let design = TrialDesign::new(n, num_blocks, k)?;
    let records = rows
        .into_iter()
        .map(|r| PatientRecord { institution: r.institution, arm: Some(r.arm), outcome: r.outcome })
        .collect();
    TrialData::new(design, records)
}

/// Write trial data back out in the matching schema.
pub fn write_trial_csv<W: std::io::Write>(w: W, data: &TrialData) -> Result<()> {
    let survival = matches!(data.records.first().map(|r| r.outcome), Some(Outcome::Survival { .. }));
    let mut csv = csv::Writer::from_writer(w);
    let io_err = |e: csv::Error| Error::InvalidData(format!("csv write: {e}"));
    if survival {
        csv.write_record(SURVIVAL_HEADER).map_err(io_err)?;
    } else {
        csv.write_record(CONTINUOUS_HEADER).map_err(io_err)?;
    }
    let n = data.design.block_size();
    for (i, r) in data.records.iter().enumerate() {
        let arm = match r.arm {
            Some(Arm::A) => "A",
            Some(Arm::B) => "B",
            None => return Err(Error::InvalidData(format!("record {i} has no arm"))),
        };
        let mut fields = vec![
            (i + 1).to_string(),
            (i / n + 1).to_string(),
            (r.institution + 1).to_string(),
            arm.to_string(),
        ];
        match r.outcome {
            Outcome::Continuous(y) => fields.push(format!("{y}")),
            Outcome::Binary(y) => fields.push(y.to_string()),
            Outcome::Survival { time, event } => {
                fields.push(format!("{time}"));
                fields.push((event as u8).to_string());
            }
        }
        csv.write_record(&fields).map_err(io_err)?;
    }
    csv.flush()?;
    Ok(())
}

/// Parse a flat `key = value` config (one pair per line, `#` comments).
/// Keys outside `allowed` are rejected.
pub fn parse_config(text: &str, allowed: &[&str]) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("config line {}: expected key = value, got {raw:?}", i + 1))
        })?;
        let key = key.trim();
        let value = value.trim();
        if !allowed.contains(&key) {
            return Err(Error::Config(format!("unknown config key {key:?}")));
        }
        if out.insert(key.to_string(), value.to_string()).is_some() {
            return Err(Error::Config(format!("duplicate config key {key:?}")));
        }
    }
    Ok(out)
}

pub fn require_key<'a>(cfg: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
    cfg.get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::Config(format!("missing required config key {key:?}")))
}

/// Echo of the design in reports.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DesignEcho {
    pub block_size: usize,
    pub num_blocks: usize,
    pub num_institutions: usize,
}

impl From<TrialDesign> for DesignEcho {
    fn from(d: TrialDesign) -> Self {
        DesignEcho {
            block_size: d.block_size(),
            num_blocks: d.num_blocks(),
            num_institutions: d.num_institutions(),
        }
    }
}

/// Stable JSON analysis report.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AnalysisReport {
    pub version: String,
    pub mode: String,
    pub score: ScoreKind,
    pub s_a: f64,
    pub mean: f64,
    pub variance: f64,
    pub z: f64,
    pub p_one_sided: f64,
    pub p_two_sided: f64,
    pub effect_d: f64,
    pub n_ka: Vec<usize>,
    pub design: DesignEcho,
    pub alpha: f64,
    pub sided: u8,
    pub seed: Option<u64>,
}

pub fn analysis_report(
    data: &TrialData,
    score: ScoreKind,
    result: &TestResult,
    alpha: f64,
    sided: u8,
    seed: Option<u64>,
) -> Result<AnalysisReport> {
    let counts = crate::design::tabulate_counts(data)?;
    Ok(AnalysisReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        mode: match result.mode {
            TestMode::Conditional => "conditional".to_string(),
            TestMode::Unconditional => "unconditional".to_string(),
        },
        score,
        s_a: result.statistic,
        mean: result.mean,
        variance: result.variance,
        z: result.z,
        p_one_sided: result.p_one_sided,
        p_two_sided: result.p_two_sided,
        effect_d: result.effect_d,
        n_ka: counts.n_ka,
        design: data.design.into(),
        alpha,
        sided,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "\
patient_id,block,institution,arm,y
1,1,1,A,1.5
2,1,1,B,2.5
3,1,2,A,0.5
4,1,2,B,3.5
";

    #[test]
    fn reads_continuous_csv() {
        let data = read_trial_csv(SMALL.as_bytes(), OutcomeKind::Continuous).unwrap();
        assert_eq!(data.design.block_size(), 4);
        assert_eq!(data.design.num_blocks(), 1);
        assert_eq!(data.design.num_institutions(), 2);
        assert_eq!(data.records[0].outcome, Outcome::Continuous(1.5));
        assert_eq!(data.records[3].arm, Some(Arm::B));
    }

    #[test]
    fn rejects_extra_column() {
        let text = SMALL.replace(",y", ",y,extra").replace("A,1.5", "A,1.5,9");
        let err = read_trial_csv(text.as_bytes(), OutcomeKind::Continuous).unwrap_err();
        assert!(matches!(err, Error::InvalidData(_)));
    }

    #[test]
    fn rejects_bad_arm_and_bad_event() {
        let text = SMALL.replace("B,2.5", "C,2.5");
        assert!(read_trial_csv(text.as_bytes(), OutcomeKind::Continuous).is_err());
        let surv = "\
patient_id,block,institution,arm,time,event
1,1,1,A,1.0,1
2,1,1,B,2.0,2
";
        assert!(read_trial_csv(surv.as_bytes(), OutcomeKind::Survival).is_err());
    }

    #[test]
    fn incomplete_block_error_names_the_block() {
        let text = format!("{SMALL}5,2,1,A,4.0\n6,2,1,B,5.0\n");
        let err = read_trial_csv(text.as_bytes(), OutcomeKind::Continuous).unwrap_err();
        assert!(err.to_string().contains("block 2"), "{err}");
    }

    #[test]
    fn csv_round_trip() {
        let data = read_trial_csv(SMALL.as_bytes(), OutcomeKind::Continuous).unwrap();
        let mut buf = Vec::new();
        write_trial_csv(&mut buf, &data).unwrap();
        let again = read_trial_csv(buf.as_slice(), OutcomeKind::Continuous).unwrap();
        assert_eq!(data, again);
    }

    #[test]
    fn config_parsing() {
        let cfg = parse_config("table = 1\n# comment\nscale=0.5\n", &["table", "scale"]).unwrap();
        assert_eq!(cfg["table"], "1");
        assert_eq!(cfg["scale"], "0.5");
        let err = parse_config("tables = 1\n", &["table"]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("tables"));
        let err = require_key(&cfg, "seed").unwrap_err();
        assert!(err.to_string().contains("seed"));
    }

    #[test]
    fn report_round_trips_through_json() {
        let data = read_trial_csv(SMALL.as_bytes(), OutcomeKind::Continuous).unwrap();
        let result = crate::conditional::conditional_test(&data, ScoreKind::Identity).unwrap();
        let report =
            analysis_report(&data, ScoreKind::Identity, &result, 0.05, 2, Some(42)).unwrap();
        let json = serde_json::to_string_pretty(&report).unwrap();
        let back: AnalysisReport = serde_json::from_str(&json).unwrap();
        assert_eq!(report, back);
    }
}
