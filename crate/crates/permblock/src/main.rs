//! Command-line front end: analyze, simulate, monitor, oracle, ci.
//!
//! Exit codes: 0 success, 2 data error, 3 numeric failure, 4 config error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use permblock::conditional::conditional_test_scored;
use permblock::design::{OutcomeKind, TrialData};
use permblock::error::{Error, Result};
use permblock::gst::{self, GstLook, GstMode, GstPlan, Sidedness};
use permblock::io::{analysis_report, parse_config, read_trial_csv, require_key};
use permblock::moments::unconditional_test;
use permblock::scores::{compute_scores, default_score_kind, ScoreKind};
use permblock::{oracle, rerand, sim};

#[derive(Parser)]
#[command(name = "permblock", version, about = "Randomization inference for multi-center permuted-block trials")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutcomeArg {
    Continuous,
    Binary,
    Survival,
}

impl From<OutcomeArg> for OutcomeKind {
    fn from(a: OutcomeArg) -> OutcomeKind {
        match a {
            OutcomeArg::Continuous => OutcomeKind::Continuous,
            OutcomeArg::Binary => OutcomeKind::Binary,
            OutcomeArg::Survival => OutcomeKind::Survival,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScoreArg {
    Identity,
    Binary,
    Logrank,
    Gehan,
}

impl From<ScoreArg> for ScoreKind {
    fn from(a: ScoreArg) -> ScoreKind {
        match a {
            ScoreArg::Identity => ScoreKind::Identity,
            ScoreArg::Binary => ScoreKind::Binary,
            ScoreArg::Logrank => ScoreKind::Logrank,
            ScoreArg::Gehan => ScoreKind::Gehan,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Conditional,
    Unconditional,
}

#[derive(Args)]
struct DataArgs {
    /// Input CSV (see README for the schema).
    #[arg(long)]
    data: PathBuf,
    /// Outcome kind, which also selects the expected CSV schema.
    #[arg(long, value_enum)]
    outcome: OutcomeArg,
    /// Score; defaults to the outcome kind's natural score
    /// (identity / binary / logrank).
    #[arg(long, value_enum)]
    score: Option<ScoreArg>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the randomization test on a trial data file.
    Analyze {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum, default_value = "conditional")]
        mode: ModeArg,
        /// 1- or 2-sided p-value emphasis in the report.
        #[arg(long, default_value = "2", value_parser = clap::value_parser!(u8).range(1..=2))]
        sided: u8,
        #[arg(long, default_value = "0.05")]
        alpha: f64,
        /// Also write the JSON report to this file.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Reproduce a power table from a scenario config file.
    Simulate {
        /// Flat key=value config; keys: table (1-5), scale (of 5000 reps).
        #[arg(long)]
        config: PathBuf,
        /// Master seed (required: every published number must be replayable).
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value = "1")]
        workers: usize,
        /// Output CSV path; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Group-sequential monitoring with resumable state.
    Monitor {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum, default_value = "conditional")]
        mode: ModeArg,
        /// Comma-separated cumulative block counts of the planned looks,
        /// e.g. 7,15,22,30. Ignored when resuming from --state.
        #[arg(long)]
        looks: Option<String>,
        /// One-sided overall alpha for the O'Brien-Fleming plan.
        #[arg(long, default_value = "0.025")]
        alpha: f64,
        /// State file; created on the first call, then read and updated.
        #[arg(long)]
        state: Option<PathBuf>,
    },
    /// Exact enumeration: sample-space sizes, exact moments and p-value.
    Oracle {
        #[command(flatten)]
        data: DataArgs,
        /// Condition the enumeration on the observed institution counts.
        #[arg(long)]
        conditional: bool,
        /// Abort if the assignment space exceeds this many points.
        #[arg(long, default_value = "10000000")]
        cap: u64,
    },
    /// Rerandomization confidence interval for the mortality-rate ratio.
    Ci {
        /// Input survival CSV.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "1000")]
        reps: usize,
        #[arg(long, default_value = "0.95")]
        level: f64,
        /// Master seed (required).
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value = "1")]
        workers: usize,
    },
}

fn read_data(args: &DataArgs) -> Result<(TrialData, ScoreKind)> {
    let kind: OutcomeKind = args.outcome.into();
    let file = fs::File::open(&args.data)?;
    let data = read_trial_csv(file, kind)?;
    let score = args.score.map(ScoreKind::from).unwrap_or_else(|| default_score_kind(kind));
    Ok((data, score))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Numeric(format!("serialize: {e}")))?;
    println!("{text}");
    Ok(())
}

fn cmd_analyze(
    data_args: &DataArgs,
    mode: ModeArg,
    sided: u8,
    alpha: f64,
    output: Option<&Path>,
) -> Result<()> {
    let (data, score) = read_data(data_args)?;
    let sv = compute_scores(&data, score)?;
    let result = match mode {
        ModeArg::Conditional => conditional_test_scored(&data, &sv)?,
        ModeArg::Unconditional => unconditional_test(&data, &sv)?,
    };
    let report = analysis_report(&data, score, &result, alpha, sided, None)?;
    print_json(&report)?;
    if let Some(path) = output {
        fs::write(path, serde_json::to_string_pretty(&report).unwrap())?;
    }
    Ok(())
}

fn cmd_simulate(config: &Path, seed: u64, workers: usize, output: Option<&Path>) -> Result<()> {
    let text = fs::read_to_string(config)?;
    let cfg = parse_config(&text, &["table", "scale"])?;
    let table: usize = require_key(&cfg, "table")?
        .parse()
        .map_err(|_| Error::Config("table must be an integer 1-5".into()))?;
    let scale: f64 = cfg
        .get("scale")
        .map(|s| s.parse().map_err(|_| Error::Config("scale must be a number".into())))
        .transpose()?
        .unwrap_or(1.0);
    if !(scale > 0.0) {
        return Err(Error::Config(format!("scale must be positive, got {scale}")));
    }
    let replications = ((5000.0 * scale).round() as usize).max(1);
    let rows = sim::reproduce_table(table, replications, seed, workers)?;

    let mut out = String::new();
    out.push_str("table,n_total,num_institutions,test,power,standard_error,replications,seed\n");
    for r in &rows {
        out.push_str(&format!(
            "{},{},{},{},{:.6},{:.6},{},{}\n",
            r.table, r.n_total, r.num_institutions, r.test, r.power, r.standard_error,
            replications, seed
        ));
    }
    match output {
        Some(path) => fs::write(path, out)?,
        None => print!("{out}"),
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct MonitorState {
    version: String,
    plan: GstPlan,
    score: ScoreKind,
    mode: GstMode,
    looks: Vec<GstLook>,
}

fn parse_looks(spec: &str) -> Result<Vec<usize>> {
    spec.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad look count {s:?} in --looks")))
        })
        .collect()
}

fn cmd_monitor(
    data_args: &DataArgs,
    mode: ModeArg,
    looks: Option<&str>,
    alpha: f64,
    state_path: Option<&Path>,
) -> Result<()> {
    let (data, score) = read_data(data_args)?;
    let gst_mode = match mode {
        ModeArg::Conditional => GstMode::Conditional,
        ModeArg::Unconditional => GstMode::Unconditional,
    };

    let mut state = match state_path.filter(|p| p.exists()) {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            serde_json::from_str::<MonitorState>(&text)
                .map_err(|e| Error::Config(format!("bad state file: {e}")))?
        }
        None => {
            let look_blocks = parse_looks(looks.ok_or_else(|| {
                Error::Config("--looks is required when starting without a state file".into())
            })?)?;
            let num_looks = look_blocks.len();
            let boundaries = (1..=num_looks)
                .map(|l| gst::obf_boundary(l, num_looks, gst::OBF_C_FINAL_L4))
                .collect::<Result<Vec<_>>>()?;
            MonitorState {
                version: env!("CARGO_PKG_VERSION").to_string(),
                plan: GstPlan::new(look_blocks, boundaries, alpha, Sidedness::One)?,
                score,
                mode: gst_mode,
                looks: Vec::new(),
            }
        }
    };
    if state.score != score || state.mode != gst_mode {
        return Err(Error::Config(
            "score/mode disagree with the saved monitoring state".into(),
        ));
    }
    if gst::rejected(&state.looks) {
        print_json(&state)?;
        return Ok(());
    }

    // run every planned look the accumulated data now covers
    let available = data.design.num_blocks();
    let next = state.looks.len() + 1;
    for l in next..=state.plan.num_looks() {
        let p_l = state.plan.look_blocks[l - 1];
        if p_l > available {
            break;
        }
        let prefix = data.prefix(p_l)?;
        let look = gst::interim_test(&prefix, &state.plan, l, score, gst_mode)?;
        let stop = look.decision == gst::LookDecision::Reject;
        state.looks.push(look);
        if stop {
            break;
        }
    }

    print_json(&state)?;
    if let Some(path) = state_path {
        fs::write(path, serde_json::to_string_pretty(&state).unwrap())?;
    }
    Ok(())
}

fn cmd_oracle(data_args: &DataArgs, conditional: bool, cap: u64) -> Result<()> {
    let (data, score) = read_data(data_args)?;
    let sv = compute_scores(&data, score)?;
    let (s_size, t_size) = oracle::space_sizes_for(&data)?;
    let condition = if conditional {
        Some(permblock::design::tabulate_counts(&data)?.n_ka)
    } else {
        None
    };
    let enumeration = oracle::exact_distribution(&data, &sv, condition.as_deref(), cap)?;
    let s_obs = permblock::moments::observed_s_a(&data, &sv)?;
    let report = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "score": score,
        "conditional": conditional,
        "sample_space_size": s_size.to_string(),
        "conditional_space_size": t_size.to_string(),
        "enumerated_points": enumeration.conditional_points.to_string(),
        "s_a_observed": s_obs,
        "exact_mean": enumeration.exact_mean,
        "exact_variance": enumeration.exact_var,
        "p_two_sided_exact": enumeration.p_two_sided(s_obs),
    });
    print_json(&report)
}

fn cmd_ci(data: &Path, reps: usize, level: f64, seed: u64, workers: usize) -> Result<()> {
    let file = fs::File::open(data)?;
    let trial = read_trial_csv(file, OutcomeKind::Survival)?;
    let interval = rerand::confidence_interval_seeded(&trial, reps, level, seed, workers)?;
    let report = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "seed": seed,
        "interval": interval,
    });
    print_json(&report)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Analyze { data, mode, sided, alpha, output } => {
            cmd_analyze(&data, mode, sided, alpha, output.as_deref())
        }
        Command::Simulate { config, seed, workers, output } => {
            cmd_simulate(&config, seed, workers, output.as_deref())
        }
        Command::Monitor { data, mode, looks, alpha, state } => {
            cmd_monitor(&data, mode, looks.as_deref(), alpha, state.as_deref())
        }
        Command::Oracle { data, conditional, cap } => cmd_oracle(&data, conditional, cap),
        Command::Ci { data, reps, level, seed, workers } => {
            cmd_ci(&data, reps, level, seed, workers)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are success; any usage problem is a
            // config error (exit 4)
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(4) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
