use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use enertrade::apol::{audit, verify_col, AuditReport};
use enertrade::ledger::AdvertisementTx;
use enertrade::simnet::{
    compare_p2p_vs_grid, prioritization_ablation, run_sweep, sweep_csv, Scenario, SimError, Simulation,
    SweepPoint,
};

const EXIT_FAILED: u8 = 1;
const EXIT_BAD_FLAGS: u8 = 2;
const EXIT_INVALID_SCENARIO: u8 = 3;
const EXIT_NOT_CONVERGED: u8 = 4;

const AUDIT_LEAF_COUNTS: [usize; 5] = [1, 2, 4, 8, 16];
const DEFAULT_SWEEP: &str = "0,1,2,4";

#[derive(Debug, Parser)]
#[command(name = "enertrade", version, about = "Peer-to-peer energy market simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario and write trades, summary and ledger reports.
    Run(Common),
    /// Run one scenario per ω and report n_T against ω.
    Sweep(Common),
    /// Compare the configured group count against a single group.
    Ablate(Common),
    /// Compare the P2P market against grid-only trading.
    Compare(Common),
    /// Check every advertised CoL and run the A-PoL audit.
    VerifyCol(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Bundled scenario name or path to a scenario JSON file.
    #[arg(long, default_value = "case33")]
    scenario: String,
    /// Service-charge rate; `sweep` takes a comma-separated ascending list.
    #[arg(long)]
    omega: Option<String>,
    /// Number of prioritization groups.
    #[arg(long)]
    groups: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Convergence tolerance.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Directory for report files; reports go to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    ad_mode: Option<Switch>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Debug)]
enum Failure {
    BadFlags(String),
    Scenario(SimError),
    NotConverged(String),
    Other(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::BadFlags(_) => EXIT_BAD_FLAGS,
            Failure::Scenario(_) => EXIT_INVALID_SCENARIO,
            Failure::NotConverged(_) => EXIT_NOT_CONVERGED,
            Failure::Other(_) => EXIT_FAILED,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::BadFlags(m) | Failure::NotConverged(m) | Failure::Other(m) => f.write_str(m),
            Failure::Scenario(e) => write!(f, "{e}"),
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::UnknownScenario(_) | SimError::InvalidScenario { .. } => Failure::Scenario(e),
            SimError::UnsortedSweep => Failure::BadFlags(e.to_string()),
            SimError::NotConverged { .. } => Failure::NotConverged(e.to_string()),
            other => Failure::Other(other.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Other(format!("cannot write report: {e}"))
    }
}

fn parse_omegas(raw: &str) -> Result<Vec<f64>, Failure> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Failure::BadFlags(format!("--omega: {s:?} is not a number")))
        })
        .collect()
}

impl Common {
    /// The scenario with flag overrides applied and re-validated.
    fn scenario(&self, allow_list: bool) -> Result<(Scenario, Vec<f64>), Failure> {
        let mut s = Scenario::load(&self.scenario)?;
        let omegas = match &self.omega {
            Some(raw) => parse_omegas(raw)?,
            None if allow_list => parse_omegas(DEFAULT_SWEEP)?,
            None => vec![s.omega],
        };
        if !allow_list && omegas.len() != 1 {
            return Err(Failure::BadFlags("--omega takes a single value here".into()));
        }
        s.omega = omegas[0];
        if let Some(g) = self.groups {
            s.groups = g;
        }
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        if let Some(eps) = self.epsilon {
            s.epsilon = eps;
        }
        if let Some(mode) = self.ad_mode {
            s.ad_mode = mode == Switch::On;
        }
        for &omega in &omegas {
            Scenario { omega, ..s.clone() }
                .validate()
                .map_err(|e| Failure::BadFlags(format!("override rejected: {e}")))?;
        }
        Ok((s, omegas))
    }
}

/// Writes named reports under `--out`, or the one matching `--format` to
/// stdout.
struct Reports<'a> {
    common: &'a Common,
}

impl Reports<'_> {
    fn emit(&self, files: &[(&str, Vec<u8>)]) -> Result<(), Failure> {
        match &self.common.out {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                for (name, body) in files {
                    fs::write(dir.join(name), body)?;
                }
            }
            None => {
                let ext = match self.common.format {
                    Format::Json => ".json",
                    Format::Csv => ".csv",
                };
                let mut stdout = io::stdout().lock();
                for (_, body) in files.iter().filter(|(name, _)| name.ends_with(ext)) {
                    stdout.write_all(body)?;
                }
            }
        }
        Ok(())
    }

    fn pick<'b>(&self, json: (&'b str, String), csv: (&'b str, String)) -> Vec<(&'b str, Vec<u8>)> {
        match self.common.format {
            Format::Json => vec![(json.0, json.1.into_bytes())],
            Format::Csv => vec![(csv.0, csv.1.into_bytes())],
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

fn cmd_run(c: &Common) -> Result<String, Failure> {
    let (scenario, _) = c.scenario(false)?;
    let mut sim = Simulation::new(&scenario)?;
    let outcome = sim.finish();
    let result = match &outcome {
        Ok(r) => r.clone(),
        Err(SimError::NotConverged { partial, .. }) => (**partial).clone(),
        Err(e) => return Err(e.clone().into()),
    };
    let mut ledger = Vec::new();
    sim.ledger().export_jsonl(&mut ledger)?;
    Reports { common: c }.emit(&[
        ("trades.csv", result.to_csv().into_bytes()),
        ("summary.json", format!("{}\n", result.to_json()).into_bytes()),
        ("ledger.jsonl", ledger),
    ])?;
    match outcome {
        Ok(_) => Ok(result.summary_line()),
        Err(e) => Err(Failure::NotConverged(format!("{e}; partial: {}", result.summary_line()))),
    }
}

fn cmd_sweep(c: &Common) -> Result<String, Failure> {
    let (scenario, omegas) = c.scenario(true)?;
    let results = run_sweep(&scenario, &omegas)?;
    let points: Vec<SweepPoint> = results.iter().map(SweepPoint::from).collect();
    let reports = Reports { common: c };
    reports.emit(&reports.pick(("sweep.json", to_json(&points)), ("sweep.csv", sweep_csv(&points))))?;
    let list = |f: &dyn Fn(&SweepPoint) -> String| points.iter().map(f).collect::<Vec<_>>().join(",");
    Ok(format!(
        "{}: omega={} n_T={} blocks={}",
        scenario.name,
        list(&|p| p.omega.to_string()),
        list(&|p| p.n_t.to_string()),
        results.iter().map(|r| r.footprint.blocks.to_string()).collect::<Vec<_>>().join(",")
    ))
}

fn cmd_ablate(c: &Common) -> Result<String, Failure> {
    let (scenario, _) = c.scenario(false)?;
    let ablation = prioritization_ablation(&scenario)?;
    let reports = Reports { common: c };
    reports.emit(&reports.pick(("ablation.json", to_json(&ablation)), ("ablation.csv", ablation.to_csv())))?;
    let (a, b) = (&ablation.with, &ablation.without);
    Ok(format!(
        "{}: N={} messages/iter={:.1} work={} | N={} messages/iter={:.1} work={}",
        scenario.name, a.groups, a.messages_per_iteration, a.work_units, b.groups, b.messages_per_iteration, b.work_units
    ))
}

fn cmd_compare(c: &Common) -> Result<String, Failure> {
    let (scenario, _) = c.scenario(false)?;
    let cmp = compare_p2p_vs_grid(&scenario)?;
    let reports = Reports { common: c };
    reports.emit(&reports.pick(("comparison.json", to_json(&cmp)), ("comparison.csv", cmp.to_csv())))?;
    Ok(format!(
        "{}: grid import {:.2} with P2P vs {:.2} grid-only; welfare {:.2} vs {:.2}",
        scenario.name,
        cmp.p2p.grid_import,
        cmp.grid_only.grid_import,
        cmp.p2p.consumer_welfare + cmp.p2p.producer_welfare,
        cmp.grid_only.consumer_welfare + cmp.grid_only.producer_welfare
    ))
}

#[derive(Debug, Serialize)]
struct ColCheck {
    scenario: String,
    advertisements: usize,
    verified: usize,
    audit: AuditReport,
}

fn cmd_verify_col(c: &Common) -> Result<String, Failure> {
    let (scenario, _) = c.scenario(false)?;
    let mut sim = Simulation::new(&scenario)?;
    sim.finish()?;
    let ads: Vec<&AdvertisementTx> = sim.ledger().ad().iter().collect();
    let verified = ads
        .iter()
        .filter(|at| {
            at.col.as_ref().is_some_and(|proof| {
                verify_col(proof, sim.ca(), &AdvertisementTx::signed_content(&at.kind, at.reputation)).is_ok()
            })
        })
        .count();
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let audit = audit(&AUDIT_LEAF_COUNTS, &mut rng).map_err(|e| Failure::Other(e.to_string()))?;
    let check = ColCheck {
        scenario: scenario.name.clone(),
        advertisements: ads.len(),
        verified,
        audit,
    };
    let mut csv = String::from("check,subject,expected,observed,pass\n");
    csv.push_str(&format!(
        "advertisements,{},{},{},{}\n",
        check.scenario,
        check.advertisements,
        check.verified,
        check.verified == check.advertisements
    ));
    for l in &check.audit.leaf_counts {
        csv.push_str(&format!(
            "leaf_count,{},{},{},{}\n",
            l.leaf_count,
            l.leaf_count,
            l.accepted,
            l.accepted == l.leaf_count
        ));
    }
    for a in &check.audit.attacks {
        let observed = a.rejected_at.map_or("accepted".to_string(), |s| format!("{s:?}"));
        csv.push_str(&format!("attack,{},{:?},{},{}\n", a.attack, a.expected, observed, a.passed()));
    }
    let reports = Reports { common: c };
    reports.emit(&reports.pick(("col.json", to_json(&check)), ("col.csv", csv)))?;
    let line = format!(
        "{}: {}/{} advertised CoLs verify; audit {}",
        check.scenario,
        check.verified,
        check.advertisements,
        if check.audit.passed() { "passed" } else { "FAILED" }
    );
    if check.verified == check.advertisements && check.audit.passed() {
        Ok(line)
    } else {
        Err(Failure::Other(line))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_BAD_FLAGS } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (common, outcome) = match &cli.command {
        Command::Run(c) => (c, cmd_run(c)),
        Command::Sweep(c) => (c, cmd_sweep(c)),
        Command::Ablate(c) => (c, cmd_ablate(c)),
        Command::Compare(c) => (c, cmd_compare(c)),
        Command::VerifyCol(c) => (c, cmd_verify_col(c)),
    };
    match outcome {
        Ok(line) => {
            // Keep stdout parseable when it carries the report itself.
            if common.out.is_some() {
                println!("{line}");
            } else {
                eprintln!("{line}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
