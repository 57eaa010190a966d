//! `misobf`: scenario generation, feasibility runs and boundary sweeps.
//!
//! Exit codes: 0 feasible (or success), 3 infeasible, 4 timeout, 2 input error.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use misobf_core::apb::{DecisionThresholds, InfeasibleCause, RunReport, Verdict};
use misobf_core::model::compute_sinrs;
use misobf_core::pareto::{sweep_boundary, BisectionConfig, Solver};
use misobf_core::projop::ProjectionConfig;
use misobf_core::sim::{simulate, Algorithm};
use misobf_core::transform::make_betas;
use misobf_core::{FeasibilityTarget, LiftedInstance, LogBase, RateProfile, Scenario};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const VERSION: &str = env!("MISOBF_VERSION");

const EXIT_INPUT: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_TIMEOUT: u8 = 4;

#[derive(Parser)]
#[command(name = "misobf", version = VERSION, about = "Distributed Pareto-optimal beamforming for MISO interference channels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a random scenario and write it as JSON.
    Gen(GenArgs),
    /// Decide whether SNR targets are jointly achievable.
    Feasible(FeasibleArgs),
    /// Sweep rate profiles and write the Pareto boundary as CSV.
    Boundary(BoundaryArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// M = 3, K = 4, powers 15/18/21, unit noise.
    #[value(name = "paper-sec5")]
    PaperSec5,
}

impl Preset {
    fn shape(self) -> (usize, usize, Vec<f64>, Vec<f64>) {
        match self {
            Preset::PaperSec5 => (3, 4, vec![15.0, 18.0, 21.0], vec![1.0; 3]),
        }
    }
}

#[derive(Args)]
struct GenArgs {
    /// Number of cells.
    #[arg(long = "M", required_unless_present = "preset")]
    m: Option<usize>,
    /// Antennas per base station.
    #[arg(long = "K", required_unless_present = "preset")]
    k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-cell power limits; one value is repeated for every cell.
    #[arg(long, value_delimiter = ',')]
    power: Vec<f64>,
    /// Per-cell noise variances; one value is repeated for every cell.
    #[arg(long, value_delimiter = ',')]
    noise: Vec<f64>,
    #[arg(long, value_enum, conflicts_with_all = ["m", "k"])]
    preset: Option<Preset>,
    /// Output file; stdout when absent.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ScenarioSource {
    /// Scenario JSON file.
    #[arg(required_unless_present = "preset")]
    scenario: Option<PathBuf>,
    /// Generate the scenario from a preset and `--seed` instead of reading a file.
    #[arg(long, value_enum, conflicts_with = "scenario")]
    preset: Option<Preset>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl ScenarioSource {
    fn load(&self) -> Result<(Scenario, String), String> {
        match (&self.scenario, self.preset) {
            (_, Some(p)) => {
                let (m, k, powers, noise) = p.shape();
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                let s = Scenario::random_cscg(m, k, powers, noise, &mut rng).map_err(|e| e.to_string())?;
                Ok((s, format!("preset paper-sec5, seed {}", self.seed)))
            }
            (Some(path), None) => {
                let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
                let s = Scenario::from_json(&text).map_err(|e| format!("{}: {e}", path.display()))?;
                Ok((s, path.display().to_string()))
            }
            (None, None) => Err("no scenario given".into()),
        }
    }
}

#[derive(Args)]
struct FeasibleArgs {
    #[command(flatten)]
    source: ScenarioSource,
    /// SNR targets beta_1..beta_M (linear).
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["alpha", "r0"])]
    targets: Option<Vec<f64>>,
    /// Rate profile alpha_1..alpha_M; used with `--r0`.
    #[arg(long, value_delimiter = ',', requires = "r0")]
    alpha: Option<Vec<f64>>,
    /// Sum rate for `--alpha`; targets become base^(alpha_i r0) - 1.
    #[arg(long, requires = "alpha")]
    r0: Option<f64>,
    #[arg(long, default_value = "apb")]
    algorithm: Algorithm,
    #[arg(long, default_value_t = 0.002)]
    eps: f64,
    #[arg(long, default_value_t = 0.1)]
    xi: f64,
    #[arg(long, default_value_t = 2000)]
    max_rounds: usize,
    /// Logarithm base of rates: 2 (bits) or e (nats).
    #[arg(long, default_value = "2")]
    log_base: LogBase,
    /// Per-round trace CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct BoundaryArgs {
    #[command(flatten)]
    source: ScenarioSource,
    /// Points per simplex edge of the rate-profile grid.
    #[arg(long, default_value_t = 11)]
    alpha_grid: usize,
    /// Bisection bracket width, in rate units.
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    /// apb, cpb, or oracle (two single-antenna cells only).
    #[arg(long, default_value = "cpb")]
    algorithm: Solver,
    #[arg(long, default_value_t = 0.002)]
    eps: f64,
    #[arg(long, default_value_t = 0.1)]
    xi: f64,
    /// Round limit of each feasibility run inside the bisection.
    #[arg(long, default_value_t = 300)]
    max_rounds: usize,
    #[arg(long, default_value = "2")]
    log_base: LogBase,
    /// Boundary CSV; stdout when absent.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Feasible(a) => feasible(a),
        Command::Boundary(a) => boundary(a),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_INPUT)
        }
    }
}

fn per_cell(name: &str, given: &[f64], m: usize, default: f64) -> Result<Vec<f64>, String> {
    match given.len() {
        0 => Ok(vec![default; m]),
        1 => Ok(vec![given[0]; m]),
        n if n == m => Ok(given.to_vec()),
        n => Err(format!("--{name} has {n} values, expected 1 or M = {m}")),
    }
}

fn write_out(path: Option<&Path>, bytes: &[u8]) -> Result<(), String> {
    match path {
        Some(p) => fs::write(p, bytes).map_err(|e| format!("{}: {e}", p.display())),
        None => io::stdout().write_all(bytes).map_err(|e| e.to_string()),
    }
}

fn gen(a: GenArgs) -> Result<u8, String> {
    let (m, k, powers, noise) = match a.preset {
        Some(p) => {
            let (m, k, powers, noise) = p.shape();
            let powers = if a.power.is_empty() {
                powers
            } else {
                per_cell("power", &a.power, m, 1.0)?
            };
            let noise = if a.noise.is_empty() {
                noise
            } else {
                per_cell("noise", &a.noise, m, 1.0)?
            };
            (m, k, powers, noise)
        }
        None => {
            let m = a.m.expect("required by clap");
            let k = a.k.expect("required by clap");
            if m == 0 || k == 0 {
                return Err("M and K must be at least 1".into());
            }
            (
                m,
                k,
                per_cell("power", &a.power, m, 1.0)?,
                per_cell("noise", &a.noise, m, 1.0)?,
            )
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let s = Scenario::random_cscg(m, k, powers, noise, &mut rng).map_err(|e| e.to_string())?;
    let mut text = s.to_json();
    text.push('\n');
    write_out(a.output.as_deref(), text.as_bytes())?;
    Ok(0)
}

fn thresholds(eps: f64, xi: f64, max_rounds: usize) -> Result<DecisionThresholds, String> {
    let th = DecisionThresholds {
        eps,
        xi,
        max_rounds,
        ..Default::default()
    };
    th.validate().map_err(|e| e.to_string())?;
    Ok(th)
}

fn header(command: &str, scenario: &Scenario, origin: &str, settings: &[(&str, String)]) {
    println!("# misobf {VERSION}");
    println!("# command: {command}");
    println!(
        "# scenario: {origin} (M = {}, K = {}, powers = {:?}, noise = {:?})",
        scenario.cells(),
        scenario.antennas(),
        scenario.powers(),
        scenario.noise_vars()
    );
    for (k, v) in settings {
        println!("# {k}: {v}");
    }
}

fn feasible(a: FeasibleArgs) -> Result<u8, String> {
    let (s, origin) = a.source.load()?;
    let m = s.cells();
    let target = match (&a.targets, &a.alpha, a.r0) {
        (Some(b), _, _) => FeasibilityTarget::from_betas(b.clone()),
        (None, Some(al), Some(r0)) => RateProfile::new(al.clone()).and_then(|p| make_betas(&p, r0, a.log_base)),
        _ => return Err("give --targets or both --alpha and --r0".into()),
    }
    .map_err(|e| e.to_string())?;
    if target.betas.len() != m {
        return Err(format!("{} targets for M = {m}", target.betas.len()));
    }
    let th = thresholds(a.eps, a.xi, a.max_rounds)?;
    let pcfg = ProjectionConfig::default();
    let instance = LiftedInstance::build(&s, &target).map_err(|e| e.to_string())?;
    let out = simulate(&instance, a.algorithm, &th, &pcfg).map_err(|e| e.to_string())?;

    header(
        "feasible",
        &s,
        &origin,
        &[
            ("algorithm", a.algorithm.to_string()),
            ("targets", format!("{:?}", target.betas)),
            ("eps", a.eps.to_string()),
            ("xi", a.xi.to_string()),
            ("max_rounds", a.max_rounds.to_string()),
            ("log_base", log_base_name(a.log_base).into()),
            ("seed", a.source.seed.to_string()),
        ],
    );
    let report = &out.report;
    let (code, snrs) = match &report.verdict {
        Verdict::Feasible { beamformers, .. } => (0, compute_sinrs(&s, beamformers).map_err(|e| e.to_string())?),
        Verdict::Infeasible { .. } => (EXIT_INFEASIBLE, last_snrs(report, m)),
        Verdict::Timeout { .. } => (EXIT_TIMEOUT, last_snrs(report, m)),
    };
    println!("verdict: {}", report.verdict.label());
    if let Verdict::Infeasible { cause, residuals } = &report.verdict {
        match cause {
            InfeasibleCause::Threshold => println!("residuals: {residuals:?}"),
            InfeasibleCause::EmptyCell(i) => println!("cause: cell {} cannot meet its target alone", i + 1),
        }
    }
    println!("rounds: {}", report.rounds);
    println!("messages: {}", out.log.messages);
    for (i, snr) in snrs.iter().enumerate() {
        println!("cell {}: snr = {snr:.6}, target = {}", i + 1, target.betas[i]);
    }
    if let Some(path) = &a.trace {
        write_trace(path, report)?;
    }
    Ok(code)
}

fn last_snrs(report: &RunReport, m: usize) -> Vec<f64> {
    report
        .trace
        .last()
        .map(|t| t.snr.clone())
        .unwrap_or_else(|| vec![0.0; m])
}

fn log_base_name(b: LogBase) -> &'static str {
    match b {
        LogBase::Two => "2",
        LogBase::E => "e",
    }
}

fn write_trace(path: &Path, report: &RunReport) -> Result<(), String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| e.to_string();
    w.write_record(["round", "cell", "v_i", "snr_achieved", "x_delta"])
        .map_err(csv_err)?;
    for t in &report.trace {
        for (i, (v, snr)) in t.v.iter().zip(&t.snr).enumerate() {
            w.write_record([
                t.round.to_string(),
                (i + 1).to_string(),
                v.to_string(),
                snr.to_string(),
                t.x_delta.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| e.to_string())?;
    write_out(Some(path), &bytes)
}

fn boundary(a: BoundaryArgs) -> Result<u8, String> {
    let (s, origin) = a.source.load()?;
    let m = s.cells();
    let alphas = RateProfile::simplex_grid(m, a.alpha_grid).map_err(|e| e.to_string())?;
    let th = thresholds(a.eps, a.xi, a.max_rounds)?;
    let cfg = BisectionConfig {
        tol: a.tol,
        solver: a.algorithm,
        base: a.log_base,
        max_rounds: a.max_rounds,
        ..Default::default()
    };
    let points = sweep_boundary(&s, &alphas, &cfg, &th, &ProjectionConfig::default()).map_err(|e| e.to_string())?;

    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| e.to_string();
    let mut cols: Vec<String> = (1..=m).map(|i| format!("alpha_{i}")).collect();
    cols.push("r_sum".into());
    cols.extend((1..=m).map(|i| format!("R_{i}")));
    w.write_record(&cols).map_err(csv_err)?;
    for p in &points {
        let mut row: Vec<String> = p.alpha.as_slice().iter().map(f64::to_string).collect();
        row.push(p.r_sum.to_string());
        row.extend(p.rates.as_slice().iter().map(f64::to_string));
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| e.to_string())?;

    match &a.output {
        Some(path) => {
            write_out(Some(path), &bytes)?;
            header(
                "boundary",
                &s,
                &origin,
                &[
                    ("algorithm", a.algorithm.to_string()),
                    ("alpha_grid", a.alpha_grid.to_string()),
                    ("tol", a.tol.to_string()),
                    ("eps", a.eps.to_string()),
                    ("xi", a.xi.to_string()),
                    ("max_rounds", a.max_rounds.to_string()),
                    ("log_base", log_base_name(a.log_base).into()),
                    ("seed", a.source.seed.to_string()),
                ],
            );
            let timeouts: usize = points.iter().map(|p| p.timeouts).sum();
            let flagged = points.iter().filter(|p| p.dominated || p.non_monotone).count();
            println!("points: {}", points.len());
            println!("timeouts: {timeouts}");
            println!("flagged: {flagged}");
            println!("output: {}", path.display());
        }
        None => write_out(None, &bytes)?,
    }
    Ok(0)
}
