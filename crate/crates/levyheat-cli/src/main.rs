//! `levyheat`: experiment runner for the stochastic heat equation laboratory.
//!
//! Exit status: 0 success, 2 invalid configuration, 3 statistical failure
//! (void fit or failed reference gate), 4 failed identity check, 1 anything
//! else. The output directory is `--out`, else `$LEVYHEAT_OUT`, else the
//! config's `[output] dir`.

mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Parser, Subcommand};
use levyheat::checks::{self, operator_checks};
use levyheat::harness::{Campaign, ErrorTable, RatioOutcome, Rung};
use levyheat::malliavin::IdentityReport;
use levyheat::noise::sample_path;
use levyheat::solver::Scheme;
use log::info;

use config::{Loaded, ValidationError};

/// Environment variable overriding the output directory.
pub const OUT_ENV: &str = "LEVYHEAT_OUT";

#[derive(Parser, Debug)]
#[command(
    name = "levyheat",
    version,
    about = "Stochastic heat equation with jump noise: solver, rate studies, identity checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides `[mc] seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; overrides `[mc] workers`. 1 runs sequentially.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory; overrides `$LEVYHEAT_OUT` and `[output] dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// One sample path through the scheme; writes `trajectory.txt` (M+1 rows).
    Solve,
    /// Strong error sweeps; writes `strong_rates.csv`.
    StrongRates,
    /// Weak error sweeps for every `[[functional]]`; writes `weak_rates.csv`.
    WeakRates,
    /// Weak/strong slope ratios; writes `ratio.csv` and `ratio.txt`.
    Ratio,
    /// Covariance error sweeps; writes `covariance.csv`.
    Covariance,
    /// Malliavin identity and regularity checks; writes `malliavin_report.txt`.
    MalliavinVerify,
    /// Semigroup and FEM operator estimates; writes `operator_report.txt`.
    OperatorChecks,
    /// Prints the plan without computing anything.
    Describe,
}

enum Failure {
    Validation(ValidationError),
    Statistical(String),
    Identity(String),
    Other(anyhow::Error),
}

impl From<ValidationError> for Failure {
    fn from(e: ValidationError) -> Self {
        Failure::Validation(e)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Statistical(msg)) => {
            eprintln!("statistical failure: {msg}");
            ExitCode::from(3)
        }
        Err(Failure::Identity(msg)) => {
            eprintln!("identity check failed: {msg}");
            ExitCode::from(4)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn out_dir(cli: &Cli, loaded: Option<&Loaded>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .or_else(|| loaded.map(|l| PathBuf::from(&l.config.output.dir)))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn header(hash: Option<&str>, seed: u64) -> String {
    let mut s = String::new();
    if let Some(h) = hash {
        let _ = writeln!(s, "# config_hash={h}");
    }
    let _ = writeln!(s, "# seed={seed}");
    s
}

fn write_artifact(dir: &Path, name: &str, body: &str) -> anyhow::Result<PathBuf> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
    info!("wrote {}", path.display());
    Ok(path)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if cli.command == Command::OperatorChecks && cli.config.is_none() {
        return operator(cli, None);
    }
    let path = cli.config.as_ref().ok_or_else(|| {
        ValidationError(anyhow::anyhow!(
            "--config <path> is required for this subcommand"
        ))
    })?;
    let loaded = config::load(path, cli.seed, cli.workers)?;
    let started = Instant::now();
    let result = match cli.command {
        Command::Solve => solve(cli, &loaded),
        Command::StrongRates => rates(
            cli,
            &loaded,
            Estimators {
                strong: true,
                weak: false,
                covariance: false,
            },
            "strong_rates.csv",
        ),
        Command::WeakRates => rates(
            cli,
            &loaded,
            Estimators {
                strong: false,
                weak: true,
                covariance: false,
            },
            "weak_rates.csv",
        ),
        Command::Ratio => ratio(cli, &loaded),
        Command::Covariance => rates(
            cli,
            &loaded,
            Estimators {
                strong: false,
                weak: false,
                covariance: true,
            },
            "covariance.csv",
        ),
        Command::MalliavinVerify => malliavin(cli, &loaded),
        Command::OperatorChecks => operator(cli, Some(&loaded)),
        Command::Describe => describe(&loaded),
    };
    info!("{:?} finished in {:.1?}", cli.command, started.elapsed());
    result
}

fn solve(cli: &Cli, l: &Loaded) -> Result<(), Failure> {
    let c = &l.config;
    let disc = c.solve_discretization().map_err(ValidationError)?;
    let index = c.solve.as_ref().map_or(0, |s| s.path);
    let problem = c.problem().map_err(ValidationError)?;
    let model = c.model().map_err(ValidationError)?;
    let scheme = Scheme::new(problem, disc).context("building the scheme")?;
    let path = sample_path(&model, problem.horizon, l.seed, index);
    let rec = scheme.run(&path).context("running the scheme")?;
    let mut body = header(Some(&l.hash), l.seed);
    let _ = writeln!(body, "# path={index} jumps={}", path.len());
    body.push_str(&rec.to_text());
    let p = write_artifact(&out_dir(cli, Some(l)), "trajectory.txt", &body)?;
    println!("{} rows -> {}", rec.len(), p.display());
    Ok(())
}

#[derive(Clone, Copy)]
struct Estimators {
    strong: bool,
    weak: bool,
    covariance: bool,
}

fn campaign(l: &Loaded, est: Estimators) -> Result<Campaign, Failure> {
    let c = &l.config;
    let mut campaign = c.campaign(l.seed, l.exec).map_err(ValidationError)?;
    campaign.strong = est.strong;
    if est.weak {
        campaign.functionals = c.functionals().map_err(ValidationError)?;
        if campaign.functionals.is_empty() {
            return Err(ValidationError(anyhow::anyhow!(
                "this subcommand needs at least one [[functional]]"
            ))
            .into());
        }
    }
    if est.covariance {
        campaign.covariance = c.covariance_spec().map_err(ValidationError)?;
        if campaign.covariance.is_none() {
            return Err(ValidationError(anyhow::anyhow!(
                "`covariance` needs a [covariance] table"
            ))
            .into());
        }
    }
    Ok(campaign)
}

fn run_table(l: &Loaded, campaign: &Campaign) -> Result<ErrorTable, Failure> {
    let mut table = campaign.run().context("running the campaign")?;
    let gate = l.config.discretization.reference.gate_samples;
    if gate > 0 {
        table.apply_gate(campaign.gate(gate).context("running the reference gate")?);
    }
    table.meta.config_hash = Some(l.hash.clone());
    Ok(table)
}

/// Void fits and a failed gate are statistical failures.
fn table_verdict(table: &ErrorTable) -> Result<(), Failure> {
    let void: Vec<String> = table
        .fits
        .iter()
        .filter_map(|f| {
            f.fit
                .as_ref()
                .err()
                .map(|e| format!("{} {}: {e}", f.sweep, f.estimator))
        })
        .collect();
    let mut problems = void;
    if let Err(e) = table.require_gate() {
        if table.gate.is_some() {
            problems.push(e.to_string());
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Failure::Statistical(problems.join("; ")))
    }
}

fn summarize(table: &ErrorTable) {
    for f in &table.fits {
        match &f.fit {
            Ok(fit) => println!(
                "{:<9} {:<24} slope {:.4}  R² {:.4}",
                f.sweep, f.estimator, fit.slope, fit.r2
            ),
            Err(e) => println!("{:<9} {:<24} unavailable: {e}", f.sweep, f.estimator),
        }
    }
    if let Some(g) = &table.gate {
        println!("{g}");
    }
}

fn rates(cli: &Cli, l: &Loaded, est: Estimators, file: &str) -> Result<(), Failure> {
    let campaign = campaign(l, est)?;
    let table = run_table(l, &campaign)?;
    let p = write_artifact(&out_dir(cli, Some(l)), file, &table.to_csv())?;
    summarize(&table);
    println!("-> {}", p.display());
    table_verdict(&table)
}

fn ratio(cli: &Cli, l: &Loaded) -> Result<(), Failure> {
    let campaign = campaign(
        l,
        Estimators {
            strong: true,
            weak: true,
            covariance: false,
        },
    )?;
    let table = run_table(l, &campaign)?;
    let dir = out_dir(cli, Some(l));
    write_artifact(&dir, "ratio.csv", &table.to_csv())?;
    let mut body = header(Some(&l.hash), l.seed);
    let mut void = Vec::new();
    for ladder in &campaign.ladders {
        for (name, _) in &campaign.functionals {
            let outcome = table.weak_strong_ratio(ladder.mode, &format!("weak:{name}"), "strong");
            let _ = writeln!(
                body,
                "ratio sweep={} functional={name} {outcome}",
                ladder.mode
            );
            if let RatioOutcome::Void(why) = &outcome {
                void.push(format!("{} {name}: {why}", ladder.mode));
            }
        }
    }
    print!("{body}");
    write_artifact(&dir, "ratio.txt", &body)?;
    if let Err(Failure::Statistical(g)) = table_verdict(&table) {
        if table.gate.as_ref().is_some_and(|g| !g.pass()) {
            void.push(g);
        }
    }
    if void.is_empty() {
        Ok(())
    } else {
        Err(Failure::Statistical(void.join("; ")))
    }
}

fn report(reports: &[IdentityReport], hash: Option<&str>, seed: u64) -> String {
    let mut body = header(hash, seed);
    body.push_str(&checks::render(reports));
    body
}

fn identity_verdict(reports: &[IdentityReport]) -> Result<(), Failure> {
    let failed: Vec<&str> = reports
        .iter()
        .filter(|r| !r.pass)
        .map(|r| r.name.as_str())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Identity(failed.join(", ")))
    }
}

fn malliavin(cli: &Cli, l: &Loaded) -> Result<(), Failure> {
    let c = &l.config;
    let mut reports = c
        .malliavin_suite(l.seed, l.exec)
        .run()
        .context("Malliavin checks")?;
    if let Some(r) = c.regularity_suite(l.seed, l.exec) {
        let problem = c.problem().map_err(ValidationError)?;
        let model = c.model().map_err(ValidationError)?;
        reports.extend(r.run(&problem, &model).context("regularity checks")?);
    }
    let body = report(&reports, Some(&l.hash), l.seed);
    print!("{}", checks::render(&reports));
    let p = write_artifact(&out_dir(cli, Some(l)), "malliavin_report.txt", &body)?;
    println!("-> {}", p.display());
    identity_verdict(&reports)
}

fn operator(cli: &Cli, l: Option<&Loaded>) -> Result<(), Failure> {
    let reports = operator_checks().context("operator checks")?;
    let body = report(
        &reports,
        l.map(|l| l.hash.as_str()),
        l.map_or(0, |l| l.seed),
    );
    print!("{}", checks::render(&reports));
    let p = write_artifact(&out_dir(cli, l), "operator_report.txt", &body)?;
    println!("-> {}", p.display());
    identity_verdict(&reports)
}

fn describe(l: &Loaded) -> Result<(), Failure> {
    let c = &l.config;
    let campaign = c.campaign(l.seed, l.exec).map_err(ValidationError)?;
    let horizon = campaign.problem.horizon;
    println!("config_hash {}", l.hash);
    println!(
        "seed {}  samples {}  workers {:?}",
        l.seed, c.mc.samples, l.exec
    );
    println!(
        "problem beta={} T={} drift={:?} initial={:?}",
        campaign.problem.beta, horizon, campaign.problem.drift, campaign.problem.initial
    );
    let m = &campaign.model;
    println!(
        "noise rate={} alpha={} modes={}",
        m.rate(),
        m.alpha(),
        m.k_noise()
    );
    let r = campaign.reference;
    println!(
        "reference N={} M={} ({} work units/sample), gate {} samples against N={} M={}",
        r.modes,
        r.substeps,
        Rung::Reference(r).work_units(),
        c.discretization.reference.gate_samples,
        2 * r.modes,
        2 * r.substeps
    );
    let mut total = Rung::Reference(r).work_units();
    for ladder in &campaign.ladders {
        println!("sweep {} ({} rungs)", ladder.mode, ladder.rungs.len());
        for rung in &ladder.rungs {
            let (h, k) = (rung.h(), rung.k(horizon));
            let relation = if ladder.mode == levyheat::harness::SweepMode::Diagonal {
                "  (k = h²)"
            } else {
                ""
            };
            println!(
                "  {rung}  h={h:.6e} k={k:.6e}  work/sample={}{relation}",
                rung.work_units()
            );
        }
    }
    for rung in campaign.rungs() {
        total += rung.work_units();
    }
    println!(
        "estimated work units: {} per sample, {} total",
        total,
        total as u128 * c.mc.samples as u128
    );
    for f in &c.functional {
        println!(
            "functional {} outer={:?} components={}",
            f.name,
            f.outer,
            f.component.len()
        );
    }
    if let Some(cov) = &c.covariance {
        println!("covariance t1={} t2={}", cov.t1, cov.t2);
    }
    Ok(())
}
