use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use acoupler::estimator::EstimatorMode;
use acoupler::experiment::{
    compute_reference, num, report_dir, run_sweep, spoke_samples, write_reference, write_report, write_spokes, Baseline,
    Case, ExperimentConfig,
};
use acoupler::solver::SolveConfig;
use acoupler::verify::{run_suite, Fault, VerifyOptions};
use acoupler::Error;

#[derive(Parser)]
#[command(name = "acoupler", version, about = "Adaptive atomistic/continuum coupling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Adaptive runs for every sweep entry
    Run(RunArgs),
    /// Fully atomistic reference solution
    Reference(RunArgs),
    /// Invariant suite
    Verify {
        /// Only checks whose name contains this string
        #[arg(long)]
        filter: Option<String>,
        /// Corrupt the reconstruction table (every reconstructed diagonal set to 0.5)
        #[arg(long)]
        inject_fault: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Per-run slopes and efficiency ranges from the manifests in a directory
    Report {
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// micro-crack, screw, multi-vacancy or defect-free
    #[arg(long)]
    case: Option<String>,
    /// original, direct, blended or coarsening (comma separated)
    #[arg(long, value_delimiter = ',')]
    mode: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    rbuf: Vec<i32>,
    #[arg(long, value_delimiter = ',')]
    rbld: Vec<f64>,
    /// original, coarsening or graded (comma separated)
    #[arg(long, value_delimiter = ',')]
    baseline: Vec<String>,
    #[arg(long)]
    radius: Option<i32>,
    #[arg(long)]
    nmax: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    snapshots: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Reference file written by `acoupler reference`
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Skip true errors
    #[arg(long)]
    no_error: bool,
}

impl RunArgs {
    fn config(&self, sweep: bool) -> acoupler::Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = &self.case {
            c.case = Case::parse(s)?;
        }
        if !self.mode.is_empty() {
            c.modes = self.mode.iter().map(|m| EstimatorMode::parse(m)).collect::<acoupler::Result<_>>()?;
        }
        if !self.rbuf.is_empty() {
            c.rbuf = self.rbuf.clone();
        }
        if !self.rbld.is_empty() {
            c.rbld = self.rbld.clone();
        }
        for b in &self.baseline {
            let b = match b.as_str() {
                "original" => Baseline::Original,
                "coarsening" => Baseline::Coarsening,
                "graded" => Baseline::Graded,
                _ => return Err(Error::Config(format!("unknown baseline `{b}`"))),
            };
            if !c.baselines.contains(&b) {
                c.baselines.push(b);
            }
        }
        if let Some(r) = self.radius {
            c.radius = r;
        }
        if let Some(n) = self.nmax {
            c.nmax = n;
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(o) = &self.out {
            c.out = o.clone();
        }
        if let Some(r) = &self.reference {
            c.reference = Some(r.clone());
        }
        c.snapshots |= self.snapshots;
        c.no_error |= self.no_error;
        if sweep {
            c.validate()?;
        } else if c.radius < 1 || c.radius > 300 {
            return Err(acoupler::Error::Config(format!("radius {} out of range", c.radius)));
        }
        Ok(c)
    }
}

fn exit_for(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    match e {
        Error::Config(_) | Error::Io(_) => ExitCode::from(2),
        _ => ExitCode::from(3),
    }
}

fn cmd_run(args: &RunArgs) -> acoupler::Result<ExitCode> {
    let cfg = args.config(true)?;
    let outcome = run_sweep(&cfg)?;
    println!("{:<28} {:>6} {:>8} {:>24} {:>24}", "run", "steps", "N", "error", "rho");
    for (spec, steps) in &outcome.runs {
        let last = steps.last();
        println!(
            "{:<28} {:>6} {:>8} {:>24} {:>24}",
            spec.id,
            steps.len(),
            last.map_or(0, |s| s.n),
            last.and_then(|s| s.error).map(num).unwrap_or_else(|| "-".into()),
            last.map(|s| num(s.rho)).unwrap_or_default()
        );
    }
    println!("summary: {}", cfg.out.join("summary.csv").display());
    if outcome.failed.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("solver failed in {}", outcome.failed.join(", "));
        Ok(ExitCode::from(3))
    }
}

fn cmd_reference(args: &RunArgs) -> acoupler::Result<ExitCode> {
    let cfg = args.config(false)?;
    let defect = cfg.defect();
    let r = compute_reference(&defect, cfg.radius, &SolveConfig::default())?;
    std::fs::create_dir_all(&cfg.out)?;
    let path = cfg.out.join(format!("reference_{}_R{}.csv", cfg.case.as_str(), cfg.radius));
    let mut w = BufWriter::new(File::create(&path)?);
    write_reference(&mut w, &defect, &r)?;
    w.flush()?;
    let spokes = cfg.out.join(format!("spokes_{}_R{}.csv", cfg.case.as_str(), cfg.radius));
    write_spokes(BufWriter::new(File::create(&spokes)?), &spoke_samples(&r.lattice, &r.u))?;
    println!("reference: {}", path.display());
    println!("spokes: {}", spokes.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(filter: Option<String>, fault: bool, seed: u64) -> acoupler::Result<ExitCode> {
    let opts = VerifyOptions { seed, filter, fault: fault.then_some(Fault::HalfDiagonal) };
    let results = run_suite(&opts)?;
    if results.is_empty() {
        return Err(Error::Config("the filter matches no check".into()));
    }
    println!("{:<20} {:<6} {:>24} {:>24}  detail", "check", "result", "value", "tolerance");
    for r in &results {
        let verdict = if r.passed { "pass" } else { "FAIL" };
        println!("{:<20} {:<6} {:>24} {:>24}  {}", r.name, verdict, num(r.value), num(r.tolerance), r.detail);
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    if failed.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        println!("failed: {}", failed.join(", "));
        Ok(ExitCode::from(1))
    }
}

fn cmd_report(out: &PathBuf) -> acoupler::Result<ExitCode> {
    let reports = report_dir(out)?;
    if reports.is_empty() {
        return Err(Error::Config(format!("no manifest below {}", out.display())));
    }
    write_report(std::io::stdout().lock(), &reports)?;
    write_report(BufWriter::new(File::create(out.join("report.csv"))?), &reports)?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Reference(a) => cmd_reference(a),
        Command::Verify { filter, inject_fault, seed } => cmd_verify(filter.clone(), *inject_fault, *seed),
        Command::Report { out } => cmd_report(out),
    };
    result.unwrap_or_else(|e| exit_for(&e))
}
