//! `ccstat` command line.

use std::ffi::OsString;
use std::path::PathBuf;

use ccstat_core::demo::{cwh_disturbance, cwh_problem, CWH_ALPHA, CWH_HORIZON, CWH_X0};
use ccstat_core::dynamics::CwhParameters;
use ccstat_core::solver::Status;
use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;

use crate::error::{exit, Error, Result};
use crate::experiment::{
    self, certification_seed, default_sample_count, CertifyConfig, ExperimentConfig, Method, RunOutcome, SampleSource,
};
use crate::problem::{Disturbance, Problem};
use crate::report::{self, CertificationFile, SolutionFile};
use crate::{parallel, samples, tables};

#[derive(Debug, Parser)]
#[command(
    name = "ccstat",
    version,
    about = "Chance-constrained open-loop planning from disturbance samples"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Plan with one method, certify the result and write the artifacts.
    Solve(SolveArgs),
    /// Monte-Carlo certification of a stored solution.
    Certify(CertifyArgs),
    /// Print f(lambda) for several sample counts.
    BoundTable(BoundTableArgs),
    /// Write the satellite rendezvous problem file.
    MakeCwh(MakeCwhArgs),
    /// Run several methods on one problem and tabulate them.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Number of samples to draw, or a sample file (.csv or binary) to load.
    #[arg(long)]
    pub samples: Option<String>,
    /// Seed for drawing samples.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Certification draws; 0 skips certification.
    #[arg(long, default_value_t = 100_000)]
    pub trials: u64,
    /// Certification seed; defaults to the bitwise complement of --seed.
    #[arg(long)]
    pub cert_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long, required_unless_present = "config")]
    pub problem: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Method::Proposed)]
    pub method: Method,
    #[command(flatten)]
    pub sampling: SampleArgs,
    /// Also write the drawn samples here.
    #[arg(long)]
    pub save_samples: Option<PathBuf>,
    /// Experiment file; replaces the other options.
    #[arg(long, conflicts_with_all = ["problem", "save_samples"])]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CertifyArgs {
    #[arg(long)]
    pub problem: PathBuf,
    /// A solution.json written by `solve`.
    #[arg(long)]
    pub solution: PathBuf,
    #[arg(long, default_value_t = 100_000)]
    pub trials: u64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BoundTableArgs {
    /// Sample counts, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [10usize, 100, 1000])]
    pub samples: Vec<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub lambda_lo: f64,
    #[arg(long, default_value_t = 6.0)]
    pub lambda_hi: f64,
    #[arg(long, default_value_t = 51)]
    pub points: usize,
    /// Directory for bounds.csv and thresholds.csv instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MakeCwhArgs {
    #[arg(long, default_value_t = CWH_ALPHA)]
    pub alpha: f64,
    #[arg(long, default_value_t = CWH_HORIZON)]
    pub horizon: usize,
    /// Start state, six comma-separated values.
    #[arg(long, value_delimiter = ',')]
    pub x0: Option<Vec<f64>>,
    /// Deputy mass.
    #[arg(long, default_value_t = CwhParameters::default().mass)]
    pub mass: f64,
    /// Sampling time.
    #[arg(long, default_value_t = CwhParameters::default().dt)]
    pub dt: f64,
    /// Gravitational parameter.
    #[arg(long, default_value_t = CwhParameters::default().mu)]
    pub mu: f64,
    /// Chief orbital radius.
    #[arg(long, default_value_t = CwhParameters::default().orbital_radius)]
    pub radius: f64,
    #[arg(long, default_value = "cwh_demo.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub problem: PathBuf,
    /// Methods to run, comma separated.
    #[arg(long = "method", value_enum, value_delimiter = ',', default_values_t = Method::ALL)]
    pub methods: Vec<Method>,
    #[command(flatten)]
    pub sampling: SampleArgs,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

impl SampleArgs {
    fn source(&self, problem: &Problem) -> Result<SampleSource> {
        match &self.samples {
            None => Ok(SampleSource::Generate {
                count: default_sample_count(problem)?,
                seed: self.seed,
            }),
            Some(s) => match s.parse::<usize>() {
                Ok(count) => Ok(SampleSource::Generate { count, seed: self.seed }),
                Err(_) => Ok(SampleSource::Load { path: s.into() }),
            },
        }
    }

    fn certify(&self) -> Option<CertifyConfig> {
        (self.trials > 0).then(|| CertifyConfig {
            trials: self.trials,
            seed: self.cert_seed.unwrap_or_else(|| certification_seed(self.seed)),
        })
    }
}

/// The CWH problem file for the given arguments, with its disturbance model.
pub fn make_cwh(args: &MakeCwhArgs) -> Result<Problem> {
    let params = CwhParameters {
        mu: args.mu,
        orbital_radius: args.radius,
        mass: args.mass,
        dt: args.dt,
    };
    let x0 = args.x0.clone().unwrap_or_else(|| CWH_X0.to_vec());
    if x0.len() != 6 {
        return Err(Error::Usage(format!("--x0 needs 6 values, got {}", x0.len())));
    }
    let spec = cwh_problem(&params, args.alpha, args.horizon, DVector::from_vec(x0))?;
    let model = cwh_disturbance(args.horizon, 0);
    Ok(Problem {
        spec,
        disturbance: Some(Disturbance {
            mean: model.mean().clone(),
            covariance: model.covariance().clone(),
        }),
    })
}

fn outcome_code(outcomes: &[RunOutcome]) -> i32 {
    for o in outcomes {
        if o.status == Status::Infeasible {
            return exit::INFEASIBLE;
        }
    }
    if outcomes.iter().any(|o| o.status == Status::IterLimit) {
        return exit::ITER_LIMIT;
    }
    exit::OK
}

fn solve(args: &SolveArgs) -> Result<i32> {
    let outcome = if let Some(path) = &args.config {
        experiment::run(&ExperimentConfig::load(path)?)?
    } else {
        let path = args.problem.as_ref().expect("clap requires --problem without --config");
        let problem = Problem::load(path)?;
        let (set, seed) = if args.method.uses_samples() {
            let source = args.sampling.source(&problem)?;
            let set = experiment::draw_samples(&problem, &source)?;
            if let Some(p) = &args.save_samples {
                samples::save(p, &set)?;
            }
            let seed = matches!(source, SampleSource::Generate { .. }).then_some(args.sampling.seed);
            (Some(set), seed)
        } else {
            (None, None)
        };
        experiment::run_plan(
            &problem,
            args.method,
            set.as_ref(),
            seed,
            args.sampling.certify(),
            &args.out,
        )?
    };
    print!("{}", report::format_summary(std::slice::from_ref(&outcome.summary)));
    if let Some(c) = &outcome.certification {
        match c.worst_row() {
            Some((row, rate)) if rate > 0.0 => println!("worst row {row}: violation rate {rate:.2e}"),
            _ => println!("no row violated in {} draws", c.trials),
        }
    }
    Ok(outcome_code(std::slice::from_ref(&outcome)))
}

fn certify(args: &CertifyArgs) -> Result<i32> {
    let problem = Problem::load(&args.problem)?;
    let sol = SolutionFile::load(&args.solution)?;
    let model = problem.model(args.seed)?;
    let rep = parallel::certify(&problem.spec, &sol.input(), &model, args.trials, args.seed)?;
    std::fs::create_dir_all(&args.out).map_err(crate::error::io_err(&args.out))?;
    CertificationFile::from(&rep).save(&args.out.join("certification.json"))?;
    report::write_violations(&args.out.join("violations.csv"), &rep)?;
    println!(
        "joint satisfaction {:.4} over {} draws ({} violations, stderr {:.1e})",
        rep.joint_satisfaction, rep.trials, rep.violations, rep.stderr
    );
    Ok(exit::OK)
}

fn bound_table(args: &BoundTableArgs) -> Result<i32> {
    let table = tables::bound_table(&args.samples, args.lambda_lo, args.lambda_hi, args.points)?;
    match &args.out {
        Some(dir) => table.save(dir)?,
        None => print!("{}\n{}", table.to_csv(), table.thresholds_csv()),
    }
    Ok(exit::OK)
}

fn compare(args: &CompareArgs) -> Result<i32> {
    let problem = Problem::load(&args.problem)?;
    let source = args.sampling.source(&problem)?;
    let outcomes = experiment::compare(&problem, &args.methods, &source, args.sampling.certify(), &args.out)?;
    let rows: Vec<_> = outcomes.iter().map(|o| o.summary.clone()).collect();
    print!("{}", report::format_summary(&rows));
    Ok(outcome_code(&outcomes))
}

pub fn execute(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Solve(a) => solve(a),
        Command::Certify(a) => certify(a),
        Command::BoundTable(a) => bound_table(a),
        Command::MakeCwh(a) => {
            make_cwh(a)?.save(&a.out)?;
            println!("wrote {}", a.out.display());
            Ok(exit::OK)
        }
        Command::Compare(a) => compare(a),
    }
}

/// Parse `args`, run, report errors on stderr and return the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::USAGE } else { exit::OK };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if let Some(h) = e.hint() {
                eprintln!("hint: {h}");
            }
            e.exit_code()
        }
    }
}
