use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use sop_core::convex_oracle::{alpha_from_lambda, solve_convex, ConvexStatus, DEFAULT_MAX_ITERS as CONVEX_MAX_ITERS, DEFAULT_TOL};
use sop_core::csv_io::{self, CsvTable};
use sop_core::experiments::{self, log_space, ClassifyConfig, NoiseType};
use sop_core::instances::{gen_linear_instance, LinearInstance};
use sop_core::numerics::SeededRng;
use sop_core::sop_linear::{run_gd, RunStatus, DEFAULT_GAMMA, DEFAULT_MAX_ITERS as GD_MAX_ITERS};
use sop_core::Error;

/// Sparse over-parameterization experiments. Every command writes CSV to
/// `--out` or stdout.
#[derive(Parser)]
#[command(name = "sop", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a corrupted low-rank instance (or, with --dataset, a noisy blob dataset).
    GenInstance(Opts),
    /// Gradient descent on the over-parameterized linear objective; emits the trajectory.
    Gd(Opts),
    /// Solve the convex program at one λ; emits one solution row.
    Convex(Opts),
    /// GD end points versus convex solutions over an (α, λ) grid.
    ImplicitBias(Opts),
    /// Mean recovery error against λ while varying k, then r.
    LambdaSweep(Opts),
    /// Recovery success rate over a (k, r) grid at fixed λ.
    PhaseTransition(Opts),
    /// Toy classifier under label noise, SOP against plain cross-entropy.
    Classify(Opts),
    /// Classify the least-squares critical point with u = v = 0.
    LandscapeCheck(Opts),
}

/// Flags shared by all commands. A TOML file given by `--config` may set any
/// of them under the same (kebab-case) names; the command line wins.
#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
struct Opts {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; for gen-instance without --dataset, the base name of the four instance files.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    /// Rank; a comma-separated list for the sweeps.
    #[arg(long, value_delimiter = ',')]
    rank: Vec<usize>,
    /// Corruption count k; a comma-separated list for the sweeps.
    #[arg(long, value_delimiter = ',')]
    sparsity: Vec<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Learning-rate ratio; a comma-separated list for implicit-bias.
    #[arg(long, value_delimiter = ',')]
    alpha: Vec<f64>,
    /// ℓ1 weight; a comma-separated list for implicit-bias and lambda-sweep.
    #[arg(long, value_delimiter = ',')]
    lambda: Vec<f64>,
    /// Step size (GD) or base learning rate (classify).
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    noise_rate: Option<f64>,
    #[arg(long)]
    noise_type: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    alpha_u: Option<f64>,
    #[arg(long)]
    alpha_v: Option<f64>,
    #[arg(long)]
    lambda_c: Option<f64>,
    #[arg(long)]
    lambda_b: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Points per log-spaced default grid.
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Fixed rank while k varies (lambda-sweep).
    #[arg(long)]
    fixed_rank: Option<usize>,
    /// Fixed k while the rank varies (lambda-sweep).
    #[arg(long)]
    fixed_sparsity: Option<usize>,
    /// Read the instance written by gen-instance from this base name.
    #[arg(long)]
    instance: Option<PathBuf>,
    /// gen-instance: emit a noisy classification dataset instead.
    #[arg(long)]
    #[serde(default)]
    dataset: bool,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    samples_per_class: Option<usize>,
    #[arg(long)]
    separation: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
}

macro_rules! prefer_cli {
    ($cli:ident, $file:ident; opt: $($o:ident),*; vec: $($v:ident),*) => {
        Opts {
            config: $cli.config,
            dataset: $cli.dataset || $file.dataset,
            $($o: $cli.$o.or($file.$o),)*
            $($v: if $cli.$v.is_empty() { $file.$v } else { $cli.$v },)*
        }
    };
}

impl Opts {
    fn resolve(self) -> Result<Self, Failure> {
        let Some(path) = &self.config else {
            return Ok(self);
        };
        let text = std::fs::read_to_string(path).map_err(|e| Failure::Args(format!("{}: {e}", path.display())))?;
        let file: Opts = toml::from_str(&text).map_err(|e| Failure::Args(format!("{}: {e}", path.display())))?;
        let cli = self;
        Ok(prefer_cli!(cli, file;
            opt: seed, out, trials, n, p, gamma, tau, noise_rate, noise_type, epochs, alpha_u, alpha_v,
                 lambda_c, lambda_b, epsilon, grid, max_iters, fixed_rank, fixed_sparsity, instance,
                 classes, dim, samples_per_class, separation, hidden;
            vec: rank, sparsity, alpha, lambda))
    }

    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    fn gamma(&self) -> f64 {
        self.gamma.unwrap_or(DEFAULT_GAMMA)
    }

    fn single<T: Copy>(what: &str, values: &[T], default: T) -> Result<T, Failure> {
        match values {
            [] => Ok(default),
            [x] => Ok(*x),
            _ => Err(Failure::Args(format!("--{what} takes a single value for this command"))),
        }
    }

    fn instance(&self) -> Result<LinearInstance, Failure> {
        if let Some(base) = &self.instance {
            return Ok(csv_io::read_instance(base)?);
        }
        let rank = Self::single("rank", &self.rank, 3)?;
        let k = Self::single("sparsity", &self.sparsity, 3)?;
        let mut rng = SeededRng::new(self.seed());
        Ok(gen_linear_instance(self.n.unwrap_or(20), self.p.unwrap_or(40), rank, k, &mut rng)?)
    }
}

enum Failure {
    Args(String),
    NotConverged(String),
    Other(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter(_) | Error::DimensionMismatch(_) | Error::Parse(_) => Failure::Args(e.to_string()),
            other => Failure::Other(other.to_string()),
        }
    }
}

fn emit(table: &CsvTable, out: Option<&Path>) -> Result<(), Failure> {
    match out {
        Some(path) => table.write_file(path)?,
        None => table.write_to(std::io::stdout().lock())?,
    }
    Ok(())
}

/// `summary.csv` becomes `summary.<tag>.csv`.
fn sibling(path: &Path, tag: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{tag}.csv"))
}

fn gen_instance(o: &Opts) -> Result<(), Failure> {
    if o.dataset {
        let cfg = classify_config(o)?;
        let (train, _) = experiments::classification_data(&cfg)?;
        return emit(&csv_io::dataset_table(&train)?, o.out.as_deref());
    }
    let base = o
        .out
        .as_deref()
        .ok_or_else(|| Failure::Args("gen-instance needs --out <base>".into()))?;
    csv_io::write_instance(&o.instance()?, base)?;
    Ok(())
}

fn gd(o: &Opts) -> Result<(), Failure> {
    let inst = o.instance()?;
    let gamma = o.gamma();
    let alpha = match (o.alpha.as_slice(), o.lambda.as_slice()) {
        ([], []) => alpha_from_lambda(gamma, 0.1)?,
        ([], l) => alpha_from_lambda(gamma, Opts::single("lambda", l, 0.1)?)?,
        (a, _) => Opts::single("alpha", a, 0.0)?,
    };
    let mut cfg = experiments::flow_tracking_gd_config(&inst, gamma, alpha, o.max_iters.unwrap_or(GD_MAX_ITERS))?;
    if let Some(tau) = o.tau {
        cfg.tau = tau;
    }
    let outcome = run_gd(&inst.j, &inst.y, &cfg)?;
    emit(&csv_io::trajectory_table(&outcome.trajectory, inst.seed)?, o.out.as_deref())?;
    match outcome.status {
        RunStatus::Converged => Ok(()),
        status => Err(Failure::NotConverged(format!(
            "gradient descent stopped with status {} after {} iterations",
            status.as_str(),
            outcome.state.iter
        ))),
    }
}

fn convex(o: &Opts) -> Result<(), Failure> {
    let inst = o.instance()?;
    let lambda = Opts::single("lambda", &o.lambda, 0.1)?;
    let sol = solve_convex(&inst.j, &inst.y, lambda, DEFAULT_TOL, o.max_iters.unwrap_or(CONVEX_MAX_ITERS))?;
    let mut table = CsvTable::new(&csv_io::SOLUTION_HEADER);
    csv_io::push_solution_row(&mut table, &sol, &inst)?;
    emit(&table, o.out.as_deref())?;
    if sol.status != ConvexStatus::Optimal {
        return Err(Failure::NotConverged(format!(
            "convex solver stopped with status {} after {} iterations",
            sol.status.as_str(),
            sol.iterations
        )));
    }
    Ok(())
}

fn implicit_bias(o: &Opts) -> Result<(), Failure> {
    let mut cfg = experiments::ImplicitBiasConfig::default();
    let grid = o.grid.unwrap_or(20);
    cfg.n = o.n.unwrap_or(cfg.n);
    cfg.p = o.p.unwrap_or(cfg.p);
    cfg.rank = Opts::single("rank", &o.rank, cfg.rank)?;
    cfg.sparsity = Opts::single("sparsity", &o.sparsity, cfg.sparsity)?;
    cfg.gamma = o.gamma();
    cfg.alphas = if o.alpha.is_empty() { log_space(4.0, 4000.0, grid) } else { o.alpha.clone() };
    cfg.lambdas = if o.lambda.is_empty() { log_space(1e-4, 1.0, grid) } else { o.lambda.clone() };
    cfg.trials = o.trials.unwrap_or(cfg.trials);
    cfg.seed = o.seed();
    cfg.gd_max_iters = o.max_iters.unwrap_or(cfg.gd_max_iters);
    emit(&experiments::cmd_implicit_bias(&cfg)?, o.out.as_deref())
}

fn lambda_sweep(o: &Opts) -> Result<(), Failure> {
    let mut cfg = experiments::LambdaSweepConfig::default();
    cfg.n = o.n.unwrap_or(cfg.n);
    cfg.p = o.p.unwrap_or(cfg.p);
    if !o.sparsity.is_empty() {
        cfg.ks = o.sparsity.clone();
    }
    if !o.rank.is_empty() {
        cfg.ranks = o.rank.clone();
    }
    cfg.fixed_rank = o.fixed_rank.unwrap_or(cfg.fixed_rank);
    cfg.fixed_k = o.fixed_sparsity.unwrap_or(cfg.fixed_k);
    if !o.lambda.is_empty() {
        cfg.lambdas = o.lambda.clone();
    } else if let Some(g) = o.grid {
        cfg.lambdas = log_space(1e-4, 1.0, g);
    }
    cfg.trials = o.trials.unwrap_or(cfg.trials);
    cfg.seed = o.seed();
    cfg.max_iters = o.max_iters.unwrap_or(cfg.max_iters);
    emit(&experiments::cmd_lambda_sweep(&cfg)?, o.out.as_deref())
}

fn phase_transition(o: &Opts) -> Result<(), Failure> {
    let mut cfg = experiments::PhaseTransitionConfig::default();
    cfg.n = o.n.unwrap_or(cfg.n);
    cfg.p = o.p.unwrap_or(cfg.p);
    if !o.sparsity.is_empty() {
        cfg.ks = o.sparsity.clone();
    }
    if !o.rank.is_empty() {
        cfg.ranks = o.rank.clone();
    }
    cfg.lambda = Opts::single("lambda", &o.lambda, cfg.lambda)?;
    cfg.trials = o.trials.unwrap_or(cfg.trials);
    cfg.seed = o.seed();
    cfg.max_iters = o.max_iters.unwrap_or(cfg.max_iters);
    emit(&experiments::cmd_phase_transition(&cfg)?, o.out.as_deref())
}

fn classify_config(o: &Opts) -> Result<ClassifyConfig, Failure> {
    let mut cfg = ClassifyConfig::default();
    cfg.classes = o.classes.unwrap_or(cfg.classes);
    cfg.dim = o.dim.unwrap_or(cfg.dim);
    cfg.train_per_class = o.samples_per_class.unwrap_or(cfg.train_per_class);
    cfg.test_per_class = cfg.train_per_class / 2;
    cfg.separation = o.separation.unwrap_or(cfg.separation);
    cfg.noise_rate = o.noise_rate.unwrap_or(cfg.noise_rate);
    if let Some(t) = &o.noise_type {
        cfg.noise_type = t.parse::<NoiseType>()?;
    }
    cfg.seed = o.seed();
    let h = &mut cfg.hyper;
    h.tau = o.tau.unwrap_or(h.tau);
    h.epochs = o.epochs.unwrap_or(h.epochs);
    h.alpha_u = o.alpha_u.unwrap_or(h.alpha_u);
    h.alpha_v = o.alpha_v.unwrap_or(h.alpha_v);
    h.lambda_c = o.lambda_c.unwrap_or(h.lambda_c);
    h.lambda_b = o.lambda_b.unwrap_or(h.lambda_b);
    h.epsilon = o.epsilon.unwrap_or(h.epsilon);
    h.hidden = o.hidden.unwrap_or(h.hidden);
    h.validate()?;
    Ok(cfg)
}

fn classify(o: &Opts) -> Result<(), Failure> {
    let out = experiments::cmd_classify(&classify_config(o)?)?;
    emit(&out.summary, o.out.as_deref())?;
    if let Some(path) = &o.out {
        out.sop_history.write_file(&sibling(path, "sop_history"))?;
        out.baseline_history.write_file(&sibling(path, "ce_history"))?;
    }
    for m in [&out.sop, &out.baseline] {
        if m.status != "ok" {
            return Err(Failure::NotConverged(format!("{} training {}", m.method, m.status)));
        }
    }
    Ok(())
}

fn landscape_check(o: &Opts) -> Result<(), Failure> {
    let mut cfg = experiments::LandscapeCheckConfig::default();
    cfg.n = o.n.unwrap_or(cfg.n);
    cfg.p = o.p.unwrap_or(cfg.p);
    cfg.rank = Opts::single("rank", &o.rank, cfg.rank)?;
    cfg.sparsity = Opts::single("sparsity", &o.sparsity, cfg.sparsity)?;
    cfg.trials = o.trials.unwrap_or(cfg.trials);
    cfg.seed = o.seed();
    emit(&experiments::cmd_landscape_check(&cfg)?, o.out.as_deref())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::GenInstance(o) => gen_instance(&o.resolve()?),
        Command::Gd(o) => gd(&o.resolve()?),
        Command::Convex(o) => convex(&o.resolve()?),
        Command::ImplicitBias(o) => implicit_bias(&o.resolve()?),
        Command::LambdaSweep(o) => lambda_sweep(&o.resolve()?),
        Command::PhaseTransition(o) => phase_transition(&o.resolve()?),
        Command::Classify(o) => classify(&o.resolve()?),
        Command::LandscapeCheck(o) => landscape_check(&o.resolve()?),
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on its own for malformed arguments.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Args(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::NotConverged(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
        Err(Failure::Other(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
