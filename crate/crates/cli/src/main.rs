//! `dcfpca`: generate synthetic robust-PCA problems, run the consensus
//! solver, and reproduce the evaluation experiments.
//!
//! Exit codes: 0 on success, 2 for usage and I/O problems, 3 when a run
//! diverges.

mod files;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dcf_pca::eval::{
    default_grids, error_floor, evaluate, k_ablation, phase_sweep, rounds_to_error, sv_report_csv,
    SvReport,
};
use dcf_pca::matrix::DenseMatrix;
use dcf_pca::problem::{generate, RpcaProblem};
use dcf_pca::runtime::{
    comm_cost, default_lambda, estimate_smoothness, run, validate_hyperparams, EtaSchedule,
    Hyperparams, InnerTuning, RunOutput,
};
use dcf_pca::{Error, Result};

#[derive(Parser)]
#[command(
    name = "dcfpca",
    version,
    about = "Distributed robust PCA by consensus factorization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic problem directory
    Generate(GenerateArgs),
    /// Run the round-synchronous consensus solver
    Run(RunArgs),
    /// Evaluate recovered factors against a problem's ground truth
    Eval(EvalArgs),
    /// One recovery per (sparsity, rank) grid cell
    Sweep(SweepArgs),
    /// Re-run one problem varying only the local iteration count K
    Ablate(AblateArgs),
    /// Check hyperparameters without running
    Validate(ValidateArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    m: usize,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    rank: usize,
    #[arg(long)]
    sparsity: f64,
    /// Omitted: drawn from entropy and printed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct ProblemSource {
    /// Problem directory written by `generate`
    #[arg(long, conflicts_with_all = ["m", "n", "rank", "sparsity"])]
    problem: Option<PathBuf>,
    #[arg(long, requires_all = ["n", "rank", "sparsity"])]
    m: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    sparsity: Option<f64>,
}

impl ProblemSource {
    fn resolve(&self, seed: Option<u64>) -> Result<RpcaProblem> {
        if let Some(dir) = &self.problem {
            return files::load_problem(dir);
        }
        match (self.m, self.n, self.rank, self.sparsity) {
            (Some(m), Some(n), Some(r), Some(s)) => {
                let seed = seed.unwrap_or_else(entropy_seed);
                generate(m, n, r, s, seed)
            }
            _ => Err(Error::InvalidParam {
                name: "problem",
                reason: "pass --problem DIR or all of --m --n --rank --sparsity".to_string(),
            }),
        }
    }
}

#[derive(Args, Clone, Default)]
struct HyperArgs {
    /// TOML file with hyperparameter fields; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Factor width p; defaults to the problem's rank
    #[arg(long)]
    rank_bound: Option<usize>,
    /// Client count E
    #[arg(long)]
    clients: Option<usize>,
    /// Local iterations per round
    #[arg(long = "K", alias = "local-iters")]
    local_iters: Option<usize>,
    /// Communication rounds
    #[arg(long = "T", alias = "rounds")]
    rounds: Option<usize>,
    /// Learning-rate schedule: fixed | sqrt | kt
    #[arg(long)]
    schedule: Option<String>,
    /// Rate parameter: the fixed rate, the sqrt-decay numerator, or the
    /// kt constant
    #[arg(long)]
    eta0: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    init_scale: Option<f64>,
    /// Worker threads (default: DCFPCA_WORKERS or all cores)
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    inner_tol: Option<f64>,
    #[arg(long)]
    inner_max_iters: Option<usize>,
    /// Restart the inner solver from zero instead of warm starting
    #[arg(long)]
    cold_start: bool,
}

/// Partial hyperparameter set as read from a config file.
#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct HpPatch {
    rho: Option<f64>,
    lambda: Option<f64>,
    rank_bound: Option<usize>,
    clients: Option<usize>,
    local_iters: Option<usize>,
    rounds: Option<usize>,
    eta: Option<EtaSchedule>,
    seed: Option<u64>,
    init_scale: Option<f64>,
    workers: Option<usize>,
    inner: Option<InnerTuning>,
}

impl HyperArgs {
    /// Assemble the effective configuration: recommended defaults for the
    /// problem, then the config file, then flags.
    fn resolve(&self, problem: &RpcaProblem) -> Result<Hyperparams> {
        let mut hp = Hyperparams::recommended(problem, problem.true_rank);
        hp.seed = problem.seed;

        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            let patch: HpPatch = toml::from_str(&text).map_err(|e| Error::Parse {
                path: path.clone(),
                detail: e.to_string(),
            })?;
            apply_patch(&mut hp, patch);
        }

        if let Some(x) = self.rho {
            hp.rho = x;
        }
        if let Some(x) = self.lambda {
            hp.lambda = x;
        }
        if let Some(x) = self.rank_bound {
            hp.rank_bound = x;
        }
        if let Some(x) = self.clients {
            hp.clients = x;
        }
        if let Some(x) = self.local_iters {
            hp.local_iters = x;
        }
        if let Some(x) = self.rounds {
            hp.rounds = x;
        }
        if self.schedule.is_some() || self.eta0.is_some() {
            let eta0 = self.eta0.unwrap_or(match hp.eta {
                EtaSchedule::Fixed(x) | EtaSchedule::SqrtDecay(x) | EtaSchedule::KtFixed(x) => x,
            });
            hp.eta = match self.schedule.as_deref() {
                Some("fixed") => EtaSchedule::Fixed(eta0),
                Some("sqrt") | None => EtaSchedule::SqrtDecay(eta0),
                Some("kt") => EtaSchedule::KtFixed(eta0),
                Some(other) => {
                    return Err(Error::InvalidParam {
                        name: "schedule",
                        reason: format!("unknown schedule {other:?} (expected fixed|sqrt|kt)"),
                    })
                }
            };
        }
        if let Some(x) = self.seed {
            hp.seed = x;
        }
        if let Some(x) = self.init_scale {
            hp.init_scale = x;
        }
        hp.workers = self
            .workers
            .or_else(|| {
                std::env::var("DCFPCA_WORKERS")
                    .ok()
                    .and_then(|v| v.parse().ok())
            })
            .unwrap_or(hp.workers);
        if let Some(x) = self.inner_tol {
            hp.inner.tol = x;
        }
        if let Some(x) = self.inner_max_iters {
            hp.inner.max_iters = x;
        }
        if self.cold_start {
            hp.inner.warm_start = false;
        }
        Ok(hp)
    }
}

fn apply_patch(hp: &mut Hyperparams, patch: HpPatch) {
    if let Some(x) = patch.rho {
        hp.rho = x;
    }
    if let Some(x) = patch.lambda {
        hp.lambda = x;
    }
    if let Some(x) = patch.rank_bound {
        hp.rank_bound = x;
    }
    if let Some(x) = patch.clients {
        hp.clients = x;
    }
    if let Some(x) = patch.local_iters {
        hp.local_iters = x;
    }
    if let Some(x) = patch.rounds {
        hp.rounds = x;
    }
    if let Some(x) = patch.eta {
        hp.eta = x;
    }
    if let Some(x) = patch.seed {
        hp.seed = x;
    }
    if let Some(x) = patch.init_scale {
        hp.init_scale = x;
    }
    if let Some(x) = patch.workers {
        hp.workers = x;
    }
    if let Some(x) = patch.inner {
        hp.inner = x;
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: ProblemSource,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Output directory for trace.csv and the recovered factors
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Problem directory with the ground truth
    #[arg(long)]
    problem: PathBuf,
    /// Directory holding U_final.dmat, V_final.dmat, S_final.dmat
    #[arg(long)]
    factors: PathBuf,
    /// Where to write the singular-value report
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    m: usize,
    #[arg(long)]
    n: usize,
    /// Comma-separated sparsity levels (default 0.05..0.30)
    #[arg(long)]
    s_grid: Option<String>,
    /// Comma-separated ranks (default 5%..20% of n)
    #[arg(long)]
    r_grid: Option<String>,
    #[command(flatten)]
    hyper: HyperArgs,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    source: ProblemSource,
    /// Comma-separated local-iteration counts
    #[arg(long)]
    k_values: String,
    #[command(flatten)]
    hyper: HyperArgs,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    rho: f64,
    #[arg(long)]
    lambda: f64,
    #[arg(long)]
    m: usize,
    #[arg(long)]
    n: usize,
    /// Also measure the smoothness of a small generated probe problem and
    /// check a fixed learning rate against it
    #[arg(long)]
    eta0: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Run(args) => cmd_run(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Validate(args) => cmd_validate(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Divergence { .. } => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn entropy_seed() -> u64 {
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_nanos() as u64)
        .unwrap_or(0);
    let seed = nanos ^ (std::process::id() as u64) << 32;
    println!("seed = {seed}");
    seed
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let seed = args.seed.unwrap_or_else(entropy_seed);
    let problem = generate(args.m, args.n, args.rank, args.sparsity, seed)?;
    files::save_problem(&problem, &args.out)?;
    let nonzeros = RpcaProblem::sparse_count(args.m, args.n, args.sparsity);
    println!(
        "wrote {} ({}x{}, rank {}, {} sparse entries, seed {seed})",
        args.out.display(),
        args.m,
        args.n,
        args.rank,
        nonzeros
    );
    Ok(())
}

/// Config comment lines for the trace header. Worker count is omitted:
/// it cannot change the results, and leaving it out keeps traces from
/// identical configs byte-comparable across machines.
fn config_comments(hp: &Hyperparams) -> Vec<String> {
    let text = toml::to_string(&hp).expect("hyperparams serialize");
    text.lines()
        .filter(|l| !l.trim_start().starts_with("workers"))
        .map(|l| l.to_string())
        .collect()
}

fn write_run_outputs(out_dir: &Path, hp: &Hyperparams, output: &RunOutput) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::Io {
        path: out_dir.to_path_buf(),
        source: e,
    })?;
    output
        .trace
        .write_csv(&out_dir.join("trace.csv"), &config_comments(hp), true)?;
    output.server.u.write_dmat(&out_dir.join("U_final.dmat"))?;
    output
        .stacked_right_factor()?
        .write_dmat(&out_dir.join("V_final.dmat"))?;
    output
        .stacked_sparse()?
        .write_dmat(&out_dir.join("S_final.dmat"))?;
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let problem = args.source.resolve(args.hyper.seed)?;
    let hp = args.hyper.resolve(&problem)?;
    for warning in validate_hyperparams(&hp, problem.m, problem.n) {
        eprintln!("warning: {warning}");
    }
    let output = run(&problem, &hp)?;
    write_run_outputs(&args.out, &hp, &output)?;
    let err = output
        .trace
        .records
        .last()
        .and_then(|r| r.rel_error)
        .map(|e| e.to_string())
        .unwrap_or_else(|| "unknown".to_string());
    let bytes = comm_cost(&hp, problem.m) * hp.rounds as u64;
    println!("rounds={} err={} bytes={}", hp.rounds, err, bytes);
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let problem = files::load_problem(&args.problem)?;
    let u = DenseMatrix::read_dmat(&args.factors.join("U_final.dmat"))?;
    let v = DenseMatrix::read_dmat(&args.factors.join("V_final.dmat"))?;
    let s = DenseMatrix::read_dmat(&args.factors.join("S_final.dmat"))?;
    let low = u.matmul_nt(&v)?;
    let report = evaluate(&low, &s, &u, &v, &problem)?;
    let sv = SvReport {
        sv_rel_error: report.sv_rel_error,
        sv_recovered: report.sv_recovered.clone(),
        sv_truth: report.sv_truth.clone(),
        rank_gap_ratio: report.rank_gap_ratio,
    };
    let out = args
        .out
        .unwrap_or_else(|| args.factors.join("sv_report.csv"));
    std::fs::write(&out, sv_report_csv(&sv)).map_err(|e| Error::Io {
        path: out.clone(),
        source: e,
    })?;
    println!(
        "err={} sv_rel_error={} rank_gap={}",
        report.rel_error, report.sv_rel_error, report.rank_gap_ratio
    );
    Ok(())
}

fn parse_list<T: std::str::FromStr>(text: &str, name: &'static str) -> Result<Vec<T>> {
    text.split(',')
        .map(|tok| {
            tok.trim().parse::<T>().map_err(|_| Error::InvalidParam {
                name,
                reason: format!("bad list entry {tok:?}"),
            })
        })
        .collect()
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let (default_s, default_r) = default_grids(args.n);
    let s_grid = match &args.s_grid {
        Some(text) => parse_list(text, "s_grid")?,
        None => default_s,
    };
    let r_grid = match &args.r_grid {
        Some(text) => parse_list(text, "r_grid")?,
        None => default_r,
    };
    // The per-cell problems are generated inside the sweep; resolve the
    // run settings against a probe problem at the first grid point. Seed
    // precedence stays flag > config > entropy through `resolve`.
    let seed = args.hyper.seed.unwrap_or_else(entropy_seed);
    let probe = generate(args.m, args.n, r_grid[0], s_grid[0], seed)?;
    let hp = args.hyper.resolve(&probe)?;
    let grid = phase_sweep(args.m, args.n, &s_grid, &r_grid, &hp)?;

    std::fs::create_dir_all(&args.out).map_err(|e| Error::Io {
        path: args.out.clone(),
        source: e,
    })?;
    let path = args.out.join("sweep.csv");
    std::fs::write(&path, grid.to_csv()).map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })?;
    for cell in &grid.cells {
        if let Some(reason) = &cell.failure {
            eprintln!(
                "cell (s={}, r={}) failed: {reason}",
                cell.sparsity, cell.rank
            );
        }
    }
    let successes = grid
        .cells
        .iter()
        .filter(|c| c.rel_error < 1e-2)
        .count();
    println!(
        "wrote {} ({} cells, {} recovered at err<1e-2)",
        path.display(),
        grid.cells.len(),
        successes
    );
    Ok(())
}

fn cmd_ablate(args: AblateArgs) -> Result<()> {
    let k_values: Vec<usize> = parse_list(&args.k_values, "k_values")?;
    if k_values.is_empty() || k_values.contains(&0) {
        return Err(Error::InvalidParam {
            name: "k_values",
            reason: "need at least one K >= 1".to_string(),
        });
    }
    let problem = args.source.resolve(args.hyper.seed)?;
    let mut hyper = args.hyper.clone();
    // Ablation defaults: ten clients and a fixed eta = 0.01, so runs that
    // differ only in K stay comparable. Flags override both.
    if hyper.clients.is_none() {
        hyper.clients = Some(10.min(problem.n));
    }
    if hyper.schedule.is_none() && hyper.eta0.is_none() {
        hyper.schedule = Some("fixed".to_string());
        hyper.eta0 = Some(0.01);
    }
    let hp = hyper.resolve(&problem)?;
    let runs = k_ablation(&problem, &hp, &k_values)?;

    std::fs::create_dir_all(&args.out).map_err(|e| Error::Io {
        path: args.out.clone(),
        source: e,
    })?;
    for ablation in &runs {
        let mut hp_k = hp.clone();
        hp_k.local_iters = ablation.local_iters;
        let path = args.out.join(format!("ablation_K{}.csv", ablation.local_iters));
        ablation
            .trace
            .write_csv(&path, &config_comments(&hp_k), true)?;
        let reach = rounds_to_error(&ablation.trace, 0.05);
        let floor = error_floor(&ablation.trace, 5);
        println!(
            "K={}: rounds_to_err<0.05={} floor={}",
            ablation.local_iters,
            reach.map(|r| r.to_string()).unwrap_or_else(|| "-".to_string()),
            floor.map(|f| f.to_string()).unwrap_or_else(|| "-".to_string()),
        );
    }
    Ok(())
}

fn cmd_validate(args: ValidateArgs) -> Result<()> {
    let hp = Hyperparams {
        rho: args.rho,
        lambda: args.lambda,
        rank_bound: 1,
        clients: 1,
        local_iters: 1,
        rounds: 1,
        eta: EtaSchedule::Fixed(args.eta0.unwrap_or(0.0)),
        inner: InnerTuning::default(),
        seed: 0,
        init_scale: 1.0,
        workers: 0,
    };
    let mut warnings = validate_hyperparams(&hp, args.m, args.n);
    if let Some(eta0) = args.eta0 {
        // Measure smoothness on a generated probe at a reduced scale.
        let m = args.m.min(60);
        let n = args.n.min(60);
        let rank = (n / 20).max(1);
        let probe = generate(m, n, rank, 0.05, 1)?;
        let mut probe_hp = hp.clone();
        probe_hp.rank_bound = rank;
        probe_hp.lambda = default_lambda(&probe.observed);
        let l_est = estimate_smoothness(&probe, &probe_hp, 3)?;
        if l_est > 0.0 && eta0 >= 1.0 / l_est {
            warnings.push(dcf_pca::runtime::HyperparamWarning::EtaAboveSmoothness {
                eta: eta0,
                l_est,
            });
        }
    }
    if warnings.is_empty() {
        println!("ok");
    } else {
        for warning in &warnings {
            println!("warning: {warning}");
        }
    }
    Ok(())
}
