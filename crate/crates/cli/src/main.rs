use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bfaec_core::design::{search, DesignOutcome};
use bfaec_core::engine::StepMode;
use bfaec_core::harness::{build_plan, compare, compare_segments, simulate, EnsembleOptions, LearningCurve};
use bfaec_core::io::{write_curve_csv, write_design_csv, write_plant_csv, RunConfig};
use bfaec_core::model::{modal_eigenvalues, SplitLoad, StabilityReport};
use bfaec_core::nalgebra::DVector;
use bfaec_core::signal_model::gen_lem_plant;
use bfaec_core::Error;

/// Simulation, modeling and design of GSC beamformer-assisted echo cancelers.
#[derive(Debug, Parser)]
#[command(name = "bfaec", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true, env = "BFAEC_CONFIG")]
    config: Option<PathBuf>,
    /// Output directory; overrides `[output] dir`.
    #[arg(long, global = true, env = "BFAEC_OUT")]
    out: Option<PathBuf>,
    /// Number of Monte Carlo runs; overrides `[montecarlo] runs`.
    #[arg(long, global = true, env = "BFAEC_RUNS")]
    runs: Option<usize>,
    /// Base seed of the Monte Carlo runs; overrides `[montecarlo] base_seed`.
    #[arg(long, global = true, env = "BFAEC_SEED")]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "BFAEC_THREADS")]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Monte Carlo learning curve.
    Simulate,
    /// Modeled learning curve.
    Model,
    /// Monte Carlo and model side by side, with a deviation report.
    Compare,
    /// Stability verdicts per schedule segment, or for given R_mod eigenvalues.
    Stability {
        /// Comma-separated eigenvalues of R_mod; no config needed.
        #[arg(long, value_delimiter = ',')]
        lambda: Option<Vec<f64>>,
    },
    /// Ranked feasible designs for the `[design]` section.
    DesignSearch,
    /// Writes the configured echo paths as CSV.
    PlantGen,
}

enum Failure {
    Config(String),
    Numerical(String),
    Infeasible(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Numerical(_) => 2,
            Failure::Infeasible(_) => 3,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::NotPositiveDefinite(_)
            | Error::IllConditioned { .. }
            | Error::RankDeficient(_)
            | Error::Numerical(_)
            | Error::ModelInvalid(_)
            | Error::AllRunsDiverged(_) => Failure::Numerical(msg),
            _ => Failure::Config(msg),
        }
    }
}

type Outcome = Result<(), Failure>;

fn load(cli: &Cli) -> Result<RunConfig, Failure> {
    let path = cli.config.as_ref().ok_or_else(|| Failure::Config("--config is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(r) = cli.runs {
        cfg.montecarlo.runs = r;
    }
    if let Some(s) = cli.seed {
        cfg.montecarlo.base_seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output.dir = o.clone();
    }
    Ok(cfg)
}

fn curve_for(cfg: &RunConfig, opts: EnsembleOptions) -> Result<LearningCurve, Failure> {
    let curve = simulate::<f64>(&cfg.scenario(), opts)?;
    if !curve.divergent.is_empty() {
        log::warn!("{} of {} runs diverged and were excluded", curve.divergent.len(), cfg.montecarlo.runs);
    }
    Ok(curve)
}

fn save_curve(cfg: &RunConfig, curve: &LearningCurve) -> Result<PathBuf, Failure> {
    let path = cfg.output.path("curve");
    write_curve_csv(curve, &path)?;
    Ok(path)
}

fn cmd_curve(cli: &Cli, opts: EnsembleOptions) -> Outcome {
    let cfg = load(cli)?;
    let curve = curve_for(&cfg, opts)?;
    let path = save_curve(&cfg, &curve)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn cmd_compare(cli: &Cli) -> Outcome {
    let cfg = load(cli)?;
    let curve = curve_for(&cfg, EnsembleOptions::default())?;
    let path = save_curve(&cfg, &curve)?;
    let window = cfg.montecarlo.window;
    println!("overall: {}", compare(&curve, window)?);
    if curve.segment_starts.len() > 1 {
        for (k, r) in compare_segments(&curve, window, window / 2 + cfg.gsc.n_bf)?.iter().enumerate() {
            println!("segment {k}: {r}");
        }
    }
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn cmd_stability(cli: &Cli, lambda: &Option<Vec<f64>>) -> Outcome {
    if let Some(l) = lambda {
        if l.iter().any(|v| v.is_nan() || *v < 0.0) {
            return Err(Failure::Config("eigenvalues must be >= 0".into()));
        }
        println!("{}", StabilityReport::from_lambda(&DVector::from_column_slice(l), None));
        return Ok(());
    }
    let cfg = load(cli)?;
    let plan = build_plan::<f64>(&cfg.scenario(), 0)?;
    let (n_aec, n_psi) = (plan.gsc.n_aec, plan.gsc.n_psi());
    println!("segment\tstart\tend\tmax_eig_phi\tgershgorin\ttrace\tsplit\tverdict");
    let mut all_stable = true;
    for (k, seg) in plan.segments.iter().enumerate() {
        let m = seg.policy.mode.matrix(n_aec, n_psi);
        let lam = modal_eigenvalues(&seg.stats.r_bloc, &m)?;
        let split = match seg.policy.mode {
            StepMode::ScalarPair { mu_aec, mu_bf } => {
                Some(SplitLoad { aec: mu_aec * seg.stats.tr_ru, bf: mu_bf * seg.stats.tr_bxb })
            }
            StepMode::FullMatrix(_) => None,
        };
        let r = StabilityReport::from_lambda(&lam, split);
        all_stable &= r.eig_stable();
        println!(
            "{k}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{}\t{r}",
            seg.start,
            seg.end,
            r.max_eig_phi,
            r.gershgorin,
            r.trace,
            r.split.map_or("-".into(), |s| format!("{s:.6}"))
        );
    }
    if !all_stable {
        log::warn!("at least one segment has max eig(Phi) >= 1");
    }
    Ok(())
}

fn cmd_design(cli: &Cli) -> Outcome {
    let cfg = load(cli)?;
    let outcome = search::<f64>(&cfg.design_spec()?)?;
    let path = cfg.output.path("design");
    write_design_csv(&outcome, &path)?;
    eprintln!("wrote {}", path.display());
    match outcome {
        DesignOutcome::Feasible(d) => {
            for (k, p) in d.ranked.iter().enumerate() {
                println!(
                    "{}\tM={}\tN_AEC={}\tbudget={:.4}\tJ_inf={:.2} dB\tJ[n]={:.2} dB",
                    k + 1,
                    p.mics,
                    p.n_aec,
                    p.budget,
                    p.j_inf_db,
                    p.j_at_n_db
                );
            }
            for f in &d.findings {
                println!("finding: {f}");
            }
            Ok(())
        }
        DesignOutcome::Infeasible(r) => Err(Failure::Infeasible(r.to_string())),
    }
}

fn cmd_plant(cli: &Cli) -> Outcome {
    let cfg = load(cli)?;
    let plant = gen_lem_plant::<f64>(&cfg.plant.params(), cfg.plant.seed)?;
    let path = cfg.output.path("plant");
    write_plant_csv(&plant, &path)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn run(cli: &Cli) -> Outcome {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Config(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Simulate => cmd_curve(cli, EnsembleOptions { with_model: false, with_mc: true }),
        Command::Model => cmd_curve(cli, EnsembleOptions { with_model: true, with_mc: false }),
        Command::Compare => cmd_compare(cli),
        Command::Stability { lambda } => cmd_stability(cli, lambda),
        Command::DesignSearch => cmd_design(cli),
        Command::PlantGen => cmd_plant(cli),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Config(m) | Failure::Numerical(m) | Failure::Infeasible(m)) = &f;
            eprintln!("error: {}", m.trim_end());
            ExitCode::from(f.code())
        }
    }
}
