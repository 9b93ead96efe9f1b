use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use condmeta::conditioner::FeatureNormTracker;
use condmeta::env::{build_environment, generate_lenk_like, EnvConfig, EnvKind, MetaSplit};
use condmeta::harness::{
    evaluate, run_experiment, run_with_checkpoints, sweep_and_select, validation_error, write_experiment, GammaGrid,
    Method, Predictor, RunConfig, UnconditionalPath,
};
use condmeta::inner::InnerMode;
use condmeta::loss::Loss;
use condmeta::meta::Checkpoint;
use condmeta::oracles::identity_checks;

mod error;

use error::CliError;

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "condmeta", version, about = "Conditional meta-learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build an environment and write its task split as JSON.
    Generate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
        /// Write a lenk-schema CSV with this many users instead.
        #[arg(long)]
        lenk_like_users: Option<usize>,
    },
    /// Train one method with a fixed step size.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Write the averaged parameters here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Select the step size on validation tasks.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Full comparison: sweeps, learning curves, CSV and JSON output.
    Curve {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated methods.
        #[arg(long, value_delimiter = ',', default_value = "itl,unconditional,conditional")]
        methods: Vec<MethodArg>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the numerical identity checks of the closed-form oracles.
    OracleCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Evaluate a saved checkpoint on a task file.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Task split written by `generate`.
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long, value_enum, default_value = "last-iterate")]
        inner_mode: InnerModeArg,
        #[arg(long, value_enum, default_value = "absolute")]
        loss: LossArg,
        #[arg(long, default_value_t = 1.0)]
        lipschitz: f64,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum EnvArg {
    Synthetic,
    Lenk,
    Movielens,
    Jester,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Itl,
    Unconditional,
    Conditional,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Itl => Method::Itl,
            MethodArg::Unconditional => Method::Unconditional,
            MethodArg::Conditional => Method::Conditional,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum InnerModeArg {
    Batch,
    LastIterate,
}

impl From<InnerModeArg> for InnerMode {
    fn from(m: InnerModeArg) -> Self {
        match m {
            InnerModeArg::Batch => InnerMode::Batch,
            InnerModeArg::LastIterate => InnerMode::LastIterate,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LossArg {
    Absolute,
    Squared,
}

fn make_loss(loss: LossArg, lipschitz: f64) -> Loss {
    match loss {
        LossArg::Absolute => Loss::Absolute,
        LossArg::Squared => Loss::Squared { lipschitz },
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Validation,
    Test,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PathArg {
    Dedicated,
    Meta,
}

/// Run configuration flags. Values from `--config` take precedence.
#[derive(Args, Debug)]
struct RunArgs {
    /// TOML file with `RunConfig` fields; overrides the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "synthetic")]
    env: EnvArg,
    #[arg(long)]
    data_path: Option<PathBuf>,
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    noise_sd: Option<f64>,
    #[arg(long)]
    t_tr: Option<usize>,
    #[arg(long)]
    t_va: Option<usize>,
    #[arg(long)]
    t_te: Option<usize>,
    #[arg(long)]
    n_tr: Option<usize>,
    #[arg(long)]
    n_te: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    rating_max: Option<f64>,
    #[arg(long)]
    rating_min: Option<f64>,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    #[arg(long)]
    feature_map: Option<String>,
    #[arg(long, value_enum)]
    inner_mode: Option<InnerModeArg>,
    #[arg(long, value_enum)]
    loss: Option<LossArg>,
    /// Declared Lipschitz constant of the squared loss.
    #[arg(long, default_value_t = 1.0)]
    lipschitz: f64,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    gamma_count: Option<usize>,
    #[arg(long)]
    gamma_log10_min: Option<f64>,
    #[arg(long)]
    gamma_log10_max: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    checkpoints: Option<Vec<usize>>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    c0_scale: Option<f64>,
    #[arg(long, value_enum)]
    unconditional_path: Option<PathArg>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl RunArgs {
    fn from_flags(&self) -> RunConfig {
        let kind = match self.env {
            EnvArg::Synthetic => EnvKind::Synthetic,
            EnvArg::Lenk => EnvKind::Lenk,
            EnvArg::Movielens => EnvKind::Movielens,
            EnvArg::Jester => EnvKind::Jester,
        };
        let mut env = EnvConfig::for_kind(kind);
        env.data_path = self.data_path.clone();
        set(&mut env.clusters, self.clusters);
        set(&mut env.d, self.d);
        set(&mut env.noise_sd, self.noise_sd);
        set(&mut env.t_tr, self.t_tr);
        set(&mut env.t_va, self.t_va);
        set(&mut env.t_te, self.t_te);
        set(&mut env.n_tr, self.n_tr);
        set(&mut env.n_te, self.n_te);
        set(&mut env.seed, self.seed);
        set(&mut env.rating_max, self.rating_max);
        set(&mut env.rating_min, self.rating_min);

        let mut run = RunConfig::for_env(env);
        set(&mut run.method, self.method.map(Method::from));
        run.feature_map = self.feature_map.clone();
        set(&mut run.inner_mode, self.inner_mode.map(InnerMode::from));
        set(&mut run.loss, self.loss.map(|l| make_loss(l, self.lipschitz)));
        run.gamma = self.gamma;
        let GammaGrid { count, log10_min, log10_max } = &mut run.gamma_grid;
        set(count, self.gamma_count);
        set(log10_min, self.gamma_log10_min);
        set(log10_max, self.gamma_log10_max);
        run.checkpoints = self.checkpoints.clone();
        set(&mut run.repetitions, self.repetitions);
        set(&mut run.epochs, self.epochs);
        set(&mut run.c0_scale, self.c0_scale);
        set(
            &mut run.unconditional_path,
            self.unconditional_path.map(|p| match p {
                PathArg::Dedicated => UnconditionalPath::Dedicated,
                PathArg::Meta => UnconditionalPath::Meta,
            }),
        );
        run
    }

    fn resolve(&self) -> Result<RunConfig> {
        let run = self.from_flags();
        let run = match &self.config {
            None => run,
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                let file: toml::Table = toml::from_str(&text)?;
                let mut base = toml::Table::try_from(&run)?;
                merge(&mut base, file);
                toml::Value::Table(base).try_into()?
            }
        };
        run.validate()?;
        Ok(run)
    }
}

/// Recursively overwrites `base` with the entries of `over`.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn print_json(v: &serde_json::Value) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{}", serde_json::to_string_pretty(v)?) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::io(Path::new("<stdout>"), e)),
        _ => Ok(()),
    }
}

fn read_split(path: &PathBuf) -> Result<MetaSplit> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Generate { run, out, lenk_like_users } => {
            if let Some(users) = lenk_like_users {
                let seed = run.seed.unwrap_or(0);
                std::fs::write(&out, generate_lenk_like(users, seed)).map_err(|e| CliError::io(&out, e))?;
                print_json(&json!({ "written": out, "users": users, "seed": seed }))?;
                return Ok(ExitCode::SUCCESS);
            }
            let cfg = run.resolve()?;
            let split = build_environment(&cfg.env, cfg.env.seed)?;
            std::fs::write(&out, serde_json::to_string(&split)?).map_err(|e| CliError::io(&out, e))?;
            print_json(&json!({
                "written": out,
                "train": split.train.len(),
                "validation": split.validation.len(),
                "test": split.test.len(),
            }))?;
        }
        Command::Train { run, out } => {
            let cfg = run.resolve()?;
            let gamma = match (cfg.method, cfg.gamma) {
                (Method::Itl, g) => g.unwrap_or(0.0),
                (_, Some(g)) => g,
                (_, None) => return Err(CliError::Usage("train needs --gamma (or `gamma` in the config)".into())),
            };
            let split = build_environment(&cfg.env, cfg.env.seed)?;
            let mut tracker = FeatureNormTracker::default();
            let total = cfg.total_steps();
            let mut trained = run_with_checkpoints(&cfg, cfg.method, gamma, &split.train, &[total], &mut tracker, |_, tr| {
                Ok(tr.clone())
            })?;
            let trainer = trained.pop().expect("one checkpoint");
            let predictor = trainer.snapshot();
            let val = evaluate(&predictor, &split.validation, &cfg.loss, cfg.inner_mode, cfg.batch)?;
            let test = evaluate(&predictor, &split.test, &cfg.loss, cfg.inner_mode, cfg.batch)?;
            if let Some(path) = &out {
                trainer.checkpoint(gamma, cfg.env.seed).save(path)?;
            }
            print_json(&json!({
                "method": cfg.method.name(),
                "gamma": gamma,
                "steps": trainer.steps(),
                "validation_error": val,
                "test_error": test,
                "max_feature_norm": tracker.max_norm,
                "checkpoint": out,
            }))?;
        }
        Command::Sweep { run } => {
            let cfg = run.resolve()?;
            let split = build_environment(&cfg.env, cfg.env.seed)?;
            let (gamma, rows) = match cfg.gamma {
                Some(g) => (g, vec![]),
                None => sweep_and_select(&cfg, cfg.method, &split)?,
            };
            let val = validation_error(&cfg, cfg.method, gamma, &split)?;
            print_json(&json!({
                "method": cfg.method.name(),
                "selected_gamma": gamma,
                "validation_error": val,
                "grid": rows,
            }))?;
        }
        Command::Curve { run, methods, out } => {
            let cfg = run.resolve()?;
            let methods: Vec<Method> = methods.into_iter().map(Method::from).collect();
            let exp = run_experiment(&cfg, &methods)?;
            let (metrics, manifest) = write_experiment(&exp, &out)?;
            let finals: serde_json::Map<String, serde_json::Value> = exp
                .curves
                .iter()
                .map(|c| (c.method.name().to_string(), json!({ "gamma": c.gamma, "final_test_error": c.final_mean() })))
                .collect();
            print_json(&json!({ "metrics": metrics, "manifest": manifest, "final": finals }))?;
        }
        Command::OracleCheck { seed } => {
            let checks = identity_checks(seed)?;
            let ok = checks.iter().all(|c| c.pass);
            print_json(&json!({ "pass": ok, "checks": checks }))?;
            if !ok {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Eval {
            checkpoint,
            tasks,
            split,
            inner_mode,
            loss,
            lipschitz,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let data = read_split(&tasks)?;
            let list = match split {
                SplitArg::Train => &data.train,
                SplitArg::Validation => &data.validation,
                SplitArg::Test => &data.test,
            };
            let predictor = Predictor::Conditional {
                cond: ck.conditioner()?,
                map: ck.feature_map,
            };
            let loss = make_loss(loss, lipschitz);
            let err = evaluate(&predictor, list, &loss, inner_mode.into(), Default::default())?;
            print_json(&json!({
                "tasks": list.len(),
                "mean_test_error": err,
                "feature_map": ck.feature_map.name(),
                "steps": ck.steps,
            }))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", json!({ "error": { "kind": e.kind(), "message": e.to_string() } }));
            ExitCode::FAILURE
        }
    }
}
