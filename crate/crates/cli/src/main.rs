use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use covnet_core::bench::{
    aggregate, generalization_matrix, micros, run_benchmark, write_matrix, write_metrics, Algorithm, BenchConfig,
    MatrixModel, MetricRow, Trial,
};
use covnet_core::imitation::{
    evaluate_model, generate_dataset, prepare, split, train_with, Dataset, TrainConfig, DEFAULT_SPLIT,
};
use covnet_core::neural::{Checkpoint, ModelParams};
use covnet_core::selectors::DEFAULT_OPT_CAP;
use covnet_core::verify;
use covnet_core::world::ScenarioParams;

#[derive(Parser)]
#[command(name = "covnet", version, about = "Multi-robot target coverage workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an expert-labelled dataset.
    Gen(GenArgs),
    /// Train the action network on a dataset.
    Train(TrainArgs),
    /// Evaluate a trained model on fresh instances.
    Eval(EvalArgs),
    /// Compare selectors across team sizes.
    Bench(BenchArgs),
    /// Coverage ratio of each trained model at each test size.
    Genmatrix(MatrixArgs),
    /// Run the property suites.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    n_robots: usize,
    #[arg(long)]
    instances: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.025)]
    density: f64,
    #[arg(long, default_value_t = 10.0)]
    comm_range: f64,
    #[arg(long, default_value_t = 20.0)]
    sensing_range: f64,
    #[arg(long, default_value_t = 6.0)]
    fov: f64,
    #[arg(long, default_value_t = 20.0)]
    travel: f64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 150)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 5e-3)]
    lr_max: f64,
    #[arg(long, default_value_t = 1e-6)]
    lr_min: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch loss and accuracy table.
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    n_robots: usize,
    #[arg(long)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "4,6,8,10")]
    sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "opt,greedy,dgreedy,gnn,random")]
    algorithms: Vec<String>,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    csv: PathBuf,
    #[arg(long, default_value_t = DEFAULT_OPT_CAP)]
    opt_cap: u64,
}

#[derive(Args)]
struct MatrixArgs {
    /// `size=path` pairs; `path` may be `expert` for the greedy expert.
    #[arg(long, value_delimiter = ',', required = true)]
    models: Vec<String>,
    #[arg(long, value_delimiter = ',', required = true)]
    test_sizes: Vec<usize>,
    #[arg(long)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    csv: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("cannot write {}", path.display()))?))
}

fn load_model(path: &Path) -> Result<ModelParams<f32>> {
    Ok(Checkpoint::load(path).with_context(|| format!("cannot load model {}", path.display()))?.model)
}

fn gen(a: GenArgs) -> Result<()> {
    let params = ScenarioParams {
        sensing_range: a.sensing_range,
        comm_range: a.comm_range,
        fov_side: a.fov,
        travel: a.travel,
        target_density: a.density,
    };
    let h = generate_dataset(a.n_robots, a.instances, params, a.seed, &a.out)?;
    println!("wrote {} instances with {} robots to {}", h.instances, h.n_robots, a.out.display());
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let data = Dataset::read(&a.data).with_context(|| format!("cannot read dataset {}", a.data.display()))?;
    // The split follows the dataset seed so every model trained on a file
    // holds out the same instances.
    let (tr, va, _) = split(&data.records, DEFAULT_SPLIT, data.header.master_seed)?;
    let (tr, va) = (prepare(&tr)?, prepare(&va)?);
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        lr_max: a.lr_max,
        lr_min: a.lr_min,
        seed: a.seed,
        ..Default::default()
    };
    let quiet = a.quiet;
    let out = train_with(&tr, &va, &cfg, |e| {
        if !quiet {
            eprintln!(
                "epoch {:>4}  train loss {:.4} acc {:.3}  val loss {:.4} acc {:.3}",
                e.epoch, e.train_loss, e.train_accuracy, e.val_loss, e.val_accuracy
            );
        }
    })?;
    let mut ck = out.checkpoint(&cfg, tr.len(), va.len());
    if let Some(meta) = ck.training.as_mut() {
        meta.n_robots = Some(data.header.n_robots);
        meta.dataset_seed = Some(data.header.master_seed);
    }
    ck.save(&a.out)?;
    if let Some(path) = &a.history {
        let mut w = create(path)?;
        writeln!(w, "epoch,train_loss,train_accuracy,val_loss,val_accuracy,lr,steps")?;
        for e in &out.history {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                e.epoch, e.train_loss, e.train_accuracy, e.val_loss, e.val_accuracy, e.lr, e.steps
            )?;
        }
        w.flush()?;
    }
    if let Some(reason) = &out.halted {
        eprintln!("training halted: {reason}");
    }
    println!(
        "best epoch {} val loss {:.4}; model written to {}",
        out.best_epoch,
        out.best_val_loss,
        a.out.display()
    );
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let s = evaluate_model(&model, a.n_robots, a.trials, ScenarioParams::default(), a.seed)?;
    println!(
        "n_robots {}  trials {}  gnn/greedy {:.4} (std {:.4})  random/greedy {:.4} (std {:.4})",
        a.n_robots, a.trials, s.mean_ratio, s.std_ratio, s.mean_random_ratio, s.std_random_ratio
    );
    if let Some(path) = &a.csv {
        let mut rows = Vec::with_capacity(2 * s.instances.len() + 2);
        for e in &s.instances {
            let row = |alg: &str, covered: usize, ratio: f64, us: f64| MetricRow {
                algorithm: alg.into(),
                n_robots: e.n_robots,
                trial: Trial::Index(e.trial),
                covered: covered as f64,
                greedy_covered: e.greedy_covered as f64,
                ratio,
                runtime_us: us,
                seed: e.seed,
            };
            rows.push(row("gnn", e.covered, e.ratio, micros(e.runtime)));
            rows.push(row("random", e.random_covered, e.random_ratio, micros(e.random_runtime)));
        }
        let means = aggregate(&rows, a.seed);
        rows.extend(means);
        let mut w = create(path)?;
        write_metrics(&rows, &mut w)?;
        w.flush()?;
    }
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    let algorithms = a.algorithms.iter().map(|s| s.parse::<Algorithm>()).collect::<Result<Vec<_>, _>>()?;
    let model = match &a.model {
        Some(p) => Some(load_model(p)?),
        None => None,
    };
    let cfg = BenchConfig {
        sizes: a.sizes,
        trials: a.trials,
        algorithms,
        seed: a.seed,
        opt_cap: a.opt_cap,
        params: ScenarioParams::default(),
        model,
    };
    let rows = run_benchmark(&cfg)?;
    let mut w = create(&a.csv)?;
    write_metrics(&rows, &mut w)?;
    w.flush()?;
    for r in rows.iter().filter(|r| r.trial == Trial::Mean) {
        println!(
            "{:>11} N={:<3} covered {:>8.2}  ratio {:.4}  runtime {:>10.1} us",
            r.algorithm, r.n_robots, r.covered, r.ratio, r.runtime_us
        );
    }
    Ok(())
}

fn genmatrix(a: MatrixArgs) -> Result<()> {
    let mut models = Vec::new();
    for spec in &a.models {
        let Some((size, path)) = spec.split_once('=') else {
            bail!("model spec `{spec}` is not size=path");
        };
        if path == "expert" {
            models.push(MatrixModel::Expert);
            continue;
        }
        let train_size = size.parse().with_context(|| format!("bad training size in `{spec}`"))?;
        models.push(MatrixModel::Trained { train_size, model: load_model(Path::new(path))? });
    }
    let entries = generalization_matrix(&models, &a.test_sizes, a.trials, ScenarioParams::default(), a.seed)?;
    let mut w = create(&a.csv)?;
    write_matrix(&entries, &mut w)?;
    w.flush()?;
    for e in &entries {
        println!("train {:>6} test {:>3}: {:.4}", e.train, e.test_size, e.mean_ratio);
    }
    Ok(())
}

fn verify_all(a: VerifyArgs) -> Result<()> {
    let reports = verify::run_all(a.seed)?;
    for r in &reports {
        println!("{r}");
    }
    let failed = reports.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        bail!("{failed} of {} suites failed", reports.len());
    }
    Ok(())
}

fn configure_workers() -> Result<()> {
    let Ok(v) = std::env::var("COVNET_WORKERS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().with_context(|| format!("COVNET_WORKERS=`{v}` is not a count"))?;
    if n == 0 {
        bail!("COVNET_WORKERS must be at least 1");
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_workers()?;
    match cli.command {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(a),
        Command::Genmatrix(a) => genmatrix(a),
        Command::Verify(a) => verify_all(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
