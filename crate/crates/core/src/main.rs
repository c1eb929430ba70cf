use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use e3ir_core::dataset::{
    generate_synthetic, load_csv, split, write_csv, write_truth_csv, CsvSchema, Dataset, ResponseKind, SplitSpec,
    SyntheticConfig,
};
use e3ir_core::knapsack::{solve_mckp, write_allocation_csv, AllocationProblem};
use e3ir_core::metrics::{aucc_curve, mt_aucc_curve, pair_efficiency, write_curve_csv, Observation, ScoredSample};
use e3ir_core::model::{load_checkpoint, save_checkpoint};
use e3ir_core::trainer::{evaluate, sweep_curve, train, write_budget_csv, TrainConfig, TrainMode};

const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "e3ir", version, about = "Budget-constrained incentive allocation with a monotone uplift model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic randomized trial with known response curves.
    GenData(GenArgs),
    /// Train a model and write a checkpoint and per-epoch report.
    Train(TrainArgs),
    /// Score held-out data: ranking metrics and EOM per budget.
    Evaluate(EvalArgs),
    /// Solve the allocation for a budget and export it.
    Allocate(AllocateArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    d: u64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    k: u64,
    #[arg(long, default_value_t = 0.5)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for data.csv, truth.csv and manifest.txt.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    /// generic, hillstrom, hillstrom-men or hillstrom-women.
    #[arg(long, default_value = "generic")]
    schema: String,
    /// Loss for the response column of a generic file: mse or bce.
    #[arg(long, default_value = "mse")]
    revenue_kind: String,
    /// Loss for the cost column of a generic file: mse or bce.
    #[arg(long, default_value = "mse")]
    cost_kind: String,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// `key = value` training configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Training-set budget.
    #[arg(long)]
    budget: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Comma-separated budget grid.
    #[arg(long, value_delimiter = ',', required = true)]
    budgets: Vec<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AllocateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    budget: f64,
    /// Allocation CSV; the manifest goes next to it.
    #[arg(long)]
    out: PathBuf,
}

/// Run description written before any other output.
struct RunManifest<'a> {
    command: &'a str,
    config: Option<&'a Path>,
    datasets: Vec<(&'a str, &'a Path)>,
    seed: Option<u64>,
    output: &'a Path,
    extra: Vec<(String, String)>,
}

impl RunManifest<'_> {
    fn write(&self, path: &Path) -> Result<()> {
        let mut text = format!("command = {}\nartifact_version = {ARTIFACT_VERSION}\n", self.command);
        if let Some(c) = self.config {
            text += &format!("config = {}\n", c.display());
        }
        for (name, p) in &self.datasets {
            text += &format!("{name} = {}\n", p.display());
        }
        if let Some(s) = self.seed {
            text += &format!("seed = {s}\n");
        }
        text += &format!("output = {}\n", self.output.display());
        for (k, v) in &self.extra {
            text += &format!("{k} = {v}\n");
        }
        fs::write(path, text).with_context(|| format!("writing manifest {}", path.display()))
    }
}

fn out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn load(args: &DataArgs) -> Result<Dataset> {
    let kind = |s: &str, name: &str| -> Result<ResponseKind> {
        s.parse().map_err(|e| anyhow::anyhow!("--{name}: {e}"))
    };
    let schema = match args.schema.parse::<CsvSchema>().map_err(anyhow::Error::msg)? {
        CsvSchema::Generic { .. } => CsvSchema::Generic {
            cost_kind: kind(&args.cost_kind, "cost-kind")?,
            revenue_kind: kind(&args.revenue_kind, "revenue-kind")?,
        },
        other => other,
    };
    load_csv(&args.data, &schema).with_context(|| format!("loading {}", args.data.display()))
}

fn gen_data(a: &GenArgs) -> Result<()> {
    out_dir(&a.out)?;
    let data_path = a.out.join("data.csv");
    let truth_path = a.out.join("truth.csv");
    RunManifest {
        command: "gen-data",
        config: None,
        datasets: vec![("data", &data_path), ("truth", &truth_path)],
        seed: Some(a.seed),
        output: &a.out,
        extra: vec![
            ("n".into(), a.n.to_string()),
            ("d".into(), a.d.to_string()),
            ("k".into(), a.k.to_string()),
            ("noise".into(), a.noise.to_string()),
        ],
    }
    .write(&a.out.join("manifest.txt"))?;
    let ds = generate_synthetic(&SyntheticConfig {
        n: a.n as usize,
        d: a.d as usize,
        k: a.k as usize,
        noise_scale: a.noise,
        seed: a.seed,
    })?;
    write_csv(&ds, &data_path)?;
    write_truth_csv(ds.ground_truth.as_ref().expect("synthetic data has truth"), &truth_path)?;
    println!("wrote {} samples to {}", ds.len(), data_path.display());
    Ok(())
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            TrainConfig::parse_text(&text)?
        }
        None => TrainConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(m) = &a.mode {
        cfg.mode = m.parse::<TrainMode>().map_err(anyhow::Error::msg)?;
    }
    if let Some(v) = a.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = a.beta {
        cfg.beta = v;
    }
    if let Some(v) = a.budget {
        cfg.budget = v;
    }
    if let Err((key, msg)) = cfg.validate() {
        bail!("config key `{key}`: {msg}");
    }
    out_dir(&a.out)?;
    let ckpt = a.out.join("model.ckpt");
    let test_path = a.out.join("test.csv");
    RunManifest {
        command: "train",
        config: a.config.as_deref(),
        datasets: vec![("data", &a.data.data), ("test_split", &test_path)],
        seed: Some(cfg.seed),
        output: &a.out,
        extra: vec![("mode".into(), cfg.mode.to_string())],
    }
    .write(&a.out.join("manifest.txt"))?;
    fs::write(a.out.join("config.txt"), cfg.to_text())?;
    let ds = load(&a.data)?;
    let (tr, va, te) = split(&ds, &SplitSpec { seed: cfg.seed, ..SplitSpec::default() })?;
    write_csv(&te, &test_path)?;
    let (model, report) = train(&tr, &va, &cfg)?;
    save_checkpoint(&ckpt, &model)?;
    let mut w = create(&a.out.join("report.csv"))?;
    report.write_csv(&mut w)?;
    w.flush()?;
    println!(
        "trained {} epochs (best {}, stopped early: {}); checkpoint {}",
        report.epochs.len(),
        report.best_epoch,
        report.stopped_early,
        ckpt.display()
    );
    Ok(())
}

fn evaluate_cmd(a: &EvalArgs) -> Result<()> {
    out_dir(&a.out)?;
    RunManifest {
        command: "evaluate",
        config: None,
        datasets: vec![("data", &a.data.data), ("checkpoint", &a.checkpoint)],
        seed: None,
        output: &a.out,
        extra: vec![(
            "budgets".into(),
            a.budgets.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
        )],
    }
    .write(&a.out.join("manifest.txt"))?;
    let model =
        load_checkpoint(&a.checkpoint).with_context(|| format!("loading checkpoint {}", a.checkpoint.display()))?;
    let test = load(&a.data)?;
    let report = evaluate(&model, &test, &a.budgets)?;
    let mut w = create(&a.out.join("metrics.txt"))?;
    report.write_text(&mut w)?;
    w.flush()?;
    let mut w = create(&a.out.join("eom_vs_budget.csv"))?;
    write_budget_csv(&mut w, &report.rows)?;
    w.flush()?;
    // budget-sweep cost curve from zero up to each requested budget
    for &b in &a.budgets {
        let grid: Vec<f64> = (0..=10).map(|j| b * j as f64 / 10.0).collect();
        let sweep = evaluate(&model, &test, &grid)?;
        let mut w = create(&a.out.join(format!("cost_curve_b{b}.csv")))?;
        write_curve_csv(&mut w, &sweep_curve(&sweep.rows))?;
        w.flush()?;
    }
    let u = model.uplift(&test.features())?;
    let obs: Vec<Observation> = test
        .samples
        .iter()
        .map(|s| Observation {
            treatment: s.treatment,
            cost: s.cost,
            revenue: s.revenue,
        })
        .collect();
    let ranking = if test.num_treatments == 1 {
        let scored: Vec<ScoredSample> = obs
            .iter()
            .enumerate()
            .map(|(i, o)| ScoredSample {
                score: pair_efficiency(u.tau_revenue.get(i, 1), u.tau_cost.get(i, 1)),
                treatment: o.treatment,
                cost: o.cost,
                revenue: o.revenue,
            })
            .collect();
        aucc_curve(&scored)
    } else {
        mt_aucc_curve(&u.tau_revenue, &u.tau_cost, &obs)
    };
    match ranking {
        Ok(c) => {
            let mut w = create(&a.out.join("ranking_cost_curve.csv"))?;
            write_curve_csv(&mut w, &c)?;
            w.flush()?;
        }
        Err(e) => eprintln!("warning: ranking cost curve not written: {e}"),
    }
    for (k, v) in &report.metrics {
        println!("{k} = {v}");
    }
    for r in &report.rows {
        println!("budget {} -> eom {}", r.budget, r.eom.revenue);
    }
    for warning in &report.warnings {
        eprintln!("warning: {warning}");
    }
    Ok(())
}

fn allocate_cmd(a: &AllocateArgs) -> Result<()> {
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        out_dir(parent)?;
    }
    let mut manifest_path = a.out.clone().into_os_string();
    manifest_path.push(".manifest.txt");
    RunManifest {
        command: "allocate",
        config: None,
        datasets: vec![("data", &a.data.data), ("checkpoint", &a.checkpoint)],
        seed: None,
        output: &a.out,
        extra: vec![("budget".into(), a.budget.to_string())],
    }
    .write(Path::new(&manifest_path))?;
    let model =
        load_checkpoint(&a.checkpoint).with_context(|| format!("loading checkpoint {}", a.checkpoint.display()))?;
    let data = load(&a.data)?;
    let u = model.uplift(&data.features())?;
    let problem = AllocationProblem::new(u.tau_revenue, u.tau_cost, a.budget)?;
    let solution = solve_mckp(&problem);
    let mut w = create(&a.out)?;
    write_allocation_csv(&mut w, &problem, Some(&solution))?;
    w.flush()?;
    println!(
        "allocated {} users: objective {}, spent {} of {}{}",
        problem.num_users(),
        solution.objective,
        solution.spent,
        a.budget,
        if solution.optimal { "" } else { " (node limit reached)" }
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Allocate(a) => allocate_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
