use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mhnes::analysis::{hamming_csv, hamming_matrix, regret_study, EigTrace};
use mhnes::data::{gen_synthetic, load_raw, write_raw, DatasetBundle, SyntheticSpec};
use mhnes::harness::{
    evaluate, load_ensemble, metrics_csv, read_metrics, report, report_csv, report_table, run,
    run_search, save_ensemble, ExperimentConfig, MetricRow,
};
use mhnes::search::{build_baseline, train_discrete, BudgetLedger, Ensemble};
use mhnes::space::MultiHeadGenotype;

const DATASET_FILE: &str = "dataset.bin";

#[derive(Parser)]
#[command(name = "mhnes", version, about = "Multi-headed neural ensemble search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate or inspect dataset files.
    #[command(subcommand)]
    Dataset(DatasetCmd),
    /// Run the configured one-shot search and save the genotype.
    Search(RunArgs),
    /// Train a genotype from scratch.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        genotype: PathBuf,
    },
    /// Evaluate a saved ensemble at every configured shift severity.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        model: PathBuf,
    },
    /// Build the configured baseline ensemble.
    Baseline(RunArgs),
    /// Full experiment: every seed, search or baseline, training, evaluation.
    Run(RunArgs),
    #[command(subcommand)]
    Analyze(AnalyzeCmd),
    /// Merge metrics CSVs into one row per (method, M).
    Report {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 0)]
        severity: usize,
        /// Write CSV here instead of printing a table.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum DatasetCmd {
    Gen {
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 2000)]
        n_train: usize,
        #[arg(long, default_value_t = 500)]
        n_val: usize,
        #[arg(long, default_value_t = 500)]
        n_test: usize,
        #[arg(long, default_value_t = 16)]
        size: usize,
        #[arg(long, default_value_t = 0.15)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    Inspect {
        /// Dataset file, or a directory holding `dataset.bin`.
        path: PathBuf,
    },
}

#[derive(Subcommand)]
enum AnalyzeCmd {
    /// Dominant Hessian eigenvalue per search epoch.
    Hessian {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 20)]
        max_iter: usize,
    },
    /// Validation NLL spread of random genotypes per ensemble size.
    Regret {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "1,3")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 20)]
        samples: usize,
    },
    /// Pairwise Hamming distances between genotype files.
    Hamming {
        #[arg(required = true)]
        genotypes: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Use only this seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<mhnes::Error> for Failure {
    fn from(e: mhnes::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, Failure>;

struct Loaded {
    cfg: ExperimentConfig,
    bytes: Vec<u8>,
    base: PathBuf,
    out: PathBuf,
}

impl RunArgs {
    fn load(&self) -> CliResult<Loaded> {
        if !self.config.is_file() {
            return Err(Failure::Usage(format!(
                "config file `{}` not found",
                self.config.display()
            )));
        }
        let (mut cfg, bytes) =
            ExperimentConfig::load(&self.config).map_err(|e| Failure::Usage(e.to_string()))?;
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        let out = self
            .out
            .clone()
            .or_else(|| cfg.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        let base = self
            .config
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        Ok(Loaded {
            cfg,
            bytes,
            base,
            out,
        })
    }
}

impl Loaded {
    fn data(&self) -> CliResult<DatasetBundle> {
        let d = self.cfg.dataset.load(&self.base)?;
        self.cfg
            .check_data(&d)
            .map_err(|e| Failure::Usage(e.to_string()))?;
        Ok(d)
    }

    fn seed(&self) -> u64 {
        self.cfg.seeds[0]
    }

    fn out_dir(&self) -> CliResult<&Path> {
        fs::create_dir_all(&self.out)
            .map_err(|e| Failure::Runtime(format!("{}: {e}", self.out.display())))?;
        Ok(&self.out)
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult {
    fs::write(path, bytes).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn json(v: &impl serde::Serialize) -> CliResult<Vec<u8>> {
    serde_json::to_vec_pretty(v).map_err(|e| Failure::Runtime(e.to_string()))
}

fn dataset_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(DATASET_FILE)
    } else {
        p.to_path_buf()
    }
}

fn eval_rows(
    l: &Loaded,
    e: &Ensemble,
    data: &DatasetBundle,
    steps: u64,
) -> CliResult<Vec<MetricRow>> {
    let params = e.num_params();
    Ok(evaluate(e, data, &l.cfg.severities, l.seed())?
        .into_iter()
        .map(|(split, severity, r)| MetricRow {
            method: l.cfg.method,
            seed: l.seed().to_string(),
            m: l.cfg.model.heads,
            split,
            severity,
            nll: r.nll,
            error: r.error,
            ece: r.ece,
            oracle_nll: r.oracle_nll,
            params,
            steps,
            wall_sec: 0.0,
        })
        .collect())
}

fn print_rows(rows: &[MetricRow]) {
    for r in rows {
        println!(
            "{:<5} severity {}  nll {:.4}  error {:.4}  ece {:.4}  oracle_nll {:.4}",
            r.split, r.severity, r.nll, r.error, r.ece, r.oracle_nll
        );
    }
}

fn dataset(cmd: DatasetCmd) -> CliResult {
    match cmd {
        DatasetCmd::Gen {
            classes,
            n_train,
            n_val,
            n_test,
            size,
            noise,
            seed,
            out,
        } => {
            if classes < 2 || size < 8 {
                return Err(Failure::Usage("need --classes >= 2 and --size >= 8".into()));
            }
            let spec = SyntheticSpec {
                size,
                noise,
                ..SyntheticSpec::new(classes, n_train, n_val, n_test)
            };
            let b = gen_synthetic(&spec, seed)?;
            fs::create_dir_all(&out)
                .map_err(|e| Failure::Runtime(format!("{}: {e}", out.display())))?;
            let path = out.join(DATASET_FILE);
            write_raw(&b, &path)?;
            println!("wrote {}", path.display());
            inspect(&b);
            Ok(())
        }
        DatasetCmd::Inspect { path } => {
            let b = load_raw(&dataset_path(&path))?;
            inspect(&b);
            Ok(())
        }
    }
}

fn inspect(b: &DatasetBundle) {
    let (h, w) = b.image_size();
    println!("classes {}  image {}x{}", b.classes, h, w);
    for (name, s) in b.splits() {
        let counts: Vec<String> = s
            .class_counts(b.classes)
            .iter()
            .map(|c| c.to_string())
            .collect();
        println!(
            "{name:<5} {:>6} examples  per class [{}]",
            s.len(),
            counts.join(", ")
        );
    }
    match serde_json::to_string(&b.provenance) {
        Ok(p) => println!("provenance {p}"),
        Err(_) => println!("provenance unknown"),
    }
}

fn search(a: RunArgs) -> CliResult {
    let l = a.load()?;
    if !l.cfg.method.is_search() {
        return Err(Failure::Usage(format!(
            "method `{}` is not a search method",
            l.cfg.method
        )));
    }
    let data = l.data()?;
    let out = run_search(
        l.cfg.method,
        &data,
        &l.cfg.model,
        &l.cfg.search,
        l.seed(),
        None,
    )?;
    let dir = l.out_dir()?;
    out.genotype.save(&dir.join("genotype.json"))?;
    if let Some(arch) = &out.arch {
        write(&dir.join("arch.json"), json(arch)?)?;
    }
    write(&dir.join("search_history.json"), json(&out.history)?)?;
    write(
        &dir.join("budget.json"),
        json(&BudgetLedger::new(l.cfg.method, out.steps, 0, 0))?,
    )?;
    println!(
        "{} search: {} steps, genotype written to {}",
        l.cfg.method,
        out.steps,
        dir.join("genotype.json").display()
    );
    Ok(())
}

fn train(a: RunArgs, genotype: PathBuf) -> CliResult {
    let l = a.load()?;
    let g = MultiHeadGenotype::load(&genotype).map_err(|e| Failure::Usage(e.to_string()))?;
    let data = l.data()?;
    let trained = train_discrete(&l.cfg.model, &g, &data, &l.cfg.train, l.seed())?;
    let steps = trained.steps;
    let e = Ensemble::from_outcome(trained, l.seed(), "train");
    let rows = eval_rows(&l, &e, &data, steps)?;
    let dir = l.out_dir()?;
    save_ensemble(&e, &dir.join("ensemble.json"))?;
    write(&dir.join("metrics.csv"), metrics_csv(&rows)?)?;
    print_rows(&rows);
    Ok(())
}

fn eval(a: RunArgs, model: PathBuf) -> CliResult {
    let l = a.load()?;
    let e = load_ensemble(&model).map_err(|e| Failure::Usage(e.to_string()))?;
    let data = l.data()?;
    let rows = eval_rows(&l, &e, &data, 0)?;
    let dir = l.out_dir()?;
    write(&dir.join("metrics.csv"), metrics_csv(&rows)?)?;
    print_rows(&rows);
    Ok(())
}

fn baseline(a: RunArgs) -> CliResult {
    let l = a.load()?;
    if l.cfg.method.is_search() {
        return Err(Failure::Usage(format!(
            "method `{}` is a search method; use `search` or `run`",
            l.cfg.method
        )));
    }
    let data = l.data()?;
    let b = build_baseline(
        l.cfg.method,
        &l.cfg.model,
        &data,
        &l.cfg.train,
        l.cfg.pool_size,
        l.seed(),
    )?;
    let ledger = BudgetLedger::new(l.cfg.method, 0, b.steps, b.models_trained);
    let rows = eval_rows(&l, &b.ensemble, &data, ledger.total_steps)?;
    let dir = l.out_dir()?;
    save_ensemble(&b.ensemble, &dir.join("ensemble.json"))?;
    write(&dir.join("budget.json"), json(&ledger)?)?;
    write(&dir.join("metrics.csv"), metrics_csv(&rows)?)?;
    print_rows(&rows);
    Ok(())
}

fn full_run(a: RunArgs) -> CliResult {
    let l = a.load()?;
    let s = run(&l.cfg, &l.bytes, &l.base, &l.out)?;
    for r in s
        .rows
        .iter()
        .filter(|r| r.split == "test" && r.severity == 0)
    {
        println!(
            "seed {:<5} nll {:.4}  error {:.4}  ece {:.4}  steps {}",
            r.seed, r.nll, r.error, r.ece, r.steps
        );
    }
    println!("artifacts in {}", s.out_dir.display());
    if s.failed.is_empty() {
        Ok(())
    } else {
        let msg: Vec<String> = s
            .failed
            .iter()
            .map(|(seed, e)| format!("seed {seed}: {e}"))
            .collect();
        Err(Failure::Runtime(msg.join("; ")))
    }
}

fn analyze(cmd: AnalyzeCmd) -> CliResult {
    match cmd {
        AnalyzeCmd::Hessian { run, max_iter } => {
            let l = run.load()?;
            if !matches!(
                l.cfg.method,
                mhnes::search::Method::Pcdarts | mhnes::search::Method::Drnas
            ) {
                return Err(Failure::Usage(
                    "hessian tracing needs method pcdarts or drnas".into(),
                ));
            }
            let data = l.data()?;
            let mut trace =
                EigTrace::new(l.cfg.search.lambda_jsd, l.seed()).with_max_iter(max_iter);
            run_search(
                l.cfg.method,
                &data,
                &l.cfg.model,
                &l.cfg.search,
                l.seed(),
                Some(&mut trace),
            )?;
            let dir = l.out_dir()?;
            write(&dir.join("eig_trace.csv"), trace.to_csv()?)?;
            for r in &trace.rows {
                println!(
                    "epoch {:>3}  eig {:>12.6}  residual {:.2e}  iters {}",
                    r.epoch, r.eig, r.residual, r.iters
                );
            }
            Ok(())
        }
        AnalyzeCmd::Regret {
            run,
            sizes,
            samples,
        } => {
            let l = run.load()?;
            if samples < 2 {
                return Err(Failure::Usage("--samples must be at least 2".into()));
            }
            let data = l.data()?;
            let study = regret_study(&data, &l.cfg.model, &sizes, samples, &l.cfg.train, l.seed())?;
            let dir = l.out_dir()?;
            write(&dir.join("regret.csv"), study.to_csv()?)?;
            for g in study.groups() {
                println!(
                    "M {:>2}  mean nll {:.4}  std {:.4}  max regret {:.4}",
                    g.m,
                    g.mean,
                    g.std,
                    g.curve.last().copied().unwrap_or(0.0)
                );
            }
            Ok(())
        }
        AnalyzeCmd::Hamming { genotypes, out } => {
            let gs = genotypes
                .iter()
                .map(|p| MultiHeadGenotype::load(p))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| Failure::Usage(e.to_string()))?;
            let m = hamming_matrix(&gs)?;
            let names: Vec<String> = genotypes.iter().map(|p| p.display().to_string()).collect();
            let csv = hamming_csv(&names, &m)?;
            match out {
                Some(p) => write(&p, csv),
                None => {
                    print!("{csv}");
                    Ok(())
                }
            }
        }
    }
}

fn report_cmd(
    csv: Vec<PathBuf>,
    split: String,
    severity: usize,
    out: Option<PathBuf>,
) -> CliResult {
    let mut rows = Vec::new();
    for p in &csv {
        rows.extend(read_metrics(p).map_err(|e| Failure::Usage(e.to_string()))?);
    }
    let rep = report(&rows, &split, severity);
    match out {
        Some(p) => write(&p, report_csv(&rep)?),
        None => {
            print!("{}", report_table(&rep));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Dataset(c) => dataset(c),
        Command::Search(a) => search(a),
        Command::Train { run, genotype } => train(run, genotype),
        Command::Eval { run, model } => eval(run, model),
        Command::Baseline(a) => baseline(a),
        Command::Run(a) => full_run(a),
        Command::Analyze(c) => analyze(c),
        Command::Report {
            csv,
            split,
            severity,
            out,
        } => report_cmd(csv, split, severity, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
