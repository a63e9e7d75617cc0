use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use psbc::basis::BasisMatrix;
use psbc::data::{atomic_write, load_mnist, load_model, prepare_pair, save_model, Mnist, PairData};
use psbc::ensemble::{
    confusion, metrics, multiclass_report, ovo_predict_batch, pair_accuracy, train_all_committees,
    Committee, OvoSettings,
};
use psbc::pca::pca_basis;
use psbc::propagation::accuracy;
use psbc::simulate::{
    allen_cahn_simulate, sine_initial_condition, trajectory_csv, AlphaProfile, SimulationParams,
};
use psbc::training::{
    assess, cv_table_csv, fit, grid_search, history_csv, init_weights, Candidate, GridResult,
    ScheduleConfig, TrainConfig,
};
use psbc::verify;
use psbc::{BoundaryCondition, Hyperparameters, PsbcError, PsbcModel, Subordination};

const DATA_ENV: &str = "PSBC_DATA_DIR";

#[derive(Parser, Debug)]
#[command(name = "psbc", version, about = "Phase separation binary classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse the MNIST files and report per-digit counts
    Ingest(IngestArgs),
    /// Train one binary classifier on a digit pair
    Train(TrainArgs),
    /// Cross-validated grid search over learning rates and step ceilings
    Grid(GridArgs),
    /// Retrain several times on the full train-development set and test
    Assess(AssessArgs),
    /// One-vs-one classification of all ten digits
    Multiclass(MulticlassArgs),
    /// Run the Allen-Cahn scheme with a fixed alpha profile
    Simulate(SimulateArgs),
    /// Run the randomized property suites
    Verify(VerifyArgs),
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Directory with the four uncompressed MNIST files [default: $PSBC_DATA_DIR]
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

impl DataArgs {
    fn resolve(&self) -> Result<PathBuf, PsbcError> {
        match &self.data_dir {
            Some(d) => Ok(d.clone()),
            None => std::env::var_os(DATA_ENV)
                .map(PathBuf::from)
                .ok_or_else(|| {
                    PsbcError::Config(format!(
                        "no data directory: pass --data-dir or set {DATA_ENV}"
                    ))
                }),
        }
    }
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Also write the counts as CSV
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum BcArg {
    Neumann,
    Periodic,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum BasisArg {
    Canonical,
    Pca,
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    /// Digit pair `a,b`; the smaller digit gets label 0
    #[arg(long, value_parser = parse_digits)]
    digits: (u8, u8),
    #[arg(long, default_value_t = 2)]
    nt: usize,
    #[arg(long, default_value_t = 196)]
    npt: usize,
    #[arg(long, default_value_t = 0.0)]
    eps: f64,
    #[arg(long, value_enum, default_value_t = BcArg::Neumann)]
    bc: BcArg,
    /// Layers per shared weight group
    #[arg(long, default_value_t = 1)]
    shared: usize,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    subordinate: bool,
    #[arg(long, value_enum, default_value_t = BasisArg::Canonical)]
    basis: BasisArg,
    /// Use at most this many leading training records of the pair
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    data: DataArgs,
}

fn parse_digits(s: &str) -> Result<(u8, u8), String> {
    let (a, b) = s.split_once(',').ok_or("expected two digits as `a,b`")?;
    let d = |v: &str| {
        v.trim()
            .parse::<u8>()
            .ok()
            .filter(|d| *d <= 9)
            .ok_or(format!("`{v}` is not a digit"))
    };
    let (a, b) = (d(a)?, d(b)?);
    if a == b {
        return Err("the two digits must differ".into());
    }
    Ok((a, b))
}

impl ModelArgs {
    fn hp(&self, dt_star: f64) -> Result<Hyperparameters, PsbcError> {
        let bc = match self.bc {
            BcArg::Neumann => BoundaryCondition::Neumann,
            BcArg::Periodic => BoundaryCondition::Periodic,
        };
        let sub = if self.subordinate {
            Subordination::Subordinate
        } else {
            Subordination::NonSubordinate
        };
        Hyperparameters::new(
            self.nt,
            784,
            self.npt,
            self.eps,
            dt_star,
            self.shared,
            bc,
            sub,
        )
    }

    fn pair(&self, mnist: &Mnist) -> Result<PairData, PsbcError> {
        prepare_pair(mnist, self.digits.0, self.digits.1, self.limit)
    }

    fn basis(&self, pair: &PairData) -> Result<BasisMatrix, PsbcError> {
        match self.basis {
            BasisArg::Canonical => BasisMatrix::canonical(pair.train.n_u(), self.npt),
            BasisArg::Pca => pca_basis(&pair.train, self.npt)?.to_basis_matrix(),
        }
    }
}

#[derive(Args, Debug, Clone)]
struct ScheduleArgs {
    #[arg(long, default_value_t = 0.5)]
    lr_decay: f64,
    #[arg(long, default_value_t = 5)]
    decay_every: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 10)]
    patience: usize,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Step-size ceiling for both equations
    #[arg(long, default_value_t = 0.1)]
    dt: f64,
    #[arg(long, default_value_t = 30.0)]
    lr_u: f64,
    #[arg(long, default_value_t = 30.0)]
    lr_p: f64,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[command(flatten)]
    schedule: ScheduleArgs,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch history CSV [default: <out>.history.csv]
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GridArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Schedule and grid file (TOML); defaults apply when absent
    #[arg(long)]
    config: Option<PathBuf>,
    /// Cross-validation table CSV
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AssessArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    /// Run a grid search from this file first and assess its winner
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    dt: f64,
    #[arg(long, default_value_t = 30.0)]
    lr_u: f64,
    #[arg(long, default_value_t = 30.0)]
    lr_p: f64,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[command(flatten)]
    schedule: ScheduleArgs,
    /// Save the model of the first repeat
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct MulticlassArgs {
    /// Directory of committee files `pair-<a>-<b>-m<k>.psbc`
    #[arg(long)]
    models: PathBuf,
    /// Train all 45 committees into --models before predicting
    #[arg(long)]
    train: bool,
    #[arg(long, default_value_t = 1)]
    members: usize,
    /// Training records per pair
    #[arg(long)]
    per_pair: Option<usize>,
    #[arg(long, default_value_t = 2)]
    nt: usize,
    #[arg(long, default_value_t = 196)]
    npt: usize,
    #[arg(long, default_value_t = 0.1)]
    dt: f64,
    #[arg(long, default_value_t = 30.0)]
    lr_u: f64,
    #[arg(long, default_value_t = 30.0)]
    lr_p: f64,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    /// Evaluate on the first N test records only
    #[arg(long)]
    test_limit: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report file; the confusion matrix goes next to it as CSV
    #[arg(long, default_value = "multiclass-report.txt")]
    report: PathBuf,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// `const:<value>`, `step` or `parabola`
    #[arg(long, value_parser = |s: &str| AlphaProfile::parse(s).map_err(|e| e.to_string()))]
    alpha: AlphaProfile,
    #[arg(long, default_value_t = 20)]
    nu: usize,
    #[arg(long, default_value_t = 300)]
    nt: usize,
    #[arg(long, default_value_t = 0.1)]
    dt: f64,
    #[arg(long, default_value_t = 0.3)]
    eps: f64,
    #[arg(long, value_enum, default_value_t = BcArg::Neumann)]
    bc: BcArg,
    /// Trajectory CSV, one row per layer [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Multiplies the number of cases of every suite
    #[arg(long, default_value_t = 1)]
    scale: usize,
    /// Run only the named suite
    #[arg(long)]
    suite: Option<String>,
}

fn write_out(path: &Path, contents: &str) -> Result<(), PsbcError> {
    atomic_write(path, contents.as_bytes())?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn ingest(a: &IngestArgs) -> Result<(), PsbcError> {
    let mnist = load_mnist(&a.data.resolve()?)?;
    let mut csv = String::from("digit,train_dev,test\n");
    println!("train-development records: {}", mnist.train_dev.len());
    println!("test records: {}", mnist.test.len());
    for d in 0..10u8 {
        let tr = mnist.train_dev.labels.iter().filter(|&&l| l == d).count();
        let te = mnist.test.labels.iter().filter(|&&l| l == d).count();
        println!("digit {d}: {tr} train-development, {te} test");
        csv.push_str(&format!("{d},{tr},{te}\n"));
    }
    if let Some(out) = &a.out {
        write_out(out, &csv)?;
    }
    Ok(())
}

fn train_config(s: &ScheduleArgs, lr_u: f64, lr_p: f64, epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        lr_decay: s.lr_decay,
        decay_every: s.decay_every,
        batch_size: s.batch_size,
        patience: s.patience,
        ..TrainConfig::new(lr_u, lr_p, epochs, seed)
    }
}

fn train(a: &TrainArgs) -> Result<(), PsbcError> {
    let mnist = load_mnist(&a.model.data.resolve()?)?;
    let pair = a.model.pair(&mnist)?;
    let hp = a.model.hp(a.dt)?;
    let basis = a.model.basis(&pair)?;
    let mut model = PsbcModel::new(hp.clone(), basis, init_weights(&hp, a.model.seed))?;
    let config = train_config(
        &a.schedule,
        a.lr_u,
        a.lr_p,
        a.epochs,
        a.model.seed.wrapping_add(1),
    );
    let report = fit(&mut model, &pair.train, &pair.train, &config)?;
    model.set_normalization(Some(pair.map.clone()))?;
    let test_acc = accuracy(&model, &pair.test.samples())?;
    println!(
        "best epoch {} of {}; test accuracy {test_acc:.6} on {} records",
        report.best_epoch,
        report.history.len(),
        pair.test.len()
    );
    save_model(&model, &a.out)?;
    eprintln!("wrote {}", a.out.display());
    let history = a.history.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".history.csv");
        PathBuf::from(p)
    });
    write_out(&history, &history_csv(&report.history))
}

fn schedule(path: &Option<PathBuf>) -> Result<ScheduleConfig, PsbcError> {
    match path {
        Some(p) => ScheduleConfig::parse(&fs::read_to_string(p)?),
        None => Ok(ScheduleConfig::default()),
    }
}

fn run_grid(
    model: &ModelArgs,
    sched: &ScheduleConfig,
    pair: &PairData,
) -> Result<GridResult, PsbcError> {
    let hp = model.hp(sched.grid[0].dt_star_u.max(sched.grid[0].dt_star_p))?;
    let basis = model.basis(pair)?;
    let base = sched.train_config(&sched.grid[0], sched.grid_epochs, 0);
    let r = grid_search(
        &sched.grid,
        &pair.train,
        &hp,
        &basis,
        sched.folds,
        &base,
        model.seed,
    )?;
    for row in &r.table {
        let c = row.candidate;
        println!(
            "lr_u={} lr_p={} dt_star_u={} dt_star_p={}: mean validation accuracy {:.6}",
            c.lr_u, c.lr_p, c.dt_star_u, c.dt_star_p, row.mean_accuracy
        );
    }
    let b = r.best;
    println!(
        "best: lr_u={} lr_p={} dt_star_u={} dt_star_p={}",
        b.lr_u, b.lr_p, b.dt_star_u, b.dt_star_p
    );
    Ok(r)
}

fn grid(a: &GridArgs) -> Result<(), PsbcError> {
    let sched = schedule(&a.config)?;
    eprintln!("schedule: {sched:?}");
    let mnist = load_mnist(&a.model.data.resolve()?)?;
    let r = run_grid(&a.model, &sched, &a.model.pair(&mnist)?)?;
    if let Some(out) = &a.out {
        write_out(out, &cv_table_csv(&r.table))?;
    }
    Ok(())
}

fn assess_cmd(a: &AssessArgs) -> Result<(), PsbcError> {
    let mnist = load_mnist(&a.model.data.resolve()?)?;
    let pair = a.model.pair(&mnist)?;
    let (candidate, base) = match &a.config {
        Some(_) => {
            let sched = schedule(&a.config)?;
            eprintln!("schedule: {sched:?}");
            let best = run_grid(&a.model, &sched, &pair)?.best;
            (best, sched.train_config(&best, sched.final_epochs, 0))
        }
        None => {
            let c = Candidate {
                lr_u: a.lr_u,
                lr_p: a.lr_p,
                dt_star_u: a.dt,
                dt_star_p: a.dt,
            };
            (c, train_config(&a.schedule, a.lr_u, a.lr_p, a.epochs, 0))
        }
    };
    let hp = a.model.hp(candidate.dt_star_u.max(candidate.dt_star_p))?;
    let basis = a.model.basis(&pair)?;
    let r = assess(
        &hp,
        &basis,
        &candidate,
        &pair.train,
        &pair.test,
        a.repeats,
        &base,
        a.model.seed,
    )?;
    for (i, acc) in r.accuracies.iter().enumerate() {
        println!("repeat {i}: test accuracy {acc:.6}");
    }
    println!(
        "test accuracy {:.4} +- {:.4} over {} repeats",
        r.mean, r.sd, a.repeats
    );
    if let Some(out) = &a.out {
        let mut model = r.model;
        model.set_normalization(Some(pair.map.clone()))?;
        save_model(&model, out)?;
        eprintln!("wrote {}", out.display());
    }
    Ok(())
}

fn committee_file(dir: &Path, (a, b): (u8, u8), k: usize) -> PathBuf {
    dir.join(format!("pair-{a}-{b}-m{k}.psbc"))
}

fn parse_committee_name(name: &str) -> Option<((u8, u8), usize)> {
    let rest = name.strip_prefix("pair-")?.strip_suffix(".psbc")?;
    let mut it = rest.split('-');
    let a = it.next()?.parse().ok()?;
    let b = it.next()?.parse().ok()?;
    let k = it.next()?.strip_prefix('m')?.parse().ok()?;
    it.next().is_none().then_some(((a, b), k))
}

fn load_committees(dir: &Path) -> Result<Vec<Committee>, PsbcError> {
    let mut members: BTreeMap<(u8, u8), BTreeMap<usize, PsbcModel>> = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if let Some((pair, k)) = parse_committee_name(name) {
            members
                .entry(pair)
                .or_default()
                .insert(k, load_model(&path)?);
        }
    }
    members
        .into_iter()
        .map(|(pair, ms)| Committee::new(pair, ms.into_values().collect()))
        .collect()
}

fn multiclass(a: &MulticlassArgs) -> Result<(), PsbcError> {
    let mnist = load_mnist(&a.data.resolve()?)?;
    if a.train {
        let hp = Hyperparameters::new(
            a.nt,
            784,
            a.npt,
            0.0,
            a.dt,
            1,
            BoundaryCondition::Neumann,
            Subordination::Subordinate,
        )?;
        let settings = OvoSettings {
            hp,
            candidate: Candidate {
                lr_u: a.lr_u,
                lr_p: a.lr_p,
                dt_star_u: a.dt,
                dt_star_p: a.dt,
            },
            train: TrainConfig::new(a.lr_u, a.lr_p, a.epochs, 0),
            members: a.members,
            per_pair: a.per_pair,
        };
        let committees = train_all_committees(&mnist.train_dev, &settings, a.seed)?;
        fs::create_dir_all(&a.models)?;
        for c in &committees {
            for (k, m) in c.members().iter().enumerate() {
                save_model(m, &committee_file(&a.models, c.pair(), k))?;
            }
        }
        eprintln!(
            "wrote {} committees to {}",
            committees.len(),
            a.models.display()
        );
    }
    let committees = load_committees(&a.models)?;
    let mut test = mnist.test.to_dataset();
    if let Some(n) = a.test_limit {
        test = test.head(n);
    }
    let xs: Vec<&[f64]> = test.features().collect();
    let preds = ovo_predict_batch(&committees, &xs, a.seed)?;
    let cm = confusion(&preds, test.labels(), 10)?;
    let pair_acc = committees
        .iter()
        .map(|c| Ok((c.pair(), pair_accuracy(c, &test)?)))
        .collect::<Result<Vec<_>, PsbcError>>()?;
    let (acc, f1) = metrics(&cm);
    println!(
        "multiclass accuracy {acc:.4}, macro F1 {f1:.4} on {} records",
        test.len()
    );
    write_out(&a.report, &multiclass_report(&cm, &pair_acc))?;
    write_out(&a.report.with_extension("confusion.csv"), &cm.to_csv())
}

fn simulate(a: &SimulateArgs) -> Result<(), PsbcError> {
    let bc = match a.bc {
        BcArg::Neumann => BoundaryCondition::Neumann,
        BcArg::Periodic => BoundaryCondition::Periodic,
    };
    let params = SimulationParams {
        n_t: a.nt,
        dt: a.dt,
        eps: a.eps,
        bc,
    };
    let profile = a.alpha;
    let traj = allen_cahn_simulate(|x| profile.eval(x), &sine_initial_condition(a.nu), &params)?;
    let csv = trajectory_csv(&traj);
    match &a.out {
        Some(p) => write_out(p, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn verify_cmd(a: &VerifyArgs) -> Result<bool, PsbcError> {
    let reports = verify::run_all(a.seed, a.scale)?;
    let known: Vec<&str> = reports.iter().map(|r| r.name).collect();
    if let Some(s) = &a.suite {
        if !known.contains(&s.as_str()) {
            return Err(PsbcError::Config(format!(
                "unknown suite `{s}`; known: {}",
                known.join(", ")
            )));
        }
    }
    let mut all_ok = true;
    for r in reports
        .iter()
        .filter(|r| a.suite.as_deref().is_none_or(|s| s == r.name))
    {
        let status = if r.passed() { "PASS" } else { "FAIL" };
        println!(
            "{status} {:<18} {} passed, {} failed (worst {:.3e})",
            r.name,
            r.cases - r.failures,
            r.failures,
            r.worst
        );
        all_ok &= r.passed();
    }
    Ok(all_ok)
}

fn is_user_error(e: &PsbcError) -> bool {
    !matches!(
        e,
        PsbcError::Propagation { .. } | PsbcError::Diverged { .. }
    )
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    eprintln!("resolved configuration: {:#?}", cli.command);
    let result = match &cli.command {
        Command::Ingest(a) => ingest(a).map(|_| true),
        Command::Train(a) => train(a).map(|_| true),
        Command::Grid(a) => grid(a).map(|_| true),
        Command::Assess(a) => assess_cmd(a).map(|_| true),
        Command::Multiclass(a) => multiclass(a).map(|_| true),
        Command::Simulate(a) => simulate(a).map(|_| true),
        Command::Verify(a) => verify_cmd(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if is_user_error(&e) { 1 } else { 2 })
        }
    }
}
