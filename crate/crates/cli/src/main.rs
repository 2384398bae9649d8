use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use jpsh::data_io::{self, FeatureSet, SplitSpec};
use jpsh::encoder::{self, load_codes, save_codes, CodeSet};
use jpsh::index::HammingIndex;
use jpsh::metrics::EvalOptions;
use jpsh::model_io::{load_model, save_model, Model};
use jpsh::optimizer::{AnchorInit, Mode};
use jpsh::pipeline::{evaluate_model, summarize, train_method, CellSummary, Method};
use jpsh::{baselines, JpshError};
use serde::Serialize;

mod config;

use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "jpsh", version, about = "Learn binary codes with jointly personalized sparse hashing and search them")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a feature file.
    Train(TrainArgs),
    /// Encode a feature file into a code file.
    Encode(EncodeArgs),
    /// Rank database codes for every query vector.
    Search(SearchArgs),
    /// Train and evaluate methods over code lengths and seeds.
    Eval(EvalArgs),
    /// Evaluate the jsh-only, psh-only and jpsh modes side by side.
    Ablate(EvalArgs),
}

#[derive(Args, Clone)]
struct DataArgs {
    /// TOML experiment config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// fvec, csv or idx (default: from the file name).
    #[arg(long)]
    format: Option<String>,
    /// Label file, one comma-separated label set per line.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct HyperArgs {
    /// Anchor count.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    psi: Option<usize>,
    #[arg(long)]
    l1: Option<f64>,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long)]
    l3: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    ridge: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    hyper: HyperArgs,
    #[arg(long)]
    bits: Option<usize>,
    /// jpsh, jsh-only, psh-only, jpsh0 or lsh.
    #[arg(long)]
    method: Option<String>,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    format: Option<String>,
    /// Code file to write; ids go to `<out>.ids`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
#[command(group(clap::ArgGroup::new("cutoff").required(true).args(["top_n", "radius"])))]
struct SearchArgs {
    #[arg(long)]
    model: PathBuf,
    /// Database code file.
    #[arg(long)]
    db: PathBuf,
    /// Feature file with one or more query vectors.
    #[arg(long)]
    query: PathBuf,
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    top_n: Option<usize>,
    #[arg(long)]
    radius: Option<u32>,
}

#[derive(Args, Clone)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Separate test feature file (otherwise the data is split).
    #[arg(long)]
    test_data: Option<PathBuf>,
    #[arg(long)]
    test_labels: Option<PathBuf>,
    /// Code lengths, comma separated.
    #[arg(long, value_delimiter = ',')]
    bits: Vec<usize>,
    /// Methods, comma separated.
    #[arg(long, value_delimiter = ',')]
    methods: Vec<String>,
    /// Seeds, comma separated.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Evaluate this model file instead of training.
    #[arg(long)]
    model: Option<PathBuf>,
}

fn exit_code(e: &JpshError) -> u8 {
    match e {
        JpshError::Io { .. } | JpshError::Param(_) => 2,
        JpshError::Solver(_) | JpshError::Divergence { .. } => 3,
        JpshError::Format(_)
        | JpshError::Data { .. }
        | JpshError::Split { .. }
        | JpshError::Shape(_)
        | JpshError::EmptyIndex
        | JpshError::Label(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Encode(a) => cmd_encode(a),
        Command::Search(a) => cmd_search(a),
        Command::Eval(a) => cmd_eval(a, None),
        Command::Ablate(a) => cmd_eval(a, Some(vec![Method::JshOnly, Method::PshOnly, Method::Jpsh])),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn parse<T: std::str::FromStr<Err = JpshError>>(s: &str) -> Result<T, JpshError> {
    s.parse()
}

fn apply_overrides(cfg: &mut ExperimentConfig, data: &DataArgs, hyper: &HyperArgs) -> Result<(), JpshError> {
    if let Some(p) = &data.data {
        cfg.data.path = Some(p.clone());
    }
    if let Some(f) = &data.format {
        cfg.data.format = Some(parse(f)?);
    }
    if let Some(p) = &data.labels {
        cfg.data.labels = Some(p.clone());
    }
    if let Some(p) = &data.out {
        cfg.output_dir = p.clone();
    }
    let h = &mut cfg.hyper;
    let HyperArgs {
        m,
        k,
        psi,
        l1,
        l2,
        l3,
        max_iters,
        ridge,
        seed,
    } = hyper.clone();
    h.anchors = m.unwrap_or(h.anchors);
    h.k = k.unwrap_or(h.k);
    h.psi = psi.unwrap_or(h.psi);
    h.lambda1 = l1.unwrap_or(h.lambda1);
    h.lambda2 = l2.unwrap_or(h.lambda2);
    h.lambda3 = l3.unwrap_or(h.lambda3);
    h.max_iters = max_iters.unwrap_or(h.max_iters);
    h.ridge = ridge.or(h.ridge);
    h.seed = seed.unwrap_or(h.seed);
    Ok(())
}

fn load_set(cfg: &ExperimentConfig, path: &Path, labels: Option<&Path>) -> Result<FeatureSet, JpshError> {
    let fs = data_io::load_features(path, cfg.format_for(path)?)?;
    match labels {
        Some(l) => fs.with_labels(data_io::load_labels(l)?),
        None => Ok(fs),
    }
}

fn create_dir(dir: &Path) -> Result<(), JpshError> {
    std::fs::create_dir_all(dir).map_err(|e| JpshError::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), JpshError> {
    std::fs::write(path, bytes).map_err(|e| JpshError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn cmd_train(args: TrainArgs) -> Result<(), JpshError> {
    let mut cfg = ExperimentConfig::load_or_default(args.data.config.as_deref())?;
    apply_overrides(&mut cfg, &args.data, &args.hyper)?;
    if let Some(b) = args.bits {
        cfg.hyper.bits = b;
    }
    let method = match &args.method {
        Some(m) => parse::<Method>(m)?,
        None => match (cfg.hyper.mode, cfg.hyper.anchor_init) {
            (Mode::Jpsh, AnchorInit::Random) => Method::Jpsh0,
            (Mode::Jpsh, AnchorInit::Kmeans) => Method::Jpsh,
            (Mode::JshOnly, _) => Method::JshOnly,
            (Mode::PshOnly, _) => Method::PshOnly,
        },
    };
    cfg.hyper = method.hyper(&cfg.hyper);
    cfg.validate()?;
    let data_path = cfg.data_path()?.to_path_buf();
    let fs = load_set(&cfg, &data_path, cfg.data.labels.clone().as_deref())?;
    let (model, trace) = train_method(&fs, &cfg.hyper, method, &mut HashMap::new())?;

    let dir = cfg.output_dir.clone();
    create_dir(&dir)?;
    save_model(dir.join("model.jpshm"), &model)?;
    if let Some(trace) = &trace {
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).expect("writing to memory");
        write_file(&dir.join("trace.csv"), &buf)?;
        if let Some(last) = trace.last() {
            println!("final objective {:.6e} after {} iterations", last.objective, last.iter);
            let names = ["anchor fit", "pairwise fit", "group sparsity", "network lasso", "row sparsity"];
            for (name, v) in names.iter().zip(last.terms) {
                println!("  {name:<15}{v:.6e}");
            }
        }
    } else {
        println!("{method} model with {} bits over {} features", model.bits(), model.dim());
    }
    cfg.write_manifest(&dir)?;
    println!("wrote {}", dir.join("model.jpshm").display());
    Ok(())
}

fn encode_features(model: &Model, fs: &FeatureSet) -> Result<CodeSet, JpshError> {
    match model {
        Model::Jpsh(m) => encoder::encode_batch(m, fs),
        Model::Lsh(m) => baselines::lsh_encode_batch(m, fs),
    }
}

fn load_with_format(path: &Path, format: Option<&str>) -> Result<FeatureSet, JpshError> {
    let mut cfg = ExperimentConfig::default();
    if let Some(f) = format {
        cfg.data.format = Some(parse(f)?);
    }
    load_set(&cfg, path, None)
}

fn cmd_encode(args: EncodeArgs) -> Result<(), JpshError> {
    let model = load_model(&args.model)?;
    let fs = load_with_format(&args.data, args.format.as_deref())?;
    let codes = encode_features(&model, &fs)?;
    save_codes(&args.out, &codes)?;
    println!("encoded {} samples into {}-bit codes", codes.len(), codes.bits());
    Ok(())
}

fn cmd_search(args: SearchArgs) -> Result<(), JpshError> {
    let model = load_model(&args.model)?;
    let db = load_codes(&args.db)?;
    if db.bits() != model.bits() {
        return Err(JpshError::Param(format!(
            "database has {}-bit codes but the model makes {}-bit codes",
            db.bits(),
            model.bits()
        )));
    }
    let queries = load_with_format(&args.query, args.format.as_deref())?;
    let codes = encode_features(&model, &queries)?;
    let index = HammingIndex::new(db);
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for q in 0..codes.len() {
        let hits = match (args.top_n, args.radius) {
            (Some(n), _) => index.search_ranked(codes.code(q), n)?,
            (None, Some(r)) => index.search_radius(codes.code(q), r)?,
            (None, None) => unreachable!("clap requires a cutoff"),
        };
        if codes.len() > 1 {
            writeln!(out, "# {}", codes.ids()[q]).ok();
        }
        for h in hits {
            writeln!(out, "{}\t{}", h.id, h.distance).ok();
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalOutput {
    cells: Vec<CellSummary>,
}

fn method_of(model: &Model) -> Method {
    match model {
        Model::Lsh(_) => Method::Lsh,
        Model::Jpsh(m) => match (m.hyper.mode, m.hyper.anchor_init) {
            (Mode::Jpsh, AnchorInit::Random) => Method::Jpsh0,
            (Mode::Jpsh, _) => Method::Jpsh,
            (Mode::JshOnly, _) => Method::JshOnly,
            (Mode::PshOnly, _) => Method::PshOnly,
        },
    }
}

fn cmd_eval(args: EvalArgs, fixed_methods: Option<Vec<Method>>) -> Result<(), JpshError> {
    let mut cfg = ExperimentConfig::load_or_default(args.data.config.as_deref())?;
    apply_overrides(&mut cfg, &args.data, &args.hyper)?;
    if let Some(p) = &args.test_data {
        cfg.data.test_path = Some(p.clone());
    }
    if let Some(p) = &args.test_labels {
        cfg.data.test_labels = Some(p.clone());
    }
    if !args.bits.is_empty() {
        cfg.eval.bits = args.bits.clone();
    }
    if !args.seeds.is_empty() {
        cfg.eval.seeds = args.seeds.clone();
    }
    if !args.methods.is_empty() {
        cfg.eval.methods = args.methods.iter().map(|m| parse(m)).collect::<Result<_, _>>()?;
    }
    if let Some(methods) = fixed_methods {
        cfg.eval.methods = methods;
    }
    cfg.validate()?;

    let data_path = cfg.data_path()?.to_path_buf();
    let all = load_set(&cfg, &data_path, cfg.data.labels.clone().as_deref())?;
    let (mut train_fs, test_fs) = match cfg.data.test_path.clone() {
        Some(tp) => (all, load_set(&cfg, &tp, cfg.data.test_labels.clone().as_deref())?),
        None => data_io::split(
            &all,
            &SplitSpec {
                test_per_class: cfg.split.test_per_class,
                seed: cfg.split.seed,
                strategy: cfg.split.strategy,
            },
        )?,
    };
    if let Some(size) = cfg.split.train_size {
        train_fs = data_io::subsample(&train_fs, size, cfg.split.seed)?;
    }
    if test_fs.n() == 0 {
        return Err(JpshError::Data {
            row: 0,
            col: 0,
            msg: "the test set is empty".into(),
        });
    }

    let dir = cfg.output_dir.clone();
    let curves = dir.join("curves");
    create_dir(&curves)?;
    let mut cells: BTreeMap<(usize, usize), Vec<jpsh::metrics::EvalReport>> = BTreeMap::new();
    let mut methods = cfg.eval.methods.clone();

    if let Some(model_path) = &args.model {
        let model = load_model(model_path)?;
        let method = method_of(&model);
        methods = vec![method];
        let opts = eval_options(&cfg, vec![]);
        let report = evaluate_model(&model, &train_fs, &test_fs, &opts)?;
        write_curves(&curves, method, model.bits(), None, &report)?;
        cells.entry((model.bits(), 0)).or_default().push(report);
    } else {
        for &bits in &cfg.eval.bits {
            for &seed in &cfg.eval.seeds {
                let mut hyper = cfg.hyper.clone();
                hyper.bits = bits;
                hyper.seed = seed;
                let opts = eval_options(&cfg, vec![seed]);
                let mut cache = HashMap::new();
                for (pos, &method) in methods.iter().enumerate() {
                    let (model, _) = train_method(&train_fs, &hyper, method, &mut cache)?;
                    let report = evaluate_model(&model, &train_fs, &test_fs, &opts)?;
                    write_curves(&curves, method, bits, Some(seed), &report)?;
                    cells.entry((bits, pos)).or_default().push(report);
                }
            }
        }
    }

    let summaries: Vec<CellSummary> = cells
        .into_iter()
        .map(|((bits, pos), runs)| summarize(methods[pos], bits, runs))
        .collect();
    print_table(&summaries);
    let json = serde_json::to_string_pretty(&EvalOutput { cells: summaries }).expect("report serializes");
    write_file(&dir.join("report.json"), json.as_bytes())?;
    cfg.write_manifest(&dir)?;
    Ok(())
}

fn eval_options(cfg: &ExperimentConfig, seeds: Vec<u64>) -> EvalOptions {
    EvalOptions {
        top_ns: cfg.eval.top_ns.clone(),
        map_at: cfg.eval.map_at.clone(),
        seeds,
    }
}

fn write_curves(
    dir: &Path,
    method: Method,
    bits: usize,
    seed: Option<u64>,
    report: &jpsh::metrics::EvalReport,
) -> Result<(), JpshError> {
    let name = match seed {
        Some(s) => format!("{method}-{bits}bits-seed{s}.csv"),
        None => format!("{method}-{bits}bits.csv"),
    };
    let mut buf = Vec::new();
    report.write_curves_csv(&mut buf).expect("writing to memory");
    write_file(&dir.join(name), &buf)
}

fn print_table(cells: &[CellSummary]) {
    println!("{:<10} {:>5} {:>8} {:>8} {:>9} {:>6}", "method", "bits", "mAP", "std", "mAP@100", "runs");
    for c in cells {
        let at100 = c.map_at_100_mean.map_or("-".to_string(), |v| format!("{v:.4}"));
        println!(
            "{:<10} {:>5} {:>8.4} {:>8.4} {:>9} {:>6}",
            c.method.to_string(),
            c.bits,
            c.map_mean,
            c.map_std,
            at100,
            c.runs.len()
        );
    }
}
