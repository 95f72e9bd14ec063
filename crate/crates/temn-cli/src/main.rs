//! Command-line entry point wiring the library into reproducible
//! workflows. Every artifact-producing command writes a `manifest.txt`
//! with its resolved configuration and seed next to its outputs.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use temn::corpus::{self, CheckInLog, DatasetSplit};
use temn::eval::{self, EvalOptions, PopularityScorer, RandomScorer, Scorer};
use temn::model::Model;
use temn::synthgen::{self, SynthConfig};
use temn::tlda::{self, TldaConfig};
use temn::trainer::{self, FitOptions, Scenario, TrainConfig};
use temn::{geo, inspect};

#[derive(Parser)]
#[command(
    name = "temn",
    about = "Topic-enhanced memory network for point-of-interest recommendation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Filter a raw check-in file, split it chronologically and segment
    /// the training part into gap-bounded sequences.
    Prepare(PrepareArgs),
    /// Generate a synthetic check-in corpus with planted structure.
    Synth(SynthArgs),
    /// Run the temporal topic sampler and export its posterior tables.
    Tlda(TldaArgs),
    /// Train a model on a prepared data directory.
    Train(TrainArgs),
    /// Evaluate a model (or a trivial baseline) under the sampled-negative
    /// ranking protocol.
    Evaluate(EvaluateArgs),
    /// Print the top-N unvisited POIs for a user.
    Recommend(RecommendArgs),
    /// Export attention, geo and pattern tables from a trained model.
    Inspect(InspectArgs),
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    if let Err(err) = run() {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Prepare(args) => prepare(args),
        Command::Synth(args) => synth(args),
        Command::Tlda(args) => run_tlda(args),
        Command::Train(args) => train(args),
        Command::Evaluate(args) => evaluate(args),
        Command::Recommend(args) => recommend(args),
        Command::Inspect(args) => inspect_cmd(args),
    }
}

fn ensure_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_manifest(dir: &Path, lines: &[String]) -> Result<()> {
    let mut file = File::create(dir.join("manifest.txt"))?;
    for line in lines {
        writeln!(file, "{line}")?;
    }
    Ok(())
}

fn load_log(path: &Path) -> Result<(CheckInLog, usize)> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let (log, stats) = corpus::parse_checkins(BufReader::new(file))?;
    Ok((log, stats.rejected))
}

fn load_split(dir: &Path) -> Result<DatasetSplit> {
    let (train, _) = load_log(&dir.join("train.csv"))?;
    let (validation, _) = load_log(&dir.join("validation.csv"))?;
    let (test, _) = load_log(&dir.join("test.csv"))?;
    Ok(DatasetSplit {
        train,
        validation,
        test,
        fractions: (0.70, 0.15, 0.15),
        dropped_users: Vec::new(),
    })
}

fn write_log_csv(log: &CheckInLog, path: &Path) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    log.write_csv(&mut file)?;
    file.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Args)]
struct PrepareArgs {
    /// Raw check-in file (`user,poi,timestamp,lat,lon[,category]`).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Keep users with at least this many distinct POIs.
    #[arg(long, default_value_t = 10)]
    min_pois: usize,
    #[arg(long, default_value_t = 0.70)]
    train_frac: f64,
    #[arg(long, default_value_t = 0.15)]
    val_frac: f64,
    #[arg(long, default_value_t = 0.15)]
    test_frac: f64,
    /// Gap threshold for sequence segmentation, in seconds.
    #[arg(long, default_value_t = 86_400)]
    delta_t: i64,
    /// Minimum retained segment length.
    #[arg(long, default_value_t = 5)]
    min_len: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

fn prepare(args: PrepareArgs) -> Result<()> {
    ensure_out_dir(&args.out)?;
    let (raw, rejected) = load_log(&args.input)?;
    let filtered = corpus::filter_users(&raw, args.min_pois)?;
    let split =
        corpus::chronological_split(&filtered, (args.train_frac, args.val_frac, args.test_frac))?;
    let sequences = corpus::segment_sequences(&split.train, args.delta_t, args.min_len)?;

    write_log_csv(&split.train, &args.out.join("train.csv"))?;
    write_log_csv(&split.validation, &args.out.join("validation.csv"))?;
    write_log_csv(&split.test, &args.out.join("test.csv"))?;

    let mut seq_file = BufWriter::new(File::create(args.out.join("sequences.csv"))?);
    for (user, segments) in &sequences.sequences {
        for (segment_id, segment) in segments.iter().enumerate() {
            for rec in segment {
                match &rec.category {
                    Some(cat) => writeln!(
                        seq_file,
                        "{user},{segment_id},{},{},{},{},{cat}",
                        rec.poi, rec.timestamp, rec.lat, rec.lon
                    )?,
                    None => writeln!(
                        seq_file,
                        "{user},{segment_id},{},{},{},{}",
                        rec.poi, rec.timestamp, rec.lat, rec.lon
                    )?,
                }
            }
        }
    }
    seq_file.flush()?;

    let mut manifest = vec![
        "command = prepare".to_string(),
        format!("input = {}", args.input.display()),
        format!("seed = {}", args.seed),
        format!("min_pois = {}", args.min_pois),
        format!(
            "fractions = {},{},{}",
            args.train_frac, args.val_frac, args.test_frac
        ),
        format!("delta_t = {}", args.delta_t),
        format!("min_len = {}", args.min_len),
        format!("raw_records = {}", raw.len()),
        format!("rejected_lines = {rejected}"),
        format!("filtered_records = {}", filtered.len()),
        format!("users = {}", filtered.num_users()),
        format!("pois = {}", filtered.num_pois()),
        format!("segments = {}", sequences.num_segments()),
        format!("dropped_users = {}", split.dropped_users.join(",")),
        String::new(),
        "[per_user_counts]".to_string(),
        "user_id,train,validation,test".to_string(),
    ];
    for user in filtered.users() {
        if split.dropped_users.iter().any(|d| d == user) {
            continue;
        }
        manifest.push(format!(
            "{user},{},{},{}",
            split.train.user_records(user).len(),
            split.validation.user_records(user).len(),
            split.test.user_records(user).len()
        ));
    }
    write_manifest(&args.out, &manifest)?;
    println!(
        "prepared {} records ({} users, {} POIs); {} rejected lines; outputs in {}",
        filtered.len(),
        filtered.num_users(),
        filtered.num_pois(),
        rejected,
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 500)]
    users: usize,
    #[arg(long, default_value_t = 200)]
    pois: usize,
    #[arg(long, default_value_t = 3)]
    patterns: usize,
    /// Check-ins per user (lower bound).
    #[arg(long, default_value_t = 200)]
    checkins: usize,
    /// Check-ins per user (upper bound); defaults to the lower bound.
    #[arg(long)]
    checkins_max: Option<usize>,
    /// Dirichlet concentration of user pattern mixtures.
    #[arg(long, default_value_t = 0.5)]
    concentration: f64,
    /// Number of weekly time slots in the planted profiles.
    #[arg(long, default_value_t = 6)]
    time_slots: usize,
    /// Geographic cluster radius in degrees.
    #[arg(long, default_value_t = 0.5)]
    radius: f64,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn synth(args: SynthArgs) -> Result<()> {
    ensure_out_dir(&args.out)?;
    let config = SynthConfig {
        num_users: args.users,
        num_pois: args.pois,
        num_patterns: args.patterns,
        checkins_per_user: (args.checkins, args.checkins_max.unwrap_or(args.checkins)),
        pattern_user_concentration: args.concentration,
        pattern_time_profiles: synthgen::default_time_profiles(args.patterns, args.time_slots),
        geo_cluster_radius: args.radius,
        noise_fraction: args.noise,
        seed: args.seed,
    };
    let (log, truth) = synthgen::generate(&config)?;
    write_log_csv(&log, &args.out.join("checkins.csv"))?;
    let mut users_file = BufWriter::new(File::create(args.out.join("ground_truth_users.csv"))?);
    synthgen::write_user_mixtures(&truth, &mut users_file)?;
    users_file.flush()?;
    let mut pois_file = BufWriter::new(File::create(args.out.join("ground_truth_pois.csv"))?);
    synthgen::write_poi_patterns(&truth, &mut pois_file)?;
    pois_file.flush()?;

    write_manifest(
        &args.out,
        &[
            "command = synth".to_string(),
            format!("seed = {}", config.seed),
            format!("users = {}", config.num_users),
            format!("pois = {}", config.num_pois),
            format!("patterns = {}", config.num_patterns),
            format!(
                "checkins_per_user = {},{}",
                config.checkins_per_user.0, config.checkins_per_user.1
            ),
            format!("concentration = {}", config.pattern_user_concentration),
            format!("time_slots = {}", config.time_slots()),
            format!("radius = {}", config.geo_cluster_radius),
            format!("noise = {}", config.noise_fraction),
            format!("records = {}", log.len()),
        ],
    )?;
    println!(
        "generated {} check-ins for {} users over {} POIs in {}",
        log.len(),
        config.num_users,
        config.num_pois,
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Args)]
struct TldaArgs {
    /// Check-in file to run the sampler on (typically `train.csv`).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    patterns: usize,
    /// Prior over pattern-user distributions; defaults to 50/patterns.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 0.01)]
    beta: f64,
    #[arg(long, default_value_t = 0.1)]
    gamma: f64,
    #[arg(long, default_value_t = 168)]
    time_slots: u32,
    /// Fixed offset from UTC in seconds for slot bucketing.
    #[arg(long, default_value_t = 0)]
    utc_offset: i32,
    #[arg(long, default_value_t = 500)]
    burn_in: usize,
    #[arg(long, default_value_t = 10)]
    samples: usize,
    #[arg(long, default_value_t = 10)]
    lag: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

fn run_tlda(args: TldaArgs) -> Result<()> {
    ensure_out_dir(&args.out)?;
    let (log, _) = load_log(&args.input)?;
    if log.is_empty() {
        bail!("input {} holds no check-ins", args.input.display());
    }
    let config = TldaConfig {
        num_patterns: args.patterns,
        alpha: args.alpha.unwrap_or(50.0 / args.patterns as f64),
        beta: args.beta,
        gamma: args.gamma,
        time_slots: args.time_slots,
        utc_offset: args.utc_offset,
        burn_in: args.burn_in,
        samples: args.samples,
        lag: args.lag,
        seed: args.seed,
    };
    let model = tlda::run(&log, &config)?;
    tlda::write_posterior_files(&model.posterior, &model.users, &model.venues, &args.out)?;
    write_manifest(
        &args.out,
        &[
            "command = tlda".to_string(),
            format!("input = {}", args.input.display()),
            format!("seed = {}", config.seed),
            format!("patterns = {}", config.num_patterns),
            format!("alpha = {}", config.alpha),
            format!("beta = {}", config.beta),
            format!("gamma = {}", config.gamma),
            format!("time_slots = {}", config.time_slots),
            format!("utc_offset = {}", config.utc_offset),
            format!("burn_in = {}", config.burn_in),
            format!("samples = {}", config.samples),
            format!("lag = {}", config.lag),
            format!("tokens = {}", log.len()),
        ],
    )?;
    println!(
        "topic posterior over {} patterns written to {}",
        config.num_patterns,
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Args)]
struct TrainArgs {
    /// Directory holding train.csv, validation.csv and test.csv.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Key-value config file applied before any flag overrides.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    dim_d: Option<usize>,
    #[arg(long)]
    slots_h: Option<usize>,
    #[arg(long)]
    patterns: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    distance_mode: Option<String>,
    /// Gap threshold for sequential-scenario segments, in seconds.
    #[arg(long, default_value_t = 86_400)]
    delta_t: i64,
    /// Minimum segment length for the sequential scenario.
    #[arg(long, default_value_t = 5)]
    min_len: usize,
}

fn train(args: TrainArgs) -> Result<()> {
    ensure_out_dir(&args.out)?;
    let scenario = match &args.scenario {
        Some(s) => Scenario::parse(s)?,
        None => Scenario::Gpr,
    };
    let mut config = TrainConfig::for_scenario(scenario);
    if let Some(path) = &args.config {
        config.apply_file(path)?;
    }
    if args.scenario.is_some() {
        // The flag wins over a scenario set in the config file, and its
        // default weights only apply when the file did not override them.
        config.scenario = scenario;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(epochs) = args.epochs {
        config.epochs = epochs;
    }
    if let Some(d) = args.dim_d {
        config.dim_d = d;
    }
    if let Some(h) = args.slots_h {
        config.slots_h = h;
    }
    if let Some(p) = args.patterns {
        config.patterns_pi = p;
    }
    if let Some(lr) = args.learning_rate {
        config.learning_rate = lr;
    }
    if let Some(b) = args.batch_size {
        config.batch_size = b;
    }
    if let Some(mode) = &args.distance_mode {
        config.distance_mode = geo::DistanceMode::parse(mode)?;
    }

    let split = load_split(&args.data)?;
    let sequences = if config.scenario == Scenario::Spr {
        Some(corpus::segment_sequences(&split.train, args.delta_t, args.min_len)?)
    } else {
        None
    };
    let opts = FitOptions {
        sequences: sequences.as_ref(),
        ..FitOptions::default()
    };
    let result = trainer::fit_with(&split, &opts, &config)?;

    let model_path = args.out.join("model.bin");
    result.model.save(&model_path)?;
    let mut log_file = BufWriter::new(File::create(args.out.join("training_log.tsv"))?);
    writeln!(log_file, "epoch\ttrain_loss\tvalidation_ndcg10")?;
    for stats in &result.history {
        writeln!(
            log_file,
            "{}\t{:.6}\t{:.6}",
            stats.epoch, stats.train_loss, stats.validation_ndcg10
        )?;
    }
    log_file.flush()?;

    let mut manifest = vec![
        "command = train".to_string(),
        format!("data = {}", args.data.display()),
        format!("model = {}", model_path.display()),
        format!("spr_delta_t = {}", args.delta_t),
        format!("spr_min_len = {}", args.min_len),
        String::new(),
        "[config]".to_string(),
    ];
    manifest.extend(config.render().lines().map(str::to_string));
    write_manifest(&args.out, &manifest)?;

    let best = result
        .history
        .iter()
        .map(|e| e.validation_ndcg10)
        .fold(f64::NEG_INFINITY, f64::max);
    println!(
        "trained {} epochs; best validation NDCG@10 {:.4}; model written to {}",
        result.history.len(),
        best.max(0.0),
        model_path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Directory holding train.csv, validation.csv and test.csv.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Ranking cutoffs.
    #[arg(long, value_delimiter = ',', default_values_t = (1..=10).collect::<Vec<usize>>())]
    cutoffs: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    negatives: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// What to score with: the model or a trivial baseline.
    #[arg(long, default_value = "model", value_parser = ["model", "popularity", "random"])]
    scorer: String,
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    ensure_out_dir(&args.out)?;
    let split = load_split(&args.data)?;
    let interactions =
        corpus::build_interactions_all(&[&split.train, &split.validation, &split.test]);
    let opts = EvalOptions {
        cutoffs: args.cutoffs.clone(),
        negatives_per_test: args.negatives,
        seed: args.seed,
    };

    let model;
    let popularity;
    let random;
    let scorer: &dyn Scorer = match args.scorer.as_str() {
        "model" => {
            model = Model::load(&args.model)?;
            &model
        }
        "popularity" => {
            popularity = PopularityScorer::from_train_log(&split.train);
            &popularity
        }
        _ => {
            random = RandomScorer { seed: args.seed };
            &random
        }
    };
    let report = eval::evaluate(scorer, &split.test, &interactions, &opts)?;

    let mut file = BufWriter::new(File::create(args.out.join("metrics.txt"))?);
    report.write_text(&mut file)?;
    file.flush()?;
    write_manifest(
        &args.out,
        &[
            "command = evaluate".to_string(),
            format!("model = {}", args.model.display()),
            format!("data = {}", args.data.display()),
            format!("scorer = {}", args.scorer),
            format!("seed = {}", args.seed),
            format!("negatives_per_test = {}", args.negatives),
            format!(
                "cutoffs = {}",
                args.cutoffs
                    .iter()
                    .map(usize::to_string)
                    .collect::<Vec<_>>()
                    .join(",")
            ),
            format!("num_test_events = {}", report.num_test_events),
            format!("num_events_skipped = {}", report.num_events_skipped),
        ],
    )?;
    let mut stdout = Vec::new();
    report.write_text(&mut stdout)?;
    print!("{}", String::from_utf8_lossy(&stdout));
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Args)]
struct RecommendArgs {
    #[arg(long)]
    model: PathBuf,
    /// Directory holding the splits; defines the visited sets to exclude.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    user: String,
    #[arg(long, default_value_t = 10)]
    n: usize,
}

fn recommend(args: RecommendArgs) -> Result<()> {
    let model = Model::load(&args.model)?;
    let split = load_split(&args.data)?;
    let interactions =
        corpus::build_interactions_all(&[&split.train, &split.validation, &split.test]);
    model.user_index(&args.user)?;
    let visited = interactions.visited.get(&args.user);
    let candidates: Vec<&str> = model
        .pois
        .iter()
        .map(String::as_str)
        .filter(|poi| visited.is_none_or(|set| !set.contains(*poi)))
        .collect();
    let scores = model.score_candidates(&args.user, &candidates)?;
    let mut ranked: Vec<(&str, f64)> = candidates.into_iter().zip(scores).collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(b.0)));
    for (rank, (poi, score)) in ranked.iter().take(args.n).enumerate() {
        println!("{}\t{poi}\t{score:.6}", rank + 1);
    }
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    model: PathBuf,
    /// Optional data directory; enables category summaries.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Entries per pattern in the summary tables.
    #[arg(long, default_value_t = 10)]
    top_k: usize,
}

fn inspect_cmd(args: InspectArgs) -> Result<()> {
    ensure_out_dir(&args.out)?;
    let model = Model::load(&args.model)?;
    let train_log = match &args.data {
        Some(dir) => Some(load_log(&dir.join("train.csv"))?.0),
        None => None,
    };

    let mut attention = BufWriter::new(File::create(args.out.join("attention_by_pattern.tsv"))?);
    inspect::write_attention_table(&model, &mut attention)?;
    attention.flush()?;

    let mut geo_file = BufWriter::new(File::create(args.out.join("geo_params.tsv"))?);
    inspect::write_geo_tables(&model, &mut geo_file)?;
    geo_file.flush()?;

    let mut summary = BufWriter::new(File::create(args.out.join("pattern_summary.txt"))?);
    inspect::write_pattern_summary(&model, train_log.as_ref(), args.top_k, &mut summary)?;
    summary.flush()?;

    tlda::write_posterior_files(&model.tlda_posterior, &model.users, &model.pois, &args.out)?;

    write_manifest(
        &args.out,
        &[
            "command = inspect".to_string(),
            format!("model = {}", args.model.display()),
            format!("seed = {}", model.config.seed),
            format!("top_k = {}", args.top_k),
        ],
    )?;
    println!("inspection tables written to {}", args.out.display());
    Ok(())
}
