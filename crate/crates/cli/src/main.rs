//! `ibconvex`: frontier, evaluation, convex generators, the angle domain and
//! the rotation classifiers, each writing CSV/JSON plus a manifest.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use ibconvex::circle::{self, CircleUniverse};
use ibconvex::convexity::ConvexityOptions;
use ibconvex::generators::{self, Direction};
use ibconvex::ib::{self, Frontier, FrontierOptions};
use ibconvex::model::{MeaningModel, Prior};
use ibconvex::stats::{self, Feature};
use ibconvex::wcs::{self, WcsDataset};
use ibconvex::{synthetic, Error};

use config::{FileConfig, Resolved};

/// Version of the frontier files; bump when their meaning changes.
const FRONTIER_FORMAT: u32 = 1;

#[derive(Parser)]
#[command(name = "ibconvex", version, about = "Efficiency and convexity of color naming systems")]
struct Cli {
    /// TOML file with defaults for any flag (keys use the flag names with underscores).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the IB frontier for the WCS meaning model.
    Frontier(FrontierArgs),
    /// Score attested systems (and optionally their hue rotations) against a frontier.
    Evaluate(EvaluateArgs),
    /// Generate convex systems by greedy swapping and agglomerative merging.
    Generate(GenerateArgs),
    /// Angle-domain constructions: the non-convex optimum and uninformative convex worlds.
    Circle(CircleArgs),
    /// Advantage rates, classifiers and likelihood-ratio tests from `evaluate --rotations` output.
    Classify(ClassifyArgs),
    /// Write synthetic files in the WCS layout (approximate coordinates, simulated languages).
    Synth(SynthArgs),
}

#[derive(Args, Clone, Default)]
struct ModelArgs {
    /// Directory holding chip.txt, cnum-vhcm-lab-new.txt and term.txt.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Variance of the Gaussian meanings in CIELAB units.
    #[arg(long)]
    sigma2: Option<f64>,
    /// `uniform` or a path to a prior file.
    #[arg(long)]
    prior: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone, Default)]
struct BetaArgs {
    #[arg(long)]
    beta_min: Option<f64>,
    #[arg(long)]
    beta_max: Option<f64>,
    #[arg(long)]
    beta_points: Option<usize>,
}

#[derive(Args)]
struct FrontierArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    betas: BetaArgs,
    /// Seed of the initial encoder noise.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Directory with frontier.csv and its manifest (defaults to --out).
    #[arg(long)]
    frontier_dir: Option<PathBuf>,
    /// Also score the 39 hue rotations of every language.
    #[arg(long)]
    rotations: bool,
    /// Leave achromatic chips out of the convexity scores.
    #[arg(long)]
    exclude_achromatic: bool,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    frontier_dir: Option<PathBuf>,
    /// Number of seeds per k (seeds 1..=N).
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long)]
    k_min: Option<usize>,
    #[arg(long)]
    k_max: Option<usize>,
    /// Direction of the greedy accuracy search: minimize or maximize.
    #[arg(long)]
    direction: Option<String>,
    /// Sweep cap per greedy search.
    #[arg(long)]
    max_iters: Option<usize>,
    /// Small run: 2 seeds, k in 3..=5.
    #[arg(long)]
    smoke: bool,
    /// Skip the agglomerative trace.
    #[arg(long)]
    no_agglomerative: bool,
}

#[derive(Args)]
struct CircleArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    bins: Option<usize>,
    #[command(flatten)]
    betas: BetaArgs,
    /// Seed for the random convex partitions of the second construction.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ClassifyArgs {
    /// rotations.csv written by `evaluate --rotations` (defaults to <out>/rotations.csv).
    #[arg(long)]
    rotations_csv: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 110)]
    languages: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Failure with its process exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure { code: 2, error }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: 2,
            error: e.into(),
        }
    }
}

fn convergence(msg: String) -> Failure {
    Failure {
        code: 3,
        error: anyhow!(msg),
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let file = match cli.config.as_deref().map(FileConfig::load).transpose() {
        Ok(f) => f.unwrap_or_default(),
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Frontier(a) => cmd_frontier(a, &file),
        Command::Evaluate(a) => cmd_evaluate(a, &file),
        Command::Generate(a) => cmd_generate(a, &file),
        Command::Circle(a) => cmd_circle(a, &file),
        Command::Classify(a) => cmd_classify(a, &file),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn create_out(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

#[derive(Serialize)]
struct Manifest<'a, C: Serialize> {
    command: &'a str,
    version: &'a str,
    config: &'a C,
    outputs: Vec<String>,
    elapsed_seconds: f64,
    #[serde(skip_serializing_if = "serde_json::Value::is_null")]
    extra: serde_json::Value,
}

fn write_manifest<C: Serialize>(
    dir: &Path,
    command: &str,
    config: &C,
    outputs: &[&str],
    started: Instant,
    extra: serde_json::Value,
) -> anyhow::Result<()> {
    let m = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config,
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
        elapsed_seconds: started.elapsed().as_secs_f64(),
        extra,
    };
    let path = dir.join(format!("{command}.manifest.json"));
    fs::write(&path, serde_json::to_string_pretty(&m)?).with_context(|| format!("writing {}", path.display()))
}

/// The inputs that determine a frontier; evaluate refuses a frontier built
/// from different ones.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
struct FrontierKey {
    format: u32,
    sigma2: f64,
    prior: String,
    /// Chip coordinates, so a frontier is tied to the data it was built on.
    coordinates_digest: String,
}

fn coordinates_digest(data: &WcsDataset) -> String {
    // FNV-1a over the coordinate bit patterns
    let mut h: u64 = 0xcbf29ce484222325;
    for c in data.universe.coords() {
        for x in c {
            for b in x.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
    }
    format!("{h:016x}")
}

fn load_model(r: &Resolved) -> Result<(WcsDataset, MeaningModel), Failure> {
    let data = wcs::load_wcs_dir(&r.data_dir).with_context(|| {
        format!(
            "loading WCS data from {} (expects {}, {}, {})",
            r.data_dir.display(),
            wcs::CHIP_FILE,
            wcs::LAB_FILE,
            wcs::TERM_FILE
        )
    })?;
    if data.dropped_responses > 0 {
        log::warn!("dropped {} responses with missing terms", data.dropped_responses);
    }
    let n = data.universe.len();
    let prior = if r.prior == "uniform" {
        Prior::uniform(n)
    } else {
        wcs::read_prior(Path::new(&r.prior), n)?
    };
    let meanings = wcs::gaussian_meanings(&data.universe, r.sigma2, prior)?;
    Ok((data, meanings))
}

fn frontier_key(r: &Resolved, data: &WcsDataset) -> FrontierKey {
    FrontierKey {
        format: FRONTIER_FORMAT,
        sigma2: r.sigma2,
        prior: r.prior.clone(),
        coordinates_digest: coordinates_digest(data),
    }
}

fn cmd_frontier(a: FrontierArgs, file: &FileConfig) -> CmdResult {
    let started = Instant::now();
    let r = Resolved::new(file, &a.model, Some(&a.betas), a.seed)?;
    let (data, meanings) = load_model(&r)?;
    create_out(&r.out)?;
    let betas = ib::beta_grid(r.beta_min, r.beta_max, r.beta_points)?;
    let opts = FrontierOptions {
        seed: r.seed,
        ..FrontierOptions::default()
    };
    log::info!("annealing over {} betas in [{}, {}]", betas.len(), r.beta_min, r.beta_max);
    let frontier = ib::compute_frontier(&meanings, &betas, &opts)?;
    frontier.write_csv(&r.out.join("frontier.csv"))?;
    ib::write_encoder_sidecar(&frontier, &r.out.join("frontier.enc"))?;
    let violations = frontier.invariant_violations();
    for v in &violations {
        log::warn!("frontier invariant: {v}");
    }
    write_manifest(
        &r.out,
        "frontier",
        &r,
        &["frontier.csv", "frontier.enc"],
        started,
        json!({
            "key": frontier_key(&r, &data),
            "unconverged_betas": frontier.unconverged,
            "invariant_violations": violations,
        }),
    )?;
    if !frontier.unconverged.is_empty() {
        return Err(convergence(format!(
            "{} of {} betas hit the iteration cap (files written; see frontier.manifest.json)",
            frontier.unconverged.len(),
            betas.len()
        )));
    }
    Ok(())
}

/// Load a frontier and check it was computed for this model.
fn load_frontier(dir: &Path, r: &Resolved, data: &WcsDataset) -> Result<Frontier, Failure> {
    let manifest_path = dir.join("frontier.manifest.json");
    let text = fs::read_to_string(&manifest_path)
        .with_context(|| format!("reading {} (run `ibconvex frontier` first)", manifest_path.display()))?;
    let manifest: serde_json::Value = serde_json::from_str(&text).context("parsing frontier manifest")?;
    let stored: FrontierKey = serde_json::from_value(manifest["extra"]["key"].clone())
        .context("frontier manifest has no key; recompute with `ibconvex frontier`")?;
    let expected = frontier_key(r, data);
    if stored != expected {
        return Err(anyhow!(
            "stale frontier in {}: built for {:?}, need {:?}; recompute with `ibconvex frontier`",
            dir.display(),
            stored,
            expected
        )
        .into());
    }
    Ok(Frontier::read_csv(&dir.join("frontier.csv"))?)
}

fn cmd_evaluate(a: EvaluateArgs, file: &FileConfig) -> CmdResult {
    let started = Instant::now();
    let r = Resolved::new(file, &a.model, None, None)?;
    let (data, meanings) = load_model(&r)?;
    let fdir = a.frontier_dir.clone().unwrap_or_else(|| r.out.clone());
    let frontier = load_frontier(&fdir, &r, &data)?;
    create_out(&r.out)?;
    let conv = ConvexityOptions {
        include_achromatic: !(a.exclude_achromatic || file.exclude_achromatic.unwrap_or(false)),
    };
    let records = stats::rotation_scores(&data, &meanings, &frontier, &conv, a.rotations)?;
    let attested: Vec<_> = records.iter().filter(|x| x.rotation == 0).cloned().collect();
    stats::write_rotation_csv(&attested, &r.out.join("languages.csv"))?;
    let mut outputs = vec!["languages.csv"];
    if a.rotations {
        stats::write_rotation_csv(&records, &r.out.join("rotations.csv"))?;
        outputs.push("rotations.csv");
    }
    let mut conv_scores: Vec<f64> = attested.iter().map(|x| x.convexity).collect();
    conv_scores.sort_by(f64::total_cmp);
    let median = conv_scores.get(conv_scores.len() / 2).copied();
    log::info!("{} languages scored; median convexity {:?}", attested.len(), median);
    write_manifest(
        &r.out,
        "evaluate",
        &json!({"resolved": r, "rotations": a.rotations, "include_achromatic": conv.include_achromatic}),
        &outputs,
        started,
        json!({"languages": attested.len(), "median_convexity": median}),
    )?;
    Ok(())
}

fn cmd_generate(a: GenerateArgs, file: &FileConfig) -> CmdResult {
    let started = Instant::now();
    let r = Resolved::new(file, &a.model, None, None)?;
    let (data, meanings) = load_model(&r)?;
    let fdir = a.frontier_dir.clone().unwrap_or_else(|| r.out.clone());
    let frontier = load_frontier(&fdir, &r, &data)?;
    create_out(&r.out)?;

    let (mut seeds, mut k_min, mut k_max) = (
        a.seeds.or(file.seeds).unwrap_or(20),
        a.k_min.or(file.k_min).unwrap_or(3),
        a.k_max.or(file.k_max).unwrap_or(17),
    );
    if a.smoke {
        (seeds, k_min, k_max) = (2, 3, 5);
    }
    if seeds == 0 || k_min == 0 || k_min > k_max || k_max > data.universe.len() {
        return Err(anyhow!("need seeds ≥ 1 and 1 ≤ k-min ≤ k-max ≤ {}", data.universe.len()).into());
    }
    let direction: Direction = a
        .direction
        .clone()
        .or_else(|| file.direction.clone())
        .unwrap_or_else(|| "minimize".into())
        .parse()?;
    let max_iters = a.max_iters.or(file.max_iters).unwrap_or(100);
    let seed_list: Vec<u64> = (1..=seeds).collect();
    log::info!("greedy search: k {k_min}..={k_max}, {seeds} seeds, {direction:?}");
    let mut traces = generators::greedy_schedule(
        &data.universe,
        &meanings,
        k_min..=k_max,
        &seed_list,
        max_iters,
        direction,
    )?;
    let unconverged = traces.iter().filter(|t| !t.converged).count();
    if !a.no_agglomerative {
        log::info!("agglomerative merging from {} centroids", data.universe.len());
        traces.push(generators::agglomerative_merge(&data.universe, &meanings, 3)?);
    }
    let pool = generators::pool_sample(&traces, k_min..=k_max, &data.universe, &meanings, &frontier)?;
    generators::write_pool_csv(&pool, &r.out.join("generated.csv"))?;
    generators::write_exemplar_sidecar(&traces, &r.out.join("exemplars.json"))?;
    let nonconvex = pool.iter().filter(|p| (p.convexity - 1.0).abs() > 1e-9).count();
    log::info!("pooled {} systems ({} greedy runs hit the sweep cap)", pool.len(), unconverged);
    write_manifest(
        &r.out,
        "generate",
        &json!({
            "resolved": r, "seeds": seed_list, "k_min": k_min, "k_max": k_max,
            "direction": direction, "max_iters": max_iters, "agglomerative": !a.no_agglomerative,
            "rng": "ChaCha8, seeded with the seed, stream k",
        }),
        &["generated.csv", "exemplars.json"],
        started,
        json!({"pooled": pool.len(), "greedy_runs_at_cap": unconverged, "non_convex": nonconvex}),
    )?;
    Ok(())
}

fn cmd_circle(a: CircleArgs, file: &FileConfig) -> CmdResult {
    let started = Instant::now();
    let out = a.out.or_else(|| file.out.clone()).unwrap_or_else(|| "out".into());
    let bins = a.bins.unwrap_or(circle::DEFAULT_BINS);
    let (lo, hi, pts) = (
        a.betas.beta_min.unwrap_or(5.0),
        a.betas.beta_max.unwrap_or(30.0),
        a.betas.beta_points.unwrap_or(101),
    );
    let seed = a.seed.or(file.seed).unwrap_or(0);
    create_out(&out)?;
    let universe = CircleUniverse::new(bins)?;
    let betas = ib::beta_grid(lo, hi, pts)?;

    let mut worlds = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for k in [2usize, 4, 8] {
        for _ in 0..20 {
            let p = circle::random_convex_partition(bins, k, &mut rng)?;
            worlds.push(circle::theorem2_construction(&universe, &p, 1.0)?);
        }
    }
    fs::write(out.join("circle_worlds.json"), serde_json::to_string(&worlds).map_err(Error::from)?)
        .context("writing circle_worlds.json")?;

    let config = json!({"bins": bins, "beta_min": lo, "beta_max": hi, "beta_points": pts, "seed": seed});
    let outputs = ["circle_optimum.csv", "circle.json", "circle_worlds.json"];
    match circle::find_nonconvex_optimum(&universe, &betas) {
        Ok(found) => {
            circle::write_encoder_csv(&universe, found.solution.encoder.matrix(), &out.join("circle_optimum.csv"))?;
            let report = json!({
                "verdict": "non-convex optimum found",
                "beta": found.solution.beta,
                "k": found.partition.k(),
                "runs_per_category": found.runs,
                "antipodal_gap": found.antipodal_gap,
                "epsilon_bits": found.epsilon,
                "complexity_bits": found.solution.complexity,
                "accuracy_bits": found.solution.accuracy,
                "converged": found.solution.converged,
                "scanned": found.scanned,
            });
            fs::write(out.join("circle.json"), serde_json::to_string_pretty(&report).map_err(Error::from)?)
                .context("writing circle.json")?;
            println!(
                "non-convex optimum found at beta {:.3}: {} categories with {:?} runs",
                found.solution.beta,
                found.partition.k(),
                found.runs
            );
            write_manifest(&out, "circle", &config, &outputs, started, serde_json::Value::Null)?;
            Ok(())
        }
        Err(e) => {
            let report = json!({"verdict": "no non-convex optimum in window", "diagnostic": e.to_string()});
            fs::write(out.join("circle.json"), serde_json::to_string_pretty(&report).map_err(Error::from)?)
                .context("writing circle.json")?;
            write_manifest(&out, "circle", &config, &outputs[1..], started, serde_json::Value::Null)?;
            Err(convergence(e.to_string()))
        }
    }
}

fn cmd_classify(a: ClassifyArgs, file: &FileConfig) -> CmdResult {
    let started = Instant::now();
    let out = a.out.or_else(|| file.out.clone()).unwrap_or_else(|| "out".into());
    let input = a.rotations_csv.unwrap_or_else(|| out.join("rotations.csv"));
    let folds = a.folds.unwrap_or(5);
    let seed = a.seed.or(file.seed).unwrap_or(0);
    let records = stats::read_rotation_csv(&input).with_context(|| format!("reading {}", input.display()))?;
    create_out(&out)?;

    let adv = stats::language_advantages(&records)?;
    let (eff, conv) = stats::advantage_rates(&records)?;
    let mut w = csv_writer(&out.join("advantages.csv"))?;
    for x in &adv {
        w.serialize(x).map_err(Error::from)?;
    }
    w.flush().context("writing advantages.csv")?;
    let mut w = csv_writer(&out.join("advantage_curves.csv"))?;
    for x in stats::advantage_curves(&records)? {
        w.serialize(x).map_err(Error::from)?;
    }
    w.flush().context("writing advantage_curves.csv")?;

    let pairs = stats::build_pairs(&records)?;
    let mut w = csv_writer(&out.join("cv_auc.csv"))?;
    w.write_record(["classifier", "fold", "auc"]).map_err(Error::from)?;
    let mut cv_summary = serde_json::Map::new();
    for (name, feats) in [
        ("delta_epsilon", vec![Feature::DeltaEpsilon]),
        ("delta_conv", vec![Feature::DeltaConv]),
        ("both", vec![Feature::DeltaEpsilon, Feature::DeltaConv]),
    ] {
        let cv = stats::cv_auc(&pairs, &feats, folds, seed)?;
        for (f, auc) in cv.fold_aucs.iter().enumerate() {
            let auc = auc.map(|x| x.to_string()).unwrap_or_default();
            w.write_record([name, &f.to_string(), &auc]).map_err(Error::from)?;
        }
        cv_summary.insert(name.into(), json!(cv.mean_auc));
    }
    w.flush().context("writing cv_auc.csv")?;

    let table = stats::table1(&pairs)?;
    let report = json!({
        "efficiency_advantage_rate": eff,
        "convexity_advantage_rate": conv,
        "mean_cv_auc": cv_summary,
        "table1": table,
    });
    fs::write(out.join("table1.json"), serde_json::to_string_pretty(&report).map_err(Error::from)?)
        .context("writing table1.json")?;
    println!(
        "efficiency advantage {:.3}, convexity advantage {:.3}; mean AUC {}",
        eff,
        conv,
        serde_json::Value::Object(cv_summary)
    );
    write_manifest(
        &out,
        "classify",
        &json!({"rotations_csv": input, "folds": folds, "seed": seed}),
        &["advantages.csv", "advantage_curves.csv", "cv_auc.csv", "table1.json"],
        started,
        serde_json::Value::Null,
    )?;
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, Failure> {
    Ok(csv::Writer::from_path(path).map_err(Error::from)?)
}

fn cmd_synth(a: SynthArgs) -> CmdResult {
    synthetic::write_dataset(&a.out, a.languages, a.seed)?;
    println!(
        "wrote synthetic WCS-layout files for {} languages to {} (not survey data)",
        a.languages,
        a.out.display()
    );
    Ok(())
}
