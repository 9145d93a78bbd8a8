use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use symptomap::corpus::Category;
use symptomap::pipeline::{run_stages, PipelineConfig, Stage, StudyReport};
use symptomap::synth::{generate_cohort, Nonlinearity, SyntheticSpec};
use symptomap::Error;

const EXIT_INVALID: u8 = 2;
const EXIT_STAGE: u8 = 3;

/// Dimensionality reduction, clustering, local explanation, group statistics
/// and classification for speech-feature cohorts.
#[derive(Parser)]
#[command(name = "symptomap", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config's `out_dir`.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Overrides the config's `matrix`.
    #[arg(long, global = true)]
    matrix: Option<PathBuf>,
    /// Overrides the config's `categories`.
    #[arg(long, global = true)]
    categories: Option<PathBuf>,
    /// Sets any config key, e.g. `--set tsne_perplexity=20`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Drop constant and redundant features, then standardize.
    Preprocess,
    /// Preprocess, then fit every configured embedding.
    Embed,
    /// Embed, then run the elbow search and K-Means per method.
    Cluster,
    /// Cluster, then explain the selected cohort.
    Explain,
    /// Explain, then compare frequency vectors across groups.
    Stats,
    /// Run the classification study; earlier stages run too unless
    /// `classify_differentiators` is set.
    Classify,
    /// Run every stage.
    RunAll,
    /// Write a synthetic cohort (matrix.csv, categories.json, truth.csv and a
    /// starter config.toml) into the output directory.
    Synth(SynthArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// TOML spec; flags below override its keys.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Samples per label in HC,AD,MCI,Depr order.
    #[arg(long, value_delimiter = ',')]
    n_per_label: Option<Vec<usize>>,
    /// Features per category, nine comma-separated counts.
    #[arg(long, value_delimiter = ',')]
    features_per_category: Option<Vec<usize>>,
    /// Categories carrying the cluster structure (comma-separated).
    #[arg(long, value_delimiter = ',')]
    informative: Option<Vec<String>>,
    #[arg(long)]
    separation: Option<f64>,
    /// none or swiss_roll_lift.
    #[arg(long)]
    nonlinearity: Option<String>,
    #[arg(long)]
    subjects_per_group: Option<usize>,
}

fn overrides(g: &Global) -> Result<Vec<(String, String)>, Error> {
    let mut out = Vec::new();
    for kv in &g.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    let quoted = |p: &Path| toml_string(&p.to_string_lossy());
    if let Some(p) = &g.matrix {
        out.push(("matrix".into(), quoted(p)));
    }
    if let Some(p) = &g.categories {
        out.push(("categories".into(), quoted(p)));
    }
    if let Some(p) = &g.out_dir {
        out.push(("out_dir".into(), quoted(p)));
    }
    if let Some(s) = g.seed {
        out.push(("seed".into(), s.to_string()));
    }
    Ok(out)
}

fn toml_string(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

fn run_study(g: &Global, command: &Command) -> Result<StudyReport, Error> {
    let cfg = PipelineConfig::load(g.config.as_deref(), &overrides(g)?)?;
    let stages = match command {
        Command::Preprocess => Stage::Preprocess.through(),
        Command::Embed => Stage::Embed.through(),
        Command::Cluster => Stage::Cluster.through(),
        Command::Explain => Stage::Explain.through(),
        Command::Stats => Stage::Stats.through(),
        Command::Classify if !cfg.classify_differentiators.is_empty() => vec![Stage::Classify],
        Command::Classify | Command::RunAll => Stage::Classify.through(),
        Command::Synth(_) => unreachable!("synth does not run the study"),
    };
    let report = run_stages(&cfg, &stages)?;
    log::info!("wrote {}", cfg.out_dir.join("report.json").display());
    Ok(report)
}

fn synth_spec(g: &Global, a: &SynthArgs) -> Result<SyntheticSpec, Error> {
    let mut spec = match &a.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            SyntheticSpec::from_toml(&text)?
        }
        None => SyntheticSpec {
            seed: g
                .seed
                .ok_or_else(|| Error::Config("synth needs --seed or a spec file with a seed".into()))?,
            ..SyntheticSpec::default()
        },
    };
    if let Some(s) = g.seed {
        spec.seed = s;
    }
    if let Some(n) = &a.n_per_label {
        spec.n_per_label = n.as_slice().try_into().map_err(|_| Error::Config("--n-per-label takes 4 counts".into()))?;
    }
    if let Some(f) = &a.features_per_category {
        spec.features_per_category = f
            .as_slice()
            .try_into()
            .map_err(|_| Error::Config("--features-per-category takes 9 counts".into()))?;
        spec.n_features = f.iter().sum();
    }
    if let Some(cats) = &a.informative {
        spec.informative_categories = cats.iter().map(|c| c.parse::<Category>()).collect::<Result<_, _>>()?;
    }
    if let Some(s) = a.separation {
        spec.separation = s;
    }
    if let Some(n) = &a.nonlinearity {
        spec.nonlinearity = match n.as_str() {
            "none" => Nonlinearity::None,
            "swiss_roll_lift" => Nonlinearity::SwissRollLift,
            other => return Err(Error::Config(format!("unknown nonlinearity '{other}'"))),
        };
    }
    if let Some(g) = a.subjects_per_group {
        spec.subjects_per_sample_group = g;
    }
    Ok(spec)
}

fn run_synth(g: &Global, a: &SynthArgs) -> Result<(), Error> {
    let spec = synth_spec(g, a)?;
    let dir = g.out_dir.clone().unwrap_or_else(|| PathBuf::from("synthetic"));
    let cohort = generate_cohort(&spec)?;
    cohort.write(&dir)?;
    let config = format!(
        "matrix = \"matrix.csv\"\ncategories = \"categories.json\"\nseed = {}\nout_dir = \"results\"\n",
        spec.seed
    );
    let path = dir.join("config.toml");
    std::fs::write(&path, config).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    log::info!("wrote {} samples to {}", cohort.matrix.n_samples(), dir.display());
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    if e.is_validation() {
        EXIT_INVALID
    } else {
        EXIT_STAGE
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.global.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let result = match &cli.command {
        Command::Synth(a) => run_synth(&cli.global, a),
        other => run_study(&cli.global, other).map(|_| ()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
