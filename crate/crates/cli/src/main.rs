use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use viewlink::config::RunConfig;
use viewlink::ingest::{profile_attribute, Attribute, SourceRecord};
use viewlink::metrics::{compute_metrics, load_gold};
use viewlink::pipeline::{self, Workbench, CROSSWALK_FILE};
use viewlink::resolution::read_crosswalk;
use viewlink::synth::{SynthConfig, SyntheticStudy};

#[derive(Parser)]
#[command(name = "viewlink", version, about = "Record linkage workbench with human review")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every pass, apply stored resolutions and write the outputs.
    Run {
        #[arg(short, long)]
        config: PathBuf,
        /// Print the run report as JSON instead of a summary.
        #[arg(long)]
        json: bool,
    },
    /// Report distinctness and frequent tokens of one attribute.
    Profile {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(short, long, value_parser = parse_attribute)]
        attribute: Attribute,
        #[arg(long, value_enum, default_value_t = SideArg::Both)]
        side: SideArg,
        #[arg(long, default_value_t = 20)]
        top: usize,
        #[arg(long)]
        json: bool,
    },
    /// Score the current crosswalk against a gold standard.
    Metrics {
        #[arg(short, long)]
        config: PathBuf,
        /// CSV with left_id and right_id columns. Defaults to the
        /// configured gold standard.
        #[arg(short, long)]
        gold: Option<PathBuf>,
    },
    /// Serve the review API for a completed run.
    Serve {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(short, long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        /// Directory of static files (the review UI build).
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
    },
    /// Write a synthetic study with known truth.
    Synth {
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        pairs: Option<usize>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SideArg {
    Left,
    Right,
    Both,
}

fn parse_attribute(s: &str) -> Result<Attribute, String> {
    s.parse()
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    if let Err(e) = dispatch(Cli::parse().command) {
        eprintln!("error: {}", describe(&e));
        std::process::exit(1);
    }
}

/// Joins the error chain, skipping causes a message already quotes.
fn describe(e: &anyhow::Error) -> String {
    let mut msg = e.to_string();
    for cause in e.chain().skip(1) {
        let c = cause.to_string();
        if !msg.contains(&c) {
            msg = format!("{msg}: {c}");
        }
    }
    msg
}

fn load(config: &Path) -> Result<RunConfig> {
    RunConfig::load(config).with_context(|| format!("loading {}", config.display()))
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run { config, json } => run(load(&config)?, json),
        Command::Profile {
            config,
            attribute,
            side,
            top,
            json,
        } => profile(load(&config)?, attribute, side, top, json),
        Command::Metrics { config, gold } => metrics(load(&config)?, gold),
        Command::Serve {
            config,
            bind,
            static_dir,
        } => serve(load(&config)?, bind, static_dir),
        Command::Synth { out, seed, pairs } => {
            let mut cfg = SynthConfig::default();
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(p) = pairs {
                cfg.pairs = p;
            }
            let study = SyntheticStudy::generate(&cfg);
            let path = study.write(&out).with_context(|| format!("writing {}", out.display()))?;
            println!("{}", path.display());
            Ok(())
        }
    }
}

fn run(config: RunConfig, json: bool) -> Result<()> {
    let out = config.output_dir.clone();
    let (_, _, report) = pipeline::run(config)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&report)?);
        return Ok(());
    }
    println!("outputs in {}", out.display());
    println!("manifest {}", report.manifest.manifest_hash);
    for stage in &report.stages {
        match stage.recall {
            Some(r) => println!("  {:<16} {:>6} linked  recall {:.3}", stage.stage, stage.linked, r),
            None => println!("  {:<16} {:>6} linked", stage.stage, stage.linked),
        }
    }
    let l = report.left;
    println!(
        "left: {} entities, {} linked, {} no_link, {} awaiting review, {} unmatched",
        l.total, l.linked, l.no_link, l.pending_hit, l.unmatched
    );
    let p = &report.pending_hits;
    println!(
        "pending HITs: {} (confirm {}, ambiguous {}, manual {})",
        p.total(),
        p.confirm_proposed,
        p.resolve_ambiguous,
        p.manual_match
    );
    if !report.orphaned_resolutions.is_empty() {
        println!("orphaned resolutions: {}", report.orphaned_resolutions.len());
    }
    if let Some(m) = &report.metrics {
        println!("recall {}  precision {}", fmt_opt(m.recall), fmt_opt(m.precision));
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.3}"))
}

fn profile(config: RunConfig, attribute: Attribute, side: SideArg, top: usize, json: bool) -> Result<()> {
    let bench = Workbench::prepare(config)?;
    let sides: Vec<(&str, &[SourceRecord])> = match side {
        SideArg::Left => vec![("left", &bench.left_source)],
        SideArg::Right => vec![("right", &bench.right_source)],
        SideArg::Both => vec![("left", &bench.left_source), ("right", &bench.right_source)],
    };
    let mut profiles = serde_json::Map::new();
    for (label, records) in sides {
        let p = profile_attribute(records, attribute, top).with_context(|| format!("{label} side"))?;
        if !json {
            println!(
                "{label} {attribute}: {} rows, {} distinct, entropy {:.3} bits, {:.1}% missing",
                records.len(),
                p.distinct_count,
                p.entropy_bits,
                100.0 * p.missing_fraction
            );
            for (token, count) in &p.top_tokens {
                println!("  {count:>7}  {token}");
            }
        }
        profiles.insert(label.into(), serde_json::to_value(&p)?);
    }
    if json {
        println!("{}", serde_json::to_string_pretty(&profiles)?);
    }
    Ok(())
}

fn metrics(config: RunConfig, gold: Option<PathBuf>) -> Result<()> {
    let Some(gold_path) = gold.or(config.gold_standard.clone()) else {
        bail!("no gold standard given and none configured");
    };
    let gold = load_gold(&gold_path).with_context(|| format!("reading {}", gold_path.display()))?;
    let path = config.output_dir.join(CROSSWALK_FILE);
    let crosswalk = read_crosswalk(&path).with_context(|| format!("reading {}; run first", path.display()))?;
    println!("{}", serde_json::to_string_pretty(&compute_metrics(&crosswalk, &gold))?);
    Ok(())
}

fn serve(config: RunConfig, bind: SocketAddr, static_dir: Option<PathBuf>) -> Result<()> {
    let mut service = viewlink_server::ReviewService::open(config)?;
    if let Some(dir) = static_dir {
        service = service.with_static_dir(dir);
    }
    let service = Arc::new(service);
    tokio::runtime::Runtime::new()?.block_on(async move {
        let listener = viewlink_server::bind(bind).await?;
        viewlink_server::serve(service, listener).await
    })?;
    Ok(())
}
