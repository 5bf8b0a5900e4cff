use std::path::PathBuf;

use aipoll::io::Table;
use aipoll::stages::{PredictRequest, Pipeline};
use aipoll::Config;
use aipoll_core::regression::study::StudyFramework;
use aipoll_core::{Cardinality, PermutationKey};
use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aipoll", version, about = "Poll a language model as survey respondents and score it against human data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, default_value = "aipoll.toml")]
    config: PathBuf,
    /// Overrides `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `out_dir` from the config.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Aggregate respondent microdata into per-cell human distributions.
    Ingest(Common),
    /// Render every prompt the poll stage will send.
    Render(Common),
    /// Query the backend, resuming from the cache.
    Poll {
        #[command(flatten)]
        common: Common,
        /// Stop after this many uncached queries.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Score model distributions against human ones.
    Metrics(Common),
    /// Paired SI versus DD comparison.
    Compare(Common),
    /// Embed question texts and correlate embeddings with tags.
    Features(Common),
    /// Fit the fidelity-prediction study.
    Fit(Common),
    /// Predict fidelity metrics for a new question.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Question text.
        #[arg(long)]
        text: String,
        /// Number of response options.
        #[arg(long)]
        cardinality: usize,
        /// Demographic cell, e.g. `Liberal|Woman|White`.
        #[arg(long)]
        cell: String,
        /// Prompt variant, e.g. `DD|cot=1|dist=0` or `SI|cot=1|dist=0`.
        #[arg(long)]
        variant: String,
        /// Model family to use: DD, SI or SI-DD. Defaults to the variant's framework.
        #[arg(long)]
        framework: Option<String>,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Write the report directory.
    Report(Common),
    /// Every stage from ingest to report.
    Run(Common),
}

fn open(common: &Common) -> anyhow::Result<Pipeline> {
    let mut cfg = Config::load(&common.config).with_context(|| format!("loading {}", common.config.display()))?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &common.out_dir {
        cfg.out_dir = dir.clone();
    }
    Ok(Pipeline::open(cfg)?)
}

fn parse_framework(s: &str) -> anyhow::Result<StudyFramework> {
    Ok(match s {
        "DD" => StudyFramework::DD,
        "SI" => StudyFramework::SI,
        "SI-DD" => StudyFramework::Difference,
        other => bail!("unknown framework {other:?}; expected DD, SI or SI-DD"),
    })
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Ingest(c) => {
            let p = open(&c)?;
            let r = p.ingest()?;
            println!(
                "run {}: {} respondents, {} classified, {} dropped; {} cell distributions, {} empty cells",
                p.meta.run_id,
                r.drop.total,
                r.drop.classified,
                r.drop.dropped,
                r.distributions,
                r.empty_cells.len()
            );
        }
        Command::Render(c) => {
            let p = open(&c)?;
            println!("run {}: {} prompts", p.meta.run_id, p.render()?.len());
        }
        Command::Poll { common, limit } => {
            let mut p = open(&common)?;
            if limit.is_some() {
                p.cfg.poll.limit = limit;
            }
            let s = p.poll()?;
            println!(
                "run {}: {} queries ({} cached, {} sent, {} deferred)",
                p.meta.run_id, s.tasks, s.from_cache, s.executed, s.deferred
            );
            if s.deferred > 0 {
                println!("incomplete; run `aipoll poll` again to continue");
            } else {
                println!("{} permutations: {} succeeded, {} failed", s.permutations, s.succeeded, s.failed);
            }
        }
        Command::Metrics(c) => {
            let p = open(&c)?;
            let s = p.metrics()?;
            println!(
                "run {}: {} rows ({} failed permutations and {} empty human cells excluded)",
                p.meta.run_id, s.rows, s.failed_permutations, s.empty_human_cells
            );
        }
        Command::Compare(c) => {
            let p = open(&c)?;
            let r = p.compare()?;
            print!("{}", aipoll::stages::comparison_table(&r).to_text());
            if let Some(note) = r.note {
                println!("{note}");
            }
        }
        Command::Features(c) => {
            let p = open(&c)?;
            println!("run {}: {} question embeddings", p.meta.run_id, p.features()?.len());
        }
        Command::Fit(c) => {
            let p = open(&c)?;
            let s = p.fit()?;
            print!("{}", aipoll::report::study_table(&s).to_text());
        }
        Command::Predict { common, text, cardinality, cell, variant, framework, json } => {
            let p = open(&common)?;
            let key = PermutationKey::parse(&format!("new|{cell}|{variant}"))
                .with_context(|| format!("cell {cell:?} or variant {variant:?} is malformed"))?;
            let request = PredictRequest {
                text,
                cardinality: Cardinality::new(cardinality)?,
                cell: key.cell,
                variant: key.variant,
                framework: framework.as_deref().map(parse_framework).transpose()?,
            };
            let rows = p.predict(&request)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&rows)?);
            } else {
                let mut t = Table::new(["framework", "model", "target", "prediction", "predictive_sd"]);
                for r in rows {
                    t.push([
                        r.framework.name().to_string(),
                        r.model.name().to_string(),
                        r.target.name().to_string(),
                        format!("{:.4}", r.prediction.mean),
                        aipoll::io::fmt_opt(r.prediction.sd, 4),
                    ]);
                }
                print!("{}", t.to_text());
            }
        }
        Command::Report(c) => {
            let p = open(&c)?;
            println!("wrote {}", p.report()?.display());
        }
        Command::Run(c) => {
            let p = open(&c)?;
            match p.run_all()? {
                Some(dir) => println!("run {}: wrote {}", p.meta.run_id, dir.display()),
                None => println!("run {}: polling incomplete; run `aipoll poll` again to continue", p.meta.run_id),
            }
        }
    }
    Ok(())
}
