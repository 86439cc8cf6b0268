use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cadsynth::catalog::{build_catalog, write_catalog};
use cadsynth::coordinator::{run_pipeline, PipelineConfig};
use cadsynth::embeddings::{read_embeddings, read_rows};
use cadsynth::eval::{evaluate_dirs, evaluate_distributions};
use cadsynth::executor::serve_mock_worker;
use cadsynth::store::Store;
use cadsynth_core::curate::{kmeans_cluster_with, select_exemplars, EmbeddingVector, DEFAULT_MAX_ITERS, DEFAULT_VIEW_COUNT};
use cadsynth_core::metrics::{DistributionStats, DEFAULT_RESOLUTION, DEFAULT_SAMPLE_COUNT};
use cadsynth_core::stats::{build_manifest_splits, compute_generation_stats, GenerationStats};
use clap::{Parser, Subcommand};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "cadsynth", version, about = "Synthesize, curate and evaluate parametric CAD programs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the code-generation pipeline over a catalog.
    Synthesize {
        #[arg(long)]
        config: PathBuf,
    },
    /// Generate the part-description catalog.
    Catalog {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generation statistics for a store.
    Stats {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Only count artifacts with at least this many B-Rep faces in the face statistics.
        #[arg(long)]
        min_faces: Option<u32>,
        #[arg(long)]
        max_faces: Option<u32>,
    },
    /// Assign train/val/test splits.
    Split {
        #[arg(long)]
        store: Option<PathBuf>,
        /// Plain id list, one per line, instead of a store manifest.
        #[arg(long, conflicts_with = "store")]
        ids: Option<PathBuf>,
        #[arg(long)]
        n_val: usize,
        #[arg(long)]
        n_test: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cluster embeddings and pick one exemplar per cluster.
    Curate {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        ids: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_VIEW_COUNT)]
        views: usize,
        #[arg(long, default_value_t = DEFAULT_MAX_ITERS)]
        max_iters: usize,
        #[arg(long)]
        parallel: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Voxel IoU and Chamfer distance of predicted meshes against references.
    Eval {
        #[arg(long)]
        pred_dir: PathBuf,
        #[arg(long)]
        gt_dir: PathBuf,
        #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
        resolution: usize,
        #[arg(long, default_value_t = DEFAULT_SAMPLE_COUNT)]
        samples: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Frechet distance and k-ball coverage between embedding sets.
    EvalDist {
        #[arg(long)]
        ref_emb: PathBuf,
        #[arg(long)]
        syn_emb: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the executor protocol on stdin/stdout with the mock backend.
    MockWorker,
}

fn emit(value: &impl Serialize, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct StatsReport {
    generation: GenerationStats,
    artifacts: usize,
    face_filter: (Option<u32>, Option<u32>),
    faces: Option<DistributionStats>,
}

#[derive(Serialize)]
struct CurateReport {
    k: usize,
    seed: u64,
    n_vectors: usize,
    inertia: f64,
    iterations: usize,
    converged: bool,
    exemplars: Vec<String>,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synthesize { config } => {
            let cfg = PipelineConfig::load(&config)?;
            let summary = run_pipeline(&cfg)?;
            emit(&summary, None)
        }
        Command::Catalog { config, out } => {
            let cfg = PipelineConfig::load(&config)?;
            let llm = cfg.backend()?;
            let (descriptions, summary) =
                build_catalog(&cfg.taxonomy()?, cfg.catalog.batch_size, &llm, &cfg.catalog_prompt()?, &cfg.sampling, cfg.catalog.near_duplicates);
            write_catalog(&out, &descriptions)?;
            emit(&summary, None)
        }
        Command::Stats { store, out, min_faces, max_faces } => {
            let store = Store::open(&store)?;
            let manifest = store.read_manifest()?;
            let faces: Vec<f64> = manifest
                .iter()
                .map(|e| e.num_brep_faces)
                .filter(|&f| min_faces.is_none_or(|m| f >= m) && max_faces.is_none_or(|m| f <= m))
                .map(f64::from)
                .collect();
            let report = StatsReport {
                generation: compute_generation_stats(&store.read_outcomes()?),
                artifacts: manifest.len(),
                face_filter: (min_faces, max_faces),
                faces: DistributionStats::from_values(faces),
            };
            emit(&report, out.as_deref())
        }
        Command::Split { store, ids, n_val, n_test, seed, out } => {
            let (ids, store) = match (store, ids) {
                (Some(root), None) => {
                    let s = Store::open(root)?;
                    (s.read_manifest()?.into_iter().map(|e| e.artifact_id).collect::<Vec<_>>(), Some(s))
                }
                (None, Some(path)) => {
                    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                    (text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect(), None)
                }
                _ => bail!("give exactly one of --store or --ids"),
            };
            let splits = build_manifest_splits(&ids, n_val, n_test, seed)?;
            match (&store, &out) {
                (Some(s), None) => {
                    let path = s.write_splits(&splits)?;
                    eprintln!("wrote {}", path.display());
                }
                _ => emit(&splits, out.as_deref())?,
            }
            let (tr, va, te) = splits.sizes();
            eprintln!("train {tr} / val {va} / test {te}");
            Ok(())
        }
        Command::Curate { embeddings, ids, k, seed, views, max_iters, parallel, out } => {
            let vectors: Vec<EmbeddingVector> = read_embeddings(&embeddings, &ids, views)?;
            let model = kmeans_cluster_with(&vectors, k, max_iters, seed, parallel)?;
            let exemplars = select_exemplars(&model, &vectors);
            let report = CurateReport {
                k,
                seed,
                n_vectors: vectors.len(),
                inertia: model.inertia,
                iterations: model.iterations,
                converged: model.converged,
                exemplars,
            };
            emit(&report, Some(&out))
        }
        Command::Eval { pred_dir, gt_dir, resolution, samples, out } => emit(&evaluate_dirs(&pred_dir, &gt_dir, resolution, samples)?, Some(&out)),
        Command::EvalDist { ref_emb, syn_emb, k, out } => {
            let load = |p: &Path| -> Result<Vec<EmbeddingVector>> {
                Ok(read_rows(p)?.rows.into_iter().enumerate().map(|(i, v)| EmbeddingVector::new(i.to_string(), v)).collect())
            };
            emit(&evaluate_distributions(&load(&ref_emb)?, &load(&syn_emb)?, k)?, Some(&out))
        }
        Command::MockWorker => {
            let stdin = std::io::stdin();
            serve_mock_worker(stdin.lock(), std::io::stdout().lock())?;
            Ok(())
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).target(env_logger::Target::Stderr).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
