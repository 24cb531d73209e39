//! Command-line surface: the `train`, `search`, `toy`, `eval-predictor`,
//! `viz`, and `enumerate` subcommands, their artifact emission, and the
//! output manifest. Every command validates its configuration fully before
//! any compute and is bit-reproducible given the same config and seed.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use ndgrad::{CounterRng, Tensor};
use sha2::{Digest, Sha256};

use crate::analysis;
use crate::bundle::ModelBundle;
use crate::config::{BuiltOracle, EvalSettings, RunConfig};
use crate::error::{Error, Result};
use crate::graphspace::{read_jsonl, sample_distinct, write_jsonl, ArchGraph};
use crate::icnn::{fit_convex_regression, FitConfig, IcnnParams, IcnnShape};
use crate::nn::{self, Act, Mlp};
use crate::oracle::{run_toy_study, Oracle, ToyRow};
use crate::predictor::correlation_metrics;
use crate::search::{run_algorithm1, run_crlso, CurveRow, LabeledSet, SearchOutcome, TraceRow};

/// Convexity-regularized latent-space optimization over DAG search spaces.
#[derive(Parser)]
#[command(name = "crlso", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Cap on internal worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Subcommand)]
pub enum Command {
    /// Train the surrogate and the autoencoder; write a checkpoint and the
    /// training curve.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full search loop; write the query trace and best-found summary.
    Search {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the two-dimensional toy problem across latent dimensions.
    Toy {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare convex and unconstrained latent regressors across training
    /// sizes.
    EvalPredictor {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Project a labeled dataset through a checkpoint's encoder and emit
    /// analysis tables.
    Viz {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump a fixed-template space to JSON lines.
    Enumerate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Output directory accumulating files and their content hashes.
pub struct OutDir {
    root: PathBuf,
    hashes: BTreeMap<String, String>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(Error::io(root.display().to_string()))?;
        Ok(OutDir { root: root.to_path_buf(), hashes: BTreeMap::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&mut self, name: &str, content: &[u8]) -> Result<()> {
        let path = self.path(name);
        std::fs::write(&path, content).map_err(Error::io(path.display().to_string()))?;
        self.hashes.insert(name.to_string(), hex_sha256(content));
        Ok(())
    }

    /// Registers a file written directly to [`path`](Self::path).
    pub fn register(&mut self, name: &str) -> Result<()> {
        let path = self.path(name);
        let content = std::fs::read(&path).map_err(Error::io(path.display().to_string()))?;
        self.hashes.insert(name.to_string(), hex_sha256(&content));
        Ok(())
    }

    /// Writes `manifest.json` listing every emitted file's SHA-256.
    pub fn finish(self) -> Result<()> {
        let manifest = serde_json::json!({ "files": self.hashes });
        let path = self.root.join("manifest.json");
        std::fs::write(&path, format!("{manifest:#}"))
            .map_err(Error::io(path.display().to_string()))?;
        Ok(())
    }
}

fn hex_sha256(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    format!("{:x}", hasher.finalize())
}

// ---------------------------------------------------------------------------
// CSV rendering (all floats use the shortest round-trip form, so reruns with
// the same seed are byte-identical)
// ---------------------------------------------------------------------------

pub fn render_trace_csv(rows: &[TraceRow]) -> String {
    let mut out = String::from("query_index,arch_hash,score,eta,mode,seed\n");
    for r in rows {
        writeln!(out, "{},{},{},{},{},{}", r.query_index, r.arch_hash, r.score, r.eta, r.mode, r.seed)
            .expect("string write");
    }
    out
}

pub fn render_curve_csv(rows: &[CurveRow]) -> String {
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    let mut out = String::from("phase,epoch,loss,recon,kl,pred\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.phase,
            r.epoch,
            r.loss,
            opt(r.recon),
            opt(r.kl),
            opt(r.pred)
        )
        .expect("string write");
    }
    out
}

pub fn render_toy_csv(rows: &[ToyRow]) -> String {
    let mut out = String::from("model,dimension,prediction,reconstruction\n");
    for r in rows {
        let dim = r.dimension.map(|d| d.to_string()).unwrap_or_else(|| "-".into());
        let recon = r.reconstruction.map(|x| x.to_string()).unwrap_or_else(|| "-".into());
        writeln!(out, "{},{},{},{}", r.model, dim, r.prediction, recon).expect("string write");
    }
    out
}

// ---------------------------------------------------------------------------
// Latent-regressor evaluation (shared by the CLI and the acceptance suite)
// ---------------------------------------------------------------------------

/// Mean and standard deviation of correlations over repeated fits at one
/// training size.
#[derive(Clone, Debug)]
pub struct LatentEvalRow {
    pub model: &'static str,
    pub train_size: usize,
    pub pearson_mean: f64,
    pub pearson_std: f64,
    pub kendall_mean: f64,
    pub kendall_std: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Fits a convex and a plain-MLP regressor in a trained latent space at each
/// training size, several repeats each, and reports held-out Pearson and
/// Kendall correlations.
pub fn eval_latent_predictors(
    bundle: &ModelBundle,
    oracle: &dyn Oracle,
    settings: &EvalSettings,
    seed: u64,
) -> Result<Vec<LatentEvalRow>> {
    let root = CounterRng::new(seed);
    let space = &bundle.space;
    let latent = bundle.hyper.latent_dim;

    let mut holdout_rng = root.substream_named("holdout");
    let holdout = sample_distinct(space, settings.holdout, &HashSet::new(), &mut holdout_rng);
    let holdout_keys: HashSet<String> = holdout.iter().map(|g| g.canonical_key()).collect();
    let holdout_z = bundle.encoder.encode_means(&holdout)?;
    let holdout_truth: Vec<f64> =
        holdout.iter().map(|g| oracle.score(g)).collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let mut sizes = settings.train_sizes.clone();
    sizes.sort_unstable();
    for &n in &sizes {
        let mut stats: BTreeMap<&'static str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for repeat in 0..settings.repeats {
            let mut rng = root.substream_named(&format!("fit.{n}.{repeat}"));
            let train_set = sample_distinct(space, n, &holdout_keys, &mut rng);
            let zs = bundle.encoder.encode_means(&train_set)?;
            let targets: Vec<f64> = train_set
                .iter()
                .map(|g| oracle.score(g).map(|s| bundle.normalize_score(s)))
                .collect::<Result<_>>()?;

            // Convexity-constrained regressor.
            let mut convex = IcnnParams::init(
                IcnnShape { input_dim: latent, layers: 3, hidden: settings.hidden },
                true,
                &mut rng.substream_named("icnn"),
            )?;
            fit_convex_regression(
                &mut convex,
                &zs,
                &targets,
                FitConfig { lr: settings.lr, epochs: settings.epochs, batch: settings.batch },
                &mut rng.substream_named("icnn.fit"),
            )?;
            let convex_preds = convex.predict_batch(&holdout_z)?;

            // Plain MLP of comparable capacity.
            let mut mlp = Mlp::init(
                &[latent, settings.hidden, settings.hidden, 1],
                Act::LeakyRelu(0.1),
                &mut rng.substream_named("mlp"),
            );
            nn::fit_mlp_regression(
                &mut mlp,
                &zs,
                &targets,
                settings.lr,
                settings.epochs,
                settings.batch,
                &mut rng.substream_named("mlp.fit"),
            )?;
            let mlp_preds = nn::mlp_predict(&mlp, &holdout_z)?;

            for (name, preds) in [("ICNN", convex_preds), ("MLP", mlp_preds)] {
                let (pearson, kendall) = correlation_metrics(&preds, &holdout_truth)?;
                let entry = stats.entry(name).or_default();
                entry.0.push(pearson);
                entry.1.push(kendall);
            }
        }
        for (name, (pearsons, kendalls)) in stats {
            let (pm, ps) = mean_std(&pearsons);
            let (km, ks) = mean_std(&kendalls);
            rows.push(LatentEvalRow {
                model: name,
                train_size: n,
                pearson_mean: pm,
                pearson_std: ps,
                kendall_mean: km,
                kendall_std: ks,
            });
        }
    }
    Ok(rows)
}

pub fn render_correlations_csv(rows: &[LatentEvalRow]) -> String {
    let mut out = String::from("model,n,pearson_mean,pearson_std,kendall_mean,kendall_std\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.model, r.train_size, r.pearson_mean, r.pearson_std, r.kendall_mean, r.kendall_std
        )
        .expect("string write");
    }
    out
}

// ---------------------------------------------------------------------------
// Visualization tables (shared by `viz` and the acceptance suite)
// ---------------------------------------------------------------------------

/// Analysis tables computed from encoded latents and scores.
pub struct VizTables {
    pub pca_csv: String,
    pub cossim_csv: String,
    pub separation_csv: String,
    pub separation: analysis::SeparationReport,
}

/// Builds the PCA, cosine-similarity, and separation tables for a labeled
/// population of latent points. Group sizes are clamped to half the
/// population when it is small.
pub fn build_viz_tables(
    latents: &Tensor,
    scores: &[f64],
    mode_label: &str,
    group: usize,
) -> Result<VizTables> {
    let n = scores.len();
    let group = group.min(n / 2).max(1);
    let (proj, _) = analysis::pca_project(latents, 2)?;
    let k = proj.cols().map_err(Error::Autodiff)?;

    // Rank within this population: 1 = best score, ties by input order.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        scores[b].partial_cmp(&scores[a]).expect("finite scores").then_with(|| a.cmp(&b))
    });
    let mut rank = vec![0usize; n];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r + 1;
    }

    let mut pca_csv = String::from("id,pc1,pc2,score,rank\n");
    for i in 0..n {
        let pc1 = proj.data()[i * k];
        let pc2 = if k > 1 { proj.data()[i * k + 1] } else { 0.0 };
        writeln!(pca_csv, "{},{},{},{},{}", i, pc1, pc2, scores[i], rank[i]).expect("string write");
    }

    let separation = analysis::separation_report(latents, scores, group, group)?;
    let members: Vec<usize> = separation
        .top_indices
        .iter()
        .chain(separation.worst_indices.iter())
        .copied()
        .collect();
    let d = latents.cols().map_err(Error::Autodiff)?;
    let mut rows = Vec::with_capacity(members.len() * d);
    for &i in &members {
        rows.extend_from_slice(&latents.data()[i * d..(i + 1) * d]);
    }
    let group_latents = Tensor::matrix(members.len(), d, rows)?;
    let sims = analysis::cosine_similarity_matrix(&group_latents, &group_latents)?;
    let mut cossim_csv = String::from("row,col,value\n");
    for (a, &i) in members.iter().enumerate() {
        for (b, &j) in members.iter().enumerate() {
            writeln!(cossim_csv, "{},{},{}", i, j, sims.data()[a * members.len() + b])
                .expect("string write");
        }
    }

    let mut separation_csv = String::from("mode,within_top,top_vs_worst,delta\n");
    writeln!(
        separation_csv,
        "{},{},{},{}",
        mode_label, separation.within_top, separation.top_vs_worst, separation.delta
    )
    .expect("string write");

    Ok(VizTables { pca_csv, cossim_csv, separation_csv, separation })
}

// ---------------------------------------------------------------------------
// Command implementations
// ---------------------------------------------------------------------------

fn best_summary_json(
    outcome: &SearchOutcome,
    oracle: &BuiltOracle,
    queries: usize,
) -> Result<String> {
    let (g, score) = &outcome.best;
    let mut value = serde_json::json!({
        "best_score": score,
        "best_hash": g.arch_hash(),
        "nodes": g.node_attrs(),
        "edges": g.edges(),
        "queries": queries,
    });
    if let Some(ranking) = oracle.ranking() {
        if let Some((rank, _)) = ranking.lookup(g) {
            value["rank"] = serde_json::json!(rank);
        }
    }
    Ok(format!("{value:#}"))
}

pub fn cmd_train(config_path: &Path, out_path: &Path) -> Result<()> {
    let cfg = RunConfig::from_file(config_path)?;
    let oracle = cfg.build_oracle()?;
    let mut out = OutDir::create(out_path)?;

    let root = CounterRng::new(cfg.search.seed);
    let mut init_rng = root.substream_named("init");
    let mut data = LabeledSet::new();
    for g in sample_distinct(&cfg.space, cfg.search.q_start, &HashSet::new(), &mut init_rng) {
        let s = oracle.as_dyn().score(&g)?;
        data.insert(g, s)?;
    }
    let mut curve = Vec::new();
    let bundle = run_algorithm1(
        &data,
        &cfg.space,
        &cfg.hyper,
        &cfg.train,
        cfg.search.mode,
        &root.substream_named("train"),
        &mut curve,
    )?;
    bundle.save(&out.path("checkpoint.json"))?;
    out.register("checkpoint.json")?;
    out.write("training_curve.csv", render_curve_csv(&curve).as_bytes())?;
    out.finish()
}

pub fn cmd_search(config_path: &Path, out_path: &Path) -> Result<()> {
    let cfg = RunConfig::from_file(config_path)?;
    let oracle = cfg.build_oracle()?;
    let mut out = OutDir::create(out_path)?;

    let outcome = run_crlso(&cfg.space, oracle.as_dyn(), &cfg.search, &cfg.hyper, &cfg.train)?;
    out.write("trace.csv", render_trace_csv(&outcome.trace).as_bytes())?;
    if !outcome.curve.is_empty() {
        out.write("training_curve.csv", render_curve_csv(&outcome.curve).as_bytes())?;
    }
    let summary = best_summary_json(&outcome, &oracle, outcome.trace.len())?;
    out.write("best.json", summary.as_bytes())?;
    if let Some(bundle) = &outcome.bundle {
        bundle.save(&out.path("checkpoint.json"))?;
        out.register("checkpoint.json")?;
    }
    out.finish()
}

pub fn cmd_toy(config_path: &Path, out_path: &Path) -> Result<()> {
    let cfg = RunConfig::from_file(config_path)?;
    let mut out = OutDir::create(out_path)?;
    let rows = run_toy_study(&cfg.toy.latent_dims, &cfg.toy.cfg, cfg.search.seed)?;
    out.write("toy.csv", render_toy_csv(&rows).as_bytes())?;
    out.finish()
}

pub fn cmd_eval_predictor(config_path: &Path, out_path: &Path) -> Result<()> {
    let cfg = RunConfig::from_file(config_path)?;
    let oracle = cfg.build_oracle()?;
    let mut out = OutDir::create(out_path)?;

    let bundle = match &cfg.eval.checkpoint {
        Some(path) => {
            let b = ModelBundle::load(path)?;
            b.check_space(&cfg.space)?;
            b
        }
        None => {
            // No checkpoint given: train one with the configured settings.
            let root = CounterRng::new(cfg.search.seed);
            let mut init_rng = root.substream_named("init");
            let mut data = LabeledSet::new();
            for g in
                sample_distinct(&cfg.space, cfg.search.q_start, &HashSet::new(), &mut init_rng)
            {
                let s = oracle.as_dyn().score(&g)?;
                data.insert(g, s)?;
            }
            let mut curve = Vec::new();
            run_algorithm1(
                &data,
                &cfg.space,
                &cfg.hyper,
                &cfg.train,
                cfg.search.mode,
                &root.substream_named("train"),
                &mut curve,
            )?
        }
    };
    let rows = eval_latent_predictors(&bundle, oracle.as_dyn(), &cfg.eval, cfg.search.seed)?;
    out.write("correlations.csv", render_correlations_csv(&rows).as_bytes())?;
    out.finish()
}

pub fn cmd_viz(checkpoint: &Path, data_path: &Path, out_path: &Path) -> Result<()> {
    let bundle = ModelBundle::load(checkpoint)?;
    let records = read_jsonl(data_path, &bundle.space)?;
    let mut graphs = Vec::with_capacity(records.len());
    let mut scores = Vec::with_capacity(records.len());
    for (idx, (g, score)) in records.into_iter().enumerate() {
        let Some(s) = score else {
            return Err(Error::Data(format!(
                "record {} has no score; viz needs a labeled dataset",
                idx + 1
            )));
        };
        graphs.push(g);
        scores.push(s);
    }
    if graphs.len() < 4 {
        return Err(Error::Data("viz needs at least 4 labeled architectures".into()));
    }
    let latents = bundle.encoder.encode_means(&graphs)?;
    let tables = build_viz_tables(&latents, &scores, &bundle.mode.to_string(), 100)?;
    let mut out = OutDir::create(out_path)?;
    out.write("pca.csv", tables.pca_csv.as_bytes())?;
    out.write("cossim.csv", tables.cossim_csv.as_bytes())?;
    out.write("separation.csv", tables.separation_csv.as_bytes())?;
    out.finish()
}

pub fn cmd_enumerate(config_path: &Path, out_path: &Path) -> Result<()> {
    let cfg = RunConfig::from_file(config_path)?;
    let mut out = OutDir::create(out_path)?;
    let graphs: Vec<ArchGraph> = cfg.space.enumerate()?.collect();
    let path = out.path("architectures.jsonl");
    write_jsonl(&path, graphs.iter().map(|g| (g, None)))?;
    out.register("architectures.jsonl")?;
    out.finish()
}

/// Dispatches a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    if let Some(threads) = cli.threads {
        // Ignore failure when a pool already exists (tests, repeat calls).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    match cli.command {
        Command::Train { config, out } => cmd_train(&config, &out),
        Command::Search { config, out } => cmd_search(&config, &out),
        Command::Toy { config, out } => cmd_toy(&config, &out),
        Command::EvalPredictor { config, out } => cmd_eval_predictor(&config, &out),
        Command::Viz { checkpoint, data, out } => cmd_viz(&checkpoint, &data, &out),
        Command::Enumerate { config, out } => cmd_enumerate(&config, &out),
    }
}
