//! Performance oracles: a deterministic synthetic benchmark over an
//! enumerable cell space, a two-dimensional toy problem with its
//! latent-dimension study, and a tabular-file adapter for externally
//! supplied scores.

mod synth_table;

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;

use ndgrad::{AdamConfig, AdamState, CounterRng, Tape, Tensor};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graphspace::{read_jsonl, ArchGraph, EdgeTemplate, SearchSpace, SpaceKind};
use crate::icnn::{fit_convex_regression, FitConfig, IcnnParams, IcnnShape};
use crate::nn::{self, Act, Mlp};

/// Anything that can score an architecture of its space.
pub trait Oracle: Sync {
    fn score(&self, g: &ArchGraph) -> Result<f64>;
}

/// Oracle wrapper counting queries; used to audit evaluation budgets.
pub struct CountingOracle<'a> {
    inner: &'a dyn Oracle,
    calls: AtomicUsize,
}

impl<'a> CountingOracle<'a> {
    pub fn new(inner: &'a dyn Oracle) -> Self {
        CountingOracle { inner, calls: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Oracle for CountingOracle<'_> {
    fn score(&self, g: &ArchGraph) -> Result<f64> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.score(g)
    }
}

// ---------------------------------------------------------------------------
// Synthetic benchmark
// ---------------------------------------------------------------------------

/// Exhaustive ranking of a fixed-template space under the synthetic score.
pub struct Ranking {
    /// Architectures sorted by score descending.
    pub entries: Vec<(ArchGraph, f64)>,
    by_key: HashMap<String, (usize, f64)>,
}

impl Ranking {
    /// 1-based rank and score of an architecture.
    pub fn lookup(&self, g: &ArchGraph) -> Option<(usize, f64)> {
        self.by_key.get(&g.canonical_key()).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Deterministic accuracy-like benchmark over an operator-on-edge space.
///
/// The score of an architecture is a committed mixture of smooth and rugged
/// structure: per-slot operator utilities, pairwise slot-interaction terms,
/// and a bonus for signal-carrying paths from the input node to the output
/// node. The constant table lives in [`synth_table`] and covers shapes up to
/// 4 nodes and 5 operators; sub-shapes reuse the table entries of their slot
/// pairs.
pub struct SyntheticBench {
    space: SearchSpace,
    /// Table pair id of each slot.
    slot_table_id: Vec<usize>,
    /// Interaction table index for each unordered slot pair.
    combo_ids: Vec<(usize, usize, usize)>,
    /// Paths from node 0 to the last node, as slot-index sequences.
    paths: Vec<Vec<usize>>,
    ranking: OnceLock<Ranking>,
}

impl SyntheticBench {
    pub fn new(space: SearchSpace) -> Result<Self> {
        if space.kind != SpaceKind::OperatorOnEdge || space.edge_template != EdgeTemplate::Fixed {
            return Err(Error::InvalidSpace(
                "the synthetic benchmark covers fixed-template operator-on-edge spaces".into(),
            ));
        }
        if space.num_nodes > synth_table::TABLE_NODES
            || space.edge_vocab_size > synth_table::TABLE_OPS
        {
            return Err(Error::InvalidSpace(format!(
                "committed benchmark table covers up to {} nodes and {} operators",
                synth_table::TABLE_NODES,
                synth_table::TABLE_OPS
            )));
        }
        let pairs = space.slot_pairs();
        let slot_table_id: Vec<usize> =
            pairs.iter().map(|&(s, d)| table_pair_id(s as usize, d as usize)).collect();
        let mut combo_ids = Vec::new();
        for a in 0..pairs.len() {
            for b in (a + 1)..pairs.len() {
                let (ta, tb) = (slot_table_id[a], slot_table_id[b]);
                let (lo, hi) = if ta < tb { (ta, tb) } else { (tb, ta) };
                combo_ids.push((a, b, combo_index(lo, hi)));
            }
        }
        let paths = enumerate_paths(&pairs, space.num_nodes);
        Ok(SyntheticBench { space, slot_table_id, combo_ids, paths, ranking: OnceLock::new() })
    }

    /// The 15,625-architecture default space.
    pub fn nb201_default() -> Self {
        SyntheticBench::new(SearchSpace::nb201_like()).expect("default shape fits the table")
    }

    pub fn space(&self) -> &SearchSpace {
        &self.space
    }

    fn score_assignment(&self, ops: &[u16]) -> f64 {
        let mut total = synth_table::BASE_SCORE;
        for (slot, &op) in ops.iter().enumerate() {
            total += synth_table::SLOT_UTILITY[self.slot_table_id[slot]][op as usize];
        }
        for &(a, b, combo) in &self.combo_ids {
            let (ta, tb) = (self.slot_table_id[a], self.slot_table_id[b]);
            // The table stores the interaction with the lower table id first.
            let (op_lo, op_hi) =
                if ta < tb { (ops[a] as usize, ops[b] as usize) } else { (ops[b] as usize, ops[a] as usize) };
            total += synth_table::PAIR_INTERACTION[combo][op_lo][op_hi];
        }
        let mut path_bonus = 0.0;
        for path in &self.paths {
            let mut strength = 1.0;
            for &slot in path {
                strength *= synth_table::OP_CONDUCTANCE[ops[slot] as usize];
            }
            path_bonus += strength;
        }
        total + synth_table::PATH_WEIGHT * path_bonus
    }

    /// The cached exhaustive ranking, built on first use.
    pub fn ranking(&self) -> &Ranking {
        self.ranking.get_or_init(|| {
            let mut entries: Vec<(ArchGraph, f64)> = self
                .space
                .enumerate()
                .expect("fixed template")
                .map(|g| {
                    let ops = self.space.assignment_of(&g).expect("enumerated graph");
                    let s = self.score_assignment(&ops);
                    (g, s)
                })
                .collect();
            entries.sort_by(|a, b| {
                b.1.partial_cmp(&a.1)
                    .expect("finite scores")
                    .then_with(|| a.0.canonical_key().cmp(&b.0.canonical_key()))
            });
            let by_key = entries
                .iter()
                .enumerate()
                .map(|(i, (g, s))| (g.canonical_key(), (i + 1, *s)))
                .collect();
            Ranking { entries, by_key }
        })
    }

    /// 1-based global rank of an architecture.
    pub fn rank_of(&self, g: &ArchGraph) -> Result<usize> {
        self.ranking()
            .lookup(g)
            .map(|(rank, _)| rank)
            .ok_or_else(|| Error::Lookup("architecture outside the bound space".into()))
    }
}

impl Oracle for SyntheticBench {
    fn score(&self, g: &ArchGraph) -> Result<f64> {
        let ops = self.space.assignment_of(g)?;
        Ok(self.score_assignment(&ops))
    }
}

/// Index of `(s, d)` in the ordered pair list of the full 4-node table.
fn table_pair_id(s: usize, d: usize) -> usize {
    let n = synth_table::TABLE_NODES;
    let before: usize = (0..s).map(|k| n - k - 1).sum();
    before + (d - s - 1)
}

/// Index of the unordered combination `(lo, hi)` among C(6, 2) = 15 combos.
fn combo_index(lo: usize, hi: usize) -> usize {
    let total = 6;
    let before: usize = (0..lo).map(|k| total - k - 1).sum();
    before + (hi - lo - 1)
}

/// All directed paths from node 0 to the final node over the slot template,
/// as sequences of slot indices.
fn enumerate_paths(pairs: &[(u16, u16)], num_nodes: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    let mut stack: Vec<usize> = Vec::new();
    fn dfs(
        node: usize,
        target: usize,
        pairs: &[(u16, u16)],
        stack: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if node == target {
            out.push(stack.clone());
            return;
        }
        for (slot, &(s, d)) in pairs.iter().enumerate() {
            if s as usize == node {
                stack.push(slot);
                dfs(d as usize, target, pairs, stack, out);
                stack.pop();
            }
        }
    }
    dfs(0, num_nodes - 1, pairs, &mut stack, &mut out);
    out
}

// ---------------------------------------------------------------------------
// Toy problem
// ---------------------------------------------------------------------------

/// The two-dimensional multimodal target: concave quadratic bowls plus
/// sinusoidal ripples, strictly negative everywhere.
pub fn toy_h(x: &[f64; 2]) -> f64 {
    let (x1, x2) = (x[0], x[1]);
    -0.64 * (x1 - 1.0).powi(2) - 0.64 * (x2 + 0.2).powi(2)
        - 2.0 * (std::f64::consts::PI * (x1 - 0.2)).sin()
        - 2.0 * (std::f64::consts::PI * (x2 - 0.1)).cos()
        - 4.0
}

/// One row of the latent-dimension study table.
#[derive(Clone, Debug)]
pub struct ToyRow {
    pub model: String,
    pub dimension: Option<usize>,
    pub prediction: f64,
    pub reconstruction: Option<f64>,
}

/// Settings for [`run_toy_study`].
#[derive(Clone, Copy, Debug)]
pub struct ToyConfig {
    /// Hidden width of the autoencoder halves and the direct MLP.
    pub hidden: usize,
    /// Hidden width of the convex predictor.
    pub icnn_hidden: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Training points per axis; the set is a `grid x grid` lattice on
    /// `[-3, 3]^2`.
    pub grid: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig { hidden: 96, icnn_hidden: 64, epochs: 600, batch: 256, lr: 2e-3, grid: 64 }
    }
}

/// The training lattice and its target values.
pub fn toy_dataset(grid: usize) -> (Tensor, Vec<f64>) {
    let mut xs = Vec::with_capacity(grid * grid * 2);
    let mut ys = Vec::with_capacity(grid * grid);
    for i in 0..grid {
        for j in 0..grid {
            let x1 = -3.0 + 6.0 * i as f64 / (grid - 1) as f64;
            let x2 = -3.0 + 6.0 * j as f64 / (grid - 1) as f64;
            xs.push(x1);
            xs.push(x2);
            ys.push(toy_h(&[x1, x2]));
        }
    }
    (Tensor::matrix(grid * grid, 2, xs).expect("lattice shape"), ys)
}

/// Fits every model of the latent-dimension study and reports per-model
/// prediction and reconstruction losses (mean squared deviations on the
/// training lattice, matching how the study is tabulated).
///
/// Emitted rows: the direct MLP baseline, the direct convex predictor
/// baseline, then one deterministic-autoencoder-plus-convex-predictor row per
/// latent dimension, in ascending dimension order.
pub fn run_toy_study(latent_dims: &[usize], cfg: &ToyConfig, seed: u64) -> Result<Vec<ToyRow>> {
    if latent_dims.is_empty() {
        return Err(Error::Config("latent_dims must be non-empty".into()));
    }
    let root = CounterRng::new(seed);

    enum Job {
        MlpDirect,
        IcnnDirect,
        Latent(usize),
    }
    let mut jobs = vec![Job::MlpDirect, Job::IcnnDirect];
    let mut dims = latent_dims.to_vec();
    dims.sort_unstable();
    jobs.extend(dims.iter().map(|&d| Job::Latent(d)));

    jobs.par_iter()
        .map(|job| match job {
            Job::MlpDirect => {
                let mut rng = root.substream_named("toy.mlp");
                let pred = fit_direct_mlp(cfg, &mut rng)?;
                Ok(ToyRow {
                    model: "MLP".into(),
                    dimension: None,
                    prediction: pred,
                    reconstruction: None,
                })
            }
            Job::IcnnDirect => {
                let mut rng = root.substream_named("toy.icnn");
                let (xs, ys) = toy_dataset(cfg.grid);
                let mut model = IcnnParams::init(
                    IcnnShape { input_dim: 2, layers: 3, hidden: cfg.icnn_hidden },
                    true,
                    &mut rng,
                )?;
                let report = fit_convex_regression(
                    &mut model,
                    &xs,
                    &ys,
                    FitConfig { lr: cfg.lr, epochs: cfg.epochs, batch: cfg.batch },
                    &mut rng,
                )?;
                Ok(ToyRow {
                    model: "ICNN".into(),
                    dimension: None,
                    prediction: report.final_mse,
                    reconstruction: None,
                })
            }
            Job::Latent(d) => {
                let mut rng = root.substream_named(&format!("toy.crlso.{d}"));
                let (pred, recon) = fit_latent_model(*d, cfg, &mut rng)?;
                Ok(ToyRow {
                    model: "CR-LSO".into(),
                    dimension: Some(*d),
                    prediction: pred,
                    reconstruction: Some(recon),
                })
            }
        })
        .collect()
}

fn fit_direct_mlp(cfg: &ToyConfig, rng: &mut CounterRng) -> Result<f64> {
    let (xs, ys) = toy_dataset(cfg.grid);
    let n = ys.len();
    let mut model = Mlp::init(&[2, cfg.hidden, cfg.hidden, 1], Act::Tanh, rng);
    // Start the output at the target mean; the raw targets sit far from zero.
    let mean = ys.iter().sum::<f64>() / n as f64;
    model.biases.last_mut().expect("output layer").data_mut()[0] = mean;
    let mut adam = AdamState::new(AdamConfig { lr: cfg.lr, ..Default::default() });
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let lr = ndgrad::cosine_lr(epoch, cfg.epochs, cfg.lr)?;
        for batch in order.chunks(cfg.batch) {
            let rows: Vec<f64> = batch
                .iter()
                .flat_map(|&r| xs.data()[r * 2..(r + 1) * 2].iter().copied())
                .collect();
            let targets: Vec<f64> = batch.iter().map(|&r| ys[r]).collect();
            let mut params = Vec::new();
            model.visit("m", &mut params);
            let mut tape = Tape::new();
            let bound = nn::bind(&mut tape, &params, true);
            let x = tape.constant(Tensor::matrix(batch.len(), 2, rows)?);
            let out = model.forward(&mut tape, &bound, "m", x)?;
            let out = tape.reshape(out, &[batch.len()])?;
            let y = tape.constant(Tensor::vector(targets));
            let resid = tape.sub(y, out)?;
            let sq = tape.square(resid)?;
            let loss = tape.mean(sq)?;
            let mut grads = tape.backward(loss)?;
            let named = nn::grads_by_name(&bound, &mut grads);
            let mut slots = Vec::new();
            model.visit_mut("m", &mut slots);
            nn::adam_update(&mut adam, lr, slots, &named)?;
        }
    }
    // Final training-lattice loss.
    let mut params = Vec::new();
    model.visit("m", &mut params);
    let mut tape = Tape::new();
    let bound = nn::bind(&mut tape, &params, false);
    let x = tape.constant(xs.clone());
    let out = model.forward(&mut tape, &bound, "m", x)?;
    let preds = tape.value(out).data();
    Ok(preds.iter().zip(&ys).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n as f64)
}

/// Joint deterministic autoencoder + convex predictor at latent dimension
/// `d`; returns `(prediction_loss, reconstruction_loss)`.
fn fit_latent_model(d: usize, cfg: &ToyConfig, rng: &mut CounterRng) -> Result<(f64, f64)> {
    let (xs, ys) = toy_dataset(cfg.grid);
    let n = ys.len();
    let h = cfg.hidden;
    let mut encoder = Mlp::init(&[2, h, h, d], Act::Tanh, rng);
    let mut decoder = Mlp::init(&[d, h, h, 2], Act::Tanh, rng);
    let mut predictor = IcnnParams::init(
        IcnnShape { input_dim: d, layers: 3, hidden: cfg.icnn_hidden },
        true,
        rng,
    )?;
    let mean = ys.iter().sum::<f64>() / n as f64;

    let mut adam = AdamState::new(AdamConfig { lr: cfg.lr, ..Default::default() });
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let lr = ndgrad::cosine_lr(epoch, cfg.epochs, cfg.lr)?;
        for batch in order.chunks(cfg.batch) {
            let rows: Vec<f64> = batch
                .iter()
                .flat_map(|&r| xs.data()[r * 2..(r + 1) * 2].iter().copied())
                .collect();
            let targets: Vec<f64> = batch.iter().map(|&r| ys[r] - mean).collect();
            let mut params = Vec::new();
            encoder.visit("enc", &mut params);
            decoder.visit("dec", &mut params);
            predictor.visit("f", &mut params);
            let mut tape = Tape::new();
            let bound = nn::bind(&mut tape, &params, true);
            let x = tape.constant(Tensor::matrix(batch.len(), 2, rows)?);
            let u = encoder.forward(&mut tape, &bound, "enc", x)?;
            let xh = decoder.forward(&mut tape, &bound, "dec", u)?;
            let diff = tape.sub(x, xh)?;
            let sq = tape.square(diff)?;
            let recon = tape.row_sum(sq)?;
            let f = predictor.forward(&mut tape, &bound, "f", u)?;
            let f = tape.reshape(f, &[batch.len()])?;
            let y = tape.constant(Tensor::vector(targets));
            let resid = tape.sub(y, f)?;
            let pred = tape.square(resid)?;
            let joint = tape.add(recon, pred)?;
            let loss = tape.mean(joint)?;
            let mut grads = tape.backward(loss)?;
            let named = nn::grads_by_name(&bound, &mut grads);
            let mut slots = Vec::new();
            encoder.visit_mut("enc", &mut slots);
            decoder.visit_mut("dec", &mut slots);
            predictor.visit_mut("f", &mut slots);
            nn::adam_update(&mut adam, lr, slots, &named)?;
            predictor.project_nonneg();
        }
    }

    // Final losses over the whole lattice.
    let mut params = Vec::new();
    encoder.visit("enc", &mut params);
    decoder.visit("dec", &mut params);
    predictor.visit("f", &mut params);
    let mut tape = Tape::new();
    let bound = nn::bind(&mut tape, &params, false);
    let x = tape.constant(xs.clone());
    let u = encoder.forward(&mut tape, &bound, "enc", x)?;
    let xh = decoder.forward(&mut tape, &bound, "dec", u)?;
    let f = predictor.forward(&mut tape, &bound, "f", u)?;
    let xh_data = tape.value(xh).data();
    let f_data = tape.value(f).data();
    let mut recon = 0.0;
    for r in 0..n {
        let dx = xs.data()[r * 2] - xh_data[r * 2];
        let dy = xs.data()[r * 2 + 1] - xh_data[r * 2 + 1];
        recon += dx * dx + dy * dy;
    }
    let pred = f_data
        .iter()
        .zip(&ys)
        .map(|(p, t)| (p + mean - t) * (p + mean - t))
        .sum::<f64>()
        / n as f64;
    Ok((pred, recon / n as f64))
}

// ---------------------------------------------------------------------------
// Tabular adapter
// ---------------------------------------------------------------------------

/// Oracle backed by a JSON-lines table of labeled architectures.
pub struct TabularOracle {
    by_key: HashMap<String, f64>,
}

impl TabularOracle {
    pub fn len(&self) -> usize {
        self.by_key.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_key.is_empty()
    }
}

/// Loads a labeled JSON-lines dump into a lookup oracle. Every record must
/// carry a score; duplicate canonical keys must agree on it.
pub fn load_tabular(path: &Path, space: &SearchSpace) -> Result<TabularOracle> {
    let records = read_jsonl(path, space)?;
    let mut by_key = HashMap::new();
    for (idx, (graph, score)) in records.into_iter().enumerate() {
        let Some(score) = score else {
            return Err(Error::Data(format!(
                "record {} has no score; tabular oracles need labeled records",
                idx + 1
            )));
        };
        let key = graph.canonical_key();
        if let Some(&existing) = by_key.get(&key) {
            if existing != score {
                return Err(Error::Data(format!(
                    "conflicting scores {existing} and {score} for architecture {key}"
                )));
            }
        }
        by_key.insert(key, score);
    }
    Ok(TabularOracle { by_key })
}

impl Oracle for TabularOracle {
    fn score(&self, g: &ArchGraph) -> Result<f64> {
        self.by_key
            .get(&g.canonical_key())
            .copied()
            .ok_or_else(|| Error::Lookup(format!("architecture {} not in the table", g.arch_hash())))
    }
}
