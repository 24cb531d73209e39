//! End-to-end search: semi-supervised training orchestration, latent
//! predictor fine-tuning, seeded gradient-ascent inference with noise
//! injection and step-size escalation, and the uniform-sampling baseline.

use std::collections::HashSet;

use ndgrad::{AdamConfig, AdamState, CounterRng, Tape, Tensor};

use crate::bundle::{ModelBundle, ModelHyper, SearchMode};
use crate::error::{Error, Result};
use crate::graphspace::{sample_distinct, ArchGraph, SearchSpace};
use crate::gvae::{decode_argmax, elbo_on_tape, LatentOrigin, LatentPoint};
use crate::icnn::IcnnParams;
use crate::nn;
use crate::oracle::Oracle;
use crate::predictor::{pseudo_label, train_predictor, PredictorTrainConfig};

/// Optimization hyperparameters shared by the predictor and joint phases.
#[derive(Clone, Copy, Debug)]
pub struct TrainHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Epochs for the discrete predictor phase.
    pub epochs_pred: usize,
    /// Epochs for the joint autoencoder + latent-predictor phase.
    pub epochs_vae: usize,
    pub batch_pred: usize,
    pub batch_vae: usize,
    /// Weight on the KL term during joint training. An unweighted ELBO is
    /// indifferent between storing information in the latent code and in the
    /// decoder, which stalls exact reconstruction; the small default keeps
    /// the prior as a regularizer while the code memorizes the space, the
    /// regime the reference validation losses (reconstruction ~1e-8 with
    /// near-zero divergence) correspond to.
    pub kl_weight: f64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            lr: 1e-4,
            beta1: 0.0,
            beta2: 0.5,
            epochs_pred: 200,
            epochs_vae: 200,
            batch_pred: 32,
            batch_vae: 512,
            kl_weight: 0.005,
        }
    }
}

/// Settings of one search run.
#[derive(Clone, Copy, Debug)]
pub struct SearchConfig {
    pub q_start: usize,
    pub q_max: usize,
    /// Seed-set size per inference round.
    pub top_k: usize,
    pub eta0: f64,
    pub delta_eta: f64,
    pub noise_eps: f64,
    pub max_escalations: usize,
    /// Fresh exploration-noise draws per seed after the escalation ladder
    /// exhausts without a novel decode. Each draw restarts the ladder.
    pub noise_redraws: usize,
    pub finetune_epochs: usize,
    pub mode: SearchMode,
    pub seed: u64,
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.q_start == 0 || self.q_start > self.q_max {
            return Err(Error::Config(format!(
                "q_start {} must satisfy 0 < q_start <= q_max {}",
                self.q_start, self.q_max
            )));
        }
        if self.top_k == 0 {
            return Err(Error::Config("K must be at least 1".into()));
        }
        if self.eta0 <= 0.0 || self.delta_eta <= 0.0 {
            return Err(Error::Config("eta0 and delta_eta must be positive".into()));
        }
        if self.noise_eps < 0.0 {
            return Err(Error::Config("noise_eps must be non-negative".into()));
        }
        Ok(())
    }
}

/// The growing labeled set of Algorithm-style search: canonical
/// architectures with finite scores, insertion-ordered, deduplicated by
/// canonical key.
#[derive(Clone, Debug, Default)]
pub struct LabeledSet {
    records: Vec<(ArchGraph, f64)>,
    index: HashSet<String>,
}

impl LabeledSet {
    pub fn new() -> Self {
        LabeledSet::default()
    }

    /// Inserts a (canonicalized) architecture; returns false on duplicates.
    pub fn insert(&mut self, g: ArchGraph, score: f64) -> Result<bool> {
        if !score.is_finite() {
            return Err(Error::Data(format!("non-finite score {score}")));
        }
        let c = g.canonicalize();
        if !self.index.insert(c.canonical_key()) {
            return Ok(false);
        }
        self.records.push((c, score));
        Ok(true)
    }

    pub fn contains(&self, g: &ArchGraph) -> bool {
        self.index.contains(&g.canonical_key())
    }

    pub fn contains_key(&self, key: &str) -> bool {
        self.index.contains(key)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[(ArchGraph, f64)] {
        &self.records
    }

    pub fn keys(&self) -> &HashSet<String> {
        &self.index
    }

    pub fn graphs(&self) -> Vec<ArchGraph> {
        self.records.iter().map(|(g, _)| g.clone()).collect()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.records.iter().map(|&(_, s)| s).collect()
    }

    /// Highest-scoring record; ties break toward earliest insertion.
    pub fn best(&self) -> Option<&(ArchGraph, f64)> {
        let mut best: Option<(usize, &(ArchGraph, f64))> = None;
        for (i, rec) in self.records.iter().enumerate() {
            if best.map_or(true, |(_, b)| rec.1 > b.1) {
                best = Some((i, rec));
            }
        }
        best.map(|(_, rec)| rec)
    }

    /// Indices of the top `k` records by score, earliest insertion first on
    /// ties.
    pub fn top_k(&self, k: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.records.len()).collect();
        order.sort_by(|&a, &b| {
            self.records[b]
                .1
                .partial_cmp(&self.records[a].1)
                .expect("finite scores")
                .then_with(|| a.cmp(&b))
        });
        order.truncate(k);
        order
    }

    fn mean_std(&self) -> (f64, f64) {
        let n = self.records.len() as f64;
        let mean = self.records.iter().map(|&(_, s)| s).sum::<f64>() / n;
        let var = self.records.iter().map(|&(_, s)| (s - mean) * (s - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        (mean, if std > 0.0 { std } else { 1.0 })
    }
}

/// One row of a training curve.
#[derive(Clone, Debug)]
pub struct CurveRow {
    pub phase: &'static str,
    pub epoch: usize,
    pub loss: f64,
    pub recon: Option<f64>,
    pub kl: Option<f64>,
    pub pred: Option<f64>,
}

/// One oracle evaluation in a search trace.
#[derive(Clone, Debug)]
pub struct TraceRow {
    pub query_index: usize,
    pub arch_hash: String,
    pub score: f64,
    pub eta: f64,
    pub mode: SearchMode,
    pub seed: u64,
}

/// Joint training of encoder, decoder, and latent predictor on an
/// already-normalized dataset by the combined ELBO + squared-residual loss.
fn train_joint(
    bundle: &mut ModelBundle,
    data: &[(ArchGraph, f64)],
    train: &TrainHyper,
    rng: &mut CounterRng,
    curve: &mut Vec<CurveRow>,
) -> Result<()> {
    let latent = bundle.hyper.latent_dim;
    let convex = bundle.mode != SearchMode::Unconstrained;
    let mut adam = AdamState::new(AdamConfig {
        lr: train.lr,
        beta1: train.beta1,
        beta2: train.beta2,
        ..Default::default()
    });
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..train.epochs_vae {
        rng.shuffle(&mut order);
        let lr = ndgrad::cosine_lr(epoch, train.epochs_vae, train.lr)?;
        let (mut sum_kl, mut sum_recon, mut sum_pred) = (0.0, 0.0, 0.0);
        for batch in order.chunks(train.batch_vae) {
            let refs: Vec<&ArchGraph> = batch.iter().map(|&i| &data[i].0).collect();
            let targets: Vec<f64> = batch.iter().map(|&i| data[i].1).collect();
            let noise = Tensor::randn(&[batch.len(), latent], 1.0, rng);

            let mut params = Vec::new();
            bundle.encoder.visit("enc", &mut params);
            bundle.decoder.visit("dec", &mut params);
            bundle.latent_predictor.visit("f", &mut params);
            let mut tape = Tape::new();
            let bound = nn::bind(&mut tape, &params, true);
            let elbo = elbo_on_tape(
                &mut tape,
                &bound,
                &bundle.encoder,
                &bundle.decoder,
                &bundle.space,
                &refs,
                &noise,
            )?;
            let f = bundle.latent_predictor.forward(&mut tape, &bound, "f", elbo.z)?;
            let f = tape.reshape(f, &[batch.len()])?;
            let y = tape.constant(Tensor::vector(targets));
            let resid = tape.sub(y, f)?;
            let pred = tape.square(resid)?;
            let weighted_kl = tape.scale(elbo.kl, train.kl_weight)?;
            let partial = tape.add(weighted_kl, elbo.recon)?;
            let per_sample = tape.add(partial, pred)?;
            let loss = tape.mean(per_sample)?;

            sum_kl += tape.value(elbo.kl).data().iter().sum::<f64>();
            sum_recon += tape.value(elbo.recon).data().iter().sum::<f64>();
            sum_pred += tape.value(pred).data().iter().sum::<f64>();

            let mut grads = tape.backward(loss)?;
            let named = nn::grads_by_name(&bound, &mut grads);
            let mut slots = Vec::new();
            bundle.encoder.visit_mut("enc", &mut slots);
            bundle.decoder.visit_mut("dec", &mut slots);
            bundle.latent_predictor.visit_mut("f", &mut slots);
            nn::adam_update(&mut adam, lr, slots, &named)?;
            if convex {
                bundle.latent_predictor.project_nonneg();
            }
        }
        let n = data.len() as f64;
        curve.push(CurveRow {
            phase: "joint",
            epoch,
            loss: (sum_kl + sum_recon + sum_pred) / n,
            recon: Some(sum_recon / n),
            kl: Some(sum_kl / n),
            pred: Some(sum_pred / n),
        });
    }
    Ok(())
}

/// Semi-supervised training: fits the discrete surrogate on the labeled set,
/// pseudo-labels the unlabeled pool (full enumeration up to 100k
/// architectures, 50k uniform samples beyond that), and trains the
/// autoencoder jointly with the latent predictor on the union.
pub fn run_algorithm1(
    data: &LabeledSet,
    space: &SearchSpace,
    hyper: &ModelHyper,
    train: &TrainHyper,
    mode: SearchMode,
    rng: &CounterRng,
    curve: &mut Vec<CurveRow>,
) -> Result<ModelBundle> {
    if data.is_empty() {
        return Err(Error::Data("training requires a non-empty labeled set".into()));
    }
    if mode == SearchMode::Random {
        return Err(Error::Config("random mode trains no models".into()));
    }

    // Phase 1: discrete surrogate on the labeled set (normalized over D).
    let (mean_d, std_d) = data.mean_std();
    let labeled: Vec<(ArchGraph, f64)> = data
        .records()
        .iter()
        .map(|(g, s)| (g.clone(), (s - mean_d) / std_d))
        .collect();
    let pred_cfg = PredictorTrainConfig {
        trunk: hyper.trunk(),
        epochs: train.epochs_pred,
        batch: train.batch_pred,
        lr: train.lr,
        beta1: train.beta1,
        beta2: train.beta2,
        ..Default::default()
    };
    let mut pred_rng = rng.substream_named("predictor");
    let gnn = train_predictor(&labeled, space, &pred_cfg, &mut pred_rng)?;
    // Record the fit quality on the labeled set itself.
    {
        let fits = gnn.predict(&data.graphs())?;
        let mse = fits
            .iter()
            .zip(labeled.iter())
            .map(|(p, (_, t))| (p - t) * (p - t))
            .sum::<f64>()
            / fits.len() as f64;
        curve.push(CurveRow {
            phase: "predictor",
            epoch: train.epochs_pred,
            loss: mse,
            recon: None,
            kl: None,
            pred: None,
        });
    }

    // Phase 2: pseudo-label the unlabeled pool.
    let mut pool_rng = rng.substream_named("pool");
    let pool: Vec<ArchGraph> = match space.count() {
        Some(count) if count <= 100_000 => space
            .enumerate()?
            .filter(|g| !data.contains(g))
            .collect(),
        _ => sample_distinct(space, 50_000, data.keys(), &mut pool_rng),
    };
    let pseudo_norm = pseudo_label(&gnn, &pool)?;

    // Phase 3: joint training on D union D' with raw-scale scores
    // re-normalized over the enlarged set.
    let mut big: Vec<(ArchGraph, f64)> = Vec::with_capacity(data.len() + pool.len());
    big.extend(data.records().iter().cloned());
    big.extend(
        pool.into_iter()
            .zip(pseudo_norm)
            .map(|(g, s_norm)| (g, s_norm * std_d + mean_d)),
    );
    let n = big.len() as f64;
    let mean_b = big.iter().map(|&(_, s)| s).sum::<f64>() / n;
    let var_b = big.iter().map(|&(_, s)| (s - mean_b) * (s - mean_b)).sum::<f64>() / n;
    let std_b = if var_b > 0.0 { var_b.sqrt() } else { 1.0 };
    for (_, s) in &mut big {
        *s = (*s - mean_b) / std_b;
    }

    let mut bundle = ModelBundle::init(space, hyper, mode, &mut rng.substream_named("models"))?;
    bundle.gnn_predictor = gnn;
    bundle.score_mean = mean_b;
    bundle.score_std = std_b;
    let mut joint_rng = rng.substream_named("joint");
    train_joint(&mut bundle, &big, train, &mut joint_rng, curve)?;
    Ok(bundle)
}

/// One noisy ascent step in the latent space: inject exploration noise, then
/// move along the predictor's gradient with step size `eta`.
pub fn gradient_step(
    z: &LatentPoint,
    predictor: &IcnnParams,
    eta: f64,
    noise_eps: f64,
    rng: &mut CounterRng,
) -> Result<LatentPoint> {
    if eta < 0.0 {
        return Err(Error::Config(format!("step size must be non-negative, got {eta}")));
    }
    let noised: Vec<f64> =
        z.coords.iter().map(|&c| c + noise_eps * rng.normal()).collect();
    if eta == 0.0 {
        return Ok(LatentPoint { coords: noised, origin: LatentOrigin::Stepped });
    }
    let grad = predictor.input_gradient(&noised)?;
    let coords: Vec<f64> =
        noised.iter().zip(&grad).map(|(&c, &g)| c + eta * g).collect();
    if coords.iter().any(|c| !c.is_finite()) {
        return Err(Error::Autodiff(ndgrad::NdError::Numerical(
            "non-finite latent point after gradient step".into(),
        )));
    }
    Ok(LatentPoint { coords, origin: LatentOrigin::Stepped })
}

/// Candidates from one inference round: seeds are the posterior means of the
/// top-K architectures; each seed draws exploration noise, takes one
/// gradient step, and escalates the step size on duplicate or invalid
/// decodes, redrawing the noise once after exhausting the escalations.
///
/// Returns at most K novel architectures with the step size that produced
/// each. An empty result means every seed exhausted its attempts.
pub fn infer_candidates(
    data: &LabeledSet,
    bundle: &ModelBundle,
    cfg: &SearchConfig,
    rng: &mut CounterRng,
) -> Result<Vec<(ArchGraph, f64)>> {
    if data.len() < cfg.top_k {
        return Err(Error::Data(format!(
            "need at least K = {} labeled architectures, have {}",
            cfg.top_k,
            data.len()
        )));
    }
    let mut out: Vec<(ArchGraph, f64)> = Vec::new();
    let mut claimed: HashSet<String> = HashSet::new();
    for &idx in &data.top_k(cfg.top_k) {
        let (seed_graph, _) = &data.records()[idx];
        let (mu, _) = bundle.encoder.encode(seed_graph)?;
        let seed_point = LatentPoint::posterior_mean(mu);
        'noise: for _redraw in 0..cfg.noise_redraws.max(1) {
            // Noise first, then one gradient evaluated at the noised point;
            // escalation rescales the same step.
            let noised: Vec<f64> = seed_point
                .coords
                .iter()
                .map(|&c| c + cfg.noise_eps * rng.normal())
                .collect();
            let grad = bundle.latent_predictor.input_gradient(&noised)?;
            for escalation in 0..=cfg.max_escalations {
                let eta = cfg.eta0 + escalation as f64 * cfg.delta_eta;
                let coords: Vec<f64> =
                    noised.iter().zip(&grad).map(|(&c, &g)| c + eta * g).collect();
                let stepped = LatentPoint { coords, origin: LatentOrigin::Stepped };
                if !stepped.all_finite() {
                    return Err(Error::Autodiff(ndgrad::NdError::Numerical(
                        "non-finite latent point during inference".into(),
                    )));
                }
                match decode_argmax(&stepped, &bundle.decoder, &bundle.space) {
                    Ok(decoded) => {
                        let key = decoded.canonical_key();
                        if !data.contains_key(&key) && !claimed.contains(&key) {
                            claimed.insert(key);
                            out.push((decoded, eta));
                            break 'noise;
                        }
                    }
                    Err(Error::DecodeInvalid(_)) => {}
                    Err(other) => return Err(other),
                }
            }
        }
    }
    Ok(out)
}

/// Fine-tunes the latent predictor on the posterior means of the labeled
/// set, continuing from its current parameters with projection throughout
/// (in convex mode).
pub fn finetune_latent_predictor(
    bundle: &mut ModelBundle,
    data: &LabeledSet,
    train: &TrainHyper,
    epochs: usize,
    rng: &mut CounterRng,
) -> Result<()> {
    let graphs = data.graphs();
    let zs = bundle.encoder.encode_means(&graphs)?;
    let targets: Vec<f64> =
        data.records().iter().map(|&(_, s)| bundle.normalize_score(s)).collect();
    let convex = bundle.mode != SearchMode::Unconstrained;
    let d = bundle.hyper.latent_dim;
    let n = targets.len();
    let mut adam = AdamState::new(AdamConfig {
        lr: train.lr,
        beta1: train.beta1,
        beta2: train.beta2,
        ..Default::default()
    });
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..epochs {
        rng.shuffle(&mut order);
        let lr = ndgrad::cosine_lr(epoch, epochs, train.lr)?;
        for batch in order.chunks(train.batch_pred) {
            let rows: Vec<f64> = batch
                .iter()
                .flat_map(|&r| zs.data()[r * d..(r + 1) * d].iter().copied())
                .collect();
            let ys: Vec<f64> = batch.iter().map(|&r| targets[r]).collect();
            let mut params = Vec::new();
            bundle.latent_predictor.visit("f", &mut params);
            let mut tape = Tape::new();
            let bound = nn::bind(&mut tape, &params, true);
            let z = tape.constant(Tensor::matrix(batch.len(), d, rows)?);
            let f = bundle.latent_predictor.forward(&mut tape, &bound, "f", z)?;
            let f = tape.reshape(f, &[batch.len()])?;
            let y = tape.constant(Tensor::vector(ys));
            let resid = tape.sub(y, f)?;
            let sq = tape.square(resid)?;
            let loss = tape.mean(sq)?;
            let mut grads = tape.backward(loss)?;
            let named = nn::grads_by_name(&bound, &mut grads);
            let mut slots = Vec::new();
            bundle.latent_predictor.visit_mut("f", &mut slots);
            nn::adam_update(&mut adam, lr, slots, &named)?;
            if convex {
                bundle.latent_predictor.project_nonneg();
            }
        }
    }
    Ok(())
}

/// Everything produced by one search run.
pub struct SearchOutcome {
    pub best: (ArchGraph, f64),
    pub trace: Vec<TraceRow>,
    pub curve: Vec<CurveRow>,
    pub data: LabeledSet,
    pub bundle: Option<ModelBundle>,
}

/// The full search loop: seeds the labeled set with distinct uniform
/// samples, trains the models, then alternates latent-predictor fine-tuning
/// with gradient-ascent inference until the oracle budget `q_max` is spent.
/// Exactly `q_max` oracle evaluations are made; iterations whose seeds all
/// fail fall back to uniform sampling so the budget is always consumed.
pub fn run_crlso(
    space: &SearchSpace,
    oracle: &dyn Oracle,
    cfg: &SearchConfig,
    hyper: &ModelHyper,
    train: &TrainHyper,
) -> Result<SearchOutcome> {
    cfg.validate()?;
    let root = CounterRng::new(cfg.seed);
    let mut data = LabeledSet::new();
    let mut trace = Vec::with_capacity(cfg.q_max);
    let mut curve = Vec::new();

    let record = |data: &mut LabeledSet,
                      trace: &mut Vec<TraceRow>,
                      g: ArchGraph,
                      eta: f64|
     -> Result<()> {
        let score = oracle.score(&g)?;
        let hash = g.arch_hash();
        let inserted = data.insert(g, score)?;
        debug_assert!(inserted, "candidates are pre-checked for novelty");
        trace.push(TraceRow {
            query_index: data.len(),
            arch_hash: hash,
            score,
            eta,
            mode: cfg.mode,
            seed: cfg.seed,
        });
        Ok(())
    };

    // Initial labeled set: distinct uniform samples, one oracle call each.
    let mut init_rng = root.substream_named("init");
    let initial = sample_distinct(space, cfg.q_start, &HashSet::new(), &mut init_rng);
    if initial.len() < cfg.q_start {
        return Err(Error::Data(format!(
            "space yielded only {} distinct architectures for q_start = {}",
            initial.len(),
            cfg.q_start
        )));
    }
    for g in initial {
        record(&mut data, &mut trace, g, 0.0)?;
    }

    if cfg.mode == SearchMode::Random {
        let mut sample_rng = root.substream_named("random");
        while data.len() < cfg.q_max {
            let fill = cfg.q_max - data.len();
            let got = sample_distinct(space, fill.min(cfg.top_k), data.keys(), &mut sample_rng);
            if got.is_empty() {
                return Err(Error::Data("search space exhausted before q_max".into()));
            }
            for g in got {
                record(&mut data, &mut trace, g, 0.0)?;
            }
        }
        let best = data.best().expect("non-empty set").clone();
        return Ok(SearchOutcome { best, trace, curve, data, bundle: None });
    }

    let mut bundle =
        run_algorithm1(&data, space, hyper, train, cfg.mode, &root.substream_named("train"), &mut curve)?;

    let mut loop_rng = root.substream_named("loop");
    while data.len() < cfg.q_max {
        finetune_latent_predictor(&mut bundle, &data, train, cfg.finetune_epochs, &mut loop_rng)?;
        let remaining = cfg.q_max - data.len();
        let mut candidates = infer_candidates(&data, &bundle, cfg, &mut loop_rng)?;
        candidates.truncate(remaining);
        if candidates.is_empty() {
            // Every seed exhausted its escalations; consume this round's
            // budget with uniform samples instead.
            let fill = remaining.min(cfg.top_k);
            let got = sample_distinct(space, fill, data.keys(), &mut loop_rng);
            if got.is_empty() {
                return Err(Error::Data("search space exhausted before q_max".into()));
            }
            for g in got {
                record(&mut data, &mut trace, g, 0.0)?;
            }
            continue;
        }
        for (g, eta) in candidates {
            record(&mut data, &mut trace, g, eta)?;
        }
    }

    let best = data.best().expect("non-empty set").clone();
    Ok(SearchOutcome { best, trace, curve, data, bundle: Some(bundle) })
}
