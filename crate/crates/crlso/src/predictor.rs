//! Semi-supervised discrete-space surrogate: the same message-passing trunk
//! as the encoder followed by a two-layer scalar head. Trained on the few
//! labeled architectures, then used to pseudo-label the unlabeled pool.

use ndgrad::{AdamConfig, AdamState, CounterRng, NodeId, Tape, Tensor};

use crate::error::{Error, Result};
use crate::graphspace::ArchGraph;
use crate::graphspace::SearchSpace;
use crate::gvae::{GnnTrunk, TrunkConfig};
use crate::nn::{self, Act, Bound, Mlp};

/// Parameters of the discrete performance predictor.
#[derive(Clone, Debug)]
pub struct GnnPredictorParams {
    pub trunk: GnnTrunk,
    head: Mlp,
}

impl GnnPredictorParams {
    pub fn init(space: &SearchSpace, cfg: TrunkConfig, rng: &mut CounterRng) -> Self {
        let trunk = GnnTrunk::init(space, cfg, rng);
        let head = Mlp::init(&[cfg.channels, cfg.channels, 1], Act::LeakyRelu(0.1), rng);
        GnnPredictorParams { trunk, head }
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.trunk.visit(&format!("{prefix}.trunk"), out);
        self.head.visit(&format!("{prefix}.head"), out);
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.trunk.visit_mut(&format!("{prefix}.trunk"), out);
        self.head.visit_mut(&format!("{prefix}.head"), out);
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        prefix: &str,
        graphs: &[&ArchGraph],
    ) -> Result<NodeId> {
        let pooled = self.trunk.forward(tape, bound, &format!("{prefix}.trunk"), graphs)?;
        self.head.forward(tape, bound, &format!("{prefix}.head"), pooled)
    }

    /// Deterministic batched inference over many graphs.
    pub fn predict(&self, graphs: &[ArchGraph]) -> Result<Vec<f64>> {
        let mut params = Vec::new();
        self.visit("gnn", &mut params);
        let mut out = Vec::with_capacity(graphs.len());
        for chunk in graphs.chunks(512) {
            let refs: Vec<&ArchGraph> = chunk.iter().collect();
            let mut tape = Tape::new();
            let bound = nn::bind(&mut tape, &params, false);
            let scores = self.forward(&mut tape, &bound, "gnn", &refs)?;
            out.extend_from_slice(tape.value(scores).data());
        }
        Ok(out)
    }
}

/// Training settings for [`train_predictor`].
#[derive(Clone, Copy, Debug)]
pub struct PredictorTrainConfig {
    pub trunk: TrunkConfig,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Stop when the epoch-mean MSE has improved by less than
    /// `early_stop_tol` over this many epochs. Zero disables early stopping.
    pub early_stop_patience: usize,
    pub early_stop_tol: f64,
}

impl Default for PredictorTrainConfig {
    fn default() -> Self {
        PredictorTrainConfig {
            trunk: TrunkConfig::default(),
            epochs: 200,
            batch: 32,
            lr: 1e-4,
            beta1: 0.0,
            beta2: 0.5,
            early_stop_patience: 20,
            early_stop_tol: 1e-6,
        }
    }
}

/// Fits the surrogate by mean-squared error on normalized scores and
/// freezes it. Duplicated architectures are allowed; scores must be finite.
pub fn train_predictor(
    data: &[(ArchGraph, f64)],
    space: &SearchSpace,
    cfg: &PredictorTrainConfig,
    rng: &mut CounterRng,
) -> Result<GnnPredictorParams> {
    if data.len() < 2 {
        return Err(Error::Data(format!(
            "predictor training needs at least 2 labeled architectures, got {}",
            data.len()
        )));
    }
    if data.iter().any(|(_, s)| !s.is_finite()) {
        return Err(Error::Data("non-finite score in the labeled set".into()));
    }
    let mut model = GnnPredictorParams::init(space, cfg.trunk, rng);
    let mut adam = AdamState::new(AdamConfig {
        lr: cfg.lr,
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        ..Default::default()
    });
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut best_mse = f64::INFINITY;
    let mut best_epoch = 0usize;
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let lr = ndgrad::cosine_lr(epoch, cfg.epochs, cfg.lr)?;
        let mut epoch_sse = 0.0;
        for batch in order.chunks(cfg.batch) {
            let refs: Vec<&ArchGraph> = batch.iter().map(|&i| &data[i].0).collect();
            let targets: Vec<f64> = batch.iter().map(|&i| data[i].1).collect();
            let mut params = Vec::new();
            model.visit("gnn", &mut params);
            let mut tape = Tape::new();
            let bound = nn::bind(&mut tape, &params, true);
            let preds = model.forward(&mut tape, &bound, "gnn", &refs)?;
            let preds = tape.reshape(preds, &[batch.len()])?;
            let y = tape.constant(Tensor::vector(targets));
            let resid = tape.sub(y, preds)?;
            let sq = tape.square(resid)?;
            let loss = tape.mean(sq)?;
            epoch_sse += tape.value(loss).item()? * batch.len() as f64;
            let mut grads = tape.backward(loss)?;
            let named = nn::grads_by_name(&bound, &mut grads);
            let mut slots = Vec::new();
            model.visit_mut("gnn", &mut slots);
            nn::adam_update(&mut adam, lr, slots, &named)?;
        }
        let epoch_mse = epoch_sse / data.len() as f64;
        if best_mse - epoch_mse > cfg.early_stop_tol {
            best_mse = epoch_mse;
            best_epoch = epoch;
        } else if cfg.early_stop_patience > 0 && epoch - best_epoch >= cfg.early_stop_patience {
            break;
        }
    }
    Ok(model)
}

/// Labels every input with the frozen predictor's output, preserving order
/// and count.
pub fn pseudo_label(model: &GnnPredictorParams, unlabeled: &[ArchGraph]) -> Result<Vec<f64>> {
    if unlabeled.is_empty() {
        return Ok(Vec::new());
    }
    model.predict(unlabeled)
}

/// Pearson `r` and Kendall `tau-b` between two equal-length score lists.
///
/// Kendall uses the tie-corrected `tau-b` form; the pair scan is quadratic,
/// which is fine at the list sizes used here. Either list having zero
/// variance makes both coefficients undefined.
pub fn correlation_metrics(pred: &[f64], truth: &[f64]) -> Result<(f64, f64)> {
    if pred.len() != truth.len() {
        return Err(Error::Data(format!(
            "correlation over lists of different lengths: {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    let n = pred.len();
    if n < 2 {
        return Err(Error::Data("correlation needs at least 2 points".into()));
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let (mx, my) = (mean(pred), mean(truth));
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for i in 0..n {
        let dx = pred[i] - mx;
        let dy = truth[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "zero variance in one of the score lists".into(),
        ));
    }
    let pearson = sxy / (sxx.sqrt() * syy.sqrt());

    let mut concordant_minus_discordant = 0i64;
    let mut ties_x = 0i64;
    let mut ties_y = 0i64;
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = pred[i] - pred[j];
            let dy = truth[i] - truth[j];
            if dx == 0.0 && dy == 0.0 {
                ties_x += 1;
                ties_y += 1;
            } else if dx == 0.0 {
                ties_x += 1;
            } else if dy == 0.0 {
                ties_y += 1;
            } else if (dx > 0.0) == (dy > 0.0) {
                concordant_minus_discordant += 1;
            } else {
                concordant_minus_discordant -= 1;
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as f64;
    let denom = ((n0 - ties_x as f64) * (n0 - ties_y as f64)).sqrt();
    if denom == 0.0 {
        return Err(Error::UndefinedCorrelation("all pairs tied".into()));
    }
    let kendall = concordant_minus_discordant as f64 / denom;
    Ok((pearson, kendall))
}
