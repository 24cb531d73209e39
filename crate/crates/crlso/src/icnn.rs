//! Input convex neural network: a scalar-valued network whose recurrence
//! weights are kept non-negative so the input-to-output map is convex, plus
//! projection-based constraint maintenance, convexity verification, and
//! standalone convex regression.
//!
//! Layer `i` computes `y_{i+1} = h_i(R_i y_i + P_i z + b_i)` with `y_0 = 0`
//! and `R_0` absent; the final layer is affine with width 1. Convexity holds
//! when every entry of `R_1..R_{k-1}` is non-negative and every `h_i` is
//! convex and non-decreasing (leaky ReLU with non-negative slope here).

use ndgrad::{AdamConfig, AdamState, CounterRng, NodeId, Tape, Tensor};

use crate::error::{Error, Result};
use crate::nn::{self, Bound};

/// Absolute tolerance for convexity violations; genuine floating-point noise
/// at these widths sits orders of magnitude below it.
pub const CONVEXITY_TOL: f64 = 1e-9;

/// Layer shape of the predictor: `layers` weight layers, hidden width
/// `hidden`, scalar output.
#[derive(Clone, Copy, Debug)]
pub struct IcnnShape {
    pub input_dim: usize,
    pub layers: usize,
    pub hidden: usize,
}

/// Parameters of the (possibly convexity-constrained) latent predictor.
///
/// With `convex` set, [`project_nonneg`](Self::project_nonneg) is applied
/// after every optimizer step and [`verify_convexity`](Self::verify_convexity)
/// certifies the result. With `convex` unset the same architecture acts as an
/// ordinary perceptron ablation: identical shape, no projection.
#[derive(Clone, Debug)]
pub struct IcnnParams {
    input_dim: usize,
    widths: Vec<usize>,
    /// Passthrough matrices from the input, one per layer; unconstrained.
    input_w: Vec<Tensor>,
    /// Recurrence matrices between consecutive layers; non-negative when
    /// `convex`. Layer 0 has none.
    recur_w: Vec<Tensor>,
    bias: Vec<Tensor>,
    slope: f64,
    convex: bool,
}

impl IcnnParams {
    /// Initializes parameters; recurrence weights start non-negative when
    /// `convex` so the Lemma-style invariant holds from the first step.
    pub fn init(shape: IcnnShape, convex: bool, rng: &mut CounterRng) -> Result<Self> {
        if shape.layers < 1 || shape.input_dim == 0 || shape.hidden == 0 {
            return Err(Error::Config(format!(
                "bad predictor shape: layers {}, input {}, hidden {}",
                shape.layers, shape.input_dim, shape.hidden
            )));
        }
        let mut widths = vec![shape.hidden; shape.layers.saturating_sub(1)];
        widths.push(1);
        let mut input_w = Vec::new();
        let mut recur_w = Vec::new();
        let mut bias = Vec::new();
        for (i, &w) in widths.iter().enumerate() {
            input_w.push(nn::xavier(shape.input_dim, w, rng));
            bias.push(Tensor::zeros(&[w]));
            if i > 0 {
                let mut r = nn::xavier(widths[i - 1], w, rng);
                if convex {
                    for x in r.data_mut() {
                        *x = x.abs();
                    }
                }
                recur_w.push(r);
            }
        }
        Ok(IcnnParams {
            input_dim: shape.input_dim,
            widths,
            input_w,
            recur_w,
            bias,
            slope: 0.1,
            convex,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn is_convex(&self) -> bool {
        self.convex
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len()
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (i, t) in self.input_w.iter().enumerate() {
            out.push((format!("{prefix}.in_w{i}"), t));
        }
        for (i, t) in self.recur_w.iter().enumerate() {
            out.push((format!("{prefix}.rec_w{}", i + 1), t));
        }
        for (i, t) in self.bias.iter().enumerate() {
            out.push((format!("{prefix}.b{i}"), t));
        }
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        for (i, t) in self.input_w.iter_mut().enumerate() {
            out.push((format!("{prefix}.in_w{i}"), t));
        }
        for (i, t) in self.recur_w.iter_mut().enumerate() {
            out.push((format!("{prefix}.rec_w{}", i + 1), t));
        }
        for (i, t) in self.bias.iter_mut().enumerate() {
            out.push((format!("{prefix}.b{i}"), t));
        }
    }

    /// Forward through bound parameters: `z [n, input_dim] -> [n, 1]`.
    /// Hidden layers use leaky ReLU; the final layer is affine.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, prefix: &str, z: NodeId) -> Result<NodeId> {
        let k = self.widths.len();
        let mut carried: Option<NodeId> = None;
        for i in 0..k {
            let mut pre = tape.matmul(z, bound.id(&format!("{prefix}.in_w{i}")))?;
            if let Some(y) = carried {
                let rec = tape.matmul(y, bound.id(&format!("{prefix}.rec_w{i}")))?;
                pre = tape.add(pre, rec)?;
            }
            pre = tape.add_row(pre, bound.id(&format!("{prefix}.b{i}")))?;
            carried = Some(if i + 1 < k { tape.leaky_relu(pre, self.slope)? } else { pre });
        }
        Ok(carried.expect("at least one layer"))
    }

    /// Evaluates the predictor on a batch without recording gradients.
    pub fn predict_batch(&self, zs: &Tensor) -> Result<Vec<f64>> {
        let mut params = Vec::new();
        self.visit("f", &mut params);
        let mut tape = Tape::new();
        let bound = nn::bind(&mut tape, &params, false);
        let z = tape.constant(zs.clone());
        let out = self.forward(&mut tape, &bound, "f", z)?;
        Ok(tape.value(out).data().to_vec())
    }

    /// Scalar prediction at one point.
    pub fn predict_one(&self, z: &[f64]) -> Result<f64> {
        let t = Tensor::matrix(1, z.len(), z.to_vec())?;
        Ok(self.predict_batch(&t)?[0])
    }

    /// Gradient of the prediction with respect to the input point.
    pub fn input_gradient(&self, z: &[f64]) -> Result<Vec<f64>> {
        let mut params = Vec::new();
        self.visit("f", &mut params);
        let mut tape = Tape::new();
        let bound = nn::bind(&mut tape, &params, false);
        let zt = Tensor::matrix(1, z.len(), z.to_vec())?.with_grad();
        let z_id = tape.leaf(zt);
        let out = self.forward(&mut tape, &bound, "f", z_id)?;
        let loss = tape.sum(out)?;
        let mut grads = tape.backward(loss)?;
        let g = grads
            .take(z_id)
            .ok_or_else(|| Error::Data("prediction does not depend on the input".into()))?;
        if !g.all_finite() {
            return Err(Error::Autodiff(ndgrad::NdError::Numerical(
                "non-finite input gradient".into(),
            )));
        }
        Ok(g.into_data())
    }

    /// Clamps every recurrence-weight entry to `max(entry, 0)`; passthrough
    /// weights and biases are untouched. Idempotent.
    pub fn project_nonneg(&mut self) {
        for r in &mut self.recur_w {
            for x in r.data_mut() {
                if *x < 0.0 {
                    *x = 0.0;
                }
            }
        }
    }

    /// First negative recurrence entry, as `(layer index, value)`. Layer
    /// indices follow the recurrence numbering (first recurrence is layer 1).
    pub fn nonneg_violation(&self) -> Option<(usize, f64)> {
        for (i, r) in self.recur_w.iter().enumerate() {
            if let Some(&bad) = r.data().iter().find(|&&x| x < 0.0) {
                return Some((i + 1, bad));
            }
        }
        None
    }

    /// Samples `(z1, z2, lambda)` triples and reports the worst violation of
    /// `f(lambda z1 + (1-lambda) z2) <= lambda f(z1) + (1-lambda) f(z2)`.
    ///
    /// The report fails either when a recurrence weight breaks the
    /// non-negativity invariant (offending layer recorded) or when the
    /// sampled violation exceeds [`CONVEXITY_TOL`].
    pub fn verify_convexity(&self, trials: usize, rng: &mut CounterRng) -> Result<ConvexityReport> {
        if trials == 0 {
            return Err(Error::Config("verify_convexity needs at least one trial".into()));
        }
        let d = self.input_dim;
        let chunk = 4096.min(trials);
        let mut max_violation = f64::NEG_INFINITY;
        let mut done = 0;
        while done < trials {
            let n = chunk.min(trials - done);
            let z1 = Tensor::randn(&[n, d], 2.0, rng);
            let z2 = Tensor::randn(&[n, d], 2.0, rng);
            let lambdas: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
            let mut mid = vec![0.0; n * d];
            for r in 0..n {
                for c in 0..d {
                    mid[r * d + c] =
                        lambdas[r] * z1.data()[r * d + c] + (1.0 - lambdas[r]) * z2.data()[r * d + c];
                }
            }
            let f1 = self.predict_batch(&z1)?;
            let f2 = self.predict_batch(&z2)?;
            let fm = self.predict_batch(&Tensor::matrix(n, d, mid)?)?;
            for r in 0..n {
                let bound = lambdas[r] * f1[r] + (1.0 - lambdas[r]) * f2[r];
                max_violation = max_violation.max(fm[r] - bound);
            }
            done += n;
        }
        let nonneg_violation = self.nonneg_violation();
        Ok(ConvexityReport {
            trials,
            max_violation,
            nonneg_violation,
            pass: nonneg_violation.is_none() && max_violation <= CONVEXITY_TOL,
        })
    }
}

/// Outcome of a convexity check.
#[derive(Clone, Debug)]
pub struct ConvexityReport {
    pub trials: usize,
    pub max_violation: f64,
    /// `(layer, value)` of the first negative recurrence entry, if any.
    pub nonneg_violation: Option<(usize, f64)>,
    pub pass: bool,
}

/// Optimization settings for [`fit_convex_regression`].
#[derive(Clone, Copy, Debug)]
pub struct FitConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig { lr: 3e-3, epochs: 1000, batch: 64 }
    }
}

/// Summary of a regression fit.
#[derive(Clone, Debug)]
pub struct FitReport {
    pub final_mse: f64,
    pub rank_deficient: bool,
}

/// Mean-squared-error regression by Adam, projecting the recurrence weights
/// after every step when the model is convexity-constrained.
pub fn fit_convex_regression(
    model: &mut IcnnParams,
    inputs: &Tensor,
    targets: &[f64],
    cfg: FitConfig,
    rng: &mut CounterRng,
) -> Result<FitReport> {
    let (n, d) = inputs.dim2().map_err(Error::Autodiff)?;
    if n < 2 {
        return Err(Error::Data(format!("regression needs at least 2 samples, got {n}")));
    }
    if targets.len() != n {
        return Err(Error::Data(format!("{} targets for {n} samples", targets.len())));
    }
    if d != model.input_dim {
        return Err(Error::Data(format!(
            "input dim {d} does not match the model's {}",
            model.input_dim
        )));
    }
    if targets.iter().any(|t| !t.is_finite()) {
        return Err(Error::Data("non-finite regression target".into()));
    }
    let first = &inputs.data()[..d];
    let rank_deficient =
        (1..n).all(|r| inputs.data()[r * d..(r + 1) * d] == *first);
    if rank_deficient {
        eprintln!("warning: regression inputs are rank deficient (all points identical)");
    }

    let mut adam = AdamState::new(AdamConfig { lr: cfg.lr, ..Default::default() });
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let lr = ndgrad::cosine_lr(epoch, cfg.epochs, cfg.lr)?;
        for batch in order.chunks(cfg.batch) {
            let rows: Vec<f64> = batch
                .iter()
                .flat_map(|&r| inputs.data()[r * d..(r + 1) * d].iter().copied())
                .collect();
            let ys: Vec<f64> = batch.iter().map(|&r| targets[r]).collect();
            let mut params = Vec::new();
            model.visit("f", &mut params);
            let mut tape = Tape::new();
            let bound = nn::bind(&mut tape, &params, true);
            let z = tape.constant(Tensor::matrix(batch.len(), d, rows)?);
            let pred = model.forward(&mut tape, &bound, "f", z)?;
            let pred = tape.reshape(pred, &[batch.len()])?;
            let y = tape.constant(Tensor::vector(ys));
            let resid = tape.sub(y, pred)?;
            let sq = tape.square(resid)?;
            let loss = tape.mean(sq)?;
            let mut grads = tape.backward(loss)?;
            let named = nn::grads_by_name(&bound, &mut grads);
            let mut slots = Vec::new();
            model.visit_mut("f", &mut slots);
            nn::adam_update(&mut adam, lr, slots, &named)?;
            if model.convex {
                model.project_nonneg();
            }
        }
    }
    let preds = model.predict_batch(inputs)?;
    let final_mse = preds
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n as f64;
    Ok(FitReport { final_mse, rank_deficient })
}
