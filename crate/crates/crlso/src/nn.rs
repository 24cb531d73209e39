//! Shared parameter plumbing: named tensors bound onto tapes, gradient
//! collection by name, and weight initializers.

use std::collections::BTreeMap;

use ndgrad::{AdamState, CounterRng, Gradients, NodeId, Tape, Tensor};

use crate::error::Result;

/// Named parameter tensors registered as leaves on one tape.
pub struct Bound {
    ids: BTreeMap<String, NodeId>,
}

impl Bound {
    pub fn id(&self, name: &str) -> NodeId {
        *self.ids.get(name).unwrap_or_else(|| panic!("unbound parameter `{name}`"))
    }
}

/// Registers every named tensor as a leaf; `trainable` controls whether the
/// leaves request gradients.
pub fn bind(tape: &mut Tape, params: &[(String, &Tensor)], trainable: bool) -> Bound {
    let mut ids = BTreeMap::new();
    for (name, tensor) in params {
        let mut t = (*tensor).clone();
        t.set_requires_grad(trainable);
        ids.insert(name.clone(), tape.leaf(t));
    }
    Bound { ids }
}

/// Pulls gradients for every bound parameter into a name-keyed map.
pub fn grads_by_name(bound: &Bound, grads: &mut Gradients) -> BTreeMap<String, Tensor> {
    let mut out = BTreeMap::new();
    for (name, &id) in &bound.ids {
        if let Some(g) = grads.take(id) {
            out.insert(name.clone(), g);
        }
    }
    out
}

/// One Adam update over mutable parameter slots from name-keyed gradients.
pub fn adam_update(
    adam: &mut AdamState,
    lr: f64,
    mut slots: Vec<(String, &mut Tensor)>,
    grads: &BTreeMap<String, Tensor>,
) -> Result<()> {
    let mut view: Vec<(&str, &mut Tensor)> =
        slots.iter_mut().map(|(n, t)| (n.as_str(), &mut **t)).collect();
    adam.step(lr, &mut view, grads)?;
    Ok(())
}

/// Glorot-style initialization for a `[fan_in, fan_out]` weight matrix.
pub fn xavier(fan_in: usize, fan_out: usize, rng: &mut CounterRng) -> Tensor {
    let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::randn(&[fan_in, fan_out], std, rng)
}

/// Hidden-layer activation for perceptron blocks.
#[derive(Clone, Copy, Debug)]
pub enum Act {
    LeakyRelu(f64),
    Tanh,
}

/// A plain perceptron block with the given layer sizes. Hidden layers carry
/// the configured activation; the output layer is affine.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub weights: Vec<Tensor>,
    pub biases: Vec<Tensor>,
    pub act: Act,
}

impl Mlp {
    pub fn init(sizes: &[usize], act: Act, rng: &mut CounterRng) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in sizes.windows(2) {
            weights.push(xavier(w[0], w[1], rng));
            biases.push(Tensor::zeros(&[w[1]]));
        }
        Mlp { weights, biases, act }
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            out.push((format!("{prefix}.w{i}"), w));
            out.push((format!("{prefix}.b{i}"), b));
        }
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        for (i, (w, b)) in self.weights.iter_mut().zip(&mut self.biases).enumerate() {
            out.push((format!("{prefix}.w{i}"), w));
            out.push((format!("{prefix}.b{i}"), b));
        }
    }

    /// Forward through bound parameters: `x [n, sizes[0]] -> [n, sizes[last]]`.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, prefix: &str, x: NodeId) -> Result<NodeId> {
        let layers = self.weights.len();
        let mut h = x;
        for i in 0..layers {
            h = tape.matmul(h, bound.id(&format!("{prefix}.w{i}")))?;
            h = tape.add_row(h, bound.id(&format!("{prefix}.b{i}")))?;
            if i + 1 < layers {
                h = match self.act {
                    Act::LeakyRelu(slope) => tape.leaky_relu(h, slope)?,
                    Act::Tanh => tape.tanh(h)?,
                };
            }
        }
        Ok(h)
    }
}

/// Plain mean-squared-error regression for an [`Mlp`]; returns the final
/// training MSE.
pub fn fit_mlp_regression(
    model: &mut Mlp,
    inputs: &Tensor,
    targets: &[f64],
    lr: f64,
    epochs: usize,
    batch: usize,
    rng: &mut CounterRng,
) -> Result<f64> {
    let (n, d) = inputs.dim2()?;
    if targets.len() != n {
        return Err(crate::Error::Data(format!("{} targets for {n} inputs", targets.len())));
    }
    let mut adam = AdamState::new(ndgrad::AdamConfig { lr, ..Default::default() });
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..epochs {
        rng.shuffle(&mut order);
        let step_lr = ndgrad::cosine_lr(epoch, epochs, lr)?;
        for chunk in order.chunks(batch) {
            let rows: Vec<f64> = chunk
                .iter()
                .flat_map(|&r| inputs.data()[r * d..(r + 1) * d].iter().copied())
                .collect();
            let ys: Vec<f64> = chunk.iter().map(|&r| targets[r]).collect();
            let mut params = Vec::new();
            model.visit("m", &mut params);
            let mut tape = Tape::new();
            let bound = bind(&mut tape, &params, true);
            let x = tape.constant(Tensor::matrix(chunk.len(), d, rows)?);
            let out = model.forward(&mut tape, &bound, "m", x)?;
            let out = tape.reshape(out, &[chunk.len()])?;
            let y = tape.constant(Tensor::vector(ys));
            let resid = tape.sub(y, out)?;
            let sq = tape.square(resid)?;
            let loss = tape.mean(sq)?;
            let mut grads = tape.backward(loss)?;
            let named = grads_by_name(&bound, &mut grads);
            let mut slots = Vec::new();
            model.visit_mut("m", &mut slots);
            adam_update(&mut adam, step_lr, slots, &named)?;
        }
    }
    let preds = mlp_predict(model, inputs)?;
    Ok(preds.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n as f64)
}

/// No-grad batched evaluation of an [`Mlp`] with scalar output.
pub fn mlp_predict(model: &Mlp, inputs: &Tensor) -> Result<Vec<f64>> {
    let mut params = Vec::new();
    model.visit("m", &mut params);
    let mut tape = Tape::new();
    let bound = bind(&mut tape, &params, false);
    let x = tape.constant(inputs.clone());
    let out = model.forward(&mut tape, &bound, "m", x)?;
    Ok(tape.value(out).data().to_vec())
}

/// Writes values from a name-keyed map back into `(name, &mut Tensor)` slots,
/// enforcing shape equality.
pub fn load_named(
    slots: Vec<(String, &mut Tensor)>,
    saved: &BTreeMap<String, Tensor>,
) -> Result<()> {
    for (name, tensor) in slots {
        let Some(new) = saved.get(&name) else {
            return Err(crate::Error::CheckpointMismatch(format!("missing tensor `{name}`")));
        };
        if new.shape() != tensor.shape() {
            return Err(crate::Error::CheckpointMismatch(format!(
                "tensor `{name}` has shape {:?}, expected {:?}",
                new.shape(),
                tensor.shape()
            )));
        }
        *tensor = new.clone();
    }
    Ok(())
}

/// Snapshot of named tensors for serialization.
pub fn snapshot(params: &[(String, &Tensor)]) -> BTreeMap<String, Tensor> {
    params.iter().map(|(n, t)| (n.clone(), (*t).clone())).collect()
}
