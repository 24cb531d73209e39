//! Graph variational autoencoder: a message-passing GNN encoder producing a
//! diagonal Gaussian posterior over the latent space, a one-shot MLP decoder
//! emitting the whole graph's logits at once, the ELBO, and the joint
//! convexity-regularized loss.

use ndgrad::{CounterRng, NodeId, Tape, Tensor};

use crate::error::{Error, Result};
use crate::graphspace::{ArchGraph, SearchSpace, SpaceKind};
use crate::icnn::IcnnParams;
use crate::nn::{self, Act, Bound, Mlp};

/// Which neighborhood feeds a node's incoming messages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum MessageDirection {
    /// Messages flow along edge direction (aggregate over in-neighbors).
    In,
    /// Messages flow against edge direction.
    Out,
    /// Sum of both directions.
    Both,
}

/// Hyperparameters of the encoder trunk.
#[derive(Clone, Copy, Debug)]
pub struct TrunkConfig {
    pub channels: usize,
    pub layers: usize,
    pub direction: MessageDirection,
}

impl Default for TrunkConfig {
    fn default() -> Self {
        TrunkConfig { channels: 64, layers: 3, direction: MessageDirection::In }
    }
}

/// Message-passing trunk shared by the encoder and the discrete predictor.
///
/// Per layer, every node receives the sum of messages from its neighbors
/// (a two-layer perceptron over the concatenated self, neighbor, and edge
/// features) and updates through a residual term plus a two-layer update
/// perceptron. The graph embedding is the sum of final node features, so the
/// whole map is invariant to node relabeling.
#[derive(Clone, Debug)]
pub struct GnnTrunk {
    pub channels: usize,
    pub layers: usize,
    pub direction: MessageDirection,
    node_embed: Tensor,
    edge_embed: Tensor,
    edge_embed_trainable: bool,
    residual: Vec<Tensor>,
    message_net: Vec<Mlp>,
    update_net: Vec<Mlp>,
}

const LEAKY_SLOPE: f64 = 0.1;

impl GnnTrunk {
    pub fn init(space: &SearchSpace, cfg: TrunkConfig, rng: &mut CounterRng) -> Self {
        let c = cfg.channels;
        // Operator-on-node spaces have a single edge type with a fixed
        // all-zero feature; the embedding row stays frozen at zero.
        let edge_embed_trainable = space.kind == SpaceKind::OperatorOnEdge;
        let edge_embed = if edge_embed_trainable {
            Tensor::randn(&[space.edge_vocab_size, c], 0.5, rng)
        } else {
            Tensor::zeros(&[space.edge_vocab_size, c])
        };
        GnnTrunk {
            channels: c,
            layers: cfg.layers,
            direction: cfg.direction,
            node_embed: Tensor::randn(&[space.node_vocab_size, c], 0.5, rng),
            edge_embed,
            edge_embed_trainable,
            residual: (0..cfg.layers).map(|_| nn::xavier(c, c, rng)).collect(),
            message_net: (0..cfg.layers)
                .map(|_| Mlp::init(&[3 * c, c, c], Act::LeakyRelu(LEAKY_SLOPE), rng))
                .collect(),
            update_net: (0..cfg.layers)
                .map(|_| Mlp::init(&[2 * c, c, c], Act::LeakyRelu(LEAKY_SLOPE), rng))
                .collect(),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.node_embed"), &self.node_embed));
        if self.edge_embed_trainable {
            out.push((format!("{prefix}.edge_embed"), &self.edge_embed));
        }
        for (i, t) in self.residual.iter().enumerate() {
            out.push((format!("{prefix}.res{i}"), t));
        }
        for (i, m) in self.message_net.iter().enumerate() {
            m.visit(&format!("{prefix}.msg{i}"), out);
        }
        for (i, m) in self.update_net.iter().enumerate() {
            m.visit(&format!("{prefix}.upd{i}"), out);
        }
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((format!("{prefix}.node_embed"), &mut self.node_embed));
        if self.edge_embed_trainable {
            out.push((format!("{prefix}.edge_embed"), &mut self.edge_embed));
        }
        for (i, t) in self.residual.iter_mut().enumerate() {
            out.push((format!("{prefix}.res{i}"), t));
        }
        for (i, m) in self.message_net.iter_mut().enumerate() {
            m.visit_mut(&format!("{prefix}.msg{i}"), out);
        }
        for (i, m) in self.update_net.iter_mut().enumerate() {
            m.visit_mut(&format!("{prefix}.upd{i}"), out);
        }
    }

    /// Runs message passing over a batch of graphs and sum-pools per graph.
    /// Returns the `[batch, channels]` graph embeddings.
    ///
    /// The frozen edge embedding (operator-on-node spaces) is registered as a
    /// constant so no gradient ever reaches it.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        prefix: &str,
        graphs: &[&ArchGraph],
    ) -> Result<NodeId> {
        let total_nodes: usize = graphs.iter().map(|g| g.num_nodes()).sum();
        if total_nodes == 0 {
            return Err(Error::InvalidGraph("empty batch".into()));
        }
        let mut node_attr_idx = Vec::with_capacity(total_nodes);
        let mut graph_of_node = Vec::with_capacity(total_nodes);
        let mut srcs = Vec::new();
        let mut dsts = Vec::new();
        let mut edge_attr_idx = Vec::new();
        let mut offset = 0usize;
        for (gi, g) in graphs.iter().enumerate() {
            for &a in g.node_attrs() {
                node_attr_idx.push(a as usize);
                graph_of_node.push(gi);
            }
            for &(s, d, a) in g.edges() {
                srcs.push(offset + s as usize);
                dsts.push(offset + d as usize);
                edge_attr_idx.push(a as usize);
            }
            offset += g.num_nodes();
        }

        let node_table = bound.id(&format!("{prefix}.node_embed"));
        let edge_table = if self.edge_embed_trainable {
            bound.id(&format!("{prefix}.edge_embed"))
        } else {
            tape.constant(self.edge_embed.clone())
        };

        let mut x = tape.gather_rows(node_table, &node_attr_idx)?;
        let edge_feats = if srcs.is_empty() {
            None
        } else {
            Some(tape.gather_rows(edge_table, &edge_attr_idx)?)
        };

        for layer in 0..self.layers {
            // Incoming messages; empty neighborhoods contribute zero.
            let mut incoming: Option<NodeId> = None;
            if let Some(ef) = edge_feats {
                let mut legs: Vec<(&[usize], &[usize])> = Vec::new();
                match self.direction {
                    MessageDirection::In => legs.push((&dsts, &srcs)),
                    MessageDirection::Out => legs.push((&srcs, &dsts)),
                    MessageDirection::Both => {
                        legs.push((&dsts, &srcs));
                        legs.push((&srcs, &dsts));
                    }
                }
                for (self_idx, neigh_idx) in legs {
                    let self_rows = tape.gather_rows(x, self_idx)?;
                    let neigh_rows = tape.gather_rows(x, neigh_idx)?;
                    let m_in = tape.concat_cols(&[self_rows, neigh_rows, ef])?;
                    let m = self.message_net[layer].forward(
                        tape,
                        bound,
                        &format!("{prefix}.msg{layer}"),
                        m_in,
                    )?;
                    let agg = tape.segment_sum(m, self_idx, total_nodes)?;
                    incoming = Some(match incoming {
                        Some(acc) => tape.add(acc, agg)?,
                        None => agg,
                    });
                }
            }
            let h = match incoming {
                Some(h) => h,
                None => tape.constant(Tensor::zeros(&[total_nodes, self.channels])),
            };
            let carried = tape.matmul(x, bound.id(&format!("{prefix}.res{layer}")))?;
            let upd_in = tape.concat_cols(&[x, h])?;
            let updated = self.update_net[layer].forward(
                tape,
                bound,
                &format!("{prefix}.upd{layer}"),
                upd_in,
            )?;
            x = tape.add(carried, updated)?;
        }

        Ok(tape.segment_sum(x, &graph_of_node, graphs.len())?)
    }
}

/// Encoder parameters: the trunk plus linear posterior heads.
#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub trunk: GnnTrunk,
    pub latent_dim: usize,
    mean_head: Mlp,
    logvar_head: Mlp,
}

/// Initial bias of the log-variance head. Starting the posterior tight keeps
/// the reparameterized sample informative for the decoder in early training;
/// the prior term then widens whatever dimensions carry no information.
const LOGVAR_BIAS_INIT: f64 = -4.0;

impl EncoderParams {
    pub fn init(space: &SearchSpace, cfg: TrunkConfig, latent_dim: usize, rng: &mut CounterRng) -> Self {
        let trunk = GnnTrunk::init(space, cfg, rng);
        let mut logvar_head = Mlp::init(&[cfg.channels, latent_dim], Act::LeakyRelu(LEAKY_SLOPE), rng);
        for b in logvar_head.biases.last_mut().expect("head has a layer").data_mut() {
            *b = LOGVAR_BIAS_INIT;
        }
        EncoderParams {
            latent_dim,
            mean_head: Mlp::init(&[cfg.channels, latent_dim], Act::LeakyRelu(LEAKY_SLOPE), rng),
            logvar_head,
            trunk,
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.trunk.visit(&format!("{prefix}.trunk"), out);
        self.mean_head.visit(&format!("{prefix}.mean"), out);
        self.logvar_head.visit(&format!("{prefix}.logvar"), out);
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.trunk.visit_mut(&format!("{prefix}.trunk"), out);
        self.mean_head.visit_mut(&format!("{prefix}.mean"), out);
        self.logvar_head.visit_mut(&format!("{prefix}.logvar"), out);
    }

    /// Posterior heads over a batch: returns `(mean, log variance)` ids,
    /// each `[batch, latent_dim]`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        prefix: &str,
        graphs: &[&ArchGraph],
    ) -> Result<(NodeId, NodeId)> {
        let pooled = self.trunk.forward(tape, bound, &format!("{prefix}.trunk"), graphs)?;
        let mean = self.mean_head.forward(tape, bound, &format!("{prefix}.mean"), pooled)?;
        let logvar = self.logvar_head.forward(tape, bound, &format!("{prefix}.logvar"), pooled)?;
        Ok((mean, logvar))
    }

    /// Posterior `(mean, sigma)` of one graph, without recording gradients.
    /// Sigma is strictly positive by the exponential parameterization.
    pub fn encode(&self, g: &ArchGraph) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut params = Vec::new();
        self.visit("enc", &mut params);
        let mut tape = Tape::new();
        let bound = nn::bind(&mut tape, &params, false);
        let (mean, logvar) = self.forward(&mut tape, &bound, "enc", &[g])?;
        let mu = tape.value(mean).data().to_vec();
        let sigma = tape.value(logvar).data().iter().map(|lv| (0.5 * lv).exp()).collect();
        Ok((mu, sigma))
    }

    /// Posterior means of many graphs as a `[n, latent_dim]` tensor,
    /// evaluated in deterministic chunks.
    pub fn encode_means(&self, graphs: &[ArchGraph]) -> Result<Tensor> {
        let mut out = Vec::with_capacity(graphs.len() * self.latent_dim);
        let mut params = Vec::new();
        self.visit("enc", &mut params);
        for chunk in graphs.chunks(512) {
            let refs: Vec<&ArchGraph> = chunk.iter().collect();
            let mut tape = Tape::new();
            let bound = nn::bind(&mut tape, &params, false);
            let (mean, _) = self.forward(&mut tape, &bound, "enc", &refs)?;
            out.extend_from_slice(tape.value(mean).data());
        }
        Tensor::matrix(graphs.len(), self.latent_dim, out).map_err(Error::Autodiff)
    }
}

/// Draws `z = mean + sigma * eps` with standard-normal noise. The returned
/// point records its provenance.
pub fn reparameterize(mean: &[f64], sigma: &[f64], rng: &mut CounterRng) -> LatentPoint {
    debug_assert_eq!(mean.len(), sigma.len());
    let z = mean
        .iter()
        .zip(sigma)
        .map(|(&m, &s)| m + s * rng.normal())
        .collect();
    LatentPoint { coords: z, origin: LatentOrigin::Perturbed }
}

/// Where a latent point came from; tracked through the search loop.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LatentOrigin {
    PosteriorMean,
    Perturbed,
    Stepped,
}

/// A point in the continuous latent space.
#[derive(Clone, Debug)]
pub struct LatentPoint {
    pub coords: Vec<f64>,
    pub origin: LatentOrigin,
}

impl LatentPoint {
    pub fn posterior_mean(coords: Vec<f64>) -> Self {
        LatentPoint { coords, origin: LatentOrigin::PosteriorMean }
    }

    pub fn all_finite(&self) -> bool {
        self.coords.iter().all(|x| x.is_finite())
    }
}

/// Column layout of the decoder's flat logit vector.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderLayout {
    pub num_nodes: usize,
    pub node_classes: usize,
    pub pairs: Vec<(u16, u16)>,
    pub edge_vocab: usize,
}

impl DecoderLayout {
    pub fn for_space(space: &SearchSpace) -> Self {
        DecoderLayout {
            num_nodes: space.num_nodes,
            node_classes: space.node_classes(),
            pairs: space.slot_pairs(),
            edge_vocab: space.edge_vocab_size,
        }
    }

    pub fn node_range(&self, slot: usize) -> (usize, usize) {
        (slot * self.node_classes, (slot + 1) * self.node_classes)
    }

    pub fn presence_range(&self) -> (usize, usize) {
        let start = self.num_nodes * self.node_classes;
        (start, start + self.pairs.len())
    }

    pub fn edge_range(&self, slot: usize) -> (usize, usize) {
        let start = self.presence_range().1 + slot * self.edge_vocab;
        (start, start + self.edge_vocab)
    }

    pub fn out_dim(&self) -> usize {
        self.num_nodes * self.node_classes + self.pairs.len() * (1 + self.edge_vocab)
    }
}

/// One-shot probabilistic decoder: an MLP mapping a latent point to logits
/// for every node-attribute slot, every edge-presence slot, and every
/// edge-attribute slot at once.
#[derive(Clone, Debug)]
pub struct DecoderParams {
    pub layout: DecoderLayout,
    pub latent_dim: usize,
    mlp: Mlp,
}

impl DecoderParams {
    pub fn init(space: &SearchSpace, latent_dim: usize, hidden: usize, rng: &mut CounterRng) -> Self {
        let layout = DecoderLayout::for_space(space);
        let mlp = Mlp::init(
            &[latent_dim, hidden, hidden, layout.out_dim()],
            Act::LeakyRelu(LEAKY_SLOPE),
            rng,
        );
        DecoderParams { layout, latent_dim, mlp }
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.mlp.visit(prefix, out);
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.mlp.visit_mut(prefix, out);
    }

    /// Raw logits `[batch, out_dim]` for a batch of latent points.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, prefix: &str, z: NodeId) -> Result<NodeId> {
        self.mlp.forward(tape, bound, prefix, z)
    }

    /// Structured logits for one latent point, without gradients.
    pub fn decode_logits(&self, z: &LatentPoint) -> Result<GraphLogits> {
        if !z.all_finite() {
            return Err(Error::Data("non-finite latent point".into()));
        }
        let mut params = Vec::new();
        self.visit("dec", &mut params);
        let mut tape = Tape::new();
        let bound = nn::bind(&mut tape, &params, false);
        let zt = tape.constant(Tensor::matrix(1, self.latent_dim, z.coords.clone())?);
        let out = self.forward(&mut tape, &bound, "dec", zt)?;
        Ok(GraphLogits { layout: self.layout.clone(), values: tape.value(out).data().to_vec() })
    }
}

/// Flat decoder logits plus the layout to slice them.
#[derive(Clone, Debug)]
pub struct GraphLogits {
    pub layout: DecoderLayout,
    values: Vec<f64>,
}

impl GraphLogits {
    pub fn node_slot(&self, slot: usize) -> &[f64] {
        let (s, e) = self.layout.node_range(slot);
        &self.values[s..e]
    }

    pub fn presence(&self) -> &[f64] {
        let (s, e) = self.layout.presence_range();
        &self.values[s..e]
    }

    pub fn edge_slot(&self, slot: usize) -> &[f64] {
        let (s, e) = self.layout.edge_range(slot);
        &self.values[s..e]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// First index of the maximum (ties resolve to the lowest index).
pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Per-slot argmax decode followed by validity repair.
///
/// Repair: the edge set is clamped to the space's template (fixed templates
/// take every slot; free templates keep the highest-logit edges up to the
/// edge budget); nodes decoded as absent are dropped along with their edges;
/// if the result breaks input-to-output connectivity or the space's
/// vocabulary rules, the decode is reported invalid rather than patched.
pub fn decode_argmax(
    z: &LatentPoint,
    dec: &DecoderParams,
    space: &SearchSpace,
) -> Result<ArchGraph> {
    let logits = dec.decode_logits(z)?;
    let layout = &logits.layout;

    let node_picks: Vec<usize> =
        (0..layout.num_nodes).map(|slot| argmax(logits.node_slot(slot))).collect();
    let edge_picks: Vec<usize> =
        (0..layout.pairs.len()).map(|slot| argmax(logits.edge_slot(slot))).collect();

    match space.kind {
        SpaceKind::OperatorOnEdge => {
            // Fixed template: every slot is an edge; the presence block is
            // informative only during training.
            let node_attrs: Vec<u16> = node_picks.iter().map(|&a| a as u16).collect();
            let edges: Vec<(u16, u16, u16)> = layout
                .pairs
                .iter()
                .zip(&edge_picks)
                .map(|(&(s, d), &a)| (s, d, a as u16))
                .collect();
            let g = ArchGraph::new(layout.num_nodes, node_attrs, edges)
                .map_err(|e| Error::DecodeInvalid(e.to_string()))?;
            space.validate(&g).map_err(|e| Error::DecodeInvalid(e.to_string()))?;
            Ok(g.canonicalize())
        }
        SpaceKind::OperatorOnNode => {
            let absent = space.absent_class().expect("operator-on-node space");
            let keep: Vec<usize> =
                (0..layout.num_nodes).filter(|&s| node_picks[s] != absent).collect();
            if keep.is_empty() {
                return Err(Error::DecodeInvalid("every node slot decoded absent".into()));
            }
            let mut new_index = vec![usize::MAX; layout.num_nodes];
            for (new, &old) in keep.iter().enumerate() {
                new_index[old] = new;
            }
            // Candidate edges: present slots between kept nodes, strongest
            // presence logits first, clamped to the edge budget.
            let presence = logits.presence();
            let mut candidates: Vec<(usize, f64)> = layout
                .pairs
                .iter()
                .enumerate()
                .filter(|&(slot, &(s, d))| {
                    presence[slot] > 0.0
                        && new_index[s as usize] != usize::MAX
                        && new_index[d as usize] != usize::MAX
                })
                .map(|(slot, _)| (slot, presence[slot]))
                .collect();
            candidates.sort_by(|a, b| {
                b.1.partial_cmp(&a.1).expect("finite logits").then_with(|| a.0.cmp(&b.0))
            });
            candidates.truncate(space.max_edges);
            candidates.sort_by_key(|&(slot, _)| slot);
            let edges: Vec<(u16, u16, u16)> = candidates
                .iter()
                .map(|&(slot, _)| {
                    let (s, d) = layout.pairs[slot];
                    (new_index[s as usize] as u16, new_index[d as usize] as u16, 0u16)
                })
                .collect();
            let node_attrs: Vec<u16> = keep.iter().map(|&s| node_picks[s] as u16).collect();
            let g = ArchGraph::new(keep.len(), node_attrs, edges)
                .map_err(|e| Error::DecodeInvalid(e.to_string()))?;
            space.validate(&g).map_err(|e| Error::DecodeInvalid(e.to_string()))?;
            let c = g.canonicalize();
            let output = c
                .node_attrs()
                .iter()
                .position(|&a| a == crate::graphspace::NODE_ATTR_OUTPUT)
                .expect("validated graph has an output node");
            let input = c
                .node_attrs()
                .iter()
                .position(|&a| a == crate::graphspace::NODE_ATTR_INPUT)
                .expect("validated graph has an input node");
            if !c.has_path(input, output) {
                return Err(Error::DecodeInvalid("no path from input to output".into()));
            }
            Ok(c)
        }
    }
}

/// Ground-truth supervision for the decoder blocks, built from canonical
/// forms so slots line up with the layout.
struct SlotTargets {
    node_class: Vec<Vec<usize>>,
    presence: Vec<f64>,
    edge_class: Vec<Vec<usize>>,
    edge_mask: Option<Vec<Vec<f64>>>,
}

fn build_targets(space: &SearchSpace, graphs: &[&ArchGraph]) -> SlotTargets {
    let layout = DecoderLayout::for_space(space);
    let b = graphs.len();
    let absent = space.absent_class();
    let mut node_class = vec![vec![0usize; b]; layout.num_nodes];
    let mut presence = vec![0.0; b * layout.pairs.len()];
    let mut edge_class = vec![vec![0usize; b]; layout.pairs.len()];
    let mut edge_mask = vec![vec![0.0; b]; layout.pairs.len()];
    let mut any_masked = false;
    for (bi, g) in graphs.iter().enumerate() {
        let c = g.canonicalize();
        for slot in 0..layout.num_nodes {
            node_class[slot][bi] = if slot < c.num_nodes() {
                c.node_attrs()[slot] as usize
            } else {
                any_masked = true;
                absent.expect("padded slots only exist in operator-on-node spaces")
            };
        }
        for (slot, &(s, d)) in layout.pairs.iter().enumerate() {
            match c.edges().iter().find(|&&(es, ed, _)| es == s && ed == d) {
                Some(&(_, _, attr)) => {
                    presence[bi * layout.pairs.len() + slot] = 1.0;
                    edge_class[slot][bi] = attr as usize;
                    edge_mask[slot][bi] = 1.0;
                }
                None => {
                    any_masked = true;
                }
            }
        }
    }
    SlotTargets {
        node_class,
        presence,
        edge_class,
        edge_mask: any_masked.then_some(edge_mask),
    }
}

/// Tape nodes of the ELBO pieces for a batch.
pub struct ElboNodes {
    /// Per-sample KL divergence `[batch]`.
    pub kl: NodeId,
    /// Per-sample reconstruction negative log-likelihood `[batch]`.
    pub recon: NodeId,
    /// Reparameterized latent sample `[batch, latent]`.
    pub z: NodeId,
}

/// Builds the ELBO on a tape: closed-form diagonal-Gaussian KL against the
/// standard normal prior, plus cross-entropy reconstruction over the node,
/// presence, and edge blocks. `noise` is the fixed standard-normal draw used
/// by the reparameterization (same shape as the posterior mean).
pub fn elbo_on_tape(
    tape: &mut Tape,
    bound: &Bound,
    enc: &EncoderParams,
    dec: &DecoderParams,
    space: &SearchSpace,
    graphs: &[&ArchGraph],
    noise: &Tensor,
) -> Result<ElboNodes> {
    let b = graphs.len();
    let (mean, logvar) = enc.forward(tape, bound, "enc", graphs)?;

    // KL(q || N(0, I)) = 0.5 * sum(mu^2 + exp(lv) - 1 - lv) per sample.
    let mu_sq = tape.square(mean)?;
    let var = tape.exp(logvar)?;
    let sum = tape.add(mu_sq, var)?;
    let sum = tape.offset(sum, -1.0)?;
    let sum = tape.sub(sum, logvar)?;
    let kl = tape.row_sum(sum)?;
    let kl = tape.scale(kl, 0.5)?;

    // z = mu + exp(lv / 2) * eps.
    let half_lv = tape.scale(logvar, 0.5)?;
    let sigma = tape.exp(half_lv)?;
    let eps = tape.constant(noise.clone());
    let scaled = tape.mul(sigma, eps)?;
    let z = tape.add(mean, scaled)?;

    // Reconstruction NLL over the structured logit blocks.
    let logits = dec.forward(tape, bound, "dec", z)?;
    let targets = build_targets(space, graphs);
    let layout = &dec.layout;
    let mut recon: Option<NodeId> = None;
    let accumulate = |tape: &mut Tape, term: NodeId, acc: &mut Option<NodeId>| -> Result<()> {
        *acc = Some(match *acc {
            Some(prev) => tape.add(prev, term)?,
            None => term,
        });
        Ok(())
    };
    for slot in 0..layout.num_nodes {
        let (s, e) = layout.node_range(slot);
        let block = tape.slice_cols(logits, s, e)?;
        let logp = tape.log_softmax(block)?;
        let picked = tape.take_per_row(logp, &targets.node_class[slot])?;
        let nll = tape.neg(picked)?;
        accumulate(tape, nll, &mut recon)?;
    }
    {
        let (s, e) = layout.presence_range();
        let block = tape.slice_cols(logits, s, e)?;
        let bce = tape.bce_with_logits(block, &targets.presence)?;
        let per_sample = tape.row_sum(bce)?;
        accumulate(tape, per_sample, &mut recon)?;
    }
    if layout.edge_vocab > 1 {
        for slot in 0..layout.pairs.len() {
            let (s, e) = layout.edge_range(slot);
            let block = tape.slice_cols(logits, s, e)?;
            let logp = tape.log_softmax(block)?;
            let picked = tape.take_per_row(logp, &targets.edge_class[slot])?;
            let mut nll = tape.neg(picked)?;
            if let Some(mask) = &targets.edge_mask {
                let m = tape.constant(Tensor::vector(mask[slot].clone()));
                nll = tape.mul(nll, m)?;
            }
            accumulate(tape, nll, &mut recon)?;
        }
    }
    let _ = b;
    Ok(ElboNodes { kl, recon: recon.expect("at least one block"), z })
}

/// ELBO of one graph at a fixed reparameterization draw. Returns
/// `(total, kl, recon)`.
pub fn elbo_loss_with_noise(
    enc: &EncoderParams,
    dec: &DecoderParams,
    space: &SearchSpace,
    g: &ArchGraph,
    noise: &Tensor,
) -> Result<(f64, f64, f64)> {
    let mut params = Vec::new();
    enc.visit("enc", &mut params);
    dec.visit("dec", &mut params);
    let mut tape = Tape::new();
    let bound = nn::bind(&mut tape, &params, false);
    let nodes = elbo_on_tape(&mut tape, &bound, enc, dec, space, &[g], noise)?;
    let kl = tape.value(nodes.kl).data()[0];
    let recon = tape.value(nodes.recon).data()[0];
    Ok((kl + recon, kl, recon))
}

/// ELBO of one graph with noise drawn from the provided generator.
pub fn elbo_loss(
    enc: &EncoderParams,
    dec: &DecoderParams,
    space: &SearchSpace,
    g: &ArchGraph,
    rng: &mut CounterRng,
) -> Result<f64> {
    let noise = Tensor::randn(&[1, enc.latent_dim], 1.0, rng);
    elbo_loss_with_noise(enc, dec, space, g, &noise).map(|(total, _, _)| total)
}

/// Joint convexity-regularized loss of one graph: ELBO plus the squared
/// prediction residual `(score - predictor(z))^2` at the same draw.
pub fn joint_loss_with_noise(
    enc: &EncoderParams,
    dec: &DecoderParams,
    predictor: &IcnnParams,
    space: &SearchSpace,
    g: &ArchGraph,
    score: f64,
    noise: &Tensor,
) -> Result<f64> {
    let mut params = Vec::new();
    enc.visit("enc", &mut params);
    dec.visit("dec", &mut params);
    predictor.visit("f", &mut params);
    let mut tape = Tape::new();
    let bound = nn::bind(&mut tape, &params, false);
    let nodes = elbo_on_tape(&mut tape, &bound, enc, dec, space, &[g], noise)?;
    let f = predictor.forward(&mut tape, &bound, "f", nodes.z)?;
    let f = tape.reshape(f, &[1])?;
    let target = tape.constant(Tensor::vector(vec![score]));
    let resid = tape.sub(target, f)?;
    let pred = tape.square(resid)?;
    let kl = tape.value(nodes.kl).data()[0];
    let recon = tape.value(nodes.recon).data()[0];
    let p = tape.value(pred).data()[0];
    Ok(kl + recon + p)
}
