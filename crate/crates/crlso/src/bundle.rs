//! Model bundle: every trained parameter set of one experiment plus the
//! score normalization, with a versioned JSON checkpoint format.

use std::collections::BTreeMap;
use std::path::Path;

use ndgrad::{CounterRng, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphspace::SearchSpace;
use crate::gvae::{DecoderParams, EncoderParams, MessageDirection, TrunkConfig};
use crate::icnn::{IcnnParams, IcnnShape};
use crate::nn;
use crate::predictor::GnnPredictorParams;

/// Search operating mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMode {
    /// Convexity-regularized latent predictor (projection enforced).
    Cr,
    /// Same predictor shape with no non-negativity projection.
    Unconstrained,
    /// Uniform sampling baseline; no models trained.
    Random,
}

impl std::fmt::Display for SearchMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SearchMode::Cr => "cr",
            SearchMode::Unconstrained => "unconstrained",
            SearchMode::Random => "random",
        };
        f.write_str(s)
    }
}

/// Model,architecture hyperparameters shared by the encoder, decoder,
/// predictors, and checkpoints.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelHyper {
    pub gnn_channels: usize,
    pub gnn_layers: usize,
    pub latent_dim: usize,
    pub decoder_hidden: usize,
    pub icnn_layers: usize,
    pub icnn_hidden: usize,
    pub direction: MessageDirection,
}

impl Default for ModelHyper {
    fn default() -> Self {
        ModelHyper {
            gnn_channels: 512,
            gnn_layers: 3,
            latent_dim: 64,
            decoder_hidden: 512,
            icnn_layers: 3,
            icnn_hidden: 256,
            direction: MessageDirection::In,
        }
    }
}

impl ModelHyper {
    pub fn trunk(&self) -> TrunkConfig {
        TrunkConfig {
            channels: self.gnn_channels,
            layers: self.gnn_layers,
            direction: self.direction,
        }
    }

    pub fn icnn_shape(&self) -> IcnnShape {
        IcnnShape {
            input_dim: self.latent_dim,
            layers: self.icnn_layers,
            hidden: self.icnn_hidden,
        }
    }
}

/// Trained parameters of one experiment: encoder, decoder, latent predictor,
/// and the discrete surrogate, plus the affine score normalization fitted on
/// the enlarged training set.
#[derive(Clone, Debug)]
pub struct ModelBundle {
    pub space: SearchSpace,
    pub hyper: ModelHyper,
    pub mode: SearchMode,
    pub encoder: EncoderParams,
    pub decoder: DecoderParams,
    pub latent_predictor: IcnnParams,
    pub gnn_predictor: GnnPredictorParams,
    pub score_mean: f64,
    pub score_std: f64,
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    space: SearchSpace,
    mode: SearchMode,
    hyper: ModelHyper,
    score_mean: f64,
    score_std: f64,
    tensors: BTreeMap<String, Tensor>,
}

impl ModelBundle {
    /// Freshly initialized models for a space; the latent predictor is
    /// convexity-constrained unless the mode is `unconstrained`.
    pub fn init(
        space: &SearchSpace,
        hyper: &ModelHyper,
        mode: SearchMode,
        rng: &mut CounterRng,
    ) -> Result<Self> {
        let convex = mode != SearchMode::Unconstrained;
        Ok(ModelBundle {
            space: space.clone(),
            hyper: *hyper,
            mode,
            encoder: EncoderParams::init(
                space,
                hyper.trunk(),
                hyper.latent_dim,
                &mut rng.substream_named("encoder"),
            ),
            decoder: DecoderParams::init(
                space,
                hyper.latent_dim,
                hyper.decoder_hidden,
                &mut rng.substream_named("decoder"),
            ),
            latent_predictor: IcnnParams::init(
                hyper.icnn_shape(),
                convex,
                &mut rng.substream_named("latent_predictor"),
            )?,
            gnn_predictor: GnnPredictorParams::init(
                space,
                hyper.trunk(),
                &mut rng.substream_named("gnn_predictor"),
            ),
            score_mean: 0.0,
            score_std: 1.0,
        })
    }

    pub fn normalize_score(&self, s: f64) -> f64 {
        (s - self.score_mean) / self.score_std
    }

    pub fn denormalize_score(&self, s: f64) -> f64 {
        s * self.score_std + self.score_mean
    }

    fn visit_all<'a>(&'a self, out: &mut Vec<(String, &'a Tensor)>) {
        self.encoder.visit("enc", out);
        self.decoder.visit("dec", out);
        self.latent_predictor.visit("f", out);
        self.gnn_predictor.visit("gnn", out);
    }

    fn visit_all_mut<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.encoder.visit_mut("enc", out);
        self.decoder.visit_mut("dec", out);
        self.latent_predictor.visit_mut("f", out);
        self.gnn_predictor.visit_mut("gnn", out);
    }

    /// Serializes every parameter tensor with named keys and a format
    /// version into one JSON file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut named = Vec::new();
        self.visit_all(&mut named);
        let checkpoint = Checkpoint {
            version: CHECKPOINT_VERSION,
            space: self.space.clone(),
            mode: self.mode,
            hyper: self.hyper,
            score_mean: self.score_mean,
            score_std: self.score_std,
            tensors: nn::snapshot(&named),
        };
        let json = serde_json::to_string(&checkpoint)
            .map_err(|e| Error::Data(format!("serialize checkpoint: {e}")))?;
        std::fs::write(path, json).map_err(Error::io(path.display().to_string()))?;
        Ok(())
    }

    /// Loads a checkpoint, rebuilding the parameter structures from the
    /// embedded space and hyperparameters. Any missing tensor or shape
    /// mismatch fails loudly.
    pub fn load(path: &Path) -> Result<Self> {
        let json =
            std::fs::read_to_string(path).map_err(Error::io(path.display().to_string()))?;
        let checkpoint: Checkpoint = serde_json::from_str(&json)
            .map_err(|e| Error::CheckpointMismatch(format!("unreadable checkpoint: {e}")))?;
        if checkpoint.version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointMismatch(format!(
                "format version {} is not supported (expected {CHECKPOINT_VERSION})",
                checkpoint.version
            )));
        }
        let mut rng = CounterRng::new(0);
        let mut bundle =
            ModelBundle::init(&checkpoint.space, &checkpoint.hyper, checkpoint.mode, &mut rng)?;
        bundle.score_mean = checkpoint.score_mean;
        bundle.score_std = checkpoint.score_std;
        let mut slots = Vec::new();
        bundle.visit_all_mut(&mut slots);
        nn::load_named(slots, &checkpoint.tensors)?;
        Ok(bundle)
    }

    /// Rejects use of this bundle with a different space.
    pub fn check_space(&self, space: &SearchSpace) -> Result<()> {
        if &self.space != space {
            return Err(Error::CheckpointMismatch(
                "checkpoint was trained on a different search space".into(),
            ));
        }
        Ok(())
    }
}
