//! Flat key-value configuration files with `[space]`, `[models]`,
//! `[training]`, `[search]`, `[toy]`, and `[eval]` sections. Every key has a
//! default; unknown sections or keys are rejected up front with the accepted
//! alternatives, and the whole file is validated before any compute starts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::bundle::{ModelHyper, SearchMode};
use crate::error::{Error, Result};
use crate::graphspace::SearchSpace;
use crate::gvae::MessageDirection;
use crate::oracle::{load_tabular, SyntheticBench, TabularOracle, ToyConfig};
use crate::search::{SearchConfig, TrainHyper};

/// Which oracle scores architectures.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum OracleChoice {
    Synthetic,
    Tabular(PathBuf),
}

/// A constructed oracle plus its capabilities.
pub enum BuiltOracle {
    Synthetic(SyntheticBench),
    Tabular(TabularOracle),
}

impl BuiltOracle {
    pub fn as_dyn(&self) -> &dyn crate::oracle::Oracle {
        match self {
            BuiltOracle::Synthetic(b) => b,
            BuiltOracle::Tabular(t) => t,
        }
    }

    /// The exhaustive ranking, when the oracle supports one.
    pub fn ranking(&self) -> Option<&crate::oracle::Ranking> {
        match self {
            BuiltOracle::Synthetic(b) => Some(b.ranking()),
            BuiltOracle::Tabular(_) => None,
        }
    }
}

/// Toy-study settings: dimensions plus optimization knobs.
#[derive(Clone, Debug)]
pub struct ToySettings {
    pub latent_dims: Vec<usize>,
    pub cfg: ToyConfig,
}

/// Latent-regressor evaluation settings.
#[derive(Clone, Debug)]
pub struct EvalSettings {
    pub train_sizes: Vec<usize>,
    pub repeats: usize,
    pub holdout: usize,
    pub checkpoint: Option<PathBuf>,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub hidden: usize,
}

/// Fully validated configuration of one run.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub space: SearchSpace,
    pub oracle: OracleChoice,
    pub hyper: ModelHyper,
    pub train: TrainHyper,
    pub search: SearchConfig,
    pub toy: ToySettings,
    pub eval: EvalSettings,
    pub checkpoint_every: usize,
}

struct Section<'a> {
    name: &'a str,
    entries: BTreeMap<String, (String, bool)>,
}

impl Section<'_> {
    fn get<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.entries.get_mut(key) {
            None => Ok(default),
            Some((raw, used)) => {
                *used = true;
                raw.parse().map_err(|_| {
                    Error::Config(format!(
                        "key `{key}` in [{}] has invalid value `{raw}`",
                        self.name
                    ))
                })
            }
        }
    }

    fn get_str(&mut self, key: &str) -> Option<String> {
        self.entries.get_mut(key).map(|(raw, used)| {
            *used = true;
            raw.clone()
        })
    }

    fn get_list(&mut self, key: &str, default: Vec<usize>) -> Result<Vec<usize>> {
        match self.get_str(key) {
            None => Ok(default),
            Some(raw) => raw
                .split(',')
                .map(|part| {
                    part.trim().parse::<usize>().map_err(|_| {
                        Error::Config(format!(
                            "key `{key}` in [{}] wants a comma-separated integer list, got `{raw}`",
                            self.name
                        ))
                    })
                })
                .collect(),
        }
    }

    fn finish(self, accepted: &[&str]) -> Result<()> {
        for (key, (_, used)) in &self.entries {
            if !used {
                return Err(Error::Config(format!(
                    "unknown key `{key}` in [{}]; accepted keys: {}",
                    self.name,
                    accepted.join(", ")
                )));
            }
        }
        Ok(())
    }
}

fn parse_sections(text: &str) -> Result<BTreeMap<String, BTreeMap<String, (String, bool)>>> {
    const SECTIONS: [&str; 6] = ["space", "models", "training", "search", "toy", "eval"];
    let mut out: BTreeMap<String, BTreeMap<String, (String, bool)>> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            if !SECTIONS.contains(&name) {
                return Err(Error::Config(format!(
                    "unknown section [{name}] at line {}; accepted sections: {}",
                    idx + 1,
                    SECTIONS.join(", ")
                )));
            }
            current = Some(name.to_string());
            out.entry(name.to_string()).or_default();
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {} is neither `[section]` nor `key = value`: `{line}`",
                idx + 1
            )));
        };
        let Some(section) = &current else {
            return Err(Error::Config(format!(
                "key `{}` at line {} appears before any section header",
                key.trim(),
                idx + 1
            )));
        };
        out.get_mut(section)
            .expect("section inserted on header")
            .insert(key.trim().to_string(), (value.trim().to_string(), false));
    }
    Ok(out)
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(Error::io(path.display().to_string()))?;
        RunConfig::from_str(&text)
    }

    pub fn from_str(text: &str) -> Result<Self> {
        let mut sections = parse_sections(text)?;
        let mut section = |name: &'static str| Section {
            name,
            entries: sections.remove(name).unwrap_or_default(),
        };

        // [space]
        let mut s = section("space");
        let kind = s.get_str("kind").unwrap_or_else(|| "operator-on-edge".into());
        let num_nodes: usize = s.get("num_nodes", 4)?;
        let num_operators: usize = s.get("num_operators", 5)?;
        let max_edges: usize = s.get("max_edges", 0)?;
        let space = match kind.as_str() {
            "operator-on-edge" => SearchSpace::operator_on_edge(
                num_nodes,
                num_operators,
                (max_edges > 0).then_some(max_edges),
            )?,
            "operator-on-node" => SearchSpace::operator_on_node(
                num_nodes,
                num_operators,
                if max_edges > 0 { max_edges } else { 2 * num_nodes },
            )?,
            other => {
                return Err(Error::Config(format!(
                    "key `kind` in [space] has invalid value `{other}`; accepted: operator-on-edge, operator-on-node"
                )))
            }
        };
        s.finish(&["kind", "num_nodes", "num_operators", "max_edges"])?;

        // [models]
        let mut m = section("models");
        let direction = match m.get_str("message_direction").as_deref() {
            None | Some("in") => MessageDirection::In,
            Some("out") => MessageDirection::Out,
            Some("both") => MessageDirection::Both,
            Some(other) => {
                return Err(Error::Config(format!(
                    "key `message_direction` in [models] has invalid value `{other}`; accepted: in, out, both"
                )))
            }
        };
        let hyper = ModelHyper {
            gnn_channels: m.get("gnn_channels", 512)?,
            gnn_layers: m.get("gnn_layers", 3)?,
            latent_dim: m.get("latent_dim", 64)?,
            decoder_hidden: m.get("decoder_hidden", 512)?,
            icnn_layers: m.get("icnn_layers", 3)?,
            icnn_hidden: m.get("icnn_hidden", 256)?,
            direction,
        };
        m.finish(&[
            "gnn_channels",
            "gnn_layers",
            "latent_dim",
            "decoder_hidden",
            "icnn_layers",
            "icnn_hidden",
            "message_direction",
        ])?;
        if hyper.gnn_channels == 0 || hyper.gnn_layers == 0 || hyper.latent_dim == 0 {
            return Err(Error::Config("model sizes in [models] must be positive".into()));
        }

        // [training]
        let mut t = section("training");
        let epochs: usize = t.get("epochs", 200)?;
        let train = TrainHyper {
            lr: t.get("lr", 1e-4)?,
            beta1: t.get("beta1", 0.0)?,
            beta2: t.get("beta2", 0.5)?,
            epochs_pred: t.get("epochs_pred", epochs)?,
            epochs_vae: t.get("epochs_vae", epochs)?,
            batch_pred: t.get("batch_pred", 32)?,
            batch_vae: t.get("batch_vae", 512)?,
            kl_weight: t.get("kl_weight", 0.005)?,
        };
        t.finish(&[
            "lr",
            "beta1",
            "beta2",
            "epochs",
            "epochs_pred",
            "epochs_vae",
            "batch_pred",
            "batch_vae",
            "kl_weight",
        ])?;
        if train.lr <= 0.0 || train.batch_pred == 0 || train.batch_vae == 0 {
            return Err(Error::Config("[training] needs lr > 0 and positive batch sizes".into()));
        }
        if !(0.0..1.0).contains(&train.beta1) || !(0.0..1.0).contains(&train.beta2) {
            return Err(Error::Config("[training] beta1 and beta2 must lie in [0, 1)".into()));
        }

        // [search]
        let mut se = section("search");
        let mode = match se.get_str("mode").as_deref() {
            None | Some("cr") => SearchMode::Cr,
            Some("unconstrained") => SearchMode::Unconstrained,
            Some("random") => SearchMode::Random,
            Some(other) => {
                return Err(Error::Config(format!(
                    "key `mode` in [search] has invalid value `{other}`; accepted: cr, unconstrained, random"
                )))
            }
        };
        let q_max: usize = se.get("q_max", 500)?;
        let rho: f64 = se.get("rho", 0.5)?;
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::Config(format!("key `rho` in [search] must lie in (0, 1], got {rho}")));
        }
        let q_start_default = ((q_max as f64 * rho).round() as usize).max(1);
        let q_start: usize = se.get("q_start", q_start_default)?;
        let mut seed: u64 = se.get("seed", 0)?;
        if let Ok(env_seed) = std::env::var("CRLSO_SEED") {
            seed = env_seed.parse().map_err(|_| {
                Error::Config(format!("CRLSO_SEED must be an unsigned integer, got `{env_seed}`"))
            })?;
        }
        let search = SearchConfig {
            q_start,
            q_max,
            top_k: se.get("K", 10)?,
            eta0: se.get("eta0", 0.02)?,
            delta_eta: se.get("delta_eta", 0.02)?,
            noise_eps: se.get("noise_eps", 0.05)?,
            max_escalations: se.get("max_escalations", 50)?,
            noise_redraws: se.get("noise_redraws", 4)?,
            finetune_epochs: se.get("finetune_epochs", 50)?,
            mode,
            seed,
        };
        search.validate()?;
        let oracle = match se.get_str("oracle").as_deref() {
            None | Some("synthetic") => OracleChoice::Synthetic,
            Some(other) => match other.strip_prefix("tabular:") {
                Some(path) if !path.is_empty() => OracleChoice::Tabular(PathBuf::from(path)),
                _ => {
                    return Err(Error::Config(format!(
                        "key `oracle` in [search] has invalid value `{other}`; accepted: synthetic, tabular:<path>"
                    )))
                }
            },
        };
        let checkpoint_every: usize = se.get("checkpoint_every", 0)?;
        se.finish(&[
            "mode",
            "q_max",
            "rho",
            "q_start",
            "K",
            "eta0",
            "delta_eta",
            "noise_eps",
            "max_escalations",
            "noise_redraws",
            "finetune_epochs",
            "seed",
            "oracle",
            "checkpoint_every",
        ])?;

        // [toy]
        let mut toy = section("toy");
        let latent_dims = toy.get_list("latent_dims", vec![1, 2, 3, 4, 5])?;
        let toy_settings = ToySettings {
            latent_dims,
            cfg: ToyConfig {
                hidden: toy.get("hidden", 96)?,
                icnn_hidden: toy.get("icnn_hidden", 64)?,
                epochs: toy.get("epochs", 600)?,
                batch: toy.get("batch", 256)?,
                lr: toy.get("lr", 2e-3)?,
                grid: toy.get("grid", 64)?,
            },
        };
        toy.finish(&["latent_dims", "hidden", "icnn_hidden", "epochs", "batch", "lr", "grid"])?;
        if toy_settings.latent_dims.iter().any(|&d| d == 0) || toy_settings.cfg.grid < 2 {
            return Err(Error::Config("[toy] needs positive latent dims and grid >= 2".into()));
        }

        // [eval]
        let mut ev = section("eval");
        let eval = EvalSettings {
            train_sizes: ev.get_list("train_sizes", vec![100, 400, 1600])?,
            repeats: ev.get("repeats", 5)?,
            holdout: ev.get("holdout", 5000)?,
            checkpoint: ev.get_str("checkpoint").map(PathBuf::from),
            epochs: ev.get("epochs", 300)?,
            batch: ev.get("batch", 32)?,
            lr: ev.get("lr", 1e-3)?,
            hidden: ev.get("hidden", 64)?,
        };
        ev.finish(&[
            "train_sizes",
            "repeats",
            "holdout",
            "checkpoint",
            "epochs",
            "batch",
            "lr",
            "hidden",
        ])?;
        if eval.repeats == 0 || eval.train_sizes.is_empty() {
            return Err(Error::Config("[eval] needs repeats >= 1 and a non-empty train_sizes".into()));
        }

        Ok(RunConfig {
            space,
            oracle,
            hyper,
            train,
            search,
            toy: toy_settings,
            eval,
            checkpoint_every,
        })
    }

    /// Constructs the configured oracle.
    pub fn build_oracle(&self) -> Result<BuiltOracle> {
        match &self.oracle {
            OracleChoice::Synthetic => {
                Ok(BuiltOracle::Synthetic(SyntheticBench::new(self.space.clone())?))
            }
            OracleChoice::Tabular(path) => {
                Ok(BuiltOracle::Tabular(load_tabular(path, &self.space)?))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_cover_the_paper_settings() {
        let cfg = RunConfig::from_str("").unwrap();
        assert_eq!(cfg.hyper.gnn_channels, 512);
        assert_eq!(cfg.hyper.gnn_layers, 3);
        assert_eq!(cfg.hyper.latent_dim, 64);
        assert_eq!(cfg.hyper.icnn_hidden, 256);
        assert_eq!(cfg.train.lr, 1e-4);
        assert_eq!(cfg.train.beta1, 0.0);
        assert_eq!(cfg.train.beta2, 0.5);
        assert_eq!(cfg.train.epochs_vae, 200);
        assert_eq!(cfg.train.batch_vae, 512);
        assert_eq!(cfg.search.q_max, 500);
        assert_eq!(cfg.search.q_start, 250); // rho = 0.5
        assert_eq!(cfg.search.top_k, 10);
        assert_eq!(cfg.search.eta0, 0.02);
        assert_eq!(cfg.search.delta_eta, 0.02);
        assert_eq!(cfg.search.noise_eps, 0.05);
        assert_eq!(cfg.space.count(), Some(15_625));
    }

    #[test]
    fn unknown_keys_name_the_alternatives() {
        let err = RunConfig::from_str("[search]\nqmax = 3\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("qmax") && msg.contains("q_max"), "{msg}");

        let err = RunConfig::from_str("[nope]\n").unwrap_err();
        assert!(err.to_string().contains("accepted sections"), "{}", err);
    }

    #[test]
    fn bad_values_name_the_key() {
        let err = RunConfig::from_str("[search]\nmode = greedy\n").unwrap_err();
        assert!(err.to_string().contains("mode"), "{}", err);
        let err = RunConfig::from_str("[training]\nlr = fast\n").unwrap_err();
        assert!(err.to_string().contains("lr"), "{}", err);
    }

    #[test]
    fn explicit_values_override_defaults() {
        let text = "
[space]
kind = operator-on-edge
num_nodes = 3
num_operators = 3

[search]
q_max = 40
rho = 0.25
seed = 7
mode = random
";
        let cfg = RunConfig::from_str(text).unwrap();
        assert_eq!(cfg.space.count(), Some(27));
        assert_eq!(cfg.search.q_start, 10);
        assert_eq!(cfg.search.seed, 7);
        assert_eq!(cfg.search.mode, SearchMode::Random);
    }
}
