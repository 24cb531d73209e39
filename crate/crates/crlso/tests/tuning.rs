//! Manual tuning probes for the heavy pipelines; ignored by default.
//! Run with: cargo test -p crlso --test tuning -- --ignored --nocapture

use std::collections::HashSet;
use std::time::Instant;

use crlso::bundle::{ModelHyper, SearchMode};
use crlso::graphspace::{sample_distinct, SearchSpace};
use crlso::gvae::{decode_argmax, LatentPoint, MessageDirection};
use crlso::oracle::{Oracle, SyntheticBench};
use crlso::predictor::correlation_metrics;
use crlso::search::{run_algorithm1, LabeledSet, TrainHyper};
use ndgrad::CounterRng;

fn hyper(channels: usize, latent: usize) -> ModelHyper {
    ModelHyper {
        gnn_channels: channels,
        gnn_layers: 3,
        latent_dim: latent,
        decoder_hidden: 128,
        icnn_layers: 3,
        icnn_hidden: 64,
        direction: MessageDirection::In,
    }
}

#[test]
#[ignore]
fn probe_algorithm1_quality() {
    let bench = SyntheticBench::nb201_default();
    let space = bench.space().clone();
    let root = CounterRng::new(0);

    for (channels, latent, epochs_vae, lr) in [
        (32usize, 16usize, 100usize, 1e-3),
    ] {
        let t0 = Instant::now();
        let mut init_rng = root.substream_named("init");
        let mut data = LabeledSet::new();
        for g in sample_distinct(&space, 300, &HashSet::new(), &mut init_rng) {
            let s = bench.score(&g).unwrap();
            data.insert(g, s).unwrap();
        }
        let mut h = hyper(channels, latent);
        h.decoder_hidden = 256;
        let train = TrainHyper {
            lr,
            epochs_pred: 200,
            epochs_vae,
            ..Default::default()
        };
        let mut curve = Vec::new();
        let bundle = run_algorithm1(
            &data,
            &space,
            &h,
            &train,
            SearchMode::Cr,
            &root.substream_named("train"),
            &mut curve,
        )
        .unwrap();
        let train_time = t0.elapsed().as_secs_f64();

        // Reconstruction accuracy over 1000 held-out architectures.
        let t1 = Instant::now();
        let mut held_rng = root.substream_named("held");
        let held = sample_distinct(&space, 1000, data.keys(), &mut held_rng);
        let mus = bundle.encoder.encode_means(&held).unwrap();
        let d = h.latent_dim;
        let mut exact = 0usize;
        for (i, g) in held.iter().enumerate() {
            let z = LatentPoint::posterior_mean(mus.data()[i * d..(i + 1) * d].to_vec());
            if let Ok(decoded) = decode_argmax(&z, &bundle.decoder, &bundle.space) {
                if &decoded == g {
                    exact += 1;
                }
            }
        }
        // Predictor quality over 5000 held-out architectures.
        let mut pred_rng = root.substream_named("predq");
        let eval = sample_distinct(&space, 5000, data.keys(), &mut pred_rng);
        let preds = bundle.gnn_predictor.predict(&eval).unwrap();
        let truth: Vec<f64> = eval.iter().map(|g| bench.score(g).unwrap()).collect();
        let (r, tau) = correlation_metrics(&preds, &truth).unwrap();

        let last = curve.last().unwrap();
        println!(
            "C={channels} L={latent} ev={epochs_vae} lr={lr}: train {train_time:.1}s eval {:.1}s | recon {}/1000 | tau {tau:.3} r {r:.3} | last epoch loss {:.4} recon {:.4} kl {:.4} pred {:.4}",
            t1.elapsed().as_secs_f64(),
            exact,
            last.loss,
            last.recon.unwrap_or(0.0),
            last.kl.unwrap_or(0.0),
            last.pred.unwrap_or(0.0),
        );
    }
}

#[test]
#[ignore]
fn probe_tiny_space_memorization() {
    use crlso::search::run_algorithm1;
    let bench = SyntheticBench::new(SearchSpace::operator_on_edge(3, 3, None).unwrap()).unwrap();
    let space = bench.space().clone();
    let root = CounterRng::new(1);
    let mut data = LabeledSet::new();
    let mut init_rng = root.substream_named("init");
    for g in sample_distinct(&space, 20, &HashSet::new(), &mut init_rng) {
        data.insert(g.clone(), bench.score(&g).unwrap()).unwrap();
    }
    for (lr, epochs_vae, batch, dech) in [(3e-3, 2000usize, 8usize, 64usize), (1e-2, 2000, 8, 64), (3e-3, 2000, 8, 128)] {
        let h = ModelHyper {
            gnn_channels: 32,
            gnn_layers: 2,
            latent_dim: 8,
            decoder_hidden: dech,
            icnn_layers: 2,
            icnn_hidden: 32,
            direction: MessageDirection::In,
        };
        let train = TrainHyper { lr, epochs_pred: 50, epochs_vae, batch_vae: batch, ..Default::default() };
        let mut curve = Vec::new();
        let bundle = run_algorithm1(&data, &space, &h, &train, SearchMode::Cr, &root.substream_named("t"), &mut curve).unwrap();
        let all: Vec<_> = space.enumerate().unwrap().collect();
        let mus = bundle.encoder.encode_means(&all).unwrap();
        let mut exact = 0;
        for (i, g) in all.iter().enumerate() {
            let z = LatentPoint::posterior_mean(mus.data()[i * 8..(i + 1) * 8].to_vec());
            if let Ok(d) = decode_argmax(&z, &bundle.decoder, &bundle.space) {
                if &d == g { exact += 1; }
            }
        }
        // mu spread per dimension
        let n = all.len();
        let mut var = vec![0.0; 8];
        for dim in 0..8 {
            let vals: Vec<f64> = (0..n).map(|i| mus.data()[i * 8 + dim]).collect();
            let m = vals.iter().sum::<f64>() / n as f64;
            var[dim] = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
        }
        let last = curve.last().unwrap();
        println!(
            "tiny lr={lr} ev={epochs_vae} b={batch} dh={dech}: recon_exact {exact}/27 | last recon {:.4} kl {:.4} | mu var {:?}",
            last.recon.unwrap(), last.kl.unwrap(),
            var.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>()
        );
    }
}

#[test]
#[ignore]
fn probe_search_effectiveness() {
    use crlso::oracle::CountingOracle;
    use crlso::search::{run_crlso, SearchConfig};
    let bench = SyntheticBench::nb201_default();
    let space = bench.space().clone();
    let mut h = hyper(32, 16);
    h.decoder_hidden = 256;
    let train = TrainHyper { lr: 1e-3, epochs_pred: 200, epochs_vae: 100, ..Default::default() };
    for seed in [0u64, 1, 2] {
        for (mode, noise_eps, redraws) in [
            (SearchMode::Cr, 0.6, 6usize),
            (SearchMode::Unconstrained, 0.6, 6),
        ] {
            let cfg = SearchConfig {
                q_start: 300,
                q_max: 500,
                top_k: 5,
                eta0: 0.02,
                delta_eta: 0.02,
                noise_eps,
                max_escalations: 50,
                noise_redraws: redraws,
                finetune_epochs: 50,
                mode,
                seed,
            };
            let counter = CountingOracle::new(&bench);
            let t0 = Instant::now();
            let outcome = run_crlso(&space, &counter, &cfg, &h, &train).unwrap();
            let rank = bench.ranking().lookup(&outcome.best.0).unwrap().0;
            let guided = outcome.trace.iter().filter(|r| r.eta > 0.0).count();
            let guided_best = outcome
                .trace
                .iter()
                .filter(|r| r.eta > 0.0)
                .map(|r| r.score)
                .fold(f64::NEG_INFINITY, f64::max);
            println!(
                "seed {seed} mode {mode}: best {:.3} rank {rank} | guided {guided}/200 guided_best {guided_best:.3} | calls {} | {:.0}s",
                outcome.best.1,
                counter.calls(),
                t0.elapsed().as_secs_f64()
            );
        }
    }
}

#[test]
#[ignore]
fn probe_latent_geometry() {
    use crlso::search::run_algorithm1;
    let bench = SyntheticBench::nb201_default();
    let space = bench.space().clone();
    let root = CounterRng::new(0);
    let mut data = LabeledSet::new();
    let mut init_rng = root.substream_named("init");
    for g in sample_distinct(&space, 300, &HashSet::new(), &mut init_rng) {
        data.insert(g.clone(), bench.score(&g).unwrap()).unwrap();
    }
    let mut h = hyper(32, 16);
    h.decoder_hidden = 256;
    let train = TrainHyper { lr: 1e-3, epochs_pred: 200, epochs_vae: 100, ..Default::default() };
    let mut curve = Vec::new();
    let bundle = run_algorithm1(&data, &space, &h, &train, SearchMode::Cr, &root.substream_named("train"), &mut curve).unwrap();

    // Latent spread over 500 random graphs.
    let mut rng = root.substream_named("geom");
    let sample = sample_distinct(&space, 500, &HashSet::new(), &mut rng);
    let mus = bundle.encoder.encode_means(&sample).unwrap();
    let d = h.latent_dim;
    let mut norms = Vec::new();
    for i in 0..500 {
        let row = &mus.data()[i * d..(i + 1) * d];
        norms.push(row.iter().map(|x| x * x).sum::<f64>().sqrt());
    }
    let mean_norm = norms.iter().sum::<f64>() / norms.len() as f64;
    // Nearest-neighbor distance among the first 100.
    let mut nn_dists = Vec::new();
    for i in 0..100 {
        let mut best = f64::INFINITY;
        for j in 0..500 {
            if i == j { continue; }
            let dist: f64 = (0..d)
                .map(|c| (mus.data()[i * d + c] - mus.data()[j * d + c]).powi(2))
                .sum::<f64>()
                .sqrt();
            best = best.min(dist);
        }
        nn_dists.push(best);
    }
    let mean_nn = nn_dists.iter().sum::<f64>() / nn_dists.len() as f64;

    // Gradient magnitude at the top-5 posterior means, plus novelty sweep.
    let top = data.top_k(5);
    for &idx in &top {
        let (g, score) = &data.records()[idx];
        let (mu, _) = bundle.encoder.encode(g).unwrap();
        let grad = bundle.latent_predictor.input_gradient(&mu).unwrap();
        let gnorm = grad.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut first_novel_eta = None;
        let mut decode_fail = 0;
        for t in 0..400 {
            let eta = 0.02 + t as f64 * 0.02;
            let z: Vec<f64> = mu.iter().zip(&grad).map(|(&m, &gr)| m + eta * gr).collect();
            match decode_argmax(&LatentPoint::posterior_mean(z), &bundle.decoder, &bundle.space) {
                Ok(decoded) => {
                    if !data.contains(&decoded) {
                        first_novel_eta = Some(eta);
                        break;
                    }
                }
                Err(_) => decode_fail += 1,
            }
        }
        println!(
            "seed graph score {score:.3} rank {:?}: |grad| {gnorm:.4} first_novel_eta {first_novel_eta:?} decode_fail {decode_fail}",
            bench.ranking().lookup(g).map(|(r, _)| r)
        );
    }
    println!("mean |mu| {mean_norm:.3}, mean NN dist (100 pts) {mean_nn:.3}");
}

#[test]
#[ignore]
fn probe_separation() {
    use crlso::analysis::separation_report;
    use crlso::search::run_algorithm1;
    let bench = SyntheticBench::nb201_default();
    let space = bench.space().clone();
    let ranking = bench.ranking();
    let n = ranking.entries.len();
    let top: Vec<_> = ranking.entries[..100].iter().map(|(g, _)| g.clone()).collect();
    let worst: Vec<_> = ranking.entries[n - 100..].iter().map(|(g, _)| g.clone()).collect();
    let mut population = top.clone();
    population.extend(worst.iter().cloned());
    let scores: Vec<f64> = population.iter().map(|g| bench.score(g).unwrap()).collect();

    for seed in 0..4u64 {
        let mut deltas = Vec::new();
        for mode in [SearchMode::Cr, SearchMode::Unconstrained] {
            let root = CounterRng::new(seed);
            let mut data = LabeledSet::new();
            let mut init_rng = root.substream_named("init");
            for g in sample_distinct(&space, 300, &HashSet::new(), &mut init_rng) {
                data.insert(g.clone(), bench.score(&g).unwrap()).unwrap();
            }
            let mut h = hyper(32, 16);
            h.decoder_hidden = 256;
            let train = TrainHyper { lr: 1e-3, epochs_pred: 200, epochs_vae: 100, ..Default::default() };
            let mut curve = Vec::new();
            let bundle = run_algorithm1(&data, &space, &h, &train, mode, &root.substream_named("train"), &mut curve).unwrap();
            let latents = bundle.encoder.encode_means(&population).unwrap();
            let report = separation_report(&latents, &scores, 100, 100).unwrap();
            deltas.push((mode, report.within_top, report.top_vs_worst, report.delta));
        }
        println!(
            "seed {seed}: cr delta {:.4} (wt {:.4} tw {:.4}) vs unc delta {:.4} (wt {:.4} tw {:.4}) -> cr_gt={}",
            deltas[0].3, deltas[0].1, deltas[0].2, deltas[1].3, deltas[1].1, deltas[1].2,
            deltas[0].3 > deltas[1].3
        );
    }
}
