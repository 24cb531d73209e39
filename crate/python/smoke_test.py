#!/usr/bin/env python3
"""End-to-end smoke test of the crlso_py extension module.

Builds nothing itself: run `cargo build -p crlso-py --release` first (or
`--profile dev` and pass --debug). The script locates the compiled cdylib,
imports it, and exercises the main types and operations, finishing with a
miniature end-to-end search through the pipeline entry points.
"""

import argparse
import csv
import json
import math
import pathlib
import shutil
import sys
import tempfile


def locate_module(repo_root: pathlib.Path, debug: bool) -> pathlib.Path:
    profile = "debug" if debug else "release"
    candidates = [
        repo_root / "target" / profile / "libcrlso_py.so",
        repo_root / "target" / profile / "libcrlso_py.dylib",
    ]
    for cand in candidates:
        if cand.exists():
            return cand
    raise SystemExit(
        f"could not find the built extension under target/{profile}; "
        "run `cargo build -p crlso-py --release` first"
    )


def check(name: str, ok: bool, detail: str = "") -> None:
    status = "ok" if ok else "FAIL"
    print(f"[{status}] {name}" + (f" — {detail}" if detail else ""))
    if not ok:
        sys.exit(1)


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--debug", action="store_true", help="use target/debug")
    args = parser.parse_args()

    repo_root = pathlib.Path(__file__).resolve().parents[1]
    built = locate_module(repo_root, args.debug)
    staging = pathlib.Path(tempfile.mkdtemp(prefix="crlso-py-"))
    shutil.copy(built, staging / "crlso_py.so")
    sys.path.insert(0, str(staging))

    import crlso_py as m

    # Search spaces and graphs.
    space = m.SearchSpace.operator_on_edge(3, 3)
    check("space count", space.count == 27, f"count={space.count}")
    graphs = space.enumerate()
    check("enumeration size", len(graphs) == 27)
    check("enumeration distinct", len({g.arch_hash() for g in graphs}) == 27)
    sampled = space.sample(seed=7)
    space.validate(sampled)
    check("sampling deterministic", space.sample(seed=7) == sampled)

    g = m.ArchGraph([0, 2, 1], [(0, 2, 0), (2, 1, 0)])
    canon = g.canonical()
    check(
        "canonical form has src<dst",
        all(src < dst for (src, dst, _) in canon.edges),
        repr(canon),
    )

    # Synthetic benchmark.
    bench = m.SyntheticBench(space)
    s0 = bench.score(graphs[0])
    check("scores pure", bench.score(graphs[0]) == s0, f"score={s0:.4f}")
    best_graph, best_score = bench.best()
    check("best has rank 1", bench.rank(best_graph) == 1, f"best={best_score:.4f}")

    # Toy target and analysis helpers.
    h0 = m.toy_h(0.0, 0.0)
    check("toy_h(0,0)", abs(h0 - (-5.392142528005361)) < 1e-9, f"h={h0:.6f}")
    r, tau = m.correlation([1.0, 2.0, 3.0], [1.0, 3.0, 2.0])
    check("kendall tau", abs(tau - 1.0 / 3.0) < 1e-12, f"tau={tau:.4f}")
    proj, explained = m.pca_project([[1.0, 2.0], [2.0, 4.0], [3.0, 6.0], [4.0, 8.0]], 2)
    check("pca collinear rank", len(explained) == 1 and abs(explained[0] - 1.0) < 1e-9)

    # Miniature end-to-end search through the pipeline entry point.
    out_dir = staging / "run"
    config = staging / "tiny.cfg"
    config.write_text(
        """
[space]
kind = operator-on-edge
num_nodes = 3
num_operators = 3

[models]
gnn_channels = 16
gnn_layers = 2
latent_dim = 8
decoder_hidden = 32
icnn_layers = 2
icnn_hidden = 16

[training]
lr = 0.003
epochs_pred = 30
epochs_vae = 60
batch_pred = 8
batch_vae = 16

[search]
mode = cr
q_max = 16
q_start = 8
K = 2
finetune_epochs = 5
seed = 3
"""
    )
    m.search(config, out_dir)
    trace_rows = list(csv.DictReader((out_dir / "trace.csv").open()))
    check("search budget", len(trace_rows) == 16, f"{len(trace_rows)} queries")
    best = json.loads((out_dir / "best.json").read_text())
    check(
        "best summary",
        "best_score" in best and "rank" in best and best["queries"] == 16,
        f"score={best['best_score']:.3f} rank={best['rank']}",
    )
    manifest = json.loads((out_dir / "manifest.json").read_text())
    check("manifest hashes", set(manifest["files"]) >= {"trace.csv", "best.json"})

    # Checkpoint round trip through the bindings.
    bundle = m.Bundle.load(out_dir / "checkpoint.json")
    mu, sigma = bundle.encode(graphs[0])
    check("encode shape", len(mu) == bundle.latent_dim and all(s > 0 for s in sigma))
    decoded = bundle.decode(mu)
    check("decode returns a valid graph", isinstance(decoded, m.ArchGraph))
    pred = bundle.predict(mu)
    check("latent prediction finite", math.isfinite(pred), f"pred={pred:.3f}")

    print("smoke test passed")


if __name__ == "__main__":
    main()
