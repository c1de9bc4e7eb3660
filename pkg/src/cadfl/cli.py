"""Command line front end: ``cadfl run|compress|decompress|cfd|align-check``."""
from __future__ import annotations

import argparse
import json
import struct
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .cfd import DEFAULT_NUM_FREQS, DEFAULT_SIGMA, FrequencySet, cfd_model
from .config import RunConfig
from .dkm import AlignParams, align_loss_and_grad, teacher_assignment
from .errors import CadflError, ConfigError, DecodeError, TruncatedStreamError
from .protocol import delayed_summary, run_simulation, write_metrics
from .wcp import CompressedLayer, compress_layer, payload_bits, reduction_percent, wcp_decompress
from .wire import CompressedModel, decode_wire, encode_wire

_WEIGHTS_HEADER = struct.Struct("<II")
FD_TOLERANCE = 1e-5


def default_config_text() -> str:
    return resources.files("cadfl").joinpath("default_config.json").read_text()


def read_weights(path) -> np.ndarray:
    """Flat weight file: rows u32, cols u32, then rows*cols little-endian f32."""
    raw = Path(path).read_bytes()
    if len(raw) < _WEIGHTS_HEADER.size:
        raise TruncatedStreamError(f"{path}: weight header truncated")
    rows, cols = _WEIGHTS_HEADER.unpack_from(raw)
    need = _WEIGHTS_HEADER.size + 4 * rows * cols
    if len(raw) != need:
        raise DecodeError(f"{path}: {len(raw)} bytes, expected {need} for a {rows}x{cols} matrix")
    data = np.frombuffer(raw, dtype="<f4", offset=_WEIGHTS_HEADER.size)
    return data.astype(np.float64).reshape(rows, cols)


def write_weights(path, w) -> None:
    w = np.atleast_2d(np.asarray(w))
    Path(path).write_bytes(_WEIGHTS_HEADER.pack(*w.shape) + w.astype("<f4").tobytes())


def _load_run_config(args) -> RunConfig:
    if args.config:
        rc = RunConfig.load(args.config)
    else:
        rc = RunConfig.from_dict(json.loads(default_config_text()))
    sim, label, out = rc.sim, rc.label, rc.out
    if args.seed is not None:
        sim = sim.replace(seed=args.seed)
    if args.workers is not None:
        sim = sim.replace(workers=args.workers)
    if args.ablation_no_align:
        sim, label = sim.replace(lam=0.0), "ablation"
    if args.baseline_dense:
        sim, label = sim.replace(dense_exchange=True), "dense"
    if args.out:
        out = args.out
    return RunConfig(sim.validate(), out, label)


def cmd_run(args) -> int:
    rc = _load_run_config(args)
    rows = run_simulation(rc.sim)
    out = Path(rc.out)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics(rows, out / "metrics.jsonl", out / "metrics.csv")
    summary = {str(k): v for k, v in delayed_summary(rows).items()}
    doc = {"label": rc.label, "rows": len(rows), "config": rc.to_dict(), "delayed": summary}
    (out / "summary.json").write_text(json.dumps(doc, indent=2) + "\n")
    for cid, s in summary.items():
        acc = "n/a" if s["max_acc"] is None else f"{s['max_acc']:.4f}"
        print(f"[{rc.label}] client {cid}: max_acc={acc} bytes/round={s['mean_bytes']:.1f} "
              f"flops/round={s['mean_flops']:.4g}")
    print(f"wrote {len(rows)} rows to {out}", file=sys.stderr)
    return 0


def cmd_compress(args) -> int:
    w = read_weights(args.weights)
    layer, _, _ = compress_layer(w, args.k)
    model = CompressedModel(0, 0, [layer], [np.zeros(0)])
    Path(args.output).write_bytes(encode_wire(model))
    bits = payload_bits(layer.n, layer.k)
    print(f"weights={layer.n} k={layer.k} payload_bits={bits} bits_per_weight={bits / layer.n:.4f} "
          f"index_bits_per_weight={(bits - 32 * layer.k) / layer.n:g} "
          f"reduction={reduction_percent(layer.n, layer.k):.4f}%")
    return 0


def cmd_decompress(args) -> int:
    model = decode_wire(Path(args.input).read_bytes())
    if len(model.layers) != 1:
        raise DecodeError(f"{args.input}: expected a single layer, found {len(model.layers)}")
    write_weights(args.output, wcp_decompress(model.layers[0]))
    return 0


def cmd_cfd(args) -> int:
    a = decode_wire(Path(args.a).read_bytes())
    b = decode_wire(Path(args.b).read_bytes())
    freqs = FrequencySet.draw(args.freqs, args.sigma, args.seed)
    print(f"{cfd_model(a, b, freqs):.10g}")
    return 0


def align_check(trials: int = 20, n: int = 32, k: int = 4, n_teachers: int = 2, seed: int = 0,
                h: float = 1e-6) -> float:
    """Worst finite-difference relative error of the alignment gradient over random instances."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        w = rng.normal(size=n)
        c_init = np.sort(rng.normal(size=k))
        teachers = []
        for _ in range(n_teachers):
            table = np.concatenate([[0.0], rng.normal(size=k - 1)])
            layer = CompressedLayer((1, n), table, rng.integers(0, k, n))
            teachers.append((table, teacher_assignment(layer)))
        alpha = rng.dirichlet(np.ones(n_teachers))
        params = AlignParams()
        _, grad = align_loss_and_grad(w, c_init, teachers, alpha, params)
        fd = np.empty(n)
        for i in range(n):
            e = np.zeros(n)
            e[i] = h
            fd[i] = (align_loss_and_grad(w + e, c_init, teachers, alpha, params)[0]
                     - align_loss_and_grad(w - e, c_init, teachers, alpha, params)[0]) / (2 * h)
        scale = max(np.abs(fd).max(), np.abs(grad).max(), 1e-12)
        worst = max(worst, float(np.abs(grad - fd).max() / scale))
    return worst


def cmd_align_check(args) -> int:
    err = align_check(args.trials, seed=args.seed)
    ok = err < FD_TOLERANCE
    print(f"max_rel_err={err:.3e} {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cadfl", description="Decentralised FL simulator with clustered weight exchange")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a simulation and write metrics")
    run.add_argument("--config", help="JSON config (default: bundled toy scenario)")
    run.add_argument("--out", help="output directory")
    run.add_argument("--seed", type=int)
    run.add_argument("--workers", type=int, help="threads for client updates")
    run.add_argument("--ablation-no-align", action="store_true", help="set lam = 0 and label the run 'ablation'")
    run.add_argument("--baseline-dense", action="store_true", help="exchange dense weights, label 'dense'")
    run.set_defaults(func=cmd_run)

    comp = sub.add_parser("compress", help="cluster a weight file into a wire file")
    comp.add_argument("weights")
    comp.add_argument("output")
    comp.add_argument("-k", type=int, default=16)
    comp.set_defaults(func=cmd_compress)

    dec = sub.add_parser("decompress", help="expand a single-layer wire file to a weight file")
    dec.add_argument("input")
    dec.add_argument("output")
    dec.set_defaults(func=cmd_decompress)

    cfd = sub.add_parser("cfd", help="distance between two wire files")
    cfd.add_argument("a")
    cfd.add_argument("b")
    cfd.add_argument("--freqs", type=int, default=DEFAULT_NUM_FREQS)
    cfd.add_argument("--sigma", type=float, default=DEFAULT_SIGMA)
    cfd.add_argument("--seed", type=int, default=0)
    cfd.set_defaults(func=cmd_cfd)

    chk = sub.add_parser("align-check", help="finite-difference check of the alignment gradient")
    chk.add_argument("--trials", type=int, default=20)
    chk.add_argument("--seed", type=int, default=0)
    chk.set_defaults(func=cmd_align_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (CadflError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
