"""``ftnet`` command-line entry point.

Exit codes: 0 success, 1 gradient check failed, 2 invalid config or
arguments, 3 I/O failure, 4 corrupt checkpoint.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .config import load_config
from .errors import ConfigError, FormatError, ShapeError
from .experiment import run_experiment, write_samples
from .gan import GanModel, PriorSpec, generate
from .network import Network, blocks_param_count, build_network, grad_check
from .serialization import load_checkpoint

EXIT_OK = 0
EXIT_GRAD_FAIL = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_CORRUPT = 4


class UsageError(Exception):
    pass


def _fail(code: int, msg: str) -> int:
    print(f"ftnet: {msg}", file=sys.stderr)
    return code


# -- train ------------------------------------------------------------------

def cmd_train(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, f"invalid config: {exc}")
    except OSError as exc:
        return _fail(EXIT_IO, f"cannot read config: {exc}")
    if cfg.data["kind"] == "mnist":
        for key in ("images", "labels"):
            if cfg.data.get(key) and not cfg.resolve(cfg.data[key]).exists():
                return _fail(EXIT_CONFIG, f"data.{key} not found: {cfg.resolve(cfg.data[key])}")

    def progress(rec: dict):
        if not args.quiet:
            print(json.dumps(rec, sort_keys=True), flush=True)

    try:
        result = run_experiment(cfg, args.out, progress)
    except (FormatError, ShapeError) as exc:
        return _fail(EXIT_CONFIG, str(exc))
    except OSError as exc:
        return _fail(EXIT_IO, f"I/O failure: {exc}")
    if not args.quiet:
        print(f"wrote {result.out_dir}")
    return EXIT_OK


# -- count-params -----------------------------------------------------------

def _model_report(path: str) -> dict:
    cfg = load_config(path)
    g = blocks_param_count(cfg.generator)
    d = blocks_param_count(cfg.discriminator)
    kinds = {b["kind"] for b in cfg.generator + cfg.discriminator}
    return {"config": str(path), "name": cfg.name, "task": cfg.task,
            "layers": "+".join(sorted(kinds)),
            "generator": g, "discriminator": d, "total": g + d}


def count_params_report(paths: list[str]) -> dict:
    """Per-model parameter totals and every pairwise ratio (larger over smaller)."""
    models = [_model_report(p) for p in paths]
    ratios = []
    for a in models:
        for b in models:
            if a is b or a["total"] < b["total"] or (a["total"] == b["total"] and
                                                      models.index(a) > models.index(b)):
                continue
            ratios.append({
                "larger": a["name"], "smaller": b["name"],
                # headline figure: generator against generator
                "compression_ratio": a["generator"] / b["generator"],
                "generator": a["generator"] / b["generator"],
                "discriminator": a["discriminator"] / b["discriminator"],
                "total": a["total"] / b["total"],
            })
    return {"models": models, "ratios": ratios}


def _table(report: dict) -> str:
    w = max([len(m["name"]) for m in report["models"]] + [5])
    lines = [f"{'model':<{w}}  {'layers':<12}  {'generator':>10}  {'discrim.':>10}  {'total':>10}"]
    for m in report["models"]:
        lines.append(f"{m['name']:<{w}}  {m['layers']:<12}  {m['generator']:>10,}  "
                     f"{m['discriminator']:>10,}  {m['total']:>10,}")
    if report["ratios"]:
        lines.append("")
        lines.append("compression (larger / smaller): generator, discriminator, total")
        for r in report["ratios"]:
            lines.append(f"  {r['larger']} / {r['smaller']}: {r['generator']:.2f}x, "
                         f"{r['discriminator']:.2f}x, {r['total']:.2f}x")
    return "\n".join(lines)


def cmd_count_params(args) -> int:
    try:
        report = count_params_report(args.configs)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, f"invalid config: {exc}")
    except OSError as exc:
        return _fail(EXIT_IO, f"cannot read config: {exc}")
    if args.json:
        print(json.dumps(report, sort_keys=True))
    else:
        print(_table(report))
        print()
        print(json.dumps(report, sort_keys=True))
    return EXIT_OK


# -- grad-check -------------------------------------------------------------

def _parse_extents(text: str, order: int | None) -> list[tuple[int, ...]]:
    try:
        chain = [tuple(int(v) for v in part.split(",")) for part in text.split(":")]
    except ValueError:
        raise UsageError(f"bad --extents {text!r}; expected e.g. 3,3:2,2") from None
    if len(chain) < 2:
        raise UsageError("--extents needs at least an input and an output shape")
    orders = {len(c) for c in chain}
    if len(orders) != 1:
        raise UsageError(f"all shapes in --extents must share one order, got {text!r}")
    if order is not None and orders != {order}:
        raise UsageError(f"--order {order} does not match --extents {text!r}")
    if min(min(c) for c in chain) < 1:
        raise UsageError("extents must be >= 1")
    return chain


def grad_check_network(chain: list[tuple[int, ...]], activation: str, seed: int) -> Network:
    blocks = [{"kind": "tensor", "in": list(a), "out": list(b), "activation": activation}
              for a, b in zip(chain, chain[1:])]
    return build_network(blocks, np.random.default_rng(seed))


def cmd_grad_check(args) -> int:
    try:
        if args.extents is None:
            order = args.order or 2
            chain = [(3,) * order, (2,) * order]
        else:
            chain = _parse_extents(args.extents, args.order)
        if args.batch < 1:
            raise UsageError("--batch must be >= 1")
        net = grad_check_network(chain, args.activation, args.seed)
    except (UsageError, ValueError) as exc:
        return _fail(EXIT_CONFIG, str(exc))
    rng = np.random.default_rng([args.seed, 1])
    x = rng.standard_normal(chain[0] + (args.batch,))
    targets = rng.standard_normal(chain[-1] + (args.batch,))
    report = grad_check(net, x, targets, "mse", h=args.h, tol=args.tol, corrupt=args.corrupt)
    print(report.table())
    print(f"max relative error {report.max_error:.3e} (tolerance {args.tol:g})")
    if not report.passed:
        name, idx, err = max(report.flagged, key=lambda f: f[2])
        return _fail(EXIT_GRAD_FAIL, f"gradient check failed in {name} at {idx}: "
                                     f"relative error {err:.3e}")
    print("PASS")
    return EXIT_OK


# -- sample -----------------------------------------------------------------

def cmd_sample(args) -> int:
    if args.n < 1:
        return _fail(EXIT_CONFIG, "--n must be >= 1")
    try:
        generator, discriminator, meta = load_checkpoint(args.checkpoint)
        prior = PriorSpec.from_dict(meta["prior"])
    except OSError as exc:
        return _fail(EXIT_IO, f"cannot read checkpoint: {exc}")
    except (FormatError, ShapeError, KeyError, TypeError, ValueError) as exc:
        return _fail(EXIT_CORRUPT, f"corrupt checkpoint {args.checkpoint}: {exc}")
    try:
        gan = GanModel(generator, discriminator, prior)
    except ShapeError as exc:
        return _fail(EXIT_CORRUPT, f"corrupt checkpoint {args.checkpoint}: {exc}")
    samples = generate(gan, args.n, np.random.default_rng(args.seed))
    out = Path(args.out)
    per_sample = math.prod(samples.shape[:-1])
    want = ".csv" if per_sample == 2 else ".pgm"
    if out.suffix and out.suffix != want:
        return _fail(EXIT_CONFIG, f"{per_sample}-value samples are written as {want}, "
                                  f"not {out.suffix}")
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        path = write_samples(out, samples)
    except ValueError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    except OSError as exc:
        return _fail(EXIT_IO, f"cannot write samples: {exc}")
    print(f"wrote {args.n} samples to {path}")
    return EXIT_OK


# -- entry point ------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(_fail(EXIT_CONFIG, message))


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ftnet", description="Tensor-layer GANs trained with numpy.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="run a training experiment from a YAML config")
    t.add_argument("config")
    t.add_argument("--out", help="output directory (default: the config's output_dir)")
    t.add_argument("--quiet", action="store_true", help="suppress per-log-line output")
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("count-params", help="parameter totals and compression ratios")
    c.add_argument("configs", nargs="+")
    c.add_argument("--json", action="store_true", help="print only the JSON report")
    c.set_defaults(func=cmd_count_params)

    g = sub.add_parser("grad-check", help="finite-difference check of a random tensor network")
    g.add_argument("--order", type=int, default=None)
    g.add_argument("--extents", default=None,
                   help="shape chain such as 3,3:2,2 (default: order-N 3s to 2s)")
    g.add_argument("--activation", default="sigmoid")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--batch", type=int, default=4)
    g.add_argument("--h", type=float, default=1e-5, help="finite-difference step")
    g.add_argument("--tol", type=float, default=1e-4)
    g.add_argument("--corrupt", action="store_true", help="inject a gradient fault")
    g.set_defaults(func=cmd_grad_check)

    s = sub.add_parser("sample", help="draw samples from a checkpoint")
    s.add_argument("checkpoint")
    s.add_argument("--n", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output file (.csv or .pgm)")
    s.set_defaults(func=cmd_sample)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
