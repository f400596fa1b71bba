"""Command-line entry point: ``flashgan {gen-data,train,augment,evaluate}``.

Every command reads an optional JSON config file, applies flag overrides on
top, resolves paths against ``--workdir`` and writes ``run_manifest.json``
next to its outputs. Exit codes: 0 success, 2 usage or config error, 3
domain error, 4 stall.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Sequence

from . import augment as aug
from . import dataio, evalsuite, trainer
from .errors import ConfigError, FlashGANError

log = logging.getLogger("flashgan")

MANIFEST_NAME = "run_manifest.json"


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _resolve(workdir: Path, p: str | Path) -> Path:
    p = Path(p)
    return p if p.is_absolute() else workdir / p


def _load_config(workdir: Path, path: str | None) -> dict:
    if path is None:
        return {}
    full = _resolve(workdir, path)
    try:
        with open(full, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return cfg


def _parse_sets(pairs: Sequence[str] | None) -> dict:
    out = {}
    for item in pairs or ():
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def _merged(args, workdir: Path, **flags) -> dict:
    cfg = _load_config(workdir, args.config)
    cfg.update(_parse_sets(args.set))
    cfg.update({k: v for k, v in flags.items() if v is not None})
    return cfg


def hash_path(path: Path) -> str:
    """sha256 over a file, or over the sorted (name, content) pairs of a directory."""
    h = hashlib.sha256()
    if path.is_dir():
        for f in sorted(p for p in path.rglob("*") if p.is_file() and p.name != MANIFEST_NAME):
            h.update(f.relative_to(path).as_posix().encode())
            h.update(b"\0")
            h.update(f.read_bytes())
            h.update(b"\0")
    else:
        h.update(path.read_bytes())
    return h.hexdigest()


def write_manifest(out_dir: Path, subcommand: str, config_path: str | None, config: dict, inputs: dict[str, Path], display: dict[str, str], seeds=None) -> Path:
    manifest = {
        "subcommand": subcommand,
        "config_path": config_path,
        "config": config,
        "inputs": {k: {"path": display[k], "sha256": hash_path(p)} for k, p in sorted(inputs.items())},
        "output_dir": display.get("out"),
        "seeds": seeds,
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / MANIFEST_NAME
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _graph_dir(workdir: Path, p: str) -> Path:
    full = _resolve(workdir, p)
    if not (full / "manifest.json").is_file():
        raise ConfigError(f"not a graph directory: {p}")
    return full


def parse_alphas(text: str) -> list[float]:
    try:
        vals = [float(a) for a in text.split(",") if a.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --alpha list {text!r}") from exc
    if not vals:
        raise ConfigError("--alpha needs at least one value")
    return vals


def parse_seeds(text: str) -> list[int]:
    """``"0-9"``, ``"0,2,5"`` or a mix of both."""
    seeds: list[int] = []
    try:
        for part in text.split(","):
            part = part.strip()
            if not part:
                continue
            if "-" in part[1:]:
                lo, hi = part.split("-", 1) if not part.startswith("-") else (part, part)
                seeds.extend(range(int(lo), int(hi) + 1))
            else:
                seeds.append(int(part))
    except ValueError as exc:
        raise ConfigError(f"bad --seeds spec {text!r}") from exc
    if not seeds:
        raise ConfigError("--seeds selects nothing")
    return seeds


def alpha_dirname(alpha: float) -> str:
    return f"alpha_{alpha:g}"


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    workdir = Path(args.workdir)
    cfg_dict = _merged(args, workdir, seed=args.seed)
    cfg = dataio.SynthConfig.from_dict(cfg_dict)
    g = dataio.generate(cfg)
    out = _resolve(workdir, args.out)
    stats = dataio.save_graph(g, out)
    resolved = asdict(cfg)
    resolved["splits"] = list(cfg.splits)
    write_manifest(out, "gen-data", args.config, resolved, {}, {"out": args.out}, [cfg.seed])
    print(json.dumps(stats, indent=2, sort_keys=True))
    return 0


def cmd_train(args) -> int:
    workdir = Path(args.workdir)
    gdir = _graph_dir(workdir, args.graph)
    cfg = trainer.TrainConfig.from_dict(_merged(args, workdir, epochs=args.epochs, seed=args.seed))
    g = dataio.load_graph(gdir)
    out = _resolve(workdir, args.out)
    result = trainer.train(g, cfg, out)
    write_manifest(
        out, "train", args.config, result.state.config.to_dict(), {"graph": gdir}, {"graph": args.graph, "out": args.out}, [cfg.seed]
    )
    last = result.history[-1] if result.history else {}
    print(json.dumps({"epochs": len(result.history), "final": last}, sort_keys=True, default=str))
    return 0


def cmd_augment(args) -> int:
    workdir = Path(args.workdir)
    gdir = _graph_dir(workdir, args.graph)
    alphas = parse_alphas(args.alpha)
    g = dataio.load_graph(gdir)
    inputs = {"graph": gdir}
    display = {"graph": args.graph, "out": args.out}
    model = thresholds = None
    if args.method == "flashgan":
        if not args.checkpoint:
            raise ConfigError("--method flashgan needs --checkpoint")
        ck = _resolve(workdir, args.checkpoint)
        if not ck.is_file():
            raise ConfigError(f"checkpoint not found: {args.checkpoint}")
        loaded = trainer.load_generator(ck)
        model, thresholds = loaded.model, loaded.thresholds
        inputs["checkpoint"] = ck
        display["checkpoint"] = args.checkpoint
    out = _resolve(workdir, args.out)
    cfg = {"method": args.method, "alphas": alphas, "seed": args.seed, "k_nn": args.k_nn}
    summary = {}
    for alpha in alphas:
        target = out / alpha_dirname(alpha) if len(alphas) > 1 else out
        res = aug.augment(g, args.method, alpha, args.seed, model, thresholds, args.k_nn)
        stats = aug.save_augmented(g, res, target)
        summary[f"{alpha:g}"] = {"added_nodes": res.added, "size_bytes": stats["size_bytes"]}
    write_manifest(out, "augment", None, cfg, inputs, display, [args.seed])
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_evaluate(args) -> int:
    workdir = Path(args.workdir)
    cfg = evalsuite.ClassifierConfig.from_dict(_merged(args, workdir))
    seeds = parse_seeds(args.seeds)
    variants = []
    inputs, display = {}, {"out": args.out}
    for spec in args.graphs:
        name, sep, path = spec.partition("=")
        if not sep:
            name, path = Path(spec).name, spec
        gdir = _graph_dir(workdir, path)
        variants.append(evalsuite.Variant(name, dataio.load_graph(gdir), source=path))
        inputs[f"graph:{name}"] = gdir
        display[f"graph:{name}"] = path
    if args.reweight:
        base = variants[0]
        rw = evalsuite.reweight_variant(base.graph, "reweight")
        rw.source = base.source
        variants.append(rw)
    report = evalsuite.run_experiment(variants, seeds, cfg, baseline=args.baseline, jobs=args.jobs)
    out = _resolve(workdir, args.out)
    evalsuite.write_report(report, out)
    write_manifest(out, "evaluate", args.config, cfg.to_dict(), inputs, display, seeds)
    rows = {n: {m: round(report.mean(n, m), 4) for m in evalsuite.METRICS} for n in report.variants}
    print(json.dumps(rows, indent=2, sort_keys=True))
    return 3 if report.partial else 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="flashgan", description="Subgraph-local GAN augmentation for imbalanced node classification.")
    p.add_argument("--workdir", default=".", help="base directory for every relative path (default: cwd)")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, with_config=True):
        if with_config:
            sp.add_argument("--config", help="JSON file of config keys")
            sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (JSON value)")

    sp = sub.add_parser("gen-data", help="generate a planted synthetic graph")
    common(sp)
    sp.add_argument("--out", required=True, help="output graph directory")
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("train", help="train the generator/discriminator pair")
    common(sp)
    sp.add_argument("--graph", required=True, help="input graph directory")
    sp.add_argument("--out", required=True, help="directory for checkpoints and history.csv")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("augment", help="add minority nodes up to a target ratio")
    sp.add_argument("--graph", required=True)
    sp.add_argument("--method", choices=aug.METHODS, default="flashgan")
    sp.add_argument("--alpha", required=True, help="target minority/majority ratio, or a comma-separated list")
    sp.add_argument("--checkpoint", help="generator checkpoint (flashgan method)")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--k-nn", type=int, default=5, help="SMOTE neighbor count")
    sp.set_defaults(func=cmd_augment)

    sp = sub.add_parser("evaluate", help="train and score classifiers over seeds")
    common(sp)
    sp.add_argument("--graphs", nargs="+", required=True, metavar="[NAME=]DIR", help="graph variants; the first is the baseline unless --baseline")
    sp.add_argument("--seeds", default="0-9")
    sp.add_argument("--baseline")
    sp.add_argument("--reweight", action="store_true", help="also evaluate the first graph with class-weighted loss")
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_evaluate)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FlashGANError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, NotADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
