"""Command-line interface.

Exit codes: 0 success, 1 comparison failure (or rerun mismatch), 2 usage or
input error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import tempfile
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from . import datagen as dg
from . import estimator as est
from . import graphmetrics as gm
from . import inference as inf

log = logging.getLogger("mirnet")

EXIT_OK = 0
EXIT_MISMATCH = 1
EXIT_USAGE = 2

KINDS = ("cmn", "logistic", "triplets", "gaussians", "uniform-pair", "directed-pair")
REFERENCE_SEED_OFFSET = 1_000_003


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ files


def write_atomic(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj) -> None:
    write_atomic(path, json.dumps(obj, indent=1) + "\n")


def write_csv_atomic(data: dg.SeriesMatrix, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        dg.write_csv(data, tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def meta_path(csv_path) -> Path:
    return Path(f"{csv_path}.meta.json")


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def write_manifest(prefix_path, command, params, inputs, outputs, status="ok", seeds=None):
    manifest = {
        "tool": "mirnet",
        "version": __version__,
        "command": command,
        "params": params,
        "seeds": seeds or {},
        "inputs": {str(p): sha256(p) for p in inputs},
        "outputs": {role: {"path": str(p), "sha256": sha256(p)} for role, p in outputs.items()},
        "status": status,
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    write_json(prefix_path, manifest)
    return manifest


# --------------------------------------------------------------- generate


def _read_matrix(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".json":
        obj = json.loads(path.read_text(encoding="utf-8"))
        if isinstance(obj, dict):
            obj = obj["adjacency"]
        return np.asarray(obj)
    return np.loadtxt(path, delimiter=",", ndmin=2)


def build_generated(args) -> dg.SeriesMatrix:
    if args.preset:
        if args.preset not in dg.PRESETS:
            raise UsageError(f"unknown preset {args.preset!r}; choose from {', '.join(dg.PRESETS)}")
        spec = dg.preset_spec(args.preset, args.seed)
        _apply_overrides(spec, args)
        if isinstance(spec, dg.GaussianBlockSpec):
            data = dg.gen_correlated_gaussians(spec)
        else:
            data = dg.gen_coupled_map_network(spec)
        data.meta["preset"] = args.preset
        return data

    kind = args.kind
    if kind is None:
        raise UsageError("give --preset or --kind")
    length = args.length or dg.DEFAULT_LENGTH
    if kind == "uniform-pair":
        return dg.gen_uniform_pair(length, args.seed)
    if kind == "directed-pair":
        alpha = dg.DIRECTED_ALPHA if args.alpha is None else args.alpha
        transient = dg.DEFAULT_TRANSIENT if args.transient is None else args.transient
        return dg.gen_directed_logistic_pair(alpha, length, args.seed, transient)
    if kind == "gaussians":
        if args.blocks:
            blocks = json.loads(Path(args.blocks).read_text(encoding="utf-8"))
        else:
            blocks = [dg.SIGMA_1, dg.SIGMA_2, dg.nearest_psd(dg.SIGMA_3)]
        return dg.gen_correlated_gaussians(dg.GaussianBlockSpec(blocks, length, args.seed))

    if args.adjacency:
        adjacency = _read_matrix(args.adjacency)
    elif kind == "cmn":
        adjacency = dg.cmn_adjacency()
    elif kind == "triplets":
        adjacency = dg.TRIPLETS_ADJACENCY
    else:
        adjacency = np.zeros((args.nodes, args.nodes), dtype=np.int8)
    if kind == "cmn":
        spec = dg.CouplingSpec(adjacency, dg.CMN_ALPHA, "circle", seed=args.seed)
    else:
        alpha = dg.TRIPLET_ALPHA if kind == "triplets" else 0.0
        spec = dg.CouplingSpec(adjacency, alpha, "logistic", r=dg.LOGISTIC_R, seed=args.seed)
    _apply_overrides(spec, args)
    return dg.gen_coupled_map_network(spec)


def _apply_overrides(spec, args) -> None:
    if args.length:
        spec.length = args.length
    if isinstance(spec, dg.CouplingSpec):
        for name in ("alpha", "r", "K", "transient"):
            value = getattr(args, name)
            if value is not None:
                setattr(spec, name, value)
    spec.__post_init__()


def cmd_generate(args) -> int:
    data = build_generated(args)
    out = Path(args.output)
    write_csv_atomic(data, out)
    meta = _jsonable(dict(data.meta, labels=data.labels, rows=data.n_samples))
    write_json(meta_path(out), meta)
    write_manifest(
        Path(f"{out}.manifest.json"),
        "generate",
        _params(args),
        [],
        {"csv": out, "meta": meta_path(out)},
        seeds={"data": args.seed},
    )
    print(f"wrote {out} ({data.n_samples} x {data.n_channels}) and {meta_path(out)}")
    return EXIT_OK


# ------------------------------------------------------------------ infer


def _load_input(args) -> dg.SeriesMatrix:
    data = dg.load_csv(args.input, has_header=not args.no_header)
    sidecar = meta_path(args.input)
    if sidecar.exists():
        meta = json.loads(sidecar.read_text(encoding="utf-8"))
        cols = meta.get("reference_pair", {}).get("columns")
        if cols:
            data.reference = tuple(int(c) for c in cols)
    if args.log_returns:
        data = dg.log_returns(data)
    return data


def _reference_pair(kind: str, length: int, seed: int) -> dg.SeriesMatrix:
    ref_seed = seed + REFERENCE_SEED_OFFSET
    if kind == "uniform":
        return dg.gen_uniform_pair(length, ref_seed)
    return dg.gen_directed_logistic_pair(dg.DIRECTED_ALPHA, length, ref_seed)


def ordered_pairs_tsv(mir: est.MirMatrix) -> str:
    lines = ["rank\tpair\tvalue\treference"]
    ref = set(mir.reference)
    for rank, ((i, j), v) in enumerate(inf.order_pairs(mir), start=1):
        flag = int(i in ref or j in ref)
        lines.append(f"{rank}\t{mir.labels[i]}-{mir.labels[j]}\t{v!r}\t{flag}")
    return "\n".join(lines) + "\n"


def cmd_infer(args) -> int:
    data = _load_input(args)
    if args.reference != "none":
        if data.reference:
            raise UsageError("input already carries a reference pair")
        data = dg.attach_reference_pair(
            data, _reference_pair(args.reference, data.n_samples, args.seed)
        )
    mir, table = est.estimate_mir(data, args.horizon, args.grid_cap, args.workers)

    prefix = args.output
    outputs = {
        "mir": Path(f"{prefix}.mir.json"),
        "pairs": Path(f"{prefix}.pairs.tsv"),
    }
    write_json(outputs["mir"], est.mir_to_dict(mir, table))
    write_atomic(outputs["pairs"], ordered_pairs_tsv(mir))

    manifest_path = Path(f"{prefix}.manifest.json")
    params = _params(args)
    seeds = {"reference": args.seed + REFERENCE_SEED_OFFSET} if args.reference != "none" else {}
    try:
        if mir.reference:
            tau = inf.reference_threshold(mir)
        else:
            tau = inf.jump_threshold(inf.order_pairs(mir), args.gap)
    except inf.NoAbruptChange as exc:
        write_manifest(manifest_path, "infer", params, [args.input], outputs,
                       status="no abrupt change", seeds=seeds)
        print(f"error: {exc} (e.g. --reference uniform or --reference directed)",
              file=sys.stderr)
        return EXIT_USAGE

    net = inf.reconstruct_adjacency(mir, tau)
    outputs["network"] = Path(f"{prefix}.network.json")
    outputs["edges"] = Path(f"{prefix}.edges.txt")
    write_json(outputs["network"], _jsonable(net.to_dict()))
    write_atomic(outputs["edges"], net.edge_list_text())
    write_manifest(manifest_path, "infer", params, [args.input], outputs, seeds=seeds)
    print(f"N_max={mir.n_max} grid sizes {mir.grid_sizes[0]}..{mir.grid_sizes[-1]}")
    print(f"tau={tau.tau:.6f} method={tau.method} edges={net.n_edges}")
    return EXIT_OK


# ---------------------------------------------------------------- metrics


def _load_network(path) -> tuple[list[str], np.ndarray]:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        labels = list(obj["labels"])
        adjacency = np.asarray(obj["adjacency"], dtype=np.int64)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"malformed network file {path}: {exc}") from exc
    if adjacency.shape != (len(labels), len(labels)):
        raise UsageError(f"malformed network file {path}: adjacency does not match labels")
    return labels, adjacency


def _fmt(value) -> str:
    return "undefined" if value is None else f"{value:.4f}"


def cmd_metrics(args) -> int:
    labels, adjacency = _load_network(args.network)
    try:
        report = gm.metrics_report(adjacency, labels, args.ensemble, args.seed)
    except gm.GraphError as exc:
        raise UsageError(f"malformed network file {args.network}: {exc}") from exc
    out = Path(args.output)
    write_json(out, _jsonable(report.to_dict()))
    write_manifest(Path(f"{out}.manifest.json"), "metrics", _params(args), [args.network],
                   {"report": out}, seeds={"ensemble": args.seed})
    print(f"edges={report.n_edges} sigma={_fmt(report.sigma)} "
          f"r={_fmt(report.assortativity)} Q={_fmt(report.modularity)}")
    for name, why in report.undefined.items():
        print(f"{name} undefined: {why}")
    return EXIT_OK


# ---------------------------------------------------------------- compare


def _load_truth(path) -> np.ndarray:
    try:
        return _read_matrix(path).astype(np.int64)
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot read truth adjacency from {path}: {exc}") from exc


def cmd_compare(args) -> int:
    truth = _load_truth(args.truth)
    labels, inferred = _load_network(args.inferred)
    try:
        acc = inf.inference_accuracy(truth, inferred)
    except inf.InferenceError as exc:
        raise UsageError(str(exc)) from exc

    def fmt(pairs):
        return ", ".join(f"({i + 1},{j + 1}) {labels[i]}-{labels[j]}" for i, j in pairs) or "none"

    print(f"accuracy: {acc.percent:.1f}%")
    print(f"missed: {fmt(acc.missed)}")
    print(f"spurious: {fmt(acc.spurious)}")
    return EXIT_OK if acc.perfect else EXIT_MISMATCH


# ------------------------------------------------------------------ rerun


def cmd_rerun(args) -> int:
    manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    params = dict(manifest["params"])
    command = manifest["command"]
    for path, digest in manifest.get("inputs", {}).items():
        if not Path(path).exists() or sha256(path) != digest:
            print(f"input {path}: changed since the original run")
    with tempfile.TemporaryDirectory() as tmp:
        target = args.output or str(Path(tmp) / "rerun")
        if command == "infer":
            params["output"] = target
        elif command == "generate":
            params["output"] = f"{target}.csv"
        elif command == "metrics":
            params["output"] = f"{target}.json"
        else:
            raise UsageError(f"cannot rerun command {command!r}")
        argv = [command] + _argv_from_params(command, params)
        code = main(argv)
        new = json.loads(Path(f"{params['output']}.manifest.json").read_text("utf-8"))
        ok = True
        if code != EXIT_OK and manifest.get("status") == "ok":
            print(f"rerun exited with code {code}")
            ok = False
        for role, entry in manifest["outputs"].items():
            other = new["outputs"].get(role)
            same = other is not None and other["sha256"] == entry["sha256"]
            ok &= same
            print(f"{role}: {'identical' if same else 'DIFFERENT'}")
    return EXIT_OK if ok else EXIT_MISMATCH


# ------------------------------------------------------------------ parser


_PARAM_SKIP = {"func", "verbose"}


def _params(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in _PARAM_SKIP}


def _argv_from_params(command: str, params: dict) -> list[str]:
    parser = build_parser()
    sub = parser._subparsers._group_actions[0].choices[command]  # noqa: SLF001
    argv = []
    for action in sub._actions:  # noqa: SLF001
        dest = action.dest
        if dest in ("help",) or dest not in params:
            continue
        value = params[dest]
        if not action.option_strings:
            argv.append(str(value))
        elif isinstance(action, argparse._StoreTrueAction):  # noqa: SLF001
            if value:
                argv.append(action.option_strings[-1])
        elif value is not None:
            argv += [action.option_strings[-1], str(value)]
    return argv


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mirnet",
        description="Network inference from time series via the normalised mutual information rate.",
    )
    parser.add_argument("--version", action="version", version=f"mirnet {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset (CSV + meta JSON)")
    g.add_argument("--preset", help=f"one of: {', '.join(dg.PRESETS)}")
    g.add_argument("--kind", choices=KINDS)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--length", type=int)
    g.add_argument("--transient", type=int)
    g.add_argument("--alpha", type=float)
    g.add_argument("--r", type=float)
    g.add_argument("--K", type=float)
    g.add_argument("--nodes", type=int, default=6)
    g.add_argument("--adjacency", help="adjacency as CSV or JSON")
    g.add_argument("--blocks", help="JSON list of covariance blocks (gaussians)")
    g.add_argument("-o", "--output", required=True)
    g.set_defaults(func=cmd_generate)

    i = sub.add_parser("infer", help="estimate MIR-bar and reconstruct the network")
    i.add_argument("input")
    i.add_argument("--no-header", action="store_true")
    i.add_argument("--log-returns", action="store_true")
    i.add_argument("--reference", choices=("none", "uniform", "directed"), default="none")
    i.add_argument("--gap", type=float, default=inf.DEFAULT_GAP)
    i.add_argument("--grid-cap", type=int)
    i.add_argument("--horizon", type=int, default=est.DEFAULT_HORIZON)
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--workers", type=int, help=f"process count (default ${est.WORKERS_ENV} or 1)")
    i.add_argument("-o", "--output", required=True, help="output path prefix")
    i.set_defaults(func=cmd_infer)

    m = sub.add_parser("metrics", help="structural metrics of an inferred network")
    m.add_argument("network")
    m.add_argument("--ensemble", type=int, default=gm.DEFAULT_ENSEMBLE)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("-o", "--output", required=True)
    m.set_defaults(func=cmd_metrics)

    c = sub.add_parser("compare", help="score an inferred network against ground truth")
    c.add_argument("truth", help="meta JSON with 'adjacency', or adjacency CSV/JSON")
    c.add_argument("inferred", help="network JSON from infer")
    c.set_defaults(func=cmd_compare)

    r = sub.add_parser("rerun", help="repeat a run from its manifest and compare outputs")
    r.add_argument("manifest")
    r.add_argument("-o", "--output", help="output prefix (default: temporary directory)")
    r.set_defaults(func=cmd_rerun)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (dg.DataError, est.EstimationError, inf.InferenceError, gm.GraphError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
