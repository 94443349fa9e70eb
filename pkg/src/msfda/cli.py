"""Command-line entry point: ``msfda <command> --config run.ini [--seed N] [--out DIR]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import traceback
from pathlib import Path

import numpy as np

from . import theory
from .atomic import atomic_write_text
from .config import COMMANDS, RunConfig, format_config, parse_config, with_overrides
from .data import generate_multi_source, load_csv, pretrain_source, write_csv
from .engine import adapt, evaluate
from .errors import MsfdaError, ValidationError
from .export import export_embeddings
from .models import SourceModel
from .pseudo import domain_weights, read_partition, write_partition

log = logging.getLogger("msfda")


def _dumps(record: dict) -> str:
    return json.dumps(record, sort_keys=True, allow_nan=False, default=_json_default)


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(type(obj).__name__)


def _jsonable_float(x: float):
    if x != x:
        return "nan"
    if x in (float("inf"), float("-inf")):
        return "inf" if x > 0 else "-inf"
    return x


# -- file locations ----------------------------------------------------------------


def _source_csv(cfg: RunConfig, name: str) -> Path:
    return cfg.data_dir / f"{name}.csv"


def _target_csv(cfg: RunConfig) -> Path:
    return cfg.data_dir / f"{cfg.target_id}.csv"


def _model_dir(cfg: RunConfig) -> Path:
    """Where evaluate/export read models from."""
    if cfg.run.models == "pretrained":
        return cfg.checkpoint_dir
    if cfg.run.models == "adapted":
        return cfg.adapted_dir
    adapted = [cfg.adapted_dir / f"{s}.ckpt" for s in cfg.source_ids]
    return cfg.adapted_dir if all(p.is_file() for p in adapted) else cfg.checkpoint_dir


def _required_inputs(cfg: RunConfig) -> list[Path]:
    cmd = cfg.run.command
    if cmd == "pretrain":
        return [_source_csv(cfg, s) for s in cfg.source_ids]
    if cmd == "adapt":
        return [cfg.checkpoint_dir / f"{s}.ckpt" for s in cfg.source_ids] + [_target_csv(cfg)]
    if cmd in ("evaluate", "export-embeddings"):
        return [_model_dir(cfg) / f"{s}.ckpt" for s in cfg.source_ids] + [_target_csv(cfg)]
    return []


def _load_models(directory: Path, cfg: RunConfig) -> list[SourceModel]:
    return [SourceModel.load(directory / f"{s}.ckpt") for s in cfg.source_ids]


def _load_target(cfg: RunConfig):
    return load_csv(_target_csv(cfg), labels_as_truth=True)


# -- commands ------------------------------------------------------------------------


def cmd_generate(cfg: RunConfig) -> dict:
    sources, target = generate_multi_source(cfg.domain_specs(), cfg.run.seed)
    for ds in sources:
        write_csv(ds, _source_csv(cfg, ds.domain))
    write_csv(target, _target_csv(cfg))
    return {"sources": [s.domain for s in sources], "target": target.domain, "samples": target.n}


def cmd_pretrain(cfg: RunConfig) -> dict:
    accuracy = {}
    for name in cfg.source_ids:
        ds = load_csv(_source_csv(cfg, name))
        model = pretrain_source(ds, cfg.architecture(), cfg.pretrain_config(), cfg.run.seed)
        model.save(cfg.checkpoint_dir / f"{name}.ckpt")
        accuracy[name] = float(np.mean(np.argmax(model.predict_proba(ds.features), axis=1) == ds.labels))
    return {"train_accuracy": accuracy}


def cmd_adapt(cfg: RunConfig) -> dict:
    models = _load_models(cfg.checkpoint_dir, cfg)
    target = _load_target(cfg)
    lines: list[str] = []
    result = adapt(models, target, cfg.adaptation_config(), sink=lambda rec: lines.append(_dumps(rec)))
    for m in result.models:
        m.save(cfg.adapted_dir / f"{m.domain}.ckpt")
    atomic_write_text(cfg.out / "metrics.jsonl", "".join(line + "\n" for line in lines))
    atomic_write_text(
        cfg.out / "weights.json",
        _dumps({m.domain: float(w) for m, w in zip(result.models, result.weights)}) + "\n",
    )
    write_partition(result.partition, cfg.out / "partition.csv")
    summary = {
        "iterations": len(result.metrics),
        "weights": [float(w) for w in result.weights],
        "n_labeled": int(result.partition.labeled.size),
        "n_unlabeled": int(result.partition.unlabeled.size),
    }
    if target.has_truth:
        summary["source_ensemble_accuracy"] = evaluate(models, result.weights, target)
        summary["final_accuracy"] = evaluate(result.models, result.weights, target)
    atomic_write_text(cfg.out / "summary.json", _dumps(summary) + "\n")
    return summary


def _weights_for(cfg: RunConfig, models: list[SourceModel], target) -> np.ndarray:
    path = cfg.out / "weights.json"
    if path.is_file():
        stored = json.loads(path.read_text())
        if set(stored) == {m.domain for m in models}:
            return np.array([stored[m.domain] for m in models])
    return domain_weights(models, target.features)


def cmd_evaluate(cfg: RunConfig) -> dict:
    directory = _model_dir(cfg)
    models = _load_models(directory, cfg)
    target = _load_target(cfg)
    weights = _weights_for(cfg, models, target)
    record = {
        "models": "adapted" if directory == cfg.adapted_dir else "pretrained",
        "weights": [float(w) for w in weights],
        "accuracy": evaluate(models, weights, target),
        "per_model": {m.domain: evaluate([m], np.array([1.0]), target) for m in models},
    }
    atomic_write_text(cfg.out / "evaluation.json", _dumps(record) + "\n")
    return record


def theory_records(cfg: RunConfig) -> list[dict]:
    """Bias sweep, selective/unselective contrast, variance decay and majority vote."""
    t, seed = cfg.theory, cfg.run.seed
    records = []
    for i in range(t.instances):
        rng = np.random.default_rng([seed, i])
        x = int(rng.integers(1, t.max_x + 1))
        k = int(rng.integers(2, t.max_k + 1))
        pt, pl = theory.random_joint_pair(rng, x, k)
        rep = theory.bias_bound_check(pt, pl, rng=rng)
        digest = theory.joint_digest(pt, pl)
        records.append({
            "operation": "bias_bound_check",
            "instance": digest,
            "values": {
                "x": x, "k": k, "kl": _jsonable_float(rep.kl), "bound": _jsonable_float(rep.bound),
                "max_gap": rep.max_gap, "max_violation": _jsonable_float(rep.max_violation),
                "checked": rep.checked, "exhaustive": rep.exhaustive, "trivial": rep.trivial,
            },
            "pass": rep.passed,
        })

    rng = np.random.default_rng([seed, 10**6])
    inst = theory.random_instance(rng, min(6, t.max_x), min(3, t.max_k), n_sources=3)
    # break one input outside the region so the unselective bias is infinite
    outside = np.flatnonzero(~inst.region)
    if outside.size:
        x0 = outside[0]
        inst.target[x0] = 0.0
        inst.target[x0, 0] = 1.0
        inst.sources[0, x0] = 0.0
        inst.sources[0, x0, 1] = 1.0
    unsel = theory.unselective_bias(inst, 0)
    sel, term = theory.selective_bias(inst, 0)
    direct = theory.kl_joint(theory.restricted_joint(inst, 0), inst.target_joint())
    records.append({
        "operation": "selective_vs_unselective",
        "instance": inst.digest(),
        "values": {"unselective": _jsonable_float(unsel), "selective": sel, "bound_term": term, "kl_direct": direct},
        "pass": bool((unsel == float("inf") or not outside.size) and abs(sel - direct) <= 1e-9),
    })

    pl = theory.restricted_joint(inst, 0)
    ref = np.zeros(inst.x_size, dtype=np.int64)
    table = theory.variance_decay_sim(pl, list(t.variance_grid), t.variance_trials, seed, hypothesis=ref)
    grid = sorted(table)
    ratios = [table[b] / table[a] if table[a] > 0 else 0.0 for a, b in zip(grid, grid[1:])]
    records.append({
        "operation": "variance_decay_sim",
        "instance": inst.digest(),
        "values": {"q95": {str(n): table[n] for n in grid}, "ratios": ratios},
        "pass": bool(table[grid[-1]] < table[grid[0]]),
    })

    frac, cov = theory.majority_vote_check(inst)
    records.append({
        "operation": "majority_vote_check",
        "instance": inst.digest(),
        "values": {"fraction": _jsonable_float(frac), "coverage": cov},
        "pass": True,
    })
    return records


def cmd_theory(cfg: RunConfig) -> dict:
    records = theory_records(cfg)
    atomic_write_text(cfg.out / "theory-report.jsonl", "".join(_dumps(r) + "\n" for r in records))
    bias = [r for r in records if r["operation"] == "bias_bound_check"]
    violations = sum(not r["pass"] for r in bias)
    summary = {"bias_instances": len(bias), "violations": violations,
               "all_pass": all(r["pass"] for r in records)}
    if not summary["all_pass"]:
        raise ValidationError(f"theory checks failed: {violations} bias violations")
    return summary


def cmd_export_embeddings(cfg: RunConfig) -> dict:
    models = _load_models(_model_dir(cfg), cfg)
    target = _load_target(cfg)
    part_path = cfg.out / "partition.csv"
    part = read_partition(part_path) if part_path.is_file() else None
    if part is not None and part.n != target.n:
        raise ValidationError("partition file does not match the target set")
    export_embeddings(models, target, cfg.out / "embeddings.csv", part)
    return {"rows": target.n * len(models)}


HANDLERS = {
    "generate": cmd_generate,
    "pretrain": cmd_pretrain,
    "adapt": cmd_adapt,
    "evaluate": cmd_evaluate,
    "theory": cmd_theory,
    "export-embeddings": cmd_export_embeddings,
}


def _provenance(exc: BaseException) -> str:
    module = "msfda"
    for frame in traceback.extract_tb(exc.__traceback__):
        parts = Path(frame.filename).parts
        if "msfda" in parts:
            module = "msfda." + Path(frame.filename).stem
    return module


def run(cfg: RunConfig) -> int:
    """Execute one command; returns the process exit status."""
    missing = [str(p) for p in _required_inputs(cfg) if not p.is_file()]
    if missing:
        _report_failure(cfg, ValidationError(f"missing inputs: {', '.join(missing)}"), "msfda.cli")
        return 2
    try:
        result = HANDLERS[cfg.run.command](cfg)
    except (MsfdaError, OSError, ValueError) as exc:
        _report_failure(cfg, exc, _provenance(exc))
        return 1
    atomic_write_text(cfg.out / "effective-config", format_config(cfg))
    print(_dumps({"status": "ok", "command": cfg.run.command, "result": result}))
    return 0


def _report_failure(cfg: RunConfig | None, exc: BaseException, module: str) -> None:
    record = {"status": "error", "module": module, "error": type(exc).__name__, "message": str(exc)}
    if cfg is not None:
        record["command"] = cfg.run.command
    print(_dumps(record), file=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="msfda", description=__doc__)
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="INI-style run configuration")
    parser.add_argument("--seed", type=int, help="overrides run.seed")
    parser.add_argument("--out", help="overrides run.out")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = with_overrides(parse_config(args.config), args.command, args.seed, args.out)
    except MsfdaError as exc:
        _report_failure(None, exc, "msfda.config")
        return 2
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
