"""``symrd`` command line: gen-data, train, eval, verify, compare.

Exit codes: 0 success, 1 usage, 2 config, 3 verification failure, 4 I/O.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import statistics
import subprocess
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from filelock import FileLock, Timeout

import symrd
from symrd import evaluation, verification
from symrd.instances import DatasetFormatError, InvalidSizeError, Task, file_hash, generate, load, save
from symrd.policy import load_checkpoint, save_checkpoint
from symrd.training import STREAMS, ConfigError, TrainConfig, TrainHistory, substream, train

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_VERIFY, EXIT_IO = 0, 1, 2, 3, 4

CSV_VERSION = 1
CSV_MAGIC = f"# symrd-history version={CSV_VERSION}"
CSV_COLUMNS = ["method", "task", "N", "seed", "K", "val_cost", "l1_gap", "ssd_loss", "wall_ms"]
SUMMARY_COLUMNS = ["method", "K", "n_seeds", "val_cost_mean", "val_cost_std", "l1_gap_mean", "l1_gap_std"]
# keys accepted in a config file besides the TrainConfig fields
RUN_KEYS = ("val_path",)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# Config files


def _coerce(name: str, raw: str):
    default = {f.name: f.default for f in dataclasses.fields(TrainConfig)}[name]
    raw = raw.strip()
    try:
        if name == "milestones":
            return tuple(float(x) for x in raw.split(",") if x.strip())
        if name == "distill_scaler":
            return None if raw.lower() in ("", "none", "default") else float(raw)
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc
    return raw


def parse_config(text: str) -> tuple[dict, dict]:
    """Split ``key = value`` lines into TrainConfig fields and run options."""
    known = set(TrainConfig.field_names())
    cfg, run = {}, {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (x.strip() for x in line.split("=", 1))
        if key in known:
            cfg[key] = _coerce(key, value)
        elif key in RUN_KEYS:
            run[key] = value
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    return cfg, run


def format_config(config: TrainConfig, run: dict | None = None) -> str:
    lines = []
    for k, v in config.to_dict().items():
        if isinstance(v, (list, tuple)):
            v = ",".join(repr(float(x)) for x in v)
        lines.append(f"{k} = {v}")
    for k, v in (run or {}).items():
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


def load_config(path, overrides: dict | None = None) -> tuple[TrainConfig, dict]:
    cfg, run = parse_config(Path(path).read_text(encoding="utf-8"))
    cfg.update(overrides or {})
    try:
        return TrainConfig(**cfg), run
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# CSV and manifests


def write_history_csv(path, config: TrainConfig, history: TrainHistory) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(CSV_MAGIC + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in history.records:
            w.writerow(
                [config.method, config.task, config.N, config.seed, r.K]
                + [repr(float(x)) for x in (r.val_cost, r.l1_gap, r.ssd_loss)]
                + [f"{r.wall_ms:.3f}"]
            )


def read_history_csv(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().rstrip("\n")
        if first != CSV_MAGIC:
            raise DatasetFormatError(f"{path}: not a version {CSV_VERSION} history file")
        rows = list(csv.DictReader(fh))
    if rows and list(rows[0]) != CSV_COLUMNS:
        raise DatasetFormatError(f"{path}: unexpected columns")
    out = []
    for r in rows:
        out.append(
            {
                "method": r["method"],
                "task": r["task"],
                "N": int(r["N"]),
                "seed": int(r["seed"]),
                "K": int(r["K"]),
                "val_cost": float(r["val_cost"]),
                "l1_gap": float(r["l1_gap"]),
                "ssd_loss": float(r["ssd_loss"]),
                "wall_ms": float(r["wall_ms"]),
            }
        )
    return out


def version_string() -> str:
    try:
        git = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if git.returncode == 0 and git.stdout.strip():
            return f"{symrd.__version__}+{git.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return symrd.__version__


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def write_manifest(path, **fields) -> None:
    body = {"version": version_string(), **fields}
    Path(path).write_text(json.dumps(body, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")


def _seed_info(seed: int) -> dict:
    # record the first draw of each named stream so a rerun can be checked against it
    return {"seed": seed, "streams": {name: int(substream(seed, name).integers(2**32)) for name in STREAMS}}


# ---------------------------------------------------------------------------
# Commands


def cmd_gen_data(args) -> int:
    if args.count < 1:
        raise UsageError("count must be >= 1")
    options = {}
    if args.capacity is not None:
        options["capacity"] = args.capacity
    if args.stages is not None:
        options["stages"] = args.stages
    if args.machines is not None:
        options["machines"] = args.machines
    started = _now()
    ds = generate(args.task, args.N, args.count, args.seed, **options)
    out = Path(args.out)
    digest = save(ds, out)
    write_manifest(
        str(out) + ".manifest.json",
        command="gen-data",
        task=ds.task.value,
        N=ds.size,
        count=args.count,
        seed=args.seed,
        options=options,
        dataset_sha256=digest,
        started=started,
        finished=_now(),
        outputs=[str(out)],
    )
    print(f"{out} sha256={digest}")
    return EXIT_OK


def _overrides(args) -> dict:
    out = {}
    for name in TrainConfig.field_names():
        raw = getattr(args, f"cfg_{name}", None)
        if raw is not None:
            out[name] = _coerce(name, raw)
    return out


def _run_training(config: TrainConfig, run: dict, out_dir: Path, checkpoints: bool) -> dict:
    val = None
    hashes = {}
    if run.get("val_path"):
        val = load(run["val_path"])
        hashes[run["val_path"]] = file_hash(run["val_path"])
    ckpt_dir = out_dir / "checkpoints"

    def on_record(rec, params):
        if checkpoints:
            ckpt_dir.mkdir(exist_ok=True)
            save_checkpoint(params, ckpt_dir / f"K{rec.K:09d}.npz")

    started = _now()
    res = train(config, val, on_record=on_record)
    csv_path = out_dir / "history.csv"
    write_history_csv(csv_path, config, res.history)
    final = out_dir / "policy.npz"
    save_checkpoint(res.params, final)
    (out_dir / "config.txt").write_text(format_config(config, run), encoding="utf-8")
    outputs = [str(csv_path), str(final), str(out_dir / "config.txt")]
    if checkpoints:
        outputs.append(str(ckpt_dir))
    write_manifest(
        out_dir / "manifest.json",
        command="train",
        config=config.to_dict(),
        run=run,
        seeds=_seed_info(config.seed),
        dataset_hashes=hashes,
        reward_calls=res.ledger.calls,
        started=started,
        finished=_now(),
        outputs=outputs,
    )
    return {"history": res.history, "ledger": res.ledger.calls}


def _locked(out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    return FileLock(str(out_dir / ".lock"), timeout=0)


def cmd_train(args) -> int:
    config, run = load_config(args.config, _overrides(args))
    out_dir = Path(args.out_dir)
    try:
        with _locked(out_dir):
            info = _run_training(config, run, out_dir, args.checkpoints)
    except Timeout:
        print(f"error: {out_dir} is in use by another run", file=sys.stderr)
        return EXIT_IO
    print(f"trained {config.method} on {config.task} N={config.N}: {info['ledger']} reward calls, "
          f"{len(info['history'].records)} records -> {out_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    params = load_checkpoint(args.checkpoint)
    ds = load(args.data)
    if ds.task is not params.task:
        raise ConfigError("checkpoint and dataset tasks differ")
    metrics = {"val_cost": evaluation.validate_cost(params, ds)}
    if args.l1_samples > 0:
        rng = np.random.default_rng(args.seed)
        metrics["l1_gap"] = evaluation.l1_symmetry_gap(params, ds, args.l1_samples, rng)
    if args.optimality_gap:
        metrics["optimality_gap"] = evaluation.optimality_gap(params, ds)
    records = [
        dataclasses.asdict(evaluation.MetricRecord(k, args.K, v, len(ds.instances), args.seed))
        for k, v in metrics.items()
    ]
    text = json.dumps(records, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
        write_manifest(
            str(args.out) + ".manifest.json",
            command="eval",
            checkpoint=str(args.checkpoint),
            dataset_hashes={str(args.data): file_hash(args.data)},
            seed=args.seed,
            finished=_now(),
            outputs=[str(args.out)],
        )
    print(text)
    return EXIT_OK


def cmd_verify(args) -> int:
    if args.trials < 1:
        raise UsageError("trials must be >= 1")
    transform = verification.corrupt_transform if args.corrupt_transform else verification.sample_symmetric
    results = verification.run_all(args.task, args.N, args.trials, args.seed, transform)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.ok]
    print(f"{len(results) - len(failed)}/{len(results)} suites passed")
    return EXIT_VERIFY if failed else EXIT_OK


def summarize(runs: dict[str, list[TrainHistory]]) -> list[dict]:
    """Mean and sample standard deviation (n-1) of each metric per K."""
    grids = {tuple(h.K) for hs in runs.values() for h in hs}
    if len(grids) != 1:
        raise ConfigError("runs were recorded on different K grids; budgets are not comparable")
    rows = []
    for method, hs in runs.items():
        for i, K in enumerate(hs[0].K):
            vc = [h.records[i].val_cost for h in hs]
            l1 = [h.records[i].l1_gap for h in hs]
            rows.append(
                {
                    "method": method,
                    "K": K,
                    "n_seeds": len(hs),
                    "val_cost_mean": statistics.fmean(vc),
                    "val_cost_std": statistics.stdev(vc) if len(vc) > 1 else 0.0,
                    "l1_gap_mean": statistics.fmean(l1),
                    "l1_gap_std": statistics.stdev(l1) if len(l1) > 1 and not any(map(math.isnan, l1)) else float("nan"),
                }
            )
    return rows


def cmd_compare(args) -> int:
    paths = sorted(Path(args.config_dir).glob("*.cfg"))
    if len(paths) < 2:
        raise UsageError(f"need at least two *.cfg files in {args.config_dir}")
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    if not seeds:
        raise UsageError("no seeds given")
    runs: dict[str, list[TrainHistory]] = {}
    started = _now()
    for path in paths:
        for seed in seeds:
            config, run = load_config(path, {"seed": seed})
            val = load(run["val_path"]) if run.get("val_path") else None
            runs.setdefault(path.stem, []).append(train(config, val).history)
            print(f"{path.stem} seed={seed} done", flush=True)
    rows = summarize(runs)
    out = Path(args.out)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# symrd-summary version={CSV_VERSION}\n")
        w = csv.DictWriter(fh, SUMMARY_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    write_manifest(
        str(out) + ".manifest.json",
        command="compare",
        configs={p.stem: p.read_text(encoding="utf-8") for p in paths},
        seeds=seeds,
        std="sample (n-1)",
        started=started,
        finished=_now(),
        outputs=[str(out)],
    )
    print(f"wrote {len(rows)} rows to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point


def _task(value: str) -> str:
    try:
        return Task.parse(value).value
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="symrd", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate and save a dataset")
    g.add_argument("--task", type=_task, required=True)
    g.add_argument("--N", type=int, required=True)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--capacity", type=int)
    g.add_argument("--stages", type=int)
    g.add_argument("--machines", type=int)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one configuration")
    t.add_argument("--config", required=True)
    t.add_argument("--out-dir", required=True)
    t.add_argument("--checkpoints", action="store_true", help="save params at every recorded grid point")
    for name in TrainConfig.field_names():
        t.add_argument(f"--{name}", dest=f"cfg_{name}", metavar="VALUE")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--l1-samples", type=int, default=10)
    e.add_argument("--optimality-gap", action="store_true")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--K", type=int, default=0, help="budget at which the checkpoint was taken")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("verify", help="run the property suites")
    v.add_argument("--task", type=_task, required=True)
    v.add_argument("--N", type=int, default=6)
    v.add_argument("--trials", type=int, default=20)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--corrupt-transform", action="store_true", help=argparse.SUPPRESS)
    v.set_defaults(func=cmd_verify)

    c = sub.add_parser("compare", help="train every config in a directory over several seeds")
    c.add_argument("--config-dir", required=True)
    c.add_argument("--seeds", default="0,1,2,3")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, InvalidSizeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, DatasetFormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
