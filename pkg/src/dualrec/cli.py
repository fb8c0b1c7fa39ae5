"""Command-line experiment runner: ``synth``, ``run``, ``ablate`` and ``report``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from collections import defaultdict
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .coordinator import LLMCoordinator, LLMEndpoint, RuleBasedCoordinator, scripted_transport
from .dataio import Dataset, SyntheticConfig, generate_synthetic, load_dataset, write_dataset
from .domain import SECONDS_PER_DAY, ConstraintThresholds
from .engine import MODES, EngineConfig, run, write_trace_csv
from .metrics import report

log = logging.getLogger("dualrec")

METRIC_COLUMNS = [
    "mode", "seed", "hv", "ndcg", "diversity", "diversity_set_mean",
    "feasibility", "population_feasibility", "feasible", "evaluations",
]
ABLATION_COLUMNS = ["parameter", "setting", "hv", "ndcg", "diversity", "feasible", "time_s"]
ABLATION_GRID = [
    ("Population", "50", {"population_total": 50}),
    ("Population", "100 (default)", {"population_total": 100}),
    ("Population", "200", {"population_total": 200}),
    ("Mutation", "0.05", {"mutation_rate": 0.05}),
    ("Mutation", "0.1 (default)", {"mutation_rate": 0.1}),
    ("Mutation", "0.2", {"mutation_rate": 0.2}),
    ("Constraints", "Strict (theta=0.7)", {"theta_fair": 0.7}),
    ("Constraints", "Normal (theta=0.6)", {"theta_fair": 0.6}),
    ("Constraints", "Relaxed (theta=0.5)", {"theta_fair": 0.5}),
    ("Generations", "20", {"t_max": 20}),
    ("Generations", "50 (default)", {"t_max": 50}),
    ("Generations", "100", {"t_max": 100}),
]
_ENGINE_FIELDS = {f.name for f in fields(EngineConfig)}


@dataclass
class RunSpec:
    engine: dict = field(default_factory=dict)
    thresholds: dict = field(default_factory=dict)
    llm: dict = field(default_factory=dict)
    dataset: dict | None = None
    synthetic: dict | None = None
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    modes: list[str] = field(default_factory=lambda: list(MODES))
    users: int = 1
    single_population_total: int = 200

    @classmethod
    def load(cls, path) -> "RunSpec":
        raw = json.loads(Path(path).read_text(encoding="utf-8")) if path else {}
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known - {"trials"}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        trials = raw.pop("trials", None)
        spec = cls(**raw)
        if trials is not None and "seeds" not in raw:
            spec.seeds = list(range(trials))
        if trials is not None and trials != len(spec.seeds):
            raise ValueError(f"trials={trials} but {len(spec.seeds)} seeds given")
        spec.validate()
        return spec

    def validate(self):
        if not self.seeds:
            raise ValueError("at least one trial (seed) is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")
        bad = [m for m in self.modes if m not in MODES]
        if bad:
            raise ValueError(f"unknown modes {bad}")
        bad = set(self.engine) - _ENGINE_FIELDS - {"mode", "rng_seed"}
        if bad:
            raise ValueError(f"unknown engine keys {sorted(bad)}")
        if self.users < 1:
            raise ValueError("users must be >= 1")

    def resolve_dataset(self) -> Dataset:
        if self.dataset:
            d = self.dataset
            return load_dataset(d["catalog"], d["interactions"], d.get("embeddings"), d.get("holdout_len", 3))
        return generate_synthetic(SyntheticConfig(**(self.synthetic or {})))

    def engine_config(self, mode: str, seed: int, **overrides) -> EngineConfig:
        values = {k: v for k, v in self.engine.items() if k not in ("mode", "rng_seed")}
        if mode == "single-population":
            values["population_total"] = self.single_population_total
        values.update(overrides)
        return EngineConfig(mode=mode, rng_seed=seed, **values)

    def thresholds_for(self, dataset: Dataset, **overrides) -> ConstraintThresholds:
        values = dict(self.thresholds)
        if "recency_window_days" in values:
            values["recency_window"] = values.pop("recency_window_days") * SECONDS_PER_DAY
        values.setdefault("now", dataset.now)
        values.update(overrides)
        return ConstraintThresholds(**values)


def make_coordinator(spec: RunSpec, use_llm: bool, mock_script: str | None):
    if mock_script:
        responses = json.loads(Path(mock_script).read_text(encoding="utf-8"))
        if not isinstance(responses, list) or not responses:
            raise ValueError("mock LLM script must be a non-empty JSON list")
        return LLMCoordinator(LLMEndpoint(**spec.llm), transport=scripted_transport(responses))
    if use_llm:
        return LLMCoordinator(LLMEndpoint.from_env(**spec.llm))
    return RuleBasedCoordinator()


def _trial(spec, dataset, mode, seed, coordinator, trace_dir=None, gnuplot=False, threshold_overrides=None,
           engine_overrides=None):
    """Run one (mode, seed) over the configured users and average their metrics."""
    thresholds = spec.thresholds_for(dataset, **(threshold_overrides or {}))
    rows, ok, evaluations = [], True, 0
    for u_idx, user in enumerate(dataset.users[: spec.users]):
        config = spec.engine_config(mode, seed * 1000 + u_idx, **(engine_overrides or {}))
        result = run(config, user, dataset.catalog, thresholds, coordinator)
        evaluations += result.evaluations
        ok &= result.success
        if not result.success:
            log.warning("%s seed %s user %s: %s", mode, seed, user.user_id, result.diagnostic)
        rows.append(report(result, user, k=config.k))
        if trace_dir is not None:
            name = f"{mode}_seed{seed}_{user.user_id}"
            write_trace_csv(result.trace, Path(trace_dir) / f"{name}.csv")
            if gnuplot:
                write_trace_csv(result.trace, Path(trace_dir) / f"{name}.dat", gnuplot=True)
    mean = {k: float(np.mean([getattr(r, k) for r in rows])) for k in asdict(rows[0])}
    return mean, ok, evaluations


def _fmt(v):
    return f"{v:.6f}" if isinstance(v, float) else v


def _write_rows(path: Path, columns, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])


def _mean_rows(rows: Sequence[dict]) -> list[dict]:
    groups = defaultdict(list)
    for r in rows:
        groups[r["mode"]].append(r)
    out = []
    for mode, group in groups.items():
        row = {"mode": mode, "seed": "mean"}
        for c in METRIC_COLUMNS[2:]:
            if c == "feasible":
                row[c] = all(str(g[c]) in ("True", "1", "true") for g in group)
            elif c == "evaluations":
                row[c] = int(round(np.mean([float(g[c]) for g in group])))
            else:
                row[c] = float(np.mean([float(g[c]) for g in group]))
        out.append(row)
    return out


def cmd_synth(args) -> int:
    raw = json.loads(Path(args.config).read_text(encoding="utf-8")) if args.config else {}
    cfg = SyntheticConfig(**raw.get("synthetic", raw))
    dataset = generate_synthetic(cfg)
    paths = write_dataset(dataset, args.out_dir)
    recent = sum(dataset.now - r.listed_at <= cfg.recency_window_days * SECONDS_PER_DAY for r in dataset.records)
    print("items,categories,sellers,users,interactions,recent_items")
    print(
        f"{len(dataset.records)},{len({r.primary_category for r in dataset.records})},"
        f"{len({r.seller_id for r in dataset.records})},{len(dataset.users)},{len(dataset.interactions)},{recent}"
    )
    for name, path in paths.items():
        log.info("wrote %s to %s", name, path)
    return 0


def _apply_overrides(spec: RunSpec, args):
    if getattr(args, "seeds", None):
        spec.seeds = [int(s) for s in args.seeds.split(",")]
    if getattr(args, "modes", None):
        spec.modes = args.modes.split(",")
    spec.validate()


def cmd_run(args) -> int:
    spec = RunSpec.load(args.config)
    _apply_overrides(spec, args)
    dataset = spec.resolve_dataset()
    coordinator = make_coordinator(spec, args.llm, args.mock_llm)
    out = Path(args.out_dir)
    rows, timings, all_ok = [], [], True
    for mode in spec.modes:
        for seed in spec.seeds:
            start = time.perf_counter()
            m, ok, evals = _trial(spec, dataset, mode, seed, coordinator, out / "traces", args.gnuplot)
            timings.append({"mode": mode, "seed": seed, "time_s": time.perf_counter() - start})
            rows.append({
                "mode": mode, "seed": seed, "hv": m["hypervolume"], "ndcg": m["ndcg_at_k"],
                "diversity": m["diversity"], "diversity_set_mean": m["diversity_set_mean"],
                "feasibility": m["feasibility_rate"], "population_feasibility": m["population_feasibility"],
                "feasible": ok, "evaluations": evals,
            })
            if mode != "no-constraints":
                all_ok &= ok
    _write_rows(out / "metrics.csv", METRIC_COLUMNS, rows + _mean_rows(rows))
    _write_rows(out / "timing.csv", ["mode", "seed", "time_s"], timings)
    _print_table(_mean_rows(rows), ["mode", "hv", "ndcg", "diversity", "feasibility"])
    return 0 if all_ok else 1


def cmd_ablate(args) -> int:
    spec = RunSpec.load(args.config)
    _apply_overrides(spec, args)
    dataset = spec.resolve_dataset()
    coordinator = make_coordinator(spec, args.llm, args.mock_llm)
    grid = list(ABLATION_GRID)
    if args.with_baselines:
        grid += [("Baseline", m, {"mode": m}) for m in MODES if m != "dual"]
    rows, all_ok = [], True
    for parameter, setting, overrides in grid:
        overrides = dict(overrides)
        mode = overrides.pop("mode", "dual")
        th = {k: overrides.pop(k) for k in list(overrides) if k.startswith("theta_")}
        if "t_max" in overrides:
            interval = spec.engine.get("coordination_interval", 10)
            overrides["coordination_interval"] = min(interval, overrides["t_max"])
        start = time.perf_counter()
        trials = [
            _trial(spec, dataset, mode, seed, coordinator, threshold_overrides=th, engine_overrides=overrides)
            for seed in spec.seeds
        ]
        elapsed = (time.perf_counter() - start) / len(trials)
        ok = all(t[1] for t in trials)
        if mode != "no-constraints":
            all_ok &= ok
        rows.append({
            "parameter": parameter, "setting": setting,
            "hv": float(np.mean([t[0]["hypervolume"] for t in trials])),
            "ndcg": float(np.mean([t[0]["ndcg_at_k"] for t in trials])),
            "diversity": float(np.mean([t[0]["diversity"] for t in trials])),
            "feasible": ok, "time_s": elapsed,
        })
    _write_rows(Path(args.out_dir) / "ablation.csv", ABLATION_COLUMNS, rows)
    _print_table(rows, ABLATION_COLUMNS)
    return 0 if all_ok else 1


def cmd_report(args) -> int:
    rows = []
    for path in args.inputs:
        with open(path, newline="", encoding="utf-8") as fh:
            rows += [r for r in csv.DictReader(fh) if r["seed"] != "mean"]
    if not rows:
        print("no trial rows found", file=sys.stderr)
        return 1
    means = _mean_rows(rows)
    if args.out:
        _write_rows(Path(args.out), METRIC_COLUMNS, means)
    _print_table(means, ["mode", "hv", "ndcg", "diversity", "feasibility"])
    return 0


def _print_table(rows, columns):
    print("\t".join(columns))
    for r in rows:
        print("\t".join(str(_fmt(r[c])) for c in columns))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dualrec", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--config", help="JSON file with synthetic generator settings")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    for name, func, help_ in (
        ("run", cmd_run, "run modes x seeds and write metrics and traces"),
        ("ablate", cmd_ablate, "run the one-at-a-time hyperparameter grid"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON run spec")
        p.add_argument("--out-dir", required=True)
        p.add_argument("--seeds", help="comma-separated seed list (overrides config)")
        p.add_argument("--modes", help=f"comma-separated subset of {','.join(MODES)}")
        p.add_argument("--llm", action="store_true", help="use the live chat-completion endpoint")
        p.add_argument("--mock-llm", metavar="SCRIPT", help="JSON list of canned coordinator replies")
        p.add_argument("--gnuplot", action="store_true", help="also write whitespace-separated trace files")
        p.set_defaults(func=func)
    sub.choices["ablate"].add_argument("--with-baselines", action="store_true")

    p = sub.add_parser("report", help="re-aggregate existing metrics CSVs")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
