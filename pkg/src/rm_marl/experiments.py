"""Experiment harness: seeded runs, learning curves, CSV artifacts.

A run trains one fresh runner and records a greedy test result every
test_every training steps (per-agent steps for the decentralized
algorithm, team steps for the joint baselines). Incomplete test episodes
record the horizon (episode_len) as their steps-to-completion. Runs are
independent jobs: each is seeded from (config.seed, run_index), so the
artifacts are byte-identical no matter how many worker processes execute
them (RM_MARL_WORKERS selects the pool size).

The headline statistic for "converged performance" is a tail-window
median: per run, the nearest-rank median of the last five checkpoint
tests; across runs, the nearest-rank median of those. Reading a single
checkpoint instead would inherit the full snapshot-to-snapshot noise of
constant-learning-rate q-tables.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import subprocess
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from . import __version__
from .environments import make_domain
from .learners import (
    ALGORITHMS,
    EpisodeResult,
    TrainerConfig,
    make_runner,
    save_snapshot,
)

__all__ = [
    "DESK_BUDGETS",
    "ExperimentSpec",
    "LearningCurve",
    "desk_config",
    "emit_plot_data",
    "emit_plot_svg",
    "evaluate_snapshot",
    "nearest_rank",
    "run_experiment",
    "worker_count",
]

WORKERS_VAR = "RM_MARL_WORKERS"
TAIL_WINDOW = 5

# Desk-scale budgets: total training steps and test cadence per domain,
# chosen at the measured convergence knees. The decentralized algorithm
# counts per-agent steps; the joint baselines count team steps, and get
# at least 1.67x the per-agent experience.
DESK_BUDGETS: Mapping[str, Mapping[str, tuple[int, int]]] = {
    "buttons": {
        "dqprm": (60_000, 6_000),
        "iql": (100_000, 10_000),
        "hil": (100_000, 10_000),
        "cqrm": (100_000, 10_000),
    },
    "rendezvous-2": {
        "dqprm": (20_000, 2_000),
        "iql": (40_000, 4_000),
        "hil": (40_000, 4_000),
        "cqrm": (40_000, 4_000),
    },
    "rendezvous-10": {
        "dqprm": (60_000, 6_000),
        "iql": (100_000, 10_000),
        "hil": (100_000, 10_000),
        "cqrm": (100_000, 10_000),
    },
}


def desk_config(domain: str, algorithm: str, seed: int = 0) -> TrainerConfig:
    """The shipped desk-scale schedule for a (domain, algorithm) pair."""
    try:
        total, every = DESK_BUDGETS[domain][algorithm]
    except KeyError:
        raise ValueError(
            f"no desk budget for domain {domain!r} and algorithm {algorithm!r}"
        ) from None
    return TrainerConfig(total_steps=total, test_every=every, seed=seed)


def worker_count() -> int:
    raw = os.environ.get(WORKERS_VAR, "1")
    try:
        workers = int(raw)
    except ValueError:
        raise ValueError(f"{WORKERS_VAR} must be an integer, got {raw!r}") from None
    if workers < 1:
        raise ValueError(f"{WORKERS_VAR} must be at least 1, got {workers}")
    return workers


def nearest_rank(values: Sequence[float], p: float) -> float:
    """Nearest-rank percentile: the ceil(p/100 * n)-th smallest value."""
    if not values:
        raise ValueError("percentile of an empty sequence")
    if not 0 < p <= 100:
        raise ValueError("percentile must be in (0, 100]")
    ordered = sorted(values)
    rank = math.ceil(p / 100 * len(ordered))
    return ordered[rank - 1]


@dataclass(frozen=True)
class ExperimentSpec:
    """One experiment: an algorithm on a domain for num_runs seeded runs."""

    domain: str
    algorithm: str
    config: TrainerConfig = field(default_factory=TrainerConfig)
    num_runs: int = 10
    out_dir: Path | None = None
    snapshots: bool = False

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            known = ", ".join(sorted(ALGORITHMS))
            raise ValueError(
                f"unknown algorithm {self.algorithm!r} (known: {known})"
            )
        if self.num_runs < 1:
            raise ValueError("num_runs must be at least 1")
        if self.snapshots and self.out_dir is None:
            raise ValueError("snapshots need an out_dir to be written to")
        if self.out_dir is not None:
            object.__setattr__(self, "out_dir", Path(self.out_dir))

    @property
    def stem(self) -> str:
        return f"{Path(str(self.domain)).stem}_{self.algorithm}"


@dataclass(frozen=True)
class LearningCurve:
    """Per-checkpoint test results for every run, plus quartile bands."""

    checkpoints: tuple[int, ...]
    runs: tuple[tuple[int, ...], ...]
    median: tuple[int, ...]
    q25: tuple[int, ...]
    q75: tuple[int, ...]

    @classmethod
    def aggregate(
        cls, checkpoints: Sequence[int], runs: Sequence[Sequence[int]]
    ) -> "LearningCurve":
        checkpoints = tuple(checkpoints)
        runs = tuple(tuple(r) for r in runs)
        for k, run in enumerate(runs):
            if len(run) != len(checkpoints):
                raise ValueError(
                    f"run {k} has {len(run)} checkpoints, expected "
                    f"{len(checkpoints)}"
                )
        if any(b <= a for a, b in zip(checkpoints, checkpoints[1:])):
            raise ValueError("checkpoint steps must increase")
        columns = list(zip(*runs))
        return cls(
            checkpoints=checkpoints,
            runs=runs,
            median=tuple(nearest_rank(col, 50) for col in columns),
            q25=tuple(nearest_rank(col, 25) for col in columns),
            q75=tuple(nearest_rank(col, 75) for col in columns),
        )

    def converged_per_run(self, window: int = TAIL_WINDOW) -> tuple[int, ...]:
        """Each run's tail-window median over its last `window` checkpoints."""
        return tuple(
            nearest_rank(run[-window:], 50) if run else 0 for run in self.runs
        )

    def converged_median(self, window: int = TAIL_WINDOW) -> float:
        return nearest_rank(self.converged_per_run(window), 50)


def _run_one(
    domain: str,
    algorithm: str,
    config_dict: dict,
    run_index: int,
    snapshot_path: str | None = None,
):
    config = TrainerConfig(**config_dict)
    bundle = make_domain(domain)
    runner = make_runner(algorithm, bundle, config, seed=(config.seed, run_index))
    results: list[int] = []
    for _ in range(config.total_steps // config.test_every):
        runner.run_steps(config.test_every)
        tests = [runner.test_episode() for _ in range(config.test_episodes)]
        results.append(int(nearest_rank([t.steps for t in tests], 50)))
    if snapshot_path is not None:
        save_snapshot(snapshot_path, runner)
    return run_index, results


def _git_version() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=Path(__file__).parent,
            capture_output=True,
            text=True,
            timeout=10,
        )
    except OSError:
        return "unknown"
    return out.stdout.strip() if out.returncode == 0 else "unknown"


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _run_csv(checkpoints: Sequence[int], steps: Sequence[int]) -> str:
    lines = ["steps,steps_to_completion"]
    lines += [f"{c},{s}" for c, s in zip(checkpoints, steps)]
    return "\n".join(lines) + "\n"


def _aggregate_csv(curve: LearningCurve) -> str:
    lines = ["steps,median,q25,q75"]
    lines += [
        f"{c},{m},{lo},{hi}"
        for c, m, lo, hi in zip(curve.checkpoints, curve.median, curve.q25, curve.q75)
    ]
    return "\n".join(lines) + "\n"


def emit_plot_data(curves: Mapping[str, LearningCurve]) -> str:
    """Long-format CSV combining several algorithms' aggregate curves."""
    lines = ["algorithm,steps,median,q25,q75"]
    for name in sorted(curves):
        curve = curves[name]
        lines += [
            f"{name},{c},{m},{lo},{hi}"
            for c, m, lo, hi in zip(
                curve.checkpoints, curve.median, curve.q25, curve.q75
            )
        ]
    return "\n".join(lines) + "\n"


def run_experiment(spec: ExperimentSpec) -> LearningCurve:
    """Run all seeded runs (optionally in parallel) and write artifacts."""
    config = spec.config
    if config.total_steps % config.test_every:
        raise ValueError("total_steps must be a multiple of test_every")
    if spec.algorithm == "dqprm":
        automata, labeling = make_domain(spec.domain).certify()
        if not automata.bisimilar or not labeling.ok:
            raise ValueError(
                f"domain {spec.domain!r} failed decomposition certification"
            )
    checkpoints = tuple(
        (j + 1) * config.test_every
        for j in range(config.total_steps // config.test_every)
    )
    config_dict = dataclasses.asdict(config)
    jobs = range(spec.num_runs)
    snapshot_paths: dict[int, str | None] = {k: None for k in jobs}
    if spec.snapshots:
        spec.out_dir.mkdir(parents=True, exist_ok=True)
        snapshot_paths = {
            k: str(spec.out_dir / f"{spec.stem}_run{k:02d}.npz") for k in jobs
        }
    results: dict[int, list[int]] = {}
    failures: dict[int, str] = {}
    workers = min(worker_count(), spec.num_runs)
    if workers == 1:
        for k in jobs:
            try:
                _, steps = _run_one(
                    str(spec.domain), spec.algorithm, config_dict, k,
                    snapshot_paths[k],
                )
                results[k] = steps
            except Exception as exc:  # noqa: BLE001 - recorded in the manifest
                failures[k] = f"{type(exc).__name__}: {exc}"
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {
                k: pool.submit(
                    _run_one, str(spec.domain), spec.algorithm, config_dict, k,
                    snapshot_paths[k],
                )
                for k in jobs
            }
            for k, fut in futures.items():
                try:
                    results[k] = fut.result()[1]
                except Exception as exc:  # noqa: BLE001
                    failures[k] = f"{type(exc).__name__}: {exc}"
    if not results:
        raise RuntimeError(
            f"every run of {spec.stem} failed; first error: "
            f"{failures[min(failures)]}"
        )
    curve = LearningCurve.aggregate(
        checkpoints, [results[k] for k in sorted(results)]
    )
    if spec.out_dir is not None:
        _write_artifacts(spec, curve, results, failures)
    return curve


def _write_artifacts(
    spec: ExperimentSpec,
    curve: LearningCurve,
    results: Mapping[int, Sequence[int]],
    failures: Mapping[int, str],
) -> None:
    out = spec.out_dir
    files = []
    for k in sorted(results):
        name = f"{spec.stem}_run{k:02d}.csv"
        _write_text(out / name, _run_csv(curve.checkpoints, results[k]))
        files.append(name)
    agg_name = f"{spec.stem}_agg.csv"
    _write_text(out / agg_name, _aggregate_csv(curve))
    files.append(agg_name)
    manifest = {
        "domain": str(spec.domain),
        "algorithm": spec.algorithm,
        "config": dataclasses.asdict(spec.config),
        "num_runs": spec.num_runs,
        "files": files,
        "snapshots": [
            f"{spec.stem}_run{k:02d}.npz" for k in sorted(results)
        ]
        if spec.snapshots
        else [],
        "failures": {str(k): failures[k] for k in sorted(failures)},
        "converged_median": curve.converged_median(),
        "tail_window": TAIL_WINDOW,
        "version": __version__,
        "git": _git_version(),
    }
    _write_text(
        out / f"{spec.stem}_manifest.json",
        json.dumps(manifest, indent=2, sort_keys=True) + "\n",
    )


def evaluate_snapshot(
    snapshot: str | Path,
    *,
    domain: str | None = None,
    episodes: int = 100,
    seed: int = 0,
) -> dict:
    """Replay a saved q-bank greedily and summarize completion behavior."""
    import numpy as np

    from .learners import load_snapshot

    meta, arrays = load_snapshot(snapshot)
    bundle = make_domain(domain if domain is not None else meta["domain"])
    config = TrainerConfig(**meta["config"])
    runner = make_runner(meta["algorithm"], bundle, config, seed=seed)
    runner.load_arrays(arrays)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 1)))
    outcomes: list[EpisodeResult] = [
        runner.test_episode(rng) for _ in range(episodes)
    ]
    steps = [r.steps for r in outcomes]
    return {
        "algorithm": meta["algorithm"],
        "domain": bundle.name,
        "episodes": episodes,
        "completed": sum(r.completed for r in outcomes),
        "median_steps": nearest_rank(steps, 50),
        "q25_steps": nearest_rank(steps, 25),
        "q75_steps": nearest_rank(steps, 75),
    }


def _svg_polyline(xs, ys, sx, sy, style: str) -> str:
    pts = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in zip(xs, ys))
    return f'<polyline fill="none" {style} points="{pts}"/>'


def emit_plot_svg(curves: Mapping[str, LearningCurve], title: str = "") -> str:
    """A small static rendering of median curves with quartile bands."""
    width, height, pad = 640, 400, 46
    colors = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b")
    xs_all = [c for curve in curves.values() for c in curve.checkpoints]
    ys_all = [y for curve in curves.values() for y in curve.q75 + curve.q25]
    x_max = max(xs_all, default=1)
    y_max = max(ys_all, default=1)

    def sx(x):
        return pad + (width - 2 * pad) * x / x_max

    def sy(y):
        return height - pad - (height - 2 * pad) * y / y_max

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" '
        f'y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" '
        f'stroke="black"/>',
    ]
    if title:
        parts.append(
            f'<text x="{width / 2:.0f}" y="20" text-anchor="middle" '
            f'font-size="14">{title}</text>'
        )
    for k, name in enumerate(sorted(curves)):
        curve = curves[name]
        if not curve.checkpoints:
            continue
        color = colors[k % len(colors)]
        band_x = list(curve.checkpoints) + list(reversed(curve.checkpoints))
        band_y = list(curve.q75) + list(reversed(curve.q25))
        pts = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in zip(band_x, band_y))
        parts.append(f'<polygon fill="{color}" opacity="0.15" points="{pts}"/>')
        parts.append(
            _svg_polyline(
                curve.checkpoints,
                curve.median,
                sx,
                sy,
                f'stroke="{color}" stroke-width="2"',
            )
        )
        parts.append(
            f'<text x="{width - pad - 4}" y="{pad + 16 * k + 4}" '
            f'text-anchor="end" font-size="12" fill="{color}">{name}</text>'
        )
    parts.append(
        f'<text x="{width / 2:.0f}" y="{height - 10}" text-anchor="middle" '
        f'font-size="12">training steps</text>'
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
