"""Command-line front end.

Installed as the `rm` console script (also reachable as `python -m
rm_marl`). Automata-level commands (project, compose, bisim,
check-decomposition) operate on reward machine text files; label-check,
train and evaluate take a shipped domain name or a TOML config path;
plot-data merges aggregate CSVs written by train into a single
long-format table for plotting.

Check-style commands exit 0 when the property holds and 1 when it does
not; usage and input errors exit 2.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
from pathlib import Path

from .algebra import (
    ProjectionError,
    check_decomposition,
    compose_many,
    is_bisimilar,
    project,
)
from .environments import ConfigError, make_domain
from .experiments import (
    TAIL_WINDOW,
    ExperimentSpec,
    LearningCurve,
    desk_config,
    emit_plot_data,
    emit_plot_svg,
    evaluate_snapshot,
    run_experiment,
)
from .labeling import DomainTooLargeError
from .learners import TrainerConfig
from .machine import RMSyntaxError, parse_rm, serialize_rm


def _read_rm(path: str):
    return parse_rm(Path(path).read_text(encoding="utf-8"))


def _write_output(text: str, out: str | None) -> None:
    # "-o -" and no -o both mean stdout; files get LF endings.
    if out is None or out == "-":
        sys.stdout.write(text)
        return
    dest = Path(out)
    dest.parent.mkdir(parents=True, exist_ok=True)
    with open(dest, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _split_events(raw: str) -> list[str]:
    events = [e.strip() for e in raw.split(",") if e.strip()]
    if not events:
        raise ValueError("--events: expected a comma-separated event list")
    return events


def _read_sigma_file(path: str) -> list[tuple[str, ...]]:
    """One line per agent; events separated by commas or whitespace.

    Blank lines and '#' comments are skipped.
    """
    sigmas: list[tuple[str, ...]] = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        sigmas.append(tuple(line.replace(",", " ").split()))
    if not sigmas:
        raise ValueError(f"{path}: no event sets found")
    return sigmas


def _cmd_project(args) -> int:
    rm = _read_rm(args.machine)
    proj = project(rm, _split_events(args.events))
    _write_output(serialize_rm(proj.machine), args.output)
    return 0


def _cmd_compose(args) -> int:
    machines = [_read_rm(p) for p in args.machines]
    _write_output(serialize_rm(compose_many(machines)), args.output)
    return 0


def _cmd_bisim(args) -> int:
    witness = is_bisimilar(_read_rm(args.left), _read_rm(args.right))
    if witness.bisimilar:
        print("bisimilar")
        return 0
    print("not bisimilar")
    if witness.counterexample is not None:
        shown = " ".join(witness.counterexample) or "(empty string)"
        print(f"counterexample: {shown}")
    if witness.note:
        print(f"note: {witness.note}")
    return 1


def _cmd_check_decomposition(args) -> int:
    rm = _read_rm(args.machine)
    report = check_decomposition(rm, _read_sigma_file(args.agent_events))
    print(report.summary())
    return 0 if report.valid else 1


def _cmd_label_check(args) -> int:
    bundle = make_domain(args.domain)
    _, labeling = bundle.certify(max_pairs=args.max_pairs)
    print(labeling.summary())
    return 0 if labeling.ok else 1


def _cmd_train(args) -> int:
    try:
        config = desk_config(args.domain, args.algo, args.seed)
    except ValueError:
        # custom domain files have no shipped budget; start from defaults
        config = TrainerConfig(seed=args.seed)
    if args.steps is not None:
        config = dataclasses.replace(config, total_steps=args.steps)
    if args.test_every is not None:
        config = dataclasses.replace(config, test_every=args.test_every)
    spec = ExperimentSpec(
        domain=args.domain,
        algorithm=args.algo,
        config=config,
        num_runs=args.runs,
        out_dir=args.out,
        snapshots=args.snapshots,
    )
    curve = run_experiment(spec)
    print(
        f"{spec.stem}: {spec.num_runs} runs x {config.total_steps} steps "
        f"(seed {config.seed})"
    )
    for c, m, lo, hi in zip(curve.checkpoints, curve.median, curve.q25, curve.q75):
        print(f"  step {c}: median {m} (q25 {lo}, q75 {hi})")
    print(
        f"converged median over last {TAIL_WINDOW} checkpoints: "
        f"{curve.converged_median()}"
    )
    if spec.out_dir is not None:
        print(f"artifacts written to {spec.out_dir}")
    return 0


def _cmd_evaluate(args) -> int:
    summary = evaluate_snapshot(
        args.snapshot,
        domain=args.domain,
        episodes=args.episodes,
        seed=args.seed,
    )
    print(f"algorithm: {summary['algorithm']}")
    print(f"domain: {summary['domain']}")
    print(f"completed: {summary['completed']}/{summary['episodes']}")
    print(f"median steps: {summary['median_steps']}")
    print(f"quartiles: {summary['q25_steps']} .. {summary['q75_steps']}")
    return 0


def _num(text: str) -> float:
    value = float(text)
    return int(value) if value.is_integer() else value


def _read_aggregate_csv(path: str) -> LearningCurve:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["steps", "median", "q25", "q75"]:
        raise ValueError(f"{path}: expected header steps,median,q25,q75")
    body = [row for row in rows[1:] if row]
    return LearningCurve(
        checkpoints=tuple(int(float(r[0])) for r in body),
        runs=(),
        median=tuple(_num(r[1]) for r in body),
        q25=tuple(_num(r[2]) for r in body),
        q75=tuple(_num(r[3]) for r in body),
    )


def _cmd_plot_data(args) -> int:
    curves: dict[str, LearningCurve] = {}
    for path in args.csvs:
        label = Path(path).stem
        label = label[: -len("_agg")] if label.endswith("_agg") else label
        if label in curves:
            raise ValueError(f"duplicate curve label {label!r} (from {path})")
        curves[label] = _read_aggregate_csv(path)
    _write_output(emit_plot_data(curves), args.output)
    if args.svg is not None:
        _write_output(emit_plot_svg(curves, title=args.title), args.svg)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rm",
        description="Reward machine decomposition and decentralized training.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("project", help="project a machine onto an event subset")
    p.add_argument("machine", help="reward machine file")
    p.add_argument("--events", required=True, help="comma-separated events to keep")
    p.add_argument("-o", "--output", default=None, help="output file (default stdout)")
    p.set_defaults(func=_cmd_project)

    p = sub.add_parser("compose", help="parallel-compose two or more machines")
    p.add_argument("machines", nargs="+", help="reward machine files")
    p.add_argument("-o", "--output", default=None, help="output file (default stdout)")
    p.set_defaults(func=_cmd_compose)

    p = sub.add_parser("bisim", help="test two machines for bisimilarity")
    p.add_argument("left")
    p.add_argument("right")
    p.set_defaults(func=_cmd_bisim)

    p = sub.add_parser(
        "check-decomposition",
        help="project onto per-agent event sets, recompose, compare",
    )
    p.add_argument("machine", help="team reward machine file")
    p.add_argument(
        "--agent-events",
        required=True,
        help="file with one line of events per agent",
    )
    p.set_defaults(func=_cmd_check_decomposition)

    p = sub.add_parser(
        "label-check",
        help="check that a domain's labeling factors through its agents",
    )
    p.add_argument("--domain", required=True, help="shipped name or TOML path")
    p.add_argument(
        "--max-pairs",
        type=int,
        default=10**7,
        help="joint enumeration budget before the factored check is used",
    )
    p.set_defaults(func=_cmd_label_check)

    p = sub.add_parser("train", help="run seeded training runs, write CSV artifacts")
    p.add_argument("--domain", required=True, help="shipped name or TOML path")
    p.add_argument(
        "--algo",
        required=True,
        choices=("dqprm", "iql", "hil", "cqrm"),
        help="training algorithm",
    )
    p.add_argument("--runs", type=int, default=10, help="number of seeded runs")
    p.add_argument("--seed", type=int, default=0, help="base seed")
    p.add_argument("--out", default=None, help="artifact directory")
    p.add_argument(
        "--steps", type=int, default=None, help="override total training steps"
    )
    p.add_argument(
        "--test-every", type=int, default=None, help="override checkpoint spacing"
    )
    p.add_argument(
        "--snapshots",
        action="store_true",
        help="also save each run's q-bank next to its CSV",
    )
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="replay a saved q-bank greedily")
    p.add_argument("--snapshot", required=True, help="q-bank .npz from train")
    p.add_argument(
        "--domain",
        default=None,
        help="shipped name or TOML path (default: the one recorded in the snapshot)",
    )
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser(
        "plot-data", help="merge aggregate CSVs into one long-format table"
    )
    p.add_argument("csvs", nargs="+", help="*_agg.csv files from train")
    p.add_argument("-o", "--output", required=True, help="output CSV ('-' for stdout)")
    p.add_argument("--svg", default=None, help="also render curves to this SVG file")
    p.add_argument("--title", default="", help="title for the SVG rendering")
    p.set_defaults(func=_cmd_plot_data)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (
        RMSyntaxError,
        ProjectionError,
        ConfigError,
        DomainTooLargeError,
        ValueError,
        OSError,
        RuntimeError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
