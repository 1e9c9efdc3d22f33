"""Command-line entry point: ``redundancy-lab {analyze,simulate,selftest}``.

Exit codes: 0 success, 1 usage error, 2 data or coverage error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys
import tempfile
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import ingest, report
from .ablate import full_report, run_ablation, world_category_scheme
from .config import BUNDLED_CONFIGS, build_model, load_config
from .core import NumericalError, RedundancyLabError
from .metrics import CUR_RULES, DEFAULT_CUR_RULE
from .oracle import compare, random_table
from .simkit import FUSION_STRATEGIES
from .train import grad_check, toy_problem, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def write_outputs(out_dir: str | Path, files: dict[str, str]) -> None:
    """Write every file to a temp name first, then rename them all into place."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    staged: list[tuple[str, Path]] = []
    try:
        for name, text in sorted(files.items()):
            fd, tmp = tempfile.mkstemp(prefix=f".{name}.", suffix=".tmp", dir=out)
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            staged.append((tmp, out / name))
        for tmp, dest in staged:
            os.replace(tmp, dest)
    except BaseException:
        for tmp, _ in staged:
            if os.path.exists(tmp):
                os.unlink(tmp)
        raise


def _report_files(table, scheme, args) -> dict[str, str]:
    rep = full_report(table, scheme, rule=args.cur_rule, epsilon=args.epsilon, relative=args.relative)
    return report.render(rep, args.format)


def cmd_analyze(args) -> int:
    table = ingest.load_score_table(args.scores)
    scheme = None
    if args.categories is not None:
        scheme = ingest.load_category_scheme(args.categories)
    elif table.granularity == "per-benchmark":
        scheme = ingest.default_category_scheme()
    write_outputs(args.out, _report_files(table, scheme, args))
    print(f"wrote report for {table.model_name} ({table.n} encoders) to {args.out}")
    return EXIT_OK


def _loss_csv(losses: Sequence[float], batch_losses: Sequence[float]) -> str:
    lines = [ingest.FORMAT_TAG, "step,loss,batch_loss"]
    lines += [f"{i + 1},{a!r},{b!r}" for i, (a, b) in enumerate(zip(losses, batch_losses))]
    return "\n".join(lines) + "\n"


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    world, model = build_model(cfg)
    result = train(model, world, cfg.train)
    table = run_ablation(result.model, world, cfg.eval_samples, cfg.seed, model_name=f"{cfg.name}-seed{cfg.seed}")
    scheme = world_category_scheme(world)
    files = _report_files(table, scheme, args)
    files["scores.csv"] = ingest.format_score_table(table)
    files["categories.csv"] = ingest.format_category_scheme(scheme)
    files["loss.csv"] = _loss_csv(result.losses, result.batch_losses)
    write_outputs(args.out, files)
    print(f"trained {cfg.name} (seed {cfg.seed}, final loss {result.losses[-1]:.4f}); wrote {args.out}"
          if result.losses else f"wrote {args.out}")
    return EXIT_OK


def _check_gradients(tol: float) -> list[tuple[str, bool, str]]:
    out = []
    for strategy in FUSION_STRATEGIES:
        model, batch, active = toy_problem(strategy)
        r = grad_check(model, batch, tolerance=tol, active=active)
        out.append((f"gradient {strategy}", r.passed,
                    f"max rel error {r.max_rel_error:.2e} at {r.worst_param}{list(r.worst_index)} "
                    f"over {r.checked} parameters (tolerance {tol:g})"))
    return out


def _check_fixtures(directory: str | None) -> list[tuple[str, bool, str]]:
    out = []
    for name, digest in ingest.FIXTURE_DIGESTS.items():
        path = Path(directory) / name if directory else ingest.fixture_path(name)
        try:
            table = ingest.load_score_table(path)
            text = ingest.format_score_table(table)
            with tempfile.TemporaryDirectory() as tmp:
                copy = Path(tmp) / name
                copy.write_text(text, encoding="utf-8")
                again = ingest.load_score_table(copy)
        except RedundancyLabError as exc:
            out.append((f"fixture {name}", False, f"cannot load: {exc}"))
            continue
        problems = []
        if not table.is_complete:
            problems.append(f"incomplete ({table.coverage()['present_subsets']}/{1 << table.n} subsets)")
        if again.entries != table.entries or again.encoder_names != table.encoder_names:
            problems.append("round trip changed the table")
        if ingest.table_digest(table) != digest:
            problems.append("content digest mismatch (values differ from the bundled table)")
        detail = "; ".join(problems) or f"{len(table.entries)} entries, round trip and digest ok"
        out.append((f"fixture {name}", not problems, detail))
    return out


def _check_oracle(seed: int = 0, tables_per_size: int = 5) -> list[tuple[str, bool, str]]:
    rng = np.random.default_rng(seed)
    out = []
    for rule in CUR_RULES:
        bad: list[str] = []
        count = 0
        for n in range(1, 5):
            for _ in range(tables_per_size):
                table = random_table(n, rng)
                bad += compare(full_report(table, rule=rule), table)
                count += 1
        out.append((f"oracle {rule}", not bad, f"{count} random tables, n=1..4" if not bad else bad[0]))
    return out


def cmd_selftest(args) -> int:
    checks: list[Callable[[], list[tuple[str, bool, str]]]] = [
        lambda: _check_gradients(args.grad_tol),
        lambda: _check_fixtures(args.fixtures),
        lambda: _check_oracle(),
    ]
    failed = 0
    for check in checks:
        for name, ok, detail in check():
            failed += not ok
            print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    print(f"{'all checks passed' if not failed else f'{failed} check(s) failed'}")
    return EXIT_OK if not failed else EXIT_DATA


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="redundancy-lab", description="Encoder-masking analysis for multi-encoder models.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def report_flags(p):
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--format", choices=("md", "csv", "all"), default="all")
        p.add_argument("--cur-rule", choices=CUR_RULES, default=DEFAULT_CUR_RULE,
                       help="how CUR is aggregated below the full encoder count")
        p.add_argument("--epsilon", type=float, default=0.0, help="redundancy tolerance (score points)")
        p.add_argument("--relative", action="store_true", help="read --epsilon as a fraction of the baseline")

    p = sub.add_parser("analyze", help="report on a score table")
    p.add_argument("--scores", required=True)
    p.add_argument("--categories", help="category scheme file (per-benchmark tables)")
    report_flags(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("simulate", help="train a simulated model, mask every subset, report")
    p.add_argument("--config", required=True, help=f"config file or bundled name {BUNDLED_CONFIGS}")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    report_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("selftest", help="gradient checks, fixture integrity, oracle equivalence")
    p.add_argument("--grad-tol", type=float, default=1e-3)
    p.add_argument("--fixtures", help="directory with fixture files to check instead of the bundled ones")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except RedundancyLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
