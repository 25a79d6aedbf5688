"""Command-line entry point ``uq``.

    uq run <config> [--output DIR]      run an experiment
    uq validate <config>                check a config without running it
    uq compare <a> <b> [--csv FILE]     compare two run summaries

Exit codes: 0 success, 1 failure inside a stage, 2 invalid configuration.
``UQ_THREADS`` overrides the ``threads`` setting of a config.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path

from .experiment import ConfigError, StageError, bundled_configs, load_config, run_experiment

EXIT_OK, EXIT_DOMAIN, EXIT_CONFIG = 0, 1, 2


def _fmt(v, digits: int = 3) -> str:
    if v is None or (isinstance(v, float) and not math.isfinite(v)):
        return "-"
    return f"{v:.{digits}g}" if isinstance(v, float) else str(v)


def _pf_cell(pf) -> str:
    # zero-failure estimates have no usable value
    return "-" if pf is None or pf == 0 else _fmt(pf)


def _ratio(a, b):
    if a is None or b is None or b == 0:
        return None
    return a / b


def compare_report(a: dict, b: dict, labels: tuple[str, str] = ("a", "b")) -> tuple[str, str]:
    """Side-by-side pf, beta and beta-ratio tables of two run summaries.

    Returns ``(markdown, csv_text)``. Surrogate betas are divided by the
    reference beta of each run; the last columns divide run ``a`` by run
    ``b``. Zero or missing probabilities render as ``-``.
    """
    ra, rb = a.get("reliability"), b.get("reliability")
    if not ra or not rb:
        raise ValueError("both summaries need reliability results")
    ta, tb = ra["thresholds"], rb["thresholds"]
    if len(ta) != len(tb) or any(not math.isclose(x, y, rel_tol=1e-12) for x, y in zip(ta, tb)):
        raise ValueError(f"threshold mismatch: {ta} vs {tb}")

    def series(r, key, field):
        curve = r.get(key)
        return curve[field] if curve else [None] * len(ta)

    la, lb = labels
    cols = []
    for lab, r in ((la, ra), (lb, rb)):
        cols.append((f"{lab} reference", series(r, "reference", "pf"), series(r, "reference", "beta")))
        cols.append((f"{lab} LRA", series(r, "lra", "pf"), series(r, "lra", "beta")))
        cols.append((f"{lab} PCE", series(r, "pce", "pf"), series(r, "pce", "beta")))

    def table(title, header, rows):
        lines = [f"### {title}", "", "| " + " | ".join(header) + " |",
                 "|" + "---|" * len(header)]
        lines += ["| " + " | ".join(r) + " |" for r in rows]
        return "\n".join(lines)

    head = ["threshold"] + [c[0] for c in cols]
    pf_rows = [[_fmt(t)] + [_pf_cell(c[1][i]) for c in cols] for i, t in enumerate(ta)]
    beta_rows = [[_fmt(t)] + [_fmt(c[2][i]) for c in cols] for i, t in enumerate(ta)]

    ratio_head = ["threshold", f"{la} LRA/ref", f"{la} PCE/ref", f"{lb} LRA/ref", f"{lb} PCE/ref",
                  f"LRA {la}/{lb}", f"PCE {la}/{lb}"]
    ratio_rows, records = [], []
    for i, t in enumerate(ta):
        beta = {c[0]: c[2][i] for c in cols}
        pf = {c[0]: c[1][i] for c in cols}
        vals = [_ratio(beta[f"{la} LRA"], beta[f"{la} reference"]),
                _ratio(beta[f"{la} PCE"], beta[f"{la} reference"]),
                _ratio(beta[f"{lb} LRA"], beta[f"{lb} reference"]),
                _ratio(beta[f"{lb} PCE"], beta[f"{lb} reference"]),
                _ratio(beta[f"{la} LRA"], beta[f"{lb} LRA"]),
                _ratio(beta[f"{la} PCE"], beta[f"{lb} PCE"])]
        ratio_rows.append([_fmt(t)] + [_fmt(v, 4) for v in vals])
        rec = {"threshold": t}
        for name in beta:
            rec[f"pf {name}"] = pf[name]
            rec[f"beta {name}"] = beta[name]
        rec.update(dict(zip(ratio_head[1:], vals)))
        records.append(rec)

    md = "\n\n".join([
        f"## {a.get('name', la)} vs {b.get('name', lb)}",
        table("Failure probability", head, pf_rows),
        table("Reliability index", head, beta_rows),
        table("Reliability index ratios", ratio_head, ratio_rows),
    ]) + "\n"
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(records[0]) if records else ["threshold"],
                       lineterminator="\r\n")
    w.writeheader()
    for rec in records:
        w.writerow({k: "" if v is None else (repr(v) if isinstance(v, float) else v)
                    for k, v in rec.items()})
    return md, buf.getvalue()


def _load_summary(ref: str) -> dict:
    p = Path(ref)
    if p.is_dir():
        p = p / "summary.json"
    return json.loads(p.read_text(encoding="utf-8"))


def _cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
        summary = run_experiment(cfg, args.output)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"error in stage {exc.stage}: {exc.cause}", file=sys.stderr)
        return EXIT_DOMAIN
    lra, pce = summary["lra"], summary["pce"]
    print(f"{summary['name']}: LRA rank {lra['rank']} degree {lra['degree']}, "
          f"PCE pt {pce['pt']} q {pce['q']} ({pce['n_terms']} terms)")
    return EXIT_OK


def _cmd_validate(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"{cfg.name}: ok")
    return EXIT_OK


def _cmd_compare(args) -> int:
    try:
        a, b = _load_summary(args.a), _load_summary(args.b)
        md, text = compare_report(a, b, tuple(args.labels))
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"cannot read summaries: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    sys.stdout.write(md)
    if args.csv:
        Path(args.csv).write_text(text, encoding="utf-8", newline="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="uq", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log stage progress")
    sub = p.add_subparsers(dest="command", required=True)
    names = ", ".join(sorted(bundled_configs()))
    r = sub.add_parser("run", help="run an experiment")
    r.add_argument("config", help=f"config file or bundled name ({names})")
    r.add_argument("--output", help="output directory (overrides the config)")
    r.set_defaults(func=_cmd_run)
    v = sub.add_parser("validate", help="validate a config")
    v.add_argument("config")
    v.set_defaults(func=_cmd_validate)
    c = sub.add_parser("compare", help="compare two summaries")
    c.add_argument("a", help="summary.json or run directory")
    c.add_argument("b", help="summary.json or run directory")
    c.add_argument("--csv", help="also write the comparison as CSV")
    c.add_argument("--labels", nargs=2, default=["a", "b"], metavar=("A", "B"))
    c.set_defaults(func=_cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
