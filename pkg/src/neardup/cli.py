"""Command-line driver.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 missing
prerequisite stage.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import re
import sys
from dataclasses import fields
from pathlib import Path

from . import pipeline, synthetic
from .errors import ConfigError, NearDupError

# flag name -> RunConfig field
FLAG_FIELDS = {
    "input": "inputs",
    "workspace": "workspace",
    "hashes": "num_hashes",
    "bands": "bands",
    "rows": "rows",
    "shingle-len": "shingle_len",
    "unit": "unit",
    "threshold": "threshold",
    "bucket-scale": "bucket_scale",
    "min-chars": "min_chars",
    "seed": "seed",
    "workers": "workers",
    "memory-budget": "memory_budget",
    "buckets-per-pass": "buckets_per_pass",
    "text-field": "text_field",
    "tile": "tile",
}

_SIZE_RE = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*([kmgt]?)i?b?\s*$", re.IGNORECASE)


def parse_size(text: str) -> int:
    """Byte count from ``"1048576"``, ``"512M"``, ``"2GiB"`` and the like (binary units)."""
    m = _SIZE_RE.match(str(text))
    if not m:
        raise ConfigError(f"cannot parse size {text!r}")
    scale = {"": 1, "k": 1 << 10, "m": 1 << 20, "g": 1 << 30, "t": 1 << 40}[m.group(2).lower()]
    return int(float(m.group(1)) * scale)


def _convert(name: str, value):
    if name == "inputs":
        return value if isinstance(value, list) else [v for v in re.split(r"[,\s]+", value) if v]
    if name == "memory_budget":
        return parse_size(value)
    if name in ("num_hashes", "bands", "rows", "shingle_len", "min_chars", "workers", "buckets_per_pass", "tile"):
        try:
            return int(value)
        except ValueError:
            raise ConfigError(f"{name} must be an integer, got {value!r}") from None
    if name == "seed":
        return int(value, 0) if isinstance(value, str) else int(value)
    return value


def read_config_file(path: str) -> dict:
    """``key = value`` lines; keys are flag names (``shingle-len``) or field names."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from exc
    try:
        parser.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config file {path}: {exc}") from exc
    known = {f.name for f in fields(pipeline.RunConfig)}
    out = {}
    for key, value in parser["run"].items():
        name = FLAG_FIELDS.get(key, key.replace("-", "_"))
        if name not in known:
            raise ConfigError(f"unknown config key {key!r} in {path}")
        out[name] = _convert(name, value)
    return out


def build_config(args) -> pipeline.RunConfig:
    values = read_config_file(args.config) if getattr(args, "config", None) else {}
    for flag, name in FLAG_FIELDS.items():
        v = getattr(args, flag.replace("-", "_"), None)
        if v is not None:
            values[name] = _convert(name, v)
    try:
        return pipeline.RunConfig(**values)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file; flags override it")
    p.add_argument("--input", nargs="+", help="input JSONL files")
    p.add_argument("--workspace", help="directory for intermediate and final artifacts")
    p.add_argument("--hashes", type=int, help="hash functions H (default 128)")
    p.add_argument("--bands", type=int, help="bands b (default 16)")
    p.add_argument("--rows", type=int, help="rows per band r (default 8)")
    p.add_argument("--shingle-len", type=int, help="window length in units (default 5)")
    p.add_argument("--unit", choices=("byte", "codepoint"), help="window unit (default byte)")
    p.add_argument("--threshold", help="similarity threshold, strict (default 0.8)")
    p.add_argument("--bucket-scale", help="bucket count is ceil(scale * sqrt(N)) (default 2)")
    p.add_argument("--min-chars", type=int, help="drop documents shorter than this (default 200)")
    p.add_argument("--seed", help="hash family seed")
    p.add_argument("--workers", type=int, help="worker processes (default 1)")
    p.add_argument("--memory-budget", help="gather memory budget across workers, e.g. 4G (default 2G)")
    p.add_argument("--buckets-per-pass", type=int, help="override C, the buckets gathered per scan pass")
    p.add_argument("--text-field", help="JSON field holding the text (default 'text')")
    p.add_argument("--tile", type=int, help="comparison tile size (default 32)")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="neardup", description="MinHash LSH near-duplicate detection for JSONL corpora.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
        ("dedup", "run hash, gather-compare and union"),
        ("hash", "stage 1: signatures and bucket ids"),
        ("gather-compare", "stage 2: gather buckets and compare signatures"),
        ("union", "stage 3: union graph and report"),
    ):
        _add_run_flags(sub.add_parser(name, help=help_text))

    p = sub.add_parser("eval-accuracy", help="compare the pipeline with all-pairs MinHash")
    _add_run_flags(p)
    p.add_argument("--allow-large", action="store_true", help="lift the oracle's corpus size guard")

    p = sub.add_parser("bench", help="per-stage timings for several worker counts")
    _add_run_flags(p)
    p.add_argument("--worker-list", default="1", help="comma-separated worker counts, e.g. 1,2,4,8")

    p = sub.add_parser("gen-synthetic", help="write a corpus with planted near-duplicate groups")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--docs", type=int, default=10_000)
    p.add_argument("--groups", type=int, default=1_000)
    p.add_argument("--group-size", default="2", help="N or MIN-MAX members per group")
    p.add_argument("--edit-rate", type=float, default=synthetic.SyntheticSpec.edit_rate)
    p.add_argument("--length", default="300-700", help="base text length range in characters")
    p.add_argument("--files", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _range(text: str) -> tuple[int, int]:
    lo, _, hi = text.partition("-")
    try:
        return int(lo), int(hi or lo)
    except ValueError:
        raise ConfigError(f"bad range {text!r}") from None


def _print_table(rows: list[dict], columns: list[str]) -> None:
    widths = [max(len(c), *(len(f"{r[c]:.3f}" if isinstance(r[c], float) else str(r[c])) for r in rows)) for c in columns]
    print("  ".join(c.rjust(w) for c, w in zip(columns, widths)))
    for r in rows:
        cells = [f"{r[c]:.3f}" if isinstance(r[c], float) else str(r[c]) for c in columns]
        print("  ".join(v.rjust(w) for v, w in zip(cells, widths)))


def run(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    cmd = args.command
    if cmd == "gen-synthetic":
        spec = synthetic.SyntheticSpec(
            num_docs=args.docs,
            num_groups=args.groups,
            group_size=_range(args.group_size),
            edit_rate=args.edit_rate,
            length=_range(args.length),
            seed=args.seed,
            num_files=args.files,
        )
        print(json.dumps(synthetic.write_synthetic(spec, args.out), indent=2))
        return 0

    config = build_config(args)
    if cmd == "dedup":
        report = pipeline.run_dedup(config)
        print(json.dumps(report.summary(), indent=2, sort_keys=True))
    elif cmd in pipeline.STAGES:
        out = pipeline.run_stage(cmd, config)
        print(json.dumps(out.summary() if hasattr(out, "summary") else out, indent=2, sort_keys=True, default=str))
    elif cmd == "eval-accuracy":
        result = pipeline.eval_accuracy(config, allow_large=args.allow_large)
        print(json.dumps(result, indent=2))
    elif cmd == "bench":
        counts = [int(w) for w in args.worker_list.split(",") if w.strip()]
        if not counts or min(counts) < 1:
            raise ConfigError(f"bad worker list {args.worker_list!r}")
        rows = pipeline.bench(config, counts)
        _print_table(rows, ["workers", "hash_seconds", "compare_seconds", "union_seconds", "total_seconds", "speedup"])
    return 0


def main(argv=None) -> int:
    try:
        return run(argv)
    except NearDupError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
