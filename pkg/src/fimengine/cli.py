"""``fim`` command line: mine, bench, gen, inspect.

Exit codes: 0 success, 1 I/O error, 2 usage error, 3 verification failure.

Bench grid config (INI)::

    [bench]
    minsups = 0.001, 0.003
    algorithms = mr_apriori, pfp
    backends = sequential, batch, inmemory, pipelined
    partitions = 4
    workers = 4
    trials = 3
    verify = true
    warmup = false
    groups = 8              ; optional, PFP group count

    [dataset:foodmart]
    path = foodmart.txt     ; relative to the config file

    [dataset:t10i4]
    transactions = 100000   ; synthetic: keys mirror the ``gen`` flags
    items = 870
    avg_len = 10
    avg_pattern_len = 4
    patterns = 1000
    seed = 0
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys

from . import bench
from .datasets import (ConfigurationError, ParseError, SyntheticParams, absolute_minsup, generate_synthetic,
                       read_spmf, summarize, write_spmf)
from .mapreduce import Backend, BackendKind, default_workers

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_VERIFY = 0, 1, 2, 3

ALGO_NAMES = {"apriori": "apriori", "fpgrowth": "fpgrowth", "mr-apriori": "mr_apriori", "pfp": "pfp",
              "mr_apriori": "mr_apriori"}
SYNTH_KEYS = {"transactions": "num_transactions", "items": "num_items", "avg_len": "avg_transaction_len",
              "avg_pattern_len": "avg_pattern_len", "patterns": "num_patterns", "seed": "seed"}


class UsageError(Exception):
    pass


def _workers_default():
    env = os.environ.get("FIM_WORKERS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise UsageError(f"FIM_WORKERS must be an integer, got {env!r}") from None
        if n < 1:
            raise UsageError("FIM_WORKERS must be >= 1")
        return n
    return default_workers()


def _fraction(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 < v <= 1.0:
        raise argparse.ArgumentTypeError(f"minsup must be in (0, 1], got {text}")
    return v


def _positive(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _nonneg(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _csv_list(text):
    return [x.strip() for x in text.split(",") if x.strip()]


def build_parser():
    p = argparse.ArgumentParser(prog="fim", description="Frequent itemset mining engine")
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("mine", help="mine frequent itemsets from an SPMF file")
    m.add_argument("--input", required=True)
    m.add_argument("--minsup", required=True, type=_fraction, help="relative minimum support in (0, 1]")
    m.add_argument("--algo", default="fpgrowth", choices=["apriori", "fpgrowth", "mr-apriori", "pfp"])
    m.add_argument("--backend", default="sequential", choices=[k.value for k in BackendKind])
    m.add_argument("--partitions", type=_positive, default=None, help="default: worker count")
    m.add_argument("--workers", type=_positive, default=None, help="default: $FIM_WORKERS or CPU count")
    m.add_argument("--groups", type=_positive, default=None, help="PFP group count (default 2 x workers)")
    m.add_argument("--output", default=None, help="default: stdout")
    m.add_argument("--format", default="text", choices=["text", "csv", "json-lines"])
    m.add_argument("--spill-dir", default=None)

    b = sub.add_parser("bench", help="run a benchmark grid")
    b.add_argument("--config", default=None, help="INI grid config (see module docs)")
    b.add_argument("--dataset", action="append", default=[], metavar="NAME=PATH",
                   help="dataset file; repeatable")
    b.add_argument("--minsups", type=_csv_list, default=None)
    b.add_argument("--algorithms", type=_csv_list, default=None)
    b.add_argument("--backends", type=_csv_list, default=None)
    b.add_argument("--partitions", type=_positive, default=None)
    b.add_argument("--workers", type=_positive, default=None)
    b.add_argument("--trials", type=_positive, default=None)
    b.add_argument("--groups", type=_positive, default=None)
    b.add_argument("--verify", action="store_true", default=None)
    b.add_argument("--warmup", action="store_true", default=None)
    b.add_argument("--spill-dir", default=None)
    b.add_argument("--csv-out", default=None, help="default: stdout")
    b.add_argument("--svg-out", default=None)
    b.add_argument("--group-by", default="backend", choices=["backend", "algorithm"])

    g = sub.add_parser("gen", help="generate a synthetic SPMF dataset")
    d = SyntheticParams()
    g.add_argument("--transactions", type=_nonneg, default=d.num_transactions)
    g.add_argument("--items", type=_positive, default=d.num_items)
    g.add_argument("--avg-len", type=_positive, default=d.avg_transaction_len)
    g.add_argument("--avg-pattern-len", type=_positive, default=d.avg_pattern_len)
    g.add_argument("--patterns", type=_positive, default=d.num_patterns)
    g.add_argument("--seed", type=_nonneg, default=d.seed)
    g.add_argument("--output", required=True)

    i = sub.add_parser("inspect", help="summarize an SPMF file")
    i.add_argument("--input", required=True)
    return p


# --------------------------------------------------------------------------
# output formatting

def ordered_itemsets(frequent, dictionary):
    """(tokens, support) sorted by length, then lexicographically by numeric token."""
    rows = []
    for itemset, sup in frequent.items():
        toks = sorted((dictionary.token(i) for i in itemset), key=int)
        rows.append((len(toks), [int(t) for t in toks], toks, sup))
    rows.sort(key=lambda r: (r[0], r[1]))
    return [(toks, sup) for _, _, toks, sup in rows]


def format_itemsets(frequent, dictionary, fmt="text") -> str:
    rows = ordered_itemsets(frequent, dictionary)
    if fmt == "text":
        return "".join(f"{' '.join(t)} #SUP: {s}\n" for t, s in rows)
    if fmt == "csv":
        return "items,support\n" + "".join(f"{' '.join(t)},{s}\n" for t, s in rows)
    if fmt == "json-lines":
        return "".join(json.dumps({"items": [int(x) for x in t], "support": s}) + "\n" for t, s in rows)
    raise UsageError(f"unknown format {fmt!r}")


def _write(path, text):
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


# --------------------------------------------------------------------------
# subcommands

def cmd_mine(args):
    workers = args.workers or _workers_default()
    db = read_spmf(args.input)
    if len(db) == 0:
        _write(args.output, format_itemsets({}, db.dictionary, args.format))
        return EXIT_OK
    s = absolute_minsup(args.minsup, len(db))
    backend = Backend(args.backend, workers=workers, spill_dir=args.spill_dir)
    partitions = args.partitions or workers
    result = bench.run_miner(ALGO_NAMES[args.algo], db, s, backend, partitions, args.groups)
    _write(args.output, format_itemsets(result.frequent, db.dictionary, args.format))
    return EXIT_OK


def _synthetic_from(section):
    kw = {}
    for key, field_name in SYNTH_KEYS.items():
        if key in section:
            kw[field_name] = section.getint(key)
    return SyntheticParams(**kw)


def load_config(path) -> bench.BenchConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    with open(path, encoding="utf-8") as fh:
        cp.read_file(fh)
    if "bench" not in cp:
        raise UsageError(f"{path}: missing [bench] section")
    base = os.path.dirname(os.path.abspath(path))
    sec = cp["bench"]
    datasets = []
    for name in cp.sections():
        if not name.startswith("dataset:"):
            continue
        ds = cp[name]
        label = name.split(":", 1)[1].strip()
        if "path" in ds:
            datasets.append(bench.DatasetSpec(label, path=os.path.join(base, ds["path"])))
        else:
            datasets.append(bench.DatasetSpec(label, synthetic=_synthetic_from(ds)))
    try:
        cfg = bench.BenchConfig(
            datasets=datasets,
            minsups=[float(x) for x in _csv_list(sec.get("minsups", ""))],
            algorithms=[ALGO_NAMES.get(a, a) for a in _csv_list(sec.get("algorithms", "apriori, fpgrowth"))],
            backends=_csv_list(sec.get("backends", "sequential")),
            partitions=sec.getint("partitions", 4),
            workers=sec.getint("workers", _workers_default()),
            trials=sec.getint("trials", 3),
            verify=sec.getboolean("verify", False),
            warmup=sec.getboolean("warmup", False),
            groups=sec.getint("groups") if "groups" in sec else None,
            spill_dir=sec.get("spill_dir"),
        )
    except ValueError as e:
        raise UsageError(f"{path}: {e}") from None
    return cfg


def _bench_config(args) -> bench.BenchConfig:
    cfg = load_config(args.config) if args.config else bench.BenchConfig(
        datasets=[], minsups=[], workers=_workers_default())
    for spec in args.dataset:
        name, sep, path = spec.partition("=")
        if not sep:
            name, path = os.path.splitext(os.path.basename(spec))[0], spec
        cfg.datasets.append(bench.DatasetSpec(name, path=path))
    if args.minsups is not None:
        try:
            cfg.minsups = [float(x) for x in args.minsups]
        except ValueError as e:
            raise UsageError(str(e)) from None
    if args.algorithms is not None:
        cfg.algorithms = [ALGO_NAMES.get(a, a) for a in args.algorithms]
    for attr in ("backends", "partitions", "workers", "trials", "groups", "verify", "warmup", "spill_dir"):
        v = getattr(args, attr)
        if v is not None:
            setattr(cfg, attr, v)
    for m in cfg.minsups:
        if not 0.0 < m <= 1.0:
            raise UsageError(f"minsup must be in (0, 1], got {m}")
    try:
        cfg.validate()
    except ValueError as e:
        raise UsageError(str(e)) from None
    return cfg


def cmd_bench(args):
    cfg = _bench_config(args)
    try:
        records = bench.run_benchmark(cfg)
    except bench.VerificationError as e:
        print(f"fim: {e}", file=sys.stderr)
        return EXIT_VERIFY
    for err in records.errors:
        print(f"fim: dataset {err.dataset}: {err.message}", file=sys.stderr)
    _write(args.csv_out, bench.emit_csv(records))
    if args.svg_out and records:
        _write(args.svg_out, bench.emit_svg_chart(records, args.group_by))
    return EXIT_IO if records.errors else EXIT_OK


def cmd_gen(args):
    params = SyntheticParams(num_transactions=args.transactions, num_items=args.items,
                             avg_transaction_len=args.avg_len, avg_pattern_len=args.avg_pattern_len,
                             num_patterns=args.patterns, seed=args.seed)
    try:
        params.validate()
    except ConfigurationError as e:
        raise UsageError(str(e)) from None
    _write(args.output, write_spmf(generate_synthetic(params)))
    return EXIT_OK


def format_summary(info) -> str:
    if info["transactions"] == 0:
        return f"0 transactions, {info['items']} items"
    return (f"{info['transactions']} transactions, {info['items']} items, "
            f"len min {info['len_min']} mean {info['len_mean']:g} max {info['len_max']}")


def cmd_inspect(args):
    print(format_summary(summarize(read_spmf(args.input))))
    return EXIT_OK


COMMANDS = {"mine": cmd_mine, "bench": cmd_bench, "gen": cmd_gen, "inspect": cmd_inspect}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"fim: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ParseError as e:
        print(f"fim: {e}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, configparser.Error) as e:
        # bad parameters surfaced after flag parsing
        print(f"fim: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"fim: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
