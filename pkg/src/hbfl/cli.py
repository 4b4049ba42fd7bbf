"""Command-line entry point: ingest, synth, run, report, verify-ledger."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

from . import kernels
from .config import ExperimentConfig, load_config
from .data import CsvSchema, build_endpoints, generate_synthetic, load_netflow_csv, save_endpoints, synthetic_schema
from .errors import HBFLError
from .ledger import load_chain, verify_blocks
from .scenarios import export_report, read_report, run_repeats, summarize, write_plot_data

log = logging.getLogger("hbfl")


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "repeats", None) is not None:
        changes["repeats"] = args.repeats
    if getattr(args, "rounds", None) is not None:
        changes["rounds"] = replace(cfg.rounds, global_rounds=args.rounds)
    data = cfg.data
    if getattr(args, "attack_cap", None) is not None:
        data = replace(data, attack_cap=args.attack_cap)
    if getattr(args, "partitions", None):
        data = replace(data, partitions_dir=args.partitions)
    if getattr(args, "csv", None):
        data = replace(data, csv_path=args.csv)
    if getattr(args, "schema", None):
        data = replace(data, schema_path=args.schema)
    changes["data"] = data
    return cfg.replace(**changes)


def cmd_ingest(args) -> int:
    cfg = _config(args)
    if not cfg.data.csv_path:
        raise HBFLError("ingest needs --csv or data.csv_path in the config")
    schema = CsvSchema.load(cfg.data.schema_path) if cfg.data.schema_path else CsvSchema.nf_bot_iot_v2()
    raw = load_netflow_csv(cfg.data.csv_path, schema, attack_cap=cfg.data.attack_cap, seed=cfg.seed,
                           chunksize=cfg.data.chunksize)
    eps = build_endpoints(raw, cfg.partition, ratio=cfg.data.split_ratio, seed=cfg.seed)
    paths = save_endpoints(eps, args.out)
    print(f"read {raw.rows_read} rows ({raw.malformed} malformed), wrote {len(paths)} partitions to {args.out}")
    return 0


def cmd_synth(args) -> int:
    cfg = _config(args)
    spec = cfg.data.synthetic.spec()
    raw = generate_synthetic(spec, cfg.seed)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    raw.frame.to_csv(args.out, index=False)
    schema_path = os.path.splitext(args.out)[0] + ".schema.yaml"
    synthetic_schema(spec.dim).save(schema_path)
    print(f"wrote {len(raw)} synthetic rows to {args.out} (schema: {schema_path})")
    return 0


def cmd_run(args) -> int:
    cfg = _config(args)
    os.makedirs(args.out, exist_ok=True)
    results = run_repeats(args.scenario, cfg, synthetic=args.synthetic)
    stem = os.path.join(args.out, f"scenario{args.scenario}")
    export_report(results, "csv", stem + ".csv")
    export_report(results, "json", stem + ".json")
    write_plot_data(results, os.path.join(args.out, "plots"))
    for res in results:
        if res.ledger is not None:
            res.ledger.save(f"{stem}_seed{res.seed}.chain")
            res.ledger.export_audit(f"{stem}_seed{res.seed}_audit.jsonl")
        if res.terminated:
            print(f"seed {res.seed}: process terminated by the contract", file=sys.stderr)
    _print_summary(summarize(results), final_only=True)
    print(f"reports in {args.out} (kernels: {kernels.BACKEND})")
    return 0


def _fmt(v) -> str:
    return "   -  " if v is None else f"{v:6.2f}"


def _print_summary(summary: list[dict], final_only: bool = False) -> None:
    if final_only:
        last = {}
        for s in summary:
            k = (s["scenario"], s["class"])
            if k not in last or s["round"] > last[k]["round"]:
                last[k] = s
        summary = [last[k] for k in sorted(last)]
    print(f"{'scn':>3} {'round':>5} {'class':<15} {'acc':>6} {'dr':>6} {'far':>6} {'f1':>6}  runs")
    for s in summary:
        print(f"{s['scenario']:>3} {s['round']:>5} {s['class']:<15} "
              f"{_fmt(s['accuracy_mean'])} {_fmt(s['dr_mean'])} {_fmt(s['far_mean'])} {_fmt(s['f1_mean'])}  {s['runs']}")


def cmd_report(args) -> int:
    rows = []
    for path in args.reports:
        rows.extend(read_report(path))
    if not rows:
        raise HBFLError("reports contain no rows")
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault((r["scenario"], r["round"], r["class"]), []).append(r)
    summary = []
    for (scn, rnd, cls), rs in sorted(groups.items()):
        entry = {"scenario": scn, "round": rnd, "class": cls, "runs": len(rs)}
        for m in ("accuracy", "dr", "far", "f1"):
            vals = [r[m] for r in rs if r[m] is not None]
            entry[f"{m}_mean"] = sum(vals) / len(vals) if vals else None
        summary.append(entry)
    if args.json:
        json.dump(summary, sys.stdout, indent=1)
        print()
    else:
        _print_summary(summary, final_only=not args.all_rounds)
    return 0


def cmd_verify(args) -> int:
    blocks = load_chain(args.chain)
    admin = bytes.fromhex(args.admin_key) if args.admin_key else None
    verdict = verify_blocks(blocks, admin)
    print(verdict)
    return 0 if verdict else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hbfl", description="Hierarchical blockchain-based federated learning simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="YAML experiment config")
        sp.add_argument("--seed", type=int)

    sp = sub.add_parser("ingest", help="CSV -> cached per-endpoint partitions")
    common(sp)
    sp.add_argument("--csv", help="NetFlow CSV (overrides data.csv_path)")
    sp.add_argument("--schema", help="column schema YAML (default: bundled NF-BoT-IoT-v2 layout)")
    sp.add_argument("--attack-cap", type=int)
    sp.add_argument("--out", required=True, help="directory for the .npz partitions")
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("synth", help="write a synthetic five-class dataset as CSV plus its schema")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("run", help="run a scenario and export per-round reports")
    common(sp)
    sp.add_argument("--scenario", type=int, choices=(1, 2, 3), required=True)
    sp.add_argument("--rounds", type=int)
    sp.add_argument("--repeats", type=int)
    sp.add_argument("--synthetic", action="store_true", help="use generated data instead of the CSV")
    sp.add_argument("--attack-cap", type=int)
    sp.add_argument("--csv")
    sp.add_argument("--schema")
    sp.add_argument("--partitions", help="directory written by `hbfl ingest`")
    sp.add_argument("--out", default="results")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("report", help="summarise exported CSV/JSON reports")
    sp.add_argument("reports", nargs="+")
    sp.add_argument("--all-rounds", action="store_true")
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("verify-ledger", help="re-verify a saved chain file")
    sp.add_argument("chain")
    sp.add_argument("--admin-key", help="expected admin public key (hex)")
    sp.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (HBFLError, OSError) as exc:
        print(f"hbfl: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
