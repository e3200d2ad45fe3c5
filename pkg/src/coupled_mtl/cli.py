"""Command-line entry point: ``coupled-mtl <command> ...``.

Failures print a single ``error: <kind>: <message>`` line on stderr and exit
with status 1.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .data import dumps_schema, gen_synthetic, load_dataset, load_schema, save_dataset
from .errors import ConfigError, CoupledMTLError
from .harness.config import default_suite_config, load_config
from .harness.suite import SUITE_MODES, run_suite
from .harness.train import dump_predictions, evaluate, train, write_run
from .metrics import metrics_rows, write_metrics_csv
from .model import load_checkpoint
from .relatedness import dump_relatedness, infer_relatedness


def _write(path, text):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _config(args):
    return load_config(args.config) if args.config else default_suite_config()


def cmd_gen_synth(args):
    cfg = _config(args)
    synth = cfg.data.synth
    if synth is None:
        raise ConfigError("gen-synth needs a [synth] section")
    spec = synth.true_relatedness()
    splits = gen_synthetic(synth, spec)
    os.makedirs(args.out, exist_ok=True)
    for name, ds in splits.items():
        if len(ds):
            save_dataset(os.path.join(args.out, f"{name}.csv"), ds)
    _write(os.path.join(args.out, "schema.ini"), dumps_schema(splits["test"].schema))
    _write(os.path.join(args.out, "relatedness.rel"), dump_relatedness(spec))
    _write(os.path.join(args.out, "synth.ini"), synth.to_ini())
    print(f"wrote {', '.join(n for n, d in splits.items() if len(d))} to {args.out}")


def _schema_for(data_path, schema_path):
    if not schema_path:
        schema_path = os.path.join(os.path.dirname(os.path.abspath(data_path)), "schema.ini")
        if not os.path.exists(schema_path):
            raise ConfigError("no --schema given and no schema.ini next to the data file")
    return load_schema(schema_path)


def cmd_infer_rel(args):
    schema = _schema_for(args.data, args.schema)
    spec = infer_relatedness(load_dataset(args.data, schema))
    _write(args.out, dump_relatedness(spec))
    print(f"wrote {args.out}")


def cmd_train(args):
    cfg = _config(args)
    if args.mode:
        cfg = cfg.with_(mode=args.mode)
    if args.seed is not None:
        cfg = cfg.with_(seed=args.seed)
    result = train(cfg)
    paths = write_run(result, args.out)
    sys.stdout.write(write_metrics_csv(metrics_rows(cfg.name(), cfg.mode, cfg.seed, result.metrics)))
    print(f"wrote {', '.join(sorted(paths))} to {args.out}", file=sys.stderr)


def cmd_eval(args):
    params, _, meta = load_checkpoint(args.checkpoint)
    schema = _schema_for(args.data, args.schema)
    ds = load_dataset(args.data, schema)
    metrics = evaluate(params, ds)
    run_id = meta.get("run_id", os.path.basename(args.checkpoint))
    sys.stdout.write(write_metrics_csv(metrics_rows(run_id, meta.get("mode", ""), meta.get("seed", ""), metrics)))
    if args.predictions:
        _write(args.predictions, dump_predictions(params, ds))


def cmd_suite(args):
    cfg = _config(args)
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    result = run_suite(cfg, modes, args.seeds, args.out)
    sys.stdout.write(result.render())
    failed = [r for r in result.runs.values() if not r.ok]
    if failed:
        print(f"{len(failed)} run(s) failed; see {os.path.join(args.out, 'failures.txt')}", file=sys.stderr)


CONFIG_HELP = "INI experiment config (default: the bundled synthetic benchmark)"


def build_parser():
    p = argparse.ArgumentParser(prog="coupled-mtl", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synth", help="write synthetic splits, schema and true relatedness")
    g.add_argument("--config", help=CONFIG_HELP)
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(func=cmd_gen_synth)

    r = sub.add_parser("infer-rel", help="estimate relatedness from a jointly annotated CSV")
    r.add_argument("--data", required=True)
    r.add_argument("--schema", default="")
    r.add_argument("--out", required=True, help="output .rel file")
    r.set_defaults(func=cmd_infer_rel)

    t = sub.add_parser("train", help="train one run and write its log, metrics and checkpoint")
    t.add_argument("--config", help=CONFIG_HELP)
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--mode", choices=SUITE_MODES[:5], help="override the configured mode")
    t.add_argument("--seed", type=int, help="override the configured seed")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on a dataset CSV")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--schema", default="")
    e.add_argument("--predictions", default="", help="also dump per-sample probabilities here")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("suite", help="run several modes over several seeds and compare")
    s.add_argument("--config", help=CONFIG_HELP)
    s.add_argument("--modes", default="st_cls,st_att,mt_nc,mt_c",
                   help=f"comma-separated, from {','.join(SUITE_MODES)}")
    s.add_argument("--seeds", type=int, default=5)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_suite)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except CoupledMTLError as exc:
        print(f"error: {exc.kind}: {exc}".replace("\n", " "), file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: io: {exc}".replace("\n", " "), file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: invalid-input: {exc}".replace("\n", " "), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
