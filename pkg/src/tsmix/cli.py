"""Command-line entry point: ``tsmix <command> [flags]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import experiments
from .errors import ConfigError, DataError, TsmixError, ValidationError
from .experiments import ExperimentConfig

log = logging.getLogger("tsmix")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _str_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


# flag name -> (config key, type)
SHARED_FLAGS = {
    "--out": ("out", str),
    "--seeds": ("seeds", _int_list),
    "--mode": ("mode", str),
    "--modes": ("modes", _str_list),
    "--k": ("k", int),
    "--k-grid": ("k_grid", _int_list),
    "--alpha": ("alpha", float),
    "--tau": ("tau", float),
    "--label-pct": ("label_pct", _float_list),
    "--data": ("data", str),
    "--meta": ("meta", str),
    "--test-data": ("test_data", str),
    "--test-meta": ("test_meta", str),
    "--lr": ("lr", float),
    "--batch-size": ("batch_size", int),
    "--max-epochs": ("max_epochs", int),
    "--patience": ("patience", int),
    "--n-layers": ("n_layers", int),
    "--n-heads": ("n_heads", int),
    "--d-model": ("d_model", int),
    "--dropout": ("dropout", float),
    "--warmup-epochs": ("warmup_epochs", int),
    "--workers": ("workers", int),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tsmix", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "train": "train one mode over several seeds",
        "ablate-labels": "metric curves over label percentages",
        "ablate-batches": "metric curves over mixed batches per original batch",
        "semisup": "pseudo-label MixUp over label percentages",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="flat JSON config file; flags override its keys")
        p.add_argument("--overwrite", action="store_true", help="replace a non-empty output directory")
        for flag, (key, typ) in SHARED_FLAGS.items():
            p.add_argument(flag, dest=key, type=typ, default=None)

    g = sub.add_parser("gen-data", help="write a synthetic dataset (data.csv + meta.json)")
    g.add_argument("--out", required=True)
    g.add_argument("--n-classes", type=int, default=3)
    g.add_argument("--n-per-class", type=int, default=300)
    g.add_argument("--seq-len", type=int, default=64)
    g.add_argument("--n-channels", type=int, default=2)
    g.add_argument("--noise-sd", type=float, default=0.3)
    g.add_argument("--seed", type=int, default=0)

    t = sub.add_parser("tabulate", help="rebuild summary.csv from a run directory's seed files")
    t.add_argument("--out", required=True, help="run directory")
    return parser


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    raw = {}
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
    for key, _ in SHARED_FLAGS.values():
        val = getattr(args, key)
        if val is not None:
            raw[key] = val
    if args.overwrite:
        raw["overwrite"] = True
    try:
        return ExperimentConfig.from_dict(raw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "gen-data":
            data, meta = experiments.generate_dataset(args.out, args.n_classes, args.n_per_class,
                                                      args.seq_len, args.n_channels, args.noise_sd,
                                                      args.seed)
            print(f"wrote {data} and {meta}")
            return EXIT_OK
        if args.command == "tabulate":
            rows = experiments.tabulate(args.out)
        else:
            cfg = load_config(args)
            rows = experiments.run_command(cfg, args.command)
        print(experiments.format_table(rows))
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ValidationError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TsmixError, OSError, FloatingPointError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
