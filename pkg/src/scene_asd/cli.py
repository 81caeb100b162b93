"""Command-line entry point: synth, train-ae, train-snet, threshold, evaluate.

Exit status: 0 success, 2 configuration error, 3 data error, 4 missing or
unreadable artifact.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import MISSING, fields

from . import pipeline
from .config import CONFIG_ENV, RunConfig, load_config
from .errors import ConfigError, DataError, MissingArtifactError

log = logging.getLogger("scene_asd")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_ARTIFACT = 0, 2, 3, 4

COMMANDS = {
    "synth": (pipeline.run_synth, "write a synthetic corpus in the scanned directory layout"),
    "train-ae": (pipeline.run_train_ae, "train one autoencoder per machine on 6 dB normal clips"),
    "train-snet": (pipeline.run_train_snet, "train one S-Net scene classifier per machine"),
    "threshold": (pipeline.run_threshold, "compute the per-SNR threshold table"),
    "evaluate": (pipeline.run_evaluate, "score evaluation clips and write the reports"),
}

# short aliases for the most common fields
_ALIASES = {"machine_id": ["--id"], "machine": ["--machine"], "seed": ["--seed"], "out": ["--out"]}


def _list_parser(item_type):
    def parse(text):
        try:
            return [item_type(x.strip()) for x in text.split(",") if x.strip()]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None
    return parse


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("configuration overrides")
    for f in fields(RunConfig):
        default = f.default if f.default is not MISSING else f.default_factory()
        note = " (paper)" if f.metadata.get("paper") else ""
        help_text = f"{f.metadata.get('help', '')}{note} [default: {default}]"
        names = _ALIASES.get(f.name, []) + ["--" + f.name.replace("_", "-")]
        kwargs = dict(dest=f.name, default=None, help=help_text.replace("%", "%%"))
        if f.type == "bool":
            group.add_argument(*names, action=argparse.BooleanOptionalAction, **kwargs)
        elif f.type == "List[int]":
            group.add_argument(*names, type=_list_parser(int), metavar="A,B,..", **kwargs)
        elif f.type == "List[str]":
            group.add_argument(*names, type=_list_parser(str), metavar="A,B,..", **kwargs)
        else:
            group.add_argument(*names, type={"int": int, "float": float}.get(f.type, str), **kwargs)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scene-asd",
        description="Autoencoder machine-sound anomaly detection with scene-aware thresholds.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help=f"TOML config file (default: ${CONFIG_ENV} if set)")
        p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
        _add_config_flags(p)
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides = {f.name: getattr(args, f.name) for f in fields(RunConfig)}
    return load_config(args.config, overrides)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        COMMANDS[args.command][0](cfg)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except MissingArtifactError as exc:
        log.error("missing artifact: %s", exc)
        return EXIT_ARTIFACT
    except DataError as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
