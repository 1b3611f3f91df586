"""``attrgt`` command line.

Each subcommand resolves its configuration as: built-in defaults, then the
``--config`` JSON file, then explicit flags, then ``--set key=value``
overrides (dotted keys reach into nested objects). Failures print a JSON
object on stderr and exit with 1 (usage), 2 (I/O), 3 (validation) or
4 (numeric failure). ``ATTRGT_LOG_LEVEL`` sets the log level.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Sequence

from . import pipeline
from .core import dumps
from .errors import AttrGTError, ConfigError, FormatError, TrainingError

log = logging.getLogger("attrgt")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_VALIDATION, EXIT_NUMERIC = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON configuration file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a configuration key (value parsed as JSON when possible)")


def _flag(p, name, typ=str, help=None, **kw):
    p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=argparse.SUPPRESS, help=help, **kw)


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _apply_set(cfg: dict, assignment: str) -> None:
    key, sep, value = assignment.partition("=")
    if not sep or not key:
        raise UsageError(f"--set expects KEY=VALUE, got {assignment!r}")
    parts = key.split(".")
    node = cfg
    for part in parts[:-1]:
        nxt = node.get(part)
        if isinstance(nxt, str):  # e.g. a manipulation given by kind name, now refined field-wise
            nxt = {"kind": nxt}
        elif not isinstance(nxt, dict):
            nxt = {}
        node[part] = nxt
        node = nxt
    node[parts[-1]] = _parse_value(value)


def resolve_config(cls, args: argparse.Namespace, flag_names: Sequence[str]):
    values: dict = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        try:
            loaded = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise FormatError(f"cannot read config {path}: {exc.strerror}", path) from exc
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON ({exc.msg})", path) from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: configuration must be a JSON object")
        values.update(loaded)
    for name in flag_names:
        if hasattr(args, name):
            values[name] = getattr(args, name)
    defaults = {f.name: getattr(cls(), f.name) for f in dataclasses.fields(cls)}
    for assignment in getattr(args, "set", []):
        top = assignment.partition("=")[0].split(".")[0]
        if "." in assignment.partition("=")[0] and top not in values and top in defaults:
            values[top] = json.loads(json.dumps(defaults[top]))  # refine a copy of the default
        _apply_set(values, assignment)
    return pipeline.config_from_mapping(cls, values)


# --------------------------------------------------------------------------
# subcommands

_MODIFY_IMAGE_FLAGS = (("out", str), ("source", str), ("n", int), ("height", int), ("width", int),
                       ("channels", int), ("source_seed", int), ("r", float), ("reassign_seed", int),
                       ("manip_seed", int), ("split_seed", int), ("workers", int))
_MODIFY_TEXT_FLAGS = (("out", str), ("corpus", str), ("n_reviews", int), ("corpus_seed", int),
                      ("article_rate", float), ("mode", str), ("seed", int), ("split_seed", int))
_TRAIN_FLAGS = (("dataset", str), ("out", str), ("lr", float), ("batch_size", int), ("epochs", int),
                ("seed", int), ("l2", float), ("patience", int), ("l1", float), ("model", str),
                ("hidden", int), ("n_buckets", int))
_ATTRIBUTE_FLAGS = (("dataset", str), ("model", str), ("out", str), ("method", str), ("split", str),
                    ("seed", int), ("smoothgrad_n", int), ("sigma_frac", float), ("window", int),
                    ("baseline", str), ("groups", str), ("workers", int))
_EVALUATE_FLAGS = (("dataset", str), ("attributions", str), ("out", str), ("split", str), ("model", str),
                   ("accuracy", float), ("k", int), ("max_missing", float))
_SWEEP_FLAGS = (("kind", str), ("out", str), ("mode", str), ("p", float), ("method", str), ("workers", int))


def _manip_arg(text: str) -> tuple[str, str]:
    cls, sep, kind = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError("expected CLASS=KIND, e.g. 1=watermark")
    return cls, kind


def cmd_modify_image(args) -> dict:
    cfg_values = argparse.Namespace(**vars(args))
    if getattr(args, "manip", None):
        cfg_values.set = [f"manipulations={json.dumps(dict(args.manip))}", *args.set]
    cfg = resolve_config(pipeline.ModifyImageConfig, cfg_values, [n for n, _ in _MODIFY_IMAGE_FLAGS])
    meta = pipeline.modify_image(cfg)
    return {k: meta[k] for k in ("n_instances", "p_star", "er_percent", "split_counts", "class_counts")}


def cmd_modify_text(args) -> dict:
    cfg = resolve_config(pipeline.ModifyTextConfig, args, [n for n, _ in _MODIFY_TEXT_FLAGS])
    meta = pipeline.modify_text(cfg)
    return {k: meta[k] for k in ("n_instances", "n_source", "mode", "vocab_size", "split_counts")} | {
        "n_skipped": len(meta["skipped"])}


def cmd_train_ref(args) -> dict:
    cfg = resolve_config(pipeline.TrainRefConfig, args, [n for n, _ in _TRAIN_FLAGS])
    summary = pipeline.train_ref(cfg)
    return {k: v for k, v in summary.items() if k != "history"}


def cmd_attribute(args) -> dict:
    cfg = resolve_config(pipeline.AttributeConfig, args, [n for n, _ in _ATTRIBUTE_FLAGS])
    if isinstance(cfg.baseline, str) and cfg.baseline != "mean":
        cfg = dataclasses.replace(cfg, baseline=_parse_value(cfg.baseline))
    return pipeline.attribute(cfg)


def cmd_evaluate(args) -> dict:
    cfg = resolve_config(pipeline.EvaluateConfig, args, [n for n, _ in _EVALUATE_FLAGS])
    agg = pipeline.evaluate(cfg)
    return {k: agg.get(k) for k in ("n_evaluated", "accuracy", "p_star", "significance_probability", "envelope")} | {
        "n_missing": len(agg["missing_ids"]), "out": cfg.out}


def cmd_significance(args) -> dict:
    from .reassign import log_significance_probability, significance_probability

    return {"n": args.n, "p_star": args.p_star, "accuracy": args.accuracy,
            "significance_probability": significance_probability(args.n, args.p_star, args.accuracy),
            "log_significance_probability": log_significance_probability(args.n, args.p_star, args.accuracy)}


def cmd_envelope(args) -> dict:
    from .metrics import shapley_envelope

    lower, upper = shapley_envelope(args.p, args.r)
    return {"p": args.p, "r": args.r, "lower_v_m": lower, "upper_v_o": upper}


def cmd_sweep(args) -> dict:
    values = argparse.Namespace(**vars(args))
    if getattr(args, "grid", None) is not None:
        values.set = [f"grid={json.dumps(args.grid)}", *args.set]
    cfg = resolve_config(pipeline.SweepConfig, values, [n for n, _ in _SWEEP_FLAGS])
    rows = pipeline.sweep(cfg)
    return {"kind": cfg.kind, "rows": len(rows), "errors": sum(1 for r in rows if r.get("error")), "out": cfg.out}


def _grid_arg(text: str) -> list:
    text = text.strip()
    if not text:
        return []
    return [_parse_value(t) for t in text.split(",")]


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="attrgt", description=__doc__.splitlines()[0])
    from . import __version__

    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("modify-image", help="reassign labels and manipulate images")
    _add_common(p)
    for name, typ in _MODIFY_IMAGE_FLAGS:
        _flag(p, name, typ)
    p.add_argument("--manip", action="append", type=_manip_arg, metavar="CLASS=KIND",
                   help="manipulation per class with default geometry (repeatable); replaces the configured set")
    p.set_defaults(func=cmd_modify_image)

    p = sub.add_parser("modify-text", help="build article / CN / NC text datasets")
    _add_common(p)
    for name, typ in _MODIFY_TEXT_FLAGS:
        _flag(p, name, typ)
    p.set_defaults(func=cmd_modify_text)

    p = sub.add_parser("train-ref", help="train a reference model on a modified dataset")
    _add_common(p)
    for name, typ in _TRAIN_FLAGS:
        _flag(p, name, typ)
    p.set_defaults(func=cmd_train_ref)

    p = sub.add_parser("attribute", help="compute attribution maps into an exchange file")
    _add_common(p)
    for name, typ in _ATTRIBUTE_FLAGS:
        _flag(p, name, typ)
    p.set_defaults(func=cmd_attribute)

    p = sub.add_parser("evaluate", help="score attributions against ground truth")
    _add_common(p)
    for name, typ in _EVALUATE_FLAGS:
        _flag(p, name, typ)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("significance", help="probability of beating p* by chance")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--p-star", dest="p_star", type=float, required=True)
    p.add_argument("--accuracy", type=float, required=True)
    p.set_defaults(func=cmd_significance)

    p = sub.add_parser("envelope", help="Shapley envelope bounds for accuracy p and cap r")
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--r", type=float, required=True)
    p.set_defaults(func=cmd_envelope)

    p = sub.add_parser("sweep", help="r-sweep, visibility-sweep or accuracy-trace")
    _add_common(p)
    for name, typ in _SWEEP_FLAGS:
        _flag(p, name, typ)
    p.add_argument("--grid", type=_grid_arg, default=None, help="comma-separated grid values; empty for none")
    p.set_defaults(func=cmd_sweep)
    return parser


def _error_payload(exc: BaseException, code: int) -> dict:
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    if isinstance(exc, FormatError) and exc.path is not None:
        payload["path"] = exc.path
    elif isinstance(exc, OSError) and getattr(exc, "filename", None):
        payload["path"] = str(exc.filename)
    if isinstance(exc, TrainingError):
        payload["diagnostics"] = exc.diagnostics
    return payload


def main(argv: Sequence[str] | None = None) -> int:
    level = os.environ.get("ATTRGT_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        result = args.func(args)
    except UsageError as exc:
        code = EXIT_USAGE
        print(dumps({"error": "UsageError", "message": str(exc), "exit_code": code}), file=sys.stderr)
        return code
    except AttrGTError as exc:
        code = exc.exit_code
        print(dumps(_error_payload(exc, code)), file=sys.stderr)
        return code
    except OSError as exc:
        print(dumps(_error_payload(exc, EXIT_IO)), file=sys.stderr)
        return EXIT_IO
    except (ValueError, ArithmeticError) as exc:
        code = EXIT_NUMERIC if isinstance(exc, ArithmeticError) else EXIT_VALIDATION
        print(dumps(_error_payload(exc, code)), file=sys.stderr)
        return code
    print(dumps(result))
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
