"""Operator command line tying the pipeline stages together.

Exit codes: 0 success, 1 usage error, 2 data/domain error, 3 internal error.
Every randomized stage takes --seed (default 7). A --config TOML/JSON file
can provide defaults; explicit flags always win.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import canonjson, ensemble, pipeline, skinmodel, stats
from .errors import PhotoqcError

DEFAULT_SEED = 7


def _load_cli_config(path) -> dict:
    if path is None:
        return {}
    with open(path, "rb") as fh:
        data = fh.read()
    if str(path).endswith(".json"):
        return json.loads(data.decode("utf-8"))
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    return tomllib.loads(data.decode("utf-8"))


def _resolve(args, name: str, default=None, required: bool = False):
    """Flag value if given, else config-file value, else default."""
    value = getattr(args, name.replace("-", "_"), None)
    if value is None:
        value = args.cli_config.get(name, default)
    if required and value is None:
        raise SystemExit(f"missing required option --{name}")
    return value


def _emit(args, payload: dict, text: str | None = None) -> None:
    fmt = _resolve(args, "format", "json")
    rendered = text if (fmt == "text" and text is not None) \
        else canonjson.dumps(payload)
    out = _resolve(args, "out")
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(rendered)
            if not rendered.endswith("\n"):
                fh.write("\n")
    else:
        print(rendered)


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_fit_skin(args) -> int:
    model = pipeline.fit_skin_stage(_resolve(args, "data", required=True),
                                    k=int(_resolve(args, "k", 4)),
                                    seed=int(_resolve(args, "seed", DEFAULT_SEED)))
    canonjson.dump_path(skinmodel.skin_gmm_to_dict(model),
                        _resolve(args, "out", required=True))
    return 0


def cmd_featurize(args) -> int:
    skin = skinmodel.skin_gmm_from_dict(
        canonjson.load_path(_resolve(args, "skin", required=True)))
    records, _ = pipeline.featurize_stage(
        _resolve(args, "manifest", required=True), skin,
        _resolve(args, "out-dir", required=True),
        max_side=int(_resolve(args, "max-side", 512)))
    print(f"featurized {len(records)} images", file=sys.stderr)
    return 0


def cmd_train(args) -> int:
    skin = skinmodel.skin_gmm_from_dict(
        canonjson.load_path(_resolve(args, "skin", required=True)))
    model = pipeline.train_stage(
        _resolve(args, "manifest", required=True),
        _resolve(args, "features-dir", required=True), skin,
        seed=int(_resolve(args, "seed", DEFAULT_SEED)),
        grid=_resolve(args, "grid", "default"))
    ensemble.save_model(model, _resolve(args, "out", required=True))
    return 0


def cmd_fit_ensemble(args) -> int:
    model = ensemble.load_model(_resolve(args, "model", required=True))
    model = pipeline.fit_ensemble_stage(
        model, _resolve(args, "manifest", required=True),
        _resolve(args, "features-dir", required=True))
    ensemble.save_model(model, _resolve(args, "out", required=True))
    return 0


def cmd_calibrate(args) -> int:
    model = ensemble.load_model(_resolve(args, "model", required=True))
    model = pipeline.calibrate_stage(
        model, _resolve(args, "manifest", required=True),
        _resolve(args, "features-dir", required=True),
        fpr_cap=float(_resolve(args, "fpr-cap", 0.3)))
    ensemble.save_model(model, _resolve(args, "out", required=True))
    return 0


def cmd_eval(args) -> int:
    model = ensemble.load_model(_resolve(args, "model", required=True))
    groupings = tuple(g for g in _resolve(args, "subgroups", "fst,age,sex").split(",") if g)
    report = pipeline.evaluate_stage(
        model, _resolve(args, "manifest", required=True),
        _resolve(args, "features-dir", required=True),
        out_dir=_resolve(args, "out-dir", required=True),
        groupings=groupings, split_name=_resolve(args, "split", "test"))
    if _resolve(args, "format", "json") == "text":
        print(pipeline.render_eval_text(report), end="")
    return 0


def cmd_assess(args) -> int:
    model = ensemble.load_model(_resolve(args, "model", required=True))
    external = {}
    for item in args.external or ():
        name, _, value = item.partition("=")
        external[name] = float(value)
    verdict = pipeline.assess_image(model, _resolve(args, "image", required=True),
                                    external or None)
    quality = "poor" if verdict.is_poor else "good"
    reasons = ", ".join(verdict.reasons) if verdict.reasons else "-"
    text = (f"{quality}  score={verdict.overall_score:.4f}  reasons: {reasons}")
    _emit(args, verdict.to_dict(), text)
    return 0


def cmd_serve(args) -> int:
    from . import service as service_mod

    config = service_mod.load_config(args.config)
    for key in ("host", "port", "model-path", "storage-dir", "log-path",
                "attempt-cap", "fpr-cap"):
        value = getattr(args, key.replace("-", "_"), None)
        if value is not None:
            config[key.replace("-", "_")] = value
    if not config.get("model_path"):
        raise SystemExit("serve requires a model (--model-path or config file)")
    service_mod.run_server(config)
    return 0


def cmd_pilot_report(args) -> int:
    labels = pipeline.load_attempt_labels(_resolve(args, "labels", required=True))
    sessions = pipeline.pilot_sessions_from_log(_resolve(args, "log", required=True),
                                                labels)
    report = pipeline._sanitize(stats.pilot_report(sessions))
    _emit(args, report, pipeline.render_pilot_text(report))
    return 0


def cmd_power(args) -> int:
    prevalence = float(_resolve(args, "prevalence", 1.0))
    n_affected = _resolve(args, "n-affected")
    if n_affected is not None:
        n_affected = int(n_affected)
        n_total = stats.n_total_for_affected(n_affected, prevalence)
    else:
        spec = stats.PowerSpec(delta=float(_resolve(args, "delta", required=True)),
                               sd=float(_resolve(args, "sd", required=True)),
                               alpha=float(_resolve(args, "alpha", 0.05)),
                               power=float(_resolve(args, "power", 0.8)),
                               prevalence=prevalence)
        n_affected, n_total = stats.sample_size(spec)
    _emit(args, {"n_affected": n_affected, "n_total": n_total},
          f"n_affected={n_affected}  n_total={n_total}")
    return 0


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="photoqc",
        description="photo quality assessment pipeline and capture service")
    parser.add_argument("--config", help="TOML/JSON file with option defaults")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, options):
        p = sub.add_parser(name)
        for opt, kwargs in options:
            p.add_argument(opt, **kwargs)
        p.set_defaults(func=func)
        return p

    add("fit-skin", cmd_fit_skin, [
        ("--data", {"help": "whitespace-separated B G R label pixel file"}),
        ("--k", {"type": int}), ("--seed", {"type": int}), ("--out", {})])
    add("featurize", cmd_featurize, [
        ("--manifest", {}), ("--skin", {}), ("--out-dir", {}),
        ("--max-side", {"type": int})])
    add("train", cmd_train, [
        ("--manifest", {}), ("--features-dir", {}), ("--skin", {}),
        ("--seed", {"type": int}),
        ("--grid", {"choices": sorted(pipeline.GRIDS)}), ("--out", {})])
    add("fit-ensemble", cmd_fit_ensemble, [
        ("--model", {}), ("--manifest", {}), ("--features-dir", {}), ("--out", {})])
    add("calibrate", cmd_calibrate, [
        ("--model", {}), ("--manifest", {}), ("--features-dir", {}),
        ("--fpr-cap", {"type": float}), ("--out", {})])
    add("eval", cmd_eval, [
        ("--model", {}), ("--manifest", {}), ("--features-dir", {}),
        ("--out-dir", {}), ("--subgroups", {}), ("--split", {}),
        ("--format", {"choices": ["json", "text"]})])
    add("assess", cmd_assess, [
        ("--model", {}), ("--image", {}),
        ("--external", {"action": "append",
                        "help": "name=score external channel (repeatable)"}),
        ("--format", {"choices": ["json", "text"]}), ("--out", {})])
    add("serve", cmd_serve, [
        ("--host", {}), ("--port", {"type": int}), ("--model-path", {}),
        ("--storage-dir", {}), ("--log-path", {}),
        ("--attempt-cap", {"type": int}), ("--fpr-cap", {"type": float})])
    add("pilot-report", cmd_pilot_report, [
        ("--log", {"help": "JSONL event log"}),
        ("--labels", {"help": "CSV image_ref,quality"}),
        ("--format", {"choices": ["json", "text"]}), ("--out", {})])
    add("power", cmd_power, [
        ("--delta", {"type": float}), ("--sd", {"type": float}),
        ("--alpha", {"type": float}), ("--power", {"type": float}),
        ("--prevalence", {"type": float}),
        ("--n-affected", {"type": int,
                          "help": "skip the t-stage and convert directly"}),
        ("--format", {"choices": ["json", "text"]}), ("--out", {})])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    args.cli_config = _load_cli_config(args.config)
    try:
        return args.func(args)
    except SystemExit as exc:
        if isinstance(exc.code, str):
            print(f"usage error: {exc.code}", file=sys.stderr)
            return 1
        return exc.code or 0
    except PhotoqcError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
