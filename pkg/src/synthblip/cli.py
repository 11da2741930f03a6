"""Command-line client for the experiment service.

Runs everything in process by default; with ``--server`` the same request
payloads are POSTed to a running service instead.

Exit codes: 0 success, 2 config error, 3 donor/horizon deficit under the
fail-fast policy, 4 panel validation failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import urllib.error
import urllib.request
from pathlib import Path

from pydantic import ValidationError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DEFICIT = 3
EXIT_VALIDATION = 4


def _load_config(args: argparse.Namespace):
    from .config import ExperimentConfig

    try:
        raw = json.loads(Path(args.config).read_text())
    except FileNotFoundError:
        raise SystemExit2(f"config file not found: {args.config}")
    except json.JSONDecodeError as exc:
        raise SystemExit2(f"config is not valid JSON: {exc}")

    if getattr(args, "seed", None) is not None:
        raw.setdefault("dgp", {})["seed"] = args.seed
    if getattr(args, "estimator", None):
        raw.setdefault("estimator", {})["kind"] = args.estimator
    if getattr(args, "weights", None):
        raw.setdefault("estimator", {})["kind"] = raw["estimator"].get("kind", "si")
        raw["estimator"]["weights"] = args.weights
    if getattr(args, "max_enum", None) is not None:
        raw["max_enum"] = args.max_enum

    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise SystemExit2(f"config rejected:\n{exc}")


class SystemExit2(Exception):
    """Config-level failure; maps to exit code 2."""


def _post(server: str, route: str, payload: dict) -> tuple[int, dict]:
    data = json.dumps(payload).encode()
    req = urllib.request.Request(
        server.rstrip("/") + route, data=data, headers={"Content-Type": "application/json"}
    )
    try:
        with urllib.request.urlopen(req) as resp:
            return resp.status, json.loads(resp.read().decode())
    except urllib.error.HTTPError as exc:
        try:
            body = json.loads(exc.read().decode())
        except Exception:
            body = {"detail": str(exc)}
        return exc.code, body


def _remote(args: argparse.Namespace, route: str, payload: dict) -> int:
    status, body = _post(args.server, route, payload)
    print(json.dumps(body, indent=2, sort_keys=True))
    if status == 409:
        return EXIT_DEFICIT
    if status >= 400:
        return EXIT_CONFIG
    if route == "/validate" and not body.get("valid", True):
        return EXIT_VALIDATION
    return EXIT_OK


def _emit(payload: dict) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


def cmd_simulate(args: argparse.Namespace) -> int:
    if args.server:
        cfg = _load_config(args)
        return _remote(args, "/simulate", {"config": cfg.model_dump(), "out_dir": args.out, "seed": args.seed})
    from .harness import run_simulate

    cfg = _load_config(args)
    result = run_simulate(cfg, args.out, seed=args.seed)
    _emit(result.to_dict())
    return EXIT_OK


def cmd_estimate(args: argparse.Namespace) -> int:
    if args.server:
        cfg = _load_config(args)
        return _remote(
            args,
            "/estimate",
            {"config": cfg.model_dump(), "out_dir": args.out, "panel_dir": args.panel},
        )
    from .harness import run_estimate

    cfg = _load_config(args)
    if cfg.estimator is None:
        raise SystemExit2("config has no estimator section (or pass --estimator)")
    report = run_estimate(cfg, args.out, panel_dir=args.panel)
    _emit(
        {
            "aggregates": report.aggregates,
            "n_deficits": len(report.deficits),
            "donor_summary": report.donor_summary,
        }
    )
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    if args.server:
        cfg = _load_config(args)
        return _remote(args, "/sweep", {"config": cfg.model_dump(), "out_dir": args.out})
    from .harness import run_sweep

    cfg = _load_config(args)
    result = run_sweep(cfg, args.out)
    _emit({"cell_rmse": result.cell_rmse, "n_rows": len(result.rows), "n_deficits": len(result.deficits)})
    return EXIT_OK


def cmd_oracle(args: argparse.Namespace) -> int:
    if args.server:
        cfg = _load_config(args)
        return _remote(
            args,
            "/oracle",
            {"config": cfg.model_dump(), "out_dir": args.out, "max_enum": args.max_enum},
        )
    from .harness import run_oracle

    cfg = _load_config(args)
    result = run_oracle(cfg, args.out, max_enum=args.max_enum)
    _emit(result.to_dict())
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    if args.server:
        return _remote(args, "/validate", {"panel_csv": args.panel, "meta_json": args.meta})
    from .harness import run_validate

    result = run_validate(args.panel, args.meta)
    _emit(result.to_dict())
    return EXIT_OK if result.valid else EXIT_VALIDATION


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    uvicorn.run("synthblip.service:app", host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="synthblip", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, *, config: bool = True) -> None:
        if config:
            p.add_argument("--config", required=True, help="experiment config (JSON)")
            p.add_argument("--seed", type=int, default=None, help="override the dgp seed")
        p.add_argument("--server", default=None, help="base URL of a running service")

    p = sub.add_parser("simulate", help="generate panel, factor and noise files")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="fit an estimator and score queries against the oracle")
    common(p)
    p.add_argument("--out", default=None)
    p.add_argument("--panel", default=None, help="directory with files from `simulate`")
    p.add_argument("--estimator", choices=["si", "ltv", "lti"], default=None)
    p.add_argument("--weights", choices=["pcr", "oracle"], default=None)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("sweep", help="grid over donor multiplicity and noise scale")
    common(p)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("oracle", help="enumerate exact expected outcomes")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--max-enum", type=int, default=None, dest="max_enum")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("validate", help="check a panel file against its invariants")
    common(p, config=False)
    p.add_argument("--panel", required=True, help="panel CSV path")
    p.add_argument("--meta", required=True, help="panel metadata JSON path")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SystemExit2 as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    except ValidationError as exc:
        print(f"config rejected:\n{exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # deficits raised by the estimators
        from .estimators import DonorDeficit, HorizonDeficit

        if isinstance(exc, (DonorDeficit, HorizonDeficit)):
            print(f"deficit: {exc}", file=sys.stderr)
            return EXIT_DEFICIT
        raise


if __name__ == "__main__":
    sys.exit(main())
