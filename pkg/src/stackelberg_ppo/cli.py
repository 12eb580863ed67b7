"""Command-line entry point: ``train``, ``verify`` and ``sweep``.

Outputs go to ``--output-dir`` or, if absent, to ``$STACKELBERG_OUTPUT_DIR``
(default ``./stackelberg_runs``).
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import math
import os
import subprocess
import sys
from pathlib import Path

from . import __version__
from .config import dump_config, env_from_config, load_config
from .errors import ConfigError, NumericsError
from .trainer import EpochMetrics, lambda_sweep, summarize_sweep, train

OUTPUT_ENV_VAR = "STACKELBERG_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "stackelberg_runs"
METRICS_SCHEMA_VERSION = 1
METRICS_HEADER = "epoch,env_steps,leader_return,follower_return,kl,clip_frac,cg_iters,cg_converged,alpha,wall_ms"
SWEEP_HEADER = "lambda,seed,final_return"
MANIFEST_NAME = "manifest.toml"

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_NUMERICS = 0, 1, 2, 3


def resolve_output_dir(flag: str | None) -> Path:
    return Path(flag or os.environ.get(OUTPUT_ENV_VAR) or DEFAULT_OUTPUT_DIR)


def version_string() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def write_manifest(out_dir: Path, cfg, command: str, extra: dict | None = None) -> Path:
    run = {
        "command": command,
        "env": cfg.env,
        "seed": cfg.seed,
        "version": version_string(),
        "started": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "output_dir": str(out_dir),
        "metrics_schema": METRICS_SCHEMA_VERSION,
    }
    run.update(extra or {})
    path = out_dir / MANIFEST_NAME
    path.write_text(dump_config(cfg, run), encoding="utf-8")
    return path


def _format(value) -> str:
    if isinstance(value, float):
        return "inf" if math.isinf(value) else repr(value)
    return str(value)


def cmd_train(config_path, overrides, output_dir=None) -> int:
    try:
        cfg = load_config(config_path, overrides)
        env = env_from_config(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = resolve_output_dir(output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_manifest(out_dir, cfg, "train")
    with open(out_dir / "metrics.csv", "w", newline="", encoding="utf-8") as fh:
        fh.write(METRICS_HEADER + "\n")
        fh.flush()

        def emit(m: EpochMetrics):
            fh.write(",".join(_format(v) for v in m.as_row()) + "\n")
            fh.flush()

        try:
            result = train(env, cfg, on_epoch=emit)
        except NumericsError as exc:
            print(f"numerical failure: {exc}", file=sys.stderr)
            return EXIT_NUMERICS
    with open(out_dir / "timing.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "wall_ms"])
        for i, ms in enumerate(result.wall_ms):
            w.writerow([i, f"{ms:.3f}"])
    print(f"trained {len(result.metrics)} epochs; final return {result.final_return(cfg.final_window):.4f}; "
          f"outputs in {out_dir}")
    return EXIT_OK


def parse_lambdas(text: str) -> list[float]:
    out = []
    for tok in text.split(","):
        tok = tok.strip().lower()
        if not tok:
            continue
        if tok in ("inf", "infinity", "∞"):
            out.append(math.inf)
            continue
        try:
            lam = float(tok)
        except ValueError:
            raise ConfigError(f"bad lambda {tok!r}") from None
        if lam < 0 or math.isnan(lam):
            raise ConfigError(f"lambda must be >= 0, got {tok!r}")
        out.append(lam)
    if not out:
        raise ConfigError("empty lambda list")
    return out


def cmd_sweep(config_path, lambdas_text, n_seeds, overrides=(), output_dir=None, workers: int = 1) -> int:
    try:
        cfg = load_config(config_path, overrides)
        env_from_config(cfg)
        lambdas = parse_lambdas(lambdas_text)
        if n_seeds < 1:
            raise ConfigError("--seeds must be >= 1")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = resolve_output_dir(output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = [cfg.seed + i for i in range(n_seeds)]
    write_manifest(out_dir, cfg, "sweep", {"lambdas": [_format(x) for x in lambdas], "seeds": seeds})
    try:
        rows = lambda_sweep(env_from_config, cfg, lambdas, seeds, workers=workers)
    except NumericsError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICS
    with open(out_dir / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
        fh.write(SWEEP_HEADER + "\n")
        for r in rows:
            fh.write(f"{_format(r.fisher_lambda)},{r.seed},{_format(r.final_return)}\n")
    for lam, mean, std, n in summarize_sweep(rows):
        print(f"lambda={_format(lam):>6s}  final return {mean:10.4f} +/- {std:.4f}  (n={n})")
    return EXIT_OK


def cmd_verify(level: str) -> int:
    from . import verify

    return verify.main(level)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stackelberg-ppo", description="Stackelberg PPO trainer and oracle checks")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one run from a TOML config")
    t.add_argument("--config", required=True)
    t.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    t.add_argument("--output-dir", default=None, help=f"overrides ${OUTPUT_ENV_VAR}")

    v = sub.add_parser("verify", help="run the oracle checks")
    v.add_argument("--level", choices=("fast", "full"), default="fast")

    s = sub.add_parser("sweep", help="final return per fisher_lambda and seed")
    s.add_argument("--config", required=True)
    s.add_argument("--lambdas", required=True, help="comma list; 'inf' selects the vanilla mode")
    s.add_argument("--seeds", type=int, default=5)
    s.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--output-dir", default=None, help=f"overrides ${OUTPUT_ENV_VAR}")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "train":
        return cmd_train(args.config, args.overrides, args.output_dir)
    if args.command == "verify":
        return cmd_verify(args.level)
    return cmd_sweep(args.config, args.lambdas, args.seeds, args.overrides, args.output_dir, args.workers)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
