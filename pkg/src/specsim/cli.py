"""``specsim`` command line: run, sweep, validate."""

from __future__ import annotations

import argparse
import sys
from typing import Sequence

from .experiment import ConfigError, ExperimentConfig, emit, load_config, output_dir, preset, run, sweep
from .simulation import Mode


def _config(path: str | None, default: str) -> ExperimentConfig:
    return load_config(path) if path else preset(default)


def _rates(text: str) -> list[float]:
    try:
        rates = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad rate list {text!r}") from None
    if not rates or any(r <= 0 for r in rates):
        raise argparse.ArgumentTypeError("rates must be positive numbers")
    return rates


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="specsim", description="Speculative agent serving simulator.")
    sub = parser.add_subparsers(dest="command", required=True)
    modes = [m.value for m in Mode]

    p = sub.add_parser("run", help="run one mode and write artifacts")
    p.add_argument("--config", help="TOML file (default: shipped single-task preset)")
    p.add_argument("--mode", choices=modes)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (SPECSIM_OUT overrides)")

    p = sub.add_parser("sweep", help="run every mode at every rate")
    p.add_argument("--rates", type=_rates, help="comma-separated tasks/s, e.g. 0.5,1,2,3")
    p.add_argument("--config", help="TOML file (default: shipped serving preset)")
    p.add_argument("--modes", help="comma-separated subset of modes")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (SPECSIM_OUT overrides)")

    p = sub.add_parser("validate", help="check a configuration file")
    p.add_argument("--config", required=True)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            cfg = load_config(args.config)
            print(f"ok: mode={cfg.mode.value} seed={cfg.seed} replications={cfg.replications}")
            return 0

        if args.command == "run":
            cfg = _config(args.config, "default")
            if args.mode:
                cfg = cfg.replace(mode=Mode(args.mode))
            if args.seed is not None:
                cfg = cfg.replace(seed=args.seed)
            summary = run(cfg)
            out = output_dir(args.out)
            emit(summary, out)
            print(
                f"{summary.mode.value}: tasks={len(summary.records)} mean={summary.mean_latency:.3f}s "
                f"p95={summary.p95_latency:.3f}s hit_rate={summary.hit_rate:.3f} -> {out}"
            )
            return 0

        cfg = _config(args.config, "serving")
        if args.seed is not None:
            cfg = cfg.replace(seed=args.seed)
        modes = args.modes.split(",") if args.modes else None
        summaries = sweep(args.rates, cfg, modes)
        out = output_dir(args.out)
        emit(summaries, out, event_logs=False)
        for s in summaries:
            print(f"{s.mode.value:15s} rate={s.rate:<5g} mean={s.mean_latency:8.3f}s p95={s.p95_latency:8.3f}s")
        print(f"-> {out}")
        return 0
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
