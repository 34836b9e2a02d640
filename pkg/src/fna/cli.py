"""``fna`` command line: pretrain | adapt | ablate | remap | derive | eval.

Exit codes: 0 success, 1 configuration error, 2 runtime error (divergence,
non-finite values, failed phase), 3 I/O error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from . import pipeline
from .autodiff import NonFiniteError
from .checkpoint import CheckpointError
from .pipeline import ConfigError, PhaseError
from .training import DivergenceError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_IO = 0, 1, 2, 3

COMMANDS = ("pretrain", "adapt", "ablate", "remap", "derive", "eval")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fna", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON file mirroring PipelineConfig")
        p.add_argument("--rng-seed", type=int, default=None, help="override the master (and search) seed")
        p.add_argument("--out", default=None, help="output directory (overrides out_dir)")
        p.add_argument("--strategy", default=None, help="remapping strategy: center, dilate, bn, std, l1")
    return parser


def _emit(rows) -> None:
    for key, value in rows:
        print(f"{key}\t{value}")


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = pipeline.load_config(args.config)
        if args.rng_seed is not None:
            cfg = pipeline.with_seed(cfg, args.rng_seed)
        if args.out is not None:
            cfg = replace(cfg, out_dir=args.out)
        if args.strategy is not None:
            cfg = replace(cfg, strategy=args.strategy)
        cfg.validate()
        if args.command == "pretrain":
            rep = pipeline.cmd_pretrain_seed(cfg)
            _emit([("checkpoint", rep.artifacts["checkpoint"]), ("train_accuracy", f"{rep.metric:.4f}"),
                   ("madds", rep.madds), ("seconds", f"{rep.wall_clock_s:.1f}")]
                  + [("figure", f) for f in rep.figures])
        elif args.command == "adapt":
            rep = pipeline.cmd_adapt(cfg)
            _emit([("mode", rep.mode), (rep.metric_name, f"{rep.metric:.4f}"), ("madds", rep.madds),
                   ("arch", rep.artifacts["arch"]), ("report", f"{cfg.out_dir}/report.json"),
                   ("seconds", f"{rep.wall_clock_s:.1f}")] + [("figure", f) for f in rep.figures])
        elif args.command == "ablate":
            rows = pipeline.cmd_ablate(cfg)
            print("\t".join(pipeline.ABLATION_COLUMNS))
            for r in rows:
                s = r.summary()
                print("\t".join(str(s[c]) for c in pipeline.ABLATION_COLUMNS))
            for r in rows:
                for err in r.failures:
                    print(f"# {r.label}: {err}", file=sys.stderr)
        elif args.command == "remap":
            _emit([("checkpoint", pipeline.cmd_remap(cfg))])
        elif args.command == "derive":
            _emit([("arch", pipeline.cmd_derive(cfg))])
        else:
            res = pipeline.cmd_eval(cfg)
            _emit([(res["metric_name"], f"{res['metric']:.6f}"), ("source", res["source"])])
    except ConfigError as e:
        print(f"fna: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, CheckpointError) as e:
        print(f"fna: I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except (PhaseError, DivergenceError, NonFiniteError, FloatingPointError) as e:
        cause = e.__cause__
        if isinstance(cause, (OSError, CheckpointError)):
            print(f"fna: I/O error: {e}", file=sys.stderr)
            return EXIT_IO
        print(f"fna: runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
