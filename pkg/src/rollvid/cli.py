"""Command-line front end.

Exit codes: 0 success, 1 configuration/usage/file-format problems,
2 runtime or numerical failures mid-run.
"""

import argparse
import json
import sys

import numpy as np

from .dump import frame_stats, read_dump, write_dump
from .errors import ConfigurationError, DumpFormatError, RollvidError
from .metrics import MetricsReport
from .pipeline import generate, load_config, resolve_config, run_ablation
from .scene import scene_video


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the CLI contract wants 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _overrides(args) -> dict:
    overrides = load_config(args.config) if args.config else {}
    if getattr(args, "frames", None) is not None:
        overrides["n_frames"] = args.frames
    if getattr(args, "out", None) is not None:
        overrides["out_dir"] = args.out
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    return overrides


def _print_report(report: MetricsReport, indent="  "):
    row = report.as_row("-", "-")
    for name in ("subject_consistency", "background_consistency",
                 "motion_smoothness", "temporal_flicker",
                 "lowfreq_coherence"):
        print(f"{indent}{name}: {row[name]:+.6f}")


def _cmd_generate(args) -> int:
    cfg = resolve_config(_overrides(args))
    dump, report = generate(cfg)
    print(f"wrote {dump.path} ({report.n_frames} frames, "
          f"config {cfg.config_hash})")
    _print_report(report)
    return 0


def _cmd_ablate(args) -> int:
    cfg = resolve_config(_overrides(args))
    results = run_ablation(cfg)
    header = f"{'row':<4}{'subject':>12}{'background':>12}{'lowfreq':>12}"
    print(header)
    for label, row_cfg, report in results:
        print(f"{label:<4}{report.subject_consistency:>12.6f}"
              f"{report.background_consistency:>12.6f}"
              f"{report.lowfreq_coherence:>12.6f}")
    print(f"wrote {cfg.out_dir / (cfg.run_id + '_ablation.csv')}")
    return 0


def _cmd_inspect(args) -> int:
    dump = read_dump(args.dump)
    print(json.dumps(dump.header, indent=2, sort_keys=True))
    print(f"{'frame':>6}{'min':>12}{'max':>12}{'mean':>12}{'std':>12}")
    for k, lo, hi, mean, std in frame_stats(dump):
        print(f"{k:>6}{lo:>12.5f}{hi:>12.5f}{mean:>12.5f}{std:>12.5f}")
    return 0


def _cmd_demo_scene(args) -> int:
    cfg = resolve_config(_overrides(args))
    frames, masks = scene_video(cfg.scene, cfg.n_frames)
    base = cfg.out_dir / f"{cfg.run_id}_scene.vdump"
    write_dump(base, frames, cfg.config_hash, cfg.seed)
    mask_path = cfg.out_dir / f"{cfg.run_id}_scene_masks.vdump"
    write_dump(mask_path, masks[:, None, :, :].astype(np.float32),
               cfg.config_hash, cfg.seed)
    print(f"wrote {base}")
    print(f"wrote {mask_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rollvid",
                     description="rolling-queue latent video synthesis")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="run the full generation loop")
    gen.add_argument("--config", help="JSON config file")
    gen.add_argument("--frames", type=int, help="override n_frames")
    gen.add_argument("--out", help="override output directory")
    gen.add_argument("--seed", type=int, help="override run seed")
    gen.set_defaults(func=_cmd_generate)

    abl = sub.add_parser("ablate", help="run the 4-row component ablation")
    abl.add_argument("--config", help="JSON config file")
    abl.add_argument("--out", help="override output directory")
    abl.add_argument("--seed", type=int, help="override run seed")
    abl.set_defaults(func=_cmd_ablate)

    ins = sub.add_parser("inspect", help="print a dump's header and stats")
    ins.add_argument("dump", help="path to a .vdump file")
    ins.set_defaults(func=_cmd_inspect)

    demo = sub.add_parser("demo-scene",
                          help="write the ground-truth scene video")
    demo.add_argument("--config", help="JSON config file")
    demo.add_argument("--frames", type=int, help="override n_frames")
    demo.add_argument("--out", help="override output directory")
    demo.add_argument("--seed", type=int, help="override run seed")
    demo.set_defaults(func=_cmd_demo_scene)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except (ConfigurationError, DumpFormatError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except RollvidError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
