"""Command line: ``avsep {phantom,train,segment,eval}``."""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from .learn import LikelihoodModel
from .phantom import PRESETS, generate, load_scene, preset_spec, save_scene
from .pipeline import MethodConfig, evaluate, separate_scene, train, write_reports
from .volume import read_rvol, write_rvol

_METHODS = {"gc": "GC", "ddcp": "DDCP", "ddcp-saf": "DDCP_SAF"}


class UsageError(Exception):
    pass


def _cmd_phantom(args):
    overrides = {k: v for k, v in (("contact_len", args.contact_len), ("radius", args.radius),
                                   ("contrast", args.contrast), ("noise", args.noise))
                 if v is not None}
    if args.size is not None:
        overrides["dims"] = (args.size,) * 3
    scene = generate(preset_spec(args.preset, **overrides), args.seed)
    save_scene(scene, args.out)
    print(f"wrote {args.preset} scene to {args.out}")


def _cmd_train(args):
    scenes = [load_scene(d) for d in args.scenes]
    model = train(scenes, saf=args.saf, bins=args.bins)
    model.save(args.out)
    p = model.params
    print(f"wrote model to {args.out} (alpha_path={p['alpha_path']}, beta_path={p['beta_path']}, "
          f"{p['n_same']} all-same / {p['n_mixed']} mixed paths)")


def _cmd_segment(args):
    method = _METHODS[args.method]
    model = None
    if method != "GC":
        if args.model is None:
            raise UsageError(f"--model is required for --method {args.method}")
        model = LikelihoodModel.load(args.model)
    scene = load_scene(args.scene)
    t0 = time.perf_counter()
    res = separate_scene(scene, MethodConfig(method, args.n), model, gt_mask=args.gt_mask)
    seconds = time.perf_counter() - t0
    write_rvol(args.out, res.labels)
    stats = {"method": method, "N": args.n, "energy": res.energy, "n_cliques": res.n_cliques,
             "gt_mask": args.gt_mask, "timing": res.timing, "seconds": seconds}
    Path(args.out).with_suffix(".json").write_text(json.dumps(stats, indent=1) + "\n")
    print(f"wrote labels to {args.out} ({seconds:.1f} s)")


def _cmd_eval(args):
    scene = load_scene(args.scene)
    result = read_rvol(args.result)
    stats_path = Path(args.result).with_suffix(".json")
    stats = json.loads(stats_path.read_text()) if stats_path.exists() else {}
    report = evaluate(result, scene, name=Path(args.scene).name,
                      method=stats.get("method", ""), N=stats.get("N", 0),
                      seconds=stats.get("seconds", 0.0))
    write_reports(args.out, [report])
    print(f"PA∪PV length rate {report.len_both:.1f}%, volume rate {report.vol_both:.1f}%")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="avsep", description="Artery/vein separation on phantom scenes")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate a synthetic scene directory")
    p.add_argument("--preset", required=True, choices=PRESETS)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--contact-len", type=float)
    p.add_argument("--radius", type=float)
    p.add_argument("--contrast", type=float)
    p.add_argument("--noise", type=float)
    p.add_argument("--size", type=int, help="cubic volume edge in voxels (default 96)")
    p.set_defaults(func=_cmd_phantom)

    p = sub.add_parser("train", help="fit a likelihood model on ground-truth scenes")
    p.add_argument("--scenes", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--saf", action="store_true", help="also fit the airway/interlobar tables")
    p.add_argument("--bins", type=int, default=64)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("segment", help="separate arteries from veins in a scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--model")
    p.add_argument("--method", required=True, choices=sorted(_METHODS))
    p.add_argument("--n", type=int, default=3, help="robust tolerance N")
    p.add_argument("--out", required=True)
    p.add_argument("--gt-mask", action="store_true", help="use the ground-truth vessel mask")
    p.set_defaults(func=_cmd_segment)

    p = sub.add_parser("eval", help="score a labelling against the scene ground truth")
    p.add_argument("--scene", required=True)
    p.add_argument("--result", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_eval)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (UsageError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"avsep {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
