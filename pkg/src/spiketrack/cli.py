"""Command-line entry point: ``spiketrack <subcommand> [options]``.

Global options may appear before or after the subcommand. Precedence is
explicit flag > ``--config`` file > built-in default.

Exit codes: 0 success, 1 validation error, 2 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import warnings
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .geometry import DEFAULT_LAMBDA, DEFAULT_C_B, BBox, InvalidBoxError, EmptyBatchError
from .head import NMS_IOU, TAU_HIGH, TAU_LOW, Detection, decode_predictions
from .metrics import evaluate, format_report
from .mot_io import (MOTFormatError, SequenceRecord, load_sequence, read_seqinfo, write_results,
                     write_seqinfo, write_sequence)
from .spiking import D_MAX, DEFAULT_TIMESTEPS
from .synthetic import (DetectorNoise, SceneValidationError, SyntheticScene, crossing_scene,
                        gen_synthetic)
from .tracker import TrackerConfig, run_tracker

EXIT_OK, EXIT_VALIDATION, EXIT_IO = 0, 1, 2

DEFAULTS = {
    "seed": 0,
    "cost": "iou",
    "tau_high": TAU_HIGH,
    "tau_low": TAU_LOW,
    "nms_iou": NMS_IOU,
    "lam": DEFAULT_LAMBDA,
    "timesteps": DEFAULT_TIMESTEPS,
    "dmax": D_MAX,
    # reachable only through --config
    "gates": (0.3, 0.4, 0.5),
    "confirm_hits": 2,
    "max_lost": 30,
    "tai_overlap": 0.5,
    "use_tai": True,
    "use_suppressed": True,
    "hidden": 256,
    "lr": 3e-3,
    "batch_size": 64,
}

# config-file spellings that differ from the internal key
_ALIASES = {"lambda": "lam", "tau-high": "tau_high", "tau-low": "tau_low", "nms-iou": "nms_iou",
            "d_max": "dmax", "T": "timesteps"}


class ValidationError(ValueError):
    pass


def _coerce(key: str, raw: str):
    default = DEFAULTS[key]
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, tuple):
            vals = tuple(float(v) for v in raw.replace(",", " ").split())
            if len(vals) != len(default):
                raise ValueError(raw)
            return vals
        return type(default)(raw)
    except ValueError:
        raise ValidationError(f"config key {key!r}: cannot parse {raw!r}") from None


def read_config(path) -> dict:
    """``key=value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{lineno}: expected key=value")
            key, val = (s.strip() for s in line.split("=", 1))
            key = _ALIASES.get(key, key.replace("-", "_"))
            if key not in DEFAULTS:
                raise ValidationError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = _coerce(key, val)
    return out


def _add_global(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("global options")
    S = argparse.SUPPRESS
    g.add_argument("--seed", type=int, default=S)
    g.add_argument("--cost", choices=("iou", "nwd"), default=S, help="association similarity")
    g.add_argument("--tau-high", dest="tau_high", type=float, default=S)
    g.add_argument("--tau-low", dest="tau_low", type=float, default=S)
    g.add_argument("--nms-iou", dest="nms_iou", type=float, default=S)
    g.add_argument("--lambda", dest="lam", type=float, default=S, help="NWD normalization scale")
    g.add_argument("--timesteps", type=int, default=S, metavar="T")
    g.add_argument("--dmax", type=int, default=S, metavar="D")
    g.add_argument("--config", default=S, metavar="FILE", help="key=value overrides")


def resolve_settings(ns: argparse.Namespace) -> dict:
    s = dict(DEFAULTS)
    if getattr(ns, "config", None):
        s.update(read_config(ns.config))
    for k in DEFAULTS:
        if hasattr(ns, k):
            s[k] = getattr(ns, k)
    s["explicit"] = {k for k in ("timesteps", "dmax") if hasattr(ns, k)}
    _check_settings(s)
    return s


def _check_settings(s: dict) -> None:
    if not 0 <= s["tau_low"] < s["tau_high"] <= 1:
        raise ValidationError("need 0 <= tau-low < tau-high <= 1")
    if not 0 < s["nms_iou"] < 1:
        raise ValidationError("nms-iou must lie in (0, 1)")
    if s["lam"] <= 0:
        raise ValidationError("lambda must be positive")
    if s["timesteps"] < 1 or s["dmax"] < 1:
        raise ValidationError("timesteps and dmax must be >= 1")
    if s["cost"] not in ("iou", "nwd"):
        raise ValidationError("cost must be iou or nwd")


def tracker_config(s: dict) -> TrackerConfig:
    return TrackerConfig(tau_high=s["tau_high"], tau_low=s["tau_low"], nms_iou=s["nms_iou"],
                         gates=tuple(s["gates"]), cost=s["cost"], nwd_lambda=s["lam"],
                         confirm_hits=s["confirm_hits"], max_lost=s["max_lost"],
                         tai_overlap=s["tai_overlap"], use_tai=s["use_tai"],
                         use_suppressed=s["use_suppressed"])


def regressor_config(s: dict, steps: int):
    from .train import RegressorConfig

    return RegressorConfig(hidden=s["hidden"], timesteps=s["timesteps"], d_max=s["dmax"], steps=steps,
                           batch_size=s["batch_size"], lr=s["lr"], lam=s["lam"], seed=s["seed"])


# ---------------------------------------------------------------- track

def _load_images(img_dir: Path) -> list[Path]:
    files = sorted(p for p in img_dir.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".bmp"))
    if not files:
        raise FileNotFoundError(f"no images in {img_dir}")
    return files


def _detect_images(files: Sequence[Path], s: dict, weights: Optional[str]) -> dict[int, list[Detection]]:
    from PIL import Image

    from .network import DetectorConfig, SpikeDetector

    if weights:
        det = SpikeDetector.load(weights)
        over = {}
        if "timesteps" in s["explicit"]:
            over["timesteps"] = s["timesteps"]
        if "dmax" in s["explicit"]:
            over["d_max"] = s["dmax"]
        det.config = replace(det.config, **over)
    else:
        warnings.warn("no --weights given: the detector is randomly initialized, "
                      "detections will be meaningless", RuntimeWarning)
        det = SpikeDetector(DetectorConfig(timesteps=s["timesteps"], d_max=s["dmax"], seed=s["seed"]))
    out = {}
    for f, path in enumerate(files, 1):
        img = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0
        h = det(img.transpose(2, 0, 1)[None])
        out[f] = decode_predictions(h, (s["tau_high"], s["tau_low"]), (img.shape[1], img.shape[0]))
    return out


def cmd_track(args, s: dict) -> int:
    n_frames = None
    if args.det:
        recs = load_sequence(args.det, "det")
        frames = {f: [Detection(r.box, float(r.conf)) for r in rs] for f, rs in recs.items()}
    else:
        img_dir = Path(args.images)
        seq_dir = img_dir.parent
        if (seq_dir / "seqinfo.ini").exists():
            n_frames = read_seqinfo(seq_dir / "seqinfo.ini")["seqLength"]
        frames = _detect_images(_load_images(img_dir), s, args.weights)
    if args.dump_det:
        write_sequence(args.dump_det, {f: [SequenceRecord(f, -1, *d.box.tlwh(), d.score) for d in ds]
                                       for f, ds in frames.items()})
    res = run_tracker(frames, tracker_config(s), n_frames)
    write_results(args.out, res)
    n = sum(len(v) for v in res.values())
    ids = {o.track_id for v in res.values() for o in v}
    print(f"tracked {len(res)} frames: {n} boxes, {len(ids)} identities -> {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------- eval

def cmd_eval(args, s: dict) -> int:
    gt = load_sequence(args.gt, "gt")
    pred = load_sequence(args.pred, "result")
    rep = evaluate(gt, pred, args.iou)
    name = args.name or Path(args.pred).stem
    print(format_report([(name, rep)]))
    print()
    row = {"name": name, **rep.as_dict()}
    w = csv.DictWriter(sys.stdout, fieldnames=list(row), lineterminator="\n")
    w.writeheader()
    w.writerow(row)
    if args.json:
        Path(args.json).write_text(json.dumps(row, indent=2) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------- gen

def cmd_gen(args, s: dict) -> int:
    if args.scene == "crossing":
        scene = crossing_scene(s["seed"], args.frames)
    else:
        noise = DetectorNoise(jitter=args.jitter, drop_rate=args.drop_rate, fp_rate=args.fp_rate,
                              score_range=(args.min_score, 1.0))
        scene = SyntheticScene(width=args.width, height=args.height, n_frames=args.frames,
                               n_objects=args.objects, min_size=args.min_size, max_size=args.max_size,
                               max_pair_iou=args.max_pair_iou, noise=noise, seed=s["seed"])
    out = gen_synthetic(scene, render=args.render)
    root = Path(args.out)
    (root / "gt").mkdir(parents=True, exist_ok=True)
    (root / "det").mkdir(exist_ok=True)
    write_sequence(root / "gt" / "gt.txt", out.gt)
    write_sequence(root / "det" / "det.txt", out.det)
    write_seqinfo(root / "seqinfo.ini", root.name, scene.width, scene.height, scene.n_frames)
    if out.frames is not None:
        from PIL import Image

        (root / "img1").mkdir(exist_ok=True)
        for t, img in enumerate(out.frames, 1):
            Image.fromarray(img).save(root / "img1" / f"{t:06d}.png")
    print(f"wrote {scene.n_frames} frames, {len(out.objects)} objects -> {root}")
    return EXIT_OK


# ---------------------------------------------------------------- loss-bench

def loss_bench_rows(sizes: Sequence[float], shifts: Sequence[float], lam: float) -> list[dict]:
    """IoU and NWD of a square box against itself shifted diagonally by ``shift`` px.

    ``nwd_adaptive`` uses the factor of a batch holding just that ground truth;
    ``nwd_fixed`` uses the shared fallback constant.
    """
    from .geometry import batch_norm_factor, iou, nwd_similarity

    rows = []
    for size in sizes:
        gt = BBox(0.0, 0.0, size, size)
        c = batch_norm_factor([gt], lam).c_b
        for d in shifts:
            b = gt.shifted(d, d)
            rows.append({"size": size, "shift": d, "iou": iou(b, gt),
                         "nwd_adaptive": nwd_similarity(b, gt, c),
                         "nwd_fixed": nwd_similarity(b, gt, DEFAULT_C_B)})
    return rows


def cmd_loss_bench(args, s: dict) -> int:
    sizes = [float(v) for v in args.sizes.split(",")]
    if any(v <= 0 for v in sizes):
        raise ValidationError("sizes must be positive")
    shifts = np.linspace(0.0, args.max_shift, args.points)
    rows = loss_bench_rows(sizes, shifts, s["lam"])
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "loss_bench.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 3, figsize=(12, 3.5), sharey=True)
    for key, ax in zip(("iou", "nwd_adaptive", "nwd_fixed"), axes):
        for size in sizes:
            r = [x for x in rows if x["size"] == size]
            ax.plot([x["shift"] for x in r], [x[key] for x in r], label=f"{size:g} px")
        ax.set_title(key)
        ax.set_xlabel("diagonal shift (px)")
    axes[0].set_ylabel("similarity")
    axes[0].legend()
    fig.tight_layout()
    fig.savefig(out / "loss_bench.png", dpi=100)
    plt.close(fig)
    print(f"wrote {len(rows)} rows -> {out / 'loss_bench.csv'}, {out / 'loss_bench.png'}")
    return EXIT_OK


# ---------------------------------------------------------------- demo-train

def cmd_demo_train(args, s: dict) -> int:
    from .train import mean_nwd, random_boxes, train_regressor

    rng = np.random.default_rng([s["seed"], 3])
    canvas = (args.canvas, args.canvas)
    train = random_boxes(rng, args.n_boxes, args.min_size, args.max_size, canvas)
    held = random_boxes(rng, args.n_boxes, args.min_size, args.max_size, canvas)
    cfg = regressor_config(s, args.steps)
    res = train_regressor(train, cfg, log_every=args.log_every)
    score = mean_nwd(res.model, held, s["lam"])
    print(f"held-out mean NWD {score:.4f} after {cfg.steps} steps in {res.seconds:.1f} s")
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        np.savetxt(out / "loss_curve.csv", np.c_[np.arange(1, len(res.step_loss) + 1), res.step_loss],
                   delimiter=",", header="step,loss", comments="", fmt=["%d", "%.6f"])
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.plot(res.step_loss, lw=0.5, alpha=0.5, label="step")
        k = max(1, len(res.step_loss) // 50)
        smooth = np.convolve(res.step_loss, np.ones(k) / k, mode="valid")
        ax.plot(np.arange(k - 1, len(res.step_loss)), smooth, label=f"mean of {k}")
        ax.set_xlabel("step")
        ax.set_ylabel("1 - NWD")
        ax.legend()
        fig.tight_layout()
        fig.savefig(out / "loss_curve.png", dpi=100)
        plt.close(fig)
    return EXIT_OK


# ---------------------------------------------------------------- ablate

def cmd_ablate(args, s: dict) -> int:
    from .ablation import (LAMBDA_VALUES, T_VALUES, ablation_lambda, ablation_timestep,
                           format_lambda_table, format_timestep_table, toy_dataset)

    base = regressor_config(s, args.steps)
    tc = tracker_config(s)
    parts = []
    if args.which in ("timestep", "both"):
        ds = toy_dataset("small", s["seed"])
        rows = ablation_timestep(ds, T_VALUES, base, tc)
        parts.append("Timestep sweep\n" + format_timestep_table(rows))
    if args.which in ("lambda", "both"):
        ds = toy_dataset("mixed", s["seed"])
        rows = ablation_lambda(ds, LAMBDA_VALUES, True, base, tc)
        parts.append("Lambda sweep\n" + format_lambda_table(rows))
    text = "\n\n".join(parts)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    return EXIT_OK


# ---------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spiketrack", description=__doc__.splitlines()[0])
    _add_global(p)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("track", help="detections or images -> MOT results")
    src = t.add_mutually_exclusive_group(required=True)
    src.add_argument("--det", help="MOT det.txt")
    src.add_argument("--images", help="directory of frames (sorted by name)")
    t.add_argument("--weights", help="detector checkpoint (.npz)")
    t.add_argument("--out", required=True, help="result file")
    t.add_argument("--dump-det", help="also write the detections as det.txt")
    t.set_defaults(func=cmd_track)

    e = sub.add_parser("eval", help="gt + results -> metrics")
    e.add_argument("--gt", required=True)
    e.add_argument("--pred", required=True)
    e.add_argument("--iou", type=float, default=0.5, help="CLEAR / IDF1 match threshold")
    e.add_argument("--name")
    e.add_argument("--json", help="also write the metric row as JSON")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gen", help="synthetic sequence in MOTChallenge layout")
    g.add_argument("--out", required=True, help="sequence directory")
    g.add_argument("--scene", choices=("random", "crossing"), default="random")
    g.add_argument("--frames", type=int, default=50)
    g.add_argument("--objects", type=int, default=5)
    g.add_argument("--width", type=int, default=320)
    g.add_argument("--height", type=int, default=256)
    g.add_argument("--min-size", type=float, default=16.0)
    g.add_argument("--max-size", type=float, default=48.0)
    g.add_argument("--max-pair-iou", type=float, default=1.0)
    g.add_argument("--jitter", type=float, default=0.0)
    g.add_argument("--drop-rate", type=float, default=0.0)
    g.add_argument("--fp-rate", type=float, default=0.0)
    g.add_argument("--min-score", type=float, default=1.0)
    g.add_argument("--render", action="store_true", help="also write img1/*.png")
    g.set_defaults(func=cmd_gen)

    lb = sub.add_parser("loss-bench", help="IoU vs NWD sensitivity curves")
    lb.add_argument("--out-dir", required=True)
    lb.add_argument("--sizes", default="4,8,16,32,64,128")
    lb.add_argument("--max-shift", type=float, default=8.0)
    lb.add_argument("--points", type=int, default=33)
    lb.set_defaults(func=cmd_loss_bench)

    d = sub.add_parser("demo-train", help="train the toy spiking box regressor")
    d.add_argument("--steps", type=int, default=2000)
    d.add_argument("--n-boxes", type=int, default=500)
    d.add_argument("--min-size", type=float, default=8.0)
    d.add_argument("--max-size", type=float, default=96.0)
    d.add_argument("--canvas", type=float, default=256.0)
    d.add_argument("--log-every", type=int, default=200)
    d.add_argument("--out-dir", help="loss curve CSV + PNG")
    d.set_defaults(func=cmd_demo_train)

    a = sub.add_parser("ablate", help="timestep and lambda sweeps")
    a.add_argument("--which", choices=("timestep", "lambda", "both"), default="both")
    a.add_argument("--steps", type=int, default=1000, help="training steps per run")
    a.add_argument("--out", help="also write the tables here")
    a.set_defaults(func=cmd_ablate)

    for sp in (t, e, g, lb, d, a):
        _add_global(sp)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; those are validation errors here
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    try:
        settings = resolve_settings(args)
        return args.func(args, settings)
    except (ValidationError, MOTFormatError, SceneValidationError, InvalidBoxError,
            EmptyBatchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
