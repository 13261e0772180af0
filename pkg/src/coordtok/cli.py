"""Command-line entry point.

Every subcommand writes JSON (stdout or ``--out``); ``--table`` prints a
plain-text table instead where one exists.  Exit status: 0 success, 1 data
error, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import codec, diagnostics, metrics, rewards, seqfmt
from .io import LoadError, load_ground_truth, load_predictions
from .seqfmt import PayloadKind

log = logging.getLogger("coordtok")


class DataError(Exception):
    pass


def _emit(args, payload, table=None):
    text = table if (args.table and table is not None) else json.dumps(payload, indent=2,
                                                                        sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        sys.stdout.write(text + "\n")


def _read_input(args) -> str:
    if args.input and args.input != "-":
        return Path(args.input).read_text()
    return sys.stdin.read()


def _kind(args) -> PayloadKind:
    return PayloadKind.parse(args.kind)


def _load(args, kind=PayloadKind.BOX):
    gt = load_ground_truth(args.gt)
    pred = load_predictions(args.pred, gt, kind)
    return gt, pred


# ---------------------------------------------------------------------------
# codec and grammar

def _axis_extents(args, n):
    """x/y alternate when the count is even; otherwise everything uses the width."""
    w, h = args.width, args.height or args.width
    codec.ImageExtent(w, h)
    if n % 2:
        return [w] * n
    return [w if i % 2 == 0 else h for i in range(n)]


def cmd_encode(args):
    ext = _axis_extents(args, len(args.values))
    bins = [codec.quantize(v, e) for v, e in zip(args.values, ext)]
    _emit(args, {"bins": bins, "text": "".join(codec.bin_to_text(b) for b in bins)})


def cmd_decode(args):
    bins = []
    for arg in args.values:
        if arg.isdigit():
            bins.append(int(arg))
            continue
        for t in seqfmt.lex(arg):
            v = seqfmt.coord_value(t)
            if v is not None:
                bins.append(v)
            elif t.strip(" ,"):
                raise DataError(f"not a coordinate: {t!r}")
    ext = _axis_extents(args, len(bins))
    _emit(args, {"bins": bins, "values": [codec.dequantize(b, e) for b, e in zip(bins, ext)]})


def _record_dict(r: seqfmt.PredictionRecord) -> dict:
    d = {"phrase": r.phrase, "kind": r.kind.value, "absent": r.absent,
         "geometries": [list(g) for g in r.geometries]}
    if r.keypoints is not None:
        d["keypoints"] = [{n: (None if p is None else list(p)) for n, p in kp.items()}
                          for kp in r.keypoints]
    return d


def _record_from(d) -> seqfmt.PredictionRecord:
    try:
        kps = d.get("keypoints")
        if kps is not None:
            kps = [{n: (None if p is None else tuple(p)) for n, p in kp.items()} for kp in kps]
        return seqfmt.PredictionRecord(d["phrase"], PayloadKind.parse(d.get("kind", "box")),
                                       [tuple(g) for g in d.get("geometries", [])],
                                       bool(d.get("absent", False)), kps)
    except (KeyError, TypeError, AttributeError) as e:
        raise DataError(f"bad record {d!r}: {e}") from None


def cmd_parse(args):
    records, diags = seqfmt.parse(_read_input(args).rstrip("\n"), _kind(args), strict=args.strict)
    _emit(args, {"records": [_record_dict(r) for r in records],
                 "diagnostics": [d.to_dict() for d in diags]})


def cmd_serialize(args):
    doc = json.loads(_read_input(args))
    items = doc["records"] if isinstance(doc, dict) else doc
    text = seqfmt.serialize_text([_record_from(d) for d in items])
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        sys.stdout.write(text + "\n")


# ---------------------------------------------------------------------------
# evaluation

def cmd_eval_det(args):
    gt, pred = _load(args, _kind(args))
    ids = gt.image_ids
    res = metrics.detection_f1([pred.get(i).boxes for i in ids], [gt.boxes(i) for i in ids])
    out = res.to_dict()
    out["parse_diagnostics"] = len(pred.diagnostics)
    _emit(args, out, res.table())


def cmd_eval_point(args):
    gt, pred = _load(args, PayloadKind.POINT)
    ids = gt.image_ids
    R, P, F1 = metrics.point_f1([pred.get(i).points for i in ids], [gt.masks(i) for i in ids])
    _emit(args, {"recall": R, "precision": P, "f1": F1},
          metrics.format_table(["Recall", "Precision", "F1"], [[R, P, F1]]))


def cmd_eval_kpt(args):
    gt, pred = _load(args, PayloadKind.KEYPOINT_JSON)
    ids = [i for i in gt.image_ids if gt.keypoint_instances(i)]
    if not ids:
        raise DataError("ground truth has no keypoint annotations")
    res = metrics.keypoint_f1([pred.get(i).keypoints for i in ids],
                              [gt.keypoint_instances(i) for i in ids])
    out = res.to_dict()
    out["f1_moks"] = out["f1_mean"]
    _emit(args, out, metrics.format_table(["F1@OKS 0.5", "F1@OKS 0.95", "F1@mOKS"],
                                          [[res.f1_at_50, res.f1_at_95, res.f1_mean]]))


def cmd_eval_count(args):
    gt, pred = _load(args, _kind(args))
    ids = gt.image_ids
    pc = {i: len(pred.get(i).boxes) + len(pred.get(i).points) for i in ids}
    gc = {i: gt.count(i) for i in ids}
    mae = metrics.count_mae(pc, gc)
    _emit(args, {"mae": mae, "images": len(ids)},
          metrics.format_table(["MAE"], [[f"{mae:.3f}"]]))


def cmd_eval_gui(args):
    """One query per ground-truth annotation; the answer is the first point (or
    box center) predicted for that annotation's label in its image."""
    gt, pred = _load(args, PayloadKind.POINT)
    points, targets = [], []
    for i in gt.image_ids:
        p = pred.get(i)
        for a in gt.annotations_for(i):
            label = gt.categories[a.category_id]
            hit = next((q.point for q in p.points if q.label == label), None)
            if hit is None:
                b = next((q.box for q in p.boxes if q.label == label), None)
                hit = None if b is None else ((b[0] + b[2]) / 2, (b[1] + b[3]) / 2)
            points.append(hit)
            targets.append(a.box)
    acc = metrics.gui_accuracy(points, targets)
    _emit(args, {"accuracy": acc, "queries": len(targets)},
          metrics.format_table(["Accuracy"], [[acc]]))


def cmd_reward(args):
    kind = _kind(args)
    gt, pred = _load(args, kind)
    per_image = {}
    for i in gt.image_ids:
        p = pred.get(i)
        if kind is PayloadKind.POINT:
            masks = gt.masks(i)
            if not masks:
                continue
            rep = rewards.point_in_mask_reward(p.points, masks, args.mode)
        else:
            gts = gt.boxes(i)
            if not gts:
                continue
            rep = rewards.box_iou_reward(p.boxes, gts, args.mode)
        per_image[str(i)] = rep.to_dict()
    vals = [r["reward"] for r in per_image.values()]
    _emit(args, {"mode": args.mode, "mean_reward": sum(vals) / len(vals) if vals else 0.0,
                 "images": per_image})


def cmd_sweep(args):
    gt, pred = _load(args, PayloadKind.BOX)
    if not pred.has_scores:
        raise DataError("sweep needs structured predictions carrying a score per box")
    ids = gt.image_ids
    scored = [[(b, 1.0 if s is None else s) for b, s in zip(pred.get(i).boxes, pred.get(i).scores)]
              for i in ids]
    t, best, res = metrics.score_threshold_sweep(scored, [gt.boxes(i) for i in ids])
    out = {"best_threshold": t, "best_f1_at_50": best, "result": res.to_dict()}
    _emit(args, out, metrics.format_table(["Threshold", "F1@0.5"], [[f"{t:.2f}", best]]))


def cmd_diagnose(args):
    gt, pred = _load(args, PayloadKind.BOX)
    ids = gt.image_ids
    seqs = [pred.get(i).tokens for i in ids]
    gts = [gt.boxes(i) for i in ids]
    exts = [gt.extent(i) for i in ids]
    reports = [diagnostics.strip_and_reeval(seqs, gts, exts, d) for d in diagnostics.DETECTORS]
    flags = {}
    for i, s, g in zip(ids, seqs, gts):
        dup = diagnostics.detect_duplicates(s, len(g))
        records, _ = seqfmt.parse(s, PayloadKind.BOX)
        big = diagnostics.detect_large_box(records, gt.extent(i))
        if dup.flagged or big.flagged:
            flags[str(i)] = {"duplicates": dup.to_dict(), "large_box": big.to_dict()}
    out = {r.detector: r.to_dict() for r in reports}
    out["flagged"] = flags
    table = "\n\n".join(r.table() for r in reports)
    _emit(args, out, table)


# ---------------------------------------------------------------------------
# toy world

def _toy_config(args):
    from .toy.experiment import ExperimentConfig
    seeds = tuple(args.seeds) if getattr(args, "seeds", None) else (args.seed,)
    return ExperimentConfig(seeds=seeds, sft_steps=args.sft_steps, grpo_steps=args.grpo_steps,
                            batch_size=args.batch_size, group_size=args.group_size,
                            beta=args.beta, clip_eps=args.clip_eps, eval_scenes=args.eval_scenes,
                            log_every=args.log_every)


def cmd_toy(args):
    from .toy import experiment as ex
    cfg = _toy_config(args)
    if args.toy_cmd == "experiment":
        rep = ex.run_experiment(cfg)
        _emit(args, rep.to_dict(), rep.table())
        return
    seed = cfg.seeds[0]
    scenes = ex.held_out_scenes(cfg.eval_scenes, cfg.repeat_prob)
    policy, losses = ex.train_sft(cfg, seed)
    out = {"seed": seed, "sft_loss": losses, "sft": ex.evaluate_policy(policy, scenes).to_dict()}
    if args.toy_cmd == "grpo":
        policy, ref, rw, kl = ex.train_grpo(policy, cfg, seed)
        out.update(grpo_reward=rw, grpo_kl=kl, ref_checksum=ref.checksum(),
                   grpo=ex.evaluate_policy(policy, scenes).to_dict())
    rows = [[out[k]["f1_at_50"], out[k]["duplicates"]["removal_ratio"]]
            for k in ("sft", "grpo") if k in out]
    names = [k.upper() for k in ("sft", "grpo") if k in out]
    _emit(args, out, metrics.format_table(["F1@0.5", "Remov."], rows, row_names=names))


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    def flags(suppress):
        # subparsers must not overwrite values given before the subcommand
        d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
        f = argparse.ArgumentParser(add_help=False)
        f.add_argument("--out", default=d(None), help="write output here instead of stdout")
        f.add_argument("--table", action="store_true", default=d(False),
                       help="plain-text table instead of JSON")
        f.add_argument("--seed", type=int, default=d(0))
        f.add_argument("--threads", type=int, default=d(None),
                       help="worker threads for compiled kernels")
        f.add_argument("-v", "--verbose", action="store_true", default=d(False))
        return f

    common = flags(True)
    p = argparse.ArgumentParser(prog="coordtok", description=__doc__.splitlines()[0],
                                parents=[flags(False)])
    sub = p.add_subparsers(dest="cmd", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_, parents=[common])
        sp.set_defaults(fn=fn)
        return sp

    for name, fn, help_ in (("encode", cmd_encode, "pixels -> bins"),
                            ("decode", cmd_decode, "bins or <N> tokens -> pixels")):
        sp = add(name, fn, help_)
        sp.add_argument("--width", type=float, required=True)
        sp.add_argument("--height", type=float)
        sp.add_argument("values", nargs="+", type=float if name == "encode" else str)

    sp = add("parse", cmd_parse, "raw output -> records + diagnostics")
    sp.add_argument("--input", "-i")
    sp.add_argument("--kind", default="box", choices=[k.value for k in PayloadKind])
    sp.add_argument("--strict", action="store_true")
    sp = add("serialize", cmd_serialize, "records JSON -> raw text")
    sp.add_argument("--input", "-i")

    def gt_pred(sp, kind=True):
        sp.add_argument("--gt", required=True)
        sp.add_argument("--pred", required=True)
        if kind:
            sp.add_argument("--kind", default="box", choices=[k.value for k in PayloadKind])

    gt_pred(add("eval-det", cmd_eval_det, "detection R/P/F1 over IoU thresholds"))
    gt_pred(add("eval-point", cmd_eval_point, "point-in-mask F1"), kind=False)
    gt_pred(add("eval-kpt", cmd_eval_kpt, "keypoint F1 over OKS thresholds"), kind=False)
    gt_pred(add("eval-count", cmd_eval_count, "counting MAE"))
    gt_pred(add("eval-gui", cmd_eval_gui, "point-in-box accuracy"), kind=False)
    sp = add("reward", cmd_reward, "per-image geometry-aware rewards")
    gt_pred(sp)
    sp.add_argument("--mode", default="exclusive", choices=rewards.MODES)
    gt_pred(add("sweep", cmd_sweep, "best confidence threshold"), kind=False)
    gt_pred(add("diagnose", cmd_diagnose, "duplicate / large-box detection and ablation"),
            kind=False)

    toy = add("toy", cmd_toy, "synthetic SFT / GRPO experiments")
    toy.add_argument("toy_cmd", choices=["sft", "grpo", "experiment"])
    toy.add_argument("--seeds", type=int, nargs="+")
    toy.add_argument("--sft-steps", type=int, default=3000)
    toy.add_argument("--grpo-steps", type=int, default=200)
    toy.add_argument("--batch-size", type=int, default=32)
    toy.add_argument("--group-size", type=int, default=8)
    toy.add_argument("--beta", type=float, default=0.01)
    toy.add_argument("--clip-eps", type=float, default=0.2)
    toy.add_argument("--eval-scenes", type=int, default=500)
    toy.add_argument("--log-every", type=int, default=0)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads:
        try:
            import numba
            numba.set_num_threads(max(1, min(args.threads, numba.config.NUMBA_NUM_THREADS)))
        except (ImportError, ValueError):
            pass
    try:
        args.fn(args)
    except (DataError, LoadError, seqfmt.ParseError, ValueError, KeyError,
            FileNotFoundError, json.JSONDecodeError) as e:
        print(f"coordtok {args.cmd}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
