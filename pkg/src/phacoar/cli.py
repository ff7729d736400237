"""Command-line entry point: ``phaco {synth,run,train,eval,render}``.

Failures exit with status 1 and a single JSON line on stderr::

    {"error": "MissingInput", "message": "missing file: frames/mask_0003.pgm"}
"""
import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import PhacoError

PHASE_NAMES_SHORT = ("incision", "VA injection", "capsulorhexis", "hydrodissection", "phaco",
                     "irrigation", "polishing", "lens implant", "VA removal", "tonifying")


def _load_config(path, overrides=()):
    from .io import Config
    cfg = Config.load(path) if path else Config()
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            from .errors import ValidationError
            raise ValidationError(f"--set expects key=value, got {item!r}")
        cfg.set(key.strip(), value.strip())
    return cfg


# ----------------------------------------------------------------- synth


def scene_schedule(frames, k, seed, max_abs=15.0, step=0.6):
    """Phase script (``k`` consecutive runs) and a bounded rotation random walk."""
    from .seeding import make_rng
    rng = make_rng(seed, 20)
    phases = np.concatenate([np.full(len(c), i) for i, c in enumerate(np.array_split(np.arange(frames), k))])
    theta = np.clip(np.cumsum(rng.uniform(-step, step, frames)), -max_abs, max_abs)
    return phases.astype(int).tolist(), theta.tolist()


def cmd_synth(args):
    from .io.formats import FrameEntry, Manifest, write_features, write_gray, write_json, write_mask
    from .synth import FeatureGenSpec, SceneSpec, gen_features, gen_scene
    out = Path(args.out)
    if args.features:
        spec = FeatureGenSpec(K_s=args.phases, d=args.dim, seed=args.seed,
                              center_scale=args.center_scale, duration=tuple(args.duration),
                              boundary_sigma=args.boundary_sigma)
        seqs = gen_features(spec, args.sequences)
        entries = []
        for j, s in enumerate(seqs):
            name = f"seq{j:03d}.feat"
            write_features(out / name, s.features)
            entries.append({"features": name, "labels": s.labels.tolist(),
                            "boundary": s.boundary.astype(int).tolist()})
        write_json(out / "dataset.json", {"K_s": args.phases, "dim": args.dim, "seed": args.seed,
                                          "sequences": entries})
        print(f"wrote {len(seqs)} feature sequences to {out}")
        return 0

    phases, theta = scene_schedule(args.frames, args.phases, args.seed)
    spec = SceneSpec(rotations=theta, phases=phases, seed=args.seed, noise_sigma=args.noise,
                     spike_count=args.spikes)
    bundles, truths = gen_scene(spec)
    feature_name = None
    if args.with_features:
        durations = [np.bincount(phases, minlength=args.phases)]
        fspec = FeatureGenSpec(K_s=args.phases, d=args.dim, seed=args.seed,
                               center_scale=args.center_scale, boundary_sigma=args.boundary_sigma)
        feats = gen_features(fspec, 1, durations)[0].features
        feature_name = "features.feat"
        write_features(out / feature_name, feats)
    entries = []
    for b, t in zip(bundles, truths):
        mask_name = f"frames/mask_{b.index:05d}.pgm"
        gray_name = f"frames/gray_{b.index:05d}.pgm"
        write_mask(out / mask_name, b.mask)
        write_gray(out / gray_name, b.gray)
        entries.append(FrameEntry(index=b.index, mask=mask_name, gray=gray_name, feature=feature_name,
                                  feature_row=b.index if feature_name else None, phase=t.phase,
                                  theta=t.theta_rel))
    meta = {"K_s": args.phases, "width": spec.width, "height": spec.height, "seed": args.seed,
            "ellipse": spec.ellipse.to_dict()}
    Manifest(entries, meta, out).save(out / "manifest.json")
    print(f"wrote {len(entries)} frames to {out}")
    return 0


# ------------------------------------------------------------------- run


def cmd_run(args):
    from .io import Manifest, ResultsWriter, write_json
    from .io.formats import atomic_write
    from .pipeline import STAGES, run_session
    from .render import overlay_svg
    cfg = _load_config(args.config, args.set)
    manifest = Manifest.load(args.manifest)
    out = Path(args.out)
    recognizer = None
    phases = None
    if args.geometry_only or not args.weights:
        phases = {i: (p if p is not None else 0) for i, p in manifest.phases().items()}
    else:
        from .lssat.model import LsSatStream, LsSatWeights
        weights_path = Path(args.weights)
        if not weights_path.is_file():
            from .errors import MissingInput
            raise MissingInput(f"missing file: {weights_path}")
        recognizer = LsSatStream(LsSatWeights.from_bytes(weights_path.read_bytes()))
    pcfg = cfg.pipeline_config(geometry_only=recognizer is None)
    writer = ResultsWriter(out / "results.jsonl")
    timing_rows = []
    sinks = [writer, lambda r: timing_rows.append([r.index] + [r.timings.get(s, 0.0) for s in STAGES])]
    if args.svg:
        w, h = manifest.meta.get("width", 256), manifest.meta.get("height", 256)

        def svg_sink(r):
            atomic_write(out / "overlays" / f"frame_{r.index:05d}.svg",
                         overlay_svg(r.cues, w, h, label=f"frame {r.index} phase {r.phase}"))
        sinks.append(svg_sink)
    summary = run_session(manifest.bundles(), pcfg, sinks, recognizer=recognizer, phases=phases)
    writer.close()
    lines = ["index," + ",".join(f"{s}_ms" for s in STAGES)]
    lines += [",".join([str(r[0])] + [f"{v:.4f}" for v in r[1:]]) for r in timing_rows]
    atomic_write(out / "timings.csv", "\n".join(lines) + "\n")
    write_json(out / "summary.json", summary.to_dict())
    print(f"{summary.frames} frames, {summary.fps:.1f} fps, "
          f"{summary.fallback_ellipse} ellipse fallbacks, {summary.no_cues} frames without cues")
    return 0


# ----------------------------------------------------------------- train


def load_feature_dataset(path):
    from .io import read_features
    path = Path(path)
    if not path.is_file():
        from .errors import MissingInput
        raise MissingInput(f"missing file: {path}")
    doc = json.loads(path.read_text())
    data = []
    for s in doc["sequences"]:
        feats = read_features(path.parent / s["features"])
        data.append((feats, np.asarray(s["labels"], dtype=int), np.asarray(s.get("boundary", []), bool)))
    return doc, data


def cmd_train(args):
    from .io.formats import atomic_write
    from .lssat.train import train_toy
    from .report import loss_figure
    cfg = _load_config(args.config, args.set)
    if args.seed is not None:
        cfg.set("seed", args.seed)
    doc, data = load_feature_dataset(args.dataset)
    cfg.set("d_raw", data[0][0].shape[1])
    cfg.set("K_s", doc.get("K_s", cfg.K_s))
    res = train_toy([(f, l) for f, l, _ in data], cfg.model_config(), cfg.train_config(),
                    on_epoch=lambda e, l: print(f"epoch {e + 1}: loss {l:.5f}") if args.verbose else None)
    out = Path(args.out)
    atomic_write(out, res.weights.to_bytes())
    curve = out.with_suffix(".loss.csv")
    atomic_write(curve, "epoch,loss\n" + "".join(f"{i + 1},{v!r}\n" for i, v in enumerate(res.loss_curve)))
    loss_figure(out.with_suffix(".loss.png"), res.loss_curve)
    print(f"final loss {res.loss_curve[-1]:.6f} (initial {res.loss_curve[0]:.6f}); weights -> {out}")
    return 0


# ------------------------------------------------------------------ eval


def cmd_eval(args):
    from .io import Manifest, read_results, write_json
    from .io.formats import atomic_write
    from .metrics import (ConfusionMatrix, angle_difference, phase_palette, ribbon_export,
                          rotation_error)
    from .report import confusion_figure, ribbon_figure, rotation_figure
    results = read_results(args.results)
    manifest = Manifest.load(args.manifest, check_files=False)
    out = Path(args.out)
    truth = {f.index: f for f in manifest.frames}
    missing = [r["index"] for r in results if r["index"] not in truth]
    if missing:
        from .errors import ValidationError
        raise ValidationError(f"results frames not in manifest: {missing[:5]}")
    k = int(manifest.meta.get("K_s", 10))
    report = {"frames": len(results)}

    phased = [(r["phase"], truth[r["index"]].phase) for r in results
              if truth[r["index"]].phase is not None and r["phase"] is not None]
    if phased:
        pred, gt = (np.array(v) for v in zip(*phased))
        cm = ConfusionMatrix.from_labels(pred, gt, k)
        report["phase"] = cm.metrics()
        atomic_write(out / "confusion.csv", cm.to_csv())
        palette = phase_palette(k)
        svg, csv = ribbon_export(pred, gt, palette)
        atomic_write(out / "ribbons.svg", svg)
        atomic_write(out / "ribbons.csv", csv)
        ribbon_figure(out / "ribbons.png", pred, gt, k, list(PHASE_NAMES_SHORT) if k == 10 else None)
        confusion_figure(out / "confusion.png", cm.counts, list(PHASE_NAMES_SHORT) if k == 10 else None)

    rot = [(r["index"], r["theta_deg"], truth[r["index"]].theta) for r in results
           if r["theta_deg"] is not None and truth[r["index"]].theta is not None]
    if rot:
        idx, pred_t, gt_t = (np.array(v, dtype=float) for v in zip(*rot))
        mean, sd = rotation_error(pred_t, gt_t)
        report["rotation"] = {"mean_deg": mean, "sd_deg": sd, "max_deg": float(angle_difference(pred_t, gt_t).max()),
                              "frames": len(rot),
                              "missing": sum(1 for r in results if r["theta_deg"] is None)}
        lines = ["index,theta_pred,theta_true"] + [f"{int(i)},{p!r},{g!r}" for i, p, g in rot]
        atomic_write(out / "rotation.csv", "\n".join(lines) + "\n")
        rotation_figure(out / "rotation.png", idx, pred_t, gt_t)

    if "ellipse" in manifest.meta:
        e = manifest.meta["ellipse"]
        fits = [r["ellipse"] for r in results if r["ellipse"] is not None]
        if fits:
            err = [np.hypot(f["ox"] - e["ox"], f["oy"] - e["oy"]) for f in fits]
            report["ellipse"] = {"center_error_mean_px": float(np.mean(err)),
                                 "center_error_max_px": float(np.max(err))}
    report["fallback_ellipse"] = sum(r["flags"]["fallback_ellipse"] for r in results)
    report["no_cues"] = sum(r["flags"]["no_cues"] for r in results)
    write_json(out / "metrics.json", report)
    for key in ("phase", "rotation", "ellipse"):
        if key in report:
            print(key, json.dumps(report[key], sort_keys=True))
    return 0


# ---------------------------------------------------------------- render


def cmd_render(args):
    from .cues import cue_from_dict
    from .io import Manifest, read_gray, read_results
    from .io.formats import atomic_write
    from .render import overlay_svg
    results = read_results(args.results)
    manifest = Manifest.load(args.manifest, check_files=False) if args.manifest else None
    entries = {f.index: f for f in manifest.frames} if manifest else {}
    out = Path(args.out)
    wanted = set(args.frames) if args.frames else None
    step = max(args.every, 1)
    n = 0
    for j, r in enumerate(results):
        if wanted is not None and r["index"] not in wanted:
            continue
        if wanted is None and j % step:
            continue
        cues = [cue_from_dict(c) for c in r["cues"]]
        label = f"frame {r['index']} phase {r['phase']}"
        w = manifest.meta.get("width", 256) if manifest else 256
        h = manifest.meta.get("height", 256) if manifest else 256
        atomic_write(out / f"frame_{r['index']:05d}.svg", overlay_svg(cues, w, h, label=label))
        if args.png:
            if r["index"] not in entries:
                from .errors import MissingInput
                raise MissingInput(f"--png needs the manifest entry for frame {r['index']}")
            from .report import overlay_figure
            gray = read_gray(manifest.root / entries[r["index"]].gray)
            theta = r["theta_deg"]
            title = label + (f", theta {theta:.2f} deg" if theta is not None else "")
            overlay_figure(out / f"frame_{r['index']:05d}.png", gray, cues, title)
        n += 1
    print(f"rendered {n} frames to {out}")
    return 0


# ------------------------------------------------------------------ main


def build_parser():
    p = argparse.ArgumentParser(prog="phaco", description="Phase-specific guidance overlays for cataract surgery video.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--frames", type=int, default=300)
    s.add_argument("--phases", type=int, default=10, help="number of phases K_s")
    mode = s.add_mutually_exclusive_group()
    mode.add_argument("--scene", action="store_true", help="mask/gray frames with a manifest (default)")
    mode.add_argument("--features", action="store_true", help="labelled feature sequences for training")
    s.add_argument("--with-features", action="store_true", help="attach per-frame features to a scene")
    s.add_argument("--sequences", type=int, default=8)
    s.add_argument("--dim", type=int, default=2048)
    s.add_argument("--center-scale", type=float, default=1.0)
    s.add_argument("--boundary-sigma", type=float, default=3.0)
    s.add_argument("--duration", type=int, nargs=2, default=(40, 80), metavar=("MIN", "MAX"))
    s.add_argument("--noise", type=float, default=0.5, help="mask boundary noise (px)")
    s.add_argument("--spikes", type=int, default=0, help="mask spikes per frame")
    s.set_defaults(func=cmd_synth)

    r = sub.add_parser("run", help="process a session")
    r.add_argument("--manifest", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--config")
    r.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    r.add_argument("--weights")
    r.add_argument("--geometry-only", action="store_true")
    r.add_argument("--svg", action="store_true", help="write per-frame SVG overlays")
    r.set_defaults(func=cmd_run)

    t = sub.add_parser("train", help="train the recogniser on feature sequences")
    t.add_argument("--dataset", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config")
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    t.add_argument("--seed", type=int)
    t.add_argument("--verbose", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score results against manifest ground truth")
    e.add_argument("--results", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("render", help="draw overlays from a results file")
    d.add_argument("--results", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--manifest")
    d.add_argument("--frames", type=int, nargs="*")
    d.add_argument("--every", type=int, default=1)
    d.add_argument("--png", action="store_true")
    d.set_defaults(func=cmd_render)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (PhacoError, OSError, ValueError, KeyError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc)}
        sys.stderr.write(json.dumps(err) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
