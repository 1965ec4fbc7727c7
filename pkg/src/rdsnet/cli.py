"""``rdsnet`` command-line front end.

Every failure ends with exactly one JSON line on stderr, for example
``{"command": "eval", "error": "data", "exit": 3, "message": "..."}``.
Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict

import numpy as np

from rdsnet import checkpoint, config as cfgmod, crf, metrics, objectness, plot, raster
from rdsnet.topology import BackboneSpec, build_dss, build_rds, connection_param_count, graph_from_spec, predict
from rdsnet.train import NumericError, TrainConfig, TrainingSample, load_graph_state, trace_csv, train

log = logging.getLogger("rdsnet")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
SOD_KEYS = objectness.MANIFEST_KEYS | {"name"}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --------------------------------------------------------------------------- helpers


def _write_text(path, text):
    checkpoint.atomic_write_bytes(path, text.encode("utf-8"))


def _resolve(base_dir, path):
    return path if os.path.isabs(path) else os.path.normpath(os.path.join(base_dir, path))


def _relative(path, base_dir):
    return os.path.relpath(os.path.abspath(path), os.path.abspath(base_dir))


def _read_jsonl(path, allowed):
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc.strerror or exc}") from None
    rows = []
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc})") from None
            if not isinstance(obj, dict):
                raise DataError(f"{path}:{lineno}: record must be a JSON object")
            unknown = sorted(set(obj) - allowed)
            if unknown:
                raise DataError(f"{path}:{lineno}: unknown manifest keys: {', '.join(unknown)}")
            rows.append(obj)
    return rows


def _image_tensor(rgb):
    return raster.as_rgb(rgb).astype(np.float64).transpose(2, 0, 1) / 255.0


def load_sod_samples(path):
    """Training pairs from a JSON-lines manifest of ``{"image", "gt"}`` records."""
    base = os.path.dirname(os.path.abspath(path))
    samples = []
    for i, row in enumerate(_read_jsonl(path, SOD_KEYS)):
        if "image" not in row or "gt" not in row:
            raise DataError(f"{path}: record {i + 1} needs both 'image' and 'gt'")
        image = raster.read_image(_resolve(base, row["image"]))
        gt = raster.as_gray(raster.read_image(_resolve(base, row["gt"])))
        if gt.shape != image.shape[:2]:
            raise DataError(f"{row['image']}: ground truth {gt.shape} does not match image {image.shape[:2]}")
        samples.append(TrainingSample(_image_tensor(image), gt.astype(np.float64) / 255.0,
                                      row.get("name", raster.stem(row["image"]))))
    if not samples:
        raise DataError(f"manifest {path} has no records")
    return samples


def _gather_inputs(paths, manifest):
    """Input image paths from explicit arguments and/or a manifest, in order."""
    out = list(paths or [])
    if manifest:
        base = os.path.dirname(os.path.abspath(manifest))
        for row in _read_jsonl(manifest, SOD_KEYS):
            if "image" not in row:
                raise DataError(f"{manifest}: record without 'image'")
            out.append(_resolve(base, row["image"]))
    if not out:
        raise UsageError("no input images given")
    stems = [raster.stem(p) for p in out]
    dup = sorted({s for s in stems if stems.count(s) > 1})
    if dup:
        raise DataError(f"input names collide: {', '.join(dup)}")
    return out


def _list_rasters(directory):
    try:
        names = sorted(os.listdir(directory))
    except OSError as exc:
        raise DataError(f"cannot list {directory}: {exc.strerror or exc}") from None
    out = {}
    for n in names:
        if n.lower().endswith((".pgm", ".ppm", ".png")):
            s = raster.stem(n)
            if s in out:
                raise DataError(f"{directory}: several rasters share the name {s}")
            out[s] = os.path.join(directory, n)
    return out


# --------------------------------------------------------------------------- commands


def cmd_prepare_objectness(args):
    try:
        records = objectness.read_manifest(args.manifest_in)
    except OSError as exc:
        raise DataError(f"cannot read manifest {args.manifest_in}: {exc.strerror or exc}") from None
    in_base = os.path.dirname(os.path.abspath(args.manifest_in))
    out_base = os.path.dirname(os.path.abspath(args.manifest_out))
    gt_dir = args.gt_dir or os.path.join(out_base, "objectness_gt")
    os.makedirs(gt_dir, exist_ok=True)
    usable, skipped = [], []
    for r in records:
        path = _resolve(in_base, r.image_path)
        try:
            image = raster.read_image(path)
        except raster.RasterError as exc:
            log.warning("skipping record: %s", exc)
            skipped.append(r.image_path)
            continue
        h, w = image.shape[:2]
        if (r.width, r.height) not in ((0, 0), (w, h)):
            log.warning("skipping %s: manifest says %dx%d, raster is %dx%d", r.image_path, r.width, r.height, w, h)
            skipped.append(r.image_path)
            continue
        r.width, r.height = w, h
        r.image_path = path
        usable.append(r)
    stems = [raster.stem(r.image_path) for r in usable]
    dup = sorted({s for s in stems if stems.count(s) > 1})
    if dup:
        raise DataError(f"image names collide in the ground-truth directory: {', '.join(dup)}")
    result = objectness.filter_manifest(usable, args.alpha_threshold)
    for r in result.kept:
        gt_path = os.path.join(gt_dir, raster.stem(r.image_path) + ".pgm")
        raster.write_pnm(gt_path, r.saliency() * np.uint8(255))
        r.gt_path = _relative(gt_path, out_base)
        r.image_path = _relative(r.image_path, out_base)
    _write_text(args.manifest_out, objectness.manifest_text(result.kept))
    rejected_path = os.path.splitext(args.manifest_out)[0] + ".rejected.jsonl"
    _write_text(rejected_path, "".join(
        json.dumps({"image": _relative(p, out_base), "alpha": a, "reason": why}, sort_keys=True) + "\n" for p, a, why in result.log))
    if not records:
        log.warning("manifest %s is empty", args.manifest_in)
    counts, edges = objectness.alpha_histogram([r.alpha for r in usable])
    print(f"kept {len(result.kept)} rejected {len(result.rejected)} skipped {len(skipped)}")
    print("alpha histogram:")
    for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
        print(f"  [{lo:.1f}, {hi:.1f}{']' if hi == 1.0 else ')'} {c}")
    return EXIT_OK


def cmd_convert_pascal_sod(args):
    sources = _list_rasters(args.in_dir)
    if not sources:
        log.warning("no rasters found in %s", args.in_dir)
    os.makedirs(args.out_dir, exist_ok=True)
    for name, path in sources.items():
        gt = raster.as_gray(raster.read_image(path))
        raster.write_pnm(os.path.join(args.out_dir, name + ".pgm"),
                         objectness.pascal_sod_relabel(gt) * np.uint8(255))
    print(f"converted {len(sources)}")
    return EXIT_OK


def cmd_train(args):
    run = cfgmod.load(args.config, _overrides(args))
    os.makedirs(args.out, exist_ok=True)
    _write_text(os.path.join(args.out, "config.json"), run.to_json())
    graph = run.model.build()
    levels = graph.levels
    model_meta = asdict(run.model)
    if args.objectness_manifest:
        data = load_sod_samples(args.objectness_manifest)
        res = train(graph, data, run.train, phase="objectness")
        res.meta["model"] = model_meta
        checkpoint.save(os.path.join(args.out, "objectness.ckpt"), res.state, res.meta)
        _write_text(os.path.join(args.out, "objectness_loss.csv"), trace_csv(res.trace, levels))
        print(f"objectness phase: {res.meta['steps']} steps, final total loss {res.trace[-1][-2]:.6g}")
    data = load_sod_samples(args.manifest)
    res = train(graph, data, run.train, phase="sod")
    res.meta["model"] = model_meta
    res.meta["phases"] = ["objectness", "sod"] if args.objectness_manifest else ["sod"]
    checkpoint.save(os.path.join(args.out, "model.ckpt"), res.state, res.meta)
    _write_text(os.path.join(args.out, "loss.csv"), trace_csv(res.trace, levels))
    print(f"sod phase: {res.meta['steps']} steps, final total loss {res.trace[-1][-2]:.6g}")
    return EXIT_OK


def load_model(path):
    try:
        arrays, meta = checkpoint.load(path)
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc.strerror or exc}") from None
    if "graph" not in meta:
        raise DataError(f"checkpoint {path} has no graph description")
    graph = graph_from_spec(meta["graph"])
    try:
        load_graph_state(graph, arrays)
    except (KeyError, ValueError) as exc:
        raise DataError(f"checkpoint {path}: {exc}") from None
    return graph, meta


def predict_map(graph, rgb, side):
    """Saliency in [0, 1] at the raster's own extents."""
    h, w = rgb.shape[:2]
    from rdsnet.ops import bilinear_resize_array

    x = _image_tensor(rgb)
    if (h, w) != (side, side):
        x = np.clip(bilinear_resize_array(x, side, side), 0.0, 1.0)
    pred = predict(graph, x[None])[0]
    if (h, w) != (side, side):
        pred = np.clip(bilinear_resize_array(pred, h, w), 0.0, 1.0)
    return pred


def cmd_predict(args):
    graph, meta = load_model(args.checkpoint)
    side = args.input_side or meta.get("config", {}).get("input_side", TrainConfig.input_side)
    params = None
    if args.crf:
        try:
            params = crf.CrfParams(args.crf_w1, args.crf_w2, args.crf_theta_alpha, args.crf_theta_beta,
                                   args.crf_theta_gamma, args.crf_iterations)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    inputs = _gather_inputs(args.inputs, args.manifest)
    os.makedirs(args.out, exist_ok=True)
    written = []
    for path in inputs:
        rgb = raster.as_rgb(raster.read_image(path))
        sal = predict_map(graph, rgb, side)
        if params is not None:
            sal = crf.refine(rgb, sal, params, args.crf_max_pixels)
        name = raster.stem(path) + ".pgm"
        raster.write_pnm(os.path.join(args.out, name), raster.to_uint8(sal))
        written.append(name)
    info = {"checkpoint_fingerprint": meta.get("config_fingerprint"), "input_side": side,
            "crf": params.as_dict() if params else None, "outputs": written}
    _write_text(os.path.join(args.out, "predict.json"), json.dumps(info, indent=2, sort_keys=True) + "\n")
    print(f"predicted {len(written)}")
    return EXIT_OK


def cmd_eval(args):
    preds = _list_rasters(args.pred_dir)
    gts = _list_rasters(args.gt_dir)
    missing_gt = sorted(set(preds) - set(gts))
    missing_pred = sorted(set(gts) - set(preds))
    if missing_gt or missing_pred:
        raise DataError(f"unpaired entries: no ground truth for {missing_gt}, no prediction for {missing_pred}")
    if not preds:
        raise DataError("nothing to evaluate")
    try:
        mc = metrics.MetricConfig(beta_squared=args.beta2, aggregation=args.aggregation)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    p = {n: raster.as_gray(raster.read_image(preds[n])) for n in sorted(preds)}
    g = {n: raster.as_gray(raster.read_image(gts[n])) for n in sorted(preds)}
    report = metrics.evaluate(p, g, mc, both=args.verbose)
    os.makedirs(args.out, exist_ok=True)
    reports = [report] + ([report.alternate] if args.verbose else [])
    for rep in reports:
        suffix = "" if rep is report else f"_{rep.aggregation}"
        _write_text(os.path.join(args.out, f"{args.dataset}_pr{suffix}.csv"), metrics.report_csv(rep))
        _write_text(os.path.join(args.out, f"{args.dataset}_summary{suffix}.csv"),
                    metrics.summary_csv(args.dataset, rep))
        print(f"{args.dataset} [{rep.aggregation}] images={rep.image_count} mae={rep.mae:.6f} "
              f"max_f={rep.max_f:.6f} at threshold {rep.argmax_threshold:g}")
    return EXIT_OK


def cmd_compare_topology(args):
    try:
        rds = build_rds(BackboneSpec.resnet(args.levels), k=args.k, materialize=False)
        dss = build_dss(BackboneSpec.resnet(args.dss_levels), k=args.dss_k, materialize=False)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    rds_rep, dss_rep = connection_param_count(rds), connection_param_count(dss)
    if args.json:
        print(json.dumps({"rds": rds.summary(), "dss": dss.summary(),
                          "largest_ratio_dss_to_rds": dss_rep.ratio_to(rds_rep)}, indent=2, sort_keys=True))
        return EXIT_OK
    print(rds.summary_text())
    print()
    print(dss.summary_text())
    print()
    print(f"largest connection: RDS {rds_rep.largest} vs DSS {dss_rep.largest} "
          f"(DSS/RDS = {dss_rep.ratio_to(rds_rep):.4g})")
    return EXIT_OK


def cmd_plot_pr(args):
    labels = args.labels or [raster.stem(p) for p in args.reports]
    if len(labels) != len(args.reports):
        raise UsageError(f"{len(labels)} labels given for {len(args.reports)} reports")
    curves = []
    for label, path in zip(labels, args.reports):
        try:
            with open(path, encoding="utf-8") as fh:
                _, precision, recall, _ = metrics.read_report_csv(fh.read())
        except OSError as exc:
            raise DataError(f"cannot read {path}: {exc.strerror or exc}") from None
        except ValueError as exc:
            raise DataError(f"{path}: {exc}") from None
        curves.append((label, recall, precision))
    _write_text(args.out, plot.pr_svg(curves, args.title))
    print(f"wrote {args.out}")
    return EXIT_OK


# --------------------------------------------------------------------------- parser


def _overrides(args):
    sets = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        sets += [f"train.seed={args.seed}", f"model.seed={args.seed}"]
    return sets


def build_parser():
    p = _Parser(prog="rdsnet", description="Side-output saliency networks: data, training, evaluation.")
    p.add_argument("-v", "--verbose-log", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("prepare-objectness", help="derive box ground truths and apply the alpha filter")
    s.add_argument("--manifest-in", required=True)
    s.add_argument("--manifest-out", required=True)
    s.add_argument("--gt-dir", help="where derived PGMs go (default: objectness_gt next to the output manifest)")
    s.add_argument("--alpha-threshold", type=float, default=objectness.ALPHA_THRESHOLD)
    s.set_defaults(func=cmd_prepare_objectness)

    s = sub.add_parser("convert-pascal-sod", help="keep only the brightest level of multi-level masks")
    s.add_argument("--in-dir", required=True)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_convert_pascal_sod)

    s = sub.add_parser("train", help="train a network; optional objectness pre-training phase")
    s.add_argument("--config")
    s.add_argument("--manifest", required=True, help="JSON-lines of {image, gt} training pairs")
    s.add_argument("--objectness-manifest", help="run the one-epoch objectness phase on this manifest first")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="write 8-bit PGM saliency maps")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("inputs", nargs="*")
    s.add_argument("--manifest")
    s.add_argument("--out", required=True)
    s.add_argument("--input-side", type=int, help="network input side (default: the training value)")
    d = crf.CrfParams()
    s.add_argument("--crf", action="store_true", help="refine every map with the dense CRF")
    s.add_argument("--crf-w1", type=float, default=d.bilateral_weight)
    s.add_argument("--crf-w2", type=float, default=d.spatial_weight)
    s.add_argument("--crf-theta-alpha", type=float, default=d.theta_alpha)
    s.add_argument("--crf-theta-beta", type=float, default=d.theta_beta)
    s.add_argument("--crf-theta-gamma", type=float, default=d.theta_gamma)
    s.add_argument("--crf-iterations", type=int, default=d.iterations)
    s.add_argument("--crf-max-pixels", type=int, default=crf.MAX_PIXELS)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("eval", help="MAE, PR curve and max F of predictions against ground truths")
    s.add_argument("--pred-dir", required=True)
    s.add_argument("--gt-dir", required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--beta2", type=float, default=0.3)
    s.add_argument("--aggregation", choices=metrics.AGGREGATIONS, default="per-image-mean")
    s.add_argument("--verbose", action="store_true", help="also write the other aggregation")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("compare-topology", help="connection parameter tables for RDS and DSS")
    s.add_argument("--levels", type=int, default=5)
    s.add_argument("--k", type=int, default=32)
    s.add_argument("--dss-levels", type=int, default=6)
    s.add_argument("--dss-k", type=int, default=1)
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_compare_topology)

    s = sub.add_parser("plot-pr", help="render PR report CSVs as an SVG chart")
    s.add_argument("reports", nargs="+")
    s.add_argument("--labels", nargs="+")
    s.add_argument("--title", default="Precision-recall")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_plot_pr)
    return p


def _fail(command, kind, code, message):
    line = json.dumps({"command": command, "error": kind, "exit": code, "message": " ".join(str(message).split())},
                      sort_keys=True)
    print(line, file=sys.stderr)
    return code


def main(argv=None):
    parser = build_parser()
    command = None
    try:
        args = parser.parse_args(argv)
        command = args.command
        logging.basicConfig(level=logging.INFO if args.verbose_log else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except (UsageError, cfgmod.ConfigError) as exc:
        return _fail(command, "usage", EXIT_USAGE, exc)
    except NumericError as exc:
        where = {k: getattr(exc, k) for k in ("epoch", "step", "parameter") if getattr(exc, k) is not None}
        return _fail(command, "numeric", EXIT_NUMERIC, f"{exc} {json.dumps(where, sort_keys=True)}")
    except (DataError, raster.RasterError, checkpoint.CheckpointError, OSError, ValueError, KeyError) as exc:
        return _fail(command, "data", EXIT_DATA, exc)


if __name__ == "__main__":
    sys.exit(main())
