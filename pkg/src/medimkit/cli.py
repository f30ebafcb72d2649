"""Batch command-line front end.

Every subcommand resolves its configuration from built-in defaults, an optional
YAML file (top-level keys plus a section named after the subcommand), explicit
flags and ``--set key=value`` overrides, in that order. The resolved
configuration is echoed and saved as ``config.json`` in the output directory.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import yaml

from . import __version__
from .errors import ConfigError, ImageIOError, MedimError

log = logging.getLogger("medimkit")

EXIT_OK, EXIT_CONFIG, EXIT_ALGO, EXIT_IO = 0, 2, 3, 4

COMMON = {"seed": 0, "out": "out", "figures": True, "workers": 2}

DEFAULTS = {
    "threshold": {"image": None, "roi": None, "method": "iots", "polarity": "above", "eps": 0.5, "gold": None},
    "fibroid": {"image": None, "roi": None, "mode": "incremental", "mean_hi": 0.58, "rho_min": 4,
                "touch_ratio": 0.25, "seed_trim": True, "gold": None},
    "gtv-fcm": {"image": None, "roi": None, "min_area": 10, "m": 2.0, "necrosis": False, "gold": None},
    "next": {"image": None, "gtv": None, "min_area": 5, "min_contrast": 0.2, "m": 2.0, "gold": None},
    "prostate": {"t2": None, "t1": None, "roi": None, "channels": ["t2", "t1"], "m": 2.0, "gold": None},
    "gtvcut": {"image": None, "bbox": None, "similarity": "GM", "gold": None},
    "rw": {"image": None, "fg": None, "bg": None, "beta": 90.0, "threshold": 0.5, "mri_mask": None,
           "gain_in": 1.1, "gain_out": 0.9, "solver": "auto", "scan_suv": None, "suv_scale": 1.0,
           "gold": None},
    "medga-enhance": {"image": None, "roi": None, "population": 100, "generations": 100, "p_c": 0.9,
                      "p_m": 0.01, "k": 20, "baselines": []},
    "medga-segment": {"image": None, "roi": None, "postproc": "fibroid", "population": 100,
                      "generations": 100, "p_c": 0.9, "p_m": 0.01, "k": 20, "gold": None},
    "colony": {"plates": [], "r_w": None, "n_wells": None, "control": 1, "channel": "-u",
               "flip": False, "sensitivity": [0.98, 0.99]},
    "acdc": {"images": [], "manifest": None, "edt_mode": "chamfer5", "min_area": 40,
             "tophat_radius": 21, "labels": True},
    "register": {"moving": None, "fixed": None, "metric": "MI", "variant": "standard", "refine": "coordinate-descent",
                 "particles": 30, "iterations": 100, "bins": 32, "smooth": True, "interp": "bilinear",
                 "truth": None},
    "metrics": {"seg": None, "gold": None, "orig": None, "enh": None, "remap": True},
    "phantom": {"kind": "bimodal-blob", "n": 50, "n_wells": 6, "transform": [7.0, -4.0, 10.0],
                "dark": False, "core": None, "size": None, "radius": None},
}


# ---------------------------------------------------------------- helpers

def _points(v):
    """'x,y;x,y' or [[x, y], ...] -> tuple of int pairs."""
    if v is None:
        return ()
    if isinstance(v, str):
        v = [p.split(",") for p in v.replace(" ", "").split(";") if p]
    try:
        return tuple((int(float(p[0])), int(float(p[1]))) for p in v)
    except (TypeError, ValueError, IndexError) as e:
        raise ConfigError(f"bad point list {v!r}") from e


def _ints(v, n, name):
    if isinstance(v, str):
        v = v.split(",")
    try:
        out = [int(float(t)) for t in v]
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad {name} {v!r}") from e
    if len(out) != n:
        raise ConfigError(f"{name} needs {n} values")
    return out


def _need(cfg, *keys):
    for k in keys:
        if cfg.get(k) in (None, "", []):
            raise ConfigError(f"missing required parameter '{k}'")


def _clean(v):
    """JSON-safe, deterministic values (NaN/inf as strings)."""
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(v, np.ndarray):
        return _clean(v.tolist())
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def _write_json(path, obj):
    with open(path, "w") as f:
        json.dump(_clean(obj), f, indent=2, sort_keys=True)
        f.write("\n")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return "nan" if math.isnan(x) else f"{float(x):.6g}"
    return x


def _seg_report(mask, gold_path):
    """Overlap/distance metrics of a mask against a gold-standard file."""
    from .io import read_mask
    from .metrics import distance_metrics, overlap_metrics, volume_metrics
    g = read_mask(gold_path)
    om = overlap_metrics(mask, g)
    row = {"dsc": om.dsc, "ji": om.ji, "sen": om.sen, "spc": om.spc, "fpr": om.fpr, "fnr": om.fnr}
    if g.any():
        row["avd"], row["vs"] = volume_metrics(mask, g)
    if g.any() and np.asarray(mask).any():
        dm = distance_metrics(mask, g)
        row.update(avg_d=dm.avg_d, max_d=dm.max_d, hd=dm.hd, mhd=dm.mhd)
    return row


class Run:
    """Output directory bookkeeping for one invocation."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.out = cfg["out"]
        os.makedirs(self.out, exist_ok=True)
        self.artifacts = []

    def path(self, name):
        p = os.path.join(self.out, name)
        self.artifacts.append(name)
        return p

    def figure(self, fn, name, *a, **kw):
        if self.cfg.get("figures", True):
            fn(self.path(name), *a, **kw)

    def finish_mask(self, mask, img, report, name="mask.png"):
        from .io import write_mask
        from .plotting import overlay
        write_mask(self.path(name), mask)
        report["area"] = int(np.asarray(mask).sum())
        if self.cfg.get("gold"):
            row = _seg_report(mask, self.cfg["gold"])
            report["metrics"] = row
            _write_csv(self.path("metrics.csv"), list(row), [list(row.values())])
            from .io import read_mask
            self.figure(overlay, "overlay.png", img, [mask, read_mask(self.cfg["gold"])])
        else:
            self.figure(overlay, "overlay.png", img, [mask])
        _write_json(self.path("report.json"), report)


# ---------------------------------------------------------------- subcommands

def cmd_threshold(run: Run, c):
    from .io import read_gray, read_mask
    from .plotting import histogram_plot
    from .threshold import binarize, histogram, iots, local_adaptive_threshold, otsu
    _need(c, "image")
    img = read_gray(c["image"])
    roi = read_mask(c["roi"]) if c.get("roi") else None
    rep = {"method": c["method"]}
    if c["method"] in ("iots", "otsu"):
        h = histogram(img, roi)
        r = iots(h, c["eps"]) if c["method"] == "iots" else otsu(h)
        mask = binarize(img, r.theta, c["polarity"])
        if roi is not None:
            mask &= roi
        rep.update(theta=r.theta, mu1=r.mu1, mu2=r.mu2, iterations=r.iterations)
        run.figure(histogram_plot, "histogram.png", img, roi, {"theta": r.theta})
    elif c["method"] == "local":
        mask = local_adaptive_threshold(img, c["polarity"])
        if roi is not None:
            mask &= roi
    else:
        raise ConfigError("method must be iots, otsu or local")
    run.finish_mask(mask, img, rep)


def cmd_fibroid(run, c):
    from .io import read_gray, read_mask
    from .regionseg import SplitMergeConfig, fibroid_pipeline
    _need(c, "image", "roi")
    img, roi = read_gray(c["image"]), read_mask(c["roi"])
    sm = SplitMergeConfig(mean_hi=float(c["mean_hi"]), rho_min=int(c["rho_min"]),
                          touch_ratio=float(c["touch_ratio"]), seed_trim=bool(c["seed_trim"]))
    mask = fibroid_pipeline(img, roi, sm, c["mode"])
    run.finish_mask(mask, img, {"mode": c["mode"]})


def cmd_gtv_fcm(run, c):
    from .clusterseg import GtvConfig, gtv_pipeline, necrosis_inclusion
    from .io import read_gray, read_mask
    _need(c, "image", "roi")
    img, roi = read_gray(c["image"]), read_mask(c["roi"])
    cfg = GtvConfig(int(c["min_area"]), float(c["m"]), int(c["seed"]))
    post, pre = gtv_pipeline(img, roi, cfg, return_stages=True)
    if c["necrosis"]:
        post = necrosis_inclusion(img, roi, pre, post, cfg.m, cfg.seed)
    run.finish_mask(post, img, {"necrosis_inclusion": bool(c["necrosis"])})


def cmd_next(run, c):
    from .clusterseg import NextConfig, next_pipeline
    from .io import read_gray, read_mask
    _need(c, "image", "gtv")
    img, gtv = read_gray(c["image"]), read_mask(c["gtv"])
    cfg = NextConfig(int(c["min_area"]), float(c["min_contrast"]), float(c["m"]), int(c["seed"]))
    mask = next_pipeline(img, gtv, cfg)
    run.finish_mask(mask, img, {"gtv_area": int(gtv.sum())})


def cmd_prostate(run, c):
    from .clusterseg import ProstateConfig, prostate_pipeline
    from .io import read_gray, read_mask
    _need(c, "t2", "t1", "roi")
    t2, t1, roi = read_gray(c["t2"]), read_gray(c["t1"]), read_mask(c["roi"])
    ch = c["channels"].split(",") if isinstance(c["channels"], str) else list(c["channels"])
    cfg = ProstateConfig(m=float(c["m"]), seed=int(c["seed"]))
    mask = prostate_pipeline(t2, t1, roi, cfg, tuple(ch))
    run.finish_mask(mask, t2, {"channels": ch})


def cmd_gtvcut(run, c):
    from .graphseg import gtvcut_pipeline
    from .io import read_gray
    _need(c, "image", "bbox")
    img = read_gray(c["image"])
    bbox = _ints(c["bbox"], 4, "bbox")
    mask, info = gtvcut_pipeline(img, bbox, c["similarity"], return_info=True)
    run.finish_mask(mask, img, {"bbox": bbox, "similarity": c["similarity"], "degenerate": info.degenerate})


def suv_scan(img, level, beta=90.0, threshold=0.5, solver="auto", margin=3, max_lesions=50):
    """Lesion scan: seed the hottest uncovered pixel at or above ``level``, run
    the random walker on its neighbourhood, repeat until nothing is left."""
    from .graphseg import SeedSet, random_walker, rw_build
    from .imgcore import connected_components
    a = np.asarray(img, float)
    H, W = a.shape
    hot = a >= level
    lab, _ = connected_components(hot, 8)
    out = np.zeros(a.shape, bool)
    done = np.zeros(a.shape, bool)
    found = []
    while len(found) < max_lesions:
        cand = np.where(hot & ~done, a, -np.inf)
        k = int(np.argmax(cand))
        if not np.isfinite(cand.flat[k]):
            break
        y, x = divmod(k, W)
        comp = lab == lab[y, x]
        ys, xs = np.nonzero(comp)
        y0, y1 = max(ys.min() - margin, 0), min(ys.max() + margin + 1, H)
        x0, x1 = max(xs.min() - margin, 0), min(xs.max() + margin + 1, W)
        ring = [(i, j) for i in range(x0, x1) for j in (y0, y1 - 1)] + \
               [(i, j) for j in range(y0 + 1, y1 - 1) for i in (x0, x1 - 1)]
        bg = tuple(p for p in dict.fromkeys(ring) if not comp[p[1], p[0]])
        done |= comp
        if not bg:
            out |= comp
            found.append((x, y, int(comp.sum())))
            continue
        g = rw_build(a[y0:y1, x0:x1], beta)
        _, m = random_walker(g, SeedSet(((x - x0, y - y0),), tuple((i - x0, j - y0) for i, j in bg)),
                             threshold, solver)
        out[y0:y1, x0:x1] |= m
        found.append((x, y, int(m.sum())))
    return out, found


def cmd_rw(run, c):
    from .graphseg import SeedSet, random_walker, rw_build, rw_weighted
    from .io import read_gray, read_mask
    _need(c, "image")
    img = read_gray(c["image"])
    if c.get("scan_suv") is not None:
        suv = img.astype(float) * float(c["suv_scale"])
        mask, found = suv_scan(suv, float(c["scan_suv"]), float(c["beta"]), float(c["threshold"]), c["solver"])
        run.finish_mask(mask, img, {"lesions": [{"x": x, "y": y, "area": n} for x, y, n in found]})
        return
    _need(c, "fg", "bg")
    seeds = SeedSet(_points(c["fg"]), _points(c["bg"]))
    if c.get("mri_mask"):
        mask = rw_weighted(img, read_mask(c["mri_mask"]), seeds, float(c["gain_in"]), float(c["gain_out"]),
                           float(c["beta"]), float(c["threshold"]), c["solver"])
    else:
        g = rw_build(img, float(c["beta"]))
        _, mask = random_walker(g, seeds, float(c["threshold"]), c["solver"])
    run.finish_mask(mask, img, {"n_fg": len(seeds.fg), "n_bg": len(seeds.bg)})


def _medga_cfg(c):
    from .medga import MedGaConfig
    return MedGaConfig(population=int(c["population"]), p_c=float(c["p_c"]), p_m=float(c["p_m"]),
                       k=int(c["k"]), generations=int(c["generations"]), seed=int(c["seed"]))


def _parse_baseline(spec):
    kind, _, par = str(spec).partition(":")
    return kind, (float(par) if par else None)


def cmd_medga_enhance(run, c):
    from .io import read_gray, read_mask, write_gray
    from .medga import baseline_enhance, medga_run
    from .metrics import enhancement_metrics
    from .plotting import convergence_plot, histogram_plot, side_by_side
    _need(c, "image")
    img = read_gray(c["image"])
    roi = read_mask(c["roi"]) if c.get("roi") else np.ones(img.shape, bool)
    res = medga_run(img, roi, _medga_cfg(c))
    depth = 8 if res.enhanced.max() < 256 else 16
    write_gray(run.path("enhanced.png"), res.enhanced, depth)
    t = res.best.terms
    rep = {"fitness": res.best.fitness, "history": res.history,
           "terms": {k: getattr(t, k) for k in ("tau1", "tau2", "tau3", "theta_opt", "mu1", "mu2",
                                                 "sigma1", "sigma2", "omega1", "omega2")}}
    rows = []
    em = enhancement_metrics(np.where(roi, img, 0), res.enhanced)
    rows.append(["medga", em.psnr, em.num_edges, em.ambe, em.ssim])
    for b in c.get("baselines") or []:
        kind, par = _parse_baseline(b)
        e = np.where(roi, baseline_enhance(img, kind, par, roi), 0)
        m = enhancement_metrics(np.where(roi, img, 0), e)
        rows.append([str(b), m.psnr, m.num_edges, m.ambe, m.ssim])
    _write_csv(run.path("enhancement.csv"), ["method", "psnr", "num_edges", "ambe", "ssim"], rows)
    rep["enhancement"] = {r[0]: dict(zip(["psnr", "num_edges", "ambe", "ssim"], r[1:])) for r in rows}
    _write_json(run.path("report.json"), rep)
    run.figure(convergence_plot, "fitness.png", res.history, "best fitness")
    run.figure(histogram_plot, "histogram_enhanced.png", res.enhanced, roi, {"theta": t.theta_opt})
    run.figure(side_by_side, "comparison.png", [img, res.enhanced], ["input", "enhanced"])


def cmd_medga_segment(run, c):
    from .io import read_gray, read_mask
    from .medga import medga_segment
    _need(c, "image", "roi")
    img, roi = read_gray(c["image"]), read_mask(c["roi"])
    mask = medga_segment(img, roi, _medga_cfg(c), c["postproc"])
    run.finish_mask(mask, img, {"postproc": c["postproc"]})


def _pool(fn, items, workers):
    """Bounded worker pool; returns (results, failures) in input order."""
    res, fails = [None] * len(items), []
    with ThreadPoolExecutor(max_workers=max(1, int(workers))) as ex:
        futs = [ex.submit(fn, it) for it in items]
        for i, f in enumerate(futs):
            try:
                res[i] = f.result()
            except MedimError as e:
                fails.append((i, e))
    return res, fails


class BatchError(MedimError):
    def __init__(self, failures, names):
        self.failures = failures
        msg = "; ".join(f"{names[i]}: {e}" for i, e in failures)
        super().__init__(f"{len(failures)} of {len(names)} inputs failed: {msg}")
        self.exit_code = failures[0][1].exit_code


def cmd_colony(run, c):
    from .colony import analyze_plate, write_assay_csv
    from .io import read_rgb
    from .plotting import wells_plot
    plates = c["plates"] if isinstance(c["plates"], list) else [c["plates"]]
    _need(c, "r_w", "n_wells")
    if not plates:
        raise ConfigError("missing required parameter 'plates'")
    names = [os.path.splitext(os.path.basename(p))[0] for p in plates]
    if len(set(names)) != len(names):
        raise ConfigError("plate file names must be distinct")

    def one(p):
        img = read_rgb(p)
        if c["flip"]:
            img = img[:, ::-1].copy()
        return img, analyze_plate(img, float(c["r_w"]), int(c["n_wells"]), int(c["control"]) - 1,
                                  c["channel"], tuple(c["sensitivity"]))

    res, fails = _pool(one, plates, c["workers"])
    summary = {}
    for name, r in zip(names, res):
        if r is None:
            continue
        img, (assay, masks) = r
        tag = "" if len(plates) == 1 else f"_{name}"
        write_assay_csv(run.path(f"colony{tag}.csv"), assay)
        summary[name] = {"wells": [[w.x, w.y, w.r, w.strength] for w in assay.wells],
                         "acc_percent": assay.acc, "sf_percent": assay.sf}
        run.figure(wells_plot, f"wells{tag}.png", img, assay.wells, masks)
    summary["failed"] = [names[i] for i, _ in fails]
    _write_json(run.path("report.json"), summary)
    if fails:
        raise BatchError(fails, names)


def cmd_acdc(run, c):
    from .acdc import AcdcConfig, acdc_segment, read_manifest, write_counts_csv
    from .io import read_gray, write_labels
    from .plotting import labels_plot
    paths = list(c["images"] or [])
    if c.get("manifest"):
        try:
            paths += read_manifest(c["manifest"])
        except OSError as e:
            raise ImageIOError(f"cannot read manifest: {e}") from e
    if not paths:
        raise ConfigError("no input images (use --images or --manifest)")
    cfg = AcdcConfig(tophat_radius=int(c["tophat_radius"]), min_area=int(c["min_area"]), edt_mode=c["edt_mode"])
    names = [os.path.basename(p) for p in paths]

    def one(p):
        img = read_gray(p)
        return img, acdc_segment(img, cfg)

    res, fails = _pool(one, paths, c["workers"])
    ok = [(n, r) for n, r in zip(names, res) if r is not None]
    write_counts_csv(run.path("counts.csv"), [n for n, _ in ok], [r[1] for _, r in ok])
    dup = len(set(names)) != len(names)
    for i, (n, r) in enumerate(zip(names, res)):
        if r is None:
            continue
        img, rep = r
        stem = os.path.splitext(n)[0] if not dup else f"{i:03d}_{os.path.splitext(n)[0]}"
        if c["labels"]:
            write_labels(run.path(f"labels_{stem}.png"), rep.labels.labels)
        run.figure(labels_plot, f"cells_{stem}.png", img, rep.labels.labels)
    _write_json(run.path("report.json"), {"counts": {n: r[1].count for n, r in ok},
                                          "failed": [names[i] for i, _ in fails]})
    if fails:
        raise BatchError(fails, names)


def cmd_register(run, c):
    from .io import read_gray, write_gray
    from .plotting import convergence_plot, side_by_side
    from .register import apply_transform, format_transform, parse_transform, register, registration_config
    _need(c, "moving", "fixed")
    A, B = read_gray(c["moving"]), read_gray(c["fixed"])
    kw = dict(seed=int(c["seed"]), n_particles=int(c["particles"]), t_max=int(c["iterations"]),
              variant=c["variant"])
    if c["variant"] == "constriction":
        kw.update(w=1.0, c_soc=2.05, c_cog=2.05)
    cfg = registration_config(**kw)
    res = register(A, B, c["metric"], cfg, c["refine"], int(c["bins"]), bool(c["smooth"]), c["interp"])
    with open(run.path("transform.txt"), "w") as f:
        f.write(format_transform(res.transform, A.shape))
    warped = apply_transform(A, res.transform, c["interp"])
    write_gray(run.path("registered.png"), np.clip(warped, 0, 255 if A.max() < 256 else 65535),
               8 if A.max() < 256 else 16)
    rep = {"params": dict(zip(("tx", "ty", "rot_deg", "sx", "sy", "shear"),
                              [*res.transform.params[:2], math.degrees(res.transform.rot),
                               *res.transform.params[3:]])),
           "metric": c["metric"], "value": res.value, "iterations": res.trace.iterations,
           "stopped": res.trace.stopped}
    if c.get("truth"):
        try:
            with open(c["truth"]) as f:
                T = parse_transform(f.read())
        except OSError as e:
            raise ImageIOError(f"cannot read truth transform: {e}") from e
        rep["translation_error_px"] = math.hypot(res.transform.tx - T.tx, res.transform.ty - T.ty)
        rep["rotation_error_deg"] = abs(math.degrees(res.transform.rot - T.rot))
    _write_json(run.path("report.json"), rep)
    run.figure(convergence_plot, "pso_trace.png", [-v for v in res.trace.best_values], c["metric"])
    run.figure(side_by_side, "registration.png", [A, B, warped], ["moving", "fixed", "registered"])


def cmd_metrics(run, c):
    from .io import read_gray, read_mask
    from .metrics import enhancement_metrics
    if c.get("seg") and c.get("gold"):
        row = _seg_report(read_mask(c["seg"]), c["gold"])
    elif c.get("orig") and c.get("enh"):
        em = enhancement_metrics(read_gray(c["orig"]), read_gray(c["enh"]), bool(c["remap"]))
        row = {"psnr": em.psnr, "num_edges": em.num_edges, "ambe": em.ambe, "ssim": em.ssim}
    else:
        raise ConfigError("give --seg and --gold, or --orig and --enh")
    _write_csv(run.path("metrics.csv"), list(row), [list(row.values())])
    _write_json(run.path("metrics.json"), row)
    print(",".join(row))
    print(",".join(str(_fmt(v)) for v in row.values()))


def cmd_phantom(run, c):
    from . import phantoms
    from .io import write_gray, write_labels, write_mask, write_rgb
    from .register import AffineTransform2D, apply_transform, format_transform
    k, s = c["kind"], int(c["seed"])
    if k == "bimodal":
        k = "bimodal-blob"
    meta = {"kind": k, "seed": s}
    kw = {}
    if c.get("size") is not None:
        v = c["size"]
        if isinstance(v, (int, float)) or (isinstance(v, str) and "," not in v):
            v = [v, v]
        kw["shape"] = tuple(_ints(v, 2, "size"))
    if c.get("radius") is not None and k in ("bimodal-blob", "gtv"):
        kw["radius"] = float(c["radius"])
    if k == "bimodal-blob":
        img, truth, roi = phantoms.bimodal_blob(s, dark_blob=bool(c["dark"]), **kw)
        write_gray(run.path("image.png"), img)
        write_mask(run.path("truth.png"), truth)
        write_mask(run.path("roi.png"), roi)
    elif k == "fibroid":
        img, truth, roi = phantoms.fibroid(s, **kw)
        write_gray(run.path("image.png"), img)
        write_mask(run.path("truth.png"), truth)
        write_mask(run.path("roi.png"), roi)
    elif k == "gtv":
        img, truth, core, bbox = phantoms.gtv(s, core=c.get("core"), **kw)
        write_gray(run.path("image.png"), img)
        write_mask(run.path("truth.png"), truth)
        write_mask(run.path("core.png"), core)
        write_mask(run.path("roi.png"), np.ones(img.shape, bool))
        meta["bbox"] = list(bbox)
    elif k == "nuclei":
        img, lab = phantoms.nuclei(s, n=int(c["n"]), **kw)
        write_gray(run.path("image.png"), img)
        write_labels(run.path("truth_labels.png"), lab)
        meta["count"] = int(lab.max())
    elif k == "plate":
        img, centres, col = phantoms.plate(s, int(c["n_wells"]))
        write_rgb(run.path("plate.png"), img)
        write_mask(run.path("colonies.png"), col)
        meta.update(centres=centres, r_w=50)
    elif k == "prostate":
        t2, t1, gland, roi = phantoms.prostate(s, **kw)
        write_gray(run.path("t2.png"), t2)
        write_gray(run.path("t1.png"), t1)
        write_mask(run.path("truth.png"), gland)
        write_mask(run.path("roi.png"), roi)
    elif k == "register-pair":
        tx, ty, deg = (float(v) for v in c["transform"])
        A = phantoms.smooth_texture(s, **kw)
        T = AffineTransform2D(tx, ty, math.radians(deg))
        B = apply_transform(A, T)
        write_gray(run.path("moving.png"), np.clip(A, 0, 255))
        write_gray(run.path("fixed.png"), np.clip(B, 0, 255))
        with open(run.path("truth_transform.txt"), "w") as f:
            f.write(format_transform(T, A.shape))
    else:
        raise ConfigError(f"unknown phantom kind {k!r}")
    _write_json(run.path("phantom.json"), meta)


COMMANDS = {
    "threshold": cmd_threshold, "fibroid": cmd_fibroid, "gtv-fcm": cmd_gtv_fcm, "next": cmd_next,
    "prostate": cmd_prostate, "gtvcut": cmd_gtvcut, "rw": cmd_rw, "medga-enhance": cmd_medga_enhance,
    "medga-segment": cmd_medga_segment, "colony": cmd_colony, "acdc": cmd_acdc, "register": cmd_register,
    "metrics": cmd_metrics, "phantom": cmd_phantom,
}


# ---------------------------------------------------------------- parsing

def _add_flags(p, name):
    for key, val in DEFAULTS[name].items():
        flag = "--" + key.replace("_", "-")
        if isinstance(val, bool):
            p.add_argument(flag, dest=key, action=argparse.BooleanOptionalAction, default=None)
        elif isinstance(val, list) and key in ("plates", "images", "baselines", "channels", "sensitivity",
                                                 "transform"):
            p.add_argument(flag, dest=key, nargs="+", default=None)
        else:
            p.add_argument(flag, dest=key, default=None)


def build_parser():
    ap = argparse.ArgumentParser(prog="medimkit", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="YAML file")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", default=None, type=int)
        p.add_argument("--workers", default=None, type=int)
        p.add_argument("--figures", action=argparse.BooleanOptionalAction, default=None)
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
        p.add_argument("--log-level", default="WARNING")
        _add_flags(p, name)
    return ap


def _typed(default, v):
    """Coerce a flag string to the type of the default value."""
    if v is None or not isinstance(v, str):
        return v
    if isinstance(default, bool):
        return v.lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(float(v))
    if isinstance(default, float):
        return float(v)
    if default is None:
        try:
            return yaml.safe_load(v) if v[:1] in "[{" else v
        except yaml.YAMLError:
            return v
    return v


def resolve_config(args):
    name = args.command
    cfg = dict(COMMON)
    cfg.update(DEFAULTS[name])
    if args.config:
        try:
            with open(args.config) as f:
                data = yaml.safe_load(f) or {}
        except OSError as e:
            raise ConfigError(f"cannot read config {args.config}: {e}") from e
        except yaml.YAMLError as e:
            raise ConfigError(f"invalid YAML in {args.config}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a mapping")
        section = data.get(name, {})
        flat = {k.replace("-", "_"): v for k, v in data.items() if not isinstance(v, dict)}
        flat.update({k.replace("-", "_"): v for k, v in (section or {}).items()})
        for k, v in flat.items():
            if k not in cfg:
                raise ConfigError(f"unknown config key '{k}' for {name}")
            cfg[k] = v
    for k in list(cfg):
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = _typed(cfg[k], v) if not isinstance(v, list) else v
    for item in args.set:
        k, sep, v = item.partition("=")
        k = k.strip().replace("-", "_")
        if not sep or k not in cfg:
            raise ConfigError(f"bad override '{item}'")
        cfg[k] = yaml.safe_load(v)
    if cfg["workers"] is None or int(cfg["workers"]) < 1:
        raise ConfigError("workers must be >= 1")
    return cfg


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        print(json.dumps({"command": args.command, "config": _clean(cfg)}, sort_keys=True))
        run = Run(cfg)
        saved = {k: v for k, v in cfg.items() if k != "out"}
        _write_json(os.path.join(run.out, "config.json"), {"command": args.command, **saved})
        COMMANDS[args.command](run, cfg)
    except MedimError as e:
        code = getattr(e, "exit_code", EXIT_ALGO)
        kind = {EXIT_CONFIG: "config", EXIT_ALGO: "algorithm", EXIT_IO: "io"}.get(code, "error")
        print(json.dumps({"error": kind, "exit_code": code, "message": str(e)}), file=sys.stderr)
        return code
    except OSError as e:
        print(json.dumps({"error": "io", "exit_code": EXIT_IO, "message": str(e)}), file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
