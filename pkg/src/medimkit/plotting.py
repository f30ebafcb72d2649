"""Report figures written next to CSV/JSON outputs (non-interactive backend)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .imgcore import as_float  # noqa: E402
from .metrics import boundary  # noqa: E402

# fixed metadata keeps PNG bytes reproducible
_META = {"Software": None}


def _save(fig, path):
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)


def _imshow(ax, img):
    a = np.asarray(img)
    if a.ndim == 3:
        ax.imshow(np.clip(a, 0, 255).astype(np.uint8))
    else:
        ax.imshow(as_float(a), cmap="gray", interpolation="nearest")
    ax.set_axis_off()


def overlay(path, img, masks, colors=("r", "c", "y"), title=None):
    """Contours of one or more masks over the image."""
    fig, ax = plt.subplots(figsize=(5, 5))
    _imshow(ax, img)
    if not isinstance(masks, (list, tuple)):
        masks = [masks]
    for m, c in zip(masks, colors):
        b = boundary(np.asarray(m, bool))
        ys, xs = np.nonzero(b)
        ax.plot(xs, ys, ",", color=c)
    if title:
        ax.set_title(title)
    _save(fig, path)


def histogram_plot(path, img, mask=None, thetas=None, title=None):
    a = as_float(img)
    v = a[np.asarray(mask, bool)] if mask is not None else a.ravel()
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.hist(v, bins=min(256, max(8, int(np.ptp(v)) + 1)), color="0.4")
    for name, t in (thetas or {}).items():
        ax.axvline(t, color="r", lw=1)
        ax.text(t, ax.get_ylim()[1] * 0.9, f" {name}={t:.1f}", color="r", fontsize=8)
    ax.set_xlabel("gray level")
    ax.set_ylabel("count")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)


def convergence_plot(path, values, ylabel="best value", title=None):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(np.arange(len(values)), values, "-", color="k")
    ax.set_xlabel("iteration")
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)


def wells_plot(path, rgb, wells, masks=None):
    fig, ax = plt.subplots(figsize=(7, 5))
    _imshow(ax, rgb)
    t = np.linspace(0, 2 * np.pi, 200)
    for i, w in enumerate(wells, 1):
        ax.plot(w.x + w.r * np.cos(t), w.y + w.r * np.sin(t), "-", color="lime", lw=1)
        ax.text(w.x, w.y, str(i), color="yellow", ha="center", va="center", fontsize=9)
    if masks is not None:
        for m in masks:
            ys, xs = np.nonzero(boundary(m))
            ax.plot(xs, ys, ",", color="r")
    _save(fig, path)


def labels_plot(path, img, labels):
    L = np.asarray(labels)
    fig, ax = plt.subplots(figsize=(6, 6))
    _imshow(ax, img)
    if L.max() > 0:
        rng = np.random.default_rng(0)
        lut = rng.random((int(L.max()) + 1, 3))
        rgba = np.zeros(L.shape + (4,))
        rgba[..., :3] = lut[L]
        rgba[..., 3] = np.where(L > 0, 0.4, 0.0)
        ax.imshow(rgba, interpolation="nearest")
    _save(fig, path)


def side_by_side(path, images, titles):
    fig, axes = plt.subplots(1, len(images), figsize=(4 * len(images), 4))
    for ax, im, t in zip(np.atleast_1d(axes), images, titles):
        _imshow(ax, im)
        ax.set_title(t)
    fig.tight_layout()
    _save(fig, path)
