"""Flat tables and SVG renderings from metric reports and hypothesis files."""
from __future__ import annotations

import csv
import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import skeleton as sk  # noqa: E402
from .formats import atomic_write  # noqa: E402

# fixed ids and no timestamp keep the SVG output byte-stable
plt.rcParams["svg.hashsalt"] = "posehyp"
_SVG_META = {"Date": None, "Creator": None}


def pck_table(report: dict) -> str:
    th = report["pck"]["thresholds"]
    curves = report["pck"].get("curves", {})
    names = sorted(curves)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["threshold_mm"] + names)
    for i, t in enumerate(th):
        w.writerow([f"{t:g}"] + [f"{curves[n][i]:.6f}" for n in names])
    return buf.getvalue()


def _flatten(d, prefix=""):
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def frames_table(report: dict) -> str:
    rows = [_flatten(r) for r in report["frames"]]
    cols = sorted({c for r in rows for c in r})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow(["" if r.get(c) is None else r.get(c) for c in cols])
    return buf.getvalue()


def _svg(fig) -> str:
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata=_SVG_META)
    plt.close(fig)
    return buf.getvalue()


def pck_svg(report: dict) -> str:
    th = np.asarray(report["pck"]["thresholds"], float)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name in sorted(report["pck"].get("curves", {})):
        ax.plot(th, report["pck"]["curves"][name], label=name)
    ax.set_xlabel("threshold (mm)")
    ax.set_ylabel("PCK")
    ax.set_ylim(0, 1.02)
    ax.grid(True, lw=0.3)
    ax.legend(fontsize=7)
    fig.tight_layout()
    return _svg(fig)


def skeleton_svg(poses, title: str = "") -> str:
    """Front (x-y) and side (z-y) views of one or more root-relative poses."""
    P = sk.root_relative(np.atleast_3d(np.asarray(poses, float)).reshape(-1, sk.NUM_JOINTS, 3))
    fig, axes = plt.subplots(1, 2, figsize=(6, 3.5))
    for ax, (a, b), name in zip(axes, ((0, 1), (2, 1)), ("front", "side")):
        for k, X in enumerate(P):
            for p, c in sk.BONES:
                ax.plot(X[[p, c], a], X[[p, c], b], color=f"C{k % 10}", lw=1)
        ax.set_aspect("equal")
        ax.set_title(name, fontsize=8)
        ax.tick_params(labelsize=6)
    if title:
        fig.suptitle(title, fontsize=9)
    fig.tight_layout()
    return _svg(fig)


def emit(report: dict | None, out_dir, hypotheses=None) -> list[Path]:
    """Write CSV tables and SVG figures into ``out_dir``; returns the written paths."""
    out = Path(out_dir)
    written = []

    def put(name, text):
        atomic_write(out / name, text)
        written.append(out / name)

    if report is not None:
        put("pck.csv", pck_table(report))
        put("frames.csv", frames_table(report))
        put("pck.svg", pck_svg(report))
    for rec in hypotheses or ():
        safe = "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in rec.frame_id)
        put(f"hypotheses_{safe}.svg", skeleton_svg(rec.poses, f"frame {rec.frame_id}"))
    return written
