"""Per-instance gate saliency export: CSV rows plus a P2 grayscale grid image."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from reconmil.bagstore import FeatureBag
from reconmil.heads import ModelParams, model_forward
from reconmil.harness.train import order_bag


class SaliencyError(ValueError):
    pass


def bag_saliency(params: ModelParams, bag: FeatureBag, ordering: str = "coords_raster") -> np.ndarray:
    """Saliency per instance, indexed like the rows of ``bag`` as stored."""
    if bag.coords is None and ordering == "coords_raster":
        raise SaliencyError("missing coords")
    if ordering == "coords_raster":
        order = np.lexsort((bag.coords[:, 1], bag.coords[:, 0]))
    else:
        order = np.arange(bag.n_instances)
    fr = model_forward(order_bag(bag, ordering), params)
    if fr.saliency is None:
        raise SaliencyError("model has no gated local stream; saliency undefined")
    out = np.empty(bag.n_instances)
    out[order] = fr.saliency
    return out


def to_gray(values: np.ndarray) -> np.ndarray:
    """Map saliency in [0, 1] linearly onto 0..255, rounding half up."""
    return np.clip(np.floor(np.asarray(values) * 255.0 + 0.5), 0, 255).astype(int)


def grid_image(coords: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Bounding-box grid of gray levels; cells without an instance are 0."""
    r0, c0 = coords.min(axis=0)
    r1, c1 = coords.max(axis=0)
    img = np.zeros((r1 - r0 + 1, c1 - c0 + 1), dtype=int)
    img[coords[:, 0] - r0, coords[:, 1] - c0] = to_gray(values)
    return img


def write_pgm(img: np.ndarray, path) -> None:
    h, w = img.shape
    lines = ["P2", f"{w} {h}", "255"]
    lines += [" ".join(str(int(v)) for v in row) for row in img]
    Path(path).write_text("\n".join(lines) + "\n")


def read_pgm(path) -> np.ndarray:
    tokens = [t for line in Path(path).read_text().splitlines()
              if not line.startswith("#") for t in line.split()]
    if tokens[0] != "P2":
        raise ValueError("not an ASCII PGM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    return np.array([int(t) for t in tokens[4:4 + w * h]]).reshape(h, w)


def export_saliency(params: ModelParams, bag: FeatureBag, out_prefix, ordering: str = "coords_raster",
                    figure: bool = True) -> dict:
    """Write <prefix>.csv, <prefix>.pgm and (optionally) <prefix>.png; returns the paths."""
    if bag.coords is None:
        raise SaliencyError("missing coords")
    sal = bag_saliency(params, bag, ordering)
    prefix = Path(out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    csv_path = prefix.with_name(prefix.name + ".csv")
    pgm_path = prefix.with_name(prefix.name + ".pgm")
    with csv_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["instance", "row", "col", "saliency"])
        for i, ((r, c), s) in enumerate(zip(bag.coords, sal)):
            w.writerow([i, int(r), int(c), repr(float(s))])
    img = grid_image(bag.coords, sal)
    write_pgm(img, pgm_path)
    paths = {"csv": csv_path, "pgm": pgm_path}
    if figure:
        from reconmil.harness import plots
        paths["png"] = plots.saliency_figure(bag.coords, sal, prefix.with_name(prefix.name + ".png"),
                                             title=bag.bag_id, witnesses=bag.witnesses)
    return paths


def lesion_contrast(img: np.ndarray, coords: np.ndarray, witnesses) -> float:
    """Mean pixel inside lesion cells minus mean over other occupied cells."""
    r0, c0 = coords.min(axis=0)
    mask = np.zeros(len(coords), dtype=bool)
    mask[np.asarray(witnesses, dtype=int)] = True
    pix = img[coords[:, 0] - r0, coords[:, 1] - c0]
    if mask.all() or not mask.any():
        return math.nan
    return float(pix[mask].mean() - pix[~mask].mean())
