"""Bags of instance features: data model, .rmb files, manifests, folds, synthetic data."""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"RMB1"
VERSION = 1
_HEADER = struct.Struct("<4sIIIBB2x")  # magic, version, N, D, dtype, has_coords, reserved
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}

CLASSIFICATION = "classification"
SURVIVAL = "survival"


class BagFormatError(ValueError):
    pass


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class LabelRecord:
    task: str
    class_index: int | None = None
    event_time: float | None = None
    event_observed: bool | None = None

    def __post_init__(self):
        if self.task == CLASSIFICATION:
            if self.class_index is None or self.event_time is not None or self.event_observed is not None:
                raise ValueError("classification label needs class_index and no survival fields")
            if self.class_index < 0:
                raise ValueError("class_index must be >= 0")
        elif self.task == SURVIVAL:
            if self.class_index is not None or self.event_time is None or self.event_observed is None:
                raise ValueError("survival label needs event_time and event_observed only")
            if not self.event_time > 0:
                raise ValueError("event_time must be positive")
        else:
            raise ValueError(f"unknown task {self.task!r}")

    @classmethod
    def classification(cls, class_index: int) -> "LabelRecord":
        return cls(CLASSIFICATION, class_index=int(class_index))

    @classmethod
    def survival(cls, event_time: float, event_observed: bool) -> "LabelRecord":
        return cls(SURVIVAL, event_time=float(event_time), event_observed=bool(event_observed))


@dataclass(frozen=True, eq=False)
class FeatureBag:
    bag_id: str
    features: np.ndarray
    label: LabelRecord
    coords: np.ndarray | None = None
    # witness row indices, known only for synthetic bags
    witnesses: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        f = self.features
        if f.ndim != 2 or f.shape[0] < 1 or f.shape[1] < 1:
            raise ValueError(f"features must be N x D with N, D >= 1, got {f.shape}")
        if not np.all(np.isfinite(f)):
            raise ValueError("non-finite feature")
        if self.coords is not None:
            c = self.coords
            if c.shape != (f.shape[0], 2):
                raise ValueError("coords must have one (row, col) pair per instance")
            if len({(int(a), int(b)) for a, b in c}) != len(c):
                raise ValueError("coords must be distinct")
        f.setflags(write=False)
        if self.coords is not None:
            self.coords.setflags(write=False)

    @property
    def n_instances(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __eq__(self, other):
        if not isinstance(other, FeatureBag):
            return NotImplemented
        same_coords = (self.coords is None and other.coords is None) or (
            self.coords is not None and other.coords is not None and np.array_equal(self.coords, other.coords))
        return (self.bag_id == other.bag_id and self.label == other.label and same_coords
                and self.features.dtype == other.features.dtype
                and self.features.shape == other.features.shape
                and self.features.tobytes() == other.features.tobytes())

    def reordered(self, order: np.ndarray) -> "FeatureBag":
        coords = None if self.coords is None else self.coords[order]
        witnesses = None
        if self.witnesses is not None:
            inv = np.empty_like(order)
            inv[order] = np.arange(len(order))
            witnesses = np.sort(inv[self.witnesses])
        return FeatureBag(self.bag_id, self.features[order], self.label, coords, witnesses)


# ------------------------------------------------------------------- .rmb io


def write_bag(bag: FeatureBag, path) -> None:
    f = bag.features
    if not np.all(np.isfinite(f)):
        raise ValueError("non-finite feature")
    code = 0 if f.dtype == np.float32 else 1
    has_coords = bag.coords is not None
    N, D = f.shape
    parts = [_HEADER.pack(MAGIC, VERSION, N, D, code, int(has_coords))]
    if has_coords:
        parts.append(np.ascontiguousarray(bag.coords, dtype="<i4").tobytes())
    parts.append(np.ascontiguousarray(f, dtype=_DTYPES[code]).tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_bag(path, bag_id: str | None = None, label: LabelRecord | None = None) -> FeatureBag:
    """Read an .rmb file.  The file carries no label; pass one or get a placeholder."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise BagFormatError("truncated payload")
    magic, version, N, D, code, has_coords, = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise BagFormatError("bad magic")
    if version != VERSION:
        raise BagFormatError(f"unsupported version {version}")
    if code not in _DTYPES:
        raise BagFormatError(f"unsupported dtype code {code}")
    if has_coords not in (0, 1):
        raise BagFormatError("bad has_coords flag")
    off = _HEADER.size
    coords = None
    if has_coords:
        nbytes = 8 * N
        if len(raw) < off + nbytes:
            raise BagFormatError("truncated payload")
        coords = np.frombuffer(raw, dtype="<i4", count=2 * N, offset=off).reshape(N, 2).astype(np.int64)
        off += nbytes
    dt = _DTYPES[code]
    expected = N * D * dt.itemsize
    if len(raw) - off < expected:
        raise BagFormatError("truncated payload")
    if len(raw) - off > expected:
        raise BagFormatError("payload longer than header N*D")
    features = np.frombuffer(raw, dtype=dt, count=N * D, offset=off).reshape(N, D)
    features = features.astype(dt.newbyteorder("="))
    if label is None:
        label = LabelRecord.classification(0)
    return FeatureBag(bag_id if bag_id is not None else Path(path).stem, features, label, coords)


# ------------------------------------------------------------------ manifest

MANIFEST_COLUMNS = ("bag_id", "path", "class_index", "event_time", "event_observed")


@dataclass(frozen=True)
class ManifestRecord:
    bag_id: str
    path: Path
    label: LabelRecord


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true"):
        return True
    if t in ("0", "false"):
        return False
    raise ManifestError(f"unparseable number {text!r}")


def load_manifest(path) -> list[ManifestRecord]:
    """Parse a manifest CSV; relative feature paths resolve against its directory."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in MANIFEST_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ManifestError(f"missing column: {', '.join(missing)}")
        records: list[ManifestRecord] = []
        seen: set[str] = set()
        tasks: set[str] = set()
        for row in reader:
            bag_id = row["bag_id"].strip()
            if bag_id in seen:
                raise ManifestError(f"duplicate bag_id {bag_id!r}")
            seen.add(bag_id)
            cls = (row["class_index"] or "").strip()
            et = (row["event_time"] or "").strip()
            eo = (row["event_observed"] or "").strip()
            if cls and (et or eo):
                raise ManifestError("mixed tasks")
            try:
                if cls:
                    label = LabelRecord.classification(int(cls))
                elif et and eo:
                    label = LabelRecord.survival(float(et), _parse_bool(eo))
                else:
                    raise ManifestError(f"row {bag_id!r} has no usable label")
            except ValueError as exc:
                if isinstance(exc, ManifestError):
                    raise
                raise ManifestError(f"unparseable number in row {bag_id!r}: {exc}") from exc
            tasks.add(label.task)
            if len(tasks) > 1:
                raise ManifestError("mixed tasks")
            p = Path(row["path"].strip())
            records.append(ManifestRecord(bag_id, p if p.is_absolute() else path.parent / p, label))
    return records


def write_manifest(records, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MANIFEST_COLUMNS)
        for r in records:
            lab = r.label
            try:
                rel = Path(r.path).relative_to(path.parent)
            except ValueError:
                rel = Path(r.path)
            if lab.task == CLASSIFICATION:
                w.writerow([r.bag_id, rel.as_posix(), lab.class_index, "", ""])
            else:
                w.writerow([r.bag_id, rel.as_posix(), "", repr(lab.event_time), int(lab.event_observed)])


def num_classes(records) -> int:
    return max(r.label.class_index for r in records) + 1


def load_bags(records) -> list[FeatureBag]:
    return [read_bag(r.path, r.bag_id, r.label) for r in records]


# --------------------------------------------------------------------- folds


@dataclass(frozen=True)
class FoldAssignment:
    k: int
    assignment: dict
    seed: int
    warnings: tuple = ()

    def fold_of(self, bag_id: str) -> int:
        return self.assignment[bag_id]

    def members(self, fold: int) -> list[str]:
        return [b for b, f in self.assignment.items() if f == fold]

    def sizes(self) -> list[int]:
        out = [0] * self.k
        for f in self.assignment.values():
            out[f] += 1
        return out


def _stratum(label: LabelRecord):
    return label.class_index if label.task == CLASSIFICATION else bool(label.event_observed)


def make_folds(records, k: int, seed: int) -> FoldAssignment:
    """Stratified, seeded k-fold assignment.

    Strata are dealt round-robin starting where the previous stratum stopped, so
    total fold sizes stay balanced too.  A stratum smaller than k is still dealt
    this way (it cannot be stratified) and a warning is recorded.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    if k > len(records):
        raise ValueError(f"k={k} exceeds number of records {len(records)}")
    rng = np.random.default_rng(seed)
    strata: dict = {}
    for r in records:
        strata.setdefault(_stratum(r.label), []).append(r.bag_id)
    assignment: dict[str, int] = {}
    warnings = []
    cursor = 0
    for key in sorted(strata, key=lambda s: (str(type(s)), s)):
        ids = sorted(strata[key])
        if len(ids) < k:
            warnings.append(f"stratum {key!r} has {len(ids)} < k={k} members; unstratified")
        for pos, i in enumerate(rng.permutation(len(ids))):
            assignment[ids[i]] = (cursor + pos) % k
        cursor = (cursor + len(ids)) % k
    ordered = {r.bag_id: assignment[r.bag_id] for r in records}
    return FoldAssignment(k, ordered, seed, tuple(warnings))


# ----------------------------------------------------------------- synthetic


@dataclass(frozen=True)
class SynthConfig:
    num_bags: int = 200
    instances_per_bag: tuple = (64, 128)
    feature_dim: int = 32
    num_classes: int = 2
    witness_fraction: float = 0.05
    witness_shift: float = 3.0
    noise_sigma: float = 1.0
    mode: str = CLASSIFICATION
    # survival: base time scale (months) and fraction of censored bags
    t0: float = 60.0
    censor_fraction: float = 0.3
    shuffle_rows: bool = True

    def __post_init__(self):
        lo, hi = self.instances_per_bag
        if self.num_bags < 1 or lo < 1 or hi < lo or self.feature_dim < 1 or self.num_classes < 1:
            raise ValueError("synthetic counts must be positive")
        if not 0 < self.witness_fraction <= 1:
            raise ValueError("witness_fraction must be in (0, 1]")
        if self.witness_shift < 0 or self.noise_sigma < 0:
            raise ValueError("witness_shift and noise_sigma must be >= 0")
        if self.mode not in (CLASSIFICATION, SURVIVAL):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == CLASSIFICATION and self.num_classes > self.feature_dim:
            raise ValueError("num_classes exceeds feature_dim: no orthogonal class directions")


def grid_coords(n: int) -> np.ndarray:
    side = math.isqrt(n - 1) + 1 if n > 1 else 1
    idx = np.arange(n)
    return np.stack([idx // side, idx % side], axis=1)


def _one_bag(rng, cfg: SynthConfig, bag_id: str, n: int, n_wit: int, direction: int | None, label):
    D = cfg.feature_dim
    x = rng.standard_normal((n, D)) * cfg.noise_sigma
    wit = np.zeros(0, dtype=np.int64)
    if n_wit > 0 and direction is not None:
        start = int(rng.integers(0, n - n_wit + 1))
        wit = np.arange(start, start + n_wit)
        x[wit, direction] += cfg.witness_shift
    coords = grid_coords(n)
    bag = FeatureBag(bag_id, x, label, coords, wit)
    if cfg.shuffle_rows:
        bag = bag.reordered(rng.permutation(n))
    return bag


def synth_bags(cfg: SynthConfig, seed: int) -> list[FeatureBag]:
    """Generate bags with a contiguous lesion of witness instances.

    Rows are laid out on a ceil(sqrt(N)) grid in raster order; witnesses occupy a
    run of consecutive raster positions.  With ``shuffle_rows`` the stored row
    order is permuted (coordinates travel with their rows).
    """
    rng = np.random.default_rng(seed)
    lo, hi = cfg.instances_per_bag
    bags = []
    censored = set()
    if cfg.mode == SURVIVAL:
        n_cens = int(round(cfg.censor_fraction * cfg.num_bags))
        censored = set(rng.permutation(cfg.num_bags)[:n_cens].tolist())
    for b in range(cfg.num_bags):
        n = int(rng.integers(lo, hi + 1))
        bag_id = f"bag{b:05d}"
        if cfg.mode == CLASSIFICATION:
            c = int(rng.integers(0, cfg.num_classes))
            n_wit = math.ceil(cfg.witness_fraction * n) if c > 0 else 0
            bags.append(_one_bag(rng, cfg, bag_id, n, n_wit, c if c > 0 else None,
                                 LabelRecord.classification(c)))
        else:
            frac = float(rng.uniform(0.0, cfg.witness_fraction))
            n_wit = int(round(frac * n))
            risk = (n_wit / n) * cfg.witness_shift
            t_event = cfg.t0 * math.exp(-risk) * float(rng.uniform(0.5, 1.5))
            if b in censored:
                frac_seen = max(float(rng.uniform(0.0, 1.0)), 1e-6)
                label = LabelRecord.survival(t_event * frac_seen, False)
            else:
                label = LabelRecord.survival(t_event, True)
            bags.append(_one_bag(rng, cfg, bag_id, n, n_wit, 1 if cfg.feature_dim > 1 else 0, label))
    return bags


def save_dataset(bags, out_dir) -> Path:
    """Write every bag as .rmb plus a manifest.csv; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for bag in bags:
        p = out / f"{bag.bag_id}.rmb"
        write_bag(bag, p)
        records.append(ManifestRecord(bag.bag_id, p, bag.label))
    manifest = out / "manifest.csv"
    write_manifest(records, manifest)
    return manifest
