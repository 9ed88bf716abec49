"""Datasets, file formats, synthetic benchmark generation and checkpoints.

File formats (all little-endian):

- CSV: comma separated, no header, UTF-8; label in column 0 when labeled.
- Raw matrix: ``b"TDA1"``, u64 rows, u64 cols, then rows*cols float32, row-major.
- Checkpoint: ``b"TDCK"``, u32 version, then five sections, each a u64 byte
  length followed by the payload:

  1. JSON ``{"config": ..., "iteration": ..., "seed": ...}``
  2. feature descriptor: u8 architecture tag, u32 d_in, u32 d_hidden, u32 d_out
  3. theta: float64 array
  4. W: u64 rows, u64 cols, float64 row-major
  5. AdaGrad accumulators: u64 rows, u64 cols, float64 W-accumulator,
     followed by the float64 theta-accumulator
"""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from tdadapt.errors import ConfigError, DataFormatError, ShapeError
from tdadapt.features import ARCH_TAGS, ARCHITECTURES, FeatureFunction, param_count

RAWMAT_MAGIC = b"TDA1"
CKPT_MAGIC = b"TDCK"
CKPT_VERSION = 1
CENTER_RADIUS = 5.0


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SourceDataset:
    """Labeled source points with labels in ``0..class_count-1``."""

    points: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64)
        labels = np.asarray(self.labels)
        if points.ndim != 2 or points.shape[0] < 1:
            raise DataFormatError("source dataset needs a non-empty 2-D point matrix")
        if labels.shape != (points.shape[0],):
            raise ShapeError(f"{points.shape[0]} points but {labels.shape} labels")
        if not np.issubdtype(labels.dtype, np.integer):
            raise DataFormatError("labels must be integers")
        if not np.all(np.isfinite(points)):
            raise DataFormatError("source points must be finite")
        if self.class_count < 1:
            raise ConfigError("class_count must be positive")
        if labels.min() < 0 or labels.max() >= self.class_count:
            raise DataFormatError(f"labels must lie in 0..{self.class_count - 1}")
        object.__setattr__(self, "points", _frozen(points))
        object.__setattr__(self, "labels", _frozen(labels.astype(np.int64)))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


class TargetDataset:
    """Unlabeled target points.

    Ground-truth labels may be attached for scoring, but are only reachable
    through :meth:`evaluation_labels`; nothing on the training path calls it.
    """

    __slots__ = ("_points", "_truth")

    def __init__(self, points: np.ndarray, ground_truth: np.ndarray | None = None):
        points = np.asarray(points, dtype=np.float64)
        if points.ndim != 2 or points.shape[0] < 1:
            raise DataFormatError("target dataset needs a non-empty 2-D point matrix")
        if not np.all(np.isfinite(points)):
            raise DataFormatError("target points must be finite")
        truth = None
        if ground_truth is not None:
            truth = np.asarray(ground_truth)
            if truth.shape != (points.shape[0],):
                raise ShapeError(f"{points.shape[0]} points but {truth.shape} ground-truth labels")
            if not np.issubdtype(truth.dtype, np.integer) or (truth.size and truth.min() < 0):
                raise DataFormatError("ground-truth labels must be non-negative integers")
            truth = _frozen(truth.astype(np.int64))
        self._points = _frozen(points)
        self._truth = truth

    @property
    def points(self) -> np.ndarray:
        return self._points

    @property
    def n(self) -> int:
        return self._points.shape[0]

    @property
    def dim(self) -> int:
        return self._points.shape[1]

    @property
    def has_ground_truth(self) -> bool:
        return self._truth is not None

    def evaluation_labels(self) -> np.ndarray:
        if self._truth is None:
            raise DataFormatError("target dataset carries no ground-truth labels")
        return self._truth

    def with_ground_truth(self, labels: np.ndarray) -> TargetDataset:
        return TargetDataset(self._points, labels)

    def without_ground_truth(self) -> TargetDataset:
        return TargetDataset(self._points)


def check_compatible(source: SourceDataset, target: TargetDataset) -> None:
    if source.dim != target.dim:
        raise ShapeError(f"source has {source.dim} features, target has {target.dim}")


# ---------------------------------------------------------------- CSV


def _parse_label(cell: str, row: int) -> int:
    try:
        return int(cell)
    except ValueError:
        pass
    try:
        v = float(cell)
    except ValueError:
        raise DataFormatError(f"row {row}, column 1: label {cell!r} is not an integer") from None
    if not v.is_integer():
        raise DataFormatError(f"row {row}, column 1: label {cell!r} is not an integer")
    return int(v)


def _read_rows(path: str | Path) -> list[list[str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataFormatError(f"{path}: empty dataset")
    return rows


def load_csv(path: str | Path, has_labels: bool, class_count: int | None = None) -> SourceDataset | TargetDataset:
    """Read a dataset. Rows and columns in error messages are 1-based.

    With ``has_labels`` column 0 holds the class and a :class:`SourceDataset`
    is returned; ``class_count`` defaults to ``max(label) + 1``.
    """
    rows = _read_rows(path)
    width = len(rows[0])
    min_width = 2 if has_labels else 1
    if width < min_width:
        raise DataFormatError(f"{path}: row 1 has {width} columns, need at least {min_width}")
    labels = []
    data = np.empty((len(rows), width - (1 if has_labels else 0)))
    for r, row in enumerate(rows, start=1):
        if len(row) != width:
            raise DataFormatError(f"{path}: row {r} has {len(row)} columns, expected {width}")
        cells = row
        if has_labels:
            labels.append(_parse_label(row[0].strip(), r))
            cells = row[1:]
        offset = 2 if has_labels else 1
        for c, cell in enumerate(cells):
            try:
                v = float(cell)
            except ValueError:
                raise DataFormatError(f"{path}: row {r}, column {c + offset}: cannot parse {cell!r}") from None
            if not math.isfinite(v):
                raise DataFormatError(f"{path}: row {r}, column {c + offset}: non-finite value")
            data[r - 1, c] = v
    if not has_labels:
        return TargetDataset(data)
    y = np.array(labels, dtype=np.int64)
    k = int(y.max()) + 1 if class_count is None else class_count
    bad = np.flatnonzero((y < 0) | (y >= k))
    if bad.size:
        raise DataFormatError(f"{path}: row {bad[0] + 1}, column 1: label {y[bad[0]]} out of range 0..{k - 1}")
    return SourceDataset(data, y, k)


def load_labels(path: str | Path) -> np.ndarray:
    """Read a one-label-per-line file (e.g. target ground truth)."""
    rows = _read_rows(path)
    out = []
    for r, row in enumerate(rows, start=1):
        if len(row) != 1:
            raise DataFormatError(f"{path}: row {r} has {len(row)} columns, expected 1")
        out.append(_parse_label(row[0].strip(), r))
    y = np.array(out, dtype=np.int64)
    if y.min() < 0:
        raise DataFormatError(f"{path}: negative label")
    return y


def _fmt(v: float) -> str:
    return repr(float(v))


def save_csv(path: str | Path, points: np.ndarray, labels: np.ndarray | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for i, row in enumerate(np.asarray(points, dtype=np.float64)):
            cells = [_fmt(v) for v in row]
            w.writerow(cells if labels is None else [int(labels[i])] + cells)


def save_labels(path: str | Path, labels: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(f"{int(y)}\n" for y in labels)


# ---------------------------------------------------------------- raw matrices


def load_rawmat(path: str | Path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if len(buf) < 20 or buf[:4] != RAWMAT_MAGIC:
        raise DataFormatError(f"{path}: bad raw-matrix magic")
    rows, cols = struct.unpack_from("<QQ", buf, 4)
    payload = buf[20:]
    if len(payload) != rows * cols * 4:
        raise DataFormatError(f"{path}: header declares {rows}x{cols} but payload has {len(payload)} bytes")
    return np.frombuffer(payload, dtype="<f4").reshape(rows, cols).astype(np.float32)


def save_rawmat(path: str | Path, matrix: np.ndarray) -> None:
    m = np.asarray(matrix)
    if m.ndim != 2:
        raise ShapeError("raw matrix files hold 2-D arrays")
    body = np.ascontiguousarray(m, dtype="<f4").tobytes()
    Path(path).write_bytes(RAWMAT_MAGIC + struct.pack("<QQ", *m.shape) + body)


# ---------------------------------------------------------------- synthetic data


def blob_centers(class_count: int, dim: int = 2) -> np.ndarray:
    """``class_count`` points evenly spaced on a circle of radius 5 (first two coords)."""
    angles = 2.0 * np.pi * np.arange(class_count) / class_count
    centers = np.zeros((class_count, dim))
    centers[:, 0] = CENTER_RADIUS * np.cos(angles)
    centers[:, 1] = CENTER_RADIUS * np.sin(angles)
    return centers


def synth_blobs(
    class_count: int,
    per_class: int,
    dim: int = 2,
    rotation_deg: float = 0.0,
    shift=None,
    noise_sd: float = 1.0,
    seed: int = 0,
) -> tuple[SourceDataset, TargetDataset]:
    """Gaussian blobs for a source domain and a rotated, shifted target domain.

    Target points are an independent draw from the source generator, then
    rotated about the origin in the first two coordinates and shifted.
    Points are ordered class by class in both domains.
    """
    if class_count < 2:
        raise ConfigError("synth_blobs needs at least 2 classes")
    if per_class < 1:
        raise ConfigError("per_class must be >= 1")
    if dim < 2:
        raise ConfigError("synth_blobs needs dim >= 2")
    if noise_sd < 0:
        raise ConfigError("noise_sd must be >= 0")
    shift = np.zeros(dim) if shift is None else np.asarray(shift, dtype=np.float64)
    if shift.shape != (dim,):
        raise ConfigError(f"shift must have length {dim}")

    rng = np.random.default_rng(seed)
    centers = blob_centers(class_count, dim)
    labels = np.repeat(np.arange(class_count), per_class)
    src = centers[labels] + noise_sd * rng.standard_normal((labels.size, dim))
    tgt = centers[labels] + noise_sd * rng.standard_normal((labels.size, dim))

    theta = np.deg2rad(rotation_deg)
    c, s = np.cos(theta), np.sin(theta)
    rot = np.eye(dim)
    rot[:2, :2] = [[c, -s], [s, c]]
    if rotation_deg != 0.0:
        tgt = tgt @ rot.T
    tgt = tgt + shift
    return SourceDataset(src, labels, class_count), TargetDataset(tgt, labels)


# ---------------------------------------------------------------- checkpoints


@dataclass(eq=False)
class Checkpoint:
    """Model state: metric, feature map, optimizer accumulators and provenance."""

    W: np.ndarray
    features: FeatureFunction
    accum_W: np.ndarray
    accum_theta: np.ndarray
    config: dict = field(default_factory=dict)
    iteration: int = 0
    seed: int = 0

    def __post_init__(self):
        self.W = np.array(self.W, dtype=np.float64)
        self.accum_W = np.array(self.accum_W, dtype=np.float64)
        self.accum_theta = np.array(self.accum_theta, dtype=np.float64).ravel()
        d = self.features.d_out
        if self.W.shape != (d, d):
            raise DataFormatError(f"W is {self.W.shape} but the feature descriptor has d_out={d}")
        if self.accum_W.shape != self.W.shape:
            raise DataFormatError("W accumulator shape does not match W")
        if self.accum_theta.shape != self.features.theta.shape:
            raise DataFormatError("theta accumulator length does not match theta")

    def __eq__(self, other):
        if not isinstance(other, Checkpoint):
            return NotImplemented
        return (
            self.features == other.features
            and self.iteration == other.iteration
            and self.seed == other.seed
            and self.config == other.config
            and all(
                a.shape == b.shape and a.tobytes() == b.tobytes()
                for a, b in [(self.W, other.W), (self.accum_W, other.accum_W), (self.accum_theta, other.accum_theta)]
            )
        )


def _section(payload: bytes) -> bytes:
    return struct.pack("<Q", len(payload)) + payload


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    meta = json.dumps(
        {"config": ckpt.config, "iteration": int(ckpt.iteration), "seed": int(ckpt.seed)},
        sort_keys=True,
    ).encode("utf-8")
    f = ckpt.features
    desc = struct.pack("<BIII", ARCH_TAGS[f.arch], f.d_in, f.d_hidden, f.d_out)
    theta = f.theta.astype("<f8").tobytes()
    W = struct.pack("<QQ", *ckpt.W.shape) + ckpt.W.astype("<f8").tobytes()
    acc = (
        struct.pack("<QQ", *ckpt.accum_W.shape)
        + ckpt.accum_W.astype("<f8").tobytes()
        + ckpt.accum_theta.astype("<f8").tobytes()
    )
    head = CKPT_MAGIC + struct.pack("<I", CKPT_VERSION)
    return head + b"".join(_section(p) for p in (meta, desc, theta, W, acc))


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    Path(path).write_bytes(checkpoint_bytes(ckpt))


def _f64(buf: bytes, what: str) -> np.ndarray:
    if len(buf) % 8:
        raise DataFormatError(f"checkpoint {what} section is not a whole number of float64 values")
    return np.frombuffer(buf, dtype="<f8").astype(np.float64)


def parse_checkpoint(buf: bytes) -> Checkpoint:
    if len(buf) < 8 or buf[:4] != CKPT_MAGIC:
        raise DataFormatError("bad checkpoint magic")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != CKPT_VERSION:
        raise DataFormatError(f"unsupported checkpoint version {version}")
    pos, sections = 8, []
    for _ in range(5):
        if pos + 8 > len(buf):
            raise DataFormatError("truncated checkpoint header")
        (n,) = struct.unpack_from("<Q", buf, pos)
        pos += 8
        if pos + n > len(buf):
            raise DataFormatError("checkpoint section length exceeds file size")
        sections.append(buf[pos:pos + n])
        pos += n
    if pos != len(buf):
        raise DataFormatError("trailing bytes after checkpoint sections")
    meta_b, desc_b, theta_b, W_b, acc_b = sections

    try:
        meta = json.loads(meta_b.decode("utf-8"))
        config, iteration, seed = meta["config"], int(meta["iteration"]), int(meta["seed"])
    except (ValueError, KeyError, TypeError) as exc:
        raise DataFormatError(f"corrupt checkpoint metadata: {exc}") from None

    if len(desc_b) != 13:
        raise DataFormatError("corrupt feature descriptor")
    tag, d_in, d_hidden, d_out = struct.unpack("<BIII", desc_b)
    if tag >= len(ARCHITECTURES):
        raise DataFormatError(f"unknown architecture tag {tag}")
    arch = ARCHITECTURES[tag]

    theta = _f64(theta_b, "theta")
    try:
        expected = param_count(arch, d_in, d_out, d_hidden)
    except ConfigError as exc:
        raise DataFormatError(str(exc)) from None
    if theta.size != expected:
        raise DataFormatError(f"theta has {theta.size} values, descriptor implies {expected}")

    if len(W_b) < 16:
        raise DataFormatError("corrupt W section")
    rows, cols = struct.unpack_from("<QQ", W_b)
    W = _f64(W_b[16:], "W")
    if W.size != rows * cols:
        raise DataFormatError(f"W section declares {rows}x{cols} but holds {W.size} values")
    W = W.reshape(rows, cols)

    if len(acc_b) < 16:
        raise DataFormatError("corrupt accumulator section")
    arows, acols = struct.unpack_from("<QQ", acc_b)
    acc = _f64(acc_b[16:], "accumulator")
    if acc.size != arows * acols + theta.size:
        raise DataFormatError("accumulator section size does not match W and theta")
    accum_W = acc[: arows * acols].reshape(arows, acols)
    accum_theta = acc[arows * acols:]

    try:
        features = FeatureFunction(arch, d_in, d_out, d_hidden, theta)
        return Checkpoint(W, features, accum_W, accum_theta, config, iteration, seed)
    except (ConfigError, ShapeError) as exc:
        raise DataFormatError(f"inconsistent checkpoint: {exc}") from None


def load_checkpoint(path: str | Path) -> Checkpoint:
    return parse_checkpoint(Path(path).read_bytes())
