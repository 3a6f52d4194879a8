"""AIS ingestion, NFF1 feature files, and the image/vessel-centred datasets.

NFF1 layout (little-endian): magic b"NFF1", u32 record count, u32 x 3 dims
(256, 7, 7), then per record: u64 mmsi, u16 image-id byte length, id bytes,
f32 confidence, 12544 f32 feature values.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .cart import AIS_FIELDS

log = logging.getLogger("nfship.data")

NFF1_MAGIC = b"NFF1"
FEATURE_SHAPE = (256, 7, 7)
FEATURE_SIZE = 256 * 7 * 7
MANIFEST_VERSION = 1


class FormatError(ValueError):
    pass


class EmptyDatasetError(ValueError):
    pass


@dataclass(frozen=True)
class AisStaticRecord:
    mmsi: int
    to_bow: float
    to_stern: float
    to_starboard: float
    to_port: float
    width: float
    length: float
    draught: float
    ship_type: str

    def vector(self) -> np.ndarray:
        """Fields in the fixed order used everywhere downstream."""
        return np.array([getattr(self, f) for f in AIS_FIELDS], dtype=np.float64)


@dataclass
class ImageFeatureRecord:
    image_id: str
    mmsi: int
    feature: np.ndarray  # (256, 7, 7) float32
    confidence: float

    def __post_init__(self):
        self.feature = np.asarray(self.feature, dtype=np.float32)
        if self.feature.shape != FEATURE_SHAPE:
            raise FormatError(f"feature must be {FEATURE_SHAPE}, got {self.feature.shape}")
        if not np.isfinite(self.feature).all():
            raise FormatError("feature contains non-finite values")


class LoadResult(NamedTuple):
    records: list
    dropped: int
    parse_errors: int


AIS_CSV_COLUMNS = ("mmsi",) + AIS_FIELDS + ("ship_type",)


def load_ais_csv(path) -> LoadResult:
    """Read AIS static records from a named-header CSV.

    Rows missing any retained field are dropped; rows with non-numeric
    values count as parse errors. Both counts are returned and logged.
    """
    path = Path(path)
    records: list[AisStaticRecord] = []
    dropped = 0
    parse_errors = 0
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not set(AIS_CSV_COLUMNS) <= set(reader.fieldnames):
            missing = set(AIS_CSV_COLUMNS) - set(reader.fieldnames or ())
            raise FormatError(f"AIS CSV header is missing columns: {sorted(missing)}")
        seen: set[int] = set()
        for row in reader:
            if any(row.get(c) in (None, "") for c in AIS_CSV_COLUMNS):
                dropped += 1
                continue
            try:
                mmsi = int(row["mmsi"])
                values = {f: float(row[f]) for f in AIS_FIELDS}
            except ValueError:
                parse_errors += 1
                continue
            if mmsi in seen:
                warnings.warn(f"duplicate mmsi {mmsi} in AIS table; keeping first")
                continue
            seen.add(mmsi)
            records.append(AisStaticRecord(mmsi=mmsi, ship_type=row["ship_type"], **values))
    if dropped or parse_errors:
        log.info("load_ais_csv: %d incomplete rows dropped, %d parse errors", dropped, parse_errors)
    return LoadResult(records, dropped, parse_errors)


def write_ais_csv(path, records: list[AisStaticRecord]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(AIS_CSV_COLUMNS)
        for r in records:
            w.writerow([r.mmsi] + [repr(getattr(r, f)) for f in AIS_FIELDS] + [r.ship_type])


def write_nff1(path, records: list[ImageFeatureRecord]) -> None:
    with Path(path).open("wb") as fh:
        fh.write(NFF1_MAGIC)
        fh.write(struct.pack("<IIII", len(records), *FEATURE_SHAPE))
        for r in records:
            idb = r.image_id.encode("utf-8")
            fh.write(struct.pack("<QH", r.mmsi, len(idb)))
            fh.write(idb)
            fh.write(struct.pack("<f", r.confidence))
            fh.write(np.ascontiguousarray(r.feature, dtype="<f4").tobytes())


def read_nff1(path) -> list[ImageFeatureRecord]:
    data = Path(path).read_bytes()
    if data[:4] != NFF1_MAGIC:
        raise FormatError("not an NFF1 file (bad magic)")
    count, d0, d1, d2 = struct.unpack_from("<IIII", data, 4)
    if (d0, d1, d2) != FEATURE_SHAPE:
        raise FormatError(f"unexpected feature dims {(d0, d1, d2)}")
    off = 20
    records = []
    for _ in range(count):
        mmsi, idlen = struct.unpack_from("<QH", data, off)
        off += 10
        image_id = data[off:off + idlen].decode("utf-8")
        off += idlen
        (conf,) = struct.unpack_from("<f", data, off)
        off += 4
        feat = np.frombuffer(data, dtype="<f4", count=FEATURE_SIZE, offset=off).reshape(FEATURE_SHAPE)
        off += FEATURE_SIZE * 4
        records.append(ImageFeatureRecord(image_id, mmsi, feat.copy(), conf))
    if off != len(data):
        raise FormatError("trailing bytes after last NFF1 record")
    return records


@dataclass
class Dataset:
    """Rows of (feature, ais vector, label index); mmsi kept for grouping.

    kind is "ic" (one row per image) or "vc" (one row per vessel, features
    averaged over that vessel's images).
    """
    features: np.ndarray  # (n, 256, 7, 7) float32
    ais: np.ndarray       # (n, 7) float64
    labels: np.ndarray    # (n,) int
    mmsi: np.ndarray      # (n,) uint64
    class_names: list[str]
    kind: str = "ic"
    image_ids: list[str] | None = None

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)


def _class_names_from(ais: list[AisStaticRecord]) -> list[str]:
    return sorted({r.ship_type for r in ais})


def build_image_centred(images: list[ImageFeatureRecord], ais: list[AisStaticRecord]) -> Dataset:
    """Inner join of images with AIS on mmsi; one row per matched image."""
    by_mmsi = {r.mmsi: r for r in ais}
    names = _class_names_from(ais)
    label_of = {n: i for i, n in enumerate(names)}
    rows = [(img, by_mmsi[img.mmsi]) for img in images if img.mmsi in by_mmsi]
    excluded = len(images) - len(rows)
    if excluded:
        log.info("build_image_centred: %d images excluded (mmsi not in AIS table)", excluded)
    if not rows:
        return Dataset(np.empty((0, *FEATURE_SHAPE), np.float32), np.empty((0, 7)),
                       np.empty(0, int), np.empty(0, np.uint64), names, "ic", [])
    feats = np.stack([img.feature for img, _ in rows])
    vecs = np.stack([rec.vector() for _, rec in rows])
    labels = np.array([label_of[rec.ship_type] for _, rec in rows])
    mmsi = np.array([img.mmsi for img, _ in rows], dtype=np.uint64)
    ids = [img.image_id for img, _ in rows]
    return Dataset(feats, vecs, labels, mmsi, names, "ic", ids)


def build_vessel_centred(images: list[ImageFeatureRecord], ais: list[AisStaticRecord]) -> Dataset:
    """One row per vessel: elementwise mean of its image features, joined with AIS."""
    names = _class_names_from(ais)
    label_of = {n: i for i, n in enumerate(names)}
    grouped: dict[int, list[np.ndarray]] = {}
    for img in images:
        grouped.setdefault(img.mmsi, []).append(img.feature)
    rows = [(rec, grouped[rec.mmsi]) for rec in ais if rec.mmsi in grouped]
    if not rows:
        return Dataset(np.empty((0, *FEATURE_SHAPE), np.float32), np.empty((0, 7)),
                       np.empty(0, int), np.empty(0, np.uint64), names, "vc")
    feats = np.stack([np.mean(np.stack(fs), axis=0, dtype=np.float64).astype(np.float32)
                      for _, fs in rows])
    vecs = np.stack([rec.vector() for rec, _ in rows])
    labels = np.array([label_of[rec.ship_type] for rec, _ in rows])
    mmsi = np.array([rec.mmsi for rec, _ in rows], dtype=np.uint64)
    return Dataset(feats, vecs, labels, mmsi, names, "vc")


def filter_rare_classes(ds: Dataset, min_vessels: int = 20) -> Dataset:
    """Drop classes with distinct-vessel count <= min_vessels and re-compact labels."""
    if min_vessels < 1:
        raise ValueError("min_vessels must be >= 1")
    keep_classes = []
    for i, name in enumerate(ds.class_names):
        n_vessels = len(np.unique(ds.mmsi[ds.labels == i]))
        if n_vessels > min_vessels:
            keep_classes.append(i)
    if not keep_classes:
        raise EmptyDatasetError("every class fell below the vessel-count threshold")
    remap = {old: new for new, old in enumerate(keep_classes)}
    mask = np.isin(ds.labels, keep_classes)
    labels = np.array([remap[v] for v in ds.labels[mask]])
    ids = [s for s, m in zip(ds.image_ids, mask) if m] if ds.image_ids else None
    return Dataset(ds.features[mask], ds.ais[mask], labels, ds.mmsi[mask],
                   [ds.class_names[i] for i in keep_classes], ds.kind, ids)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.75
    seed: int = 0
    group_by_mmsi: bool = True

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must be in (0, 1)")


def _take(ds: Dataset, mask: np.ndarray) -> Dataset:
    ids = [s for s, m in zip(ds.image_ids, mask) if m] if ds.image_ids else None
    return Dataset(ds.features[mask], ds.ais[mask], ds.labels[mask], ds.mmsi[mask],
                   list(ds.class_names), ds.kind, ids)


def split(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Deterministic stratified split; with group_by_mmsi no vessel straddles halves.

    Per class, vessels are shuffled under the seed and assigned greedily so
    the train side holds ~train_fraction of the class's vessels.
    """
    if len(ds) == 0:
        raise EmptyDatasetError("cannot split an empty dataset")
    rng = np.random.default_rng(spec.seed)
    if spec.group_by_mmsi:
        train_mmsi: set[int] = set()
        for c in range(ds.n_classes):
            vessels = np.unique(ds.mmsi[ds.labels == c])
            if len(vessels) == 1:
                warnings.warn(f"class {ds.class_names[c]!r} has a single vessel; assigned to train")
                train_mmsi.add(int(vessels[0]))
                continue
            perm = rng.permutation(vessels)
            n_train = int(round(spec.train_fraction * len(vessels)))
            n_train = min(max(n_train, 1), len(vessels) - 1)
            train_mmsi.update(int(v) for v in perm[:n_train])
        mask = np.array([int(m) in train_mmsi for m in ds.mmsi])
    else:
        mask = np.zeros(len(ds), dtype=bool)
        for c in range(ds.n_classes):
            idx = np.flatnonzero(ds.labels == c)
            perm = rng.permutation(idx)
            n_train = int(round(spec.train_fraction * len(idx)))
            n_train = min(max(n_train, 1), max(len(idx) - 1, 1))
            mask[perm[:n_train]] = True
    return _take(ds, mask), _take(ds, ~mask)


def config_hash(obj) -> str:
    """Stable short hash of a JSON-serializable config."""
    blob = json.dumps(obj, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def save_dataset(ds: Dataset, out_dir, seed: int | None = None, extra: dict | None = None) -> None:
    """Persist as manifest.json (rows, label map, seed) + features.nff1 blob."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ids = ds.image_ids or [f"row{i:06d}" for i in range(len(ds))]
    records = [ImageFeatureRecord(ids[i], int(ds.mmsi[i]), ds.features[i], 1.0)
               for i in range(len(ds))]
    write_nff1(out_dir / "features.nff1", records)
    manifest = {
        "version": MANIFEST_VERSION,
        "kind": ds.kind,
        "class_names": ds.class_names,
        "field_order": list(AIS_FIELDS),
        "split_seed": seed,
        "rows": [
            {"mmsi": int(ds.mmsi[i]), "image_id": ids[i],
             "ais": [float(v) for v in ds.ais[i]], "label": int(ds.labels[i])}
            for i in range(len(ds))
        ],
    }
    if extra:
        manifest.update(extra)
    manifest["config_hash"] = config_hash({k: v for k, v in manifest.items() if k != "rows"})
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))


def load_dataset(in_dir) -> Dataset:
    in_dir = Path(in_dir)
    manifest = json.loads((in_dir / "manifest.json").read_text())
    if manifest.get("version") != MANIFEST_VERSION:
        raise FormatError(f"manifest version {manifest.get('version')} != {MANIFEST_VERSION}")
    records = read_nff1(in_dir / "features.nff1")
    rows = manifest["rows"]
    if len(records) != len(rows):
        raise FormatError("manifest row count does not match feature blob")
    feats = np.stack([r.feature for r in records]) if rows else np.empty((0, *FEATURE_SHAPE), np.float32)
    ais = np.array([r["ais"] for r in rows], dtype=np.float64).reshape(len(rows), 7)
    labels = np.array([r["label"] for r in rows], dtype=int)
    mmsi = np.array([r["mmsi"] for r in rows], dtype=np.uint64)
    ids = [r["image_id"] for r in rows]
    return Dataset(feats, ais, labels, mmsi, manifest["class_names"], manifest["kind"], ids)
