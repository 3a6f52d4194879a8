"""Synthetic AIS + feature corpus with threshold-separable class structure.

Stands in for the proprietary imagery/AIS data: each class occupies its own
intervals of vessel length and draught (so CART rules can separate it), the
printed width/length additivity of the AIS fields is honoured exactly, and
"deep features" are per-class templates plus configurable noise.
"""
from __future__ import annotations


import numpy as np

from .data import AisStaticRecord, Dataset, ImageFeatureRecord, FEATURE_SHAPE

# (length range, width range, draught range) in metres; intervals are
# pairwise separable on (length, draught) at zero noise
SHIP_PROTOTYPES = {
    "Tug":       ((20.0, 30.0), (8.0, 12.0), (3.2, 5.0)),
    "Other":     ((36.0, 46.0), (10.0, 14.0), (3.0, 5.0)),
    "Passenger": ((52.0, 62.0), (14.0, 18.0), (2.0, 4.0)),
    "Cargo":     ((70.0, 85.0), (18.0, 24.0), (4.0, 6.0)),
    "Tanker":    ((70.0, 85.0), (18.0, 24.0), (8.5, 12.0)),
}

# Table-3-shaped class imbalance (vessel counts in the real corpus)
IMBALANCE_TABLE3 = {"Cargo": 2412, "Tanker": 864, "Other": 53, "Passenger": 42, "Tug": 32}

MMSI_BASE = 200_000_000


def _class_specs(n_classes: int) -> dict:
    if n_classes == 5:
        return dict(SHIP_PROTOTYPES)
    specs = {}
    for i in range(n_classes):
        lo = 20.0 + 18.0 * i
        specs[f"Class{i}"] = ((lo, lo + 10.0), (8.0 + 2.0 * i, 11.0 + 2.0 * i), (2.0 + i, 3.5 + i))
    return specs


def _allocate(total: int, n_classes: int, imbalance: str | None, min_per_class: int) -> dict:
    specs = _class_specs(n_classes)
    names = list(specs)
    if imbalance == "table3":
        if n_classes != 5:
            raise ValueError("the table3 imbalance profile is defined for 5 classes")
        ratios = np.array([IMBALANCE_TABLE3[n] for n in names], dtype=float)
    elif imbalance is None:
        ratios = np.ones(len(names))
    else:
        raise ValueError(f"unknown imbalance profile {imbalance!r}")
    counts = np.maximum(np.round(total * ratios / ratios.sum()).astype(int), min_per_class)
    return dict(zip(names, counts))


def gen_synthetic(vessels: int = 200, classes: int = 5, noise: float = 0.1, seed: int = 0,
                  imbalance: str | None = None, min_per_class: int = 4,
                  feature_noise: float | None = None):
    """Generate (ais_records, image_records) for a seeded synthetic fleet.

    noise scales Gaussian jitter on the underlying AIS dimensions (width and
    length stay exact sums of their parts); feature_noise (defaults to
    2 * noise + 0.05) scales jitter around the per-class feature template.
    Each vessel gets 1-5 images.
    """
    if classes < 2:
        raise ValueError("need at least 2 classes")
    rng = np.random.default_rng(seed)
    specs = _class_specs(classes)
    counts = _allocate(vessels, classes, imbalance, min_per_class)
    if feature_noise is None:
        feature_noise = 2.0 * noise + 0.05
    templates = {name: rng.normal(0.0, 1.0, FEATURE_SHAPE).astype(np.float32)
                 for name in specs}
    ais_records: list[AisStaticRecord] = []
    image_records: list[ImageFeatureRecord] = []
    mmsi = MMSI_BASE
    for name, (lr, wr, dr) in specs.items():
        for _ in range(counts[name]):
            mmsi += 1
            length = rng.uniform(*lr) + rng.normal(0, noise * (lr[1] - lr[0]))
            width = rng.uniform(*wr) + rng.normal(0, noise * (wr[1] - wr[0]))
            draught = rng.uniform(*dr) + rng.normal(0, noise * (dr[1] - dr[0]))
            length, width, draught = (max(v, 0.5) for v in (length, width, draught))
            u = rng.uniform(0.4, 0.6)
            v = rng.uniform(0.4, 0.6)
            # additivity as printed in the AIS field table:
            # width = to_bow + to_stern, length = to_starboard + to_port
            tb, ts = round(v * width, 4), round((1 - v) * width, 4)
            tsb, tp = round(u * length, 4), round((1 - u) * length, 4)
            ais_records.append(AisStaticRecord(
                mmsi=mmsi,
                to_bow=tb, to_stern=ts, to_starboard=tsb, to_port=tp,
                width=round(tb + ts, 4), length=round(tsb + tp, 4),
                draught=round(draught, 4),
                ship_type=name,
            ))
            for j in range(int(rng.integers(1, 6))):
                feat = templates[name] + rng.normal(0, feature_noise, FEATURE_SHAPE).astype(np.float32)
                conf = float(rng.uniform(0.7, 1.0))
                image_records.append(ImageFeatureRecord(f"img_{mmsi}_{j}", mmsi,
                                                        feat.astype(np.float32), conf))
    return ais_records, image_records


def perturb_ais(ds: Dataset, sigma: float, seed: int = 0) -> Dataset:
    """Return a copy of the dataset with Gaussian noise added to the AIS fields.

    Used to compare graceful degradation of fuzzy vs crisp classification.
    """
    rng = np.random.default_rng(seed)
    noisy = ds.ais + rng.normal(0, sigma, ds.ais.shape)
    return Dataset(ds.features, np.maximum(noisy, 0.0), ds.labels, ds.mmsi,
                   list(ds.class_names), ds.kind, ds.image_ids)
