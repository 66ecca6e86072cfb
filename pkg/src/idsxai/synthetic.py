"""Synthetic flow tables in the UNSW-NB15 column layout.

A two-class Gaussian mixture: ``sttl`` carries most of the signal, three
other columns carry a weak shift, and the rest is class-independent noise.
Useful for tests and for trying the tools without the real dataset.
"""

from __future__ import annotations

import numpy as np
import pandas as pd

from .schema import FeatureSchema, unsw_nb15

PROTOS = ("tcp", "udp", "unas", "arp", "ospf")
PROTO_P = (0.55, 0.3, 0.08, 0.04, 0.03)
SERVICES = ("-", "http", "dns", "ftp", "smtp", "ftp-data")
SERVICE_P = (0.5, 0.15, 0.2, 0.05, 0.05, 0.05)
STATES = ("FIN", "INT", "CON", "REQ")
STATE_P = (0.45, 0.4, 0.1, 0.05)

# (feature, class-mean shift in noise units)
WEAK_SIGNAL = {"ct_dst_src_ltm": 0.6, "ct_dst_sport_ltm": 0.5, "sbytes": 0.4}


def generate(n: int = 2000, seed: int = 0, attack_share: float = 0.5, sttl_noise: float = 40.0,
             missing_rate: float = 0.0, schema: FeatureSchema | None = None) -> pd.DataFrame:
    """Draw ``n`` labelled records.

    Normal records centre ``sttl`` at 40 and attacks at 220, each with
    stddev ``sttl_noise``; a small ``sttl_noise`` makes the classes
    separable on ``sttl`` alone. ``missing_rate`` blanks that fraction of
    feature cells at random.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    schema = schema or unsw_nb15()
    rng = np.random.default_rng(seed)
    label = (rng.random(n) < attack_share).astype(np.int64)
    # keep both classes present
    label[0], label[1] = 0, 1
    cols = {}
    for j, spec in enumerate(schema.features):
        name = spec.name
        if name == "id":
            cols[name] = np.arange(1, n + 1, dtype=float)
        elif name == schema.attack_category_column:
            attacks = np.array(spec.categories[1:], dtype=object)
            cols[name] = np.where(label == 1, rng.choice(attacks, n), spec.categories[0])
        elif name == "proto":
            cols[name] = rng.choice(PROTOS, n, p=PROTO_P)
        elif name == "service":
            cols[name] = rng.choice(SERVICES, n, p=SERVICE_P)
        elif name == "state":
            cols[name] = rng.choice(STATES, n, p=STATE_P)
        elif name == "sttl":
            cols[name] = np.round(40.0 + 180.0 * label + sttl_noise * rng.standard_normal(n), 3)
        else:
            scale = 1.0 + (j % 7)
            shift = WEAK_SIGNAL.get(name, 0.0) * scale * label
            cols[name] = np.round(10.0 * scale + shift + scale * rng.standard_normal(n), 4)
    frame = pd.DataFrame(cols)
    if missing_rate > 0:
        feats = [f.name for f in schema.features if f.name != schema.attack_category_column]
        mask = rng.random((n, len(feats))) < missing_rate
        for k, name in enumerate(feats):
            frame[name] = frame[name].astype(object).where(~mask[:, k], None)
    frame[schema.label_column] = label
    return frame


def write_csv(path, n: int = 2000, seed: int = 0, **kwargs) -> pd.DataFrame:
    frame = generate(n, seed, **kwargs)
    frame.to_csv(path, index=False)
    return frame
