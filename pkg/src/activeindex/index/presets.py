"""Named index geometries used by the CLI and the experiment harness."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from activeindex.errors import InvalidArgumentError
from activeindex.index.ivf import train_ivfflat, train_ivfpq
from activeindex.index.lsh import train_pca_lsh
from activeindex.index.opq import train_opq_index, train_pq_index


@dataclass(frozen=True)
class IndexPreset:
    name: str
    family: str  # ivfpq | ivf | pq | opq | lsh
    nlist: int = 1
    m: int = 8
    ks: int = 256
    nprobe: int = 1
    opq_rounds: int = 5
    lsh_dim: int = 64
    lsh_bits: int = 64

    @property
    def loss_kind(self) -> str:
        """Indexation loss matching this family."""
        return self.family


PRESETS = {
    # desk-scale stand-in for IVF4096,PQ8x8 with a single probe
    "ivfpq": IndexPreset("ivfpq", "ivfpq", nlist=64, m=8, ks=256, nprobe=1),
    "ivfpq16": IndexPreset("ivfpq16", "ivfpq", nlist=64, m=8, ks=256, nprobe=16),
    # geometry-shifted variant: more bytes per vector, more probes
    "ivfpq_dagger": IndexPreset("ivfpq_dagger", "ivfpq", nlist=8, m=32, ks=256, nprobe=4),
    "ivf": IndexPreset("ivf", "ivf", nlist=64, nprobe=1),
    "pq": IndexPreset("pq", "pq", m=8, ks=256),
    "opq": IndexPreset("opq", "opq", m=8, ks=256),
    "lsh": IndexPreset("lsh", "lsh", lsh_dim=64, lsh_bits=64),
}


def get_preset(name: str) -> IndexPreset:
    try:
        return PRESETS[name]
    except KeyError:
        raise InvalidArgumentError(f"unknown index preset {name!r}; choose from {sorted(PRESETS)}") from None


def build_index(preset: IndexPreset, train_vectors, seed: int = 0):
    x = np.asarray(train_vectors, dtype=np.float64)
    if preset.family == "ivfpq":
        return train_ivfpq(x, preset.nlist, preset.m, preset.ks, seed)
    if preset.family == "ivf":
        return train_ivfflat(x, preset.nlist, seed)
    if preset.family == "pq":
        return train_pq_index(x, preset.m, preset.ks, seed)
    if preset.family == "opq":
        return train_opq_index(x, preset.m, preset.ks, preset.opq_rounds, seed)
    if preset.family == "lsh":
        return train_pca_lsh(x, preset.lsh_dim, preset.lsh_bits, seed)
    raise InvalidArgumentError(f"unknown index family {preset.family!r}")


def search(index, query, k: int = 10, nprobe: int = 1):
    """Family-agnostic search (LSH ignores ``nprobe``)."""
    if getattr(index, "kind", None) == "lsh":
        return index.search(query, k)
    return index.search(query, k, nprobe)
