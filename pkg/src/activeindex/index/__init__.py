"""Approximate nearest-neighbour structures: k-means, IVF, PQ/OPQ, PCA+LSH."""

from activeindex.index.ivf import IvfFlatIndex, IvfPqIndex, SearchResult, train_ivfflat, train_ivfpq
from activeindex.index.kmeans import Codebook, kmeans, kmeans_plusplus, lloyd, nearest, squared_distances
from activeindex.index.lsh import LshIndex, lsh_search, train_pca_lsh
from activeindex.index.opq import procrustes, train_opq, train_opq_index, train_pq_index
from activeindex.index.pq import PqCodebook, adc_distances, adc_tables, pq_decode, pq_encode, train_pq
from activeindex.index.presets import PRESETS, IndexPreset, build_index, get_preset, search
from activeindex.index.serialize import index_from_bytes, index_to_bytes, load_index, save_index

__all__ = [
    "PRESETS",
    "Codebook",
    "IndexPreset",
    "IvfFlatIndex",
    "IvfPqIndex",
    "LshIndex",
    "PqCodebook",
    "SearchResult",
    "adc_distances",
    "adc_tables",
    "build_index",
    "get_preset",
    "index_from_bytes",
    "index_to_bytes",
    "kmeans",
    "kmeans_plusplus",
    "lloyd",
    "load_index",
    "lsh_search",
    "nearest",
    "pq_decode",
    "pq_encode",
    "procrustes",
    "save_index",
    "search",
    "squared_distances",
    "train_ivfflat",
    "train_ivfpq",
    "train_opq",
    "train_opq_index",
    "train_pca_lsh",
    "train_pq",
    "train_pq_index",
]
