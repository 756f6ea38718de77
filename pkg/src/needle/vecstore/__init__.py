"""Embedded vector store: one collection per embedder, HNSW-indexed."""

from .hnsw import HnswGraph, SplitMix64
from .store import Collection, HnswParams, SearchHit, VectorStore

__all__ = [
    "Collection",
    "HnswGraph",
    "HnswParams",
    "SearchHit",
    "SplitMix64",
    "VectorStore",
]
