"""Needle: local natural-language image retrieval.

Text queries are answered by rendering synthetic guide images, running
per-(guide, embedder) nearest-neighbor searches over local vector
collections, and fusing the ranked lists with weighted reciprocal rank.
"""

__version__ = "0.1.0"
