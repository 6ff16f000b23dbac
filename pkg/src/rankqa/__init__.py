"""Keyword full-ranking, pluggable re-ranking and answer-sentence extraction."""

from .corpus import Document, Passage, Query, chunk_document
from .datapack import DataPack, MultiPack, create_pack, deserialize_pack, serialize_pack
from .fullranker import IndexParams, InvertedIndex, RankedList, Stage, build_index, search
from .pipeline import PipelineConfig, build_pipeline, run_batch
from .reranker import LexicalScorer, RemoteScorer, RerankConfig, rerank

__version__ = "0.1.0"
