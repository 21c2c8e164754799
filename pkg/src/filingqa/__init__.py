"""Retrieval question answering for long regulatory filings.

Two retrieval architectures over the same corpus: hybrid dense+lexical
vector search with an agentic corrective loop, and hierarchical
table-of-contents tree traversal. Optional enhancement stages
(cross-encoder reranking, small-to-big neighbor expansion) and an
offline benchmark harness reporting MRR, Recall@5, pairwise judge win
rates, latency, and token cost.
"""

__version__ = "0.1.0"
