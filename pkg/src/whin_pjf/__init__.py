"""Two-stage person-job matching over a workplace heterogeneous graph.

Stage 1 pre-trains entity embeddings with relational message passing and a
link-existence objective; stage 2 scores member-job pairs with job-aware
attention over profile text and skill-relevance-weighted aggregation over
professional connections.
"""

__version__ = "0.1.0"
