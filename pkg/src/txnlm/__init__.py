"""txnlm: transaction-language pretraining and linear-probing benchmark.

Bank transactions are serialized into a structured text language, a
bidirectional transformer is pretrained from scratch (numpy only) with
masked language modeling, and the resulting account embeddings are
benchmarked against CoLES and feature-engineering baselines by linear
probing on a synthetic corpus with planted ground-truth attributes.
"""

__version__ = "0.1.0"
