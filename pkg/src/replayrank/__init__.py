"""replayrank: ranking-based prediction of Most Replayed curves.

Segment-scoring models trained with a margin ranking loss over pairwise
comparison targets, precision@K evaluation, and a pairwise-comparison
study service with ranking reconstruction and inter-rater agreement.
"""

__version__ = "0.1.0"
