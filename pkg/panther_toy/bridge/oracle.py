"""
Reference pruning written as plain nested loops.

This is the slow, literal form of the multi-turn pruning procedure. It keeps
lists of (index, row) pairs and searches them linearly, and exists to check
``prune_multiturn`` against.
"""
from typing import List, Sequence, Tuple

import numpy as np

from panther_toy.bridge.pruning import IndexedTokens, TurnInput, _check_turns
from panther_toy.engine.functional import cosine_similarity
from panther_toy.engine.tensor import Tensor


def _prune_tokens(cur: List[Tuple[int, np.ndarray]], ref: List[Tuple[int, np.ndarray]],
                  tau: float) -> List[Tuple[int, np.ndarray]]:
    kept = []
    for spatial_i, cur_token in cur:
        ref_token = None
        for spatial_j, token in ref:
            if spatial_j == spatial_i:
                ref_token = token
                break
        if ref_token is None:
            kept.append((spatial_i, cur_token))
        elif cosine_similarity(ref_token, cur_token) <= tau:
            kept.append((spatial_i, cur_token))
    return kept


def brute_force_oracle(turns: Sequence[TurnInput], tau: float) -> List[IndexedTokens]:
    """
    Same contract as ``prune_multiturn``.

    Raises:
        EmptyInputError: If ``turns`` is empty.
        DimensionError: If the turns do not share one shape.
    """
    tensors = _check_turns(turns)
    n = tensors[0].shape[0]
    useful = [[(i, t.data[i].copy()) for i in range(n)] for t in tensors]

    for k in range(1, len(useful)):
        useful[k] = _prune_tokens(useful[k], useful[0], tau)

    for step in range(2, len(useful)):
        ref = useful[step - 1]
        for k in range(step, len(useful)):
            useful[k] = _prune_tokens(useful[k], ref, tau)

    width = tensors[0].shape[1]
    result = []
    for kept in useful:
        idx = np.array([i for i, _ in kept], dtype=np.int64)
        rows = np.array([row for _, row in kept]).reshape(len(kept), width)
        result.append(IndexedTokens(idx, Tensor(rows, dtype=tensors[0].dtype), n))
    return result
