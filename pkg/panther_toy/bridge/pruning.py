"""
Multi-turn visual token pruning.

Turn 0 is kept whole. Every later turn is first pruned against turn 0; then,
for s = 2 .. K-1, every turn from s on is pruned again against the retained
tokens of turn s-1. A token is compared only with the reference token at the
same spatial index and is kept when their cosine similarity is at most tau;
a token whose index the reference no longer holds is always kept.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Union
import logging

import numpy as np

from panther_toy.engine.functional import cosine_similarity
from panther_toy.engine.tensor import Tensor, take_rows
from panther_toy.errors import DimensionError, EmptyInputError


logger = logging.getLogger(__name__)

TurnInput = Union[Tensor, np.ndarray]


@dataclass
class IndexedTokens:
    """
    Embedding rows paired with their spatial indices.

    Attributes:
        idx (np.ndarray): Strictly increasing spatial indices, int64.
        emb (Tensor): Tensor[len(idx), d1]; row r belongs to spatial index idx[r].
        num_positions (int): N, the number of spatial positions in a full turn.
    """
    idx: np.ndarray
    emb: Tensor
    num_positions: int

    def __post_init__(self):
        self.idx = np.asarray(self.idx, dtype=np.int64).reshape(-1)
        if self.emb.ndim != 2 or self.emb.shape[0] != self.idx.shape[0]:
            raise DimensionError("IndexedTokens needs one embedding row per index",
                                 self.idx.shape, self.emb.shape)
        if self.idx.size and (self.idx[0] < 0 or self.idx[-1] >= self.num_positions
                              or np.any(np.diff(self.idx) <= 0)):
            raise DimensionError(
                f"Spatial indices must be strictly increasing within [0, {self.num_positions})",
                self.idx.shape,
            )

    @classmethod
    def full(cls, emb: TurnInput) -> "IndexedTokens":
        """Every row of a turn, with indices 0 .. N-1."""
        emb = emb if isinstance(emb, Tensor) else Tensor(emb)
        return cls(np.arange(emb.shape[0], dtype=np.int64), emb, emb.shape[0])

    def __len__(self) -> int:
        return int(self.idx.shape[0])

    @property
    def width(self) -> int:
        return self.emb.shape[1]


def prune_pair(cur: IndexedTokens, ref: IndexedTokens, tau: float) -> IndexedTokens:
    """
    Drop rows of ``cur`` that are near-duplicates of ``ref`` at the same index.

    Args:
        cur: Tokens to prune.
        ref: Reference tokens.
        tau: Threshold; a matched row is kept iff cos(ref row, cur row) <= tau.

    Returns:
        The kept rows of ``cur`` in their original order, values unchanged.

    Raises:
        DimensionError: If the embedding widths differ.
    """
    if cur.width != ref.width:
        raise DimensionError("prune_pair width mismatch", cur.emb.shape, ref.emb.shape)
    position: Dict[int, int] = {int(i): r for r, i in enumerate(ref.idx)}
    keep: List[int] = []
    for r, spatial in enumerate(cur.idx):
        j = position.get(int(spatial))
        if j is None or cosine_similarity(ref.emb.data[j], cur.emb.data[r]) <= tau:
            keep.append(r)
    return IndexedTokens(cur.idx[keep], take_rows(cur.emb, keep), cur.num_positions)


def _check_turns(turns: Sequence[TurnInput]) -> List[Tensor]:
    if len(turns) == 0:
        raise EmptyInputError("prune_multiturn needs at least one turn")
    tensors = [t if isinstance(t, Tensor) else Tensor(t) for t in turns]
    reference = tensors[0].shape
    if len(reference) != 2:
        raise DimensionError("Each turn must be an N x d1 matrix", reference)
    for t in tensors[1:]:
        if t.shape != reference:
            raise DimensionError("All turns must have the same shape", reference, t.shape)
    return tensors


def prune_multiturn(turns: Sequence[TurnInput], tau: float) -> List[IndexedTokens]:
    """
    Prune the visual tokens of a K-turn conversation.

    Args:
        turns: K matrices of shape N x d1, one per turn, in turn order.
        tau: Cosine threshold; tau >= 1 keeps everything.

    Returns:
        K IndexedTokens; entry 0 holds all N rows of turn 0.

    Raises:
        EmptyInputError: If ``turns`` is empty.
        DimensionError: If the turns do not share one N x d1 shape.
    """
    tensors = _check_turns(turns)
    retained = [IndexedTokens.full(t) for t in tensors]
    K = len(retained)
    for k in range(1, K):
        retained[k] = prune_pair(retained[k], retained[0], tau)
    for step in range(2, K):
        ref = retained[step - 1]
        for k in range(step, K):
            retained[k] = prune_pair(retained[k], ref, tau)
    logger.debug(f"prune_multiturn tau={tau}: retained {[len(r) for r in retained]}")
    return retained


@dataclass
class PruneReport:
    """
    Sequence-length accounting for one conversation or an aggregate.

    Attributes:
        tau (float): Threshold used.
        num_positions (int): N.
        retained (List[int]): Retained visual tokens per turn.
        text_total (int): M', the number of text tokens.
    """
    tau: float
    num_positions: int
    retained: List[int] = field(default_factory=list)
    text_total: int = 0

    @property
    def num_turns(self) -> int:
        return len(self.retained)

    @property
    def visual_before(self) -> int:
        """N * K."""
        return self.num_positions * self.num_turns

    @property
    def visual_after(self) -> int:
        return sum(self.retained)

    @property
    def total_before(self) -> int:
        """M' + N * K."""
        return self.text_total + self.visual_before

    @property
    def total_after(self) -> int:
        """M' plus the retained visual tokens."""
        return self.text_total + self.visual_after

    def merged(self, other: "PruneReport") -> "PruneReport":
        """Aggregate two reports taken at the same tau."""
        if other.tau != self.tau or other.num_positions != self.num_positions:
            raise ValueError("Only reports with the same tau and N can be merged")
        return PruneReport(self.tau, self.num_positions,
                           self.retained + other.retained, self.text_total + other.text_total)


def report_from_retained(retained: Sequence[IndexedTokens], text_lengths: Sequence[int],
                         tau: float) -> PruneReport:
    """Build a PruneReport from turns that were already pruned."""
    if not retained:
        raise EmptyInputError("A prune report needs at least one turn")
    return PruneReport(tau=tau, num_positions=retained[0].num_positions,
                       retained=[len(r) for r in retained], text_total=int(sum(text_lengths)))


def sequence_length_report(turns: Sequence[TurnInput], text_lengths: Sequence[int],
                           tau: float) -> PruneReport:
    """
    Prune ``turns`` and report sequence lengths before and after.

    Args:
        turns: K matrices N x d1.
        text_lengths: Text tokens per turn; their sum is M'.
        tau: Cosine threshold.
    """
    return report_from_retained(prune_multiturn(turns, tau), text_lengths, tau)
