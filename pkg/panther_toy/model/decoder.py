"""
Causal decoder and interleaved multi-turn sequence assembly.

A panther-mode sequence places each turn's (possibly pruned) visual tokens
right before that turn's question and answer:

    [V0, q0, a0, V1, q1, a1, ...]

while the llava-baseline layout puts one visual block first:

    [V, q0, a0, q1, a1, ...]

Answers are the answer words followed by EOS and are the only supervised
positions. The token at position t is predicted from the logits at t - 1.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import List, NamedTuple, Optional, Sequence, Union
import logging

import numpy as np

from panther_toy.bridge.pruning import IndexedTokens
from panther_toy.engine.functional import cross_entropy_masked
from panther_toy.engine.tensor import Tensor, concat, getitem, no_grad
from panther_toy.errors import ConfigurationError, DegenerateDataError, SequenceOverflowError
from panther_toy.model.attention import TransformerBlock
from panther_toy.model.instruct import Vocab
from panther_toy.model.module import Embedding, LayerNorm, Linear, Module, Parameter, normal_init


logger = logging.getLogger(__name__)

IGNORE_INDEX = -100


class DecoderMode(Enum):
    """How visual tokens are laid out across turns."""
    PANTHER = "panther"
    LLAVA_BASELINE = "llava-baseline"


class SegmentKind(Enum):
    VISUAL = "visual"
    QUESTION = "question"
    ANSWER = "answer"


class Segment(NamedTuple):
    """Tag of one sequence position: its kind and the turn it belongs to."""
    kind: SegmentKind
    turn: int


@dataclass
class DecoderConfig:
    """
    Decoder hyperparameters.

    Attributes:
        vocab_size (int): V.
        depth (int): Number of transformer layers.
        width (int): d1.
        heads (int): Attention heads.
        max_seq_len (int): Longest sequence the position table covers.
        mode (DecoderMode): Sequence layout.
        init_std (float): Initialization scale.
    """
    vocab_size: int
    depth: int = 4
    width: int = 64
    heads: int = 4
    max_seq_len: int = 1024
    mode: DecoderMode = DecoderMode.PANTHER
    init_std: float = 0.02

    def __post_init__(self):
        if isinstance(self.mode, str):
            self.mode = DecoderMode(self.mode)
        if self.depth < 1 or self.max_seq_len < 1:
            raise ConfigurationError("Decoder depth and max_seq_len must be positive")
        if self.heads < 1 or self.width % self.heads:
            raise ConfigurationError(f"Decoder width {self.width} is not divisible by heads {self.heads}")


@dataclass
class AssembledSequence:
    """
    Decoder input for one conversation.

    Attributes:
        embeddings (Tensor): Tensor[T, d1].
        segments (List[Segment]): Tag per position.
        token_ids (np.ndarray): int64[T]; the text token id, -1 on visual positions.
        loss_mask (np.ndarray): bool[T], True exactly on supervised answer positions.
        targets (np.ndarray): int64[T]; answer token ids where supervised, IGNORE_INDEX elsewhere.
        turn_boundaries (List[int]): Start position of each turn.
        visual_counts (List[int]): Visual tokens placed per turn.
        text_count (int): Text positions, M'.
    """
    embeddings: Tensor
    segments: List[Segment]
    token_ids: np.ndarray
    loss_mask: np.ndarray
    targets: np.ndarray
    turn_boundaries: List[int] = field(default_factory=list)
    visual_counts: List[int] = field(default_factory=list)
    text_count: int = 0

    @property
    def length(self) -> int:
        return self.embeddings.shape[0]

    def positions_of(self, kind: SegmentKind, turn: Optional[int] = None) -> np.ndarray:
        """Positions whose segment is ``kind`` (and ``turn``, when given)."""
        return np.array([t for t, s in enumerate(self.segments)
                         if s.kind is kind and (turn is None or s.turn == turn)], dtype=np.int64)


class CausalDecoder(Module):
    """
    Decoder-only transformer with learned absolute positions.

    Attributes:
        token_embed (Embedding): Text token embeddings, the text embedder used
            during assembly.
    """

    def __init__(self, config: DecoderConfig, rng: np.random.Generator):
        self.config = config
        d = config.width
        std = config.init_std
        self.token_embed = Embedding(config.vocab_size, d, rng, std)
        self.pos_embed = Parameter(normal_init(rng, (config.max_seq_len, d), std))
        self.blocks = [TransformerBlock(d, config.heads, rng, std=std) for _ in range(config.depth)]
        self.norm = LayerNorm(d)
        self.lm_head = Linear(d, config.vocab_size, rng, std)

    def embed_tokens(self, ids: Sequence[int]) -> Tensor:
        return self.token_embed(ids)

    def forward_embeddings(self, embeddings: Tensor) -> Tensor:
        """
        Logits for a raw embedding sequence.

        Raises:
            SequenceOverflowError: If the sequence is longer than max_seq_len.
        """
        T = embeddings.shape[0]
        if T > self.config.max_seq_len:
            raise SequenceOverflowError(T, self.config.max_seq_len)
        x = embeddings + getitem(self.pos_embed, slice(0, T))
        for block in self.blocks:
            x = block(x, causal=True)
        return self.lm_head(self.norm(x))

    def causal_forward(self, seq: AssembledSequence) -> Tensor:
        """Logits Tensor[T, V] for an assembled sequence."""
        return self.forward_embeddings(seq.embeddings)


def _visual_rows(visual: Union[IndexedTokens, Tensor]) -> Tensor:
    return visual.emb if isinstance(visual, IndexedTokens) else visual


def assemble(conv, visual_turns: Sequence[Union[IndexedTokens, Tensor]],
             decoder: CausalDecoder, vocab: Vocab,
             mode: Optional[DecoderMode] = None,
             prefix_turn: Optional[int] = None) -> AssembledSequence:
    """
    Interleave visual tokens with question and answer tokens.

    Args:
        conv: Conversation; anything with an ``id`` and a ``turns`` list of
            (question, answer) pairs.
        visual_turns: K visual blocks (panther mode) or one (llava-baseline).
        decoder: Supplies the text token embeddings.
        vocab: Maps words to ids.
        mode: Layout; defaults to the decoder's configured mode.
        prefix_turn: When set, stop after the question of this turn, leaving
            its answer to be generated.

    Returns:
        The assembled sequence.

    Raises:
        ConfigurationError: If the number of visual blocks does not fit the mode.
        SequenceOverflowError: If the result is longer than max_seq_len.
    """
    mode = decoder.config.mode if mode is None else mode
    questions = [q for q, _ in conv.turns]
    answers = [a for _, a in conv.turns]
    K = len(questions)
    if K == 0:
        raise ConfigurationError(f"Conversation {conv.id} has no turns")
    expected = K if mode is DecoderMode.PANTHER else 1
    if len(visual_turns) != expected:
        raise ConfigurationError(
            f"{mode.value} layout needs {expected} visual blocks, got {len(visual_turns)}"
        )
    last = K - 1 if prefix_turn is None else prefix_turn
    if not 0 <= last < K:
        raise ConfigurationError(f"prefix_turn {prefix_turn} outside 0..{K - 1}")

    pieces: List[Tensor] = []
    segments: List[Segment] = []
    ids: List[int] = []
    supervised: List[bool] = []
    boundaries: List[int] = []
    visual_counts: List[int] = []
    text_count = 0

    def add_text(words: List[int], kind: SegmentKind, turn: int):
        nonlocal text_count
        ids.extend(words)
        segments.extend(Segment(kind, turn) for _ in words)
        supervised.extend([kind is SegmentKind.ANSWER] * len(words))
        text_count += len(words)

    def add_visual(block: Union[IndexedTokens, Tensor], turn: int):
        rows = _visual_rows(block)
        count = rows.shape[0]
        ids.extend([-1] * count)
        segments.extend(Segment(SegmentKind.VISUAL, turn) for _ in range(count))
        supervised.extend([False] * count)
        visual_counts.append(count)

    order: List[Union[IndexedTokens, Tensor, List[int]]] = []
    for k in range(last + 1):
        boundaries.append(len(ids))
        if mode is DecoderMode.PANTHER or k == 0:
            add_visual(visual_turns[k if mode is DecoderMode.PANTHER else 0], k)
            order.append(visual_turns[k if mode is DecoderMode.PANTHER else 0])
        question_ids = vocab.encode(questions[k].split())
        add_text(question_ids, SegmentKind.QUESTION, k)
        order.append(question_ids)
        if prefix_turn is None or k < last:
            answer_ids = vocab.encode(answers[k].split()) + [vocab.eos_id]
            add_text(answer_ids, SegmentKind.ANSWER, k)
            order.append(answer_ids)

    length = len(ids)
    if length > decoder.config.max_seq_len:
        raise SequenceOverflowError(length, decoder.config.max_seq_len, conv.id)

    for item in order:
        if isinstance(item, list):
            if item:
                pieces.append(decoder.embed_tokens(item))
        else:
            rows = _visual_rows(item)
            if rows.shape[0]:
                pieces.append(rows)

    token_ids = np.array(ids, dtype=np.int64)
    loss_mask = np.array(supervised, dtype=bool)
    if prefix_turn is not None:
        loss_mask[:] = False
    targets = np.where(loss_mask, token_ids, IGNORE_INDEX)
    logger.debug(f"Assembled {mode.value} sequence of length {length} "
                 f"(visual {visual_counts}, text {text_count})")
    return AssembledSequence(
        embeddings=concat(pieces, axis=0),
        segments=segments,
        token_ids=token_ids,
        loss_mask=loss_mask,
        targets=targets,
        turn_boundaries=boundaries,
        visual_counts=visual_counts,
        text_count=text_count,
    )


def interleaved_loss(seq: AssembledSequence, logits: Tensor) -> Tensor:
    """
    Mean cross-entropy over every supervised answer token of every turn.

    The answer token at position t is scored against the logits at t - 1, so
    through causal attention it sees all earlier turns plus its own turn's
    visual tokens and question.

    Raises:
        DegenerateDataError: If no position is supervised.
    """
    mask = np.asarray(seq.loss_mask, dtype=bool)
    if not mask[1:].any():
        raise DegenerateDataError("Assembled sequence has no supervised answer positions")
    T = seq.length
    return cross_entropy_masked(getitem(logits, slice(0, T - 1)), seq.targets[1:], mask[1:])


def direct_answer_loss(decoder: CausalDecoder, visual: Tensor, question_ids: Sequence[int],
                       answer_ids: Sequence[int]) -> Tensor:
    """
    Single-turn answer likelihood computed token by token.

    Runs one forward per answer token on the growing prefix
    ``[visual, question, answer[:i]]`` and averages -log p(answer[i] | prefix).
    This is the plain conditional form of the training objective; at K = 1 it
    equals ``interleaved_loss`` up to rounding.
    """
    if not answer_ids:
        raise DegenerateDataError("direct_answer_loss needs at least one answer token")
    text = decoder.embed_tokens(list(question_ids) + list(answer_ids))
    prefix_len = visual.shape[0] + len(question_ids)
    sequence = concat([visual, text], axis=0)
    total = None
    for i, target in enumerate(answer_ids):
        length = prefix_len + i
        logits = decoder.forward_embeddings(getitem(sequence, slice(0, length)))
        last = getitem(logits, slice(length - 1, length))
        nll = cross_entropy_masked(last, [target], [True])
        total = nll if total is None else total + nll
    return total * (1.0 / len(answer_ids))


def greedy_generate(decoder: CausalDecoder, prefix: Union[AssembledSequence, Tensor],
                    eos_id: int, max_new: int = 16) -> List[int]:
    """
    Argmax decoding from a prefix until EOS or ``max_new`` tokens.

    Returns:
        Generated ids without the EOS.
    """
    embeddings = prefix.embeddings if isinstance(prefix, AssembledSequence) else prefix
    generated: List[int] = []
    with no_grad():
        embeddings = embeddings.detach()
        for _ in range(max_new):
            if embeddings.shape[0] >= decoder.config.max_seq_len:
                logger.warning("Generation stopped at the decoder's maximum sequence length")
                break
            logits = decoder.forward_embeddings(embeddings)
            next_id = int(np.argmax(logits.data[-1]))
            if next_id == eos_id:
                break
            generated.append(next_id)
            embeddings = concat([embeddings, decoder.embed_tokens([next_id])], axis=0)
    return generated


def text_lengths(conv) -> List[int]:
    """Text positions each turn contributes: question words, answer words and EOS."""
    return [len(q.split()) + len(a.split()) + 1 for q, a in conv.turns]
