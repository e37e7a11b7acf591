"""
Instruction side of the visual encoder.

- Vocab and whitespace tokenizer over the closed synthetic vocabulary
- Frozen toy text encoder
- Instruction prompt generator: frozen encoder plus a trainable projection
  into the ViT width
- Shared prompt banks, one learnable bank per ViT layer
- PromptBundle, the prompts handed to one prompted forward
"""
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union
import logging
import os

import numpy as np

from panther_toy.engine.tensor import Tensor, concat, no_grad, take_rows
from panther_toy.errors import ConfigurationError, DimensionError, VocabularyError
from panther_toy.model.attention import TransformerBlock
from panther_toy.model.module import MLP, Embedding, LayerNorm, Module, Parameter, normal_init


logger = logging.getLogger(__name__)

PAD = "<pad>"
BOS = "<bos>"
EOS = "<eos>"
SPECIALS = (PAD, BOS, EOS)


class Vocab:
    """
    Closed vocabulary with the special tokens at ids 0, 1 and 2.

    Attributes:
        tokens (List[str]): Token for each id.
    """

    def __init__(self, words: Iterable[str] = ()):
        ordered = [w for w in dict.fromkeys(words) if w not in SPECIALS]
        self.tokens: List[str] = list(SPECIALS) + ordered
        self._index: Dict[str, int] = {w: i for i, w in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, word: str) -> bool:
        return word in self._index

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.tokens == other.tokens

    @property
    def pad_id(self) -> int:
        return self._index[PAD]

    @property
    def bos_id(self) -> int:
        return self._index[BOS]

    @property
    def eos_id(self) -> int:
        return self._index[EOS]

    def id_of(self, word: str) -> int:
        """Return the id of ``word``; raises VocabularyError if unknown."""
        try:
            return self._index[word]
        except KeyError:
            raise VocabularyError(word) from None

    def word_of(self, token_id: int) -> str:
        return self.tokens[token_id]

    def encode(self, words: Sequence[str]) -> List[int]:
        return [self.id_of(w) for w in words]

    def decode(self, ids: Sequence[int]) -> List[str]:
        return [self.tokens[int(i)] for i in ids]

    def save(self, path: Union[str, "os.PathLike[str]"]):
        """Write one token per line; the line number is the id."""
        with open(path, "w", encoding="utf-8") as f:
            for token in self.tokens:
                f.write(token + "\n")

    @classmethod
    def load(cls, path: Union[str, "os.PathLike[str]"]) -> "Vocab":
        """
        Read a vocabulary file written by ``save``.

        Raises:
            ConfigurationError: If the special tokens are not the first lines
                or a token is repeated.
        """
        with open(path, "r", encoding="utf-8") as f:
            tokens = [line.rstrip("\n") for line in f if line.strip()]
        if tuple(tokens[:len(SPECIALS)]) != SPECIALS:
            raise ConfigurationError(f"{path}: vocabulary must start with {', '.join(SPECIALS)}")
        if len(set(tokens)) != len(tokens):
            raise ConfigurationError(f"{path}: duplicate tokens in vocabulary")
        return cls(tokens[len(SPECIALS):])


def tokenize(text: str, vocab: Vocab, max_len: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Whitespace-split ``text``, map words to ids, truncate and pad.

    Args:
        text: Instruction text.
        vocab: Closed vocabulary.
        max_len: L_max; longer inputs are truncated.

    Returns:
        (ids int64[max_len], mask bool[max_len]) with mask True on real tokens.

    Raises:
        VocabularyError: If a word is not in the vocabulary.
    """
    words = text.split()
    ids = vocab.encode(words)[:max_len]
    out = np.full(max_len, vocab.pad_id, dtype=np.int64)
    out[:len(ids)] = ids
    mask = np.zeros(max_len, dtype=bool)
    mask[:len(ids)] = True
    if len(words) > max_len:
        logger.debug(f"Instruction truncated from {len(words)} to {max_len} tokens")
    return out, mask


@dataclass
class TextEncoderConfig:
    """
    Frozen text encoder hyperparameters.

    Attributes:
        vocab_size (int): V.
        width (int): d_t.
        depth (int): Number of transformer layers.
        heads (int): Attention heads.
        max_len (int): L_max, instruction length after padding.
        seed (int): Seed for the fixed random initialization.
        init_std (float): Initialization scale.
    """
    vocab_size: int
    width: int = 32
    depth: int = 2
    heads: int = 4
    max_len: int = 77
    seed: int = 1234
    init_std: float = 0.02


class TextEncoder(Module):
    """
    Small transformer that turns instruction ids into per-token embeddings.

    Parameters are drawn once from ``config.seed`` and frozen on construction.
    """

    def __init__(self, config: TextEncoderConfig):
        if config.max_len < 0:
            raise ConfigurationError(f"max_len must be nonnegative, got {config.max_len}")
        self.config = config
        rng = np.random.default_rng(config.seed)
        std = config.init_std
        self.token_embed = Embedding(config.vocab_size, config.width, rng, std)
        self.pos_embed = Parameter(normal_init(rng, (max(config.max_len, 1), config.width), std))
        self.blocks = [TransformerBlock(config.width, config.heads, rng, std=std)
                       for _ in range(config.depth)]
        self.norm = LayerNorm(config.width)
        self.freeze()

    def text_encode(self, ids: Sequence[int], mask: Sequence[bool]) -> Tensor:
        """
        Encode one padded instruction.

        Only real tokens take part in attention; padded rows of the output are
        zero, so the ids stored at padded positions never matter.

        Returns:
            Tensor[L, d_t] without gradient, L = len(ids).
        """
        ids = np.asarray(ids, dtype=np.int64)
        mask = np.asarray(mask, dtype=bool)
        if ids.shape != mask.shape:
            raise DimensionError("ids and mask must have the same length", ids.shape, mask.shape)
        out = np.zeros((ids.shape[0], self.config.width), dtype=self.pos_embed.dtype)
        rows = np.flatnonzero(mask)
        if rows.size:
            with no_grad():
                x = self.token_embed(ids[rows]) + take_rows(self.pos_embed, rows)
                for block in self.blocks:
                    x = block(x)
                out[rows] = self.norm(x).data
        return Tensor(out)


class InstructionPromptGenerator(Module):
    """
    Frozen text encoder followed by a trainable two-layer projection into the
    ViT width.

    Attributes:
        width (int): Output prompt width, equal to the ViT width d.
    """

    def __init__(self, encoder: TextEncoder, vocab: Vocab, vit_width: int,
                 rng: np.random.Generator, std: float = 0.02, activation: str = "gelu"):
        if len(vocab) != encoder.config.vocab_size:
            raise ConfigurationError(
                f"Vocabulary has {len(vocab)} tokens, text encoder expects {encoder.config.vocab_size}"
            )
        self.encoder = encoder
        self.vocab = vocab
        self.projection = MLP(encoder.config.width, vit_width, vit_width, rng, std, activation)
        self.width = vit_width
        if self.projection.fc2.out_features != vit_width:
            raise ConfigurationError("Instruction prompt width must equal the ViT width")

    @property
    def max_len(self) -> int:
        return self.encoder.config.max_len

    def generate_instruction_prompts(self, question: str) -> Tuple[Tensor, np.ndarray]:
        """
        Project an instruction into ViT-space prompts.

        Returns:
            (Tensor[L_max, d], mask bool[L_max]); padded rows are zero.
        """
        ids, mask = tokenize(question, self.vocab, self.max_len)
        encoded = self.encoder.text_encode(ids, mask)
        projected = self.projection(encoded)
        return projected * mask[:, None].astype(projected.dtype), mask


class SharedPromptBank(Module):
    """
    Learnable prompts shared by every sample, one bank per layer.

    Attributes:
        banks (List[Parameter]): Tensor[K_sp, d] per layer; empty when K_sp is 0.
    """

    def __init__(self, depth: int, num_prompts: int, width: int,
                 rng: np.random.Generator, std: float = 0.02):
        if num_prompts < 0 or depth < 0:
            raise ConfigurationError(f"Invalid prompt bank size: depth={depth}, K_sp={num_prompts}")
        self.num_prompts = num_prompts
        self.width = width
        self.banks = [Parameter(normal_init(rng, (num_prompts, width), std))
                      for _ in range(depth)] if num_prompts else []

    @property
    def depth(self) -> int:
        return len(self.banks)

    def layer(self, index: int) -> Optional[Parameter]:
        """Bank for layer ``index``, or None when there is none."""
        return self.banks[index] if index < len(self.banks) else None


def shared_prompt_bank(depth: int, num_prompts: int, width: int, seed: int,
                       std: float = 0.02) -> SharedPromptBank:
    """Build ``depth`` independent normal(0, std) banks of ``num_prompts`` rows."""
    return SharedPromptBank(depth, num_prompts, width, np.random.default_rng(seed), std)


@dataclass
class PromptBundle:
    """
    Prompts for one prompted ViT forward.

    Attributes:
        shared (List[Optional[Tensor]]): Shared prompts per layer, each
            Tensor[K_sp, d]; the shallow scheme reads entry 0 only.
        instruction (Optional[Tensor]): Instruction prompts, Tensor[L_max, d].
        mask (np.ndarray): bool[L_max], True on real instruction tokens.
        width (int): Prompt width d.
    """
    shared: List[Optional[Tensor]]
    instruction: Optional[Tensor]
    mask: np.ndarray
    width: int

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.instruction is not None and self.instruction.shape != (self.mask.shape[0], self.width):
            raise DimensionError("instruction prompts must be L_max x d",
                                 self.instruction.shape, (self.mask.shape[0], self.width))
        for bank in self.shared:
            if bank is not None and (bank.ndim != 2 or bank.shape[1] != self.width):
                raise DimensionError("shared prompts must be K_sp x d", bank.shape, (bank.shape[0], self.width))

    @classmethod
    def build(cls, bank: Optional[SharedPromptBank], instruction: Optional[Tensor],
              mask: Optional[np.ndarray], width: int) -> "PromptBundle":
        """Assemble a bundle from a bank and generated instruction prompts."""
        shared: List[Optional[Tensor]] = list(bank.banks) if bank is not None else []
        if mask is None:
            mask = np.zeros(0 if instruction is None else instruction.shape[0], dtype=bool)
        return cls(shared=shared, instruction=instruction, mask=mask, width=width)

    @property
    def num_shared(self) -> int:
        """K_sp."""
        for bank in self.shared:
            if bank is not None:
                return bank.shape[0]
        return 0

    @property
    def max_instruction_len(self) -> int:
        """L_max, including padded slots."""
        return 0 if self.instruction is None else self.instruction.shape[0]

    @property
    def is_empty(self) -> bool:
        """True when the bundle has no prompt slots at all."""
        return self.num_shared == 0 and self.max_instruction_len == 0

    def shared_at(self, layer: int) -> Optional[Tensor]:
        if layer < len(self.shared):
            bank = self.shared[layer]
            if bank is not None and bank.shape[0]:
                return bank
        return None

    def valid_instruction(self) -> Optional[Tensor]:
        """Instruction prompt rows whose mask bit is set, in order."""
        if self.instruction is None:
            return None
        rows = np.flatnonzero(self.mask)
        if rows.size == 0:
            return None
        return take_rows(self.instruction, rows)

    def padded(self, extra: int) -> "PromptBundle":
        """Copy of this bundle with ``extra`` more masked, zero instruction slots."""
        dtype = self.instruction.dtype if self.instruction is not None else None
        zeros = Tensor(np.zeros((extra, self.width)), dtype=dtype)
        instruction = zeros if self.instruction is None else concat([self.instruction, zeros], axis=0)
        mask = np.concatenate([self.mask, np.zeros(extra, dtype=bool)])
        return PromptBundle(shared=list(self.shared), instruction=instruction, mask=mask, width=self.width)
