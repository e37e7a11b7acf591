"""
Synthetic multi-turn visual question answering.

Each image is a 2x2 grid of solid colored blocks with light pixel noise.
Questions ask about block color, counts and positions, and every answer is
computed from the block colors, so a model can in principle reach exact-match
accuracy. All turns of a conversation share one image.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import List, NamedTuple, Optional, Sequence, Tuple
import logging

import numpy as np

from panther_toy.errors import ConfigurationError, UnknownQuestionError
from panther_toy.model.instruct import Vocab
from panther_toy.model.vision import PatchGrid


logger = logging.getLogger(__name__)


class Color(Enum):
    """Block colors."""
    RED = "red"
    GREEN = "green"
    BLUE = "blue"
    YELLOW = "yellow"
    WHITE = "white"

    def __str__(self) -> str:
        return self.value

    @property
    def rgb(self) -> Tuple[float, float, float]:
        """Pixel value of the color."""
        values = {
            Color.RED: (0.9, 0.1, 0.1),
            Color.GREEN: (0.1, 0.8, 0.2),
            Color.BLUE: (0.1, 0.2, 0.9),
            Color.YELLOW: (0.9, 0.85, 0.1),
            Color.WHITE: (0.95, 0.95, 0.95),
        }
        return values[self]


BLOCKS_PER_SIDE = 2
POSITIONS = ("top left", "top right", "bottom left", "bottom right")
NUMBERS = ("zero", "one", "two", "three", "four")

TEMPLATE_WORDS = (
    "what color is the block ? how many blocks are there a yes no"
)


class Turn(NamedTuple):
    """One question and its answer."""
    question: str
    answer: str


@dataclass
class GridSpec:
    """
    Image layout for generated conversations.

    Attributes:
        image_size (int): Side of the square image in pixels.
        patch_size (int): ViT patch side; must divide half the image side so
            patches never straddle two blocks.
        noise (float): Standard deviation of the Gaussian pixel noise.
        colors (Tuple[Color, ...]): Palette to draw block colors from.
    """
    image_size: int = 16
    patch_size: int = 4
    noise: float = 0.02
    colors: Tuple[Color, ...] = tuple(Color)

    def __post_init__(self):
        block = self.image_size // BLOCKS_PER_SIDE
        if self.image_size % BLOCKS_PER_SIDE or self.patch_size < 1 or block % self.patch_size:
            raise ConfigurationError(
                f"Patch size {self.patch_size} must divide the block side of a "
                f"{self.image_size}-pixel image"
            )
        if not 0 <= self.noise < 0.2:
            raise ConfigurationError(f"Noise {self.noise} would make block colors ambiguous")
        if not self.colors:
            raise ConfigurationError("Palette must not be empty")

    @property
    def channels(self) -> int:
        return 3

    @property
    def block_size(self) -> int:
        return self.image_size // BLOCKS_PER_SIDE


@dataclass
class Conversation:
    """
    One image and K question/answer turns about it.

    Attributes:
        id (int): Conversation number within its dataset.
        image (PatchGrid): The shared image.
        turns (List[Turn]): K >= 1 turns.
    """
    id: int
    image: PatchGrid
    turns: List[Turn] = field(default_factory=list)

    @property
    def num_turns(self) -> int:
        return len(self.turns)

    @property
    def questions(self) -> List[str]:
        return [t.question for t in self.turns]

    @property
    def answers(self) -> List[str]:
        return [t.answer for t in self.turns]


def build_vocab() -> Vocab:
    """Closed vocabulary covering every question and answer the generator emits."""
    words: List[str] = TEMPLATE_WORDS.split()
    for position in POSITIONS:
        words.extend(position.split())
    words.extend(str(c) for c in Color)
    words.extend(NUMBERS)
    return Vocab(words)


def render(colors: Sequence[Color], spec: GridSpec, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Paint block colors into an (H, W, 3) pixel array, adding noise when ``rng`` is given."""
    size, block = spec.image_size, spec.block_size
    pixels = np.zeros((size, size, 3), dtype=np.float64)
    for b, color in enumerate(colors):
        row, col = divmod(b, BLOCKS_PER_SIDE)
        pixels[row * block:(row + 1) * block, col * block:(col + 1) * block] = color.rgb
    if rng is not None and spec.noise > 0:
        pixels += rng.normal(0.0, spec.noise, size=pixels.shape)
    return np.clip(pixels, 0.0, 1.0)


def reread_blocks(pixels: np.ndarray, colors: Sequence[Color] = tuple(Color)) -> List[Color]:
    """
    Recover block colors from pixels alone: average each block, take the
    nearest palette color.
    """
    size = pixels.shape[0]
    block = size // BLOCKS_PER_SIDE
    palette = np.array([c.rgb for c in colors])
    found = []
    for b in range(BLOCKS_PER_SIDE * BLOCKS_PER_SIDE):
        row, col = divmod(b, BLOCKS_PER_SIDE)
        mean_rgb = pixels[row * block:(row + 1) * block, col * block:(col + 1) * block].reshape(-1, 3).mean(axis=0)
        found.append(colors[int(np.argmin(np.sum((palette - mean_rgb) ** 2, axis=1)))])
    return found


def answer_question(question: str, blocks: Sequence[Color]) -> str:
    """
    Compute the answer to a templated question from the block colors.

    Raises:
        UnknownQuestionError: If the question matches no template.
    """
    words = question.split()
    names = [str(c) for c in blocks]
    if words[:4] == ["what", "color", "is", "the"] and len(words) == 8:
        return names[POSITIONS.index(" ".join(words[4:6]))]
    if words[:2] == ["how", "many"] and len(words) == 7:
        return NUMBERS[names.count(words[2])]
    if words[:2] == ["is", "the"] and len(words) == 7:
        position = POSITIONS.index(" ".join(words[2:4]))
        return "yes" if names[position] == words[5] else "no"
    if words[:3] == ["is", "there", "a"] and len(words) == 6:
        return "yes" if words[3] in names else "no"
    raise UnknownQuestionError(f"Unrecognized question: {question!r}")


def sample_question(rng: np.random.Generator, spec: GridSpec) -> str:
    """Draw one question from the four templates."""
    template = int(rng.integers(4))
    position = POSITIONS[int(rng.integers(len(POSITIONS)))]
    color = str(spec.colors[int(rng.integers(len(spec.colors)))])
    if template == 0:
        return f"what color is the {position} block ?"
    if template == 1:
        return f"how many {color} blocks are there ?"
    if template == 2:
        return f"is the {position} block {color} ?"
    return f"is there a {color} block ?"


def gen_conversation(conversation_id: int, num_turns: int, spec: GridSpec,
                     rng: np.random.Generator) -> Conversation:
    """Generate one conversation with ``num_turns`` distinct questions where possible."""
    blocks = [spec.colors[int(i)] for i in rng.integers(len(spec.colors), size=BLOCKS_PER_SIDE ** 2)]
    pixels = render(blocks, spec, rng)
    questions: List[str] = []
    attempts = 0
    while len(questions) < num_turns:
        q = sample_question(rng, spec)
        attempts += 1
        if q not in questions or attempts > 50:
            questions.append(q)
    turns = [Turn(q, answer_question(q, blocks)) for q in questions]
    return Conversation(conversation_id, PatchGrid(pixels, spec.patch_size), turns)


def gen_dataset(n: int, k_range: Tuple[int, int] = (1, 3), spec: Optional[GridSpec] = None,
                seed: int = 0) -> List[Conversation]:
    """
    Generate ``n`` conversations.

    Args:
        n: Number of conversations; at least 1.
        k_range: Inclusive (min, max) number of turns per conversation.
        spec: Image layout.
        seed: Seed; equal seeds give identical datasets.

    Raises:
        ConfigurationError: If n < 1 or the turn range is invalid.
    """
    if n < 1:
        raise ConfigurationError(f"n must be >= 1, got {n}")
    k_min, k_max = k_range
    if k_min < 1 or k_max < k_min:
        raise ConfigurationError(f"Invalid turn range {k_range}")
    spec = spec or GridSpec()
    rng = np.random.default_rng(seed)
    dataset = []
    for i in range(n):
        k = int(rng.integers(k_min, k_max + 1))
        dataset.append(gen_conversation(i, k, spec, rng))
    logger.info(f"Generated {n} conversations with {k_min}-{k_max} turns (seed {seed})")
    return dataset
