"""
Toy vision transformer with shallow and deep visual prompting.

The prompted forward lays every layer's input out as
``[CLS, shared prompts, instruction prompts, patches]``. Under the deep
scheme the prompt-slot outputs of each layer are discarded and the prompts
are inserted again before the next layer; under the shallow scheme the
prompts enter once and their outputs flow on. Either way only the CLS and
patch rows come back to the caller.
"""
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Tuple
import logging

import numpy as np

from panther_toy.engine.tensor import Tensor, concat, get_default_dtype, getitem
from panther_toy.errors import ConfigurationError, DimensionError
from panther_toy.model.attention import TransformerBlock
from panther_toy.model.instruct import PromptBundle
from panther_toy.model.module import MLP, LayerNorm, Linear, Module, Parameter, normal_init


logger = logging.getLogger(__name__)


class PromptScheme(Enum):
    """Where prompts enter the encoder."""
    NONE = "none"
    SHALLOW = "shallow"
    DEEP = "deep"


@dataclass
class PatchGrid:
    """
    An image plus the patch size used to cut it.

    Attributes:
        pixels (np.ndarray): Array of shape (H, W, C) with values in [0, 1].
        patch_size (int): Side P of the square patches; must divide H and W.
    """
    pixels: np.ndarray
    patch_size: int

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 3:
            raise ConfigurationError(f"Image must have shape (H, W, C), got {self.pixels.shape}")
        _check_divisible(self.height, self.width, self.patch_size)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @property
    def grid_shape(self) -> Tuple[int, int]:
        """Patch rows and columns, (H/P, W/P)."""
        return self.height // self.patch_size, self.width // self.patch_size

    @property
    def num_patches(self) -> int:
        rows, cols = self.grid_shape
        return rows * cols


def _check_divisible(height: int, width: int, patch_size: int):
    if patch_size < 1 or height % patch_size or width % patch_size:
        raise ConfigurationError(
            f"Patch size {patch_size} does not divide image size {height}x{width}"
        )


def patchify(grid: PatchGrid) -> Tensor:
    """
    Cut an image into non-overlapping patches in raster order.

    Row i of the result is patch i counted left to right, top to bottom; the
    patch itself is flattened row-major over (P, P, C). That row number is the
    spatial index used by the Bridge.

    Returns:
        Tensor[N, P*P*C] without gradient.

    Raises:
        ConfigurationError: If P does not divide H and W.
    """
    P = grid.patch_size
    _check_divisible(grid.height, grid.width, P)
    rows, cols = grid.grid_shape
    C = grid.channels
    blocks = grid.pixels.reshape(rows, P, cols, P, C).transpose(0, 2, 1, 3, 4)
    return Tensor(blocks.reshape(rows * cols, P * P * C), dtype=get_default_dtype())


@dataclass
class VitConfig:
    """
    Vision encoder hyperparameters.

    Attributes:
        image_height (int): H.
        image_width (int): W.
        channels (int): C.
        patch_size (int): P.
        width (int): Model width d.
        depth (int): Number of transformer layers.
        heads (int): Attention heads; must divide ``width``.
        scheme (PromptScheme): Prompt injection scheme.
        init_std (float): Standard deviation of weight initialization.
    """
    image_height: int = 16
    image_width: int = 16
    channels: int = 3
    patch_size: int = 4
    width: int = 32
    depth: int = 4
    heads: int = 4
    scheme: PromptScheme = PromptScheme.DEEP
    init_std: float = 0.02

    def __post_init__(self):
        if isinstance(self.scheme, str):
            self.scheme = PromptScheme(self.scheme)
        if self.depth < 1:
            raise ConfigurationError(f"ViT depth must be at least 1, got {self.depth}")
        if self.heads < 1 or self.width % self.heads:
            raise ConfigurationError(f"ViT width {self.width} is not divisible by heads {self.heads}")
        _check_divisible(self.image_height, self.image_width, self.patch_size)

    @property
    def num_patches(self) -> int:
        return (self.image_height // self.patch_size) * (self.image_width // self.patch_size)

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels


@dataclass
class VisualFeatures:
    """
    Encoder output with prompt rows already discarded.

    Attributes:
        patches (Tensor): Patch embeddings, Tensor[N, d].
        cls (Tensor): CLS embedding, Tensor[1, d].
        internal_length (int): Nominal per-layer sequence length inside the
            encoder, 1 + K_sp + L_max + N for a prompted forward.
        attention (Optional[List[np.ndarray]]): When recorded, one array of
            length N per layer: the head-averaged attention from CLS to each patch.
    """
    patches: Tensor
    cls: Tensor
    internal_length: int
    attention: Optional[List[np.ndarray]] = None

    @property
    def num_rows(self) -> int:
        """Rows returned to the caller: CLS plus patches."""
        return 1 + self.patches.shape[0]


class VisionTransformer(Module):
    """
    Pre-norm ViT over raster-order patches with a prepended CLS token.

    Positional embeddings are added once, to the patch tokens only, before the
    first layer. Prompts carry no positional embedding.
    """

    def __init__(self, config: VitConfig, rng: np.random.Generator):
        self.config = config
        d = config.width
        std = config.init_std
        self.patch_embed = Linear(config.patch_dim, d, rng, std)
        self.cls_token = Parameter(normal_init(rng, (1, d), std))
        self.pos_embed = Parameter(normal_init(rng, (config.num_patches, d), std))
        self.blocks = [TransformerBlock(d, config.heads, rng, std=std) for _ in range(config.depth)]
        self.norm = LayerNorm(d)

    def embed(self, grid: PatchGrid) -> Tuple[Tensor, Tensor]:
        """Return the CLS row and positioned patch embeddings before layer 1."""
        if grid.patch_size != self.config.patch_size or grid.num_patches != self.config.num_patches:
            raise ConfigurationError(
                f"Image with {grid.num_patches} patches of size {grid.patch_size} does not match "
                f"encoder ({self.config.num_patches} patches of size {self.config.patch_size})"
            )
        patches = self.patch_embed(patchify(grid)) + self.pos_embed
        return self.cls_token, patches

    def vit_layer(self, cls: Tensor, tokens: Tensor, layer: int = 0) -> Tuple[Tensor, Tensor]:
        """
        One transformer layer over ``[cls, tokens]`` with full attention.

        Returns:
            (cls output Tensor[1, d], token outputs Tensor[S, d]).

        Raises:
            DimensionError: If the widths differ from d.
        """
        out, _ = self._layer(layer, cls, [], tokens)
        return getitem(out, slice(0, 1)), getitem(out, slice(1, None))

    def _layer(self, layer: int, cls: Tensor, prompts: List[Tensor],
               tokens: Tensor) -> Tuple[Tensor, np.ndarray]:
        d = self.config.width
        for part in [cls, *prompts, tokens]:
            if part.ndim != 2 or part.shape[1] != d:
                raise DimensionError("ViT layer input width mismatch", part.shape, (part.shape[0], d))
        return self.blocks[layer].forward(concat([cls, *prompts, tokens], axis=0))

    def forward(self, grid: PatchGrid, record_attention: bool = False) -> VisualFeatures:
        """Plain ViT forward without prompts."""
        cls, patches = self.embed(grid)
        N = patches.shape[0]
        maps: List[np.ndarray] = []
        for j in range(self.config.depth):
            out, probs = self._layer(j, cls, [], patches)
            if record_attention:
                maps.append(_cls_to_patch(probs, N))
            cls = getitem(out, slice(0, 1))
            patches = getitem(out, slice(1, None))
        return VisualFeatures(
            patches=self.norm(patches),
            cls=self.norm(cls),
            internal_length=1 + N,
            attention=maps if record_attention else None,
        )

    def prompted_forward(self, grid: PatchGrid, bundle: Optional[PromptBundle],
                         record_attention: bool = False) -> VisualFeatures:
        """
        Forward with shared and instruction prompts.

        Padded instruction slots are removed before attention. Keeping them
        zero-filled and blocking them with a key mask gives the same outputs
        up to rounding, since no query attends to them and every other
        operation is row-wise. Removing them also keeps the result
        bit-identical for any amount of padding. ``internal_length`` still
        reports the padded length.

        Args:
            grid: Input image.
            bundle: Prompts for this forward; ignored under scheme none.
            record_attention: Keep per-layer CLS-to-patch attention rows.

        Returns:
            VisualFeatures with CLS and N patch rows only.

        Raises:
            ConfigurationError: If the bundle is empty or has the wrong width
                while the scheme is not none.
        """
        scheme = self.config.scheme
        if scheme is PromptScheme.NONE:
            if bundle is not None and not bundle.is_empty:
                logger.debug("Prompt scheme is none; ignoring prompt bundle")
            return self.forward(grid, record_attention)
        if bundle is None or bundle.is_empty:
            raise ConfigurationError(f"Prompt scheme {scheme.value} needs a non-empty prompt bundle")
        if bundle.width != self.config.width:
            raise ConfigurationError(
                f"Prompt width {bundle.width} does not match ViT width {self.config.width}"
            )

        if scheme is PromptScheme.DEEP and bundle.num_shared and len(bundle.shared) < self.config.depth:
            raise ConfigurationError(
                f"Deep prompting needs {self.config.depth} shared banks, bundle has {len(bundle.shared)}"
            )

        cls, patches = self.embed(grid)
        N = patches.shape[0]
        instruction = bundle.valid_instruction()
        maps: List[np.ndarray] = []
        carried: List[Tensor] = []
        for j in range(self.config.depth):
            if scheme is PromptScheme.DEEP:
                prompts = [p for p in (bundle.shared_at(j), instruction) if p is not None]
            elif j == 0:
                prompts = [p for p in (bundle.shared_at(0), instruction) if p is not None]
            else:
                prompts = carried
            num_prompts = sum(p.shape[0] for p in prompts)
            out, probs = self._layer(j, cls, prompts, patches)
            if record_attention:
                maps.append(_cls_to_patch(probs, N))
            cls = getitem(out, slice(0, 1))
            if scheme is PromptScheme.SHALLOW and num_prompts:
                carried = [getitem(out, slice(1, 1 + num_prompts))]
            patches = getitem(out, slice(1 + num_prompts, None))

        return VisualFeatures(
            patches=self.norm(patches),
            cls=self.norm(cls),
            internal_length=1 + bundle.num_shared + bundle.max_instruction_len + N,
            attention=maps if record_attention else None,
        )


def _cls_to_patch(probs: np.ndarray, num_patches: int) -> np.ndarray:
    """Head-averaged attention from the CLS query to the trailing patch keys."""
    return np.mean(probs[:, 0, -num_patches:], axis=0)


class Connector(Module):
    """
    Vision-language projector: a two-layer MLP from ViT width to decoder width.
    """

    def __init__(self, vit_width: int, text_width: int, rng: np.random.Generator,
                 std: float = 0.02, activation: str = "gelu"):
        self.in_features = vit_width
        self.out_features = text_width
        self.mlp = MLP(vit_width, text_width, text_width, rng, std, activation)

    def __call__(self, x: Tensor) -> Tensor:
        return self.mlp(x)


def connect_to_text_space(features: VisualFeatures, connector: Connector) -> Tensor:
    """
    Map patch features into the decoder embedding space.

    CLS is dropped; row i keeps spatial index i.

    Returns:
        Tensor[N, d1].

    Raises:
        DimensionError: If the feature width differs from the connector input.
    """
    if features.patches.shape[1] != connector.in_features:
        raise DimensionError("Connector input width mismatch",
                             features.patches.shape, (features.patches.shape[0], connector.in_features))
    return connector(features.patches)
