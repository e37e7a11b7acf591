"""
Run configuration.

A RunConfig is stored as a flat UTF-8 file of ``key=value`` lines. ``#``
starts a comment and blank lines are ignored. Every key must be a known
field; values are coerced by the field's type. The environment variable
``PANTHER_SEED`` overrides ``seed`` after the file is read, and selected
command-line flags override the result.
"""
from dataclasses import dataclass, fields, replace
from enum import Enum
from typing import Any, Dict, Mapping, Optional, Union
import logging
import math
import os

from panther_toy.errors import ConfigurationError
from panther_toy.model.decoder import DecoderConfig, DecoderMode
from panther_toy.model.instruct import TextEncoderConfig
from panther_toy.model.vision import PromptScheme, VitConfig


logger = logging.getLogger(__name__)

SEED_ENV = "PANTHER_SEED"
PRECISIONS = ("f64", "f32")
ACTIVATIONS = ("gelu", "linear")
_TRUE = {"true", "on", "yes", "1"}
_FALSE = {"false", "off", "no", "0"}


@dataclass
class RunConfig:
    """
    Every setting of a training or evaluation run.

    Defaults follow the toy scale: 16x16 RGB images cut into 4x4 patches,
    a 4-layer ViT of width 32, 24 shared prompts per layer, up to 77
    instruction prompts, a 4-layer decoder of width 64, and tau = 0.95.

    The frozen ViT and text encoder are drawn at ``backbone_init_std``, large
    enough that attention is far from uniform and the instruction prompts
    move the patch features. Shared prompts and the instruction projection
    start at ``prompt_init_std``; the connector and decoder at ``init_std``.
    """
    # vision
    image_size: int = 16
    channels: int = 3
    patch_size: int = 4
    vit_width: int = 32
    vit_depth: int = 4
    vit_heads: int = 4
    prompt_scheme: PromptScheme = PromptScheme.DEEP
    num_shared_prompts: int = 24
    backbone_init_std: float = 0.25
    # instruction side
    max_instruction_len: int = 77
    use_instruction_prompts: bool = True
    text_width: int = 32
    text_depth: int = 2
    text_heads: int = 4
    text_seed: int = 1234
    prompt_init_std: float = 0.1
    # connector and decoder
    connector_activation: str = "gelu"
    decoder_width: int = 64
    decoder_depth: int = 4
    decoder_heads: int = 4
    max_seq_len: int = 1024
    mode: DecoderMode = DecoderMode.PANTHER
    # bridge
    bridge: bool = True
    tau: float = 0.95
    # training
    seed: int = 0
    lr_prompt: float = 1e-4
    lr_model: float = 1e-3
    steps: int = 2000
    batch_size: int = 4
    init_std: float = 0.02
    precision: str = "f64"
    log_every: int = 50

    def __post_init__(self):
        self.validate()

    def validate(self):
        """
        Check value ranges.

        Raises:
            ConfigurationError: On the first invalid value.
        """
        positive = ("image_size", "channels", "patch_size", "vit_width", "vit_depth", "vit_heads",
                    "text_width", "text_depth", "text_heads", "decoder_width", "decoder_depth",
                    "decoder_heads", "max_seq_len", "batch_size", "log_every")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("num_shared_prompts", "max_instruction_len", "steps"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be nonnegative, got {getattr(self, name)}")
        if not (0.0 <= self.tau <= 1.0 or math.isinf(self.tau) and self.tau > 0):
            raise ConfigurationError(f"tau must lie in [0, 1] or be 'off', got {self.tau}")
        if self.lr_prompt <= 0 or self.lr_model <= 0:
            raise ConfigurationError("Learning rates must be positive")
        for name in ("init_std", "backbone_init_std", "prompt_init_std"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.precision not in PRECISIONS:
            raise ConfigurationError(f"precision must be one of {PRECISIONS}, got {self.precision!r}")
        if self.connector_activation not in ACTIVATIONS:
            raise ConfigurationError(
                f"connector_activation must be one of {ACTIVATIONS}, got {self.connector_activation!r}"
            )

    # ------------------------------------------------------------------
    # Text form

    @classmethod
    def parse(cls, text: str, source: str = "<config>") -> "RunConfig":
        """
        Parse ``key=value`` lines; missing keys keep their defaults.

        Raises:
            ConfigurationError: On a malformed line, unknown key or bad value.
        """
        return cls(**cls.parse_values(text, source))

    @classmethod
    def parse_values(cls, text: str, source: str = "<config>") -> Dict[str, Any]:
        """Coerced values of the keys present in ``text``, without defaults."""
        types = {f.name: f.type for f in fields(cls)}
        values: Dict[str, Any] = {}
        for line_number, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"{source}:{line_number}: expected key=value, got {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in types:
                raise ConfigurationError(f"{source}:{line_number}: unknown config key {key!r}")
            values[key] = _coerce(key, value, types[key])
        return values

    def serialize(self) -> str:
        """Render every field as ``key=value`` lines, in field order."""
        lines = [f"{f.name}={_render(getattr(self, f.name))}" for f in fields(self)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_file(cls, path: Union[str, "os.PathLike[str]"],
                  environ: Optional[Mapping[str, str]] = None) -> "RunConfig":
        """Read a config file, then apply the environment seed override."""
        with open(path, "r", encoding="utf-8") as f:
            config = cls.parse(f.read(), source=os.fspath(path))
        return config.with_env(environ)

    def to_file(self, path: Union[str, "os.PathLike[str]"]):
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.serialize())

    def with_env(self, environ: Optional[Mapping[str, str]] = None) -> "RunConfig":
        """Apply ``PANTHER_SEED`` when it is set."""
        environ = os.environ if environ is None else environ
        raw = environ.get(SEED_ENV)
        if raw is None or raw == "":
            return self
        try:
            seed = int(raw)
        except ValueError:
            raise ConfigurationError(f"{SEED_ENV} must be an integer, got {raw!r}") from None
        logger.info(f"Seed overridden by {SEED_ENV}: {seed}")
        return replace(self, seed=seed)

    def with_overrides(self, **overrides: Any) -> "RunConfig":
        """Copy with the non-None overrides applied, validated."""
        changes = {k: v for k, v in overrides.items() if v is not None}
        return replace(self, **changes) if changes else self

    @classmethod
    def micro(cls) -> "RunConfig":
        """Tiny model for end-to-end finite-difference checks: every width is at most 8."""
        return cls(
            image_size=8, patch_size=4, vit_width=8, vit_depth=2, vit_heads=2,
            num_shared_prompts=2, max_instruction_len=8,
            text_width=8, text_depth=1, text_heads=2,
            decoder_width=8, decoder_depth=2, decoder_heads=2, max_seq_len=64,
            bridge=False, init_std=0.2, backbone_init_std=0.2, prompt_init_std=0.2,
        )

    # ------------------------------------------------------------------
    # Derived module configs

    @property
    def effective_tau(self) -> float:
        """Threshold the Bridge applies; infinity keeps every token."""
        return self.tau if self.bridge else math.inf

    def vit_config(self) -> VitConfig:
        return VitConfig(
            image_height=self.image_size, image_width=self.image_size, channels=self.channels,
            patch_size=self.patch_size, width=self.vit_width, depth=self.vit_depth,
            heads=self.vit_heads, scheme=self.prompt_scheme, init_std=self.backbone_init_std,
        )

    def text_config(self, vocab_size: int) -> TextEncoderConfig:
        return TextEncoderConfig(
            vocab_size=vocab_size, width=self.text_width, depth=self.text_depth,
            heads=self.text_heads, max_len=self.max_instruction_len, seed=self.text_seed,
            init_std=self.backbone_init_std,
        )

    def decoder_config(self, vocab_size: int) -> DecoderConfig:
        return DecoderConfig(
            vocab_size=vocab_size, depth=self.decoder_depth, width=self.decoder_width,
            heads=self.decoder_heads, max_seq_len=self.max_seq_len, mode=self.mode,
            init_std=self.init_std,
        )


def _coerce(key: str, value: str, kind) -> Any:
    try:
        if kind is bool:
            lowered = value.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(value)
        if kind is int:
            return int(value)
        if kind is float:
            if key == "tau" and value.lower() == "off":
                return math.inf
            return float(value)
        if isinstance(kind, type) and issubclass(kind, Enum):
            return kind(value)
        return value
    except ValueError:
        raise ConfigurationError(f"Invalid value {value!r} for {key}") from None


def _render(value: Any) -> str:
    if isinstance(value, bool):
        return "on" if value else "off"
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, float):
        return "off" if math.isinf(value) else repr(value)
    return str(value)
