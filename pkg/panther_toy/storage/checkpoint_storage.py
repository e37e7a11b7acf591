"""
Checkpoint directories.

A checkpoint holds one tensor dump per parameter (``<dotted name>.pthr``),
a ``manifest.txt`` with one ``name<TAB>d0xd1...`` line per parameter, the
serialized run configuration (``run.cfg``) and the vocabulary
(``vocab.txt``).
"""
from typing import Dict, List, Optional, Tuple
import logging
import os

import numpy as np

from panther_toy.config import RunConfig
from panther_toy.engine.tensor_io import read_tensor, write_tensor
from panther_toy.errors import ConfigurationError, DimensionError
from panther_toy.model.instruct import Vocab


logger = logging.getLogger(__name__)


class CheckpointStorage:
    """
    Reads and writes one checkpoint directory.

    Attributes:
        storage_dir (str): Checkpoint directory.
        manifest_file (str): Path of the manifest.
        config_file (str): Path of the run configuration.
        vocab_file (str): Path of the vocabulary.
    """

    def __init__(self, storage_dir: str):
        self.storage_dir = storage_dir
        self.manifest_file = os.path.join(storage_dir, "manifest.txt")
        self.config_file = os.path.join(storage_dir, "run.cfg")
        self.vocab_file = os.path.join(storage_dir, "vocab.txt")

    def exists(self) -> bool:
        return os.path.isfile(self.manifest_file)

    def tensor_file(self, name: str) -> str:
        return os.path.join(self.storage_dir, f"{name}.pthr")

    def save(self, state: Dict[str, np.ndarray], config: RunConfig, vocab: Vocab) -> bool:
        """
        Write a full checkpoint.

        Args:
            state: Parameter arrays keyed by dotted name.
            config: Run configuration to store alongside.
            vocab: Vocabulary the model was built with.

        Returns:
            True if successful, False otherwise.
        """
        try:
            os.makedirs(self.storage_dir, exist_ok=True)
            with open(self.manifest_file, "w", encoding="utf-8") as manifest:
                for name, value in state.items():
                    write_tensor(self.tensor_file(name), value)
                    manifest.write(f"{name}\t{'x'.join(str(s) for s in value.shape)}\n")
            config.to_file(self.config_file)
            vocab.save(self.vocab_file)
            logger.info(f"Saved checkpoint with {len(state)} tensors to {self.storage_dir}")
            return True

        except OSError as e:
            logger.error(f"Error saving checkpoint to {self.storage_dir}: {e}")
            return False

    def read_manifest(self) -> List[Tuple[str, Tuple[int, ...]]]:
        """
        Return (name, shape) pairs in manifest order.

        Raises:
            ConfigurationError: On a malformed manifest line.
        """
        entries = []
        with open(self.manifest_file, "r", encoding="utf-8") as f:
            for line_number, line in enumerate(f, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                try:
                    name, dims = line.split("\t")
                    shape = tuple(int(d) for d in dims.split("x")) if dims else ()
                except ValueError:
                    raise ConfigurationError(
                        f"{self.manifest_file}:{line_number}: malformed manifest line {line!r}"
                    ) from None
                entries.append((name, shape))
        return entries

    def load_state(self, dtype=np.float64) -> Dict[str, np.ndarray]:
        """
        Read every tensor listed in the manifest.

        Raises:
            DimensionError: If a dump's shape disagrees with the manifest.
        """
        state = {}
        for name, shape in self.read_manifest():
            value = read_tensor(self.tensor_file(name))
            if tuple(value.shape) != shape:
                raise DimensionError(f"Checkpoint tensor {name} disagrees with manifest", shape, value.shape)
            state[name] = value.astype(dtype)
        logger.info(f"Loaded {len(state)} tensors from {self.storage_dir}")
        return state

    def load_config(self, environ: Optional[Dict[str, str]] = None) -> RunConfig:
        return RunConfig.from_file(self.config_file, environ)

    def load_vocab(self) -> Vocab:
        return Vocab.load(self.vocab_file)
