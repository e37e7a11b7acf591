"""
Dataset files.

One JSON object per line and per conversation:

    {"id": 0, "height": 16, "width": 16, "channels": 3, "patch_size": 4,
     "image": "<base-64 of little-endian float64 pixels, row-major H x W x C>",
     "turns": [{"q": "...", "a": "..."}, ...]}
"""
import base64
import json
import logging
import os
from typing import Any, Dict, List, Sequence, Union

import numpy as np

from panther_toy.data.synthetic import Conversation, Turn
from panther_toy.errors import DatasetParseError, PantherError
from panther_toy.model.vision import PatchGrid


logger = logging.getLogger(__name__)

PathLike = Union[str, "os.PathLike[str]"]


def conversation_to_dict(conv: Conversation) -> Dict[str, Any]:
    """Serialize one conversation to a JSON-ready dict."""
    pixels = np.ascontiguousarray(conv.image.pixels, dtype="<f8")
    return {
        "id": conv.id,
        "height": conv.image.height,
        "width": conv.image.width,
        "channels": conv.image.channels,
        "patch_size": conv.image.patch_size,
        "image": base64.b64encode(pixels.tobytes()).decode("ascii"),
        "turns": [{"q": t.question, "a": t.answer} for t in conv.turns],
    }


def conversation_from_dict(record: Dict[str, Any]) -> Conversation:
    """
    Rebuild a conversation from its dict form.

    Raises:
        KeyError, TypeError, ValueError: On a missing field or bad payload.
    """
    h, w, c = int(record["height"]), int(record["width"]), int(record["channels"])
    raw = base64.b64decode(record["image"], validate=True)
    if len(raw) != h * w * c * 8:
        raise ValueError(f"image payload has {len(raw)} bytes, expected {h * w * c * 8}")
    pixels = np.frombuffer(raw, dtype="<f8").reshape(h, w, c).astype(np.float64)
    turns = [Turn(str(t["q"]), str(t["a"])) for t in record["turns"]]
    if not turns:
        raise ValueError("conversation has no turns")
    return Conversation(int(record["id"]), PatchGrid(pixels, int(record["patch_size"])), turns)


def save_dataset(path: PathLike, conversations: Sequence[Conversation]):
    """Write conversations as JSON lines."""
    directory = os.path.dirname(os.fspath(path))
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for conv in conversations:
            f.write(json.dumps(conversation_to_dict(conv), ensure_ascii=False))
            f.write("\n")
    logger.info(f"Saved {len(conversations)} conversations to {path}")


def load_dataset(path: PathLike) -> List[Conversation]:
    """
    Read a dataset file. An empty file gives an empty dataset.

    Raises:
        DatasetParseError: Naming the first line that cannot be decoded.
    """
    conversations = []
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                conversations.append(conversation_from_dict(json.loads(line)))
            except (KeyError, TypeError, ValueError, PantherError) as e:
                raise DatasetParseError(line_number, str(e) or type(e).__name__) from e
    logger.info(f"Loaded {len(conversations)} conversations from {path}")
    return conversations
