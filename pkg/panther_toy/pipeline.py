"""
End-to-end model: instruction-aware visual encoding, Bridge pruning and
interleaved decoder training.

PantherModel owns every component. The ViT backbone and the text encoder are
frozen; shared prompts and the instruction projection form the ``prompt``
parameter group; the connector and the decoder form the ``model`` group.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple
import logging
import math
import time

import numpy as np
from tqdm import tqdm

from panther_toy.bridge.pruning import IndexedTokens, PruneReport, prune_multiturn, report_from_retained
from panther_toy.config import RunConfig
from panther_toy.data.synthetic import Conversation
from panther_toy.engine.gradcheck import directional_grad_check, grad_check, largest_entries
from panther_toy.engine.tensor import Tensor, no_grad, set_default_dtype
from panther_toy.errors import ConfigurationError
from panther_toy.model.decoder import (AssembledSequence, CausalDecoder, DecoderMode, assemble,
                                       greedy_generate, interleaved_loss)
from panther_toy.model.instruct import (InstructionPromptGenerator, PromptBundle, SharedPromptBank,
                                        TextEncoder, Vocab)
from panther_toy.model.module import Module, Parameter
from panther_toy.model.optim import Adam, ParamGroup
from panther_toy.model.vision import (Connector, PatchGrid, PromptScheme, VisionTransformer,
                                      VisualFeatures, connect_to_text_space)


logger = logging.getLogger(__name__)

MAX_ANSWER_TOKENS = 8


def apply_precision(config: RunConfig):
    """Set the tensor dtype for parameters built from ``config``."""
    set_default_dtype(np.float64 if config.precision == "f64" else np.float32)


class PantherModel(Module):
    """
    Frozen ViT with shared and instruction prompts, connector and decoder.

    Attributes:
        vit (VisionTransformer): Frozen backbone.
        shared_prompts (SharedPromptBank): One bank per prompted layer.
        instruction_prompts (Optional[InstructionPromptGenerator]): None when
            instruction prompts are disabled or the scheme is none.
        connector (Connector): ViT width to decoder width.
        decoder (CausalDecoder): Language decoder.
    """

    def __init__(self, config: RunConfig, vocab: Vocab):
        self.config = config
        self.vocab = vocab
        rng = np.random.default_rng(config.seed)
        vit_config = config.vit_config()
        scheme = vit_config.scheme
        width = vit_config.width

        self.vit = VisionTransformer(vit_config, rng)
        self.vit.freeze()

        bank_depth = {PromptScheme.DEEP: vit_config.depth, PromptScheme.SHALLOW: 1}.get(scheme, 0)
        num_shared = config.num_shared_prompts if scheme is not PromptScheme.NONE else 0
        self.shared_prompts = SharedPromptBank(bank_depth, num_shared, width, rng, config.prompt_init_std)

        self.instruction_prompts: Optional[InstructionPromptGenerator] = None
        if config.use_instruction_prompts and scheme is not PromptScheme.NONE:
            encoder = TextEncoder(config.text_config(len(vocab)))
            self.instruction_prompts = InstructionPromptGenerator(encoder, vocab, width, rng,
                                                                  config.prompt_init_std)

        if scheme is not PromptScheme.NONE and num_shared == 0 and self.instruction_prompts is None:
            raise ConfigurationError(
                f"Prompt scheme {scheme.value} with no shared prompts and no instruction prompts; "
                "use prompt_scheme=none for the plain encoder"
            )

        self.connector = Connector(width, config.decoder_width, rng, config.init_std,
                                   config.connector_activation)
        self.decoder = CausalDecoder(config.decoder_config(len(vocab)), rng)

    # ------------------------------------------------------------------
    # Parameter groups

    def group_of(self, name: str) -> str:
        """Audit group of a dotted parameter name."""
        if name.startswith("vit."):
            return "backbone"
        if name.startswith("instruction_prompts.encoder."):
            return "text_encoder"
        if name.startswith("shared_prompts."):
            return "shared_prompts"
        if name.startswith("instruction_prompts."):
            return "instruction_projection"
        if name.startswith("connector."):
            return "connector"
        return "decoder"

    def parameter_groups(self) -> Dict[str, List[Parameter]]:
        """Trainable parameters split into the ``prompt`` and ``model`` groups."""
        groups: Dict[str, List[Parameter]] = {"prompt": [], "model": []}
        for name, p in self.named_parameters():
            if not p.requires_grad:
                continue
            group = self.group_of(name)
            key = "prompt" if group in ("shared_prompts", "instruction_projection") else "model"
            groups[key].append(p)
        return groups

    # ------------------------------------------------------------------
    # Visual side

    @property
    def scheme(self) -> PromptScheme:
        return self.vit.config.scheme

    def prompt_bundle(self, instruction: str) -> Optional[PromptBundle]:
        """Prompts for one instruction; None under scheme none."""
        if self.scheme is PromptScheme.NONE:
            return None
        prompts, mask = None, None
        if self.instruction_prompts is not None:
            prompts, mask = self.instruction_prompts.generate_instruction_prompts(instruction)
        return PromptBundle.build(self.shared_prompts, prompts, mask, self.vit.config.width)

    def encode_features(self, image: PatchGrid, instruction: str,
                        record_attention: bool = False) -> VisualFeatures:
        return self.vit.prompted_forward(image, self.prompt_bundle(instruction), record_attention)

    def encode_turn(self, image: PatchGrid, instruction: str) -> Tensor:
        """Visual tokens of one turn in decoder space, Tensor[N, d1]."""
        return connect_to_text_space(self.encode_features(image, instruction), self.connector)

    def visual_turns(self, conv: Conversation, bridge: bool) -> List[IndexedTokens]:
        """
        Per-turn visual tokens, pruned when ``bridge`` is on.

        The llava-baseline mode encodes the image once with an empty
        instruction and returns a single block.
        """
        if self.config.mode is DecoderMode.LLAVA_BASELINE:
            return [IndexedTokens.full(self.encode_turn(conv.image, ""))]
        if self.scheme is PromptScheme.NONE:
            shared = self.encode_turn(conv.image, "")
            turns = [shared] * conv.num_turns
        else:
            turns = [self.encode_turn(conv.image, q) for q in conv.questions]
        if bridge:
            return prune_multiturn(turns, self.config.tau)
        return [IndexedTokens.full(t) for t in turns]

    def attention_map(self, image: PatchGrid, instruction: str, layer: int) -> np.ndarray:
        """
        CLS-to-patch attention of one ViT layer, shaped like the patch grid.

        Raises:
            ConfigurationError: If ``layer`` is out of range.
        """
        if not 0 <= layer < self.vit.config.depth:
            raise ConfigurationError(f"Layer {layer} out of range 0..{self.vit.config.depth - 1}")
        with no_grad():
            features = self.encode_features(image, instruction, record_attention=True)
        assert features.attention is not None
        return features.attention[layer].reshape(image.grid_shape)

    # ------------------------------------------------------------------
    # Decoder side

    def assemble(self, conv: Conversation, bridge: Optional[bool] = None,
                 prefix_turn: Optional[int] = None) -> Tuple[AssembledSequence, PruneReport]:
        """Encode, optionally prune, and lay out one conversation."""
        bridge = self.config.bridge if bridge is None else bridge
        retained = self.visual_turns(conv, bridge)
        seq = assemble(conv, retained, self.decoder, self.vocab, self.config.mode, prefix_turn)
        tau = self.config.tau if bridge else math.inf
        return seq, report_from_retained(retained, [seq.text_count], tau)

    def conversation_loss(self, conv: Conversation,
                          bridge: Optional[bool] = None) -> Tuple[Tensor, AssembledSequence, PruneReport]:
        """Interleaved answer loss of one conversation."""
        seq, report = self.assemble(conv, bridge)
        logits = self.decoder.causal_forward(seq)
        return interleaved_loss(seq, logits), seq, report

    def answer_all(self, conv: Conversation) -> List[str]:
        """
        Generate every turn's answer with the Bridge off.

        Earlier turns are given their reference answers as context.
        """
        predictions = []
        with no_grad():
            retained = self.visual_turns(conv, bridge=False)
            for k in range(conv.num_turns):
                prefix = assemble(conv, retained, self.decoder, self.vocab, self.config.mode, prefix_turn=k)
                ids = greedy_generate(self.decoder, prefix, self.vocab.eos_id, MAX_ANSWER_TOKENS)
                predictions.append(" ".join(self.vocab.decode(ids)))
        return predictions


# ----------------------------------------------------------------------
# Training


@dataclass
class AuditResult:
    """
    Parameter changes over a training run.

    Attributes:
        rows (List[Dict]): One row per parameter: name, group, trainable, changed.
        frozen_intact (bool): Every frozen parameter is bit-identical.
        changed_groups (List[str]): Groups with at least one changed parameter.
    """
    rows: List[Dict[str, object]]
    frozen_intact: bool
    changed_groups: List[str]


def audit_parameters(model: PantherModel, before: Dict[str, np.ndarray]) -> AuditResult:
    """Compare current parameters with a snapshot taken before training."""
    rows = []
    frozen_intact = True
    changed_groups = set()
    for name, p in model.named_parameters():
        changed = not np.array_equal(before[name], p.data)
        group = model.group_of(name)
        rows.append({"parameter": name, "group": group, "trainable": p.requires_grad, "changed": changed})
        if changed:
            changed_groups.add(group)
            if not p.requires_grad:
                frozen_intact = False
    return AuditResult(rows, frozen_intact, sorted(changed_groups))


@dataclass
class TrainResult:
    """Loss log rows and the frozen-parameter audit of one run."""
    loss_rows: List[Dict[str, float]] = field(default_factory=list)
    audit: Optional[AuditResult] = None

    @property
    def final_loss(self) -> float:
        return self.loss_rows[-1]["loss"] if self.loss_rows else math.nan


class Trainer:
    """
    Mini-batch Adam training over a list of conversations.

    Attributes:
        model (PantherModel): Model being trained.
        optimizer (Adam): Prompt group at ``lr_prompt``, model group at ``lr_model``.
    """

    def __init__(self, model: PantherModel, conversations: Sequence[Conversation]):
        if not conversations:
            raise ConfigurationError("Training needs at least one conversation")
        self.model = model
        self.config = model.config
        self.conversations = list(conversations)
        groups = model.parameter_groups()
        self.optimizer = Adam([
            ParamGroup("prompt", groups["prompt"], self.config.lr_prompt),
            ParamGroup("model", groups["model"], self.config.lr_model),
        ])
        self.rng = np.random.default_rng(self.config.seed + 1)
        self._order: List[int] = []

    def next_batch(self) -> List[Conversation]:
        """Draw the next batch from a reshuffled pass over the data."""
        batch = []
        while len(batch) < min(self.config.batch_size, len(self.conversations)):
            if not self._order:
                self._order = list(self.rng.permutation(len(self.conversations)))
            batch.append(self.conversations[self._order.pop()])
        return batch

    def train_step(self, batch: Sequence[Conversation], bridge: Optional[bool] = None) -> Dict[str, float]:
        """
        One optimizer step on the mean loss of ``batch``.

        Each conversation is backpropagated separately; gradients accumulate.
        """
        self.optimizer.zero_grad()
        total_loss = 0.0
        length = 0
        visual = 0
        scale = 1.0 / len(batch)
        for conv in batch:
            loss, seq, report = self.model.conversation_loss(conv, bridge)
            (loss * scale).backward()
            total_loss += loss.item() * scale
            length += seq.length
            visual += report.visual_after
        self.optimizer.step()
        return {"loss": total_loss, "sequence_length": length, "visual_tokens": visual}

    def run_epoch(self, bridge: Optional[bool] = None) -> float:
        """One pass over the data in file order; returns wall seconds."""
        start = time.perf_counter()
        size = self.config.batch_size
        for first in range(0, len(self.conversations), size):
            self.train_step(self.conversations[first:first + size], bridge)
        return time.perf_counter() - start

    def train(self, steps: Optional[int] = None, progress: bool = True) -> TrainResult:
        """Run ``steps`` optimizer steps and audit the parameters afterwards."""
        steps = self.config.steps if steps is None else steps
        before = self.model.state_dict()
        result = TrainResult()
        start = time.perf_counter()
        bar = tqdm(range(1, steps + 1), desc="train", disable=not progress)
        for step in bar:
            row = self.train_step(self.next_batch())
            row["step"] = step
            row["seconds"] = round(time.perf_counter() - start, 3)
            result.loss_rows.append(row)
            bar.set_postfix(loss=f"{row['loss']:.4f}")
            if step % self.config.log_every == 0 or step == steps:
                logger.info(f"step {step}/{steps} loss {row['loss']:.5f} "
                            f"tokens {row['sequence_length']} visual {row['visual_tokens']}")
        result.audit = audit_parameters(self.model, before)
        if result.audit.frozen_intact:
            logger.info(f"Frozen parameters unchanged; updated groups: {', '.join(result.audit.changed_groups)}")
        else:
            logger.error("Frozen parameters changed during training")
        return result


# ----------------------------------------------------------------------
# Evaluation


@dataclass
class EvalResult:
    """Exact-match accuracy over every turn of every conversation."""
    correct: int
    total: int
    predictions: List[str]

    @property
    def accuracy(self) -> float:
        return self.correct / self.total if self.total else 0.0


def evaluate(model: PantherModel, conversations: Sequence[Conversation], progress: bool = False) -> EvalResult:
    """Greedy answers with the Bridge off, compared by exact match."""
    correct = 0
    total = 0
    predictions: List[str] = []
    for conv in tqdm(conversations, desc="eval", disable=not progress):
        answers = model.answer_all(conv)
        for predicted, turn in zip(answers, conv.turns):
            correct += int(predicted == turn.answer)
            total += 1
        predictions.extend(answers)
    logger.info(f"Exact match {correct}/{total}")
    return EvalResult(correct, total, predictions)


# ----------------------------------------------------------------------
# End-to-end gradient check


@dataclass
class GradCheckResult:
    """
    Worst relative error per parameter of an end-to-end check.

    Attributes:
        per_parameter (Dict[str, float]): Worst of the elementwise and
            directional errors for each trainable parameter.
        entries_checked (int): Scalar entries compared elementwise.
    """
    per_parameter: Dict[str, float]
    entries_checked: int = 0

    @property
    def worst(self) -> float:
        return max(self.per_parameter.values(), default=0.0)

    @property
    def worst_parameter(self) -> Optional[str]:
        if not self.per_parameter:
            return None
        return max(self.per_parameter, key=self.per_parameter.__getitem__)


def model_grad_check(model: PantherModel, conv: Conversation, h: float = 1e-5,
                     max_entries: Optional[int] = None, seed: int = 0) -> GradCheckResult:
    """
    Finite-difference check of the full forward and interleaved loss.

    Every entry of every trainable parameter is compared with a central
    difference, and each parameter is also checked along one random
    direction. ``max_entries`` limits the elementwise part to the
    largest-magnitude gradient entries of each parameter.

    Raises:
        ConfigurationError: If the parameters are not float64.
    """
    def loss_fn(_param: Tensor) -> Tensor:
        return model.conversation_loss(conv, bridge=False)[0]

    per_parameter: Dict[str, float] = {}
    entries = 0
    for name, param in model.named_parameters():
        if not param.requires_grad:
            continue
        indices = None
        if max_entries is not None:
            model.zero_grad()
            loss_fn(param).backward()
            indices = largest_entries(param.grad_or_zeros(), max_entries)
        elementwise = grad_check(loss_fn, param, h, indices)
        directional = directional_grad_check(loss_fn, param, h, seed)
        per_parameter[name] = max(elementwise, directional)
        entries += param.size if indices is None else len(indices)
        logger.debug(f"grad check {name}: elementwise {elementwise:.2e} directional {directional:.2e}")
    model.zero_grad()
    logger.info(f"Grad check compared {entries} entries over {len(per_parameter)} parameters")
    return GradCheckResult(per_parameter, entries)


def visual_turn_tensors(model: PantherModel, conv: Conversation) -> List[Tensor]:
    """Unpruned per-turn visual tokens of a panther-mode conversation, without a tape."""
    with no_grad():
        return [t.emb for t in model.visual_turns(conv, bridge=False)]
