"""
Subcommand implementations.

Each ``cmd_*`` takes the parsed argparse namespace, prints a short summary
to stdout and returns a process exit status. Library errors propagate to
``__main__.main``, which logs them and exits with status 1.
"""
from argparse import Namespace
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple
import logging
import os

import numpy as np

from panther_toy.bridge.pruning import PruneReport, prune_multiturn, report_from_retained
from panther_toy.config import RunConfig
from panther_toy.data.synthetic import Conversation, GridSpec, build_vocab, gen_dataset
from panther_toy.engine.tensor import Tensor
from panther_toy.engine.tensor_io import read_tensor, write_tensor
from panther_toy.errors import ConfigurationError
from panther_toy.model.decoder import DecoderMode, text_lengths
from panther_toy.model.vision import PromptScheme
from panther_toy.pipeline import (PantherModel, Trainer, apply_precision, evaluate, model_grad_check,
                                  visual_turn_tensors)
from panther_toy.reports import csv_report
from panther_toy.storage.checkpoint_storage import CheckpointStorage
from panther_toy.storage.dataset_storage import load_dataset, save_dataset


logger = logging.getLogger(__name__)

GRAD_CHECK_TOLERANCE = 1e-4
DEFAULT_TAUS = "1.0,0.97,0.95,0.90"


def load_run_config(args: Namespace) -> RunConfig:
    """
    Config file (or defaults), then ``PANTHER_SEED``, then command-line flags.
    """
    path = getattr(args, "config", None)
    config = RunConfig.from_file(path) if path else RunConfig().with_env()
    bridge = getattr(args, "bridge", None)
    return config.with_overrides(
        mode=DecoderMode(args.mode) if getattr(args, "mode", None) else None,
        bridge=None if bridge is None else bridge == "on",
        tau=getattr(args, "tau", None),
        steps=getattr(args, "steps", None),
        seed=getattr(args, "seed", None),
    )


def load_model(checkpoint: str, **overrides) -> PantherModel:
    """
    Rebuild a trained model from a checkpoint directory.

    Raises:
        ConfigurationError: If the directory holds no checkpoint.
    """
    storage = CheckpointStorage(checkpoint)
    if not storage.exists():
        raise ConfigurationError(f"No checkpoint found in {checkpoint}")
    config = storage.load_config().with_overrides(**overrides)
    apply_precision(config)
    model = PantherModel(config, storage.load_vocab())
    dtype = np.float64 if config.precision == "f64" else np.float32
    model.load_state_dict(storage.load_state(dtype))
    return model


def _find_conversation(conversations: Sequence[Conversation], conversation_id: int) -> Conversation:
    for conv in conversations:
        if conv.id == conversation_id:
            return conv
    raise ConfigurationError(f"No conversation with id {conversation_id}")


def _dump_stem(path: str) -> str:
    stem, ext = os.path.splitext(path)
    return stem if ext in (".pthr", ".csv") else path


def _parse_taus(text: str) -> List[float]:
    try:
        taus = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigurationError(f"Invalid tau list {text!r}") from None
    if not taus:
        raise ConfigurationError("Empty tau list")
    return taus


# ----------------------------------------------------------------------


def cmd_gen_data(args: Namespace) -> int:
    """Generate a synthetic dataset file."""
    k_max = args.k if args.k_max is None else args.k_max
    spec = GridSpec(image_size=args.image_size, patch_size=args.patch_size)
    conversations = gen_dataset(args.n, (args.k, k_max), spec, args.seed)
    save_dataset(args.out, conversations)
    print(f"Wrote {len(conversations)} conversations to {args.out}")
    return 0


def cmd_train(args: Namespace) -> int:
    """Train on a dataset, write the loss log, the audit and a checkpoint."""
    config = load_run_config(args)
    apply_precision(config)
    conversations = load_dataset(args.data)
    vocab = build_vocab()
    model = PantherModel(config, vocab)
    logger.info(f"Training {model.num_parameters()} parameters "
                f"({sum(p.size for p in model.trainable_parameters())} trainable) "
                f"on {len(conversations)} conversations")

    trainer = Trainer(model, conversations)
    result = trainer.train(progress=not args.quiet)

    csv_report.write_loss_log(os.path.join(args.out, "loss.csv"), result.loss_rows)
    assert result.audit is not None
    csv_report.write_audit(os.path.join(args.out, "audit.csv"), result.audit.rows)
    if not CheckpointStorage(args.out).save(model.state_dict(), config, vocab):
        return 1

    print(f"Final loss {result.final_loss:.5f} after {len(result.loss_rows)} steps")
    print(f"Frozen parameters unchanged: {'yes' if result.audit.frozen_intact else 'NO'}")
    print(f"Updated groups: {', '.join(result.audit.changed_groups) or 'none'}")
    return 0 if result.audit.frozen_intact else 1


def cmd_prune(args: Namespace) -> int:
    """Prune per-turn visual token dumps and write index lists plus a report."""
    turns = [Tensor(read_tensor(path).astype(np.float64)) for path in args.turns]
    retained = prune_multiturn(turns, args.tau)
    lengths = args.text_lengths or [0] * len(turns)
    report = report_from_retained(retained, lengths, args.tau)

    csv_report.write_index_lists(args.out_indices, retained)
    csv_report.write_prune_report(args.out_report, report)
    print(f"Visual tokens {report.visual_before} -> {report.visual_after}; "
          f"sequence {report.total_before} -> {report.total_after}")
    return 0


def _bench_counts(turns: List[Tensor], lengths: List[int], tau: float) -> Tuple[PruneReport, int]:
    report = report_from_retained(prune_multiturn(turns, tau), lengths, tau)
    return report, report.total_after


def cmd_prune_bench(args: Namespace) -> int:
    """
    Sweep tau over a dataset: retained tokens, sequence lengths and the
    wall time of one training epoch at each tau.
    """
    taus = _parse_taus(args.taus)
    conversations = load_dataset(args.data)
    model = load_model(args.checkpoint)
    if model.config.mode is not DecoderMode.PANTHER:
        raise ConfigurationError("prune-bench needs a panther-mode checkpoint")

    encoded = [visual_turn_tensors(model, conv) for conv in conversations]
    lengths = [text_lengths(conv) for conv in conversations]

    rows: List[Dict[str, object]] = []
    for tau in taus:
        jobs = list(zip(encoded, lengths))
        if args.workers > 1:
            with ThreadPoolExecutor(max_workers=args.workers) as pool:
                results = list(pool.map(lambda job: _bench_counts(job[0], job[1], tau), jobs))
        else:
            results = [_bench_counts(turns, text, tau) for turns, text in jobs]

        reports = [r for r, _ in results]
        sequence_lengths = [length for _, length in results]
        epoch_seconds: Optional[float] = None
        if not args.skip_timing:
            trainer = Trainer(load_model(args.checkpoint, tau=tau, bridge=True), conversations)
            epoch_seconds = round(trainer.run_epoch(bridge=True), 3)

        row = {
            "tau": tau,
            "conversations": len(conversations),
            "visual_before": sum(r.visual_before for r in reports),
            "visual_after": sum(r.visual_after for r in reports),
            "total_before": sum(r.total_before for r in reports),
            "total_after": sum(r.total_after for r in reports),
            "mean_length": round(float(np.mean(sequence_lengths)), 3),
            "min_length": min(sequence_lengths),
            "max_length": max(sequence_lengths),
            "epoch_seconds": "" if epoch_seconds is None else epoch_seconds,
        }
        logger.info(f"prune-bench tau={tau}: visual {row['visual_before']} -> {row['visual_after']}, "
                    f"epoch {row['epoch_seconds'] or '-'} s")
        rows.append(row)

    csv_report.write_bench(args.out, rows)
    for row in rows:
        print(f"tau={row['tau']}: visual tokens {row['visual_after']}/{row['visual_before']}, "
              f"mean length {row['mean_length']}")
    return 0


def cmd_grad_check(args: Namespace) -> int:
    """End-to-end finite-difference check on a micro model."""
    config = RunConfig.micro()
    if args.config:
        with open(args.config, "r", encoding="utf-8") as f:
            config = config.with_overrides(**RunConfig.parse_values(f.read(), args.config))
    config = config.with_env()
    if args.scheme:
        config = config.with_overrides(prompt_scheme=PromptScheme(args.scheme))
    config = config.with_overrides(bridge=False)
    if config.precision != "f64":
        raise ConfigurationError("grad-check refuses to run in f32; set precision=f64")

    apply_precision(config)
    spec = GridSpec(image_size=config.image_size, patch_size=config.patch_size)
    conv = gen_dataset(1, (2, 2), spec, config.seed)[0]
    model = PantherModel(config, build_vocab())
    result = model_grad_check(model, conv, h=args.h, max_entries=args.max_entries, seed=config.seed)

    print(f"Checked {result.entries_checked} entries of {len(result.per_parameter)} parameters (seed {config.seed})")
    print(f"Worst relative error {result.worst:.3e} at {result.worst_parameter}")
    if result.worst >= GRAD_CHECK_TOLERANCE:
        logger.error(f"Gradient check failed: {result.worst:.3e} >= {GRAD_CHECK_TOLERANCE}")
        return 1
    return 0


def cmd_dump_attn(args: Namespace) -> int:
    """Write one layer's CLS-to-patch attention map as a tensor dump and a CSV."""
    model = load_model(args.checkpoint)
    conv = _find_conversation(load_dataset(args.data), args.image_id)
    if model.scheme is PromptScheme.NONE and args.instruction:
        logger.warning("Prompt scheme is none; the instruction is ignored")
    attention = model.attention_map(conv.image, args.instruction, args.layer)

    stem = _dump_stem(args.out)
    directory = os.path.dirname(stem)
    if directory:
        os.makedirs(directory, exist_ok=True)
    write_tensor(f"{stem}.pthr", attention)
    csv_report.write_matrix(f"{stem}.csv", attention)
    print(f"Wrote {attention.shape[0]}x{attention.shape[1]} attention map to {stem}.pthr and {stem}.csv")
    return 0


def cmd_eval(args: Namespace) -> int:
    """Greedy generation with the Bridge off; exact-match accuracy."""
    if args.bridge == "on":
        raise ConfigurationError("Inference omits the Bridge; eval always runs with bridge=off")
    model = load_model(args.checkpoint, bridge=False)
    conversations = load_dataset(args.data)
    result = evaluate(model, conversations, progress=not args.quiet)
    if args.out:
        directory = os.path.dirname(args.out)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(args.out, "w", encoding="utf-8") as f:
            for answer in result.predictions:
                f.write(answer + "\n")
    print(f"Exact match {result.correct}/{result.total} ({100.0 * result.accuracy:.1f}%)")
    return 0
