"""
Command-line entry point for panther_toy.

Subcommands: gen-data, train, prune, prune-bench, grad-check, dump-attn, eval.
"""
from typing import List, Optional
import argparse
import logging
import os
import sys

from panther_toy import __version__, commands
from panther_toy.errors import PantherError
from panther_toy.model.decoder import DecoderMode
from panther_toy.model.vision import PromptScheme


logger = logging.getLogger("panther_toy")


def setup_logging(verbose: bool = False, log_dir: str = "logs"):
    """Set up logging configuration."""
    log_level = logging.DEBUG if verbose else logging.INFO

    os.makedirs(log_dir, exist_ok=True)
    log_file = os.path.join(log_dir, "panther.log")

    logging.basicConfig(
        level=log_level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(log_file),
            logging.StreamHandler(sys.stdout) if verbose else logging.NullHandler()
        ]
    )


def _on_off(value: str) -> str:
    lowered = value.lower()
    if lowered not in ("on", "off"):
        raise argparse.ArgumentTypeError(f"expected on or off, got {value!r}")
    return lowered


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """Parse command-line arguments."""
    parser = argparse.ArgumentParser(
        prog="panther",
        description="Instruction-prompted vision encoder, multi-turn token pruning and interleaved training",
    )
    parser.add_argument('--version', action='version', version=f"%(prog)s {__version__}")
    parser.add_argument('-v', '--verbose', action='store_true', help='Enable verbose logging')
    parser.add_argument('--log-dir', default='logs', help='Directory for panther.log')
    parser.add_argument('-q', '--quiet', action='store_true', help='Hide progress bars')
    sub = parser.add_subparsers(dest='command', metavar='COMMAND')
    sub.required = True

    p = sub.add_parser('gen-data', help='Generate a synthetic multi-turn dataset')
    p.add_argument('--out', required=True, help='Dataset file to write')
    p.add_argument('--n', type=int, default=32, help='Number of conversations')
    p.add_argument('--k', type=int, default=3, help='Turns per conversation (minimum with --k-max)')
    p.add_argument('--k-max', type=int, help='Maximum turns per conversation')
    p.add_argument('--seed', type=int, default=0, help='Generator seed')
    p.add_argument('--image-size', type=int, default=16, help='Image side in pixels')
    p.add_argument('--patch-size', type=int, default=4, help='ViT patch side')
    p.set_defaults(func=commands.cmd_gen_data)

    p = sub.add_parser('train', help='Train on a dataset and write a checkpoint')
    p.add_argument('--config', help='Run configuration file')
    p.add_argument('--data', required=True, help='Dataset file')
    p.add_argument('--out', required=True, help='Checkpoint directory')
    p.add_argument('--mode', choices=[m.value for m in DecoderMode], help='Sequence layout')
    p.add_argument('--bridge', type=_on_off, help='Bridge pruning during training (on/off)')
    p.add_argument('--tau', type=float, help='Bridge threshold')
    p.add_argument('--steps', type=int, help='Optimizer steps')
    p.add_argument('--seed', type=int, help='Model and shuffling seed')
    p.set_defaults(func=commands.cmd_train)

    p = sub.add_parser('prune', help='Prune per-turn visual token dumps')
    p.add_argument('--turns', nargs='+', required=True, help='One tensor dump per turn, in turn order')
    p.add_argument('--tau', type=float, default=0.95, help='Bridge threshold')
    p.add_argument('--text-lengths', type=int, nargs='*', help='Text tokens per turn')
    p.add_argument('--out-indices', required=True, help='Retained index lists, one line per turn')
    p.add_argument('--out-report', required=True, help='Prune report CSV')
    p.set_defaults(func=commands.cmd_prune)

    p = sub.add_parser('prune-bench', help='Sweep tau and report token counts and epoch time')
    p.add_argument('--data', required=True, help='Dataset file')
    p.add_argument('--checkpoint', required=True, help='Checkpoint directory')
    p.add_argument('--taus', default=commands.DEFAULT_TAUS, help='Comma-separated thresholds')
    p.add_argument('--out', required=True, help='Bench CSV')
    p.add_argument('--workers', type=int, default=1, help='Threads for token counting')
    p.add_argument('--skip-timing', action='store_true', help='Do not time a training epoch')
    p.set_defaults(func=commands.cmd_prune_bench)

    p = sub.add_parser('grad-check', help='End-to-end finite-difference check on a micro model')
    p.add_argument('--config', help='Config file whose keys override the micro defaults')
    p.add_argument('--scheme', choices=[s.value for s in PromptScheme], help='Prompt scheme')
    p.add_argument('--h', type=float, default=1e-5, help='Finite-difference step')
    p.add_argument('--max-entries', type=int,
                   help='Check only this many largest-gradient entries per parameter (default: all)')
    p.set_defaults(func=commands.cmd_grad_check)

    p = sub.add_parser('dump-attn', help='Dump one layer of CLS-to-patch attention')
    p.add_argument('--checkpoint', required=True, help='Checkpoint directory')
    p.add_argument('--data', required=True, help='Dataset file holding the image')
    p.add_argument('--image-id', type=int, required=True, help='Conversation id of the image')
    p.add_argument('--instruction', default='', help='Instruction text')
    p.add_argument('--layer', type=int, default=0, help='ViT layer, 0-based')
    p.add_argument('--out', required=True, help='Output path stem; .pthr and .csv are written')
    p.set_defaults(func=commands.cmd_dump_attn)

    p = sub.add_parser('eval', help='Exact-match evaluation with greedy generation')
    p.add_argument('--checkpoint', required=True, help='Checkpoint directory')
    p.add_argument('--data', required=True, help='Dataset file')
    p.add_argument('--bridge', type=_on_off, help='Rejected when on: inference never prunes')
    p.add_argument('--out', help='Write generated answers, one per line')
    p.set_defaults(func=commands.cmd_eval)

    return parser.parse_args(argv)


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point."""
    args = parse_args(argv)
    setup_logging(args.verbose, args.log_dir)
    try:
        return args.func(args)
    except (PantherError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
