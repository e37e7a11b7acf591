"""
Tests for the run configuration.
"""
import math
import os
import shutil
import tempfile
import unittest

from panther_toy.config import RunConfig
from panther_toy.errors import ConfigurationError
from panther_toy.model.decoder import DecoderMode
from panther_toy.model.vision import PromptScheme


class TestRunConfig(unittest.TestCase):
    """Test cases for RunConfig."""

    def setUp(self):
        self.test_dir = tempfile.mkdtemp()
        self.path = os.path.join(self.test_dir, "run.cfg")

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def test_file_round_trip(self):
        """Test that a written config reads back equal."""
        config = RunConfig(prompt_scheme=PromptScheme.SHALLOW, mode=DecoderMode.LLAVA_BASELINE,
                           tau=0.97, bridge=False, lr_model=3e-4, precision="f32")
        config.to_file(self.path)
        self.assertEqual(RunConfig.from_file(self.path, {}), config)

    def test_parse(self):
        """Test comments, blank lines and coercion."""
        text = "# run\n\nseed = 3\nbridge=off   # no pruning\nprompt_scheme=none\ntau=off\n"
        config = RunConfig.parse(text)
        self.assertEqual(config.seed, 3)
        self.assertFalse(config.bridge)
        self.assertIs(config.prompt_scheme, PromptScheme.NONE)
        self.assertTrue(math.isinf(config.tau))
        self.assertEqual(config.steps, RunConfig().steps)

    def test_bool_spellings(self):
        """Test the accepted spellings of booleans."""
        for word, expected in (("on", True), ("Yes", True), ("1", True), ("false", False), ("NO", False)):
            self.assertIs(RunConfig.parse(f"bridge={word}").bridge, expected)
        with self.assertRaises(ConfigurationError):
            RunConfig.parse("bridge=maybe")

    def test_unknown_key(self):
        """Test that an unknown key names the line."""
        with self.assertRaises(ConfigurationError) as ctx:
            RunConfig.parse("seed=1\nlearning_rate=0.1\n", source="x.cfg")
        self.assertIn("x.cfg:2", str(ctx.exception))

    def test_malformed_and_invalid(self):
        """Test lines without '=' and out-of-range values."""
        for text in ("seed", "steps=-1", "tau=1.5", "precision=f16", "vit_depth=0", "mode=gpt"):
            with self.assertRaises(ConfigurationError):
                RunConfig.parse(text)

    def test_parse_values_only_present_keys(self):
        """Test that parse_values returns no defaults."""
        self.assertEqual(RunConfig.parse_values("seed=4\ntau=0.9"), {"seed": 4, "tau": 0.9})

    def test_env_seed(self):
        """Test that PANTHER_SEED overrides the file."""
        RunConfig(seed=1).to_file(self.path)
        self.assertEqual(RunConfig.from_file(self.path, {"PANTHER_SEED": "42"}).seed, 42)
        self.assertEqual(RunConfig.from_file(self.path, {"PANTHER_SEED": ""}).seed, 1)
        with self.assertRaises(ConfigurationError):
            RunConfig().with_env({"PANTHER_SEED": "abc"})

    def test_overrides(self):
        """Test that None overrides are ignored and others validated."""
        config = RunConfig()
        self.assertIs(config.with_overrides(seed=None), config)
        self.assertEqual(config.with_overrides(steps=5).steps, 5)
        with self.assertRaises(ConfigurationError):
            config.with_overrides(tau=-0.1)

    def test_effective_tau(self):
        """Test that a disabled Bridge keeps every token."""
        self.assertEqual(RunConfig(tau=0.9).effective_tau, 0.9)
        self.assertTrue(math.isinf(RunConfig(tau=0.9, bridge=False).effective_tau))

    def test_micro(self):
        """Test that the micro config keeps every width at most 8."""
        micro = RunConfig.micro()
        for name in ("vit_width", "text_width", "decoder_width", "image_size"):
            self.assertLessEqual(getattr(micro, name), 8)
        self.assertEqual(micro.precision, "f64")
        self.assertFalse(micro.bridge)

    def test_derived_configs(self):
        """Test that module configs carry the run settings."""
        config = RunConfig(decoder_width=16, decoder_heads=2, mode=DecoderMode.LLAVA_BASELINE)
        decoder = config.decoder_config(40)
        self.assertEqual((decoder.vocab_size, decoder.width, decoder.mode), (40, 16, DecoderMode.LLAVA_BASELINE))
        self.assertEqual(config.vit_config().num_patches, 16)

    def test_init_scales(self):
        """Test that the frozen encoders and the prompt side get their own init scales."""
        config = RunConfig(backbone_init_std=0.3, prompt_init_std=0.05, init_std=0.01)
        self.assertEqual(config.vit_config().init_std, 0.3)
        self.assertEqual(config.text_config(40).init_std, 0.3)
        self.assertEqual(config.decoder_config(40).init_std, 0.01)
        for name in ("backbone_init_std", "prompt_init_std", "init_std"):
            with self.assertRaises(ConfigurationError):
                RunConfig.parse(f"{name}=0")


if __name__ == '__main__':
    unittest.main()
