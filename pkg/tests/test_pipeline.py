"""
Tests for the end-to-end model, training, evaluation and the model gradient check.
"""
import os
import unittest

import numpy as np

from panther_toy.config import RunConfig
from panther_toy.data.synthetic import GridSpec, build_vocab, gen_dataset, sample_question
from panther_toy.engine.tensor import no_grad, set_default_dtype
from panther_toy.errors import ConfigurationError
from panther_toy.model.decoder import DecoderMode
from panther_toy.model.vision import PromptScheme
from panther_toy.pipeline import (PantherModel, Trainer, apply_precision, audit_parameters, evaluate,
                                  model_grad_check)

MICRO_GRID = GridSpec(image_size=8, patch_size=4)
TRAINED_GROUPS = {"shared_prompts", "instruction_projection", "connector", "decoder"}


def micro_model(**overrides):
    config = RunConfig.micro().with_overrides(**overrides)
    apply_precision(config)
    return PantherModel(config, build_vocab())


class TestPantherModel(unittest.TestCase):
    """Test cases for PantherModel."""

    def setUp(self):
        self.model = micro_model()
        self.conv = gen_dataset(1, (3, 3), MICRO_GRID, seed=0)[0]

    def tearDown(self):
        set_default_dtype(np.float64)

    def test_groups(self):
        """Test frozen components and the two optimizer groups."""
        groups = {}
        for name, p in self.model.named_parameters():
            groups.setdefault(self.model.group_of(name), set()).add(p.requires_grad)
        self.assertEqual(groups["backbone"], {False})
        self.assertEqual(groups["text_encoder"], {False})
        for group in TRAINED_GROUPS:
            self.assertEqual(groups[group], {True})

        split = self.model.parameter_groups()
        prompt_ids = {id(p) for p in split["prompt"]}
        for name, p in self.model.named_parameters():
            if self.model.group_of(name) in ("shared_prompts", "instruction_projection"):
                self.assertIn(id(p), prompt_ids)
        self.assertEqual(len(split["prompt"]) + len(split["model"]),
                         len(self.model.trainable_parameters()))

    def test_prompt_scheme_without_prompts(self):
        """Test that a prompted scheme with nothing to insert is rejected."""
        with self.assertRaises(ConfigurationError):
            micro_model(use_instruction_prompts=False, num_shared_prompts=0)
        model = micro_model(prompt_scheme=PromptScheme.NONE, use_instruction_prompts=False,
                            num_shared_prompts=0)
        self.assertIsNone(model.prompt_bundle("is there a red block ?"))

    def test_shallow_bank_depth(self):
        """Test that shallow prompting keeps a single prompt layer."""
        model = micro_model(prompt_scheme=PromptScheme.SHALLOW)
        bundle = model.prompt_bundle("is there a red block ?")
        self.assertEqual(len(bundle.shared), 1)
        self.assertEqual(bundle.num_shared, 2)

    def test_instruction_dependence(self):
        """Test that different instructions change patch outputs, and never under scheme none."""
        plain = micro_model(prompt_scheme=PromptScheme.NONE)
        rng = np.random.default_rng(1)
        images = gen_dataset(100, (1, 1), MICRO_GRID, seed=2)
        differ = 0
        identical = 0
        with no_grad():
            for conv in images:
                q_a = sample_question(rng, MICRO_GRID)
                q_b = q_a
                while q_b == q_a:
                    q_b = sample_question(rng, MICRO_GRID)
                a = self.model.encode_features(conv.image, q_a).patches.data
                b = self.model.encode_features(conv.image, q_b).patches.data
                differ += int(not np.array_equal(a, b))
                a = plain.encode_features(conv.image, q_a).patches.data
                b = plain.encode_features(conv.image, q_b).patches.data
                identical += int(np.array_equal(a, b))
        self.assertGreaterEqual(differ, 95)
        self.assertEqual(identical, 100)

    def test_visual_turns_per_mode(self):
        """Test one block per turn in panther mode and one block in total for the baseline."""
        with no_grad():
            self.assertEqual([len(t) for t in self.model.visual_turns(self.conv, bridge=False)], [4, 4, 4])
            baseline = micro_model(mode=DecoderMode.LLAVA_BASELINE)
            self.assertEqual([len(t) for t in baseline.visual_turns(self.conv, bridge=False)], [4])

    def test_bridge_on_plain_encoder(self):
        """Test that repeated plain-encoder turns are pruned down to turn 0."""
        model = micro_model(prompt_scheme=PromptScheme.NONE, tau=0.95)
        with no_grad():
            seq, report = model.assemble(self.conv, bridge=True)
        self.assertEqual(report.retained, [4, 0, 0])
        self.assertEqual(seq.length, 4 + seq.text_count)
        self.assertEqual(report.total_after, seq.length)

    def test_attention_map(self):
        """Test the grid-shaped attention map and the layer range."""
        attention = self.model.attention_map(self.conv.image, "is there a red block ?", layer=1)
        self.assertEqual(attention.shape, (2, 2))
        self.assertTrue(np.all(attention >= 0))
        with self.assertRaises(ConfigurationError):
            self.model.attention_map(self.conv.image, "", layer=2)

    def test_answer_all(self):
        """Test one generated answer per turn."""
        answers = self.model.answer_all(self.conv)
        self.assertEqual(len(answers), 3)
        self.assertTrue(all(isinstance(a, str) for a in answers))


class TestDefaultScaleBridge(unittest.TestCase):
    """Test cases for the Bridge on the default-size model."""

    def test_later_turns_keep_tokens(self):
        """Test that at tau 0.95 every conversation keeps visual tokens after turn 0."""
        model = PantherModel(RunConfig(), build_vocab())
        data = gen_dataset(4, (3, 3), GridSpec(), seed=0)
        with no_grad():
            for conv in data:
                kept = [len(t) for t in model.visual_turns(conv, bridge=True)]
                self.assertEqual(kept[0], 16)
                self.assertGreater(sum(kept[1:]), 0, f"conversation {conv.id} kept {kept}")


class TestTrainer(unittest.TestCase):
    """Test cases for Trainer."""

    def setUp(self):
        self.data = gen_dataset(4, (2, 3), MICRO_GRID, seed=3)

    def tearDown(self):
        set_default_dtype(np.float64)

    def test_empty_dataset(self):
        """Test that training without data is rejected."""
        with self.assertRaises(ConfigurationError):
            Trainer(micro_model(), [])

    def test_short_run(self):
        """Test the loss log and the frozen-parameter audit."""
        model = micro_model(steps=3, batch_size=2, bridge=True, lr_prompt=1e-2, lr_model=1e-2)
        result = Trainer(model, self.data).train(progress=False)
        self.assertEqual([row["step"] for row in result.loss_rows], [1, 2, 3])
        self.assertTrue(np.isfinite(result.final_loss))
        self.assertTrue(result.audit.frozen_intact)
        self.assertEqual(set(result.audit.changed_groups), TRAINED_GROUPS)

    def test_batches_cover_the_data(self):
        """Test that one reshuffled pass visits every conversation once."""
        trainer = Trainer(micro_model(batch_size=2), self.data)
        seen = [conv.id for _ in range(2) for conv in trainer.next_batch()]
        self.assertEqual(sorted(seen), [0, 1, 2, 3])

    def test_audit_flags_frozen_change(self):
        """Test that touching a frozen parameter is reported."""
        model = micro_model()
        before = model.state_dict()
        name, param = next((n, p) for n, p in model.named_parameters() if not p.requires_grad)
        param.data[...] += 1.0
        audit = audit_parameters(model, before)
        self.assertFalse(audit.frozen_intact)
        self.assertIn(model.group_of(name), audit.changed_groups)

    def test_evaluate(self):
        """Test the exact-match count over every turn."""
        result = evaluate(micro_model(), self.data)
        self.assertEqual(result.total, sum(c.num_turns for c in self.data))
        self.assertEqual(len(result.predictions), result.total)
        self.assertTrue(0.0 <= result.accuracy <= 1.0)


class TestModelGradCheck(unittest.TestCase):
    """Test cases for model_grad_check."""

    def setUp(self):
        self.conv = gen_dataset(1, (2, 2), MICRO_GRID, seed=0)[0]

    def tearDown(self):
        set_default_dtype(np.float64)

    def test_deep_prompts(self):
        """Test every entry of the full prompted forward and interleaved loss."""
        model = micro_model()
        result = model_grad_check(model, self.conv)
        self.assertLess(result.worst, 1e-4)
        self.assertEqual(result.entries_checked, sum(p.size for p in model.trainable_parameters()))
        self.assertTrue(any(n.startswith("shared_prompts.") for n in result.per_parameter))
        self.assertTrue(any(n.startswith("instruction_prompts.projection") for n in result.per_parameter))

    def test_plain_encoder(self):
        """Test the unprompted forward at the largest gradient entries."""
        model = micro_model(prompt_scheme=PromptScheme.NONE)
        result = model_grad_check(model, self.conv, max_entries=8)
        self.assertLess(result.worst, 1e-4)
        self.assertEqual(set(result.per_parameter), {n for n, p in model.named_parameters() if p.requires_grad})
        self.assertLessEqual(result.entries_checked, 8 * len(result.per_parameter))

    def test_refuses_f32(self):
        """Test that single precision is rejected."""
        model = micro_model(precision="f32")
        with self.assertRaises(ConfigurationError):
            model_grad_check(model, self.conv)


@unittest.skipUnless(os.environ.get("PANTHER_SLOW_TESTS") == "1", "set PANTHER_SLOW_TESTS=1")
class TestOverfit(unittest.TestCase):
    """Long training run on a small dataset; several minutes on one core."""

    def tearDown(self):
        set_default_dtype(np.float64)

    def test_overfit_with_bridge(self):
        """Test that training with the Bridge on reaches 100% exact match with the Bridge off."""
        config = RunConfig(bridge=True, tau=0.95, steps=2000)
        apply_precision(config)
        model = PantherModel(config, build_vocab())
        data = gen_dataset(32, (3, 3), GridSpec(), seed=0)
        result = Trainer(model, data).train(progress=False)

        # later turns contribute visual tokens to training
        first_turn_only = config.batch_size * config.vit_config().num_patches
        self.assertTrue(any(row["visual_tokens"] > first_turn_only for row in result.loss_rows))
        self.assertTrue(result.audit.frozen_intact)
        self.assertTrue(TRAINED_GROUPS <= set(result.audit.changed_groups))
        unchanged = {row["group"] for row in result.audit.rows if not row["changed"]}
        self.assertTrue({"backbone", "text_encoder"} <= unchanged)
        self.assertEqual(evaluate(model, data).accuracy, 1.0)


if __name__ == '__main__':
    unittest.main()
