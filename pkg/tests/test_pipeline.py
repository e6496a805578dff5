import dataclasses

import numpy as np
import pytest

from apd.core import LabeledExample, Prompt
from apd.pipeline import (
    MetricsReport,
    SanitizePolicy,
    evaluate,
    sanitize,
    screen,
)


def _with_threshold(bundle, threshold):
    """Clone a bundle with a different verdict threshold."""
    aid_config = dataclasses.replace(bundle.aid_config, threshold=threshold)
    return dataclasses.replace(bundle, aid_config=aid_config)


@pytest.fixture(scope="module")
def paranoid(tiny_bundle):
    # flags everything: exercises attribution and sanitization paths
    return _with_threshold(tiny_bundle, 0.001)


@pytest.fixture(scope="module")
def permissive(tiny_bundle):
    # flags nothing
    return _with_threshold(tiny_bundle, 0.999)


class TestSanitize:
    def test_remove_middle(self):
        assert sanitize(["a", "b", "c"], {1}, SanitizePolicy(mode="remove")) == "a c"

    def test_mask_first(self):
        assert sanitize(["a", "b"], {0}, SanitizePolicy(mode="mask")) == "[FILTERED] b"

    def test_empty_flag_set_identity(self):
        assert sanitize(["a", "b"], set(), SanitizePolicy(mode="remove")) == "a b"

    def test_remove_all_yields_empty(self):
        assert sanitize(["a", "b"], {0, 1}, SanitizePolicy(mode="remove")) == ""

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError, match="positions"):
            sanitize(["a"], {3}, SanitizePolicy())

    def test_policy_validation(self):
        with pytest.raises(ValueError, match="mode"):
            SanitizePolicy(mode="rewrite")
        with pytest.raises(ValueError, match="max_rounds"):
            SanitizePolicy(max_rounds=0)


class TestScreen:
    def test_empty_prompt_rejected(self, tiny_bundle):
        with pytest.raises(ValueError, match="empty prompt"):
            screen(Prompt.from_text("   "), tiny_bundle)

    def test_single_token_prompt_valid(self, tiny_bundle):
        result = screen(Prompt.from_text("hello"), tiny_bundle)
        assert 0.0 < result.score < 1.0
        assert result.rounds >= 1

    def test_deterministic(self, tiny_bundle):
        p = Prompt.from_text("some ordinary words here")
        a = screen(p, tiny_bundle)
        b = screen(p, tiny_bundle)
        assert a.score == b.score
        assert a.adversarial == b.adversarial
        assert a.flagged_tokens == b.flagged_tokens
        assert a.sanitized_text == b.sanitized_text

    def test_benign_verdict_has_no_flags(self, permissive):
        result = screen(Prompt.from_text("alpha beta gamma"), permissive)
        assert result.adversarial is False
        assert result.flagged_tokens == set()
        assert result.sanitized_text is None
        assert result.rounds == 1

    def test_adversarial_verdict_sanitizes(self, paranoid):
        result = screen(Prompt.from_text("uno dos tres cuatro"), paranoid)
        assert result.adversarial is True
        assert result.flagged_tokens
        assert result.sanitized_text is not None

    def test_verdict_matches_threshold(self, tiny_bundle, paranoid, permissive):
        p = Prompt.from_text("whatever text goes here")
        for bundle in (tiny_bundle, paranoid, permissive):
            result = screen(p, bundle)
            assert result.adversarial == (result.score >= bundle.aid_config.threshold)

    def test_rounds_bounded(self, paranoid):
        policy = dataclasses.replace(paranoid.policy, max_rounds=3)
        bundle = dataclasses.replace(paranoid, policy=policy)
        result = screen(Prompt.from_text("a b c d e f g h"), bundle)
        assert result.rounds <= 3

    def test_remove_output_is_subsequence(self, paranoid):
        tokens = ["t0", "t1", "t2", "t3", "t4", "t5"]
        result = screen(Prompt.from_text(" ".join(tokens)), paranoid)
        out = result.sanitized_text.split()
        it = iter(tokens)
        assert all(tok in it for tok in out)  # subsequence check

    def test_single_token_adversarial_flags_it(self, paranoid):
        result = screen(Prompt.from_text("solo"), paranoid)
        assert result.adversarial is True
        assert result.flagged_tokens == {0}
        assert result.sanitized_text == ""
        assert result.fully_filtered is True

    def test_mask_mode_keeps_positions(self, paranoid):
        policy = SanitizePolicy(mode="mask", mask_token="[X]", max_rounds=2)
        bundle = dataclasses.replace(paranoid, policy=policy)
        result = screen(Prompt.from_text("aa bb cc dd"), bundle)
        assert result.sanitized_text is not None
        assert len(result.sanitized_text.split()) == 4
        assert "[X]" in result.sanitized_text

    def test_tie_rule_smaller_then_lexicographic(self, paranoid):
        # [x, x, y, y] splits into identical sides under the alternating
        # fallback: equal scores, equal sizes, both contain the smallest
        # token, so side A (even positions) is flagged.
        result = screen(Prompt.from_text("xx xx yy yy"), paranoid)
        assert result.rounds >= 1
        first_round_flags = {0, 2}
        assert first_round_flags.issubset(result.flagged_tokens)

    def test_latency_recorded(self, tiny_bundle):
        result = screen(Prompt.from_text("q r s"), tiny_bundle)
        assert result.latency_ms > 0.0

    def test_json_dict_schema(self, paranoid):
        p = Prompt.from_text("one two three")
        result = screen(p, paranoid)
        payload = result.to_json_dict(p.tokens)
        assert set(payload) == {"adversarial", "score", "flagged_tokens",
                                "sanitized_text", "latency_ms"}
        assert all(isinstance(t, str) for t in payload["flagged_tokens"])


class TestEvaluate:
    @staticmethod
    def _examples(texts_labels):
        return [
            LabeledExample(prompt=Prompt.from_text(t), label=lab)
            for t, lab in texts_labels
        ]

    def test_definitional_counts(self, paranoid, permissive):
        # paranoid flags everything: ADA 1, FPR 1; permissive: ADA 0, FPR 0
        data = self._examples(
            [("benign words", 0)] * 6 + [("attack words", 1)] * 4
        )
        flagged_all = evaluate(data, paranoid)
        assert flagged_all.ada == 1.0 and flagged_all.fpr == 1.0
        flagged_none = evaluate(data, permissive)
        assert flagged_none.ada == 0.0 and flagged_none.fpr == 0.0
        assert flagged_none.n_benign == 6 and flagged_none.n_adversarial == 4

    def test_hor_counts_detriggered(self, permissive):
        # nothing is flagged, so adversarial texts keep their triggers
        data = self._examples([("safe words", 0), ("evilword here", 1)])
        report = evaluate(data, permissive, trigger_vocab=["evilword"])
        assert report.hor == 0.0

    def test_hor_none_without_vocab(self, permissive):
        data = self._examples([("safe", 0), ("bad", 1)])
        assert evaluate(data, permissive).hor is None

    def test_missing_class_rejected(self, permissive):
        with pytest.raises(ValueError, match="recall"):
            evaluate(self._examples([("x", 0)]), permissive)
        with pytest.raises(ValueError, match="false-positive"):
            evaluate(self._examples([("x", 1)]), permissive)

    def test_report_schema(self, permissive):
        data = self._examples([("a b", 0), ("c d", 1)])
        payload = evaluate(data, permissive, trigger_vocab=["zz"]).to_json_dict()
        assert set(payload) == {"ada", "fpr", "hor", "latency_ms", "counts"}
        assert set(payload["latency_ms"]) == {"median", "p95"}


class TestBundleValidation:
    def test_dimension_mismatch_detected(self, tiny_bundle):
        bad_aid = dataclasses.replace(tiny_bundle.aid_config, latent_dim=99)
        with pytest.raises(ValueError, match="latent dim"):
            dataclasses.replace(tiny_bundle, aid_config=bad_aid)

    def test_spectral_dim_consistency(self, tiny_bundle):
        with pytest.raises(ValueError, match="spectral"):
            dataclasses.replace(tiny_bundle, k_eigs=4)
