from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from orchsim.core import ConfigError, make_example
from orchsim.workload import (
    DEFAULT_WEIGHTS,
    DistKind,
    LengthDist,
    PartSpec,
    TaskProfile,
    TraceParseError,
    composition_stats,
    default_profiles,
    example_ratios,
    generate,
    load_trace,
    save_trace,
)


def fixed(modality, n):
    return PartSpec(modality, LengthDist(DistKind.FIXED, (n,)))


class TestGenerate:
    def test_fixed_profile_identical_examples(self):
        prof = TaskProfile("f", (fixed("text", 5), fixed("vision", 64)))
        exs = generate([prof], [1.0], 20, seed=3)
        assert len({(e.parts, e.encoded_lengths) for e in exs}) == 1
        assert [e.example_id for e in exs] == list(range(20))

    def test_asr_correlation(self):
        asr = default_profiles()[1]
        exs = generate([asr], [1.0], 10_000, seed=0)
        audio = np.array([e.parts[0].metadata_length for e in exs], dtype=float)
        text = np.array([e.parts[1].metadata_length for e in exs], dtype=float)
        assert abs(np.corrcoef(audio, text)[0, 1] - 0.9) <= 0.1
        assert abs(np.corrcoef(np.log(audio), np.log(text))[0, 1] - 0.9) <= 0.1

    def test_disjoint_profiles_bimodal(self):
        a = TaskProfile("a", (fixed("text", 10), PartSpec("vision", LengthDist(DistKind.UNIFORM, (100, 800)))))
        b = TaskProfile("b", (fixed("text", 10), PartSpec("audio", LengthDist(DistKind.UNIFORM, (100, 800)))))
        stats = composition_stats(generate([a, b], [0.5, 0.5], 2000, seed=1))
        for m in ("vision", "audio"):
            hist = stats.histogram[m]
            # mass at zero (examples without the modality) and mass well above zero
            assert hist[0] > 800 and hist[5:].sum() > 800
            assert hist[1:5].sum() == 0

    def test_seeded_determinism(self):
        p = default_profiles()
        assert generate(p, DEFAULT_WEIGHTS, 200, 9) == generate(p, DEFAULT_WEIGHTS, 200, 9)
        assert generate(p, DEFAULT_WEIGHTS, 200, 9) != generate(p, DEFAULT_WEIGHTS, 200, 10)

    def test_bad_weights(self):
        with pytest.raises(ConfigError):
            generate(default_profiles(), (0.5, 0.5, 0.5), 10, 0)
        with pytest.raises(ConfigError):
            generate(default_profiles(), (0.5, 0.5), 10, 0)

    def test_bad_distributions(self):
        with pytest.raises(ConfigError):
            LengthDist(DistKind.UNIFORM, (0, 5))
        with pytest.raises(ConfigError):
            LengthDist(DistKind.LOGNORMAL, (1.0, -0.1))
        with pytest.raises(ConfigError):
            LengthDist(DistKind.FIXED, (0,))
        with pytest.raises(ConfigError):
            TaskProfile("x", (fixed("text", 1),), correlation=1.5)

    def test_positive_lengths(self):
        for e in generate(default_profiles(), DEFAULT_WEIGHTS, 3000, 2):
            assert min(p.metadata_length for p in e.parts) >= 1
            assert min(e.encoded_lengths) >= 1


class TestCompositionStats:
    def test_all_text(self):
        exs = [make_example(k, [("text", 5 + k)]) for k in range(10)]
        stats = composition_stats(exs, ["text", "vision", "audio"])
        assert np.all(stats.ratios["vision"] == 0) and stats.variance["vision"] == 0
        assert np.all(stats.ratios["text"] == 1)

    def test_fixed_half_half(self):
        exs = [make_example(k, [("text", 50), ("vision", 200)]) for k in range(10)]
        stats = composition_stats(exs)
        assert stats.mean["vision"] == 0.5 and stats.variance["vision"] == 0

    def test_incoherent_mix_has_spread(self):
        stats = composition_stats(generate(default_profiles(), DEFAULT_WEIGHTS, 4096, 0))
        spread = [m for m, v in stats.variance.items() if v > 0.01]
        assert len(spread) >= 2

    @given(st.lists(st.tuples(st.sampled_from(["text", "vision", "audio"]), st.integers(1, 5000)),
                    min_size=1, max_size=6))
    def test_ratios_sum_to_one_exactly(self, parts):
        r = example_ratios(make_example(0, parts))
        assert sum(r.values()) == Fraction(1)
        assert all(0 <= x <= 1 for x in r.values())


class TestTrace:
    def test_round_trip(self, tmp_path):
        exs = generate(default_profiles(), DEFAULT_WEIGHTS, 1000, 5)
        path = tmp_path / "t.jsonl"
        save_trace(exs, path)
        assert load_trace(path) == exs
        assert len(path.read_text().splitlines()) == 1000

    def test_empty_file(self, tmp_path):
        path = tmp_path / "t.jsonl"
        path.write_text("")
        assert load_trace(path) == []

    def test_truncated_line(self, tmp_path):
        exs = generate(default_profiles(), DEFAULT_WEIGHTS, 5, 5)
        path = tmp_path / "t.jsonl"
        save_trace(exs, path)
        lines = path.read_text().splitlines()
        lines[2] = lines[2][: len(lines[2]) // 2]
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(TraceParseError) as err:
            load_trace(path)
        assert err.value.line == 3
        assert "line 3" in str(err.value)

    def test_unknown_modality(self, tmp_path):
        path = tmp_path / "t.jsonl"
        path.write_text('{"example_id":0,"parts":[{"modality":"smell","metadata_length":3}],"interleave_order":[0]}\n')
        with pytest.raises(ConfigError):
            load_trace(path)

    def test_bad_field_types(self, tmp_path):
        path = tmp_path / "t.jsonl"
        path.write_text('{"example_id":"a","parts":[{"modality":"text","metadata_length":3}]}\n')
        with pytest.raises(TraceParseError):
            load_trace(path)

    def test_profile_dict_round_trip(self):
        for p in default_profiles():
            assert TaskProfile.from_dict(p.to_dict()) == p
