"""TPE sampler: space handling, study mechanics, and search quality."""

import json

import numpy as np
import pytest

from scribelab.errors import StudyError
from scribelab.hpo import (
    Categorical,
    FloatDim,
    IntDim,
    SearchSpace,
    TpeConfig,
    TrialRecord,
    _round_half_away,
    _uniform_sample,
    decoding_search_space,
    load_trial_log,
    random_search,
    run_study,
    split_history,
    suggest,
    tune_decoding,
)


def _toy_space():
    return SearchSpace(
        (
            Categorical("flag", (True, False)),
            IntDim("count", 2, 9),
            FloatDim("rate", -1.0, 1.0),
        )
    )


# ---------------------------------------------------------------------------
# Dimensions and spaces


def test_dimension_validation():
    with pytest.raises(ValueError):
        Categorical("c", ())
    with pytest.raises(ValueError):
        IntDim("i", 5, 4)
    with pytest.raises(ValueError):
        FloatDim("f", 1.0, 1.0)
    with pytest.raises(ValueError):
        SearchSpace(())
    with pytest.raises(ValueError):
        SearchSpace((IntDim("x", 0, 1), FloatDim("x", 0.0, 1.0)))


def test_contains_checks_bounds_and_types():
    space = _toy_space()
    assert space.contains({"flag": True, "count": 9, "rate": 0.0})
    assert not space.contains({"flag": "maybe", "count": 2, "rate": 0.0})
    assert not space.contains({"flag": True, "count": 10, "rate": 0.0})
    assert not space.contains({"flag": True, "count": 2.5, "rate": 0.0})
    assert not space.contains({"flag": True, "count": 2, "rate": 1.5})


def test_default_decoding_space_shape():
    space = decoding_search_space()
    by_name = {d.name: d for d in space.dimensions}
    assert set(by_name) == {
        "early_stopping", "num_beams", "no_repeat_ngram_size", "length_penalty",
    }
    assert (by_name["num_beams"].low, by_name["num_beams"].high) == (5, 15)
    assert (by_name["no_repeat_ngram_size"].low,
            by_name["no_repeat_ngram_size"].high) == (5, 15)
    assert (by_name["length_penalty"].low, by_name["length_penalty"].high) == (-2.0, 2.0)
    assert set(by_name["early_stopping"].choices) == {True, False}


# ---------------------------------------------------------------------------
# Sampler internals


def test_round_half_away_from_zero():
    assert _round_half_away(2.5) == 3
    assert _round_half_away(-2.5) == -3
    assert _round_half_away(2.4) == 2
    assert _round_half_away(-2.4) == -2
    assert _round_half_away(0.0) == 0


def test_split_history_takes_ceil_gamma_top():
    records = [
        TrialRecord(i, {"x": i}, obj, "complete")
        for i, obj in enumerate([0.1, 0.9, 0.5, 0.9, 0.3])
    ]
    good, bad = split_history(records, 0.25)
    # ceil(0.25 * 5) = 2; the 0.9 tie is broken by trial order
    assert [t.trial for t in good] == [1, 3]
    assert len(bad) == 3
    assert {t.trial for t in good} | {t.trial for t in bad} == set(range(5))


def test_bandwidth_floor_applies_to_constant_samples():
    from scribelab.hpo import _bandwidth

    # floor is range/(n+1): constant samples never collapse the kernel
    assert _bandwidth(np.array([0.3, 0.3, 0.3, 0.3]), 0.0, 1.0) == pytest.approx(0.2)
    assert _bandwidth(np.array([0.3]), 0.0, 1.0) == pytest.approx(0.5)
    spread = np.array([0.0, 0.25, 0.5, 0.75, 1.0])
    expect = spread.std(ddof=1) * 5 ** (-0.2)
    assert _bandwidth(spread, 0.0, 1.0) == pytest.approx(expect)
    # with many observations the floor decays toward one percent of range
    many = np.full(99, 0.3)
    assert _bandwidth(many, 0.0, 1.0) == pytest.approx(0.01)


def test_suggestions_always_inside_the_space():
    space = _toy_space()
    cfg = TpeConfig(n_startup_trials=5, seed=0)
    rng = np.random.default_rng(1)
    obj_rng = np.random.default_rng(2)
    history: list[TrialRecord] = []
    for i in range(300):
        params = suggest(history, space, cfg, rng)
        assert space.contains(params), (i, params)
        assert isinstance(params["count"], int)
        assert isinstance(params["rate"], float)
        assert isinstance(params["flag"], bool)
        history.append(TrialRecord(i, params, float(obj_rng.normal()), "complete"))


def test_suggest_is_uniform_until_startup_quota():
    space = _toy_space()
    cfg = TpeConfig(n_startup_trials=4, seed=0)
    history = [
        TrialRecord(i, {"flag": True, "count": 2, "rate": 0.0}, 1.0, "complete")
        for i in range(3)
    ]
    expect = _uniform_sample(space, np.random.default_rng(9))
    assert suggest(history, space, cfg, np.random.default_rng(9)) == expect
    # failed trials do not count toward the startup quota
    history += [TrialRecord(3, {"flag": True, "count": 2, "rate": 0.0}, None, "failed")]
    assert suggest(history, space, cfg, np.random.default_rng(9)) == expect


def test_tpe_concentrates_on_the_good_region():
    """History rewards rate ~ 0.8; post-startup proposals should sit closer
    to it than uniform sampling does on average."""
    space = SearchSpace((FloatDim("rate", -1.0, 1.0),))
    cfg = TpeConfig(n_startup_trials=5, seed=0)
    rng = np.random.default_rng(3)
    history = []
    hist_rng = np.random.default_rng(4)
    for i in range(40):
        rate = float(hist_rng.uniform(-1, 1))
        history.append(TrialRecord(i, {"rate": rate}, -abs(rate - 0.8), "complete"))
    tpe_gap = np.mean(
        [abs(suggest(history, space, cfg, rng)["rate"] - 0.8) for _ in range(200)]
    )
    uni_gap = np.mean(
        [abs(_uniform_sample(space, rng)["rate"] - 0.8) for _ in range(200)]
    )
    assert tpe_gap < 0.5 * uni_gap


# ---------------------------------------------------------------------------
# Study loop


def test_study_best_and_determinism(tmp_path):
    space = _toy_space()

    def objective(p):
        return p["rate"] - abs(p["count"] - 5) * 0.1

    results = [
        run_study(objective, space, 30, TpeConfig(n_startup_trials=8, seed=11))
        for _ in range(2)
    ]
    a, b = results
    assert [t.to_json() for t in a.history] == [t.to_json() for t in b.history]
    assert a.best.objective == max(t.objective for t in a.history)
    assert a.best.objective == pytest.approx(
        max(objective(t.params) for t in a.history)
    )


def test_failed_trials_are_recorded_not_fatal():
    space = _toy_space()
    calls = []

    def objective(p):
        calls.append(p)
        if len(calls) % 3 == 0:
            raise RuntimeError("flaky")
        return p["rate"]

    res = run_study(objective, space, 9, TpeConfig(n_startup_trials=4, seed=0))
    assert len(res.history) == 9
    assert sum(t.status == "failed" for t in res.history) == 3
    assert all(t.objective is None for t in res.history if t.status == "failed")
    assert res.best.status == "complete"


def test_all_failures_raise_study_error():
    def objective(p):
        raise RuntimeError("always broken")

    with pytest.raises(StudyError):
        run_study(objective, _toy_space(), 3, TpeConfig(seed=0))


def test_log_has_header_and_is_resumable(tmp_path):
    space = _toy_space()
    log = tmp_path / "trials.jsonl"

    def objective(p):
        return p["rate"]

    first = run_study(objective, space, 4, TpeConfig(n_startup_trials=2, seed=5),
                      log_path=log)
    lines = log.read_text().splitlines()
    assert json.loads(lines[0])["type"] == "header"
    assert len(lines) == 5
    assert all("wall_time_ms" in json.loads(l) for l in lines[1:])

    resumed = load_trial_log(log)
    assert [t.to_json() for t in resumed] == [t.to_json() for t in first.history]

    second = run_study(objective, space, 3, TpeConfig(n_startup_trials=2, seed=5),
                       initial_history=resumed, log_path=log)
    assert [t.trial for t in second.history] == list(range(7))
    lines = log.read_text().splitlines()
    assert len(lines) == 8  # one header + seven trials, no duplicate header


def test_random_search_reproduces_the_uniform_stream():
    space = _toy_space()
    seen = []

    def objective(p):
        seen.append(dict(p))
        return 0.0

    random_search(objective, space, 6, seed=21)
    rng = np.random.default_rng(21)
    expect = [_uniform_sample(space, rng) for _ in range(6)]
    assert seen == expect


def test_run_study_rejects_zero_trials():
    with pytest.raises(ValueError):
        run_study(lambda p: 0.0, _toy_space(), 0, TpeConfig(seed=0))


def test_trial_record_json_roundtrip():
    rec = TrialRecord(3, {"rate": 0.25, "flag": False}, 0.75, "complete")
    assert TrialRecord.from_json(rec.to_json()) == rec
    failed = TrialRecord(4, {"rate": 0.1}, None, "failed")
    assert TrialRecord.from_json(failed.to_json()) == failed


def test_tpe_config_validation():
    with pytest.raises(ValueError):
        TpeConfig(n_startup_trials=0)
    with pytest.raises(ValueError):
        TpeConfig(gamma_fraction=1.0)
    with pytest.raises(ValueError):
        TpeConfig(n_candidates=0)
    with pytest.raises(ValueError):
        TpeConfig(kde_bandwidth_rule="silverman")


# ---------------------------------------------------------------------------
# Decoding-knob integration


def test_tune_decoding_on_a_micro_model(micro_seq2seq):
    from scribelab.embedding import RandomProjectionEmbedder
    from scribelab.tokenizer import RESERVED_TOKENS, Vocab

    vocab = Vocab(list(RESERVED_TOKENS) + [f"w{i:02d}" for i in range(15)], max_size=20)
    space = SearchSpace(
        (
            Categorical("early_stopping", (True, False)),
            IntDim("num_beams", 1, 2),
            IntDim("no_repeat_ngram_size", 0, 2),
            FloatDim("length_penalty", -1.0, 1.0),
        )
    )
    outcome = tune_decoding(
        models=[micro_seq2seq],
        examples=[([5, 6, 7], "w01 w02")],
        vocab=vocab,
        embedder=RandomProjectionEmbedder(dim=16),
        n_trials=3,
        cfg=TpeConfig(n_startup_trials=2, seed=1),
        space=space,
        max_target_len=5,
        min_target_len=1,
    )
    assert outcome.config.max_target_len == 5
    assert 1 <= outcome.config.num_beams <= 2
    assert len(outcome.study.history) == 3
    best = outcome.study.best.params
    assert outcome.config.length_penalty == pytest.approx(best["length_penalty"])


def test_tune_decoding_validates_inputs(micro_seq2seq):
    from scribelab.embedding import RandomProjectionEmbedder

    with pytest.raises(ValueError):
        tune_decoding([], [([1], "x")], None, RandomProjectionEmbedder(8), 1,
                      TpeConfig(seed=0))
    with pytest.raises(ValueError):
        tune_decoding([micro_seq2seq], [], None, RandomProjectionEmbedder(8), 1,
                      TpeConfig(seed=0))
