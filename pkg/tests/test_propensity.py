import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from counterfact_diag.data import DiagnosisRecord, RecordBase, to_existence_vector
from counterfact_diag.propensity import (MatchDistribution, MatchTable, NoCandidates,
                                         PropensityModel, bandwidth, encode_input,
                                         kernel_weights, match_distribution, sample_match)
from oracles import brute_force_weights, random_trained_model, toy_base_case


def test_encode_input_examples():
    assert encode_input(np.array([1, -1]), 1, np.array([1, 1]), 2).tolist() == [0, 1, 1, -1]
    assert encode_input(np.array([1, -1, 1]), 0, np.zeros(3), 2).tolist() == [1, 0, 0, 0, 0]
    zeros = np.zeros(3)
    assert np.array_equal(encode_input(zeros, 1, np.ones(3), 2), encode_input(zeros, 1, np.zeros(3), 2))


def test_embedding_is_compact_and_deterministic(small_model, small_base):
    n, m = small_model.n, small_model.m
    assert small_model.embedding_dim < n + m
    y, d = small_base.y[0], int(small_base.disease[0])
    assert np.array_equal(small_model.embed(y, d), small_model.embed(y, d))
    wide = PropensityModel.init(3, 2, np.random.default_rng(0))
    assert wide.embedding_dim < 5


def test_identical_records_embed_identically(small_model, small_base):
    y, d = small_base.y[4], int(small_base.disease[4])
    a = small_model.embed(y.copy(), d)
    b = small_model.embed(y.copy(), d)
    assert np.array_equal(a, b)


def test_untrained_model_refuses(rng):
    model = PropensityModel.init(4, 2, rng)
    with pytest.raises(RuntimeError):
        model.embed(np.zeros(4), 0)


def test_training_reduces_reconstruction_loss(small_data, small_base):
    from counterfact_diag.propensity import PropensityHyper, train_propensity
    _, _, vocabs = small_data
    untrained = PropensityModel.init(vocabs.n, vocabs.m, np.random.default_rng(1), hidden=16)
    hyper = PropensityHyper(iterations=400, batch_size=32, lr_decay_every=200, hidden=16, seed=1)
    trained = train_propensity(small_base, vocabs.n, vocabs.m, hyper)
    rng = np.random.default_rng(0)
    assert trained.reconstruction_loss(small_base, rng) < untrained.reconstruction_loss(small_base, rng)


def test_kernel_arithmetic():
    sigma2 = 2.0
    assert np.allclose(kernel_weights([0.0, math.log(3) * sigma2], sigma2), [0.75, 0.25])
    assert np.allclose(kernel_weights([1.3, 1.3, 1.3], 0.5), [1 / 3] * 3)
    assert bandwidth([0.0, 0.0]) == 1e-6


def test_sample_match_cases(rng):
    assert sample_match(MatchDistribution(np.array([7]), np.array([1.0])), rng) == 7
    assert {sample_match(MatchDistribution(np.array([3, 4]), np.array([1.0, 0.0])), rng)
            for _ in range(200)} == {3}
    dist = MatchDistribution(np.array([0, 1]), np.array([0.75, 0.25]))
    draws = np.array([sample_match(dist, rng) for _ in range(100_000)])
    assert abs(np.mean(draws == 0) - 0.75) < 0.01
    with pytest.raises(NoCandidates):
        sample_match(MatchDistribution(np.array([], dtype=int), np.array([])), rng)


def test_match_distribution_errors(rng):
    records = [DiagnosisRecord(0, {0: True}, {}), DiagnosisRecord(1, {1: True}, {})]
    base = RecordBase(records, 3, 2)
    model = random_trained_model(rng, 3, 2)
    with pytest.raises(ValueError):
        match_distribution(records[0], 0, base, model)
    with pytest.raises(NoCandidates):
        match_distribution(records[0], 1, base, model)


def test_brute_force_equivalence(rng):
    checked = 0
    while checked < 30:
        records, base, model, anchor, unobserved, n, m = toy_base_case(rng)
        for a in unobserved:
            cands, weights = brute_force_weights(anchor, a, records, model, n, m)
            if not cands:
                with pytest.raises(NoCandidates):
                    match_distribution(anchor, a, base, model)
                continue
            dist = match_distribution(anchor, a, base, model)
            assert dist.candidates.tolist() == cands
            assert np.max(np.abs(dist.weights - weights)) < 1e-12
            checked += 1


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_match_table_agrees_with_direct_query(seed):
    rng = np.random.default_rng(seed)
    records, base, model, anchor, unobserved, n, m = toy_base_case(rng)
    table = MatchTable(anchor, base, model)
    for a in unobserved:
        try:
            direct = match_distribution(anchor, a, base, model)
        except NoCandidates:
            assert not table.has_candidates[a]
            continue
        got = table.distribution(a)
        assert np.array_equal(got.candidates, direct.candidates)
        assert np.allclose(got.weights, direct.weights, atol=1e-12)
        assert abs(got.weights.sum() - 1) < 1e-9
        q = table.sample(a, rng)
        assert base.disease[q] == anchor.disease and base.y[q, a] != 0


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 50), min_size=2, max_size=8), st.integers(0, 7), st.floats(0.01, 1))
def test_kernel_monotone_in_distance(dists, i, shrink):
    i %= len(dists)
    dists = np.array(dists)
    sigma2 = bandwidth(dists)
    before = kernel_weights(dists, sigma2)[i]
    closer = dists.copy()
    closer[i] *= shrink
    after = kernel_weights(closer, sigma2)[i]
    assert after >= before - 1e-12


def test_anchor_excluded_for_counterfactual(small_data, small_base, small_model):
    train, test, _ = small_data
    anchor = train[0]
    y = to_existence_vector(anchor, small_base.n)
    a = int(np.flatnonzero(y == 0)[0])
    dist = match_distribution(anchor, a, small_base, small_model)
    assert 0 not in dist.candidates.tolist()


def test_save_and_load(tmp_path, small_model):
    small_model.save(tmp_path / "prop", data_hash="abc")
    back = PropensityModel.load(tmp_path / "prop")
    y = np.zeros(small_model.n)
    assert np.array_equal(back.embed(y, 0), small_model.embed(y, 0))
    assert (tmp_path / "prop.json").read_text().count("abc") == 1
