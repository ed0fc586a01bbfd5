import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from app.core.exceptions import ShapeError
from app.models.activation import ActivationBatch
from app.models.network import Message, NetworkShape, Probe
from app.models.retrieval import Accelerations, FillPolicy, RetrievalConfig, RetrievalRule
from app.services.encoding import (
    encode_erasures,
    encode_message,
    encode_probes,
    extract_messages,
    parse_probe,
)
from app.services.engine import retrieve, run_rule
from app.services.retrieval import (
    bail_out_neuron,
    convergence_check,
    direct_sum_of_max_step,
    joint_candidate_pool,
    run_sum_of_max,
    sum_of_max_scores,
    sum_of_max_step,
    sum_of_sum_scores,
    sum_of_sum_step,
)
from app.services.storage import WeightMatrix
from tests.strategies import erased_probes, networks, random_network, states


def bits_of(text: str) -> np.ndarray:
    return np.array([c == "1" for c in text.replace(" ", "")], dtype=bool)


def one_probe(shape: NetworkShape, text: str, fill: FillPolicy) -> ActivationBatch:
    return encode_probes(shape, [parse_probe(text)], fill)


# ==================== SUM-OF-SUM ====================

def test_sum_of_sum_oscillation_trajectory(reference_network: WeightMatrix) -> None:
    shape = reference_network.shape
    config = RetrievalConfig(rule=RetrievalRule.SUM_OF_SUM, gamma=1, trace=True)
    outcome = retrieve(reference_network, [parse_probe("?,?,1")], config)

    scores = [step.scores[:, 0].tolist() for step in outcome.trace]
    assert scores == [
        [1, 1, 1, 1, 1, 1, 1, 0, 0],
        [4, 3, 3, 3, 4, 3, 7, 0, 0],
        [2, 2, 2, 2, 2, 2, 3, 0, 0],
    ]
    v1 = bits_of("111 111 100")
    v2 = bits_of("100 010 100")
    assert np.array_equal(outcome.trace[0].state.bits[:, 0], v1)
    assert np.array_equal(outcome.trace[1].state.bits[:, 0], v2)
    assert np.array_equal(outcome.trace[2].state.bits[:, 0], v1)
    assert outcome.oscillating == [True]
    assert outcome.statuses == ["MaxItersExceeded"]
    assert outcome.iterations == [3]
    assert extract_messages(shape, outcome.final.column(0)).kind == "ambiguous"


def test_sum_of_sum_stronger_gamma_converges(reference_network: WeightMatrix) -> None:
    config = RetrievalConfig(rule=RetrievalRule.SUM_OF_SUM, gamma=2)
    outcome = retrieve(reference_network, [parse_probe("?,?,1")], config)
    assert outcome.statuses == ["Converged"]
    assert outcome.oscillating == [False]
    assert outcome.iterations == [2]
    assert np.array_equal(outcome.final.bits[:, 0], bits_of("100 010 100"))


def test_sum_of_sum_single_clique_one_erasure() -> None:
    W, corpus = random_network(clusters=5, cluster_size=7, stored=1, seed=2)
    message = Message(symbols=tuple(int(s) for s in corpus[0]))
    probe = Probe(slots=(None,) + message.symbols[1:])
    outcome = retrieve(W, [probe], RetrievalConfig(rule=RetrievalRule.SUM_OF_SUM, gamma=1))
    assert outcome.statuses == ["Converged"]
    assert outcome.iterations[0] <= 2
    assert extract_messages(W.shape, outcome.final.column(0)).message == message


def test_sum_of_sum_zero_scores_activate_whole_cluster(reference_shape: NetworkShape) -> None:
    W = WeightMatrix.empty(reference_shape)
    batch = one_probe(reference_shape, "1,?,?", FillPolicy.ERASED_OFF)
    assert np.array_equal(sum_of_sum_step(W, batch, 1).bits[:, 0], bits_of("100 111 111"))


def test_sum_of_sum_respects_iteration_cap(reference_network: WeightMatrix) -> None:
    config = RetrievalConfig(rule=RetrievalRule.SUM_OF_SUM, gamma=1, max_iters=2, detect_oscillation=False)
    outcome = retrieve(reference_network, [parse_probe("?,?,1")], config)
    assert outcome.statuses == ["MaxItersExceeded"]
    assert outcome.iterations == [2]


def test_sum_of_sum_scores_include_reinforcement(reference_network: WeightMatrix) -> None:
    v = bits_of("111 111 100")[:, None]
    assert sum_of_sum_scores(reference_network, v, 2)[:, 0].tolist() == [5, 4, 4, 4, 5, 4, 8, 0, 0]


# ==================== SUM-OF-MAX ====================

def test_sum_of_max_returns_ensemble(reference_network: WeightMatrix) -> None:
    outcome = retrieve(reference_network, [parse_probe("?,?,1")], RetrievalConfig(rule=RetrievalRule.SUM_OF_MAX))
    extraction = extract_messages(reference_network.shape, outcome.final.column(0))
    assert outcome.statuses == ["Converged"]
    assert outcome.iterations == [0]
    assert extraction.kind == "ambiguous"
    for message in [(1, 1, 1), (2, 2, 1), (3, 2, 1), (1, 3, 1)]:
        assert extraction.contains(Message(symbols=message))


def test_sum_of_max_prunes_to_consistent_cliques(reference_network: WeightMatrix) -> None:
    outcome = retrieve(reference_network, [parse_probe("1,?,1"), parse_probe("2,?,?")], RetrievalConfig())
    assert np.array_equal(outcome.final.bits[:, 0], bits_of("100 101 100"))
    assert np.array_equal(outcome.final.bits[:, 1], bits_of("010 010 100"))
    assert outcome.iterations == [1, 1]
    assert outcome.all_converged


def test_corrupted_probe_collapses_to_empty(reference_network: WeightMatrix) -> None:
    outcome = retrieve(reference_network, [parse_probe("1,2,1")], RetrievalConfig())
    assert not outcome.final.bits.any()
    assert outcome.statuses == ["Converged"]
    assert outcome.iterations == [2]
    assert extract_messages(reference_network.shape, outcome.final.column(0)).kind == "empty"


def test_sum_of_max_step_checks_shapes(reference_network: WeightMatrix) -> None:
    other = NetworkShape(clusters=2, cluster_size=3)
    with pytest.raises(ShapeError):
        sum_of_max_step(reference_network.sparse_view(), ActivationBatch(other, np.zeros((6, 1), dtype=bool)))


def test_sum_of_max_rejects_nonpositive_gamma() -> None:
    with pytest.raises(ValueError):
        RetrievalConfig(rule=RetrievalRule.SUM_OF_MAX, gamma=0)
    with pytest.raises(ValueError):
        RetrievalConfig(rule=RetrievalRule.JOINT, gamma=0)


@given(networks(), st.data())
def test_stored_clique_is_a_fixed_point(instance, data) -> None:
    W, corpus = instance
    k = data.draw(st.integers(0, len(corpus) - 1))
    v = encode_message(W.shape, Message(symbols=tuple(int(s) for s in corpus[k])))
    batch = ActivationBatch(W.shape, v.bits[:, None])
    assert sum_of_max_step(W.sparse_view(), batch) == batch


@given(networks(), st.data())
def test_bail_out_equals_direct_evaluation(instance, data) -> None:
    W, _ = instance
    V = ActivationBatch(W.shape, data.draw(states(W.shape)))
    expected = sum_of_max_step(W.sparse_view(), V)
    for gamma in (1, 2, 7):
        assert direct_sum_of_max_step(W, V, gamma) == expected
        assert direct_sum_of_max_step(W.sparse_view(), V, gamma) == expected


@given(networks(), st.data())
def test_bail_out_neuron_matches_batched_step(instance, data) -> None:
    W, _ = instance
    view = W.sparse_view()
    bits = data.draw(states(W.shape, count=1))
    nxt = sum_of_max_step(view, ActivationBatch(W.shape, bits)).bits[:, 0]
    for i in range(1, W.shape.total + 1):
        assert bail_out_neuron(view, bits[:, 0], i) == nxt[i - 1]


@given(networks(), st.data())
def test_deactivated_neurons_stay_off(instance, data) -> None:
    W, _ = instance
    V = ActivationBatch(W.shape, data.draw(states(W.shape)))
    nxt = sum_of_max_step(W.sparse_view(), V)
    assert not (nxt.bits & ~V.bits).any()


@given(networks(), st.data())
def test_ensemble_contains_every_consistent_message(instance, data) -> None:
    W, corpus = instance
    symbols, erased = data.draw(erased_probes(corpus, W.shape.clusters))
    batch = encode_erasures(W.shape, symbols, erased, FillPolicy.ERASED_ON)
    outcome = run_sum_of_max(W.sparse_view(), batch, RetrievalConfig())
    assert outcome.all_converged
    for k in range(len(symbols)):
        final = extract_messages(W.shape, outcome.final.column(k))
        known = ~erased[k]
        for row in corpus:
            if np.array_equal(row[known], symbols[k][known]):
                assert final.contains(Message(symbols=tuple(int(s) for s in row)))


@given(networks(), st.data())
def test_sole_survivor_persists(instance, data) -> None:
    W, corpus = instance
    symbols, erased = data.draw(erased_probes(corpus, W.shape.clusters, count=2))
    view = W.sparse_view()
    V = encode_erasures(W.shape, symbols, erased, FillPolicy.ERASED_ON)
    while True:
        nxt = sum_of_max_step(view, V)
        before = V.blocks().sum(axis=1) == 1
        sole = V.blocks() & before[:, None, :]
        assert not (sole & ~nxt.blocks()).any()
        if nxt == V:
            break
        V = nxt


@given(networks(), st.data())
def test_sum_of_max_terminates_within_active_count(instance, data) -> None:
    W, _ = instance
    bits = data.draw(states(W.shape))
    outcome = run_sum_of_max(W, ActivationBatch(W.shape, bits), RetrievalConfig())
    assert outcome.all_converged
    assert not any(outcome.oscillating)
    for k, iterations in enumerate(outcome.iterations):
        assert iterations <= bits[:, k].sum()


def test_sum_of_max_recovers_most_probes() -> None:
    W, corpus = random_network(clusters=8, cluster_size=32, stored=150, seed=21)
    rng = np.random.default_rng(4)
    symbols = corpus[rng.choice(len(corpus), size=200)]
    erased = np.zeros(symbols.shape, dtype=bool)
    erased[:, :3] = True
    batch = encode_erasures(W.shape, symbols, erased, FillPolicy.ERASED_ON)
    outcome = run_rule(W, batch, RetrievalConfig(rule=RetrievalRule.SUM_OF_MAX, gamma=1))
    truth = encode_erasures(W.shape, symbols, np.zeros_like(erased), FillPolicy.ERASED_OFF)
    rate = np.mean(np.all(outcome.final.bits == truth.bits, axis=0))
    assert rate >= 0.9


def test_gamma_does_not_change_sum_of_max(small_network) -> None:
    W, corpus = small_network
    erased = np.zeros(corpus.shape, dtype=bool)
    erased[:, 1] = True
    batch = encode_erasures(W.shape, corpus, erased, FillPolicy.ERASED_ON)
    outcomes = [run_rule(W, batch, RetrievalConfig(gamma=g)) for g in (1, 2, 7)]
    for other in outcomes[1:]:
        assert other.final == outcomes[0].final
        assert other.iterations == outcomes[0].iterations


def test_acceleration_switches_agree_on_erasures() -> None:
    W, corpus = random_network(clusters=6, cluster_size=10, stored=40, seed=9)
    rng = np.random.default_rng(1)
    erased = rng.random(corpus.shape) < 0.5
    batch = encode_erasures(W.shape, corpus, erased, FillPolicy.ERASED_ON)
    reference = run_rule(W, batch, RetrievalConfig())
    for sparse, skip_dead, freeze_sole, bail_out in itertools.product([True, False], repeat=4):
        acc = Accelerations(sparse=sparse, skip_dead=skip_dead, freeze_sole=freeze_sole, bail_out=bail_out)
        outcome = run_rule(W, batch, RetrievalConfig(accelerations=acc))
        assert outcome.final == reference.final, acc


def test_batch_serial_and_worker_counts_agree() -> None:
    W, corpus = random_network(clusters=5, cluster_size=12, stored=60, seed=13)
    rng = np.random.default_rng(2)
    erased = rng.random(corpus.shape) < 0.4
    for rule in RetrievalRule:
        fill = RetrievalConfig(rule=rule).fill
        batch = encode_erasures(W.shape, corpus, erased, fill)
        reference = run_rule(W, batch, RetrievalConfig(rule=rule, gamma=2))
        variants = [
            RetrievalConfig(rule=rule, gamma=2, mode="serial"),
            RetrievalConfig(rule=rule, gamma=2, batch_size=7, workers=3),
            RetrievalConfig(rule=rule, gamma=2, batch_size=16, workers=2),
        ]
        for config in variants:
            outcome = run_rule(W, batch, config)
            assert outcome.final == reference.final
            assert outcome.statuses == reference.statuses
            assert outcome.iterations == reference.iterations
            assert outcome.oscillating == reference.oscillating
            assert [p.settled for p in outcome.profile] == [p.settled for p in reference.profile]



def test_iteration_profile_counts_settled_probes() -> None:
    W, corpus = random_network(clusters=6, cluster_size=10, stored=60, seed=14)
    erased = np.zeros(corpus.shape, dtype=bool)
    erased[:, :3] = True
    batch = encode_erasures(W.shape, corpus, erased, FillPolicy.ERASED_ON)
    outcome = run_rule(W, batch, RetrievalConfig())
    settled = [p.settled for p in outcome.profile]
    assert [p.iteration for p in outcome.profile] == list(range(1, len(settled) + 1))
    assert settled == sorted(settled)
    assert settled[-1] == batch.num_probes
    # A converged column runs one extra, unchanged update
    assert len(settled) == max(outcome.iterations) + 1
    for t, count in enumerate(settled, start=1):
        assert count == sum(it + 1 <= t for it in outcome.iterations)
    assert all(p.wall_ms >= 0.0 for p in outcome.profile)


def test_convergent_rules_ignore_iteration_cap() -> None:
    W, corpus = random_network(clusters=6, cluster_size=10, stored=60, seed=14)
    erased = np.zeros(corpus.shape, dtype=bool)
    erased[:, 2:5] = True
    for rule in (RetrievalRule.SUM_OF_MAX, RetrievalRule.JOINT):
        batch = encode_erasures(W.shape, corpus, erased, RetrievalConfig(rule=rule).fill)
        capped = run_rule(W, batch, RetrievalConfig(rule=rule, max_iters=1))
        uncapped = run_rule(W, batch, RetrievalConfig(rule=rule, max_iters=100))
        assert capped.all_converged
        assert capped.final == uncapped.final
        assert capped.iterations == uncapped.iterations


# ==================== JOINT ====================

def test_joint_candidate_pool_single_clique() -> None:
    W, corpus = random_network(clusters=4, cluster_size=6, stored=1, seed=3)
    message = Message(symbols=tuple(int(s) for s in corpus[0]))
    probe = Probe(slots=(message.symbols[0], None, None, None))
    batch = encode_probes(W.shape, [probe], FillPolicy.ERASED_OFF)
    pool = joint_candidate_pool(W, batch.bits)
    expected = encode_message(W.shape, message).bits.astype(bool)
    expected[:W.shape.cluster_size] = False
    assert np.array_equal(pool[:, 0], expected)

    outcome = retrieve(W, [probe], RetrievalConfig(rule=RetrievalRule.JOINT))
    assert extract_messages(W.shape, outcome.final.column(0)).message == message
    assert outcome.statuses == ["Converged"]


def test_joint_on_reference_network(reference_network: WeightMatrix) -> None:
    config = RetrievalConfig(rule=RetrievalRule.JOINT)
    outcome = retrieve(reference_network, [parse_probe("1,?,1"), parse_probe("2,?,?")], config)
    assert np.array_equal(outcome.final.bits[:, 0], bits_of("100 101 100"))
    assert np.array_equal(outcome.final.bits[:, 1], bits_of("010 010 100"))
    assert outcome.iterations == [0, 0]


@given(networks(), st.data())
def test_joint_and_sum_of_max_recover_the_same_probes(instance, data) -> None:
    W, corpus = instance
    symbols, erased = data.draw(erased_probes(corpus, W.shape.clusters))
    truth = encode_erasures(W.shape, symbols, np.zeros_like(erased), FillPolicy.ERASED_OFF).bits
    results = []
    for rule in (RetrievalRule.SUM_OF_MAX, RetrievalRule.JOINT):
        batch = encode_erasures(W.shape, symbols, erased, RetrievalConfig(rule=rule).fill)
        outcome = run_rule(W, batch, RetrievalConfig(rule=rule))
        assert outcome.all_converged
        results.append(np.all(outcome.final.bits == truth, axis=0))
    assert np.array_equal(results[0], results[1])


# ==================== CONVERGENCE CHECK ====================

def test_convergence_check_scopes() -> None:
    shape = NetworkShape(clusters=3, cluster_size=2)
    a = ActivationBatch(shape, np.zeros((6, 2), dtype=bool))
    bits = np.zeros((6, 2), dtype=bool)
    bits[0, 1] = True  # cluster 1 of probe 2
    b = ActivationBatch(shape, bits)
    erased = np.array([[False, False], [True, True], [False, False]])
    assert convergence_check(a, a)
    assert not convergence_check(a, b)
    assert convergence_check(a, b, scope="erased-only", erased=erased)
    erased[0, 1] = True
    assert not convergence_check(a, b, scope="erased-only", erased=erased)
    with pytest.raises(ValueError):
        convergence_check(a, b, scope="erased-only")


def test_convergence_check_large_batch() -> None:
    shape = NetworkShape(clusters=8, cluster_size=128)
    rng = np.random.default_rng(0)
    bits = rng.random((shape.total, 64)) < 0.1
    flipped = bits.copy()
    flipped[777, 63] ^= True
    assert convergence_check(ActivationBatch(shape, bits), ActivationBatch(shape, bits.copy()))
    assert not convergence_check(ActivationBatch(shape, bits), ActivationBatch(shape, flipped))


def test_sum_of_max_scores_count_signalling_clusters(reference_network: WeightMatrix) -> None:
    v = bits_of("100 101 100")[:, None]
    assert sum_of_max_scores(reference_network, v, 1)[:, 0].tolist() == [3, 1, 1, 3, 1, 3, 3, 0, 0]
