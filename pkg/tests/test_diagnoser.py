import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deslab import nn
from deslab.acquisition import record
from deslab.dataset import TimedIOVector, vectorize
from deslab.diagnoser import DiagnoserState, Verdict, VerdictKind, latency, push, replay
from deslab.errors import ModelError


def model_with_bias(bias, n=3, width=2, seed=0):
    model = nn.init(nn.ModelConfig(input_dim=width + 1, hidden=3, window=n), seed)
    model.params["dense.W"][...] = 0
    model.params["dense.b"][...] = bias
    return model


def vec(t, *bits):
    return TimedIOVector(t, tuple(bool(b) for b in bits))


def test_warmup_until_buffer_full():
    state = DiagnoserState(model_with_bias(np.zeros(8)), tau=0.5)
    assert state.push(vec(0, 0, 1)) == Verdict(VerdictKind.WARMUP)
    assert state.push(vec(10, 1, 1)).kind is VerdictKind.WARMUP
    v = state.push(vec(10, 1, 0))
    assert v.kind is VerdictKind.UNCERTAIN
    assert v.top_confidence == pytest.approx(0.125)


def test_normal_and_fault_verdicts():
    bias = np.zeros(8)
    bias[0] = 10
    state = DiagnoserState(model_with_bias(bias), tau=0.5)
    for _ in range(3):
        v = state.push(vec(5, 0, 0))
    assert v.kind is VerdictKind.NORMAL and v.cls == 0
    bias = np.zeros(8)
    bias[4] = 10
    state = DiagnoserState(model_with_bias(bias), tau=0.5)
    for _ in range(3):
        v = state.push(vec(5, 0, 0))
    assert v.kind is VerdictKind.FAULT and v.cls == 4
    assert len(v.distribution) == 8
    assert v.line(1200) == f"1200,fault,4,{v.top_confidence:.6f}"


def test_width_mismatch_rejected():
    state = DiagnoserState(model_with_bias(np.zeros(8)))
    with pytest.raises(ModelError):
        state.push(vec(0, 1, 0, 1))
    with pytest.raises(ModelError):
        DiagnoserState(model_with_bias(np.zeros(8)), tau=0)


vectors = st.lists(st.tuples(st.integers(0, 5000), st.booleans(), st.booleans()), min_size=1, max_size=25)


@settings(max_examples=60, deadline=None)
@given(vectors, st.floats(0.05, 1.0), st.integers(0, 1000))
def test_buffer_bound_and_threshold_consistency(raw, tau, seed):
    model = nn.init(nn.ModelConfig(input_dim=3, hidden=3, window=4), seed)
    state = DiagnoserState(model, tau)
    for k, (t, a, b) in enumerate(raw, 1):
        v = state.push(vec(t, a, b))
        assert len(state.buffer) == min(k, 4)
        if k < 4:
            assert v.kind is VerdictKind.WARMUP and v.distribution == ()
        elif v.kind is VerdictKind.UNCERTAIN:
            assert v.top_confidence < tau
        else:
            assert v.top_confidence >= tau
            assert (v.kind is VerdictKind.NORMAL) == (v.cls == 0)


def toy_log(count=12):
    stream = [(i * 100 + (i % 3) * 7, (i % 2, (i // 2) % 2)) for i in range(count)]
    return record(stream, ("a", "b"))


def test_replay_equals_push_fold():
    model = nn.init(nn.ModelConfig(input_dim=3, hidden=4, window=5), 3)
    log = toy_log()
    out = replay(log, model, tau=0.3)
    state = DiagnoserState(model, 0.3)
    times = np.cumsum([v.t_rel for v in vectorize(log)])
    for (t, verdict), v, want_t in zip(out, vectorize(log), times):
        state, again = push(state, v)
        assert verdict == again
        assert t == want_t
    assert replay(log, model, tau=0.3) == out


def test_short_log_is_all_warmup():
    model = nn.init(nn.ModelConfig(input_dim=3, hidden=2, window=50), 0)
    assert {v.kind for _, v in replay(toy_log(10), model)} == {VerdictKind.WARMUP}


def test_latency():
    fault = Verdict(VerdictKind.FAULT, 3, (), 0.9)
    normal = Verdict(VerdictKind.NORMAL, 0, (), 0.9)
    verdicts = [(100, fault), (200, normal), (350, Verdict(VerdictKind.FAULT, 2, (), 0.9)), (400, fault)]
    assert latency(verdicts, 150, 3) == 250
    assert latency(verdicts, 50, 3) == 50
    assert latency(verdicts, 150, 6) is None


def test_majority_vote_smoothing():
    model = model_with_bias(np.zeros(8))
    state = DiagnoserState(model, tau=0.1, vote=3)
    for _ in range(5):
        v = state.push(vec(1, 0, 0))
    assert v.cls == 0  # uniform output: argmax ties go to class 0
