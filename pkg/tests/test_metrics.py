import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ranktune.errors import IncompleteProbeError, ValidationError
from ranktune.evbmf import FactorizationResult
from ranktune.metrics import (
    RankHistory,
    RankProbe,
    global_stable_rank,
    stabilize,
    stable_rank,
    write_probe_csv,
    zero_rank_fraction,
)

# High-precision closed-form values (50-digit arithmetic), frozen.
STABILIZE_ORACLE = [
    0.95979588635203928369,
    0.88221185973691834702,
    0.42385848827128474089,
    0.038583079544772534675,
    0.00096916313994368956793,
]


def fact(shrunk, rows=8, cols=16, noise=0.01):
    shrunk = np.asarray(shrunk, dtype=np.float64)
    return FactorizationResult(
        rank=len(shrunk),
        shrunk_singular_values=shrunk,
        raw_singular_values=shrunk * 1.1,
        noise_variance=noise,
        rows=rows,
        cols=cols,
    )


def test_stable_rank_zero_for_empty_lowrank():
    assert stable_rank(fact([]), channel_dim=8) == 0.0


def test_stable_rank_arithmetic():
    assert stable_rank(fact([2.0, 1.0, 1.0]), channel_dim=3) == pytest.approx(2 / 3)


def test_stable_rank_full_flat_spectrum_is_one():
    assert stable_rank(fact([1.5] * 6), channel_dim=6) == pytest.approx(1.0)


def test_stable_rank_impossible_geometry():
    with pytest.raises(ValidationError):
        stable_rank(fact([1.0, 0.5]), channel_dim=1)


def make_probe(g_by_cell, layers=2, epochs=1):
    probe = RankProbe(config_id="p", layer_names=[f"conv{i}" for i in range(layers)], epoch_count=epochs)
    for (layer, mode, epoch), g in g_by_cell.items():
        probe.record(layer, mode, epoch, g)
    return probe


def test_zero_rank_fraction_counts_zeros():
    probe = make_probe({
        (0, 3, 1): 0.0, (0, 4, 1): 0.5,
        (1, 3, 1): 0.0, (1, 4, 1): 0.0,
    })
    assert zero_rank_fraction(probe, 1) == pytest.approx(3 / 4)


def test_zero_rank_fraction_boundaries():
    all_pos = make_probe({(l, m, 1): 0.3 for l in range(2) for m in (3, 4)})
    assert zero_rank_fraction(all_pos, 1) == 0.0
    all_zero = make_probe({(l, m, 1): 0.0 for l in range(2) for m in (3, 4)})
    assert zero_rank_fraction(all_zero, 1) == 1.0


def test_zero_rank_fraction_incomplete_probe():
    probe = make_probe({(0, 3, 1): 0.0})
    with pytest.raises(IncompleteProbeError):
        zero_rank_fraction(probe, 1)


def test_global_stable_rank_is_epoch_mean():
    per_epoch = [0.8, 0.6, 0.5, 0.5, 0.5]
    probe = RankProbe(config_id="p", layer_names=["a", "b", "c", "d", "e"], epoch_count=5)
    for epoch, zt in enumerate(per_epoch, start=1):
        zeros = round(zt * 10)
        cells = [(l, m) for l in range(5) for m in (3, 4)]
        for i, (l, m) in enumerate(cells):
            probe.record(l, m, epoch, 0.0 if i < zeros else 0.7)
    assert global_stable_rank(probe) == pytest.approx(0.58)


def test_stabilize_matches_high_precision_oracle():
    result = stabilize([0.95, 0.9, 0.4, 0.05, 0.01])
    np.testing.assert_allclose(result, STABILIZE_ORACLE, rtol=1e-12)


def test_stabilize_single_element():
    assert stabilize([0.37]) == [pytest.approx(0.37**0.8)]


def test_stabilize_zero_is_absorbing():
    result = stabilize([0.9, 0.0, 0.8, 0.5])
    assert result[0] > 0
    assert result[1:] == [0.0, 0.0, 0.0]


def test_stabilize_rejects_out_of_range():
    with pytest.raises(ValidationError):
        stabilize([1.5])
    with pytest.raises(ValidationError):
        stabilize([-0.1])


@given(st.lists(st.floats(min_value=0.0, max_value=1.0), min_size=1, max_size=30))
@settings(max_examples=200, deadline=None)
def test_stabilize_properties(values):
    c = stabilize(values)
    assert all(0.0 <= x <= 1.0 for x in c)
    # non-increasing
    assert all(a >= b - 1e-15 for a, b in zip(c, c[1:]))
    # recurrence c_j = c_{j-1} * v_j**0.8
    for j in range(1, len(values)):
        assert c[j] == pytest.approx(c[j - 1] * values[j] ** 0.8, rel=1e-12, abs=1e-300)


@given(
    st.integers(min_value=1, max_value=4),
    st.integers(min_value=1, max_value=5),
    st.integers(0, 2**31 - 1),
)
@settings(max_examples=60, deadline=None)
def test_global_is_mean_of_per_epoch(layers, epochs, seed):
    rng = np.random.default_rng(seed)
    probe = RankProbe(config_id="p", layer_names=[str(i) for i in range(layers)], epoch_count=epochs)
    for epoch in range(1, epochs + 1):
        for layer in range(layers):
            for mode in (3, 4):
                g = 0.0 if rng.random() < 0.4 else float(rng.uniform(0.01, 1.0))
                probe.record(layer, mode, epoch, g)
    per_epoch = [zero_rank_fraction(probe, t) for t in range(1, epochs + 1)]
    assert global_stable_rank(probe) == pytest.approx(float(np.mean(per_epoch)), rel=1e-12)


def test_rank_history_recurrence():
    history = RankHistory()
    for v in [0.95, 0.9, 0.4, 0.05]:
        history.append(v)
    np.testing.assert_allclose(history.stabilized, STABILIZE_ORACLE[:4], rtol=1e-12)
    assert history.last_change() == pytest.approx(STABILIZE_ORACLE[2] - STABILIZE_ORACLE[3], rel=1e-9)


def test_probe_csv_export(tmp_path):
    probe = make_probe(
        {(l, m, e): (0.0 if (l + m + e) % 2 else 0.5) for l in range(2) for m in (3, 4) for e in (1, 2)},
        epochs=2,
    )
    path = tmp_path / "probe.csv"
    write_probe_csv(path, [probe])
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "config_id,layer,mode,epoch,G,Z_t,Z"
    assert len(lines) == 1 + 2 * 2 * 2
