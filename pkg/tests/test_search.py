import math

import numpy as np
import pytest
from scipy.stats import kstest

from ranktune.errors import ValidationError
from ranktune.probes import EvalOutcome
from ranktune.search import (
    EXPONENT_BOUND,
    HpConfig,
    HpSpace,
    SearchOptions,
    SearchRun,
    autohyper,
    random_search,
    sweep,
    trust_region,
    write_sweep_csv,
)

LR_SPACE = HpSpace(names=("lr",), anchors=(1e-3,), alphas=(1.5,))


def make_oracle(fn):
    """Adapt a values->float surface into an evaluator with call counting."""
    calls = []

    def evaluator(values, config_id=""):
        calls.append(values)
        z = fn(values)
        return EvalOutcome(response=z, per_epoch=[z] * 5)

    evaluator.calls = calls
    return evaluator


def sigmoid_lr(mid):
    return lambda values: 1.0 / (1.0 + math.exp(4.0 * (math.log10(values["lr"]) - mid)))


def swept_inception(space, surface, lo=-60, hi=60, eps=0.01, threshold=0.9):
    """First lattice point, scanning upward from the high-response side,
    whose forward step change falls below eps."""
    zs = {k: surface(space.config((k,)).values) for k in range(lo, hi + 1)}
    armed = False
    for k in range(lo, hi):
        if zs[k] >= threshold:
            armed = True
        if armed and zs[k] < threshold and abs(zs[k] - zs[k + 1]) < eps:
            return k
    raise AssertionError("no plateau inception found in sweep range")


# ------------------------------------------------------------- lattice types


def test_config_values_derived_from_exponents():
    config = LR_SPACE.config((2,))
    assert config.values["lr"] == pytest.approx(1e-3 * 1.5**2)


def test_exponent_bound_enforced():
    with pytest.raises(ValidationError):
        LR_SPACE.config((EXPONENT_BOUND + 1,))


def test_configs_equal_iff_exponents_equal():
    assert LR_SPACE.config((3,)) == LR_SPACE.config((3,))
    assert LR_SPACE.config((3,)) != LR_SPACE.config((4,))
    assert hash(LR_SPACE.config((3,))) == hash(LR_SPACE.config((3,)))


def test_space_validation():
    with pytest.raises(ValidationError):
        HpSpace(names=("lr",), anchors=(-1.0,), alphas=(1.5,))
    with pytest.raises(ValidationError):
        HpSpace(names=("lr",), anchors=(1e-3,), alphas=(1.0,))


# ------------------------------------------------------------- trust regions


def test_trust_region_1d_values():
    region = trust_region(LR_SPACE.origin())
    values = [m.values["lr"] for m in region.members]
    assert values == pytest.approx([1e-3 / 1.5, 1e-3, 1.5e-3])
    assert not region.truncated


def test_trust_region_2d_has_nine_members():
    space = HpSpace(names=("lr", "weight_decay"), anchors=(1e-3, 1e-5), alphas=(1.5, 1.5))
    region = trust_region(space.origin())
    assert len(region) == 9
    assert region.deltas[0] == (-1, -1)
    assert region.deltas[-1] == (1, 1)
    assert space.origin() in region.members


def test_trust_region_clamps_at_bound():
    space = HpSpace(names=("lr", "weight_decay"), anchors=(1e-3, 1e-5), alphas=(1.5, 1.5))
    region = trust_region(space.config((EXPONENT_BOUND, 0)))
    assert len(region) == 6
    assert region.truncated
    region_1d = trust_region(LR_SPACE.config((EXPONENT_BOUND,)))
    assert len(region_1d) == 2


# ------------------------------------------------------------- caching


def test_cache_serves_repeat_evaluations():
    evaluator = make_oracle(lambda v: 0.5)
    run = SearchRun(space=LR_SPACE, options=SearchOptions())
    region = trust_region(LR_SPACE.origin())
    outcomes, fresh = run.evaluate_region(region, evaluator)
    assert fresh == 3
    assert all(o.response == 0.5 for o in outcomes.values())
    assert run.epoch_budget == 15
    _, fresh_again = run.evaluate_region(region, evaluator)
    assert fresh_again == 0
    assert len(evaluator.calls) == 3
    assert run.epoch_budget == 15


# ------------------------------------------------------------- autohyper


def test_autohyper_converges_near_swept_inception():
    surface = sigmoid_lr(-3.5)
    evaluator = make_oracle(surface)
    run = autohyper(LR_SPACE.origin(), evaluator, SearchOptions())
    assert run.verdict == "converged"
    inception = LR_SPACE.config((swept_inception(LR_SPACE, surface),)).values["lr"]
    selected = run.selected.values["lr"]
    ratio = max(selected / inception, inception / selected)
    assert ratio <= 2.25 * (1 + 1e-9)


def test_autohyper_budget_law_in_step_log():
    evaluator = make_oracle(sigmoid_lr(-3.5))
    run = autohyper(LR_SPACE.origin(), evaluator, SearchOptions())
    assert run.epoch_budget == 5 * len(evaluator.calls)
    cumulative = 0
    for record in run.step_log:
        cumulative += record.new_evaluations
        assert record.epoch_budget == 5 * cumulative


def test_autohyper_zero_surface_immediate_convergence():
    run = autohyper(LR_SPACE.origin(), make_oracle(lambda v: 0.0), SearchOptions())
    assert run.verdict == "converged"
    assert run.rank_history.values == [0.0]
    assert run.rank_history.stabilized == [0.0]
    assert len([r for r in run.step_log if r.phase == "descent"]) == 1


def test_autohyper_constant_high_surface_exhausts_budget():
    # Constant 0.95: every member clears the bootstrap threshold, descent
    # stalls in place, and the plateau check never engages because the
    # response never falls below the threshold. The closed form
    # c_j = 0.95**(0.8*(j+1)) confirms the stabilized change only matters
    # below 0.9, which a constant-0.95 surface never reaches.
    options = SearchOptions(max_steps=50)
    run = autohyper(LR_SPACE.origin(), make_oracle(lambda v: 0.95), options)
    assert run.verdict == "budget_exhausted"
    assert len(run.rank_history.values) == options.max_steps
    assert run.rank_history.values == [0.95] * options.max_steps
    expected = [0.95 ** (0.8 * (j + 1)) for j in range(options.max_steps)]
    np.testing.assert_allclose(run.rank_history.stabilized, expected, rtol=1e-12)


def test_autohyper_constant_low_surface_never_bootstraps():
    run = autohyper(LR_SPACE.origin(), make_oracle(lambda v: 0.5), SearchOptions(max_steps=10))
    assert run.verdict == "no_bootstrap"
    assert run.rank_history.values == []
    assert all(r.phase == "bootstrap" for r in run.step_log)


def test_autohyper_is_deterministic():
    runs = [autohyper(LR_SPACE.origin(), make_oracle(sigmoid_lr(-3.5)), SearchOptions()) for _ in range(2)]
    logs = [[r.to_json_dict() for r in run.step_log] for run in runs]
    assert logs[0] == logs[1]
    assert runs[0].selected == runs[1].selected


def test_autohyper_phase_monotone_and_argmin_correct():
    run = autohyper(LR_SPACE.origin(), make_oracle(sigmoid_lr(-2.0)), SearchOptions())
    phases = [r.phase for r in run.step_log]
    assert "bootstrap" not in phases[phases.index("descent"):]
    for record in run.step_log:
        if record.phase == "descent":
            best = min(z for _, z in record.member_values)
            chosen_z = dict((tuple(e), z) for e, z in record.member_values)[record.chosen]
            assert chosen_z == best


def test_autohyper_cache_reuse_across_adjacent_regions():
    run = autohyper(LR_SPACE.origin(), make_oracle(sigmoid_lr(-3.5)), SearchOptions())
    for record in run.step_log[1:]:
        # adjacent 1-D regions share at least one member with the previous one
        assert record.new_evaluations <= 2


# ------------------------------------------------------------- random search


def test_random_search_sample_count():
    evaluator = make_oracle(lambda v: 0.5)

    def with_accuracy(values, config_id=""):
        out = evaluator(values, config_id)
        out.accuracies = [0.5] * 5
        return out

    result = random_search({"lr": (1e-4, 0.1)}, budget_epochs=15, evaluator=with_accuracy, seed=0)
    assert len(result.trials) == 3
    assert result.epoch_budget == 15


def test_random_search_log_uniformity():
    lo, hi = 1e-4, 0.1
    samples = []

    def recording(values, config_id=""):
        samples.append(values["lr"])
        return EvalOutcome(response=0.5, per_epoch=[0.5], accuracies=[0.5])

    random_search({"lr": (lo, hi)}, budget_epochs=10_000 * 5, evaluator=recording, seed=1)
    arr = np.array(samples)
    assert len(arr) == 10_000
    assert arr.min() >= lo and arr.max() <= hi
    stat = kstest((np.log10(arr) + 4) / 3, "uniform").statistic
    assert stat < 0.02


def test_random_search_picks_max_accuracy():
    def mock(values, config_id=""):
        acc = -abs(math.log10(values["lr"]) + 3)
        return EvalOutcome(response=0.5, per_epoch=[0.5], accuracies=[acc])

    result = random_search({"lr": (1e-4, 0.1)}, budget_epochs=100, evaluator=mock, seed=2)
    best = max(result.trials, key=lambda t: t.final_accuracy)
    assert result.best_values == best.values
    assert abs(math.log10(result.best_values["lr"]) + 3) == pytest.approx(-result.best_accuracy)


def test_random_search_zero_budget_rejected():
    with pytest.raises(ValidationError):
        random_search({"lr": (1e-4, 0.1)}, budget_epochs=4, evaluator=make_oracle(lambda v: 0.5), seed=0)


def test_random_search_bad_bounds_rejected():
    with pytest.raises(ValidationError):
        random_search({"lr": (0.1, 1e-4)}, budget_epochs=10, evaluator=make_oracle(lambda v: 0.5), seed=0)


# ------------------------------------------------------------- sweep


def test_sweep_counts_and_cache(tmp_path):
    evaluator = make_oracle(sigmoid_lr(-3.5))
    grid = [LR_SPACE.config((k,)) for k in range(-10, 10)]
    rows = sweep(grid, evaluator)
    assert len(rows) == 20
    assert len(evaluator.calls) == 20

    duplicated = grid + grid[:5]
    evaluator2 = make_oracle(sigmoid_lr(-3.5))
    run = SearchRun(space=LR_SPACE, options=SearchOptions())
    rows2 = sweep(duplicated, evaluator2, run=run)
    assert len(rows2) == 25
    assert len(evaluator2.calls) == 20  # duplicates served from cache
    assert run.epoch_budget == 100

    path = tmp_path / "sweep.csv"
    write_sweep_csv(path, rows)
    lines = path.read_text().strip().splitlines()
    assert lines[0].startswith("exponents,lr,Z,Z_t1")
    assert len(lines) == 21


def test_sweep_2d_grid_counts():
    space = HpSpace(names=("lr", "weight_decay"), anchors=(1e-3, 1e-5), alphas=(1.5, 1.5))
    evaluator = make_oracle(lambda v: 0.5)
    grid = [space.config((i, j)) for i in range(10) for j in range(10)]
    assert len(sweep(grid, evaluator)) == 100


def test_sweep_empty_grid_rejected():
    with pytest.raises(ValidationError):
        sweep([], make_oracle(lambda v: 0.5))
