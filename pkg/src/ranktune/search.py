"""Trust-region search over a multiplicative hyper-parameter lattice.

Configurations live on a lattice anchored at a starting point: each
hyper-parameter's value is anchor * alpha**k with integer exponent k and
per-parameter step factor alpha (1.5 by default). A trust region around a
center is the set of configurations reachable by one lattice step in any
combination of directions (3**n members for n hyper-parameters).

The search has two phases. While every member of the current region has a
response value below the bootstrap threshold (0.9), it climbs toward the
maximum — the cumulative-product machinery needs a high starting value.
Once any member reaches the threshold, it descends: step to the member
with the minimum response, append that minimum to the rank history, and
recompute the stabilized sequence (cumulative product to the 0.8 power).
Descent terminates when the stabilized sequence's absolute step change
drops below the plateau tolerance — checked only once the response has
fallen below the bootstrap threshold, since the stabilized sequence is
also flat while the response sits near 1.0 — or immediately when a region
attains response 0.

Every evaluated configuration is cached by its exponent vector; the epoch
budget is exactly T times the number of distinct configurations trained.
"""

from __future__ import annotations

import csv
import itertools
import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import loguniform

from ranktune.errors import ValidationError
from ranktune.metrics import RankHistory
from ranktune.probes import EvalOutcome

EXPONENT_BOUND = 64
DEFAULT_STEP_FACTOR = 1.5
BOOTSTRAP_THRESHOLD = 0.9
DEFAULT_PLATEAU_TOLERANCE = 0.01
DEFAULT_MAX_STEPS = 50
DEFAULT_EPOCHS = 5

DEFAULT_ANCHORS = {"lr": 1e-3, "weight_decay": 1e-5}

Evaluator = Callable[..., EvalOutcome]

_TAIL = 5


@dataclass(frozen=True)
class HpSpace:
    """Names, anchor values, and step factors; fixed for a whole run."""

    names: tuple[str, ...]
    anchors: tuple[float, ...]
    alphas: tuple[float, ...]

    def __post_init__(self):
        if not self.names:
            raise ValidationError("need at least one hyper-parameter")
        if not (len(self.names) == len(self.anchors) == len(self.alphas)):
            raise ValidationError("names, anchors, and alphas must have equal length")
        for name, anchor, alpha in zip(self.names, self.anchors, self.alphas):
            if not (np.isfinite(anchor) and anchor > 0):
                raise ValidationError(f"anchor for '{name}' must be positive and finite, got {anchor}")
            if not (np.isfinite(alpha) and alpha > 1):
                raise ValidationError(f"step factor for '{name}' must be > 1, got {alpha}")

    @property
    def dim(self) -> int:
        return len(self.names)

    def config(self, exponents: Sequence[int]) -> "HpConfig":
        return HpConfig(space=self, exponents=tuple(int(k) for k in exponents))

    def origin(self) -> "HpConfig":
        return self.config((0,) * self.dim)


@dataclass(frozen=True)
class HpConfig:
    """A lattice point; equality and caching key off the exponent vector."""

    space: HpSpace
    exponents: tuple[int, ...]

    def __post_init__(self):
        if len(self.exponents) != self.space.dim:
            raise ValidationError(
                f"expected {self.space.dim} exponents, got {len(self.exponents)}"
            )
        if any(abs(k) > EXPONENT_BOUND for k in self.exponents):
            raise ValidationError(f"exponents {self.exponents} exceed bound +/-{EXPONENT_BOUND}")

    @property
    def values(self) -> dict[str, float]:
        out = {}
        for name, anchor, alpha, k in zip(
            self.space.names, self.space.anchors, self.space.alphas, self.exponents
        ):
            value = anchor * alpha**k
            if not (np.isfinite(value) and value > 0):
                raise ValidationError(f"derived value for '{name}' is not positive finite: {value}")
            out[name] = value
        return out


@dataclass(frozen=True)
class TrustRegion:
    center: HpConfig
    deltas: tuple[tuple[int, ...], ...]
    members: tuple[HpConfig, ...]
    truncated: bool

    def __len__(self) -> int:
        return len(self.members)


def trust_region(center: HpConfig) -> TrustRegion:
    """All one-step combinations around the center, lexicographic in deltas.

    Directions that would cross the exponent bound are clamped out of the
    region; the result is flagged truncated and has fewer than 3**n members.
    """
    deltas, members = [], []
    truncated = False
    for delta in itertools.product((-1, 0, 1), repeat=center.space.dim):
        exponents = tuple(k + d for k, d in zip(center.exponents, delta))
        if any(abs(k) > EXPONENT_BOUND for k in exponents):
            truncated = True
            continue
        deltas.append(delta)
        members.append(center.space.config(exponents))
    return TrustRegion(center=center, deltas=tuple(deltas), members=tuple(members), truncated=truncated)


class EvaluationCache:
    """Linearizable map from exponent vector to evaluation outcome.

    One computation wins per key; concurrent callers on the same key block
    on the in-flight entry instead of duplicating work.
    """

    def __init__(self):
        self._done: dict[tuple[int, ...], EvalOutcome] = {}
        self._inflight: dict[tuple[int, ...], threading.Event] = {}
        self._errors: dict[tuple[int, ...], BaseException] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        with self._lock:
            return len(self._done)

    def __contains__(self, key: tuple[int, ...]) -> bool:
        with self._lock:
            return key in self._done

    def keys(self) -> list[tuple[int, ...]]:
        with self._lock:
            return list(self._done)

    def get_or_compute(self, key: tuple[int, ...], compute: Callable[[], EvalOutcome]):
        """Returns (outcome, was_hit)."""
        with self._lock:
            if key in self._done:
                return self._done[key], True
            event = self._inflight.get(key)
            owner = event is None
            if owner:
                event = threading.Event()
                self._inflight[key] = event
        if owner:
            try:
                outcome = compute()
                with self._lock:
                    self._done[key] = outcome
            except BaseException as exc:
                with self._lock:
                    self._errors[key] = exc
                raise
            finally:
                with self._lock:
                    del self._inflight[key]
                event.set()
            return outcome, False
        event.wait()
        with self._lock:
            if key in self._errors:
                raise RuntimeError(f"evaluation of {key} failed in another thread") from self._errors[key]
            return self._done[key], True


@dataclass
class SearchOptions:
    max_steps: int = DEFAULT_MAX_STEPS
    plateau_tolerance: float = DEFAULT_PLATEAU_TOLERANCE
    bootstrap_threshold: float = BOOTSTRAP_THRESHOLD
    epochs: int = DEFAULT_EPOCHS


@dataclass
class StepRecord:
    step: int
    phase: str
    center_exponents: tuple[int, ...]
    member_values: list[tuple[tuple[int, ...], float]]
    chosen: tuple[int, ...]
    new_evaluations: int
    rank_history_tail: list[float]
    stabilized_tail: list[float]
    epoch_budget: int

    def to_json_dict(self) -> dict:
        return {
            "step": self.step,
            "phase": self.phase,
            "center_exponents": list(self.center_exponents),
            "member_Z_values": [[list(e), z] for e, z in self.member_values],
            "chosen": list(self.chosen),
            "new_evaluations": self.new_evaluations,
            "rank_history_tail": self.rank_history_tail,
            "stabilized_tail": self.stabilized_tail,
            "epoch_budget": self.epoch_budget,
        }


@dataclass
class SearchRun:
    """Everything one search produced: cache, history, step log, verdict."""

    space: HpSpace
    options: SearchOptions
    cache: EvaluationCache = field(default_factory=EvaluationCache)
    rank_history: RankHistory = field(default_factory=RankHistory)
    step_log: list[StepRecord] = field(default_factory=list)
    verdict: str = "running"
    selected: HpConfig | None = None

    @property
    def epoch_budget(self) -> int:
        return self.options.epochs * len(self.cache)

    def evaluate(self, config: HpConfig, evaluator: Evaluator) -> EvalOutcome:
        """Cached response evaluation; a miss trains/evaluates exactly once."""
        key = config.exponents
        config_id = "k=" + ",".join(str(k) for k in key)
        outcome, _ = self.cache.get_or_compute(key, lambda: evaluator(config.values, config_id))
        return outcome

    def evaluate_region(self, region: TrustRegion, evaluator: Evaluator):
        before = len(self.cache)
        outcomes = {m.exponents: self.evaluate(m, evaluator) for m in region.members}
        return outcomes, len(self.cache) - before


def _select(region: TrustRegion, outcomes, maximize: bool) -> HpConfig:
    """Extremal member; ties prefer the smallest move, then lexicographic delta."""
    sign = -1.0 if maximize else 1.0

    def sort_key(pair):
        delta, member = pair
        z = outcomes[member.exponents].response
        return (sign * z, sum(d * d for d in delta), delta)

    return min(zip(region.deltas, region.members), key=sort_key)[1]


def autohyper(start: HpConfig, evaluator: Evaluator, options: SearchOptions | None = None) -> SearchRun:
    """Walk the lattice from `start` to the response plateau's inception.

    Returns a finished run whose verdict is `converged` (with the selected
    configuration), `budget_exhausted` (best descent point so far), or
    `no_bootstrap` (the threshold was never reached).
    """
    options = options or SearchOptions()
    run = SearchRun(space=start.space, options=options)
    center = start
    phase = "bootstrap"
    best: tuple[float, HpConfig] | None = None

    for step in range(options.max_steps):
        region = trust_region(center)
        outcomes, fresh = run.evaluate_region(region, evaluator)
        minimum = _select(region, outcomes, maximize=False)
        min_z = outcomes[minimum.exponents].response

        def log(chosen: HpConfig, logged_phase: str):
            run.step_log.append(StepRecord(
                step=step,
                phase=logged_phase,
                center_exponents=region.center.exponents,
                member_values=[(m.exponents, outcomes[m.exponents].response) for m in region.members],
                chosen=chosen.exponents,
                new_evaluations=fresh,
                rank_history_tail=run.rank_history.values[-_TAIL:],
                stabilized_tail=run.rank_history.stabilized[-_TAIL:],
                epoch_budget=run.epoch_budget,
            ))

        if min_z == 0.0:
            center = minimum
            run.rank_history.append(0.0)
            log(center, "descent")
            run.verdict = "converged"
            run.selected = center
            return run

        if phase == "bootstrap":
            if all(o.response < options.bootstrap_threshold for o in outcomes.values()):
                center = _select(region, outcomes, maximize=True)
                log(center, "bootstrap")
                continue
            phase = "descent"

        center = minimum
        run.rank_history.append(min_z)
        log(center, "descent")
        if best is None or min_z < best[0]:
            best = (min_z, center)
        change = run.rank_history.last_change()
        if (
            change is not None
            and min_z < options.bootstrap_threshold
            and change < options.plateau_tolerance
        ):
            run.verdict = "converged"
            run.selected = center
            return run

    if phase == "bootstrap":
        run.verdict = "no_bootstrap"
        run.selected = center
    else:
        run.verdict = "budget_exhausted"
        run.selected = best[1] if best else center
    return run


@dataclass
class RandomTrial:
    values: dict[str, float]
    final_accuracy: float
    diverged: bool


@dataclass
class RandomSearchResult:
    best_values: dict[str, float]
    best_accuracy: float
    trials: list[RandomTrial]
    epochs_per_trial: int

    @property
    def epoch_budget(self) -> int:
        return self.epochs_per_trial * len(self.trials)


RANDOM_STREAM = 0x5EA2C4


def random_search(
    bounds: dict[str, tuple[float, float]],
    budget_epochs: int,
    evaluator: Evaluator,
    seed: int,
    epochs_per_trial: int = DEFAULT_EPOCHS,
) -> RandomSearchResult:
    """Log-uniform random sampling baseline under a fixed epoch budget.

    Draws floor(budget / epochs_per_trial) configurations, trains each for
    `epochs_per_trial` epochs, and returns the one with the highest final
    training accuracy; ties go to the earliest sample.
    """
    for name, (lo, hi) in bounds.items():
        if not (0 < lo < hi):
            raise ValidationError(f"bounds for '{name}' must satisfy 0 < lo < hi, got ({lo}, {hi})")
    n_samples = budget_epochs // epochs_per_trial
    if n_samples < 1:
        raise ValidationError(
            f"budget of {budget_epochs} epochs admits no {epochs_per_trial}-epoch samples"
        )
    rng = np.random.Generator(np.random.Philox(key=[seed, RANDOM_STREAM]))
    trials: list[RandomTrial] = []
    best: tuple[float, int] | None = None
    for i in range(n_samples):
        values = {
            name: float(loguniform.rvs(lo, hi, random_state=rng))
            for name, (lo, hi) in bounds.items()
        }
        outcome = evaluator(values, f"random-{i}")
        accuracy = outcome.accuracies[-1] if outcome.accuracies else float("-inf")
        trials.append(RandomTrial(values=values, final_accuracy=accuracy, diverged=outcome.diverged))
        if best is None or accuracy > best[0]:
            best = (accuracy, i)
    winner = trials[best[1]]
    return RandomSearchResult(
        best_values=winner.values,
        best_accuracy=winner.final_accuracy,
        trials=trials,
        epochs_per_trial=epochs_per_trial,
    )


@dataclass
class SweepRow:
    exponents: tuple[int, ...]
    values: dict[str, float]
    response: float
    per_epoch: list[float]


def sweep(grid: Sequence[HpConfig], evaluator: Evaluator, run: SearchRun | None = None) -> list[SweepRow]:
    """Evaluate every grid point, serving duplicates from the cache.

    Passing an existing run reuses its cache, so points the search already
    trained cost nothing.
    """
    if not grid:
        raise ValidationError("sweep grid is empty")
    if run is None:
        run = SearchRun(space=grid[0].space, options=SearchOptions())
    rows = []
    for config in grid:
        outcome = run.evaluate(config, evaluator)
        rows.append(SweepRow(
            exponents=config.exponents,
            values=config.values,
            response=outcome.response,
            per_epoch=list(outcome.per_epoch),
        ))
    return rows


def write_sweep_csv(path, rows: Sequence[SweepRow]) -> None:
    if not rows:
        raise ValidationError("no sweep rows to write")
    names = list(rows[0].values)
    epochs = len(rows[0].per_epoch)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["exponents", *names, "Z", *[f"Z_t{t}" for t in range(1, epochs + 1)]])
        for row in rows:
            writer.writerow([
                ";".join(str(k) for k in row.exponents),
                *[repr(row.values[n]) for n in names],
                repr(row.response),
                *[repr(z) for z in row.per_epoch],
            ])
