"""Success-rate statistics, consistency metrics, and throughput accounting.

The consistency metrics compare a candidate evaluation procedure against a
reference (human-run) one over the same set of policies:

* Pearson r measures linear agreement of the two rate vectors.
* MMRV (mean maximum rank violation) measures ranking agreement. For each
  policy i, the worst ordered-pair disagreement magnitude is

      RankViolation(i, j) = |ref_i - ref_j| * 1[(cand_i < cand_j) != (ref_i < ref_j)]

  with strict less-than on both sides, and MMRV is the mean over i of
  max_j RankViolation(i, j). The reference vector supplies the violation
  magnitudes; the candidate only contributes orderings.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core.types import EpisodeRecord, StepPhase, VerdictLabel


class MetricsError(Exception):
    pass


class NoValidEpisodes(MetricsError):
    pass


class DegenerateVariance(MetricsError):
    pass


class PolicySetMismatch(MetricsError):
    pass


class LengthMismatch(MetricsError):
    pass


class EmptyWindow(MetricsError):
    pass


@dataclass
class RateVector:
    """Per-policy success rates with numerators and denominators retained."""

    policies: list[str]
    successes: list[int]
    trials: list[int]

    def __post_init__(self):
        if not (len(self.policies) == len(self.successes) == len(self.trials)):
            raise LengthMismatch("policies, successes, trials must align")
        for n in self.trials:
            if n < 1:
                raise MetricsError("trial denominators must be >= 1")

    def rates(self) -> np.ndarray:
        return np.asarray(self.successes, dtype=float) / np.asarray(self.trials, dtype=float)

    def reorder(self, policies: list[str]) -> "RateVector":
        index = {p: i for i, p in enumerate(self.policies)}
        try:
            order = [index[p] for p in policies]
        except KeyError as exc:
            raise PolicySetMismatch(f"policy {exc.args[0]!r} missing") from None
        return RateVector(
            policies=list(policies),
            successes=[self.successes[i] for i in order],
            trials=[self.trials[i] for i in order],
        )


@dataclass
class ConsistencyMetrics:
    per_task: dict[str, dict[str, float]] = field(default_factory=dict)
    average_pearson: float = 0.0
    average_mmrv: float = 0.0

    def to_dict(self) -> dict:
        return {
            "per_task": self.per_task,
            "average_pearson": self.average_pearson,
            "average_mmrv": self.average_mmrv,
        }


def wilson_interval(successes: int, trials: int, z: float = 1.96) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if trials < 1:
        raise NoValidEpisodes("need at least one trial")
    p = successes / trials
    denom = 1.0 + z * z / trials
    center = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    # The interval contains p algebraically; snap away 1-ulp rounding slips.
    return min(max(0.0, center - half), p), max(min(1.0, center + half), p)


def success_rate(episodes: list[EpisodeRecord], z: float = 1.96) -> dict:
    """Point estimate plus Wilson 95% CI over the valid episodes only."""
    valid = [e for e in episodes if e.valid]
    if not valid:
        raise NoValidEpisodes("no valid episodes to score")
    successes = sum(1 for e in valid if e.success_verdict == VerdictLabel.SUCCESS)
    lo, hi = wilson_interval(successes, len(valid), z)
    return {
        "rate": successes / len(valid),
        "successes": successes,
        "valid": len(valid),
        "ci_low": lo,
        "ci_high": hi,
    }


def pearson(x, y) -> float:
    xv = np.asarray(x, dtype=float)
    yv = np.asarray(y, dtype=float)
    if xv.shape != yv.shape or xv.ndim != 1:
        raise LengthMismatch("rate vectors must be 1-D and of equal length")
    if xv.size < 2:
        raise LengthMismatch("need at least two policies")
    if np.ptp(xv) == 0.0 or np.ptp(yv) == 0.0:
        raise DegenerateVariance("pearson undefined for a constant vector")
    return float(np.corrcoef(xv, yv)[0, 1])


def mmrv(ref: RateVector, cand: RateVector) -> float:
    """Mean maximum rank violation of cand against ref (see module docstring)."""
    if set(ref.policies) != set(cand.policies):
        raise PolicySetMismatch(f"{sorted(ref.policies)} vs {sorted(cand.policies)}")
    if len(ref.policies) < 2:
        raise PolicySetMismatch("need at least two policies")
    cand = cand.reorder(ref.policies)
    a = ref.rates()
    b = cand.rates()
    # Pairwise matrices over ordered pairs (i, j). The final mean is a plain
    # left-to-right sum so the result is bit-identical to a naive double loop.
    mag = np.abs(a[:, None] - a[None, :])
    disagree = (b[:, None] < b[None, :]) != (a[:, None] < a[None, :])
    worst = np.max(np.where(disagree, mag, 0.0), axis=1)
    return float(sum(worst.tolist()) / len(ref.policies))


def aggregate_consistency(tables: dict[str, tuple[RateVector, RateVector]]) -> ConsistencyMetrics:
    """Per-task pearson/mmrv plus unweighted averages.

    tables maps task name -> (reference vector, candidate vector).
    """
    if not tables:
        raise MetricsError("no tasks to aggregate")
    out = ConsistencyMetrics()
    for task, (ref, cand) in tables.items():
        cand_aligned = cand.reorder(ref.policies)
        out.per_task[task] = {
            "pearson": pearson(ref.rates(), cand_aligned.rates()),
            "mmrv": mmrv(ref, cand),
        }
    out.average_pearson = float(np.mean([v["pearson"] for v in out.per_task.values()]))
    out.average_mmrv = float(np.mean([v["mmrv"] for v in out.per_task.values()]))
    return out


def throughput(episodes: list[EpisodeRecord], window_minutes: float) -> float:
    """Valid evaluation steps per minute over the window.

    Counts only eval-phase steps of valid episodes: reset steps and the steps
    of invalidated attempts (motor-failure re-runs, protocol errors) are
    excluded from the numerator.
    """
    if window_minutes <= 0:
        raise EmptyWindow(f"window must be positive, got {window_minutes}")
    steps = sum(e.eval_steps() for e in episodes if e.valid)
    return steps / window_minutes


def human_time_saved(
    interventions: int, minutes_per_intervention: float, manual_eval_minutes: float
) -> dict:
    """Operator-minutes spent on interventions vs running the trials by hand."""
    if interventions < 0 or minutes_per_intervention < 0 or manual_eval_minutes < 0:
        raise MetricsError("inputs must be non-negative")
    auto = interventions * minutes_per_intervention
    reduction = 1.0 - (auto / manual_eval_minutes) if manual_eval_minutes > 0 else 0.0
    return {
        "auto_minutes": auto,
        "manual_minutes": manual_eval_minutes,
        "reduction_fraction": reduction,
    }


def action_mse(predicted, reference, normalizer=None) -> dict:
    """MSE over all action components, plus an MSE of per-dimension
    normalized actions.

    normalizer: per-dimension scale; defaults to the reference's per-dimension
    standard deviation (zeros replaced by 1).
    """
    p = np.asarray(predicted, dtype=float)
    r = np.asarray(reference, dtype=float)
    if p.shape != r.shape or p.ndim != 2 or p.shape[0] < 1:
        raise LengthMismatch(f"shape mismatch: {p.shape} vs {r.shape}")
    mse = float(np.mean((p - r) ** 2))
    if normalizer is None:
        scale = r.std(axis=0)
        scale[scale == 0.0] = 1.0
    else:
        scale = np.asarray(normalizer, dtype=float)
        if scale.shape != (p.shape[1],):
            raise LengthMismatch("normalizer must have one scale per action dimension")
    norm_mse = float(np.mean(((p - r) / scale) ** 2))
    return {"mse": mse, "normalized_mse": norm_mse}


def classifier_gate(predictions, labels, threshold: float = 0.95) -> dict:
    """Exact-match accuracy with a strict > deployment threshold."""
    if len(predictions) != len(labels) or len(labels) < 1:
        raise LengthMismatch("predictions and labels must align and be non-empty")
    correct = sum(1 for p, l in zip(predictions, labels) if p == l)
    accuracy = correct / len(labels)
    return {"accuracy": accuracy, "deployable": accuracy > threshold}


# ---------------------------------------------------------------------------
# Rate-table fixtures: header row of policy names, one row per task, cells as
# "successes/trials".


def load_rate_csv(path: str | Path) -> dict[str, RateVector]:
    tables: dict[str, RateVector] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or len(header) < 3 or header[0].strip().lower() != "task":
            raise MetricsError(f"{path}: expected header 'task,<policy>,...'")
        policies = [h.strip() for h in header[1:]]
        for row in reader:
            if not row or not row[0].strip():
                continue
            task = row[0].strip()
            if len(row) != len(policies) + 1:
                raise MetricsError(f"{path}: row {task!r} has {len(row) - 1} cells, expected {len(policies)}")
            successes, trials = [], []
            for cell in row[1:]:
                try:
                    k, n = cell.strip().split("/")
                    successes.append(int(k))
                    trials.append(int(n))
                except ValueError:
                    raise MetricsError(f"{path}: bad cell {cell!r} in row {task!r}, expected k/n") from None
            tables[task] = RateVector(policies=list(policies), successes=successes, trials=trials)
    if not tables:
        raise MetricsError(f"{path}: no task rows")
    return tables


FIXTURE_DIR = Path(__file__).parent / "fixtures"
REFERENCE_RATES_CSV = FIXTURE_DIR / "human_rates.csv"
CANDIDATE_RATES_CSV = FIXTURE_DIR / "automated_rates.csv"


def consistency_from_files(ref_path: str | Path, cand_path: str | Path) -> ConsistencyMetrics:
    ref_tables = load_rate_csv(ref_path)
    cand_tables = load_rate_csv(cand_path)
    if set(ref_tables) != set(cand_tables):
        raise PolicySetMismatch(
            f"task sets differ: {sorted(ref_tables)} vs {sorted(cand_tables)}"
        )
    return aggregate_consistency({t: (ref_tables[t], cand_tables[t]) for t in ref_tables})
