"""Hybrid-batch timing model and speculation overhead terms.

The batch-step time is affine-plus-knee in the decode count and linear in
prefill work::

    T_h(P, N) = d0 + decode(N) + sum(count * (prefill_fixed + per_token * length))
    decode(N) = gamma * N                                   for N <= N0
              = gamma * N0 + gamma * (1 + alpha) * (N - N0) for N > N0
"""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np


class CalibrationError(ValueError):
    """Profile table cannot determine the model, or the fit is too poor."""


@dataclass(frozen=True)
class CostModelParams:
    base_step_time: float = 0.020
    decode_cost_per_request: float = 0.000025
    decode_knee: int = 64
    decode_slowdown: float = 0.5
    prefill_fixed_cost: float = 0.002
    prefill_cost_per_token: float = 0.00001

    def __post_init__(self) -> None:
        if self.base_step_time <= 0:
            raise ValueError("base_step_time must be > 0")
        for name in (
            "decode_cost_per_request",
            "decode_knee",
            "decode_slowdown",
            "prefill_fixed_cost",
            "prefill_cost_per_token",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @classmethod
    def from_mapping(cls, values: Mapping[str, float]) -> CostModelParams:
        return cls(**values)


class PrefillSet:
    """Multiset of prefill input lengths admitted into one batch step."""

    __slots__ = ("_entries",)

    def __init__(self, entries: Mapping[int, int] | Iterable[tuple[int, int]] = ()):
        counts: Counter[int] = Counter()
        items = entries.items() if isinstance(entries, Mapping) else entries
        for length, count in items:
            if length < 1 or count < 1:
                raise ValueError(f"prefill entries need length >= 1 and count >= 1, got {(length, count)}")
            counts[int(length)] += int(count)
        self._entries = counts

    @classmethod
    def of(cls, lengths: Iterable[int]) -> PrefillSet:
        return cls((length, 1) for length in lengths)

    @property
    def entries(self) -> dict[int, int]:
        return dict(sorted(self._entries.items()))

    @property
    def count(self) -> int:
        return sum(self._entries.values())

    @property
    def tokens(self) -> int:
        return sum(length * count for length, count in self._entries.items())

    def __len__(self) -> int:
        return self.count

    def __bool__(self) -> bool:
        return bool(self._entries)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, PrefillSet) and self._entries == other._entries

    def __repr__(self) -> str:
        return f"PrefillSet({self.entries})"


EMPTY = PrefillSet()


def decode_time(decode_count: int, params: CostModelParams) -> float:
    if decode_count < 0:
        raise ValueError("decode_count must be >= 0")
    gamma, knee = params.decode_cost_per_request, params.decode_knee
    if decode_count <= knee:
        return gamma * decode_count
    return gamma * knee + gamma * (1 + params.decode_slowdown) * (decode_count - knee)


def prefill_time(prefill: PrefillSet, params: CostModelParams) -> float:
    return params.prefill_fixed_cost * prefill.count + params.prefill_cost_per_token * prefill.tokens


def hybrid_batch_time(prefill: PrefillSet, decode_count: int, params: CostModelParams) -> float:
    """Engine time of one batch step with the given prefills and decode count."""
    return params.base_step_time + decode_time(decode_count, params) + prefill_time(prefill, params)


def decode_overhead(spec_count: int, k: int, n: int, l_s: float, params: CostModelParams) -> float:
    """Extra decode time from ``spec_count`` requests of ``k`` samples each."""
    if spec_count == 0:
        return 0.0
    return l_s * (
        hybrid_batch_time(EMPTY, n + k * spec_count, params) - hybrid_batch_time(EMPTY, n, params)
    )


def prefill_overhead(spec_count: int, l_s_input: int, n: int, params: CostModelParams) -> float:
    """Extra batch time from one shared-prefix prefill per speculative request."""
    if spec_count == 0:
        return 0.0
    return prefill_set_overhead(PrefillSet([(l_s_input, spec_count)]), n, params)


def prefill_set_overhead(prefill: PrefillSet, n: int, params: CostModelParams) -> float:
    return hybrid_batch_time(prefill, n, params) - hybrid_batch_time(EMPTY, n, params)


# --- calibration -----------------------------------------------------------


@dataclass(frozen=True)
class ProfileRow:
    prefill: PrefillSet
    decode_count: int
    seconds: float


@dataclass(frozen=True)
class CalibrationResult:
    params: CostModelParams
    predicted: tuple[float, ...]
    relative_errors: tuple[float, ...]

    @property
    def max_relative_error(self) -> float:
        return max(abs(e) for e in self.relative_errors)


MAX_RELATIVE_ERROR = 0.10


def _coverage_problems(rows: Sequence[ProfileRow]) -> list[str]:
    problems = []
    if len(rows) < 6:
        problems.append(f"need at least 6 rows, got {len(rows)}")
    decode_only = [r for r in rows if not r.prefill]
    hybrid = [r for r in rows if r.prefill]
    if len({r.decode_count for r in decode_only}) < 3:
        problems.append("need decode-only rows at 3 or more distinct decode counts")
    if not hybrid:
        problems.append("need hybrid rows (prefill + decode)")
    elif len({r.prefill.tokens / r.prefill.count for r in hybrid}) < 2:
        problems.append("need hybrid rows with at least 2 distinct prefill lengths")
    return problems


def _features(rows: Sequence[ProfileRow], knee: int) -> np.ndarray:
    n = np.array([r.decode_count for r in rows], dtype=float)
    return np.column_stack(
        [
            np.ones(len(rows)),
            np.minimum(n, knee),
            np.maximum(0.0, n - knee),
            [r.prefill.count for r in rows],
            [r.prefill.tokens for r in rows],
        ]
    )


def calibrate(rows: Sequence[ProfileRow]) -> CalibrationResult:
    """Least-squares fit of :class:`CostModelParams` to measured batch times.

    The knee is chosen by exhaustive search over integer decode counts; the
    remaining parameters enter linearly. Rows are weighted by ``1/seconds``
    so the fit minimises relative error.
    """
    problems = _coverage_problems(rows)
    if problems:
        raise CalibrationError("underdetermined profile table: " + "; ".join(problems))

    y = np.array([r.seconds for r in rows], dtype=float)
    w = 1.0 / y
    counts = sorted({r.decode_count for r in rows})
    best = None
    for knee in range(counts[1], counts[-1]):
        x = _features(rows, knee)
        if np.linalg.matrix_rank(x) < x.shape[1]:
            continue
        coef, *_ = np.linalg.lstsq(x * w[:, None], y * w, rcond=None)
        resid = float(np.sum(((x @ coef - y) * w) ** 2))
        if best is None or resid < best[0] - 1e-18:
            best = (resid, knee, coef)
    if best is None:
        raise CalibrationError(
            "underdetermined profile table: decode counts do not straddle any knee"
        )

    _, knee, (d0, gamma, slope_past_knee, fixed, per_token) = best
    alpha = slope_past_knee / gamma - 1 if gamma > 0 else 0.0
    try:
        params = CostModelParams(
            base_step_time=float(d0),
            decode_cost_per_request=float(max(gamma, 0.0)),
            decode_knee=int(knee),
            decode_slowdown=float(max(alpha, 0.0)),
            prefill_fixed_cost=float(max(fixed, 0.0)),
            prefill_cost_per_token=float(max(per_token, 0.0)),
        )
    except ValueError as exc:
        raise CalibrationError(f"fit produced invalid parameters: {exc}") from exc
    predicted = tuple(hybrid_batch_time(r.prefill, r.decode_count, params) for r in rows)
    errors = tuple((p - r.seconds) / r.seconds for p, r in zip(predicted, rows))
    result = CalibrationResult(params, predicted, errors)
    if result.max_relative_error > MAX_RELATIVE_ERROR:
        worst = int(np.argmax(np.abs(errors)))
        raise CalibrationError(
            f"fit misses row {worst} by {errors[worst]:+.1%} (limit {MAX_RELATIVE_ERROR:.0%})"
        )
    return result


PROFILE_HEADER = ("prefill_len", "prefill_count", "decode_count", "seconds")


def read_profile_table(path: str | Path) -> list[ProfileRow]:
    """Parse a ``prefill_len,prefill_count,decode_count,seconds`` CSV.

    Rows sharing the same ``(decode_count, seconds)`` are not merged; a
    decode-only row has ``prefill_count`` 0.
    """
    with open(path, newline="") as fh:
        return _parse_profile(fh)


def _parse_profile(lines: Iterable[str]) -> list[ProfileRow]:
    reader = csv.reader(lines)
    header = tuple(h.strip() for h in next(reader))
    if header != PROFILE_HEADER:
        raise CalibrationError(f"profile header must be {','.join(PROFILE_HEADER)}, got {','.join(header)}")
    rows = []
    for lineno, rec in enumerate(reader, start=2):
        if not rec or not "".join(rec).strip():
            continue
        try:
            length, count, decode, seconds = int(rec[0]), int(rec[1]), int(rec[2]), float(rec[3])
        except (ValueError, IndexError) as exc:
            raise CalibrationError(f"line {lineno}: {exc}") from exc
        prefill = PrefillSet([(length, count)]) if count > 0 else EMPTY
        rows.append(ProfileRow(prefill, decode, seconds))
    return rows


def write_profile_table(rows: Iterable[ProfileRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PROFILE_HEADER)
        for row in rows:
            entries = row.prefill.entries
            if len(entries) > 1:
                raise ValueError("CSV rows hold a single prefill length")
            length, count = next(iter(entries.items())) if entries else (0, 0)
            writer.writerow([length, count, row.decode_count, repr(row.seconds)])


def default_profile_table() -> list[ProfileRow]:
    text = resources.files("specsim.data").joinpath("default_profile.csv").read_text()
    return _parse_profile(text.splitlines())


def default_params() -> CostModelParams:
    """Parameters calibrated from the shipped profile table."""
    return calibrate(default_profile_table()).params
