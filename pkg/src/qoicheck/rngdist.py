"""Deterministic seeded streams and the sampling distributions used in the studies.

Every stochastic operation in the package draws from a :class:`SeedStream`.
Streams are derived from (master_seed, stream_id) through a counter-based
mixing hash, so the stream owned by replication r is the same no matter how
many workers execute the study or in which order tasks are scheduled.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

_MASK64 = (1 << 64) - 1


class ParameterError(ValueError):
    """A distribution parameter is outside its domain."""


class TruncationInfeasibleError(RuntimeError):
    """Rejection sampling found no draw in the truncation region."""


def _mix64(a: int, b: int) -> int:
    # splitmix64 finalizer over the pair; stable across platforms
    x = (a * 0x9E3779B97F4A7C15 + b) & _MASK64
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & _MASK64
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & _MASK64
    x ^= x >> 31
    return x


def _tag_to_int(tag: int | str) -> int:
    if isinstance(tag, str):
        return int.from_bytes(hashlib.blake2s(tag.encode()).digest()[:8], "little")
    return tag & _MASK64


@dataclass
class SeedStream:
    """One logical random stream, owned by exactly one task.

    Identical (master_seed, stream_id) reproduce the identical sample
    sequence on every platform; distinct stream ids are independent.
    """

    master_seed: int
    stream_id: int
    _rng: np.random.Generator | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.master_seed &= _MASK64
        self.stream_id &= _MASK64

    @property
    def rng(self) -> np.random.Generator:
        if self._rng is None:
            seq = np.random.SeedSequence([self.master_seed, self.stream_id])
            self._rng = np.random.default_rng(seq)
        return self._rng

    def child(self, tag: int | str) -> "SeedStream":
        """Derive an independent sub-stream, deterministic in (self, tag)."""
        return SeedStream(self.master_seed, _mix64(self.stream_id, _tag_to_int(tag)))


def _check_sd(sd: float) -> None:
    if not np.isfinite(sd) or sd <= 0:
        raise ParameterError(f"sd must be positive and finite, got {sd}")


def sample_normal(mean: float, sd: float, stream: SeedStream, size: int | None = None):
    """Draw from Normal(mean, sd^2)."""
    if not np.isfinite(mean):
        raise ParameterError(f"mean must be finite, got {mean}")
    _check_sd(sd)
    if size is None:
        return float(stream.rng.normal(mean, sd))
    return stream.rng.normal(mean, sd, size=size)


def sample_truncated_normal_positive(
    loc: float,
    sd: float,
    stream: SeedStream,
    size: int | None = None,
    max_attempts: int = 10_000,
) -> float | np.ndarray:
    """Draw from Normal(loc, sd^2) conditioned on (0, inf) by rejection.

    Acceptance probability is high for every prior in the studies (loc is
    several sd above zero); `max_attempts` bounds pathological calls per
    requested element.
    """
    _check_sd(sd)
    n = 1 if size is None else int(size)
    budget = max_attempts * n
    out = np.empty(n)
    filled = 0
    attempts = 0
    while filled < n:
        want = max(n - filled, 16)
        if attempts >= budget:
            raise TruncationInfeasibleError(
                f"no positive draw from Normal({loc}, {sd}^2) after {attempts} attempts"
            )
        batch = stream.rng.normal(loc, sd, size=want)
        attempts += want
        good = batch[batch > 0]
        take = min(good.size, n - filled)
        out[filled : filled + take] = good[:take]
        filled += take
    return float(out[0]) if size is None else out


def sample_beta_mean_precision(
    mu: float, phi: float, stream: SeedStream, size: int | None = None
):
    """Draw from Beta with mean mu and precision phi, shapes (mu*phi, (1-mu)*phi)."""
    if not (0.0 < mu < 1.0):
        raise ParameterError(f"mu must lie in (0,1), got {mu}")
    if not np.isfinite(phi) or phi <= 0:
        raise ParameterError(f"phi must be positive and finite, got {phi}")
    a, b = mu * phi, (1.0 - mu) * phi
    if size is None:
        return float(stream.rng.beta(a, b))
    return stream.rng.beta(a, b, size=size)


def sample_uniform(a: float, b: float, stream: SeedStream, size: int | None = None):
    """Draw uniformly from [a, b]."""
    if not (a < b):
        raise ParameterError(f"need a < b, got a={a}, b={b}")
    if size is None:
        return float(stream.rng.uniform(a, b))
    return stream.rng.uniform(a, b, size=size)


def sample_group_assignment(N: int, G: int, stream: SeedStream) -> np.ndarray:
    """Assign N rows to levels {1..G} with replacement, equal probabilities."""
    if N < 1 or G < 1:
        raise ParameterError(f"need N >= 1 and G >= 1, got N={N}, G={G}")
    return stream.rng.integers(1, G + 1, size=N)
