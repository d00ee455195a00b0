"""Seeded index streams, uniform permutations and the single-swap permutation algebra.

Permutations are 1-based: ``sigma(j)`` for ``j`` in ``1..n`` is the component
processed at step ``j`` of an epoch.
"""

from __future__ import annotations

import itertools
from collections import Counter

import numpy as np

from .errors import ParameterError

_TWO64 = 1 << 64
_MASK64 = _TWO64 - 1


class RandomStream:
    """Counter-based generator keyed by ``(seed, stream_id)``.

    Draws come from the raw 64-bit output of Philox, so a given key yields the
    same integers on every platform and numpy release. ``spawn`` gives an
    independent sibling stream; ``copy`` forks the current state.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        self._bitgen = np.random.Philox(key=self.seed | (self.stream_id << 64))

    def __repr__(self):
        return f"RandomStream(seed={self.seed}, stream_id={self.stream_id})"

    def spawn(self, stream_id: int) -> RandomStream:
        return RandomStream(self.seed, stream_id)

    def copy(self) -> RandomStream:
        out = RandomStream(self.seed, self.stream_id)
        out._bitgen.state = self._bitgen.state
        return out

    def raw(self, size: int | None = None):
        return self._bitgen.random_raw(size)

    def below(self, bound: int) -> int:
        """Unbiased integer in ``[0, bound)`` by rejection on 64-bit words."""
        if bound < 1:
            raise ParameterError(f"bound must be >= 1, got {bound}")
        limit = _TWO64 - (_TWO64 % bound)
        while True:
            r = int(self._bitgen.random_raw())
            if r < limit:
                return r % bound

    def below_many(self, bound: int, m: int) -> np.ndarray:
        """``m`` independent draws of ``below(bound)``, vectorised."""
        if bound < 1:
            raise ParameterError(f"bound must be >= 1, got {bound}")
        rem = _TWO64 % bound
        out = np.empty(m, dtype=np.uint64)
        todo = np.arange(m)
        while todo.size:
            r = self._bitgen.random_raw(todo.size)
            if rem:
                ok = r < np.uint64(_TWO64 - rem)
            else:
                ok = np.ones(todo.size, dtype=bool)
            out[todo[ok]] = r[ok]
            todo = todo[~ok]
        return (out % np.uint64(bound)).astype(np.int64)

    def uniform(self, size=None) -> np.ndarray:
        """Uniform floats in ``[0, 1)`` built from the top 53 bits."""
        r = self._bitgen.random_raw(size)
        return (np.asarray(r, dtype=np.uint64) >> np.uint64(11)) * (1.0 / (1 << 53))

    def generator(self) -> np.random.Generator:
        """A numpy Generator sharing this stream's bit generator.

        Used for continuous draws (Gaussian data, sampled test points) where
        only same-version reproducibility is needed.
        """
        return np.random.Generator(self._bitgen)


class Permutation:
    """A bijection on ``{1, ..., n}`` stored as its 1-based image."""

    __slots__ = ("image",)

    def __init__(self, image, check: bool = True):
        img = np.array(image, dtype=np.int64)
        if img.ndim != 1 or img.size == 0:
            raise ParameterError("permutation image must be a non-empty 1-D sequence")
        if check and not np.array_equal(np.sort(img), np.arange(1, img.size + 1)):
            raise ParameterError(f"not a permutation of 1..{img.size}: {img.tolist()}")
        img.setflags(write=False)
        self.image = img

    @classmethod
    def identity(cls, n: int) -> Permutation:
        return cls(np.arange(1, n + 1), check=False)

    @property
    def n(self) -> int:
        return self.image.size

    def __call__(self, j: int) -> int:
        """Value at 1-based position ``j``."""
        if not 1 <= j <= self.n:
            raise ParameterError(f"position {j} outside 1..{self.n}")
        return int(self.image[j - 1])

    def __len__(self):
        return self.n

    def __iter__(self):
        return iter(self.image.tolist())

    def __eq__(self, other):
        if not isinstance(other, Permutation):
            return NotImplemented
        return np.array_equal(self.image, other.image)

    def __hash__(self):
        return hash(tuple(self.image.tolist()))

    def __repr__(self):
        return f"Permutation({tuple(self.image.tolist())})"

    def as_tuple(self) -> tuple[int, ...]:
        return tuple(self.image.tolist())

    def zero_based(self) -> np.ndarray:
        return self.image - 1

    def position_of(self, value: int) -> int:
        """1-based ``j`` with ``self(j) == value``."""
        hits = np.flatnonzero(self.image == value)
        if hits.size != 1:
            raise ParameterError(f"value {value} outside 1..{self.n}")
        return int(hits[0]) + 1


def uniform_permutation(n: int, stream: RandomStream) -> Permutation:
    """Fisher-Yates shuffle of ``(1, ..., n)`` driven by ``stream``."""
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    img = list(range(1, n + 1))
    for j in range(n - 1, 0, -1):
        k = stream.below(j + 1)
        img[j], img[k] = img[k], img[j]
    return Permutation(img, check=False)


def uniform_permutations(n: int, m: int, stream: RandomStream) -> np.ndarray:
    """``m`` independent Fisher-Yates permutations as an ``(m, n)`` 1-based array."""
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    out = np.tile(np.arange(1, n + 1, dtype=np.int64), (m, 1))
    rows = np.arange(m)
    for j in range(n - 1, 0, -1):
        k = stream.below_many(j + 1, m)
        tmp = out[rows, j].copy()
        out[rows, j] = out[rows, k]
        out[rows, k] = tmp
    return out


def with_replacement_index(n: int, stream: RandomStream) -> int:
    """Uniform draw from ``{1, ..., n}``."""
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    return stream.below(n) + 1


def exchange(tau: Permutation, a: int, b: int) -> Permutation:
    """Swap the entries at 1-based positions ``a`` and ``b``."""
    n = tau.n
    if not (1 <= a <= n and 1 <= b <= n):
        raise ParameterError(f"positions ({a}, {b}) outside 1..{n}")
    img = tau.image.copy()
    img[a - 1], img[b - 1] = img[b - 1], img[a - 1]
    return Permutation(img, check=False)


def lambda_op(tau: Permutation, r: int, i: int) -> Permutation:
    """Force position ``i + 1`` to hold ``r`` with at most one swap."""
    n = tau.n
    if not 1 <= r <= n:
        raise ParameterError(f"r={r} outside 1..{n}")
    if not 0 <= i <= n - 1:
        raise ParameterError(f"i={i} outside 0..{n - 1}")
    if tau(i + 1) == r:
        return tau
    return exchange(tau, i + 1, tau.position_of(r))


def lambda_op_batch(perms: np.ndarray, r: int, i: int) -> np.ndarray:
    """Row-wise ``lambda_op`` on an ``(m, n)`` array of 1-based permutations."""
    perms = np.asarray(perms)
    m, n = perms.shape
    if not 1 <= r <= n or not 0 <= i <= n - 1:
        raise ParameterError(f"(r={r}, i={i}) out of range for n={n}")
    out = perms.copy()
    rows = np.arange(m)
    j = np.argmax(perms == r, axis=1)
    out[rows, j] = perms[:, i]
    out[:, i] = r
    return out


def mismatch_count(sigma: Permutation, sigma_prime: Permutation, i: int) -> int:
    """Number of positions ``j <= i`` where the two permutations disagree."""
    if sigma.n != sigma_prime.n:
        raise ParameterError(f"length mismatch: {sigma.n} vs {sigma_prime.n}")
    if not 0 <= i <= sigma.n:
        raise ParameterError(f"i={i} outside 0..{sigma.n}")
    return int(np.count_nonzero(sigma.image[:i] != sigma_prime.image[:i]))


def prefix_mismatches(perms_a: np.ndarray, perms_b: np.ndarray) -> np.ndarray:
    """Cumulative mismatch counts: column ``i`` holds the count over positions ``<= i``.

    Returns an ``(m, n + 1)`` array whose column 0 is zero.
    """
    diff = np.asarray(perms_a) != np.asarray(perms_b)
    out = np.zeros((diff.shape[0], diff.shape[1] + 1), dtype=np.int64)
    np.cumsum(diff, axis=1, out=out[:, 1:])
    return out


def all_permutations(n: int) -> np.ndarray:
    """All ``n!`` permutations of ``1..n`` in lexicographic order, shape ``(n!, n)``."""
    return np.array(list(itertools.permutations(range(1, n + 1))), dtype=np.int64)


def lambda_pushforward_matches(n: int, r: int, i: int) -> bool:
    """Exact check that Lambda_{r,i} maps uniform permutations onto the law given tau(i+1)=r.

    Enumerates all ``n!`` inputs; the pushforward must put mass ``1/(n-1)!`` on
    each permutation with ``r`` at position ``i + 1`` and nothing elsewhere.
    """
    pushed = Counter(lambda_op(Permutation(p, check=False), r, i).as_tuple() for p in all_permutations(n))
    target = [tuple(p) for p in all_permutations(n) if p[i] == r]
    if set(pushed) != set(target):
        return False
    # each target carries n preimages out of n! -> mass 1/(n-1)!
    return all(c == n for c in pushed.values())
