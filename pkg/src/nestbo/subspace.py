"""Nested sparse sign embeddings (count-sketch style) with bin splitting.

Each ambient coordinate ``i`` is tied to one subspace coordinate ``bin[i]``
with a sign ``sign[i]``, so the implied m x d matrix S has exactly one +-1
entry per column and ``x = S^T v``. Splitting a bin gives half of its ambient
coordinates a fresh subspace coordinate; old subspace points are lifted by
copying the parent value into the child, which leaves their ambient images
unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EXPANSION_WINDOW = 10


@dataclass(frozen=True, eq=False)
class SplitEvent:
    old_dim: int
    new_dim: int
    parent_of: tuple[int, ...]  # parent bin of every new bin (identity for old bins)


@dataclass(frozen=True, eq=False)
class Embedding:
    ambient_dim: int
    target_dim: int
    bins: np.ndarray  # (d,) int in [0, m)
    signs: np.ndarray  # (d,) +-1
    history: tuple[SplitEvent, ...] = field(default=())

    def __post_init__(self):
        bins = np.asarray(self.bins, dtype=int)
        signs = np.asarray(self.signs, dtype=float)
        if bins.shape != (self.ambient_dim,) or signs.shape != (self.ambient_dim,):
            raise ValueError("bins and signs need one entry per ambient dimension")
        if bins.min() < 0 or bins.max() >= self.target_dim:
            raise ValueError("bin index out of range")
        if not np.all(np.abs(signs) == 1.0):
            raise ValueError("signs must be +-1")
        bins.setflags(write=False)
        signs.setflags(write=False)
        object.__setattr__(self, "bins", bins)
        object.__setattr__(self, "signs", signs)

    def matrix(self) -> np.ndarray:
        """Dense m x d projection S."""
        S = np.zeros((self.target_dim, self.ambient_dim))
        S[self.bins, np.arange(self.ambient_dim)] = self.signs
        return S

    def bin_sizes(self) -> np.ndarray:
        return np.bincount(self.bins, minlength=self.target_dim)

    @property
    def saturated(self) -> bool:
        return self.target_dim >= self.ambient_dim

    def to_dict(self) -> dict:
        return {
            "ambient_dim": self.ambient_dim,
            "target_dim": self.target_dim,
            "assignment": [[int(b), int(s)] for b, s in zip(self.bins, self.signs)],
            "history": [
                {"old_dim": e.old_dim, "new_dim": e.new_dim, "parent_of": list(e.parent_of)}
                for e in self.history
            ],
        }


def new_embedding(d: int, m0: int, rng=None) -> Embedding:
    """Balanced random assignment: dims dealt round-robin over a random permutation."""
    if not 1 <= m0 <= d:
        raise ValueError(f"need 1 <= m0 <= d, got m0={m0}, d={d}")
    rng = np.random.default_rng(rng)
    perm = rng.permutation(d)
    bins = np.empty(d, dtype=int)
    bins[perm] = np.arange(d) % m0
    signs = rng.choice([-1.0, 1.0], size=d)
    return Embedding(d, m0, bins, signs)


def project_up(e: Embedding, v, bounds=None) -> np.ndarray:
    """Map subspace point(s) in [-1, 1]^m to the ambient box.

    Without ``bounds`` the result stays in [-1, 1]^d.
    """
    v = np.asarray(v, dtype=float)
    single = v.ndim == 1
    V = np.atleast_2d(v)
    if V.shape[1] != e.target_dim:
        raise ValueError(f"v has dimension {V.shape[1]}, embedding has {e.target_dim}")
    X = V[:, e.bins] * e.signs
    if bounds is not None:
        b = np.asarray(bounds, dtype=float)
        lo, hi = b[:, 0], b[:, 1]
        X = lo + (X + 1.0) * 0.5 * (hi - lo)
        X = np.clip(X, lo, hi)
    return X[0] if single else X


def split(e: Embedding, data_v, rng=None) -> tuple[Embedding, np.ndarray, bool]:
    """Split every bin holding >= 2 ambient dims into two children.

    Returns ``(new_embedding, lifted_data, saturated)``. When no bin can be
    split the inputs come back unchanged with ``saturated=True``.
    """
    data_v = np.asarray(data_v, dtype=float).reshape(-1, e.target_dim)
    sizes = e.bin_sizes()
    if not np.any(sizes >= 2):
        return e, data_v.copy(), True
    rng = np.random.default_rng(rng)
    bins = e.bins.copy()
    parent_of = list(range(e.target_dim))
    m_new = e.target_dim
    for b in range(e.target_dim):
        members = np.flatnonzero(e.bins == b)
        if members.size < 2:
            continue
        members = rng.permutation(members)
        moved = members[: members.size // 2]
        bins[moved] = m_new
        parent_of.append(b)
        m_new += 1
    lifted = data_v[:, parent_of]
    event = SplitEvent(e.target_dim, m_new, tuple(parent_of))
    new = Embedding(e.ambient_dim, m_new, bins, e.signs.copy(), e.history + (event,))
    return new, lifted, False


def should_expand(incumbents, window: int = EXPANSION_WINDOW, rtol: float = 1e-12) -> bool:
    """True iff the last ``window`` iterations brought no strict improvement.

    ``incumbents`` holds the incumbent best value at the end of each completed
    iteration (since the last expansion), oldest first.
    """
    vals = np.asarray(incumbents, dtype=float)
    if vals.size < window:
        return False
    tail = vals[-window - 1 :] if vals.size > window else vals[-window:]
    prev, cur = tail[:-1], tail[1:]
    improved = cur < prev - rtol * np.abs(prev)
    return not bool(np.any(improved))
