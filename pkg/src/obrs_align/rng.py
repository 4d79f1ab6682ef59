"""Counter-based pseudo-random streams keyed by integer tuples.

Every random draw in this package is a pure function of a seed plus a small
tuple of integer keys — e.g. ``(trajectory_id, position)`` for token masks,
or a bare proposal index for the rejection sampler.  Draws are therefore
order-independent and splittable: any worker can evaluate any subset of keys
in any order and reproduce the identical stream, which is what makes the
determinism contracts (same seed => bitwise-identical outputs, regardless of
sharding) testable.

The construction chains the splitmix64 output permutation over the key
tuple: ``state' = finalize(state + GOLDEN * key)``.  The finalizer is a
bijection on 64-bit words and the per-key update is injective in ``key`` for
a fixed state, so distinct equal-length key tuples collide only at the
additive birthday bound.  Scalar (Python int) and vectorized (uint64 numpy)
paths implement the same function and are cross-checked in tests.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "fold",
    "derive_state",
    "keyed_uniform",
    "fold_array",
    "uniform_from_state",
    "uniform_array",
    "uniform_counter_block",
]

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

_U64_GOLDEN = np.uint64(_GOLDEN)
_U64_MIX1 = np.uint64(_MIX1)
_U64_MIX2 = np.uint64(_MIX2)
_SHIFT_30 = np.uint64(30)
_SHIFT_27 = np.uint64(27)
_SHIFT_31 = np.uint64(31)
_SHIFT_11 = np.uint64(11)
_INV_2_53 = 1.0 / float(1 << 53)


def _finalize(z: int) -> int:
    """splitmix64 output permutation (bijective on 64-bit words)."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def fold(state: int, key: int) -> int:
    """Absorb one integer key into a 64-bit state."""
    return _finalize((state + _GOLDEN * (key & _MASK64)) & _MASK64)


def derive_state(seed: int, *keys: int) -> int:
    """Chain-fold a seed and key tuple into a 64-bit stream state."""
    state = fold(0, seed)
    for key in keys:
        state = fold(state, key)
    return state


def uniform_from_state(state: int) -> float:
    """Map a 64-bit state to a float64 uniform in [0, 1)."""
    return (state >> 11) * _INV_2_53


def keyed_uniform(seed: int, *keys: int) -> float:
    """Uniform in [0, 1), a pure function of (seed, *keys)."""
    return uniform_from_state(derive_state(seed, *keys))


def _finalize_array(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> _SHIFT_30)
    z = z * _U64_MIX1
    z = z ^ (z >> _SHIFT_27)
    z = z * _U64_MIX2
    return z ^ (z >> _SHIFT_31)


def fold_array(state: int | np.ndarray, keys: np.ndarray) -> np.ndarray:
    """Vectorized :func:`fold`: absorb an array of keys elementwise.

    ``state`` may be a scalar (broadcast) or an array of per-element states
    from a previous fold.
    """
    keys_u64 = np.asarray(keys).astype(np.uint64)
    if isinstance(state, (int, np.integer)):
        state_u64 = np.uint64(int(state) & _MASK64)
    else:
        state_u64 = state
    return _finalize_array(state_u64 + _U64_GOLDEN * keys_u64)


def uniform_array(state: np.ndarray) -> np.ndarray:
    """Map an array of 64-bit states to float64 uniforms in [0, 1)."""
    return (state >> _SHIFT_11).astype(np.float64) * _INV_2_53


def uniform_counter_block(seed: int, stream: int, start: int, count: int) -> np.ndarray:
    """Uniforms for counter indices ``start .. start+count-1`` of a stream.

    Equivalent to ``[keyed_uniform(seed, stream, i) for i in range(...)]``
    but vectorized; used by the rejection sampler's proposal loop.
    """
    base = derive_state(seed, stream)
    idx = np.arange(start, start + count, dtype=np.uint64)
    return uniform_array(fold_array(base, idx))
