"""Counter-based uniform streams built on numpy's Philox bit generator.

Every random number in the package is addressed, not drawn from mutable
state: a stream is identified by a 128-bit key (seed word + domain word)
and a 256-bit starting counter.  Distinct domains (substrate generation,
sweep dynamics, forward-chain sampling) can therefore never collide even
when they share a seed, and any block of variates can be regenerated in
isolation.  Uniforms are mapped from the top 53 bits of each raw 64-bit
word, so values depend only on the published Philox4x64 stream and not on
numpy Generator internals.
"""

from __future__ import annotations

import numpy as np

# Name recorded in persisted files; bump the suffix if the mapping from
# (key, counter) to uniforms ever changes.
GENERATOR_ID = "philox4x64-raw53/v1"

# Domain words, placed in the high byte of the second key word.
DOMAIN_SUBSTRATE = 1
DOMAIN_SWEEP = 2
DOMAIN_CHAIN = 3

_U53 = np.float64(2.0**-53)
_MASK64 = (1 << 64) - 1


def _domain_word(domain: int, stream: int) -> int:
    if not 0 <= stream < (1 << 56):
        raise ValueError(f"stream tag out of range: {stream}")
    return (domain << 56) | stream


def uniforms(seed: int, domain: int, stream: int, counter: tuple[int, int], n: int) -> np.ndarray:
    """Return ``n`` doubles in [0, 1) from the addressed Philox stream.

    ``counter`` fills the two high words of the 256-bit Philox counter;
    the low words are left for block consumption, so up to 2**128 words
    can be drawn from one address without touching a neighbouring stream.
    """
    key = np.array([seed & _MASK64, _domain_word(domain, stream)], dtype=np.uint64)
    ctr = np.array([0, 0, counter[0] & _MASK64, counter[1] & _MASK64], dtype=np.uint64)
    raw = np.random.Philox(counter=ctr, key=key).random_raw(n)
    return (raw >> np.uint64(11)) * _U53


def substrate_uniforms(seed: int, n: int) -> np.ndarray:
    return uniforms(seed, DOMAIN_SUBSTRATE, 0, (0, 0), n)


def sweep_uniforms(seed: int, stream: int, sweep_index: int, phase: int, n: int) -> np.ndarray:
    return uniforms(seed, DOMAIN_SWEEP, stream, (sweep_index, phase), n)


def chain_uniforms(seed: int, n: int) -> np.ndarray:
    return uniforms(seed, DOMAIN_CHAIN, 0, (0, 0), n)
