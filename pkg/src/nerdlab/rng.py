"""Seeded, splittable random streams.

Every random draw in nerdlab goes through an :class:`RngStream`.  Streams are
derived from a 64-bit seed plus a key path such as ``("s03", "nerd", "train")``
so that each subject/purpose pair gets an independent, reproducible sequence
no matter in which order work is scheduled.
"""

import hashlib

import numpy as np

from .errors import InvalidArgumentError

_U64 = 2**64


def _tag_to_int(tag):
    if isinstance(tag, (bool, np.bool_)):
        raise InvalidArgumentError("boolean stream tags are ambiguous")
    if isinstance(tag, (int, np.integer)):
        if tag < 0:
            raise InvalidArgumentError(f"integer stream tag must be >= 0, got {tag}")
        return int(tag) % _U64
    if isinstance(tag, str):
        return int.from_bytes(hashlib.sha256(tag.encode("utf-8")).digest()[:8], "little")
    raise InvalidArgumentError(f"unsupported stream tag type {type(tag).__name__}")


class RngStream:
    """A PCG64 generator bound to ``(seed, key)``.

    Instances are single-owner; split with :meth:`substream` before handing
    randomness to parallel workers.
    """

    def __init__(self, seed, key=()):
        seed = int(seed)
        if not 0 <= seed < _U64:
            raise InvalidArgumentError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self.key = tuple(_tag_to_int(k) for k in key)
        ss = np.random.SeedSequence(seed, spawn_key=self.key)
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def substream(self, *tags):
        """Independent child stream; does not advance this stream."""
        return RngStream(self.seed, self.key + tuple(_tag_to_int(t) for t in tags))

    @property
    def generator(self):
        return self._gen

    def normal(self, size=None):
        return self._gen.standard_normal(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def choice(self, n, size, replace=True):
        return self._gen.choice(n, size=size, replace=replace)

    def random_seed(self):
        """Draw a fresh 64-bit seed from this stream."""
        return int(self._gen.integers(0, _U64, dtype=np.uint64))

    # cursor save/restore for checkpoints
    def get_state(self):
        state = self._gen.bit_generator.state
        return {
            "bit_generator": state["bit_generator"],
            "state": {k: int(v) for k, v in state["state"].items()},
            "has_uint32": int(state["has_uint32"]),
            "uinteger": int(state["uinteger"]),
        }

    def set_state(self, state):
        self._gen.bit_generator.state = {
            "bit_generator": state["bit_generator"],
            "state": dict(state["state"]),
            "has_uint32": state["has_uint32"],
            "uinteger": state["uinteger"],
        }

    def __repr__(self):
        return f"RngStream(seed={self.seed}, key={self.key})"
