"""Secret keys and the keyed deterministic generator behind every shuffle.

Words come from BLAKE2b in counter mode, keyed with the 256-bit seed:
block ``i`` of stream ``tag`` is ``blake2b(tag || le64(i), key=seed)``,
split into eight little-endian uint64 words. The output is therefore
identical on every platform and easy to reproduce in other languages.
"""
from __future__ import annotations

import hashlib
import os
import secrets
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError

KEY_BYTES = 32
ENV_VAR = "HDRWM_KEY"
_WORDS_PER_BLOCK = 8
_MAX64 = np.uint64(0xFFFFFFFFFFFFFFFF)


@dataclass(frozen=True)
class SecretKey:
    seed: bytes

    def __post_init__(self):
        if not isinstance(self.seed, (bytes, bytearray)) or len(self.seed) != KEY_BYTES:
            raise ConfigError(f"key must be exactly {KEY_BYTES} bytes")
        object.__setattr__(self, "seed", bytes(self.seed))

    def __repr__(self):
        return f"SecretKey(fingerprint={self.fingerprint()})"

    @classmethod
    def from_hex(cls, text):
        text = text.strip()
        if len(text) != 2 * KEY_BYTES:
            raise ConfigError(f"key must be {2 * KEY_BYTES} hex characters, got {len(text)}")
        try:
            return cls(bytes.fromhex(text))
        except ValueError as exc:
            raise ConfigError(f"key is not valid hex: {exc}") from None

    @classmethod
    def from_file(cls, path):
        try:
            with open(path, "r", encoding="ascii") as fh:
                return cls.from_hex(fh.read())
        except (OSError, UnicodeDecodeError) as exc:
            raise ConfigError(f"cannot read key file {path}: {exc}") from exc

    @classmethod
    def from_env(cls, var=ENV_VAR):
        text = os.environ.get(var)
        if not text:
            raise ConfigError(f"no key given and ${var} is not set")
        return cls.from_hex(text)

    @classmethod
    def generate(cls):
        return cls(secrets.token_bytes(KEY_BYTES))

    @classmethod
    def from_int(cls, value):
        """Test/demo helper: the integer as a little-endian 256-bit seed."""
        return cls(int(value).to_bytes(KEY_BYTES, "little"))

    def hex(self):
        return self.seed.hex()

    def fingerprint(self):
        """Public 128-bit identifier; reveals nothing usable about the seed."""
        return hashlib.blake2b(b"fingerprint", key=self.seed, digest_size=16).hexdigest()

    def stream(self, tag):
        return KeyedStream(self, tag)


class KeyedStream:
    """Random-access uint64 words for one domain-separation tag."""

    def __init__(self, key, tag):
        self._seed = key.seed
        self._tag = tag.encode("ascii") if isinstance(tag, str) else bytes(tag)

    def block(self, index):
        msg = self._tag + int(index).to_bytes(8, "little")
        return hashlib.blake2b(msg, key=self._seed, digest_size=64).digest()

    def words(self, start, count):
        """Words ``start .. start+count-1`` of the stream as a uint64 array."""
        if count <= 0:
            return np.zeros(0, dtype=np.uint64)
        first, last = start // _WORDS_PER_BLOCK, (start + count - 1) // _WORDS_PER_BLOCK
        raw = b"".join(self.block(i) for i in range(first, last + 1))
        arr = np.frombuffer(raw, dtype="<u8").astype(np.uint64)
        offset = start - first * _WORDS_PER_BLOCK
        return arr[offset:offset + count]


def _accept_limit(bounds):
    # largest word that keeps ``word % bound`` unbiased
    bounds = bounds.astype(np.uint64)
    rem = (_MAX64 % bounds + np.uint64(1)) % bounds
    return _MAX64 - rem


def uniform_draws(stream, bounds, start=0):
    """One unbiased draw in ``[0, b)`` per entry of ``bounds``, by rejection.

    Draws consume stream words in order; a rejected word is skipped.
    Returns ``(draws, next_word_index)``.
    """
    bounds = np.asarray(bounds, dtype=np.uint64)
    out = np.empty(bounds.shape[0], dtype=np.int64)
    pos, cursor = 0, start
    while pos < bounds.shape[0]:
        b = bounds[pos:]
        w = stream.words(cursor, b.shape[0])
        bad = np.flatnonzero(w > _accept_limit(b))
        take = b.shape[0] if bad.size == 0 else int(bad[0])
        out[pos:pos + take] = (w[:take] % b[:take]).astype(np.int64)
        pos += take
        cursor += take + (1 if bad.size else 0)
    return out, cursor


def keyed_permutation(n, key, tag, backend=None):
    """Fisher-Yates permutation of ``range(n)`` driven by ``key.stream(tag)``.

    Step ``i`` (from ``n-1`` down to 1) swaps positions ``i`` and ``j``
    with ``j`` uniform in ``[0, i]``.
    """
    n = int(n)
    if n <= 1:
        return np.arange(max(n, 0), dtype=np.int64)
    draws, _ = uniform_draws(key.stream(tag), np.arange(n, 1, -1))
    targets = np.zeros(n, dtype=np.int64)
    targets[n - 1:0:-1] = draws
    return kernels.fisher_yates(targets, backend=backend)
