from __future__ import annotations

import hashlib

import numpy as np


def prompt_seed(prompt: str) -> int:
    """Stable 64-bit hash of a prompt (independent of PYTHONHASHSEED)."""
    return int.from_bytes(hashlib.blake2b(prompt.encode("utf-8"), digest_size=8).digest(), "little")


class MockTextEncoder:
    """Deterministic stand-in for a T5 encoder.

    prompt -> 64-bit hash -> seeded Gaussian (n_tokens, text_dim) -> fixed
    seeded linear map to d_model. Nothing here is learned.
    """

    def __init__(self, d_model: int, n_tokens: int = 4, text_dim: int = 64, seed: int = 0):
        self.n_tokens = n_tokens
        self.text_dim = text_dim
        rng = np.random.default_rng(seed)
        self.proj = rng.standard_normal((text_dim, d_model)) / np.sqrt(text_dim)

    def __call__(self, prompt: str) -> np.ndarray:
        g = np.random.default_rng(prompt_seed(prompt))
        return g.standard_normal((self.n_tokens, self.text_dim)) @ self.proj
