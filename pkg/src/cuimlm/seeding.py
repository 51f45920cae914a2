"""Labelled sub-streams derived from one master seed.

Each consumer ("init", "mask", "shuffle", ...) hashes its label into the seed
sequence, so adding a consumer never perturbs the draws of the others.
"""

import hashlib

import numpy as np

INIT = "init"
MASK = "mask"
SHUFFLE = "shuffle"


def label_key(label: str) -> int:
    return int.from_bytes(hashlib.sha256(label.encode("utf-8")).digest()[:8], "little")


def derive_rng(seed: int, label: str, *extra: int) -> np.random.Generator:
    entropy = [int(seed), label_key(label), *(int(x) for x in extra)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
