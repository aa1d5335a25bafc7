import hashlib

import numpy as np


def derive_seed(seed: int, *parts: object) -> int:
    """Stable child seed for a named sub-stream (dataset split, center draw, ...).

    Mixes the parts into a sha1 so unrelated streams never share state and
    adding a new stream does not perturb existing ones.
    """
    key = "|".join([f"seed={seed}"] + [str(p) for p in parts])
    return int.from_bytes(hashlib.sha1(key.encode("utf-8")).digest()[:8], "little")


def rng_for(seed: int, *parts: object) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *parts))


def epoch_seed(seed: int, epoch: int) -> int:
    # shuffle order for one epoch
    return int(seed) ^ int(epoch)
