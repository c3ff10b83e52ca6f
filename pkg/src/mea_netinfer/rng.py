"""Counter-based random streams.

Every random draw in the package comes from a Philox generator whose key is
derived from ``(seed, purpose, *indices)``. Two draws that share a key get the
same numbers no matter which thread or process asks for them, so results do
not depend on scheduling or on how many workers run.
"""
import numpy as np

# stream purposes
INIT = 0
AUX = 1
ROW = 2
HYPER = 3
SIMULATE = 4
NETWORK = 5
REGION = 6


def stream(seed, purpose, *indices):
    """Return an independent ``numpy.random.Generator`` for the given key."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, int(purpose)] + [int(i) for i in indices]
    key = np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def derive_seed(seed, purpose, *indices):
    """Derive a child integer seed, e.g. one per region of a split run."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, int(purpose)] + [int(i) for i in indices]
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint32)[0])
