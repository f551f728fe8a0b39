"""Counter-based random substreams.

Every stream is a Philox generator keyed by ``(seed, replicate, purpose)``
through :class:`numpy.random.SeedSequence`, so a replicate's draws never
depend on how many other replicates ran before it or on which worker ran it.
Per-individual reproducibility comes from drawing fixed-width blocks: row
``i`` of ``uniform_block(stream, n, k)`` is the same for any ``n > i``.
"""

import numpy as np

# purpose tags; appended to the spawn key
CALIBRATION = 1
CROSS_SECTION = 2
FRR = 3
AUXILIARY = 4


def substream(seed, replicate=0, purpose=0):
    """Return an independent generator for ``(seed, replicate, purpose)``."""
    if seed is None:
        raise ValueError("an explicit seed is required")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(replicate), int(purpose)))
    return np.random.Generator(np.random.Philox(ss))


def uniform_block(rng, n, k):
    """Draw an ``(n, k)`` block of uniforms on the open interval (0, 1)."""
    u = rng.random((n, k))
    # random() is on [0, 1); inverse-CDF transforms need the open interval
    return np.where(u == 0.0, np.nextafter(0.0, 1.0), u)


def as_generator(rng):
    """Coerce a seed, ``None`` or a Generator into a Generator."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)
