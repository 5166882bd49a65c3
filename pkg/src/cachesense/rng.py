"""Seed-stream discipline.

Every stochastic object (deployment, each source's innovations, each Markov
chain, a measurement schedule, an anchor draw) pulls from its own generator so
that adding or reordering consumers never perturbs the others.
"""

import zlib

import numpy as np


def _tag_word(tag):
    if isinstance(tag, (int, np.integer)):
        return int(tag) & 0xFFFFFFFF
    return zlib.crc32(str(tag).encode("utf-8"))


def substream(seed, *tags):
    """Independent generator keyed by a root seed and a label path.

    The same (seed, tags) pair always yields an identical stream; distinct
    label paths are statistically independent. A Generator passed as `seed`
    is returned unchanged so callers can hand a pre-derived stream straight
    through.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_tag_word(t) for t in tags]
    return np.random.default_rng(np.random.SeedSequence(entropy))
