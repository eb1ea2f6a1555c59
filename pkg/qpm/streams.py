"""
Counter-based random streams.

Every (seed, trial) pair owns an independent Philox stream, and the draw for
layer i is the i-th double of that stream. Any layer can be reached directly
by advancing the counter, so results never depend on the order in which
trials are executed.
"""
import numpy as np

_MASK64 = (1 << 64) - 1

# Philox4x64 emits four 64-bit words per counter increment, one word per double
_WORDS_PER_BLOCK = 4


def trial_key(seed: int, trial: int) -> int:
    """128-bit Philox key: trial index in the high word, seed in the low word"""
    if trial < 0:
        raise ValueError(f"trial index must be non-negative, got {trial}")
    return ((trial & _MASK64) << 64) | (seed & _MASK64)


def trial_generator(seed: int, trial: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=trial_key(seed, trial)))


def trial_uniforms(seed: int, trial: int, count: int) -> np.ndarray:
    """The first `count` draws of a trial stream, in [0, 1)"""
    return trial_generator(seed, trial).random(count)


def layer_draw(seed: int, trial: int, layer: int) -> float:
    """
    Uniform draw for a single layer without generating the layers before it

    Args:
        seed: Run seed
        trial: Trial index
        layer: Layer index within the trial

    Returns:
        Same value as trial_uniforms(seed, trial, layer + 1)[layer]
    """
    if layer < 0:
        raise ValueError(f"layer index must be non-negative, got {layer}")
    bit_generator = np.random.Philox(key=trial_key(seed, trial))
    bit_generator.advance(layer // _WORDS_PER_BLOCK)
    offset = layer % _WORDS_PER_BLOCK
    return float(np.random.Generator(bit_generator).random(offset + 1)[offset])
