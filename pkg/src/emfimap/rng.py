"""Counter-based 64-bit random stream used by every simulated target.

All randomness in the package flows through :func:`mix64`, the splitmix64
output function, so a trial is reproducible from its seed alone on any
platform or interpreter.

Constants::

    GOLDEN = 0x9E3779B97F4A7C15
    z = x + GOLDEN
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z =  z ^ (z >> 31)

all arithmetic modulo 2**64.
"""

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_INV_2_53 = 1.0 / (1 << 53)


def mix64(x: int) -> int:
    """Return the splitmix64 output for state ``x``."""
    z = (x + GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def derive_trial_seed(campaign_seed: int, coordinate_index: int,
                      param_index: int, trial_index: int) -> int:
    """Stateless per-trial seed.

    Each step is a bijection of the running hash, so seeds that differ only
    in their last index never collide.
    """
    h = mix64(campaign_seed & MASK64)
    for v in (coordinate_index, param_index, trial_index):
        h = mix64(h ^ (v & MASK64))
    return h


class TrialRng:
    """Sequential draws from ``mix64(seed + k * GOLDEN)``, k = 0, 1, 2, ..."""

    __slots__ = ("seed", "counter")

    def __init__(self, seed: int):
        self.seed = seed & MASK64
        self.counter = 0

    def next_u64(self) -> int:
        out = mix64((self.seed + self.counter * GOLDEN) & MASK64)
        self.counter += 1
        return out

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 bits of resolution."""
        return (self.next_u64() >> 11) * _INV_2_53

    def randbelow(self, n: int) -> int:
        """Uniform integer in [0, n); exact for n far below 2**64."""
        if n <= 0:
            raise ValueError("n must be positive")
        return int(self.random() * n)

    def choice_weighted(self, weights) -> int:
        """Index drawn with probability proportional to ``weights``."""
        total = sum(weights)
        u = self.random() * total
        acc = 0.0
        last = 0
        for i, w in enumerate(weights):
            if w <= 0:
                continue
            acc += w
            last = i
            if u < acc:
                return i
        return last
