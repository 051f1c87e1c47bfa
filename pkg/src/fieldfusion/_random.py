"""Counter-based uniforms: the value for (seed, stream, ray, k) never depends on scheduling."""
import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(x: np.ndarray) -> np.ndarray:
    # splitmix64 finalizer
    x = x ^ (x >> np.uint64(30))
    x = x * _M1
    x = x ^ (x >> np.uint64(27))
    x = x * _M2
    return x ^ (x >> np.uint64(31))


def counter_uniforms(seed: int, stream: int, ray_ids, n: int) -> np.ndarray:
    """Uniforms in [0, 1) of shape ``(len(ray_ids), n)``."""
    ray_ids = np.asarray(ray_ids, dtype=np.uint64).reshape(-1, 1)
    with np.errstate(over="ignore"):
        key = _mix(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) * _GOLDEN + np.uint64(stream & 0xFFFFFFFF))
        x = _mix(key ^ _mix(ray_ids * _GOLDEN + np.uint64(1)))
        x = _mix(x + np.arange(n, dtype=np.uint64)[None, :] * _GOLDEN)
    return (x >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
