import numpy as np


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, bound: float = 2.0) -> np.ndarray:
    """Normal(0, std) samples redrawn until they fall within +-bound standard deviations."""
    z = rng.standard_normal(shape)
    bad = np.abs(z) > bound
    while bad.any():
        z[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(z) > bound
    return z * std


def conv_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """He normal scaled by fan-out for a (C_out, C_in/groups, k, k) kernel.

    A depth-wise kernel (C_in/groups == 1) has fan-out k*k.
    """
    c_out, c_in, kh, kw = shape
    fan_out = kh * kw * (1 if c_in == 1 else c_out)
    return rng.normal(0.0, np.sqrt(2.0 / fan_out), shape)
