"""Reproducible alpha-stable and Gaussian increments.

Conventions
-----------
* :func:`sample_standard_stable` emits the *primitive* variate, with
  characteristic function ``exp(-|u|^alpha)``.  At ``alpha = 2`` this is
  ``N(0, 2)``.
* :func:`increment` emits SDE noise increments for a step ``eta``.  For the
  stable kinds it applies the calibration ``eta^(1/alpha) / sigma_tilde``
  with ``sigma_tilde = (alpha / (2 c_alpha))^(1/alpha)``; pass
  ``calibrated=False`` to get ``eta^(1/alpha)`` times the primitive instead.
* Rotationally symmetric vectors are Gaussian mixtures ``sqrt(2 S) G`` with
  ``S`` positive (alpha/2)-stable (Laplace transform ``exp(-s^(alpha/2))``)
  and ``G`` standard normal.  That vector has characteristic function
  ``exp(-|u|^alpha)`` exactly, so no numerical calibration is needed.

Streams
-------
:class:`RngStream` wraps a Philox counter-based generator keyed by
``(master_seed, stream_index)``.  Any stream can be rebuilt from its two
integers without replaying other streams, which is what makes ensembles
independent of scheduling.
"""

import math
from enum import Enum

import numpy as np


class NoiseKind(str, Enum):
    BROWNIAN = "Brownian"
    CYLINDRICAL = "CylindricalStable"
    ROTATIONAL = "RotationalStable"


_MASK64 = (1 << 64) - 1


class RngStream:
    """A single-owner random stream identified by ``(master_seed, stream_index)``."""

    def __init__(self, master_seed, stream_index=0):
        self.master_seed = int(master_seed) & _MASK64
        self.stream_index = int(stream_index) & _MASK64
        key = np.array([self.master_seed, self.stream_index], dtype=np.uint64)
        self._bitgen = np.random.Philox(key=key)
        self.generator = np.random.Generator(self._bitgen)

    @property
    def counter(self):
        """Low 64 bits of the Philox block counter (advances as draws are made)."""
        return int(self._bitgen.state["state"]["counter"][0])

    def __repr__(self):
        return (f"RngStream(master_seed={self.master_seed}, "
                f"stream_index={self.stream_index}, counter={self.counter})")


def c_alpha(alpha):
    """Normalising constant of the Levy density ``c_alpha |z|^(-1-alpha)``.

    With this constant the one-dimensional process has symbol ``|u|^alpha``.
    The closed form is defined on ``0 < alpha < 2``; ``alpha = 2`` hits the
    pole of ``Gamma(1 - alpha/2)``.
    """
    alpha = float(alpha)
    if not 0.0 < alpha < 2.0:
        raise ValueError(f"c_alpha needs 0 < alpha < 2, got {alpha}")
    return (alpha * 2.0 ** (alpha - 1) / math.sqrt(math.pi)
            * math.gamma((1 + alpha) / 2) / math.gamma(1 - alpha / 2))


def sigma_tilde(alpha):
    """Noise calibration ``(alpha / (2 c_alpha))^(1/alpha)`` used by the stable increments."""
    return (alpha / (2.0 * c_alpha(alpha))) ** (1.0 / alpha)


def _open_uniform(gen, size):
    # (0, 1]: keeps cos(U) > 0 after the shift below
    return 1.0 - gen.random(size)


def _cms_symmetric(alpha, u, e):
    # u in (0, 1], e ~ Exp(1)
    U = math.pi * (u - 0.5)
    if alpha == 2.0:
        return 2.0 * np.sin(U) * np.sqrt(e)
    return (np.sin(alpha * U) / np.cos(U) ** (1.0 / alpha)
            * (np.cos((1.0 - alpha) * U) / e) ** ((1.0 - alpha) / alpha))


def sample_standard_stable(alpha, stream, size=None):
    """Symmetric alpha-stable variates with characteristic function ``exp(-|u|^alpha)``.

    Chambers-Mallows-Stuck: with U uniform on (-pi/2, pi/2) and E ~ Exp(1),
    ``sin(aU)/cos(U)^(1/a) * (cos((1-a)U)/E)^((1-a)/a)``.  All uniforms of a
    call are drawn before the exponentials.
    """
    alpha = float(alpha)
    if not 1.0 < alpha <= 2.0:
        raise ValueError(f"alpha must lie in (1, 2], got {alpha}")
    gen = stream.generator
    u = _open_uniform(gen, size)
    e = gen.standard_exponential(size)
    out = _cms_symmetric(alpha, u, e)
    return float(out) if size is None else out


def _kanter_positive(a, u, e):
    # u in (0, 1], e ~ Exp(1); Laplace transform exp(-s^a)
    U = math.pi * u
    return (np.sin(a * U) / np.sin(U) ** (1.0 / a)
            * (np.sin((1.0 - a) * U) / e) ** ((1.0 - a) / a))


def sample_positive_stable(alpha_half, stream, size=None):
    """Totally skewed positive stable variates with ``E exp(-sS) = exp(-s^alpha_half)``."""
    a = float(alpha_half)
    if not 0.0 < a < 1.0:
        raise ValueError(f"alpha_half must lie in (0, 1), got {a}")
    gen = stream.generator
    # U on (0, pi): avoid the endpoint pi where sin(U) = 0
    u = gen.random(size)
    u = np.where(u == 0.0, 0.5, u)
    e = gen.standard_exponential(size)
    out = _kanter_positive(a, u, e)
    return float(out) if size is None else out


def _validate_kind(kind, alpha):
    kind = NoiseKind(kind)
    alpha = float(alpha)
    if kind is NoiseKind.BROWNIAN and alpha != 2.0:
        raise ValueError("Brownian noise requires alpha = 2")
    if kind is not NoiseKind.BROWNIAN and not 1.0 < alpha < 2.0:
        raise ValueError(f"{kind.value} noise requires 1 < alpha < 2, got {alpha}")
    return kind, alpha


def standard_block(kind, alpha, d, n_steps, stream):
    """Unscaled noise for ``n_steps`` steps, shape (n_steps, d).

    Stable kinds return primitive variates (symbol ``|u|^alpha`` per step of
    unit length); Brownian returns standard normals.  Draw order within a
    block is fixed: for stable kinds all uniforms, then all exponentials, then
    (rotational only) the Gaussian directions.
    """
    kind, alpha = _validate_kind(kind, alpha)
    gen = stream.generator
    if kind is NoiseKind.BROWNIAN:
        return gen.standard_normal((n_steps, d))
    if kind is NoiseKind.CYLINDRICAL:
        u = _open_uniform(gen, (n_steps, d))
        e = gen.standard_exponential((n_steps, d))
        return _cms_symmetric(alpha, u, e)
    u = gen.random(n_steps)
    u = np.where(u == 0.0, 0.5, u)
    e = gen.standard_exponential(n_steps)
    s = _kanter_positive(alpha / 2.0, u, e)
    g = gen.standard_normal((n_steps, d))
    return np.sqrt(2.0 * s)[:, None] * g


def step_scale(kind, alpha, eta, calibrated=True):
    """Multiplier turning a standard block row into an increment of step ``eta``."""
    kind, alpha = _validate_kind(kind, alpha)
    eta = np.asarray(eta, dtype=float)
    if np.any(eta < 0):
        raise ValueError("eta must be nonnegative")
    if kind is NoiseKind.BROWNIAN:
        return np.sqrt(eta)
    scale = eta ** (1.0 / alpha)
    return scale / sigma_tilde(alpha) if calibrated else scale


def increment(kind, alpha, d, eta, stream, calibrated=True):
    """One noise increment ``Delta Z`` over a step of length ``eta``; shape (d,)."""
    if not eta > 0:
        raise ValueError(f"eta must be positive, got {eta}")
    block = standard_block(kind, alpha, d, 1, stream)[0]
    return step_scale(kind, alpha, eta, calibrated) * block


def increments(kind, alpha, d, etas, stream, calibrated=True):
    """Increments for consecutive steps ``etas``; shape (len(etas), d)."""
    etas = np.asarray(etas, dtype=float)
    block = standard_block(kind, alpha, d, len(etas), stream)
    return step_scale(kind, alpha, etas, calibrated)[:, None] * block
