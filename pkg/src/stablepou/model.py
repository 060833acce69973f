"""Piecewise Ornstein-Uhlenbeck model: drift, mollification, assumption checks.

The drift is

    g(x) = l - M x + (e'x)^+ (M - Gamma) v,

which is linear on each side of the hyperplane ``e'x = 0``.  On the
hyperplane itself the ``e'x <= 0`` branch is used.

The mollified drift replaces the positive part by the C^2 function
``rho_eps``.  Because ``0 <= rho_eps(y) - y^+ <= eps`` on ``|y| <= eps`` and
the two agree elsewhere, the gap between the drifts obeys

    |g_eps(x) - g(x)| <= |(M - Gamma) v| * eps * 1{|e'x| <= eps},

which is the explicit constant used by :func:`drift_gap_bound`.

Batched evaluation: every function accepting a state ``x`` also accepts an
``(n, d)`` array and works row by row.  Matrix-vector products are unrolled
over columns in a fixed order so that a row's result does not depend on how
many rows are evaluated together.
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.linalg import solve_continuous_lyapunov

from .errors import CertificateNotFound
from .noise import NoiseKind

__all__ = [
    "ModelSpec",
    "StabilityCertificate",
    "Assumption1Branch",
    "Assumption1Report",
    "example_1d",
    "example_2d",
    "drift",
    "mollifier_rho",
    "mollifier_rho_dot",
    "mollified_drift",
    "mollified_drift_jacobian",
    "drift_gap_bound",
    "jacobian_op_bound",
    "check_m_matrix",
    "check_assumption1",
    "certificate_for",
    "find_stability_certificate",
    "dissipation_gap",
]


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Coefficients of ``dX = g(X) dt + sigma dZ``.

    ``Gamma`` holds the diagonal of the abandonment matrix only.  Arrays are
    copied and made read-only on construction.
    """

    d: int
    ell: np.ndarray
    M: np.ndarray
    Gamma: np.ndarray
    v: np.ndarray
    sigma: np.ndarray
    alpha: float
    noise_kind: NoiseKind = NoiseKind.CYLINDRICAL

    def __post_init__(self):
        d = self.d
        if not isinstance(d, (int, np.integer)) or d < 1:
            raise ValueError(f"d must be a positive integer, got {d!r}")
        object.__setattr__(self, "d", int(d))
        object.__setattr__(self, "noise_kind", NoiseKind(self.noise_kind))
        object.__setattr__(self, "alpha", float(self.alpha))
        shapes = {"ell": (d,), "M": (d, d), "Gamma": (d,), "v": (d,), "sigma": (d, d)}
        for name, shape in shapes.items():
            arr = _frozen(getattr(self, name))
            if arr.shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, arr)
        if np.any(self.Gamma < 0):
            raise ValueError("Gamma entries must be nonnegative")
        if np.any(self.v < 0):
            raise ValueError("v entries must be nonnegative")
        if abs(self.v.sum() - 1.0) > 1e-12:
            raise ValueError(f"v must sum to 1 (got {self.v.sum()!r})")
        sv = np.linalg.svd(self.sigma, compute_uv=False)
        if sv[-1] < 1e-12 * sv[0]:
            raise ValueError("sigma must be nonsingular")
        if not 1.0 < self.alpha <= 2.0:
            raise ValueError(f"alpha must lie in (1, 2], got {self.alpha}")
        if (self.noise_kind is NoiseKind.BROWNIAN) != (self.alpha == 2.0):
            raise ValueError("noise_kind Brownian is required exactly when alpha = 2")

    @property
    def jump_vector(self):
        """``(M - Gamma) v``: the drift correction per unit of ``(e'x)^+``."""
        return self.M @ self.v - self.Gamma * self.v

    @property
    def upper_matrix(self):
        """Drift matrix on ``e'x > 0``: ``M - (M - Gamma) v e'``."""
        return self.M - np.outer(self.jump_vector, np.ones(self.d))

    def replace(self, **changes):
        kw = {k: getattr(self, k) for k in
              ("d", "ell", "M", "Gamma", "v", "sigma", "alpha", "noise_kind")}
        kw.update(changes)
        return ModelSpec(**kw)


def example_1d(alpha=1.5):
    """Scalar G/M/N+M limit with l = -1, M = 1, Gamma = 2 (so g(x) = -1 - 2x for x > 0)."""
    kind = NoiseKind.BROWNIAN if alpha == 2 else NoiseKind.CYLINDRICAL
    return ModelSpec(d=1, ell=[-1.0], M=[[1.0]], Gamma=[2.0], v=[1.0],
                     sigma=[[1.0]], alpha=alpha, noise_kind=kind)


def example_2d(alpha=1.8):
    """Two-class 'V' network: M = diag(2, 1), Gamma = diag(1, 2), v = (1/2, 1/2)."""
    kind = NoiseKind.BROWNIAN if alpha == 2 else NoiseKind.CYLINDRICAL
    return ModelSpec(d=2, ell=[-0.5, -0.25], M=[[2.0, 0.0], [0.0, 1.0]],
                     Gamma=[1.0, 2.0], v=[0.5, 0.5], sigma=np.eye(2),
                     alpha=alpha, noise_kind=kind)


def _as_state(spec, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (spec.d,) or x.ndim > 2:
        raise ValueError(f"state must have trailing dimension {spec.d}, got shape {x.shape}")
    return x


def _rowsum(x):
    s = x[..., 0].copy()
    for k in range(1, x.shape[-1]):
        s = s + x[..., k]
    return s


def _matvec(A, x):
    """A @ x for a single state or row-wise for a batch, in fixed column order."""
    out = A[:, 0] * x[..., 0:1]
    for k in range(1, A.shape[1]):
        out = out + A[:, k] * x[..., k:k + 1]
    return out


def drift(spec, x):
    """Piecewise-linear drift ``g(x)``."""
    x = _as_state(spec, x)
    s = _rowsum(x)
    pos = np.where(s > 0, s, 0.0)
    return spec.ell - _matvec(spec.M, x) + pos[..., None] * spec.jump_vector


def _check_eps(eps):
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")


def mollifier_rho(eps, y):
    """C^2 smoothing of ``y^+``; exact outside ``[-eps, eps]``."""
    _check_eps(eps)
    y = np.asarray(y, dtype=float)
    quartic = 3 * eps / 16 - y**4 / (16 * eps**3) + 3 * y**2 / (8 * eps) + y / 2
    out = np.where(y > eps, y, np.where(y < -eps, 0.0, quartic))
    return out if out.ndim else float(out)


def mollifier_rho_dot(eps, y):
    """Derivative of :func:`mollifier_rho`; takes values in [0, 1]."""
    _check_eps(eps)
    y = np.asarray(y, dtype=float)
    cubic = -y**3 / (4 * eps**3) + 3 * y / (4 * eps) + 0.5
    out = np.where(y > eps, 1.0, np.where(y < -eps, 0.0, cubic))
    return out if out.ndim else float(out)


def mollified_drift(spec, eps, x):
    """``g_eps(x) = l - M x + (M - Gamma) v rho_eps(e'x)``."""
    x = _as_state(spec, x)
    r = np.asarray(mollifier_rho(eps, _rowsum(x)))
    return spec.ell - _matvec(spec.M, x) + r[..., None] * spec.jump_vector


def mollified_drift_jacobian(spec, eps, x):
    """``grad g_eps(x) = -M + rho_eps'(e'x) (M - Gamma) v e'``; shape (d, d) or (n, d, d)."""
    x = _as_state(spec, x)
    rd = np.asarray(mollifier_rho_dot(eps, _rowsum(x)))
    rank_one = np.outer(spec.jump_vector, np.ones(spec.d))
    return -spec.M + rd[..., None, None] * rank_one


def drift_gap_bound(spec, eps, x):
    """Computable upper bound on ``|g_eps(x) - g(x)|``."""
    x = _as_state(spec, x)
    inside = np.abs(_rowsum(x)) <= eps
    return np.where(inside, np.linalg.norm(spec.jump_vector) * eps, 0.0)


def jacobian_op_bound(spec):
    """``C_op = |M|_op + |(M - Gamma) v e'|_op``, a uniform bound on the Jacobian norm."""
    rank_one = np.outer(spec.jump_vector, np.ones(spec.d))
    return np.linalg.norm(spec.M, 2) + np.linalg.norm(rank_one, 2)


def check_m_matrix(M, rtol=1e-10):
    """True iff ``M`` is an M-matrix: Z-pattern and ``M = sI - N`` with ``rho(N) <= s``."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"M must be square, got shape {M.shape}")
    off = M - np.diag(np.diag(M))
    if np.any(off > 0):
        return False
    s = float(np.max(np.diag(M)))
    if s <= 0:
        return False
    N = s * np.eye(M.shape[0]) - M
    radius = float(np.max(np.abs(np.linalg.eigvals(N))))
    return radius <= s * (1 + rtol)


class Assumption1Branch(str, Enum):
    MV_DOMINATES = "MvDominates"
    DIAGONAL_M = "DiagonalM"
    NEITHER = "Neither"


@dataclass(frozen=True)
class Assumption1Report:
    holds: bool
    branch: Assumption1Branch


def check_assumption1(spec, atol=1e-12):
    """Classify the model against the two admissible structural conditions.

    Branch (i), ``Mv >= Gamma v`` with ``Gamma v`` nonnegative and nonzero,
    takes precedence when both apply.
    """
    Mv = spec.M @ spec.v
    Gv = spec.Gamma * spec.v
    gv_nonzero = bool(np.any(Gv > atol))
    if np.all(Mv >= Gv - atol) and np.all(Gv >= -atol) and gv_nonzero:
        return Assumption1Report(True, Assumption1Branch.MV_DOMINATES)
    off = spec.M - np.diag(np.diag(spec.M))
    if np.all(off == 0) and np.all(np.diag(spec.M) > 0) and gv_nonzero:
        return Assumption1Report(True, Assumption1Branch.DIAGONAL_M)
    return Assumption1Report(False, Assumption1Branch.NEITHER)


@dataclass(frozen=True, eq=False)
class StabilityCertificate:
    """Positive-definite Q with the rates it certifies.

    ``lam = min(lambda1, lambda2)`` and ``theta = lam / (2 lambda_max(Q)^2)``.
    """

    Q: np.ndarray
    lambda1: float
    lambda2: float
    lam: float
    theta: float
    method: str = field(default="identity")

    @property
    def q_max(self):
        return float(np.linalg.eigvalsh(self.Q)[-1])

    @property
    def q_min(self):
        return float(np.linalg.eigvalsh(self.Q)[0])

    @property
    def condition(self):
        """``lambda_max(Q) / lambda_min(Q)``, the prefactor in the contraction bounds."""
        ev = np.linalg.eigvalsh(self.Q)
        return float(ev[-1] / ev[0])

    @property
    def flow_rate(self):
        """Exponential decay rate ``lam / lambda_max(Q)`` of the squared Jacobi flow."""
        return self.lam / self.q_max


def _sym_min_eig(A, Q):
    S = A.T @ Q + Q @ A
    return float(np.linalg.eigvalsh(0.5 * (S + S.T))[0])


def certificate_for(spec, Q, method="given"):
    """Evaluate the rates certified by a given Q (validity is not enforced)."""
    Q = np.array(Q, dtype=float)
    Q = 0.5 * (Q + Q.T)
    lam1 = _sym_min_eig(spec.M, Q)
    lam2 = _sym_min_eig(spec.upper_matrix, Q)
    lam = min(lam1, lam2)
    qmax = float(np.linalg.eigvalsh(Q)[-1])
    Q.setflags(write=False)
    return StabilityCertificate(Q=Q, lambda1=lam1, lambda2=lam2, lam=lam,
                                theta=lam / (2 * qmax**2), method=method)


def _normalized(Q):
    Q = 0.5 * (Q + Q.T)
    return Q / np.max(np.abs(np.linalg.eigvalsh(Q)))


def find_stability_certificate(spec, grid_steps=200):
    """Search for Q making both symmetrised drift matrices positive definite.

    Tries ``Q = I`` first.  Otherwise solves ``A'Q + QA = I`` for the two
    branch matrices, normalises both solutions to unit spectral radius and
    line-searches the segment between them for the largest scale-free
    margin ``min(lambda1, lambda2) / lambda_max(Q)``.  The returned Q has
    ``lambda_max(Q) = 1`` on that path.
    """
    if grid_steps < 1:
        raise ValueError("grid_steps must be a positive integer")
    ident = certificate_for(spec, np.eye(spec.d), method="identity")
    if ident.lambda1 > 0 and ident.lambda2 > 0:
        return ident

    A1, A2 = spec.M, spec.upper_matrix
    eye = np.eye(spec.d)
    candidates = []
    for A in (A1, A2):
        try:
            Qa = solve_continuous_lyapunov(A.T, eye)
        except (np.linalg.LinAlgError, ValueError):
            continue
        if np.all(np.isfinite(Qa)):
            candidates.append(_normalized(Qa))
    if len(candidates) == 1:
        candidates.append(candidates[0])
    if not candidates:
        raise CertificateNotFound("Lyapunov equations are singular for both branches")

    Q1, Q2 = candidates
    best, best_margin = None, -np.inf
    for w in np.linspace(0.0, 1.0, grid_steps + 1):
        Qw = (1 - w) * Q1 + w * Q2
        ev = np.linalg.eigvalsh(0.5 * (Qw + Qw.T))
        if ev[0] <= 0:
            continue
        Qw = Qw / ev[-1]
        margin = min(_sym_min_eig(A1, Qw), _sym_min_eig(A2, Qw))
        if margin > best_margin:
            best, best_margin = (w, Qw), margin
    if best is None or best_margin <= 0:
        raise CertificateNotFound(
            "no point of the Lyapunov segment certifies both branches",
            diagnostics={"best_margin": best_margin,
                         "best_w": None if best is None else best[0],
                         "grid_steps": grid_steps})
    return certificate_for(spec, best[1], method=f"lyapunov-segment(w={best[0]:.6g})")


def dissipation_gap(spec, eps, cert, x, y):
    """``<Q(x-y), g_eps(x) - g_eps(y)> + (lam/2)|x-y|^2``; nonpositive for a valid certificate."""
    x = _as_state(spec, x)
    y = _as_state(spec, y)
    diff = x - y
    sq = _rowsum(diff * diff)
    if np.any(sq == 0):
        raise ValueError("dissipation_gap needs x != y")
    dg = mollified_drift(spec, eps, x) - mollified_drift(spec, eps, y)
    Q = np.asarray(cert.Q)
    return _rowsum(_matvec(Q, diff) * dg) + 0.5 * cert.lam * sq
