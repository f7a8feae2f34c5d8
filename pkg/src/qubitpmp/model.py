"""Two-level Landau-Zener system with Lindblad damping on the Bloch ball.

The Hamiltonian is ``H(u) = sigma_x + u (xi sigma_x + sigma_z)`` with
``|u| <= u_bound``.  Writing ``H = h . sigma`` and
``rho = 1/2 + 1/2 r . sigma`` the equation of motion is

    dr/dt = 2 h x r - Gamma P r

which is linear in ``r``.  Drift and drive are therefore stored as 3x3
matrices (``f(r) = A r``, ``g(r) = B r``).

Dissipation rates are given as ``Gamma``.  The Lindblad rate ``gamma`` of
a single sigma_k channel relates to it through ``Gamma = 2 gamma``.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

CHANNELS = ("none", "uniform", "x", "y", "z")

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
IDENTITY2 = np.eye(2, dtype=complex)

NORM_TOL = 1e-12

# Bloch vectors of the ground states of sigma_x + 2 sigma_z / sigma_x - 2 sigma_z
RHO_I = np.array([-1.0, 0.0, -2.0]) / np.sqrt(5.0)
RHO_F = np.array([-1.0, 0.0, 2.0]) / np.sqrt(5.0)


@dataclass(frozen=True)
class SystemSpec:
    """Parameters of the controlled, possibly damped, qubit.

    ``channel`` is one of ``none``, ``uniform``, ``x``, ``y``, ``z``;
    ``gamma`` is the damping rate Gamma in units of the drift energy.
    """

    xi: float = 0.2
    channel: str = "none"
    gamma: float = 0.0
    u_bound: float = 1.0

    def __post_init__(self):
        channel = str(self.channel).lower()
        if channel not in CHANNELS:
            raise ValueError(f"unknown channel {self.channel!r}; expected one of {CHANNELS}")
        object.__setattr__(self, "channel", channel)
        object.__setattr__(self, "xi", float(self.xi))
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "u_bound", float(self.u_bound))
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if not self.u_bound > 0:
            raise ValueError(f"u_bound must be > 0, got {self.u_bound}")

    @property
    def dissipative(self) -> bool:
        return self.channel != "none" and self.gamma > 0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "SystemSpec":
        unknown = set(data) - {"xi", "channel", "gamma", "u_bound"}
        if unknown:
            raise ValueError(f"unknown SystemSpec keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "SystemSpec":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class PureState:
    """Normalized qubit state ``c0 |0> + c1 |1>``."""

    c0: complex
    c1: complex

    def __post_init__(self):
        object.__setattr__(self, "c0", complex(self.c0))
        object.__setattr__(self, "c1", complex(self.c1))

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.c0, self.c1], dtype=complex)

    @property
    def norm(self) -> float:
        return float(np.sqrt(abs(self.c0) ** 2 + abs(self.c1) ** 2))

    def normalized(self) -> "PureState":
        n = self.norm
        return PureState(self.c0 / n, self.c1 / n)

    @classmethod
    def from_vector(cls, v) -> "PureState":
        v = np.asarray(v, dtype=complex).reshape(2)
        return cls(v[0], v[1])

    @classmethod
    def from_angles(cls, theta: float, phi: float, phi0: float = 0.0) -> "PureState":
        """``e^{i phi0} (cos(theta/2), e^{i phi} sin(theta/2))``."""
        g = np.exp(1j * phi0)
        return cls(g * np.cos(theta / 2), g * np.exp(1j * phi) * np.sin(theta / 2))

    def angles(self) -> tuple[float, float, float]:
        """Inverse of :meth:`from_angles`; ``phi`` is returned in ``[0, 2 pi)``."""
        r0, r1 = abs(self.c0), abs(self.c1)
        theta = 2.0 * np.arctan2(r1, r0)
        phi0 = float(np.angle(self.c0)) if r0 > 0 else 0.0
        phi = float(np.angle(self.c1)) - phi0 if r1 > 0 else 0.0
        return float(theta), float(np.mod(phi, 2 * np.pi)), phi0


def psi_initial() -> PureState:
    """Ground state of ``sigma_x + 2 sigma_z``."""
    s5 = np.sqrt(5.0)
    return PureState.from_vector(np.array([1.0, -2.0 - s5]) / np.sqrt(10 + 4 * s5))


def psi_target() -> PureState:
    """Ground state of ``sigma_x - 2 sigma_z``."""
    s5 = np.sqrt(5.0)
    return PureState.from_vector(np.array([1.0, 2.0 - s5]) / np.sqrt(10 - 4 * s5))


def cross_matrix(v) -> np.ndarray:
    """Matrix ``K`` with ``K @ r == np.cross(v, r)``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def damping_projector(channel: str) -> np.ndarray:
    """Diagonal ``P`` for the channel; uniform damping is the identity."""
    if channel == "none":
        return np.zeros((3, 3))
    if channel == "uniform":
        return np.eye(3)
    diag = np.ones(3)
    diag["xyz".index(channel)] = 0.0
    return np.diag(diag)


def hamiltonian_vector(u: float, spec: SystemSpec) -> np.ndarray:
    """Field ``h = h0 + u h1 = (1 + u xi, 0, u)``."""
    return np.array([1.0 + u * spec.xi, 0.0, u])


def hamiltonian_matrix(u: float, spec: SystemSpec) -> np.ndarray:
    hx, hy, hz = hamiltonian_vector(u, spec)
    return hx * SIGMA_X + hy * SIGMA_Y + hz * SIGMA_Z


def drift_field(spec: SystemSpec) -> np.ndarray:
    """Matrix of ``r -> 2 x_hat x r - Gamma P r``."""
    A = 2.0 * cross_matrix((1.0, 0.0, 0.0))
    if spec.channel != "none":
        A = A - spec.gamma * damping_projector(spec.channel)
    return A


def drive_field(spec: SystemSpec) -> np.ndarray:
    """Matrix of ``r -> 2 (xi x_hat + z_hat) x r``."""
    return 2.0 * cross_matrix((spec.xi, 0.0, 1.0))


def field_matrix(u: float, spec: SystemSpec) -> np.ndarray:
    return drift_field(spec) + u * drive_field(spec)


def bloch_from_pure(psi: PureState) -> np.ndarray:
    """Expectation values ``(<sigma_x>, <sigma_y>, <sigma_z>)``."""
    if abs(psi.norm - 1.0) > NORM_TOL:
        raise ValueError(f"state is not normalized (norm={psi.norm!r})")
    c0, c1 = psi.c0, psi.c1
    off = np.conj(c0) * c1
    return np.array([2 * off.real, 2 * off.imag, abs(c0) ** 2 - abs(c1) ** 2])


def pure_from_bloch(r) -> PureState:
    """A pure state with Bloch vector ``r`` (unit length), phase fixed by real c0."""
    r = np.asarray(r, dtype=float)
    n = np.linalg.norm(r)
    if abs(n - 1.0) > 1e-9:
        raise ValueError(f"Bloch vector must have unit length for a pure state (|r|={n})")
    theta = np.arccos(np.clip(r[2] / n, -1.0, 1.0))
    phi = np.arctan2(r[1], r[0])
    return PureState.from_angles(theta, phi)


def density_matrix(r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    return 0.5 * (IDENTITY2 + r[0] * SIGMA_X + r[1] * SIGMA_Y + r[2] * SIGMA_Z)


def as_bloch(r, tol: float = 1e-9) -> np.ndarray:
    """Validate a Bloch vector (three reals, ``|r| <= 1``)."""
    r = np.asarray(r, dtype=float).reshape(-1)
    if r.shape != (3,):
        raise ValueError(f"Bloch vector needs 3 components, got {r.shape[0]}")
    if np.linalg.norm(r) > 1.0 + tol:
        raise ValueError(f"|r| = {np.linalg.norm(r):.12g} exceeds 1")
    return r
