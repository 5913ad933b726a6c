"""Two-level linear algebra.

States are complex numpy vectors of shape ``(2,)`` and operators complex
arrays of shape ``(2, 2)``.  The basis order is fixed everywhere in the
package: index 0 is the ground state ``|g>``, index 1 the excited state
``|e>``.
"""

from __future__ import annotations

import numpy as np

ALGEBRA_TOL = 1e-12
ACCUM_TOL = 1e-10

GROUND = np.array([1.0, 0.0], dtype=complex)
EXCITED = np.array([0.0, 1.0], dtype=complex)

IDENTITY = np.eye(2, dtype=complex)
# sigma = |g><e| lowers the qubit
SIGMA = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)
SIGMA_DAG = SIGMA.conj().T
SIGMA_Z = np.array([[-1.0, 0.0], [0.0, 1.0]], dtype=complex)
SIGMA_X = SIGMA + SIGMA_DAG
PROJ_G = np.array([[1.0, 0.0], [0.0, 0.0]], dtype=complex)
PROJ_E = np.array([[0.0, 0.0], [0.0, 1.0]], dtype=complex)


def state(amp_g: complex, amp_e: complex) -> np.ndarray:
    return np.array([amp_g, amp_e], dtype=complex)


def normalize(psi: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(psi)
    if norm == 0.0:
        raise ZeroDivisionError("cannot normalize the zero vector")
    return psi / norm


def apply(op: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """Return ``op @ psi`` without normalizing."""
    return op @ psi


def expectation(op: np.ndarray, psi: np.ndarray) -> complex:
    return complex(np.vdot(psi, op @ psi))


def dagger(op: np.ndarray) -> np.ndarray:
    return op.conj().T


def anticommutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b + b @ a


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b - b @ a


def density_from_pure(psi: np.ndarray) -> np.ndarray:
    return np.outer(psi, psi.conj())


def trace(rho: np.ndarray) -> complex:
    return complex(np.trace(rho))


def purity(rho: np.ndarray) -> float:
    return float(np.real(np.trace(rho @ rho)))


def is_hermitian(op: np.ndarray, tol: float = ALGEBRA_TOL) -> bool:
    return bool(np.max(np.abs(op - op.conj().T)) <= tol)


def hermitize(rho: np.ndarray) -> np.ndarray:
    return 0.5 * (rho + rho.conj().T)


def check_density(rho: np.ndarray) -> None:
    """Raise ``ValueError`` unless ``rho`` is a valid qubit density matrix."""
    if rho.shape != (2, 2):
        raise ValueError(f"density matrix must be 2x2, got {rho.shape}")
    if not is_hermitian(rho):
        raise ValueError("density matrix is not Hermitian")
    if abs(trace(rho) - 1.0) > ACCUM_TOL:
        raise ValueError(f"density matrix trace {trace(rho).real!r} != 1")
    if np.min(np.linalg.eigvalsh(rho)) < -ACCUM_TOL:
        raise ValueError("density matrix has a negative eigenvalue")


def unitary_step(h: np.ndarray, dt: float) -> np.ndarray:
    """``exp(-i dt h)`` for a Hermitian ``h``; also works on stacks ``(..., 2, 2)``."""
    w, v = np.linalg.eigh(h)
    phases = np.exp(-1j * dt * w)
    return (v * phases[..., None, :]) @ np.swapaxes(v.conj(), -1, -2)
