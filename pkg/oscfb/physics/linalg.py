"""
Dense kernels for the small matrices of the moment analysis (n in {2, 4, 10}).

Eigenvalues come from LAPACK's nonsymmetric driver through numpy (balancing,
Hessenberg reduction and shifted QR with deflation).
"""
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from oscfb.utils.exceptions import ConvergenceError, SingularMatrixError


logger = logging.getLogger(__name__)

SUPPORTED_SIZES = (2, 4, 10)
CONJUGATE_TOLERANCE = 1e-9
REAL_TOLERANCE = 1e-14


def as_square_matrix(a, sizes: Optional[Tuple[int, ...]] = SUPPORTED_SIZES) -> np.ndarray:
    """
    Coerce to a float64 square matrix with finite entries. The size must be
    one of sizes unless sizes is None.

    Raises:
        ValueError: wrong shape, unsupported size or non-finite entries
    """
    m = np.asarray(a, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if sizes is not None and m.shape[0] not in sizes:
        raise ValueError(f"matrix size {m.shape[0]} not in {sizes}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    return m


@dataclass(frozen=True)
class ComplexSpectrum:
    """
    Eigenvalues of a real matrix, sorted by descending real part then imaginary part.
    """
    values: np.ndarray

    @property
    def max_real(self) -> float:
        return float(np.max(self.values.real))

    @property
    def real(self) -> np.ndarray:
        return self.values.real

    def pairs(self) -> list[tuple[float, float]]:
        return [(float(v.real), float(v.imag)) for v in self.values]

    def __len__(self) -> int:
        return len(self.values)


def reciprocal_condition(a: np.ndarray) -> float:
    """
    Reciprocal 2-norm condition number (0 for a singular matrix).
    """
    s = np.linalg.svd(a, compute_uv=False)
    if s[0] == 0.0:
        return 0.0
    return float(s[-1] / s[0])


def solve(a, b) -> np.ndarray:
    """
    Solve a x = b.

    Raises:
        SingularMatrixError: when rcond(a) is below n * machine epsilon
    """
    m = as_square_matrix(a)
    rhs = np.asarray(b, dtype=float)
    if rhs.shape != (m.shape[0],):
        raise ValueError(f"right-hand side has shape {rhs.shape}, expected ({m.shape[0]},)")

    rcond = reciprocal_condition(m)
    if rcond < m.shape[0] * np.finfo(float).eps:
        logger.warning(f"Refusing to solve a singular system (rcond={rcond:.3e})")
        raise SingularMatrixError(rcond)

    x = np.linalg.solve(m, rhs)
    residual = np.max(np.abs(m @ x - rhs))
    if residual > 1e-10 * (1.0 + np.max(np.abs(rhs))):
        logger.warning(f"Large residual {residual:.3e} in linear solve (rcond={rcond:.3e})")
    return x


def eigenvalues(a, sizes: Optional[Tuple[int, ...]] = SUPPORTED_SIZES) -> ComplexSpectrum:
    """
    Eigenvalues of a real nonsymmetric matrix.

    Conjugate pairs are made exactly symmetric. Pass sizes=None for the
    larger matrices of a delay discretisation.

    Raises:
        ConvergenceError: when the QR iteration fails to converge
    """
    m = as_square_matrix(a, sizes)
    try:
        lam = np.linalg.eigvals(m)
    except np.linalg.LinAlgError as e:
        logger.error(f"Eigenvalue iteration failed: {e}", exc_info=True)
        raise ConvergenceError() from e

    lam = _symmetrise_conjugates(np.asarray(lam, dtype=complex))
    order = np.lexsort((-lam.imag, -lam.real))
    return ComplexSpectrum(values=lam[order])


def _symmetrise_conjugates(lam: np.ndarray) -> np.ndarray:
    """
    Pair each eigenvalue with its nearest conjugate and average the pair.
    """
    scale = max(1.0, float(np.max(np.abs(lam))))
    out = lam.copy()
    unpaired = list(range(len(lam)))
    while unpaired:
        i = unpaired.pop(0)
        if abs(lam[i].imag) <= REAL_TOLERANCE * scale:
            out[i] = complex(lam[i].real, 0.0)
            continue
        if not unpaired:
            break
        j = min(unpaired, key=lambda n: abs(lam[n] - np.conj(lam[i])))
        if abs(lam[j] - np.conj(lam[i])) > CONJUGATE_TOLERANCE * scale:
            continue
        unpaired.remove(j)
        re = 0.5 * (lam[i].real + lam[j].real)
        im = 0.5 * (abs(lam[i].imag) + abs(lam[j].imag))
        out[i] = complex(re, im if lam[i].imag > 0 else -im)
        out[j] = np.conj(out[i])
    return out
