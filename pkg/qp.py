# Copyright (C) 2025, Kan Torii (qoolloop).
"""
Convex quadratic programs by operator splitting.

Solves::

    minimize    1/2 x' P x + q' x
    subject to  l <= A x <= u

with the alternating-direction iteration on the split `z = A x`, `z` projected
onto the box `[l, u]`. The KKT matrix is factorized once with
`scipy.sparse.linalg.splu()` and refactorized only when the step size `rho`
is adapted. When the residuals are small, the active set is guessed from the
dual variables and the equality-constrained problem on that set is solved
directly ("polishing"), which gives solutions accurate to round-off.

Equality rows are rows with `l == u`. Rows with both bounds infinite are
allowed and carry no constraint.

A :class:`QpKernel` keeps `P`, `A` and the factorization, so that a sequence
of problems differing only in `q`, `l` and `u` (consensus iterations,
branch-and-bound nodes) is solved without rebuilding.
"""

from __future__ import annotations

from dataclasses import dataclass
import enum
import logging

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import sparse
from scipy.sparse.linalg import SuperLU, splu

from . import settings
from .checks import finite, imperative, precondition, shaped
from .errors import DimensionMismatch, Unbounded

_logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]

_SIGMA = 1e-6
_ALPHA = 1.6
_RHO_MIN = 1e-6
_RHO_MAX = 1e6
_RHO_EQUALITY_SCALE = 1e3
_CHECK_INTERVAL = 25
_ADAPT_THRESHOLD = 5.0
_INFEASIBILITY_TOL = 1e-5
_POLISH_START = 1e4
_POLISH_DELTA = 1e-10
_POLISH_REFINE = 5
_EQUALITY_GAP = 1e-12


class QpStatus(enum.Enum):
    """Outcome of :meth:`QpKernel.solve()`."""

    SOLVED = 'solved'
    MAX_ITER = 'maximum iterations'
    PRIMAL_INFEASIBLE = 'primal infeasible'
    DUAL_INFEASIBLE = 'dual infeasible'


@dataclass
class QpResult:
    """
    Solution of a QP.

    `y` holds the multipliers of the rows of `A`: positive where the upper
    bound is active, negative where the lower bound is.
    """

    x: FloatArray
    y: FloatArray
    objective: float
    status: QpStatus
    iterations: int
    polished: bool = False

    def is_solved(self) -> bool:
        """Tell whether the residuals reached the tolerances."""
        return self.status is QpStatus.SOLVED


def _norm(vector: FloatArray) -> float:
    return float(np.max(np.abs(vector))) if vector.size else 0.0


class QpKernel:
    """
    Factorized QP data.

    :param P: Positive semidefinite `(n, n)` matrix, dense or sparse. Only
      symmetric matrices are meaningful.
    :param A: `(m, n)` constraint matrix, dense or sparse.
    :param rho: Initial step size.

    :raise RejectedInput: Inconsistent shapes or non-finite entries.
    """

    def __init__(
        self,
        P: ArrayLike,  # noqa: N803
        A: ArrayLike,  # noqa: N803
        *,
        rho: float = 0.1,
    ) -> None:
        with precondition():
            p_matrix = sparse.csc_matrix(P, dtype=float)
            a_matrix = sparse.csc_matrix(A, dtype=float)
            n = p_matrix.shape[0]
            imperative(
                p_matrix.shape == (n, n),
                f"P must be square, got {p_matrix.shape}",
                reason=DimensionMismatch('P', (n, n), p_matrix.shape),
            )
            imperative(
                a_matrix.shape[1] == n,
                f"A has {a_matrix.shape[1]} columns, P has {n}",
                reason=DimensionMismatch('A', n, a_matrix.shape[1]),
            )
            finite('P', p_matrix.data)
            finite('A', a_matrix.data)
        # endwith

        self._P = p_matrix
        self._A = a_matrix
        self._At = a_matrix.T.tocsc()
        self.n = n
        self.m = a_matrix.shape[0]
        self._initial_rho = rho
        self._cache: tuple[float, bytes, SuperLU] | None = None

    def __repr__(self) -> str:
        return f"QpKernel(n={self.n}, m={self.m})"

    def _rho_vector(
        self, lower: FloatArray, upper: FloatArray, rho: float
    ) -> FloatArray:
        vector = np.full(self.m, rho)
        vector[(upper - lower) <= _EQUALITY_GAP] = _RHO_EQUALITY_SCALE * rho
        vector[np.isinf(lower) & np.isinf(upper)] = _RHO_MIN
        return vector

    def _factor(self, rho_vector: FloatArray, rho: float) -> SuperLU:
        key = rho_vector.tobytes()
        if self._cache is not None and self._cache[:2] == (rho, key):
            return self._cache[2]

        kkt = sparse.bmat(
            [
                [self._P + _SIGMA * sparse.identity(self.n), self._At],
                [self._A, -sparse.diags(1.0 / rho_vector)],
            ],
            format='csc',
        )
        factor = splu(kkt)
        self._cache = (rho, key, factor)
        _logger.debug("Factorized KKT matrix of size %d, rho=%g", kkt.shape[0], rho)
        return factor

    def objective(self, x: FloatArray, q: FloatArray) -> float:
        """Value of `1/2 x' P x + q' x`."""
        return float(0.5 * x @ (self._P @ x) + q @ x)

    def solve(
        self,
        q: ArrayLike,
        lower: ArrayLike,
        upper: ArrayLike,
        *,
        x0: ArrayLike | None = None,
        y0: ArrayLike | None = None,
        eps_abs: float | None = None,
        eps_rel: float | None = None,
        max_iter: int | None = None,
        polish: bool = True,
    ) -> QpResult:
        """
        Solve for a linear term and bounds.

        :param q: Linear term, `(n,)`.
        :param lower: Lower bounds of the rows, `-inf` allowed.
        :param upper: Upper bounds of the rows, `inf` allowed.
        :param x0: Warm start of the primal variables.
        :param y0: Warm start of the multipliers.
        :param eps_abs: Absolute tolerance. Setting `qp_eps_abs` if `None`.
        :param eps_rel: Relative tolerance. Setting `qp_eps_rel` if `None`.
        :param max_iter: Iteration cap. Setting `qp_max_iter` if `None`.
        :param polish: Whether to refine on the detected active set.

        :raise RejectedInput: Shapes differ, or a lower bound is above its
          upper bound.
        """
        linear = finite('q', q).ravel()
        shaped('q', linear, (self.n,))
        low = np.asarray(lower, dtype=float).ravel()
        high = np.asarray(upper, dtype=float).ravel()
        shaped('lower', low, (self.m,))
        shaped('upper', high, (self.m,))
        imperative(
            not (np.any(np.isnan(low)) or np.any(np.isnan(high)))
            and bool(np.all(low <= high)),
            "QP bounds must satisfy lower <= upper",
            reason=Unbounded('qp bounds'),
        )
        eps_abs = settings.get('qp_eps_abs') if eps_abs is None else eps_abs
        eps_rel = settings.get('qp_eps_rel') if eps_rel is None else eps_rel
        max_iter = settings.get('qp_max_iter') if max_iter is None else max_iter

        x = np.zeros(self.n) if x0 is None else finite('x0', x0).ravel().copy()
        y = np.zeros(self.m) if y0 is None else finite('y0', y0).ravel().copy()
        shaped('x0', x, (self.n,))
        shaped('y0', y, (self.m,))
        z = np.clip(self._A @ x, low, high)

        rho = self._cache[0] if self._cache is not None else self._initial_rho
        rho_vector = self._rho_vector(low, high, rho)
        factor = self._factor(rho_vector, rho)

        status = QpStatus.MAX_ITER
        iteration = 0
        for iteration in range(1, max_iter + 1):  # noqa: B007
            x_prev, y_prev, z_prev = x, y, z
            rhs = np.concatenate(
                (_SIGMA * x_prev - linear, z_prev - y_prev / rho_vector)
            )
            solution = factor.solve(rhs)
            x_tilde = solution[: self.n]
            z_tilde = z_prev + (solution[self.n :] - y_prev) / rho_vector

            x = _ALPHA * x_tilde + (1 - _ALPHA) * x_prev
            z_relaxed = _ALPHA * z_tilde + (1 - _ALPHA) * z_prev
            z = np.clip(z_relaxed + y_prev / rho_vector, low, high)
            y = y_prev + rho_vector * (z_relaxed - z)

            ax = self._A @ x
            px = self._P @ x
            aty = self._At @ y
            r_prim = _norm(ax - z)
            r_dual = _norm(px + linear + aty)
            eps_prim = eps_abs + eps_rel * max(_norm(ax), _norm(z))
            eps_dual = eps_abs + eps_rel * max(_norm(px), _norm(aty), _norm(linear))

            if r_prim <= eps_prim and r_dual <= eps_dual:
                status = QpStatus.SOLVED
                break

            if iteration % _CHECK_INTERVAL:
                continue

            if self._primal_infeasible(y - y_prev, low, high):
                status = QpStatus.PRIMAL_INFEASIBLE
                break

            if self._dual_infeasible(x - x_prev, linear, low, high):
                status = QpStatus.DUAL_INFEASIBLE
                break

            if polish and r_prim <= _POLISH_START * eps_prim and (
                r_dual <= _POLISH_START * eps_dual
            ):
                polished = self._polish(z, y, linear, low, high, eps_abs, eps_rel)
                if polished is not None:
                    return self._result(polished[0], polished[1], linear, iteration)

            # endif

            scale_prim = max(_norm(ax), _norm(z), 1e-30)
            scale_dual = max(_norm(px), _norm(aty), _norm(linear), 1e-30)
            ratio = (r_prim / scale_prim) / max(r_dual / scale_dual, 1e-30)
            new_rho = float(np.clip(rho * np.sqrt(ratio), _RHO_MIN, _RHO_MAX))
            if new_rho > _ADAPT_THRESHOLD * rho or new_rho < rho / _ADAPT_THRESHOLD:
                _logger.debug(
                    "Iteration %d: residuals %.3g/%.3g, rho %g -> %g",
                    iteration,
                    r_prim,
                    r_dual,
                    rho,
                    new_rho,
                )
                rho = new_rho
                rho_vector = self._rho_vector(low, high, rho)
                factor = self._factor(rho_vector, rho)

            # endif
        # endfor

        if status in (QpStatus.PRIMAL_INFEASIBLE, QpStatus.DUAL_INFEASIBLE):
            _logger.debug("QP %s after %d iterations", status.value, iteration)
            return QpResult(x, y, np.inf, status, iteration)

        if polish:
            polished = self._polish(z, y, linear, low, high, eps_abs, eps_rel)
            if polished is not None:
                return self._result(polished[0], polished[1], linear, iteration)

        # endif

        if status is QpStatus.MAX_ITER:
            _logger.debug("QP reached %d iterations without converging", iteration)

        return QpResult(x, y, self.objective(x, linear), status, iteration)

    def _result(
        self, x: FloatArray, y: FloatArray, linear: FloatArray, iteration: int
    ) -> QpResult:
        return QpResult(
            x, y, self.objective(x, linear), QpStatus.SOLVED, iteration, polished=True
        )

    def _primal_infeasible(
        self, dy: FloatArray, lower: FloatArray, upper: FloatArray
    ) -> bool:
        direction = dy.copy()
        direction[np.isinf(upper) & (direction > 0)] = 0.0
        direction[np.isinf(lower) & (direction < 0)] = 0.0
        size = _norm(direction)
        if size <= 1e-12:
            return False

        if _norm(self._At @ direction) > _INFEASIBILITY_TOL * size:
            return False

        finite_upper = np.where(np.isinf(upper), 0.0, upper)
        finite_lower = np.where(np.isinf(lower), 0.0, lower)
        support = float(
            finite_upper @ np.maximum(direction, 0.0)
            + finite_lower @ np.minimum(direction, 0.0)
        )
        return support < -_INFEASIBILITY_TOL * size

    def _dual_infeasible(
        self,
        dx: FloatArray,
        linear: FloatArray,
        lower: FloatArray,
        upper: FloatArray,
    ) -> bool:
        size = _norm(dx)
        if size <= 1e-12:
            return False

        tol = _INFEASIBILITY_TOL * size
        if _norm(self._P @ dx) > tol or float(linear @ dx) >= -tol:
            return False

        adx = self._A @ dx
        return not (
            np.any(np.isfinite(upper) & (adx > tol))
            or np.any(np.isfinite(lower) & (adx < -tol))
        )

    def _polish(
        self,
        z: FloatArray,
        y: FloatArray,
        linear: FloatArray,
        lower: FloatArray,
        upper: FloatArray,
        eps_abs: float,
        eps_rel: float,
    ) -> tuple[FloatArray, FloatArray] | None:
        equality = (upper - lower) <= _EQUALITY_GAP
        at_lower = ((z - lower) < -y) & ~equality
        at_upper = ((upper - z) < y) & ~equality
        rows = np.flatnonzero(at_lower | at_upper | equality)
        target = np.where(at_lower, lower, upper)[rows]

        n_active = rows.size
        a_active = self._A[rows]
        identity = sparse.identity(self.n)
        if n_active:
            regularized = sparse.bmat(
                [
                    [self._P + _POLISH_DELTA * identity, a_active.T],
                    [a_active, -_POLISH_DELTA * sparse.identity(n_active)],
                ],
                format='csc',
            )
            exact = sparse.bmat(
                [
                    [self._P, a_active.T],
                    [a_active, sparse.csc_matrix((n_active, n_active))],
                ],
                format='csc',
            )

        else:
            regularized = (self._P + _POLISH_DELTA * identity).tocsc()
            exact = self._P

        # endif

        try:
            factor = splu(regularized)

        except RuntimeError:
            _logger.debug("Polishing failed: singular reduced KKT matrix")
            return None

        # endtry

        rhs = np.concatenate((-linear, target))
        solution = factor.solve(rhs)
        for _ in range(_POLISH_REFINE):
            solution = solution + factor.solve(rhs - exact @ solution)

        polished_x = solution[: self.n]
        polished_y = np.zeros(self.m)
        polished_y[rows] = solution[self.n :]

        ax = self._A @ polished_x
        px = self._P @ polished_x
        aty = self._At @ polished_y
        r_prim = _norm(ax - np.clip(ax, lower, upper))
        r_dual = _norm(px + linear + aty)
        eps_prim = eps_abs + eps_rel * _norm(ax)
        eps_dual = eps_abs + eps_rel * max(_norm(px), _norm(aty), _norm(linear))
        signs_hold = not (
            np.any(polished_y[at_lower] > eps_dual)
            or np.any(polished_y[at_upper] < -eps_dual)
        )
        if r_prim <= eps_prim and r_dual <= eps_dual and signs_hold:
            _logger.debug("Polished on %d active rows", n_active)
            return polished_x, polished_y

        return None


def solve_qp(
    P: ArrayLike,  # noqa: N803
    q: ArrayLike,
    A: ArrayLike,  # noqa: N803
    lower: ArrayLike,
    upper: ArrayLike,
    **options: float | bool | ArrayLike | None,
) -> QpResult:
    """
    Solve one QP.

    >>> result = solve_qp([[2.0]], [-2.0], [[1.0]], [-0.5], [0.5])
    >>> result.status.value, round(float(result.x[0]), 9)
    ('solved', 0.5)

    :param options: Keyword arguments of :meth:`QpKernel.solve()`.
    """
    return QpKernel(P, A).solve(q, lower, upper, **options)  # type: ignore[arg-type]
