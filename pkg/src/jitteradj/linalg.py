"""Sparse symmetric positive-definite factorizations.

CHOLMOD (through scikit-sparse) is used when importable. Otherwise a
SuperLU factorization with symmetric ordering and no pivoting stands in;
for an SPD matrix its ``U`` factor is ``D L^T`` so log-determinants and
``L^{-T}`` solves follow directly.
"""

from __future__ import annotations

import os
import warnings

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NumericalError

try:
    if os.environ.get("JITTERADJ_NO_CHOLMOD", "") not in ("", "0"):
        raise ImportError
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        from sksparse.cholmod import CholmodNotPositiveDefiniteError
        from sksparse.cholmod import cholesky as _cholmod_cholesky
    BACKEND = "cholmod"
except ImportError:  # pragma: no cover - depends on the environment
    BACKEND = "superlu"


class NotPositiveDefinite(NumericalError):
    pass


class SparseCholesky:
    """Factor of a sparse SPD matrix ``A``.

    Parameters
    ----------
    A : sparse matrix
        Symmetric positive definite; only its full (both triangles) pattern is used.
    backend : {"cholmod", "superlu"}, optional
        Defaults to the best available backend.
    """

    def __init__(self, A, backend: str | None = None):
        self.backend = backend or BACKEND
        A = sp.csc_matrix(A)
        self.n = A.shape[0]
        if self.backend == "cholmod":
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    self._f = _cholmod_cholesky(A, mode="supernodal")
            except CholmodNotPositiveDefiniteError as exc:
                raise NotPositiveDefinite(str(exc)) from None
            ld = self._f.logdet()
            if not np.isfinite(ld):
                raise NotPositiveDefinite("non-finite log-determinant")
            self._logdet = float(ld)
        elif self.backend == "superlu":
            try:
                lu = spla.splu(
                    A,
                    permc_spec="MMD_AT_PLUS_A",
                    diag_pivot_thresh=0.0,
                    options={"SymmetricMode": True},
                )
            except RuntimeError as exc:
                raise NotPositiveDefinite(str(exc)) from None
            if not np.array_equal(lu.perm_r, lu.perm_c):
                raise NotPositiveDefinite("SuperLU pivoted; matrix is not SPD")
            diag = lu.U.diagonal()
            if np.any(~(diag > 0)):
                raise NotPositiveDefinite("non-positive pivot")
            self._lu = lu
            self._diag = diag
            self._U = sp.csr_matrix(lu.U)
            self._logdet = float(np.sum(np.log(diag)))
        else:
            raise ValueError(f"unknown backend {self.backend!r}")

    def logdet(self) -> float:
        return self._logdet

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        if self.backend == "cholmod":
            return self._f(b)
        return self._lu.solve(b)

    def inv_sqrt_transpose(self, z):
        """Return ``x`` with ``Cov(x) = A^{-1}`` when ``z`` is standard normal."""
        z = np.asarray(z, dtype=float)
        if self.backend == "cholmod":
            x = self._f.solve_Lt(z, use_LDLt_decomposition=False)
            return self._f.apply_Pt(x)
        scale = np.sqrt(self._diag)
        rhs = z * (scale[:, None] if z.ndim == 2 else scale)
        xp = spla.spsolve_triangular(self._U, rhs, lower=False)
        # SuperLU factors A' with A'[p[i], p[j]] = A[i, j]
        return xp[self._lu.perm_c]

    def inv_diag_quadform(self, B):
        """Return ``diag(B A^{-1} B^T)`` for a sparse or dense ``B`` (rows are queries)."""
        B = sp.csr_matrix(B)
        out = np.empty(B.shape[0])
        chunk = 1024
        for i in range(0, B.shape[0], chunk):
            Bi = B[i:i + chunk]
            X = self.solve(Bi.T.toarray())
            out[i:i + chunk] = np.asarray(Bi.multiply(X.T).sum(axis=1)).ravel()
        return out


def cholesky(A, backend: str | None = None) -> SparseCholesky:
    return SparseCholesky(A, backend=backend)
