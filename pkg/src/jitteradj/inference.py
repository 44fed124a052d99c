"""Empirical-Bayes inference for the jittered binomial geostatistical model.

The latent vector is ``x = (w, beta)``: SPDE basis weights followed by the
fixed effects (intercept first). Hyperparameters ``theta = (log sigma^2,
log rho)`` are fixed at their MAP value, found by minimizing the Laplace
approximation of ``-log pi(theta | y, s)``.
"""

from __future__ import annotations

import dataclasses
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize
from scipy.special import expit

from . import kernels
from .errors import ConvergenceError, InvalidInputError, NumericalError
from .jitter import AdminMap, IntegrationDesign, JitterScheme, integration_design, single_point_design
from .linalg import NotPositiveDefinite, SparseCholesky
from .mesh import TriangulationMesh, project
from .rasters import CovariateSet, Raster, extract
from .spde import Hyperparameters, PcPriorConfig, pc_prior_logdensity, precision

log = logging.getLogger(__name__)

MODES = ("unadj", "smoothed", "fulladj")
LOG_RHO_BOUNDS = (np.log(1.0), np.log(2000.0))
LOG_SIGMA2_BOUNDS = (-6.0, 6.0)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Cluster observations: ``y`` successes out of ``n`` at reported ``coords``."""

    y: np.ndarray
    n: np.ndarray
    coords: np.ndarray
    urban: np.ndarray
    ids: tuple = None
    admin_id: tuple = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        n = np.asarray(self.n, dtype=float)
        coords = np.atleast_2d(np.asarray(self.coords, dtype=float)).reshape(-1, 2)
        urban = np.asarray(self.urban, dtype=bool)
        C = len(coords)
        if not (len(y) == len(n) == len(urban) == C):
            raise InvalidInputError("y, n, coords and urban must have one entry per cluster")
        for c in range(C):
            if not (n[c] >= 1 and 0 <= y[c] <= n[c]):
                name = self.ids[c] if self.ids is not None else c
                raise InvalidInputError(f"cluster {name}: need 0 <= y <= n and n >= 1, got y={y[c]}, n={n[c]}")
        if not np.all(np.isfinite(coords)):
            raise InvalidInputError("cluster coordinates must be finite")
        ids = tuple(self.ids) if self.ids is not None else tuple(range(C))
        for name, val in (("y", y), ("n", n), ("coords", coords), ("urban", urban)):
            object.__setattr__(self, name, val)
        object.__setattr__(self, "ids", ids)

    def __len__(self):
        return len(self.y)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        adm = None if self.admin_id is None else tuple(self.admin_id[i] for i in idx)
        return Dataset(self.y[idx], self.n[idx], self.coords[idx], self.urban[idx],
                       tuple(self.ids[i] for i in idx), adm)


@dataclass(frozen=True)
class ModelSpec:
    """Model choice plus prior and integration settings.

    ``unadj`` and ``smoothed`` use a single point at the reported location;
    ``smoothed`` reads covariates as ``window`` x ``window`` km means.
    """

    mode: str = "fulladj"
    prior: PcPriorConfig = field(default_factory=PcPriorConfig)
    beta_prior_var: float = 25.0
    scheme: JitterScheme = field(default_factory=JitterScheme)
    rings_urban: int = 5
    rings_rural: int = 10
    points_per_ring: int = 15
    window: float = 5.0
    max_evals: int = 200

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidInputError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.beta_prior_var > 0:
            raise InvalidInputError("beta_prior_var must be positive")

    @property
    def covariate_window(self):
        return self.window if self.mode == "smoothed" else None


@dataclass(frozen=True, eq=False)
class ObservationModel:
    """Flattened integration points of the clusters kept for fitting.

    ``B = [A | X]`` maps the latent vector to the linear predictor at every
    point; points of kept cluster ``j`` occupy ``offsets[j]:offsets[j+1]``.
    """

    B: sp.csr_matrix
    log_alpha: np.ndarray
    offsets: np.ndarray
    y: np.ndarray
    n: np.ndarray
    clusters: np.ndarray
    points: np.ndarray
    n_nodes: int

    @property
    def n_points(self) -> int:
        return self.B.shape[0]

    @property
    def n_latent(self) -> int:
        return self.B.shape[1]

    @property
    def n_fixed(self) -> int:
        return self.B.shape[1] - self.n_nodes

    @property
    def aggregator(self) -> sp.csr_matrix:
        counts = np.diff(self.offsets)
        C = len(counts)
        return sp.csr_matrix(
            (np.ones(self.n_points), (np.repeat(np.arange(C), counts), np.arange(self.n_points))),
            shape=(C, self.n_points),
        )


def observation_design(data: Dataset, spec: ModelSpec, admin: AdminMap | None) -> IntegrationDesign:
    if spec.mode == "fulladj":
        return integration_design(data.coords, data.urban, admin, spec.scheme,
                                  spec.rings_urban, spec.rings_rural, spec.points_per_ring)
    return single_point_design(data.coords, data.urban)


def build_observation_model(data: Dataset, spec: ModelSpec, mesh: TriangulationMesh, covars: CovariateSet,
                            admin: AdminMap | None = None, design: IntegrationDesign | None = None
                            ) -> ObservationModel:
    """Project integration points on the mesh and read their covariates.

    Points outside the mesh or with a missing covariate lose their weight and
    the cluster's weights are renormalized; clusters left without points are
    dropped with a warning.
    """
    if design is None:
        design = observation_design(data, spec, admin)
    pts = design.points
    X = covars.design(pts, spec.covariate_window)
    proj = project(mesh, pts)
    w = np.where(np.isnan(X).any(axis=1) | proj.outside, 0.0, design.weights)
    counts = design.counts
    tot = np.add.reduceat(w, design.offsets[:-1]) if len(w) else np.zeros(0)
    keep_cluster = tot > 0
    if not np.all(keep_cluster):
        dropped = [data.ids[c] for c in np.nonzero(~keep_cluster)[0]]
        warnings.warn(f"excluding {len(dropped)} clusters with no usable integration point: {dropped[:10]}",
                      stacklevel=2)
    cidx = design.cluster_index
    w = w / np.where(tot > 0, tot, 1.0)[cidx]
    keep_pt = (w > 0) & keep_cluster[cidx]
    kept_cidx = cidx[keep_pt]
    clusters = np.nonzero(keep_cluster)[0]
    new_counts = np.bincount(kept_cidx, minlength=len(counts))[clusters]
    offsets = np.concatenate([[0], np.cumsum(new_counts)]).astype(np.int64)
    A = proj.rows[keep_pt]
    B = sp.hstack([A, sp.csr_matrix(X[keep_pt])], format="csr")
    return ObservationModel(
        B=B,
        log_alpha=np.log(w[keep_pt]),
        offsets=offsets,
        y=data.y[clusters],
        n=data.n[clusters],
        clusters=clusters,
        points=pts[keep_pt],
        n_nodes=mesh.n_nodes,
    )


class BinomialMixture:
    """``-sum_c log sum_k alpha_ck Bin(y_c; n_c, expit(eta_ck))`` without binomial coefficients."""

    def __init__(self, obs: ObservationModel):
        self.log_alpha = obs.log_alpha
        self.offsets = obs.offsets
        self.y = obs.y
        self.n = obs.n

    def terms(self, eta):
        if not np.all(np.isfinite(eta)):
            k = int(np.argmax(~np.isfinite(eta)))
            c = int(np.searchsorted(self.offsets, k, side="right") - 1)
            raise NumericalError(f"non-finite linear predictor at cluster {c}, point {k - self.offsets[c]}")
        if len(eta) == 0:
            return 0.0, np.zeros(0), np.zeros(0)
        return kernels.mixture_terms(eta, self.log_alpha, self.offsets, self.y, self.n)


class GaussianPseudoLikelihood:
    """Independent ``z_i ~ N(eta_i, r_i)`` observations, one point per cluster.

    Used to check the Laplace machinery against closed forms.
    """

    def __init__(self, z, r):
        self.z = np.asarray(z, dtype=float)
        self.r = np.asarray(r, dtype=float)

    def terms(self, eta):
        res = self.z - eta
        value = float(np.sum(0.5 * res**2 / self.r + 0.5 * np.log(2 * np.pi * self.r)))
        u = res / self.r
        d = 1.0 / self.r - u * u
        return value, u, d


@dataclass
class InnerResult:
    x: np.ndarray
    factor: SparseCholesky
    value: float
    iterations: int
    hessian: sp.csc_matrix = None


class LatentGaussianModel:
    """Negative log joint of ``x`` given ``theta`` and its Laplace marginal.

    Parameters
    ----------
    fem : FemMatrices
    B : sparse matrix
        Observation operator ``[A | X]`` with one row per integration point.
    offsets : array
        Cluster boundaries into the rows of ``B``.
    likelihood : object
        Provides ``terms(eta) -> (value, u, d)``; the likelihood Hessian in
        ``eta`` is ``diag(d) + sum_c u_c u_c^T``.
    """

    def __init__(self, fem, B, offsets, likelihood, prior: PcPriorConfig = PcPriorConfig(),
                 beta_prior_var: float = 25.0):
        self.fem = fem
        self.B = sp.csr_matrix(B)
        self.Bt = self.B.T.tocsr()
        self.offsets = np.asarray(offsets, dtype=np.int64)
        self.likelihood = likelihood
        self.prior = prior
        self.beta_prior_var = float(beta_prior_var)
        self.m = fem.C.shape[0]
        self.p = self.B.shape[1] - self.m
        counts = np.diff(self.offsets)
        self.S = sp.csr_matrix(
            (np.ones(self.B.shape[0]), (np.repeat(np.arange(len(counts)), counts), np.arange(self.B.shape[0]))),
            shape=(len(counts), self.B.shape[0]),
        )
        self._x_last = None
        self.n_objective_evals = 0

    @classmethod
    def from_observation_model(cls, fem, obs: ObservationModel, spec: ModelSpec) -> "LatentGaussianModel":
        return cls(fem, obs.B, obs.offsets, BinomialMixture(obs), spec.prior, spec.beta_prior_var)

    @property
    def n_latent(self) -> int:
        return self.m + self.p

    def prior_precision(self, theta: Hyperparameters) -> tuple[sp.csc_matrix, float]:
        """Block-diagonal precision of ``(w, beta)`` and its log-determinant."""
        Q = precision(self.fem, theta, check=False).Q
        try:
            ldQ = SparseCholesky(Q).logdet()
        except NotPositiveDefinite:
            raise NumericalError(f"SPDE precision is not positive definite at theta={theta}", theta=theta) from None
        Qx = sp.block_diag([Q, sp.identity(self.p) / self.beta_prior_var], format="csc")
        return Qx, ldQ - self.p * np.log(self.beta_prior_var)

    def neg_log_joint(self, x, theta=None, Qx=None, hessian=True):
        """Value, gradient and sparse Hessian of ``-log pi(y | x) + x^T Qx x / 2``."""
        if Qx is None:
            Qx, _ = self.prior_precision(theta)
        x = np.asarray(x, dtype=float)
        eta = self.B @ x
        val, u, d = self.likelihood.terms(eta)
        Qxx = Qx @ x
        value = val + 0.5 * float(x @ Qxx)
        grad = Qxx - self.Bt @ u
        if not hessian:
            return value, grad
        BtD = self.Bt @ sp.diags(d)
        U = self.S @ sp.diags(u) @ self.B
        H = BtD @ self.B + U.T @ U + Qx
        return value, grad, sp.csc_matrix(H)

    def _value(self, x, Qx):
        eta = self.B @ x
        val, _, _ = self.likelihood.terms(eta)
        return val + 0.5 * float(x @ (Qx @ x))

    def inner_mode(self, theta: Hyperparameters, x0=None, tol: float = 1e-6, max_iter: int = 100,
                   Qx=None) -> InnerResult:
        """Newton iterations with backtracking for the mode of ``x | theta``.

        Indefinite Hessians are damped Levenberg-style; the returned factor is
        the undamped Hessian at the mode.
        """
        if Qx is None:
            Qx, _ = self.prior_precision(theta)
        x = np.zeros(self.n_latent) if x0 is None else np.array(x0, dtype=float)
        f, g, H = self.neg_log_joint(x, Qx=Qx)
        it = 0
        while np.max(np.abs(g), initial=0.0) >= tol:
            if it >= max_iter:
                raise ConvergenceError(f"inner Newton did not converge in {max_iter} iterations at theta={theta}")
            fac = _damped_cholesky(H)
            step = -fac.solve(g)
            slope = float(g @ step)
            t = 1.0
            while True:
                x_new = x + t * step
                f_new = self._value(x_new, Qx)
                # slack for rounding in f once the decrease is at machine level
                if np.isfinite(f_new) and f_new <= f + 1e-4 * t * slope + 1e-13 * abs(f):
                    break
                t *= 0.5
                if t < 1e-12:
                    break
            if t < 1e-12:
                # no descent along the Newton direction: rounding floor reached
                if np.max(np.abs(g)) < 1e3 * tol:
                    break
                raise ConvergenceError(f"line search failed at theta={theta}")
            x = x_new
            f, g, H = self.neg_log_joint(x, Qx=Qx)
            it += 1
        try:
            fac = SparseCholesky(H)
        except NotPositiveDefinite:
            raise ConvergenceError(f"Hessian at the inner mode is not positive definite (theta={theta})") from None
        return InnerResult(x, fac, f, it, H)

    def laplace_objective(self, theta: Hyperparameters, x0=None, return_inner: bool = False):
        """Laplace approximation of ``-log pi(theta | data)`` up to a constant.

        ``f(x*) - log|Qx|/2 + log|H|/2 - log pi(theta)`` with ``x*`` the inner mode.
        """
        Qx, ldQx = self.prior_precision(theta)
        start = x0 if x0 is not None else self._x_last
        inner = self.inner_mode(theta, start, Qx=Qx)
        self._x_last = inner.x
        self.n_objective_evals += 1
        value = inner.value - 0.5 * ldQx + 0.5 * inner.factor.logdet() - pc_prior_logdensity(theta, self.prior)
        if return_inner:
            return value, inner
        return value


def _damped_cholesky(H):
    try:
        return SparseCholesky(H)
    except NotPositiveDefinite:
        pass
    scale = float(np.mean(np.abs(H.diagonal()))) or 1.0
    lam = 1e-6 * scale
    eye = sp.identity(H.shape[0], format="csc")
    for _ in range(40):
        try:
            return SparseCholesky(H + lam * eye)
        except NotPositiveDefinite:
            lam *= 10.0
    raise ConvergenceError("Hessian could not be made positive definite by damping")


@dataclass(eq=False)
class ModelFit:
    """MAP hyperparameters, latent mode and Gaussian summaries at that mode."""

    theta_hat: Hyperparameters
    x_hat: np.ndarray
    n_nodes: int
    beta_names: tuple
    beta_sd: np.ndarray
    factor: SparseCholesky | None
    spec: ModelSpec
    objective: float = float("nan")
    trace: list = field(default_factory=list)
    converged: bool = True
    n_evals: int = 0
    clusters_used: np.ndarray = None
    mesh: TriangulationMesh = None
    covars: CovariateSet = None
    hessian: sp.csc_matrix = None

    @property
    def w_hat(self) -> np.ndarray:
        return self.x_hat[: self.n_nodes]

    @property
    def beta_hat(self) -> np.ndarray:
        return self.x_hat[self.n_nodes:]

    @property
    def beta_halfwidth(self) -> np.ndarray:
        return 1.96 * self.beta_sd

    @property
    def rho(self) -> float:
        return self.theta_hat.rho

    @property
    def sigma2(self) -> float:
        return self.theta_hat.sigma2

    def estimates(self) -> dict:
        out = {"rho": float(self.rho), "sigma2": float(self.sigma2)}
        out.update(dict(zip(self.beta_names, self.beta_hat.tolist())))
        return out

    def to_dict(self) -> dict:
        return {
            "mode": self.spec.mode,
            "theta_hat": {"log_sigma2": self.theta_hat.log_sigma2, "log_rho": self.theta_hat.log_rho,
                          "sigma2": self.sigma2, "rho_km": self.rho},
            "beta": [
                {"name": nm, "mean": float(b), "sd": float(s), "ci95_low": float(b - 1.96 * s),
                 "ci95_high": float(b + 1.96 * s)}
                for nm, b, s in zip(self.beta_names, self.beta_hat, self.beta_sd)
            ],
            "latent_mode": self.x_hat.tolist(),
            "n_nodes": self.n_nodes,
            "objective": self.objective,
            "converged": self.converged,
            "n_evals": self.n_evals,
            "trace": [{"log_sigma2": t[0], "log_rho": t[1], "objective": t[2]} for t in self.trace],
            "spec": spec_to_dict(self.spec),
            "hessian": _sparse_to_dict(self.hessian),
        }

    @classmethod
    def from_dict(cls, d: dict, mesh: TriangulationMesh, covars: CovariateSet) -> "ModelFit":
        """Rebuild a fit written by :meth:`to_dict`; the Hessian is refactorized."""
        x = np.asarray(d["latent_mode"], dtype=float)
        if d["n_nodes"] != mesh.n_nodes:
            raise InvalidInputError(f"fit has {d['n_nodes']} basis weights but the mesh has {mesh.n_nodes} nodes")
        names = tuple(b["name"] for b in d["beta"])
        if names != _beta_names(covars):
            raise InvalidInputError(f"fit covariates {names[1:]} do not match the given rasters {tuple(covars.names)}")
        H = _sparse_from_dict(d.get("hessian"))
        th = d["theta_hat"]
        return cls(
            theta_hat=Hyperparameters(th["log_sigma2"], th["log_rho"]),
            x_hat=x,
            n_nodes=d["n_nodes"],
            beta_names=names,
            beta_sd=np.array([b["sd"] for b in d["beta"]]),
            factor=SparseCholesky(H) if H is not None else None,
            spec=spec_from_dict(d.get("spec", {"mode": d["mode"]})),
            objective=d.get("objective", float("nan")),
            trace=[(t["log_sigma2"], t["log_rho"], t["objective"]) for t in d.get("trace", [])],
            converged=d.get("converged", True),
            n_evals=d.get("n_evals", 0),
            mesh=mesh,
            covars=covars,
            hessian=H,
        )


def _sparse_to_dict(H):
    if H is None:
        return None
    T = sp.triu(H, format="coo")
    return {"shape": list(H.shape), "row": T.row.tolist(), "col": T.col.tolist(), "data": T.data.tolist()}


def _sparse_from_dict(d):
    if d is None:
        return None
    U = sp.coo_matrix((d["data"], (d["row"], d["col"])), shape=tuple(d["shape"])).tocsc()
    return (U + sp.triu(U, k=1).T).tocsc()


def spec_to_dict(spec: ModelSpec) -> dict:
    return {
        "mode": spec.mode,
        "prior": dataclasses.asdict(spec.prior),
        "beta_prior_var": spec.beta_prior_var,
        "scheme": dataclasses.asdict(spec.scheme),
        "rings_urban": spec.rings_urban,
        "rings_rural": spec.rings_rural,
        "points_per_ring": spec.points_per_ring,
        "window": spec.window,
        "max_evals": spec.max_evals,
    }


def spec_from_dict(d: dict) -> ModelSpec:
    d = dict(d)
    if "prior" in d:
        d["prior"] = PcPriorConfig(**d["prior"])
    if "scheme" in d:
        d["scheme"] = JitterScheme(**d["scheme"])
    return ModelSpec(**d)


def _beta_names(covars: CovariateSet):
    return ("intercept",) + tuple(covars.names)


def fit(data: Dataset, spec: ModelSpec, mesh: TriangulationMesh, covars: CovariateSet,
        admin: AdminMap | None = None, theta0: Hyperparameters | None = None, fd_step: float = 1e-3) -> ModelFit:
    """Find the MAP of ``theta`` and the Gaussian approximation of ``(w, beta)`` there.

    The outer problem is solved by L-BFGS-B with central finite-difference
    gradients inside the box ``log sigma^2 in [-6, 6]``, ``rho in [1, 2000]`` km.
    """
    obs = build_observation_model(data, spec, mesh, covars, admin)
    model = LatentGaussianModel.from_observation_model(mesh.fem, obs, spec)
    if theta0 is None:
        theta0 = Hyperparameters(0.0, float(np.log(spec.prior.R0)))
    res = optimize_theta(model, theta0, spec.max_evals, fd_step)
    fitres = _finish_fit(model, res, spec, _beta_names(covars))
    fitres.clusters_used = obs.clusters
    fitres.mesh = mesh
    fitres.covars = covars
    return fitres


@dataclass
class _OuterResult:
    theta: Hyperparameters
    value: float
    inner: InnerResult
    trace: list
    converged: bool
    n_evals: int


def optimize_theta(model: LatentGaussianModel, theta0: Hyperparameters, max_evals: int = 200,
                   fd_step: float = 1e-3) -> _OuterResult:
    trace = []
    best = {"value": np.inf}
    bounds = [LOG_SIGMA2_BOUNDS, LOG_RHO_BOUNDS]

    def objective(t):
        if len(trace) >= max_evals:
            raise ConvergenceError(f"outer optimization exceeded {max_evals} evaluations", trace=trace)
        th = Hyperparameters(float(t[0]), float(t[1]))
        try:
            v, inner = model.laplace_objective(th, return_inner=True)
        except (NumericalError, ConvergenceError) as exc:
            log.debug("objective failed at %s: %s", th, exc)
            trace.append((th.log_sigma2, th.log_rho, float("inf")))
            return np.inf
        trace.append((th.log_sigma2, th.log_rho, float(v)))
        if v < best["value"]:
            best.update(value=v, theta=th, x=inner.x.copy())
        return v

    def fun_and_grad(t):
        t = np.clip(np.asarray(t, dtype=float), [b[0] for b in bounds], [b[1] for b in bounds])
        f0 = objective(t)
        if not np.isfinite(f0):
            return 1e30, np.zeros(2)
        g = np.zeros(2)
        for i in range(2):
            hi = t.copy()
            lo = t.copy()
            hi[i] = min(t[i] + fd_step, bounds[i][1])
            lo[i] = max(t[i] - fd_step, bounds[i][0])
            # restart the inner solve from the centre point's mode
            x_c = model._x_last
            fh = objective(hi)
            model._x_last = x_c
            fl = objective(lo)
            model._x_last = x_c
            if not (np.isfinite(fh) and np.isfinite(fl)):
                return f0, np.zeros(2)
            g[i] = (fh - fl) / (hi[i] - lo[i])
        # leave the warm start at the centre point
        return f0, g

    t0 = np.clip(theta0.as_array(), [b[0] for b in bounds], [b[1] for b in bounds])
    x_start = model._x_last
    opt = minimize(fun_and_grad, t0, jac=True, method="L-BFGS-B", bounds=bounds,
                   options={"maxiter": max_evals, "ftol": 1e-10, "gtol": 1e-5})
    if "theta" not in best:
        raise ConvergenceError("objective was never finite", trace=trace)
    theta_hat = Hyperparameters(float(opt.x[0]), float(opt.x[1]))
    # final inner solve exactly at the optimum, started from the best mode seen
    model._x_last = best.get("x", x_start)
    value, inner = model.laplace_objective(theta_hat, return_inner=True)
    if value > best["value"] + 1e-8:
        theta_hat = best["theta"]
        value, inner = model.laplace_objective(theta_hat, x0=best["x"], return_inner=True)
    return _OuterResult(theta_hat, float(value), inner, trace, bool(opt.success), len(trace))


def _finish_fit(model, res: _OuterResult, spec, beta_names) -> ModelFit:
    p, m = model.p, model.m
    E = np.zeros((model.n_latent, p))
    E[m:, :] = np.eye(p)
    cov_beta = res.inner.factor.solve(E)[m:, :]
    beta_sd = np.sqrt(np.clip(np.diag(cov_beta), 0.0, None))
    return ModelFit(
        theta_hat=res.theta,
        x_hat=res.inner.x,
        n_nodes=m,
        beta_names=tuple(beta_names),
        beta_sd=beta_sd,
        factor=res.inner.factor,
        spec=spec,
        objective=res.value,
        trace=res.trace,
        converged=res.converged,
        n_evals=res.n_evals,
        hessian=res.inner.hessian,
    )


def refit_at(data: Dataset, spec: ModelSpec, mesh, covars, admin, theta: Hyperparameters, x0=None) -> ModelFit:
    """Rebuild the Gaussian approximation at a known ``theta`` (no outer search)."""
    obs = build_observation_model(data, spec, mesh, covars, admin)
    model = LatentGaussianModel.from_observation_model(mesh.fem, obs, spec)
    value, inner = model.laplace_objective(theta, x0=x0, return_inner=True)
    res = _OuterResult(theta, value, inner, [], True, 1)
    out = _finish_fit(model, res, spec, _beta_names(covars))
    out.clusters_used = obs.clusters
    out.mesh = mesh
    out.covars = covars
    return out


@dataclass(eq=False)
class PredictiveSummary:
    """Pointwise posterior summaries of ``eta(s)`` and ``r(s) = expit(eta(s))``."""

    locations: np.ndarray
    eta_mean: np.ndarray
    eta_sd: np.ndarray
    r_median: np.ndarray
    r_mean: np.ndarray
    r_cv: np.ndarray
    missing: np.ndarray
    r_samples: np.ndarray = None


def prediction_operator(fit: ModelFit, locations, covars: CovariateSet | None = None):
    """Rows ``[a(s), x(s)]`` and a missing flag for each location."""
    covars = covars if covars is not None else fit.covars
    pts = np.atleast_2d(np.asarray(locations, dtype=float)).reshape(-1, 2)
    X = covars.design(pts, fit.spec.covariate_window)
    proj = project(fit.mesh, pts)
    missing = proj.outside | np.isnan(X).any(axis=1)
    X = np.where(missing[:, None], 0.0, X)
    B = sp.hstack([proj.rows, sp.csr_matrix(X)], format="csr")
    return B, missing


def predict(fit: ModelFit, locations, covars: CovariateSet | None = None, n_samples: int = 1000,
            rng=None, keep_samples: bool = False, chunk: int = 4096) -> PredictiveSummary:
    """Posterior predictive summaries at ``locations`` given ``theta_hat``.

    ``eta`` mean and sd are exact for the Gaussian approximation; median, mean
    and CV of the risk come from ``n_samples`` joint draws of ``(w, beta)``
    (NaN when ``n_samples`` is 0).
    """
    rng = np.random.default_rng(rng)
    pts = np.atleast_2d(np.asarray(locations, dtype=float)).reshape(-1, 2)
    B, missing = prediction_operator(fit, pts, covars)
    eta_mean = B @ fit.x_hat
    if fit.factor is None:
        eta_sd = np.zeros(len(pts))
        dx = np.zeros((len(fit.x_hat), n_samples))
    else:
        eta_sd = np.sqrt(np.clip(fit.factor.inv_diag_quadform(B), 0.0, None))
        dx = fit.factor.inv_sqrt_transpose(rng.standard_normal((len(fit.x_hat), n_samples))) if n_samples else None
    npts = len(pts)
    r_med = np.full(npts, np.nan)
    r_mean = np.full(npts, np.nan)
    r_cv = np.full(npts, np.nan)
    samples = np.empty((npts, n_samples)) if keep_samples else None
    for i in range(0, npts if n_samples else 0, chunk):
        sl = slice(i, i + chunk)
        eta_s = eta_mean[sl, None] + B[sl] @ dx
        r = expit(eta_s)
        r_med[sl] = np.median(r, axis=1)
        mu = r.mean(axis=1)
        r_mean[sl] = mu
        r_cv[sl] = r.std(axis=1) / mu
        if keep_samples:
            samples[sl] = r
    for arr in (eta_mean, eta_sd, r_med, r_mean, r_cv):
        arr[missing] = np.nan
    if keep_samples:
        samples[missing] = np.nan
    return PredictiveSummary(pts, eta_mean, eta_sd, r_med, r_mean, r_cv, missing, samples)


@dataclass(eq=False)
class ArealSummary:
    region_ids: list
    mean: np.ndarray
    cv: np.ndarray
    missing: np.ndarray
    samples: np.ndarray


def weighted_areal_samples(r_samples, weights):
    """Population-weighted mean of ``r`` per posterior sample (rows are pixels)."""
    r_samples = np.asarray(r_samples, dtype=float)
    weights = np.asarray(weights, dtype=float)
    tot = weights.sum()
    if not tot > 0:
        return None
    return weights @ r_samples / tot


def aggregate(pred: PredictiveSummary, admin: AdminMap, population: Raster) -> ArealSummary:
    """Population-weighted areal risk per region and posterior sample."""
    if pred.r_samples is None:
        raise InvalidInputError("aggregate needs predictions made with keep_samples=True")
    region = admin.region_index(pred.locations)
    pop = extract(population, pred.locations)
    usable = ~pred.missing & np.isfinite(pop)
    pop = np.where(usable, pop, 0.0)
    ns = pred.r_samples.shape[1]
    means, cvs, miss, samples = [], [], [], []
    for i, rid in enumerate(admin.ids):
        sel = (region == i) & usable
        s = weighted_areal_samples(pred.r_samples[sel], pop[sel]) if np.any(sel) else None
        if s is None:
            means.append(np.nan)
            cvs.append(np.nan)
            miss.append(True)
            samples.append(np.full(ns, np.nan))
        else:
            mu = float(s.mean())
            means.append(mu)
            cvs.append(float(s.std() / mu))
            miss.append(False)
            samples.append(s)
    return ArealSummary(list(admin.ids), np.array(means), np.array(cvs), np.array(miss), np.array(samples))
