"""Bayesian fitting of the hierarchical model with point and line data.

The latent vector per replicate is the FEM weight vector ``w_r``; the fixed
effects ``(beta0, beta1)`` are shared. For the identity link the model is
linear-Gaussian given the four log-hyperparameters

    (log sigma2, log rho, log tau_P, log tau_L)

(``tau`` are noise precisions), so ``(w_1..w_R, beta)`` is integrated out
exactly. Hyperparameters are set to the mode of their log posterior and the
latent posterior is the Gaussian conditional at that mode. The log link is
handled by repeated first-order linearization of ``exp`` around the current
latent mode.

Every observation is a weighted sum over evaluation nodes. A node carries a
basis row for ``w``, a fixed-effect row ``(1, covariate)`` and a weight:
points have one node with weight 1, integral-model lines have their Simpson
nodes, and simplified-model lines have one node at the path midpoint whose
covariate is the path-averaged covariate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize
from scipy.special import gammaln

from .cholesky import Symbolic
from .errors import NotPositiveDefinite
from .fem import assemble_mass, assemble_stiffness
from .mesh import Mesh, as_location_arrays
from .observe import LINE_SCALES, LINKS, LineObs, PointObs, line_scale_factor
from .paths import integration_scheme, midpoint

HYPER_NAMES = ("log_sigma2", "log_rho", "log_prec_P", "log_prec_L")
LOG2PI = math.log(2.0 * math.pi)


@dataclass
class Priors:
    V: float = 1e3
    a_sigma: float = 1.0
    b_sigma: float = 5e-5
    mu_theta: tuple[float, float] = (0.0, math.log(0.7))
    Sigma_theta: np.ndarray = field(default_factory=lambda: np.diag([10.0, 10.0]))

    def __post_init__(self):
        self.Sigma_theta = np.asarray(self.Sigma_theta, dtype=float)
        if not self.V > 0:
            raise ValueError("V must be positive")
        np.linalg.cholesky(self.Sigma_theta)

    def log_density(self, hyper) -> float:
        th = np.asarray(hyper[:2]) - np.asarray(self.mu_theta)
        Sl = np.linalg.cholesky(self.Sigma_theta)
        z = np.linalg.solve(Sl, th)
        lp = -0.5 * z @ z - np.sum(np.log(np.diag(Sl))) - LOG2PI
        a, b = self.a_sigma, self.b_sigma
        for lt in hyper[2:]:
            # Gamma(a, b) on the precision, expressed on the log scale
            lp += a * math.log(b) - gammaln(a) + a * lt - b * math.exp(lt)
        return float(lp)


@dataclass
class ModelSpec:
    """Model and fitting configuration.

    ``support`` is ``"IM"`` (lines integrated along their paths) or ``"SM"``
    (lines treated as points at the path midpoint with the path-averaged
    covariate). ``line_average`` divides line integrals by the path length;
    by default it is on for the log link and off for the identity link.
    """

    mesh: Mesh
    x: np.ndarray | None = None
    link: str = "identity"
    support: str = "IM"
    line_scale: str = "inverse_sq"
    line_average: bool | None = None
    priors: Priors = field(default_factory=Priors)
    fd_step: float = 1e-4
    gtol: float = 1e-5
    xtol: float = 1e-7
    max_iter: int = 200
    multistart: bool = True
    lin_tol: float = 1e-4
    lin_max_iter: int = 20

    def __post_init__(self):
        if self.link not in LINKS:
            raise ValueError(f"link must be one of {LINKS}")
        if self.support not in ("IM", "SM"):
            raise ValueError("support must be 'IM' or 'SM'")
        if self.line_scale not in LINE_SCALES:
            raise ValueError(f"line_scale must be one of {LINE_SCALES}")
        self.x = np.zeros(self.mesh.K) if self.x is None else np.asarray(self.x, dtype=float)
        if self.x.shape != (self.mesh.K,):
            raise ValueError("covariate must have one value per mesh vertex")

    @property
    def averaged(self) -> bool:
        return (self.link == "log") if self.line_average is None else bool(self.line_average)


@dataclass
class Dataset:
    points: list[PointObs] = field(default_factory=list)
    lines: list[LineObs] = field(default_factory=list)
    n_replicates: int | None = None

    @property
    def R(self) -> int:
        if self.n_replicates is not None:
            return self.n_replicates
        reps = [o.replicate for o in self.points] + [o.replicate for o in self.lines]
        return max(reps) + 1 if reps else 1


# ---------------------------------------------------------------------------
# observation operators


@dataclass
class _Operator:
    """Observation operator of one replicate, expressed through nodes."""

    key: tuple
    A_nodes: sp.csr_matrix  # (n_nodes, K)
    Z_nodes: np.ndarray  # (n_nodes, 2)
    W: sp.csr_matrix  # (n_obs, n_nodes)
    kind: np.ndarray  # 0 point, 1 line
    hscale: np.ndarray  # noise variance multiplier
    y: np.ndarray


def _operator(spec: ModelSpec, points: Sequence[PointObs], lines: Sequence[LineObs],
              cache: dict) -> _Operator:
    mesh = spec.mesh
    locs = [(o.location[0], float(o.location[1])) for o in points]
    paths = [o.path for o in lines]
    key = (tuple(locs), tuple(paths))
    if key in cache:
        op = cache[key]
        return _Operator(key, op.A_nodes, op.Z_nodes, op.W, op.kind, op.hscale,
                         np.array([o.value for o in points] + [o.value for o in lines], dtype=float))

    xz = np.column_stack([np.ones(mesh.K), spec.x])
    pe, pt = as_location_arrays(locs)
    AP = mesh.basis_matrix((pe, pt))
    A_parts, Z_parts = [AP], [AP @ xz]
    w_rows, w_cols, w_vals = list(range(len(locs))), list(range(len(locs))), [1.0] * len(locs)
    n_nodes = len(locs)
    lengths = np.array([p.length for p in paths], dtype=float)
    if paths:
        if spec.support == "IM":
            sch = integration_scheme(mesh, paths)
            Aq = mesh.basis_matrix((sch.edges, sch.ts))
            cw = sch.weights / (lengths[sch.block] if spec.averaged else 1.0)
            A_parts.append(Aq)
            Z_parts.append(Aq @ xz)
            w_rows += (len(locs) + sch.block).tolist()
            w_cols += (n_nodes + np.arange(len(sch.weights))).tolist()
            w_vals += cw.tolist()
        else:
            mids = [midpoint(mesh.graph, p) for p in paths]
            Am = mesh.basis_matrix(mids)
            avg = line_avg_covariate(mesh, spec.x, paths)
            A_parts.append(Am)
            Z_parts.append(np.column_stack([np.ones(len(paths)), avg]))
            scale = np.ones(len(paths)) if spec.averaged else lengths
            w_rows += (len(locs) + np.arange(len(paths))).tolist()
            w_cols += (n_nodes + np.arange(len(paths))).tolist()
            w_vals += scale.tolist()
        n_nodes += A_parts[-1].shape[0]
    n_obs = len(locs) + len(paths)
    W = sp.csr_matrix((w_vals, (w_rows, w_cols)), shape=(n_obs, n_nodes))
    kind = np.concatenate([np.zeros(len(locs), dtype=int), np.ones(len(paths), dtype=int)])
    hscale = np.concatenate([np.ones(len(locs)), line_scale_factor(lengths, spec.line_scale)])
    y = np.array([o.value for o in points] + [o.value for o in lines], dtype=float)
    op = _Operator(key, sp.vstack(A_parts).tocsr(), np.vstack(Z_parts), W, kind, hscale, y)
    cache[key] = op
    return op


def line_avg_covariate(mesh: Mesh, x, paths) -> np.ndarray:
    from .observe import line_matrix

    return line_matrix(mesh, paths, averaged=True).A @ np.asarray(x, dtype=float)


def _split(data: Dataset, R: int):
    pts = [[] for _ in range(R)]
    lns = [[] for _ in range(R)]
    for o in data.points:
        pts[o.replicate].append(o)
    for o in data.lines:
        lns[o.replicate].append(o)
    return pts, lns


def replicate_operators(spec: ModelSpec, data: Dataset) -> list[_Operator]:
    R = data.R
    pts, lns = _split(data, R)
    cache: dict = {}
    return [_operator(spec, pts[r], lns[r], cache) for r in range(R)]


# ---------------------------------------------------------------------------
# linear-Gaussian engine


@dataclass
class _Group:
    """Replicates sharing one design matrix (and hence one factorization)."""

    reps: list[int]
    A: sp.csr_matrix
    X: np.ndarray
    kind: np.ndarray
    hscale: np.ndarray
    Y: np.ndarray  # (n_obs, n_reps)
    symbolic: Symbolic | None = None
    maps: tuple | None = None


def _pattern_positions(U: sp.csc_matrix, M: sp.spmatrix) -> np.ndarray:
    """Positions in ``U.data`` of the (summed) entries of ``M`` (``M`` in ``U``)."""
    M = sp.csc_matrix(M)
    M.sum_duplicates()
    M.sort_indices()
    n = U.shape[0]
    ucols = np.repeat(np.arange(n), np.diff(U.indptr))
    ukeys = ucols.astype(np.int64) * n + U.indices
    mcols = np.repeat(np.arange(n), np.diff(M.indptr))
    mkeys = mcols.astype(np.int64) * n + M.indices
    return np.searchsorted(ukeys, mkeys), M.data


def _design_token(design, key):
    A, X, kind, hscale, y = design
    A = sp.csr_matrix(A)
    head = repr(key) if key is not None else (
        A.indptr.tobytes() + A.indices.tobytes() + A.data.tobytes() + np.ascontiguousarray(X).tobytes()
        + np.asarray(hscale, dtype=float).tobytes() + np.asarray(kind).tobytes()
    )
    return head, np.asarray(y, dtype=float).tobytes()


class LinearGaussianModel:
    """Gaussian marginalization over ``(w_1..w_R, beta)`` for fixed designs.

    ``designs`` is a list of ``(A, X, kind, hscale, y)`` per replicate; ``A``
    maps FEM weights to observations, ``X`` maps ``(beta0, beta1)``.
    Replicates with identical ``A`` and noise layout share a factorization.
    """

    def __init__(self, mesh: Mesh, designs, priors: Priors, keys=None,
                 symbolic_cache: dict | None = None):
        self.mesh = mesh
        self.K = mesh.K
        self.R = len(designs)
        self.priors = priors
        self.C = assemble_mass(mesh)
        self.G = assemble_stiffness(mesh)
        cache = {} if symbolic_cache is None else symbolic_cache
        if "Q" not in cache:
            cache["Q"] = Symbolic(self.C)
        self.symQ = cache["Q"]

        groups: dict = {}
        # label-free processing order, so relabeling replicates is bit-for-bit neutral
        order = sorted(range(len(designs)), key=lambda r: _design_token(designs[r], keys[r] if keys else None))
        for r in order:
            A, X, kind, hscale, y = designs[r]
            key = keys[r] if keys is not None else _design_token(designs[r], None)[0]
            if key in groups:
                groups[key].reps.append(r)
                groups[key].Y = np.column_stack([groups[key].Y, y])
            else:
                groups[key] = _Group([r], sp.csr_matrix(A), np.asarray(X, dtype=float),
                                     np.asarray(kind), np.asarray(hscale, dtype=float),
                                     np.asarray(y, dtype=float)[:, None])
        self.groups = list(groups.values())
        self.n_obs = sum(g.Y.size for g in self.groups)
        self.rep_group = np.empty(self.R, dtype=int)
        for gi, g in enumerate(self.groups):
            self.rep_group[g.reps] = gi
            self._prepare(g, cache)

    def _prepare(self, g: _Group, cache: dict):
        A = g.A
        ip = g.kind == 0
        AP = A[ip]
        AL = sp.diags(1.0 / g.hscale[~ip]) @ A[~ip]
        MP = (AP.T @ AP).tocsc()
        ML = (A[~ip].T @ AL).tocsc()
        S = abs(self.C) + abs(self.G) + abs(MP) + abs(ML)
        U = sp.csc_matrix(S)
        U.sum_duplicates()
        U.sort_indices()
        key = ("B", U.shape[0], U.indptr.tobytes(), U.indices.tobytes())
        if key not in cache:
            cache[key] = Symbolic(U)
        g.symbolic = cache[key]
        nnz = U.nnz
        dense = []
        for M in (self.C, self.G, MP, ML):
            pos, vals = _pattern_positions(U, M)
            d = np.zeros(nnz)
            np.add.at(d, pos, vals)
            dense.append(d)
        g.maps = tuple(dense)

    def _factor_Q(self, sigma2, rho):
        kappa = 2.0 / rho
        tau2 = 1.0 / (2.0 * kappa * sigma2)
        return self.symQ.factor(tau2 * (kappa ** 2 * self.C.data + self.G.data)), kappa, tau2

    def latent_precision(self, hyper, group: int = 0) -> sp.csc_matrix:
        """Conditional precision ``Q + A^T D^{-1} A`` of ``w_r`` for replicates in ``group``."""
        sigma2, rho, tauP, tauL = np.exp(np.asarray(hyper, dtype=float))
        kappa = 2.0 / rho
        tau2 = 1.0 / (2.0 * kappa * sigma2)
        g = self.groups[group]
        Cu, Gu, MPu, MLu = g.maps
        sym = g.symbolic
        data = tau2 * kappa ** 2 * Cu + tau2 * Gu + tauP * MPu + tauL * MLu
        return sp.csc_matrix((data, sym.indices, sym.indptr), shape=(self.K, self.K))

    def log_marginal(self, hyper, posterior: bool = False):
        """Log marginal likelihood plus log prior at log-hyperparameters ``hyper``.

        With ``posterior=True`` also returns the latent Gaussian posterior.
        """
        hyper = np.asarray(hyper, dtype=float)
        sigma2, rho, tauP, tauL = np.exp(hyper)
        lp = self.priors.log_density(hyper)
        if self.n_obs == 0 and not posterior:
            return lp
        fQ, kappa, tau2 = self._factor_Q(sigma2, rho)
        logdetQ = fQ.logdet()
        V = self.priors.V

        S = np.eye(2) / V
        rhs_beta = np.zeros(2)
        logdetB = 0.0
        logdetD = 0.0
        yDy = 0.0
        parts = []
        for g in self.groups:
            nrep = len(g.reps)
            dinv = np.where(g.kind == 0, tauP, tauL / g.hscale)
            Cu, Gu, MPu, MLu = g.maps
            fB = g.symbolic.factor(tau2 * kappa ** 2 * Cu + tau2 * Gu + tauP * MPu + tauL * MLu)
            Xd = g.X * dinv[:, None]
            E = np.asarray(g.A.T @ Xd)
            bw = np.asarray(g.A.T @ (dinv[:, None] * g.Y))
            sol = fB.solve(np.column_stack([E, bw]))
            M, Bb = sol[:, :2], sol[:, 2:]
            S += nrep * (g.X.T @ Xd) - nrep * (E.T @ M)
            rhs_beta += Xd.T @ g.Y.sum(axis=1) - E.T @ Bb.sum(axis=1)
            logdetB += nrep * fB.logdet()
            logdetD -= nrep * np.sum(np.log(dinv))
            yDy += float(np.sum(dinv[:, None] * g.Y ** 2))
            parts.append((g, fB, E, M, Bb, bw, Xd))
        Ls = np.linalg.cholesky(S)
        mu_beta = np.linalg.solve(S, rhs_beta)
        quad = yDy
        mu_w = np.empty((self.K, self.R))
        for g, fB, E, M, Bb, bw, Xd in parts:
            mw = Bb - (M @ mu_beta)[:, None]
            mu_w[:, g.reps] = mw
            quad -= float(np.sum(bw * mw)) + float(Xd.T.dot(g.Y.sum(axis=1)) @ mu_beta)
        logdetS = 2.0 * np.sum(np.log(np.diag(Ls)))
        ll = (-0.5 * self.n_obs * LOG2PI - 0.5 * logdetD + 0.5 * self.R * logdetQ
              - math.log(V) - 0.5 * (logdetB + logdetS) - 0.5 * quad)
        if not posterior:
            return ll + lp
        post = LatentPosterior(self, parts, S, mu_beta, mu_w)
        return ll + lp, post


class LatentPosterior:
    """Gaussian posterior of ``(w_1..w_R, beta)`` at fixed hyperparameters."""

    def __init__(self, model: LinearGaussianModel, parts, S, mu_beta, mu_w):
        self.model = model
        self.K = model.K
        self.R = model.R
        self.x = None
        self._parts = parts
        self.S = S
        self.beta_cov = np.linalg.inv(S)
        self.mu_beta = mu_beta
        self.mu_w = mu_w

    def _group_of(self, r):
        return self._parts[self.model.rep_group[r]]

    def eta_mean(self, x) -> np.ndarray:
        return self.mu_w + (self.mu_beta[0] + self.mu_beta[1] * np.asarray(x))[:, None]

    def w_sd(self) -> np.ndarray:
        out = np.empty((self.K, self.R))
        for g, fB, *_ in self._parts:
            out[:, g.reps] = np.sqrt(fB.marginal_variances())[:, None]
        return out

    def eta_sd(self, x) -> np.ndarray:
        Z = np.column_stack([np.ones(self.K), x])
        out = np.empty((self.K, self.R))
        for g, fB, E, M, *_ in self._parts:
            D = Z - M
            v = fB.marginal_variances() + np.einsum("ij,jk,ik->i", D, self.beta_cov, D)
            out[:, g.reps] = np.sqrt(v)[:, None]
        return out

    def predict(self, A: sp.spmatrix, Zloc: np.ndarray):
        """Mean and sd of ``A w_r + Zloc beta`` for every replicate."""
        A = sp.csr_matrix(A)
        n = A.shape[0]
        mean = np.asarray(A @ self.mu_w) + (Zloc @ self.mu_beta)[:, None]
        sd = np.empty((n, self.R))
        for g, fB, E, M, *_ in self._parts:
            Sig = fB.selected_inverse()
            vw = np.asarray((A @ Sig).multiply(A).sum(axis=1)).ravel()
            D = Zloc - A @ M
            v = vw + np.einsum("ij,jk,ik->i", D, self.beta_cov, D)
            sd[:, g.reps] = np.sqrt(np.maximum(v, 0.0))[:, None]
        return mean, sd

    def sample(self, n: int, rng: np.random.Generator):
        """Joint draws: returns ``(w, beta)`` of shapes ``(n, R, K)`` and ``(n, 2)``."""
        Lc = np.linalg.cholesky(self.beta_cov)
        zb = rng.standard_normal((n, 2))
        beta = self.mu_beta + zb @ Lc.T
        w = np.empty((n, self.R, self.K))
        for r in range(self.R):
            g, fB, E, M, *_ = self._group_of(r)
            z = rng.standard_normal((self.K, n))
            dev = fB.sample(z) if n else np.zeros((self.K, 0))
            w[:, r, :] = (self.mu_w[:, r][:, None] - M @ (beta - self.mu_beta).T + dev).T
        return w, beta


# ---------------------------------------------------------------------------
# fitting


@dataclass
class FitResult:
    """Hyperparameter mode, its Laplace covariance, and latent summaries.

    ``hyper`` is on the log scale in the order of ``HYPER_NAMES``. Latent
    arrays are ``(K, R)``: mesh vertex by replicate.
    """

    spec: ModelSpec
    hyper: np.ndarray
    hyper_cov: np.ndarray | None
    log_posterior: float
    beta_mean: np.ndarray
    beta_cov: np.ndarray
    w_mean: np.ndarray
    w_sd: np.ndarray
    eta_mean: np.ndarray
    eta_sd: np.ndarray
    converged: bool
    n_iter: int
    step_norm: float
    grad_norm: float
    flags: list = field(default_factory=list)
    lin_iterations: int = 0
    lin_history: list = field(default_factory=list)
    expansion: tuple | None = None
    posterior: LatentPosterior | None = field(default=None, repr=False)

    @property
    def sigma2(self) -> float:
        return float(math.exp(self.hyper[0]))

    @property
    def rho(self) -> float:
        return float(math.exp(self.hyper[1]))

    @property
    def sigma2_P(self) -> float:
        return float(math.exp(-self.hyper[2]))

    @property
    def sigma2_L(self) -> float:
        return float(math.exp(-self.hyper[3]))

    @property
    def R(self) -> int:
        return self.w_mean.shape[1]

    def estimates(self) -> dict:
        """Point estimates: posterior means for fixed effects, medians otherwise."""
        return {
            "rho": self.rho,
            "sigma2": self.sigma2,
            "beta0": float(self.beta_mean[0]),
            "beta1": float(self.beta_mean[1]),
            "sigma2_L": self.sigma2_L,
            "sigma2_P": self.sigma2_P,
        }

    def hyper_quantiles(self, q: float) -> dict:
        """Gaussian quantiles of the log-hyperparameters mapped to natural scale."""
        from scipy.stats import norm

        sd = np.sqrt(np.diag(self.hyper_cov)) if self.hyper_cov is not None else np.zeros(4)
        z = norm.ppf(q)
        lo = self.hyper + z * sd
        return {
            "sigma2": float(math.exp(lo[0])),
            "rho": float(math.exp(lo[1])),
            # precisions invert to variances, flipping the tail
            "sigma2_P": float(math.exp(-(self.hyper[2] - z * sd[2]))),
            "sigma2_L": float(math.exp(-(self.hyper[3] - z * sd[3]))),
        }


def _fd_grad(f, x, step):
    g = np.empty_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = step
        g[i] = (f(x + e) - f(x - e)) / (2 * step)
    return g


def _fd_hessian(f, x, step=5e-3):
    n = len(x)
    H = np.empty((n, n))
    f0 = f(x)
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = step
        H[i, i] = (f(x + ei) - 2 * f0 + f(x - ei)) / step ** 2
        for j in range(i):
            ej = np.zeros(n)
            ej[j] = step
            H[i, j] = H[j, i] = (
                f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)
            ) / (4 * step ** 2)
    return H


def _prior_mean_hyper(pri: Priors) -> np.ndarray:
    lt = math.log(pri.a_sigma / pri.b_sigma)
    return np.array([pri.mu_theta[0], pri.mu_theta[1], lt, lt])


def _initial_hyper(spec: ModelSpec, designs) -> np.ndarray:
    pri = spec.priors
    x0 = np.empty(4)
    x0[:2] = pri.mu_theta
    for k in (0, 1):
        vals = [d[4][d[2] == k] * np.sqrt(1.0 / d[3][d[2] == k]) for d in designs]
        v = np.sort(np.concatenate(vals)) if vals else np.zeros(0)
        if len(v) >= 2 and np.var(v) > 0:
            x0[2 + k] = -math.log(0.5 * np.var(v))
        else:
            x0[2 + k] = math.log(pri.a_sigma / pri.b_sigma)
    return x0


def _optimize(model: LinearGaussianModel, spec: ModelSpec, starts):
    def negpost(h):
        if np.any(np.abs(h) > 40):
            return 1e100
        try:
            return -model.log_marginal(h)
        except (NotPositiveDefinite, np.linalg.LinAlgError, FloatingPointError):
            return 1e100

    def grad(h):
        return _fd_grad(negpost, h, spec.fd_step)

    runs = [
        minimize(negpost, x0, jac=grad, method="BFGS",
                 options={"gtol": spec.gtol, "maxiter": spec.max_iter, "xrtol": spec.xtol})
        for x0 in starts
    ]
    best = min(runs, key=lambda r: r.fun)
    # prefer a converged run that ties with the best objective
    tied = [r for r in runs if r.success and r.fun <= best.fun + 1e-6]
    return (min(tied, key=lambda r: r.fun) if tied else best), negpost


def _fit_model(model: LinearGaussianModel, spec: ModelSpec, designs, hyper=None, starts=None,
               want_hessian=True):
    flags = []
    if hyper is not None:
        h = np.asarray(hyper, dtype=float)
        lp, post = model.log_marginal(h, posterior=True)
        return h, None, lp, post, True, 0, 0.0, 0.0, flags
    if starts is None:
        pm = _prior_mean_hyper(spec.priors)
        starts = [pm, pm + 1.0, pm - 1.0, _initial_hyper(spec, designs)] if spec.multistart else [pm]
    res, negpost = _optimize(model, spec, starts)
    h = res.x
    gnorm = float(np.max(np.abs(res.jac))) if res.jac is not None else float("nan")
    converged = bool(res.success) or gnorm < spec.gtol
    if not converged:
        flags.append("NonConvergence")
    cov = None
    if want_hessian:
        H = _fd_hessian(negpost, h)
        ev, evec = np.linalg.eigh(0.5 * (H + H.T))
        if np.all(ev > 0):
            cov = np.linalg.inv(H)
        else:
            flags.append("IndefiniteHessian")
            cov = evec @ np.diag(1.0 / np.maximum(ev, 1e-8)) @ evec.T
    lp, post = model.log_marginal(h, posterior=True)
    step = float(np.linalg.norm(res.hess_inv @ res.jac)) if hasattr(res, "hess_inv") else float("nan")
    return h, cov, lp, post, converged, int(res.nit), step, gnorm, flags


def _linear_designs(spec: ModelSpec, ops: list[_Operator]):
    designs, keys = [], []
    for op in ops:
        A = (op.W @ op.A_nodes).tocsr()
        X = np.asarray(op.W @ op.Z_nodes)
        designs.append((A, X, op.kind, op.hscale, op.y))
        keys.append(op.key)
    return designs, keys


def _result(spec, h, cov, lp, post, converged, nit, step, gnorm, flags, **extra) -> FitResult:
    x = spec.x
    return FitResult(
        spec=spec, hyper=h, hyper_cov=cov, log_posterior=float(lp),
        beta_mean=post.mu_beta.copy(), beta_cov=post.beta_cov.copy(),
        w_mean=post.mu_w.copy(), w_sd=post.w_sd(),
        eta_mean=post.eta_mean(x), eta_sd=post.eta_sd(x),
        converged=converged, n_iter=nit, step_norm=step, grad_norm=gnorm, flags=flags,
        posterior=post, **extra,
    )


def log_marginal(spec: ModelSpec, data: Dataset, hyper) -> float:
    """Log marginal likelihood plus log prior for the identity-link model."""
    ops = replicate_operators(spec, data)
    designs, keys = _linear_designs(spec, ops)
    return LinearGaussianModel(spec.mesh, designs, spec.priors, keys).log_marginal(hyper)


def fit_linear(spec: ModelSpec, data: Dataset, hyper=None) -> FitResult:
    """Fit the identity-link model; ``hyper`` fixes the log-hyperparameters."""
    if spec.link != "identity":
        raise ValueError("fit_linear needs the identity link; use fit_nonlinear")
    ops = replicate_operators(spec, data)
    designs, keys = _linear_designs(spec, ops)
    model = LinearGaussianModel(spec.mesh, designs, spec.priors, keys)
    out = _fit_model(model, spec, designs, hyper)
    return _result(spec, *out)


def working_designs(spec: ModelSpec, ops: list[_Operator], w_tilde, beta_tilde):
    """Linearize ``exp`` at the expansion point; returns designs with the offset removed."""
    designs = []
    for r, op in enumerate(ops):
        eta_n = op.A_nodes @ w_tilde[:, r] + op.Z_nodes @ beta_tilde
        ex = np.exp(eta_n)
        Wd = op.W @ sp.diags(ex)
        A = (Wd @ op.A_nodes).tocsr()
        X = np.asarray(Wd @ op.Z_nodes)
        offset = op.W @ (ex * (1.0 - eta_n))
        designs.append((A, X, op.kind, op.hscale, op.y - offset))
    return designs


def _initial_expansion(spec: ModelSpec, ops, R):
    vals = []
    for op in ops:
        rowsum = np.asarray(op.W.sum(axis=1)).ravel()
        v = op.y / np.where(rowsum > 0, rowsum, 1.0)
        vals.append(v[v > 0])
    v = np.concatenate(vals) if vals else np.zeros(0)
    c = math.log(float(np.median(v))) if len(v) else 0.0
    return np.zeros((spec.mesh.K, R)), np.array([c, 0.0])


def fit_nonlinear(spec: ModelSpec, data: Dataset, hyper=None) -> FitResult:
    """Fit the log-link model by iterated linearization.

    Each iteration expands ``exp(eta)`` to first order around the current
    latent mode at every evaluation node, fits the resulting linear-Gaussian
    model, and moves the expansion point to the new mode. Stops when the sup
    norm of the mode change divided by the posterior sd drops below
    ``spec.lin_tol``. If the change grows between iterations the update is
    damped by halving, at most five times.
    """
    if spec.link != "log":
        raise ValueError("fit_nonlinear needs the log link")
    R = data.R
    ops = replicate_operators(spec, data)
    w_t, b_t = _initial_expansion(spec, ops, R)
    sym_cache: dict = {}
    lam, halvings, prev_change = 1.0, 0, math.inf
    history = []
    h_prev = None
    flags = []
    converged = False
    for it in range(1, spec.lin_max_iter + 1):
        designs = working_designs(spec, ops, w_t, b_t)
        model = LinearGaussianModel(spec.mesh, designs, spec.priors, None, sym_cache)
        starts = None if h_prev is None else [h_prev]
        out = _fit_model(model, spec, designs, hyper, starts=starts, want_hessian=False)
        h, _, lp, post = out[:4]
        h_prev = h
        eta_old = w_t + (b_t[0] + b_t[1] * spec.x)[:, None]
        eta_new = post.eta_mean(spec.x)
        sd = post.eta_sd(spec.x)
        change = float(np.max(np.abs(eta_new - eta_old) / sd))
        history.append({"iteration": it, "change": change, "step": lam,
                        "eta_mean": eta_new.copy(), "expansion_eta": eta_old.copy(),
                        "hyper": np.array(h)})
        if change < spec.lin_tol:
            converged = True
            break
        if change > prev_change:
            if halvings >= 5:
                flags.append("NonConvergence")
                break
            lam *= 0.5
            halvings += 1
        prev_change = change
        w_t = w_t + lam * (post.mu_w - w_t)
        b_t = b_t + lam * (post.mu_beta - b_t)
    else:
        flags.append("NonConvergence")

    # final fit at the last expansion point, with the Laplace covariance
    designs = working_designs(spec, ops, w_t, b_t)
    model = LinearGaussianModel(spec.mesh, designs, spec.priors, None, sym_cache)
    out = _fit_model(model, spec, designs, hyper, starts=None if hyper is not None else [h_prev])
    res = _result(spec, *out, lin_iterations=len(history), lin_history=history,
                  expansion=(w_t.copy(), b_t.copy()))
    res.flags = flags + res.flags
    res.converged = converged and res.converged
    return res


def fit(spec: ModelSpec, data: Dataset, hyper=None) -> FitResult:
    return fit_linear(spec, data, hyper) if spec.link == "identity" else fit_nonlinear(spec, data, hyper)


def refit_at(spec: ModelSpec, data: Dataset, hyper, expansion=None) -> FitResult:
    """Latent posterior at fixed hyperparameters (and expansion point for the log link)."""
    if spec.link == "identity":
        return fit_linear(spec, data, hyper)
    ops = replicate_operators(spec, data)
    w_t, b_t = expansion
    designs = working_designs(spec, ops, w_t, b_t)
    model = LinearGaussianModel(spec.mesh, designs, spec.priors)
    return _result(spec, *_fit_model(model, spec, designs, hyper), expansion=(w_t, b_t))


# ---------------------------------------------------------------------------
# prediction and sampling


def predict(fit: FitResult, locations=None):
    """Posterior mean and sd of ``eta_r`` per replicate.

    With ``locations=None`` the mesh vertices are used. Returns two arrays of
    shape ``(n_locations, R)``.
    """
    if locations is None:
        return fit.eta_mean.copy(), fit.eta_sd.copy()
    mesh = fit.spec.mesh
    A = mesh.basis_matrix(locations)
    Z = np.column_stack([np.ones(A.shape[0]), A @ fit.spec.x])
    return fit.posterior.predict(A, Z)


def posterior_sample(fit: FitResult, B: int, seed) -> np.ndarray:
    """Joint posterior draws of ``eta_r`` at mesh vertices, shape ``(B, R, K)``."""
    rng = np.random.default_rng(seed)
    if B == 0:
        return np.zeros((0, fit.R, fit.spec.mesh.K))
    w, beta = fit.posterior.sample(B, rng)
    return w + (beta[:, 0][:, None, None] + beta[:, 1][:, None, None] * fit.spec.x[None, None, :])


def average_speed_estimand(samples) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Median and 95% interval of the replicate-averaged speed ``mean_r exp(-eta_r)``.

    ``samples`` has shape ``(B, R, K)``. The log of the averaged speed is
    summarized by a Gaussian across the ``B`` draws.
    """
    s = np.asarray(samples, dtype=float)
    if s.ndim != 3 or s.shape[0] == 0:
        raise ValueError("samples must have shape (B, R, K) with B >= 1")
    log_vbar = np.log(np.mean(np.exp(-s), axis=1))
    mu = log_vbar.mean(axis=0)
    sd = log_vbar.std(axis=0, ddof=1) if s.shape[0] > 1 else np.zeros_like(mu)
    return np.exp(mu), np.exp(mu - 1.96 * sd), np.exp(mu + 1.96 * sd)
