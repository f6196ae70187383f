"""Dirichlet-process mixture of Gaussians with a conjugate Normal-Wishart prior.

Inference is collapsed Gibbs sampling interleaved with split-merge moves
whose proposals come from restricted Gibbs launch scans. The concentration
``alpha`` is resampled during burn-in with the auxiliary-variable scheme for
a Gamma prior and then frozen at the mode of those draws. The returned model
is the highest-posterior partition visited by any chain, with small clusters
pruned and their points reassigned.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import gammaln, multigammaln
from scipy.stats import gaussian_kde

from . import kernels
from .errors import DimensionMismatch, EmptyData, InvalidPrior, NonFiniteData

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class NormalWishartPrior:
    """``Sigma ~ InvWishart(psi, nu0)``, ``mu | Sigma ~ N(mu0, Sigma / kappa0)``."""

    mu0: np.ndarray
    kappa0: float
    nu0: float
    psi: np.ndarray

    def __post_init__(self):
        mu0 = np.atleast_1d(np.asarray(self.mu0, dtype=float))
        psi = np.atleast_2d(np.asarray(self.psi, dtype=float))
        d = len(mu0)
        if psi.shape != (d, d):
            raise InvalidPrior("psi must be d x d")
        if not self.kappa0 > 0:
            raise InvalidPrior("kappa0 must be positive")
        if not self.nu0 > d - 1:
            raise InvalidPrior("nu0 must exceed d - 1")
        if not np.allclose(psi, psi.T, rtol=0, atol=1e-12 * max(1.0, np.abs(psi).max())):
            raise InvalidPrior("psi must be symmetric")
        try:
            np.linalg.cholesky(psi)
        except np.linalg.LinAlgError as exc:
            raise InvalidPrior("psi must be positive definite") from exc
        object.__setattr__(self, "mu0", mu0)
        object.__setattr__(self, "psi", psi)

    @property
    def dim(self) -> int:
        return len(self.mu0)

    @classmethod
    def from_data(cls, X, kappa0: float = 0.01, jitter: float = 1e-6) -> "NormalWishartPrior":
        """Weakly informative default: data mean, empirical covariance (plus a
        small ridge so it stays positive definite), ``nu0 = d + 2``."""
        X = _check_data(X)
        d = X.shape[1]
        cov = np.cov(X, rowvar=False, bias=True).reshape(d, d)
        ridge = jitter * max(float(np.trace(cov)) / d, 1e-6)
        return cls(X.mean(0), kappa0, d + 2.0, cov + ridge * np.eye(d))


@dataclass(frozen=True)
class DpmComponent:
    weight: float
    mean: np.ndarray
    cov: np.ndarray
    members: tuple[int, ...] = ()


@dataclass(frozen=True)
class ChainResult:
    labels: np.ndarray
    log_posterior: float
    alpha: float
    k_trace: np.ndarray
    alpha_trace: np.ndarray


@dataclass(frozen=True)
class DpmModel:
    components: tuple[DpmComponent, ...]
    alpha: float
    prior: NormalWishartPrior | None = None
    labels: np.ndarray | None = None
    chains: tuple[ChainResult, ...] = field(default=(), repr=False)

    @property
    def k(self) -> int:
        return len(self.components)

    @property
    def dim(self) -> int:
        return len(self.components[0].mean)

    @cached_property
    def _gauss(self):
        logw, means, prec_chol, logdets = [], [], [], []
        for c in self.components:
            L = np.linalg.cholesky(c.cov)
            logw.append(math.log(c.weight) if c.weight > 0 else -math.inf)
            means.append(c.mean)
            prec_chol.append(np.linalg.inv(L))
            logdets.append(2.0 * np.log(np.diag(L)).sum())
        return np.array(logw), np.array(means), np.array(prec_chol), np.array(logdets)

    def component_logpdf(self, X) -> np.ndarray:
        """``log pi_w + log N(x | mu_w, Sigma_w)`` for every row and component."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dim:
            raise DimensionMismatch(f"expected dimension {self.dim}, got {X.shape[1]}")
        logw, means, pc, logdets = self._gauss
        diff = X[:, None, :] - means[None]
        z = np.einsum("kab,nkb->nka", pc, diff)
        return logw - 0.5 * (np.sum(z * z, -1) + logdets + self.dim * LOG_2PI)

    def to_json(self) -> str:
        return json.dumps({"alpha": self.alpha, "components": [
            {"weight": c.weight, "mean": c.mean.tolist(), "cov": c.cov.tolist()} for c in self.components]})

    @classmethod
    def from_json(cls, text: str) -> "DpmModel":
        obj = json.loads(text)
        comps = tuple(DpmComponent(float(c["weight"]), np.asarray(c["mean"], float), np.asarray(c["cov"], float))
                      for c in obj["components"])
        return cls(comps, float(obj["alpha"]))


@dataclass(frozen=True)
class McmcConfig:
    iters: int = 2000
    burnin: int = 500
    chains: int = 4
    seed: int = 0
    scans: int = 5
    split_merge: int = 1
    alpha: float = 1.0
    alpha_prior: tuple[float, float] = (1.0, 1.0)
    estimate_alpha: bool = True
    n_jobs: int = 1


def _check_data(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
        raise EmptyData("need at least one d-dimensional datum")
    if not np.all(np.isfinite(X)):
        raise NonFiniteData("data contain NaN or infinity")
    return X


# ----------------------------------------------------------------------------
# concentration parameter


def _west_step(alpha: float, k: int, n: int, a: float, b: float, rng: np.random.Generator) -> float:
    eta = rng.beta(alpha + 1.0, n)
    rate = b - math.log(eta)
    odds = (a + k - 1.0) / (n * rate)
    shape = a + k if rng.random() < odds / (1.0 + odds) else a + k - 1.0
    return float(rng.gamma(shape, 1.0 / rate))


def _mode(samples: np.ndarray) -> float:
    samples = np.asarray(samples, dtype=float)
    if len(samples) < 2 or np.ptp(samples) <= 1e-12 * max(1.0, abs(samples.mean())):
        return float(samples.mean())
    grid = np.linspace(samples.min(), samples.max(), 512)
    try:
        dens = gaussian_kde(samples)(grid)
    except np.linalg.LinAlgError:
        return float(np.median(samples))
    return float(grid[int(np.argmax(dens))])


def estimate_alpha(k_samples, n: int, gamma_prior=(1.0, 1.0), seed=0, alpha0: float | None = None):
    """Posterior draws of ``alpha`` given cluster counts, one draw per count,
    and the mode of the draws."""
    a, b = (float(v) for v in gamma_prior)
    if not (a > 0 and b > 0) or n < 1:
        raise InvalidPrior("gamma prior parameters must be positive and n >= 1")
    rng = np.random.default_rng(seed)
    alpha = a / b if alpha0 is None else float(alpha0)
    out = np.empty(len(k_samples))
    for t, k in enumerate(k_samples):
        alpha = _west_step(alpha, int(k), n, a, b, rng)
        out[t] = alpha
    return out, _mode(out)


# ----------------------------------------------------------------------------
# sampler


class _Chain:
    def __init__(self, X: np.ndarray, prior: NormalWishartPrior, cfg: McmcConfig, rng: np.random.Generator):
        self.X = np.ascontiguousarray(X - prior.mu0)
        self.prior = prior
        self.cfg = cfg
        self.rng = rng
        n, d = self.X.shape
        self.n, self.d = n, d
        self.n_slots = n + 2
        self.prior_slot = self.n_slots - 1
        self.z = np.zeros(n, dtype=np.int64)
        self.counts = np.zeros(self.n_slots, dtype=np.int64)
        self.sums = np.zeros((self.n_slots, d))
        self.outer = np.zeros((self.n_slots, d, d))
        self.mun = np.zeros((self.n_slots, d))
        self.chol = np.zeros((self.n_slots, d, d))
        self.cst = np.zeros(self.n_slots)
        self.dfp = np.zeros(self.n_slots)
        self.psi0 = np.ascontiguousarray(prior.psi)
        self.logdet_psi0 = np.linalg.slogdet(prior.psi)[1]
        self.rebuild()

    # state bookkeeping

    def _set_slots(self, slots) -> None:
        for k in slots:
            m = self.z == k
            xs = self.X[m]
            self.counts[k] = len(xs)
            self.sums[k] = xs.sum(0)
            self.outer[k] = np.tril(xs.T @ xs)
        kernels.dpm_refresh(list(slots), self.counts, self.sums, self.outer, self.psi0,
                            self.prior.kappa0, self.prior.nu0, self.mun, self.chol, self.cst, self.dfp)

    def rebuild(self) -> None:
        self.counts[:] = 0
        self.sums[:] = 0.0
        self.outer[:] = 0.0
        self._set_slots(list(np.unique(self.z)) + [self.prior_slot])

    def active(self) -> np.ndarray:
        return np.flatnonzero(self.counts[: self.prior_slot] > 0)

    def log_ml(self, n: int, s: np.ndarray, ss_low: np.ndarray) -> float:
        p = self.prior
        d = self.d
        kn, nun = p.kappa0 + n, p.nu0 + n
        ss = ss_low + np.tril(ss_low, -1).T
        psin = p.psi + ss - np.outer(s, s) / kn
        return float(-0.5 * n * d * math.log(math.pi) + 0.5 * d * (math.log(p.kappa0) - math.log(kn))
                     + 0.5 * p.nu0 * self.logdet_psi0 - 0.5 * nun * np.linalg.slogdet(psin)[1]
                     + multigammaln(0.5 * nun, d) - multigammaln(0.5 * p.nu0, d))

    def slot_ml(self, k: int) -> float:
        return self.log_ml(int(self.counts[k]), self.sums[k], self.outer[k])

    def log_posterior(self, alpha: float) -> float:
        act = self.active()
        sizes = self.counts[act]
        eppf = (len(act) * math.log(alpha) + float(gammaln(sizes).sum())
                + math.lgamma(alpha) - math.lgamma(alpha + self.n))
        return eppf + sum(self.slot_ml(int(k)) for k in act)

    def _pass(self, order, alpha, ka=-1, kb=-1, forced=None) -> float:
        return kernels.dpm_pass(self.X, self.z, order, self.rng.random(len(order)), self.counts, self.sums,
                                self.outer, self.psi0, self.prior.kappa0, self.prior.nu0, self.mun, self.chol,
                                self.cst, self.dfp, alpha, ka, kb, forced)

    # moves

    def gibbs(self, alpha: float) -> None:
        self._pass(self.rng.permutation(self.n), alpha)

    def split_merge(self, alpha: float) -> None:
        if self.n < 2:
            return
        i, j = (int(v) for v in self.rng.choice(self.n, 2, replace=False))
        ci, cj = int(self.z[i]), int(self.z[j])
        S = np.flatnonzero((self.z == ci) | (self.z == cj))
        S = S[(S != i) & (S != j)]
        saved = self.z.copy()
        if ci == cj:
            merged_ml = self.slot_ml(ci)
            cnew = int(np.argmax(self.counts[: self.prior_slot] == 0))
            self.z[i] = cnew
            self.z[S] = np.where(self.rng.random(len(S)) < 0.5, cnew, cj)
            self._set_slots([cnew, cj])
            for _ in range(self.cfg.scans):
                self._pass(self.rng.permutation(S), alpha, cnew, cj)
            logq = self._pass(self.rng.permutation(S), alpha, cnew, cj)
            n1, n2 = int(self.counts[cnew]), int(self.counts[cj])
            log_acc = (math.log(alpha) + math.lgamma(n1) + math.lgamma(n2) - math.lgamma(n1 + n2)
                       + self.slot_ml(cnew) + self.slot_ml(cj) - merged_ml - logq)
            if math.log(self.rng.random()) >= log_acc:
                self.z = saved
                self._set_slots([cnew, cj])
        else:
            ml_i, ml_j = self.slot_ml(ci), self.slot_ml(cj)
            ni, nj = int(self.counts[ci]), int(self.counts[cj])
            self.z[S] = np.where(self.rng.random(len(S)) < 0.5, ci, cj)
            self._set_slots([ci, cj])
            for _ in range(self.cfg.scans):
                self._pass(self.rng.permutation(S), alpha, ci, cj)
            order = self.rng.permutation(S)
            logq = self._pass(order, alpha, ci, cj, saved[order])
            self.z = saved.copy()
            mask = (self.z == ci) | (self.z == cj)
            m_s = self.X[mask]
            merged_ml = self.log_ml(len(m_s), m_s.sum(0), np.tril(m_s.T @ m_s))
            log_acc = (-math.log(alpha) + math.lgamma(ni + nj) - math.lgamma(ni) - math.lgamma(nj)
                       + merged_ml - ml_i - ml_j + logq)
            if math.log(self.rng.random()) < log_acc:
                self.z[self.z == cj] = ci
            self._set_slots([ci, cj])

    def run(self) -> ChainResult:
        cfg = self.cfg
        a, b = cfg.alpha_prior
        alpha = float(cfg.alpha)
        k_trace, a_trace = [], []
        best, best_z = -math.inf, self.z.copy()
        for it in range(cfg.iters):
            self.gibbs(alpha)
            for _ in range(cfg.split_merge):
                self.split_merge(alpha)
            self.rebuild()
            k = len(self.active())
            k_trace.append(k)
            if cfg.estimate_alpha and it < cfg.burnin:
                alpha = _west_step(alpha, k, self.n, a, b, self.rng)
                a_trace.append(alpha)
                if it == cfg.burnin - 1:
                    alpha = _mode(np.array(a_trace))
            if it >= cfg.burnin or it == cfg.iters - 1:
                lp = self.log_posterior(alpha)
                if lp > best:
                    best, best_z = lp, self.z.copy()
        return ChainResult(_relabel(best_z), best, alpha, np.array(k_trace), np.array(a_trace))


def _relabel(z: np.ndarray) -> np.ndarray:
    """Labels 0..k-1 in order of first appearance."""
    _, first, inv = np.unique(z, return_index=True, return_inverse=True)
    rank = np.argsort(np.argsort(first))
    return rank[inv].astype(np.int64)


def _components(X: np.ndarray, labels: np.ndarray, prior: NormalWishartPrior) -> list[DpmComponent]:
    n, d = X.shape
    comps = []
    for w in range(int(labels.max()) + 1):
        idx = np.flatnonzero(labels == w)
        xs = X[idx] - prior.mu0
        m = len(xs)
        kn, nun = prior.kappa0 + m, prior.nu0 + m
        s = xs.sum(0)
        psin = prior.psi + xs.T @ xs - np.outer(s, s) / kn
        denom = nun - d - 1.0 if nun - d - 1.0 > 0 else nun
        cov = psin / denom
        comps.append(DpmComponent(m / n, prior.mu0 + s / kn, 0.5 * (cov + cov.T), tuple(int(i) for i in idx)))
    return comps


def prune_threshold(n: int) -> int:
    return max(5, math.ceil(0.01 * n))


def model_from_partition(X, labels, prior: NormalWishartPrior, alpha: float, chains=()) -> DpmModel:
    """Components from a hard partition; clusters below the size threshold are
    dropped and their points moved to the surviving component of highest
    weighted density."""
    X = _check_data(X)
    labels = _relabel(np.asarray(labels))
    sizes = np.bincount(labels)
    keep = np.flatnonzero(sizes >= prune_threshold(len(X)))
    if len(keep) == 0:
        keep = np.array([int(np.argmax(sizes))])
    remap = -np.ones(len(sizes), dtype=np.int64)
    remap[keep] = np.arange(len(keep))
    new = remap[labels]
    orphans = np.flatnonzero(new < 0)
    if len(orphans):
        survivors = DpmModel(tuple(_components(X[new >= 0], new[new >= 0], prior)), alpha, prior)
        new[orphans] = np.argmax(survivors.component_logpdf(X[orphans]), axis=1)
    new = _relabel(new)
    return DpmModel(tuple(_components(X, new, prior)), float(alpha), prior, new, tuple(chains))


def run_chains(X, prior: NormalWishartPrior | None = None, config: McmcConfig = McmcConfig()) -> list[ChainResult]:
    X = _check_data(X)
    prior = prior or NormalWishartPrior.from_data(X)
    if prior.dim != X.shape[1]:
        raise DimensionMismatch("prior dimension does not match data")
    seeds = np.random.SeedSequence(config.seed).spawn(config.chains)

    def one(ss):
        return _Chain(X, prior, config, np.random.default_rng(ss)).run()

    if config.n_jobs > 1 and config.chains > 1:
        with ThreadPoolExecutor(config.n_jobs) as ex:
            return list(ex.map(one, seeds))
    return [one(s) for s in seeds]


def fit_dpm(X, prior: NormalWishartPrior | None = None, alpha: float | None = None,
            config: McmcConfig = McmcConfig()) -> DpmModel:
    """Fit the mixture and return the pruned highest-posterior partition.

    ``alpha`` given explicitly is held fixed; otherwise it is estimated.
    """
    X = _check_data(X)
    prior = prior or NormalWishartPrior.from_data(X)
    if alpha is not None:
        config = McmcConfig(**{**config.__dict__, "alpha": float(alpha), "estimate_alpha": False})
    chains = run_chains(X, prior, config)
    best = max(range(len(chains)), key=lambda c: chains[c].log_posterior)
    return model_from_partition(X, chains[best].labels, prior, chains[best].alpha, chains)


# ----------------------------------------------------------------------------
# evaluation


def predictive_logdensity(model: DpmModel, x) -> np.ndarray | float:
    """``log sum_w pi_w N(x | mu_w, Sigma_w)``; ``x`` may be a single vector or rows."""
    single = np.ndim(x) == 1
    lp = model.component_logpdf(x)
    mx = lp.max(axis=1, keepdims=True)
    out = (mx + np.log(np.exp(lp - mx).sum(axis=1, keepdims=True)))[:, 0]
    return float(out[0]) if single else out


def component_assign(model: DpmModel, x) -> np.ndarray | int:
    """Index of the component with the highest weighted density (lowest on ties)."""
    single = np.ndim(x) == 1
    idx = np.argmax(model.component_logpdf(x), axis=1)
    return int(idx[0]) if single else idx


def adjusted_rand_index(a, b) -> float:
    a = np.unique(np.asarray(a), return_inverse=True)[1]
    b = np.unique(np.asarray(b), return_inverse=True)[1]
    n = len(a)
    table = np.zeros((a.max() + 1, b.max() + 1), dtype=np.int64)
    np.add.at(table, (a, b), 1)
    comb = lambda v: v * (v - 1) / 2.0  # noqa: E731
    sum_ij = comb(table).sum()
    sum_a, sum_b = comb(table.sum(1)).sum(), comb(table.sum(0)).sum()
    expected = sum_a * sum_b / comb(n) if n > 1 else 0.0
    max_idx = 0.5 * (sum_a + sum_b)
    if max_idx == expected:
        return 1.0
    return float((sum_ij - expected) / (max_idx - expected))
