"""Hamiltonian Monte Carlo with a diagonal mass matrix.

Potential energy is ``U(x) = -log target(x)`` and kinetic energy
``K(p) = p' M^-1 p / 2`` with momenta drawn from N(0, M).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .model import ModelParams, as_param_array

log = logging.getLogger(__name__)

MAX_ENERGY_ERROR = 1000.0


class DivergentTrajectory(FloatingPointError):
    """Leapfrog left the region where the target is finite."""


@dataclass(frozen=True)
class HmcConfig:
    step_size: float = 0.001
    n_leapfrog: int = 2
    n_samples: int = 1200
    burn_in: int = 200
    mass_diag: tuple = (20.0, 20.0, 20.0, 20.0)
    n_chains: int = 2
    seed: int = 0
    init_jitter: float = 0.0
    adapt_step: bool = False
    target_accept: float = 0.8

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.n_leapfrog < 1 or self.n_samples < 1 or self.n_chains < 1:
            raise ValueError("n_leapfrog, n_samples and n_chains must be positive")
        if not 0 <= self.burn_in < self.n_samples:
            raise ValueError("burn_in must satisfy 0 <= burn_in < n_samples")
        if any(not m > 0 for m in self.mass_diag):
            raise ValueError("mass matrix entries must be positive")

    @classmethod
    def from_variances(cls, v, **kw) -> "HmcConfig":
        """Mass matrix with diagonal 1/v."""
        return cls(mass_diag=tuple(float(m) for m in 1.0 / np.asarray(v, dtype=float)), **kw)

    @classmethod
    def scheme(cls, name: str, **kw) -> "HmcConfig":
        """Named simulation settings ("scheme1" is the default config)."""
        try:
            base = SCHEMES[name]
        except KeyError:
            raise ValueError(f"unknown HMC scheme {name!r}; available: {sorted(SCHEMES)}") from None
        return cls.from_variances(base["v"], step_size=base["step_size"], n_leapfrog=base["n_leapfrog"], **kw)


# step size, leapfrog steps and proposal variances (mass = 1 / v) of the two
# simulation settings
SCHEMES = {
    "scheme1": {"step_size": 0.001, "n_leapfrog": 2, "v": (0.05, 0.05, 0.05, 0.05)},
    "scheme2": {"step_size": 0.05, "n_leapfrog": 5, "v": (0.1, 0.08, 0.006, 0.005)},
}


@dataclass
class PosteriorChains:
    draws: np.ndarray  # (n_chains, n_kept, dim)
    accept_rate: np.ndarray
    rhat: np.ndarray
    step_size: float = 0.0
    n_divergent: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def flat(self) -> np.ndarray:
        return self.draws.reshape(-1, self.draws.shape[-1])

    @classmethod
    def from_draws(cls, draws, accept_rate=None) -> "PosteriorChains":
        draws = np.asarray(draws, dtype=float)
        if draws.ndim == 2:
            draws = draws[None]
        acc = np.ones(draws.shape[0]) if accept_rate is None else np.asarray(accept_rate, float)
        return cls(draws, acc, split_rhat(draws))


def leapfrog(position, momentum, grad_fn, step_size, n_steps, mass_diag, grad0=None):
    """Run ``n_steps`` leapfrog steps; returns (position, momentum, final_grad).

    ``grad_fn`` is the gradient of the log target.  ``grad0`` may carry the
    gradient at ``position`` to save an evaluation.
    """
    q = np.array(position, dtype=float)
    p = np.array(momentum, dtype=float)
    inv_m = 1.0 / np.asarray(mass_diag, dtype=float)
    g = grad_fn(q) if grad0 is None else grad0
    for _ in range(n_steps):
        p = p + 0.5 * step_size * g
        q = q + step_size * inv_m * p
        g = grad_fn(q)
        if not np.all(np.isfinite(g)):
            raise DivergentTrajectory("non-finite gradient along the trajectory")
        p = p + 0.5 * step_size * g
    return q, p, g


def kinetic(p, mass_diag):
    return 0.5 * float(np.sum(p * p / np.asarray(mass_diag)))


def _run_chain(log_post_fn, grad_fn, cfg: HmcConfig, x0, rng):
    mass = np.asarray(cfg.mass_diag, dtype=float)
    sd = np.sqrt(mass)
    x = np.array(x0, dtype=float)
    lp = log_post_fn(x)
    if not np.isfinite(lp):
        raise ValueError(f"log target is not finite at the initial point {x}")
    g = grad_fn(x)
    eps = cfg.step_size
    # dual averaging state (Hoffman & Gelman); used only when adapt_step
    mu, hbar, log_eps_bar = math.log(10 * eps), 0.0, 0.0
    out = np.empty((cfg.n_samples, x.size))
    accepted = 0
    divergent = 0
    for t in range(cfg.n_samples):
        p0 = sd * rng.standard_normal(x.size)
        h0 = -lp + kinetic(p0, mass)
        acc_prob = 0.0
        try:
            xn, pn, gn = leapfrog(x, p0, grad_fn, eps, cfg.n_leapfrog, mass, grad0=g)
            lpn = log_post_fn(xn)
            h1 = -lpn + kinetic(pn, mass)
            dh = h1 - h0
            if not np.isfinite(dh) or dh > MAX_ENERGY_ERROR:
                raise DivergentTrajectory
            acc_prob = min(1.0, math.exp(-dh))
        except DivergentTrajectory:
            divergent += 1
        else:
            if rng.uniform() <= acc_prob:
                x, lp, g = xn, lpn, gn
                if t >= cfg.burn_in:
                    accepted += 1
        if cfg.adapt_step and t < cfg.burn_in:
            m = t + 1
            hbar = (1 - 1 / (m + 10)) * hbar + (cfg.target_accept - acc_prob) / (m + 10)
            log_eps = mu - math.sqrt(m) / 0.05 * hbar
            w = m**-0.75
            log_eps_bar = w * log_eps + (1 - w) * log_eps_bar
            eps = math.exp(log_eps) if t < cfg.burn_in - 1 else math.exp(log_eps_bar)
        out[t] = x
    kept = cfg.n_samples - cfg.burn_in
    return out[cfg.burn_in:], accepted / kept, divergent, eps


def sample(log_post_fn, grad_fn, config: HmcConfig, init) -> PosteriorChains:
    """Draw ``config.n_chains`` independent HMC chains; burn-in discarded.

    Each chain gets its own RNG stream spawned from ``config.seed`` so the
    result is reproducible.
    """
    x0 = as_param_array(init) if isinstance(init, ModelParams) or np.size(init) == 4 else np.asarray(init, float)
    seeds = np.random.SeedSequence(config.seed).spawn(config.n_chains)
    draws, acc, div, eps = [], [], [], []
    for ss in seeds:
        rng = np.random.default_rng(ss)
        start = x0 + config.init_jitter * rng.standard_normal(x0.size) if config.init_jitter else x0
        d, a, n_div, e = _run_chain(log_post_fn, grad_fn, config, start, rng)
        draws.append(d)
        acc.append(a)
        div.append(n_div)
        eps.append(e)
        if a < 0.01:
            log.warning("HMC chain accepted %.2f%% of proposals; consider a smaller step size", 100 * a)
    draws = np.stack(draws)
    return PosteriorChains(draws, np.array(acc), split_rhat(draws), float(np.mean(eps)), np.array(div))


def posterior_mean(chains: PosteriorChains) -> ModelParams | np.ndarray:
    flat = chains.flat
    if flat.shape[0] == 0:
        raise ValueError("no post-burn-in draws")
    m = flat.mean(axis=0)
    return ModelParams.from_array(m) if m.size == 4 else m


def hpd_interval(chains, level: float = 0.95) -> np.ndarray:
    """Shortest interval holding ceil(level * n) draws, per coordinate."""
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    flat = chains.flat if isinstance(chains, PosteriorChains) else np.asarray(chains, float).reshape(len(chains), -1)
    n = flat.shape[0]
    k = int(math.ceil(level * n))
    out = np.empty((flat.shape[1], 2))
    for j in range(flat.shape[1]):
        x = np.sort(flat[:, j])
        widths = x[k - 1:] - x[: n - k + 1]
        i = int(np.argmin(widths))
        out[j] = x[i], x[i + k - 1]
    return out


def split_rhat(draws) -> np.ndarray:
    """Split-R-hat per coordinate; 1.0 when there is no variation at all."""
    draws = np.asarray(draws, dtype=float)
    m, n, d = draws.shape
    half = n // 2
    if half < 2:
        return np.full(d, np.nan)
    parts = np.concatenate([draws[:, :half], draws[:, n - half:]], axis=0)
    w = parts.var(axis=1, ddof=1).mean(axis=0)
    b_over_n = parts.mean(axis=1).var(axis=0, ddof=1)
    var_plus = (half - 1) / half * w + b_over_n
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.sqrt(var_plus / w)
    return np.where(w > 0, r, np.where(b_over_n > 0, np.inf, 1.0))


def diagnostics(chains: PosteriorChains):
    if chains.draws.shape[0] < 2:
        log.warning("R-hat from a single chain uses only its split halves")
    return chains.accept_rate, split_rhat(chains.draws)
