"""Certify the variational bound against exact Kalman-filter likelihoods.

The test system is a scalar linear-Gaussian state-space model

    s_1 ~ N(0, p0),  s_t = a s_{t-1} + N(0, q),  x_t = c s_t + N(0, r)

and the variational family is a mean-field Gaussian with one (mean,
variance) pair per step.  The bound is reconstruction log-likelihood minus
the per-step KL terms, using the same Gaussian helpers as the world model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from navmorph.losses import gaussian_nll, kl_diag_gaussian
from navmorph.numcore import Adam, ParameterSet, Tape, Tensor, no_grad
from navmorph.rssm import GaussianParams


@dataclass
class LinearGaussianSSM:
    a: float
    c: float
    q: float
    r: float
    p0: float
    x: np.ndarray

    @classmethod
    def random(cls, rng: np.random.Generator, steps: int = 5) -> "LinearGaussianSSM":
        a = rng.uniform(-0.95, 0.95)
        c = rng.uniform(0.5, 1.5) * rng.choice([-1.0, 1.0])
        q, r, p0 = rng.uniform(0.1, 1.0, size=3)
        s = rng.normal(0.0, math.sqrt(p0))
        xs = []
        for t in range(steps):
            if t:
                s = a * s + rng.normal(0.0, math.sqrt(q))
            xs.append(c * s + rng.normal(0.0, math.sqrt(r)))
        return cls(a, c, q, r, p0, np.array(xs))


def kalman_loglik(m: LinearGaussianSSM) -> float:
    """Exact log p(x_1..x_T) by the predictive decomposition."""
    mean, var = 0.0, m.p0
    total = 0.0
    for t, x in enumerate(m.x):
        if t:
            mean, var = m.a * mean, m.a * m.a * var + m.q
        s_var = m.c * m.c * var + m.r
        innov = x - m.c * mean
        total += -0.5 * (math.log(2 * math.pi * s_var) + innov * innov / s_var)
        gain = var * m.c / s_var
        mean, var = mean + gain * innov, (1.0 - gain * m.c) * var
    return total


def elbo(m: LinearGaussianSSM, means: Tensor, log_vars: Tensor) -> Tensor:
    """Mean-field evidence lower bound (a Tensor, differentiable in q)."""
    var = log_vars.exp()
    sd = var.sqrt()
    recon = -gaussian_nll(m.x, means * m.c, np.full(len(m.x), m.r)) \
        - var.sum() * (m.c * m.c / (2 * m.r))
    first = kl_diag_gaussian(GaussianParams(means[:1], sd[:1]),
                             GaussianParams(Tensor(np.zeros(1)), Tensor(np.full(1, math.sqrt(m.p0)))))
    total = recon - first
    if len(m.x) > 1:
        # E_{q(s_{t-1})} KL(q_t || N(a s_{t-1}, q)) adds a^2 var_{t-1} / (2q)
        trans = kl_diag_gaussian(
            GaussianParams(means[1:], sd[1:]),
            GaussianParams(means[:-1] * m.a, Tensor(np.full(len(m.x) - 1, math.sqrt(m.q)))),
        )
        total = total - trans - var[:-1].sum() * (m.a * m.a / (2 * m.q))
    return total


@dataclass
class ElboReport:
    elbo: float
    exact_loglik: float
    gap: float
    initial_gap: float
    fitted_gap: float

    @property
    def bound_holds(self) -> bool:
        """The bound holds both at the initial and at the fitted q."""
        return self.elbo <= self.exact_loglik + 1e-6 and self.fitted_gap >= -1e-6


def elbo_oracle_check(seed: int, fit_steps: int = 500, learning_rate: float = 0.05) -> ElboReport:
    """Evaluate the bound at the default q, then fit q by gradient ascent."""
    model = LinearGaussianSSM.random(np.random.default_rng(seed))
    exact = kalman_loglik(model)
    params = ParameterSet()
    means = params.add("means", np.zeros(len(model.x)))
    log_vars = params.add("log_vars", np.zeros(len(model.x)))
    with no_grad():
        initial = elbo(model, means, log_vars).item()
    opt = Adam(params, lr=learning_rate)
    for _ in range(fit_steps):
        params.zero_grad()
        with Tape() as tape:
            loss = -elbo(model, means, log_vars)
        tape.backward(loss)
        opt.step()
    with no_grad():
        fitted = elbo(model, means, log_vars).item()
    return ElboReport(initial, exact, exact - initial, exact - initial, exact - fitted)


def exact_posterior_elbo(c: float, q: float, r: float, x: np.ndarray) -> tuple[float, float]:
    """Tight case: with ``a = 0`` the states are independent, so the exact
    posterior lies in the mean-field family and the bound is attained."""
    m = LinearGaussianSSM(0.0, c, q, r, q, np.asarray(x, dtype=np.float64))
    post_var = 1.0 / (1.0 / q + c * c / r)
    post_mean = post_var * c * m.x / r
    with no_grad():
        value = elbo(m, Tensor(post_mean), Tensor(np.full(len(m.x), math.log(post_var)))).item()
    return value, kalman_loglik(m)
