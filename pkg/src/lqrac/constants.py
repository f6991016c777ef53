"""Executable closed-form constants: actor contraction/accuracy constants,
critic magnitude/bias/sharpness bounds, and the theory-mode schedule sizes
(epoch iteration counts, mixing skip, failure rate, total sample bound).

Values that the source analysis leaves as unspecified absolute constants
("O(1)") are pinned to 1 here and flagged ``order_only`` in the report, so
the artifact never pretends they were fixed.  These theory-mode schedule
sizes are reportable and executable but impractically conservative at desk
scale; practical runs use tuned per-epoch budgets instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .critic import D_Y
from .moments import BiasConstants, bias_constants, exact_bellman_system, sharpness_lower_bound
from .oracle import ActorConstants, actor_constants, policy_quantities
from .system import LinearSystem, require_stable


@dataclass(frozen=True)
class CriticConstants:
    """Magnitude, bias, and geometry constants for one evaluated policy."""

    m_h: float
    m_b: float
    l_h: float
    r_star: float
    b_bound: float
    c: float
    o_h: float
    o_b: float
    mu_lower: float
    mu_exact: float | None
    omega_x: float
    omega_y: float
    m_x: float
    m_y: float
    sigma_x: float
    sigma_y: float
    o_x: float
    o_y: float
    d_x: float
    d_y: float


@dataclass(frozen=True)
class ScheduleConstants:
    """Theory-mode multi-epoch sizing (order-only prefactors set to 1)."""

    epsilon_inner: float
    s_epochs: int
    k_s: tuple[float, ...]
    tau: float
    delta: float
    n_s: float
    total_samples: float
    headline_bound: float
    order_only: bool


@dataclass(frozen=True)
class ConstantsReport:
    actor: ActorConstants
    critic: CriticConstants
    schedules: ScheduleConstants

    def to_dict(self) -> dict:
        out: dict = {}
        for section_name in ("actor", "critic", "schedules"):
            section = getattr(self, section_name)
            for f in fields(section):
                val = getattr(section, f.name)
                if isinstance(val, tuple):
                    val = list(val)
                out[f"{section_name}.{f.name}"] = val
        return out

    def to_text(self) -> str:
        lines = []
        for key, val in self.to_dict().items():
            if isinstance(val, list):
                body = " ".join(_fmt(v) for v in val)
                lines.append(f"{key} = [{body}]")
            elif val is None:
                lines.append(f"{key} = none")
            elif isinstance(val, bool):
                lines.append(f"{key} = {str(val).lower()}")
            else:
                lines.append(f"{key} = {_fmt(val)}")
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.12g}"
    return str(v)


def critic_constants(
    sys: LinearSystem,
    policy,
    delta: float = 0.01,
    x0_norm: float = 0.0,
    d0: float | None = None,
    with_exact: bool = True,
) -> CriticConstants:
    """Assemble the per-policy critic constants.

    ``d0`` defaults to R*, the bound on ||vartheta(K)||, which makes the
    primal ball provably contain the solution when centered at 0; the
    effective schedule constant is then D_X = sqrt(2) d0.
    """
    pol = require_stable(sys, policy)
    bc: BiasConstants = bias_constants(sys, pol, x0_norm=x0_norm, delta=delta)
    if d0 is None:
        d0 = bc.r_star
    d_x = math.sqrt(2.0) * d0
    omega_y = 1.0
    omega_x = bc.r_star + 2.0 * math.sqrt(2.0) * d_x  # max theta_t -> 1
    log_term = math.log(math.e / delta)
    m_x = bc.m_h * omega_y * log_term
    m_y = (bc.m_h * omega_x + bc.m_b) * log_term
    mu_exact = None
    if with_exact:
        bs = exact_bellman_system(sys, pol)
        mu_exact = float(np.linalg.svd(bs.h, compute_uv=False)[-1])
    return CriticConstants(
        m_h=bc.m_h,
        m_b=bc.m_b,
        l_h=bc.l_h,
        r_star=bc.r_star,
        b_bound=bc.b_bound,
        c=bc.c,
        o_h=bc.o_h,
        o_b=bc.o_b,
        mu_lower=sharpness_lower_bound(sys, pol),
        mu_exact=mu_exact,
        omega_x=omega_x,
        omega_y=omega_y,
        m_x=m_x,
        m_y=m_y,
        sigma_x=2.0 * m_x,
        sigma_y=2.0 * m_y,
        o_x=bc.o_h * omega_y,
        o_y=bc.o_h * omega_x + bc.o_b,
        d_x=d_x,
        d_y=D_Y,
    )


def theory_schedule(
    critic: CriticConstants,
    bias: BiasConstants,
    rho: float,
    j0: float,
    epsilon: float,
    delta_star: float,
    epsilon_inner: float,
    d0: float,
) -> ScheduleConstants:
    """Theory-mode epoch sizing for a target inner accuracy
    ||p_S - vartheta||^2 <= epsilon_inner (order-only prefactors = 1)."""
    mu = critic.mu_lower if critic.mu_lower > 0 else (critic.mu_exact or 1.0)
    s_epochs = max(1, math.ceil(math.log2(2.0 * d0**2 / epsilon_inner)))
    delta = (
        epsilon_inner
        / 200.0
        * min(
            mu**2 / (d0**2 * critic.o_x**2 + critic.d_y**2 * critic.o_y**2),
            1.0 / (d0 * critic.o_x**2 + critic.d_y * critic.o_y**2),
        )
    )
    log_inv_delta = math.log(1.0 / delta) if delta > 0 else math.inf
    k_s = tuple(
        5000.0
        * max(
            critic.l_h * critic.d_y / mu,
            (225.0 + log_inv_delta)
            / mu**2
            * (critic.sigma_x**2 + critic.d_y**2 * critic.sigma_y**2 / (4.0 * d0**2) * 2.0 ** (s - 1)),
        )
        for s in range(1, s_epochs + 1)
    )
    tau = (
        math.log(
            10.0
            * bias.c
            * (d0 * critic.m_x + critic.d_y * critic.m_y)
            * max(1.0 / (mu * epsilon_inner), 1.0 / math.sqrt(epsilon_inner))
        )
        / math.log(1.0 / rho)
        if 0 < rho < 1
        else 1.0
    )
    n_s = max(
        critic.l_h * critic.d_y / mu * math.log2(d0**2 / epsilon_inner),
        math.log(math.e / delta)
        / mu**2
        * max(
            critic.sigma_x**2 * math.log2(max(2.0, d0 / epsilon_inner)),
            critic.d_y**2 * critic.sigma_y**2 / epsilon_inner,
        ),
    )
    rho_sq = max(1e-16, 1.0 - rho**2)
    headline = (
        j0**9
        / (epsilon * rho_sq**3)
        * math.log(1.0 / (epsilon * delta_star)) ** 3.5
        * math.log(1.0 / epsilon) ** 2
    )
    return ScheduleConstants(
        epsilon_inner=epsilon_inner,
        s_epochs=s_epochs,
        k_s=k_s,
        tau=tau,
        delta=delta,
        n_s=n_s,
        total_samples=2.0 * n_s * tau,
        headline_bound=headline,
        order_only=True,
    )


def full_report(
    sys: LinearSystem,
    k0,
    kstar_quantities,
    epsilon: float = 1e-3,
    delta_star: float = 0.05,
) -> ConstantsReport:
    """Evaluate every displayed constant at the initial policy K0.

    ``kstar_quantities`` is the PolicyQuantities at the Riccati-optimal
    gain (supplies J(K*)).
    """
    pol = require_stable(sys, k0)
    q0 = policy_quantities(sys, pol)
    act = actor_constants(sys, q0.j, kstar_quantities.j, epsilon=epsilon)
    crit = critic_constants(sys, pol)
    bias = bias_constants(sys, pol)
    eps_inner = min(act.c4, act.c5, act.c6)
    sched = theory_schedule(
        crit,
        bias,
        rho=act.rho_bar,
        j0=q0.j,
        epsilon=epsilon,
        delta_star=delta_star,
        epsilon_inner=eps_inner,
        d0=crit.r_star,
    )
    return ConstantsReport(actor=act, critic=crit, schedules=sched)
