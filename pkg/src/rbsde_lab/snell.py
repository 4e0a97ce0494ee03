"""Snell envelope on the lattice and the explicit solution for f(t, y, z) = z^2.

For the quadratic coefficient, ``N = Snell(exp(2 L~))`` with ``L~ = L`` before
maturity and ``xi`` at maturity; then ``Y = log(N) / 2``, ``Z = Zbar / (2N)``
and ``dK = dKbar / (2N)`` solve the reflected equation in continuous time.
On the lattice the log transform is exact only to first order in dt.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import DomainError, ScenarioError, SliceMismatch, TooLarge
from .lattice import (
    AdaptedField,
    BinomialLattice,
    backward_expectation,
    build_lattice,
    conditional_expectation,
    martingale_coefficient,
)
from .solver import DiscreteSolution

log = logging.getLogger(__name__)

BRUTE_FORCE_MAX_N = 6


@dataclass
class SnellDecomposition:
    """``N_{i+1} = N_i + Zbar_i dB - dKbar_i`` on both branches; ``Kbar_0 = 0``."""

    lattice: BinomialLattice
    N: AdaptedField
    Zbar: AdaptedField  # slices 0..N-1
    dKbar: AdaptedField  # slices 0..N, last slice zero
    payoff: AdaptedField

    @property
    def value(self) -> float:
        return float(self.N[0][0])

    def decomposition_error(self) -> float:
        lat = self.lattice
        err = 0.0
        for i in range(lat.N):
            n, z, dk, nxt = self.N[i], self.Zbar[i], self.dKbar[i], self.N[i + 1]
            up = np.abs(n + z * lat.sqrt_dt - dk - nxt[1:])
            dn = np.abs(n - z * lat.sqrt_dt - dk - nxt[:-1])
            err = max(err, float(up.max()), float(dn.max()))
        return err


def snell_envelope(lattice: BinomialLattice, payoff: AdaptedField) -> SnellDecomposition:
    if len(payoff) != lattice.N + 1:
        raise SliceMismatch(f"payoff needs {lattice.N + 1} slices, got {len(payoff)}")
    n = lattice.N
    env = [None] * (n + 1)
    zbar = [None] * n
    dk = [None] * (n + 1)
    env[n] = payoff[n].copy()
    dk[n] = np.zeros(n + 1)
    for i in range(n - 1, -1, -1):
        cont = conditional_expectation(lattice, env[i + 1])
        zbar[i] = martingale_coefficient(lattice, env[i + 1])
        p = payoff[i]
        # ties count as binding; the increment is zero there anyway
        binds = p >= cont
        env[i] = np.where(binds, p, cont)
        dk[i] = np.where(binds, env[i] - cont, 0.0)
    return SnellDecomposition(lattice, AdaptedField(env), AdaptedField(zbar), AdaptedField(dk), payoff)


def brute_force_snell(lattice: BinomialLattice, payoff: AdaptedField, chunk: int = 1 << 12) -> float:
    """Largest ``E[payoff at tau]`` over all Markov stopping rules, by enumeration.

    A rule is a stop/continue flag per non-terminal node; tau is the first
    visited node whose flag is set (maturity otherwise). The expectation is
    taken over all ``2^N`` paths, independently of any backward recursion.
    """
    n = lattice.N
    if n > BRUTE_FORCE_MAX_N:
        raise TooLarge(f"enumeration is capped at N={BRUTE_FORCE_MAX_N}, got N={n}")
    n_nodes = n * (n + 1) // 2
    offsets = np.array([i * (i + 1) // 2 for i in range(n)], dtype=np.int64)
    paths = np.array([[(p >> k) & 1 for k in range(n)] for p in range(1 << n)], dtype=np.int64)
    j = np.zeros((1 << n, n + 1), dtype=np.int64)
    np.cumsum(paths, axis=1, out=j[:, 1:])
    node_idx = offsets[None, :] + j[:, :n]  # flat index of the node visited at step i
    pay_on_path = np.stack([payoff[i][j[:, i]] for i in range(n + 1)], axis=1)  # (P, n+1)
    n_rules = 1 << n_nodes
    best = -math.inf
    bits = np.arange(n_nodes, dtype=np.int64)
    for start in range(0, n_rules, chunk):
        rules = np.arange(start, min(start + chunk, n_rules), dtype=np.int64)
        flags = ((rules[:, None] >> bits[None, :]) & 1).astype(bool)  # (R, n_nodes)
        on_path = flags[:, node_idx]  # (R, P, n)
        stop_now = np.concatenate([on_path, np.ones(on_path.shape[:2] + (1,), dtype=bool)], axis=2)
        tau = np.argmax(stop_now, axis=2)  # first stop
        stopped = np.take_along_axis(np.broadcast_to(pay_on_path, stop_now.shape), tau[..., None], axis=2)[..., 0]
        vals = stopped.mean(axis=1)
        best = max(best, float(vals.max()))
    return best


def explicit_quadratic(lattice: BinomialLattice, xi: np.ndarray, L: AdaptedField) -> DiscreteSolution:
    """Solution of the reflected equation with f = z^2 through the Snell envelope of exp(2 L~)."""
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (lattice.N + 1,):
        raise SliceMismatch(f"xi must have {lattice.N + 1} terminal values")
    if np.any(L[lattice.N] > xi):
        raise ScenarioError("L_T > xi at some terminal node")
    obstacle = AdaptedField([*L.slices[:-1], xi])
    payoff = obstacle.map(lambda s: np.exp(2.0 * s))
    if payoff.min() <= 0 or not payoff.is_finite():
        raise DomainError("exp(2 L~) must be finite and strictly positive")
    dec = snell_envelope(lattice, payoff)
    Y = dec.N.map(lambda s: 0.5 * np.log(s))
    Z = dec.Zbar.map_indexed(lambda i, s: s / (2.0 * dec.N[i]))
    dK = dec.dKbar.map_indexed(lambda i, s: s / (2.0 * dec.N[i]))
    sol = DiscreteSolution(lattice, Y, Z, dK, Y.copy(), meta={"method": "snell-log"})
    sol.meta["snell"] = dec
    return sol


@dataclass(frozen=True)
class IntegrabilityReport:
    E_exp2xi: float
    log_E_exp2xi: float
    E_exp2supL_proxy: float  # exp(2 max L) bounds E[sup_t exp(2 L_t)]


def check_integrability(lattice: BinomialLattice, xi: np.ndarray, L: AdaptedField | None = None) -> IntegrabilityReport:
    """Exact lattice value of ``E[exp(2 xi)]`` (computed in log space)."""
    xi = np.asarray(xi, dtype=float)
    w = lattice.weights(lattice.N)
    pos = w > 0
    lg = float(logsumexp(2.0 * xi[pos], b=w[pos]))
    with np.errstate(over="ignore"):
        val = float(np.exp(lg))
        supL = math.nan if L is None else float(np.exp(2.0 * L.max()))
    return IntegrabilityReport(val, lg, supL)


@dataclass(frozen=True)
class GrowthDiagnostic:
    steps: tuple[int, ...]
    log_values: tuple[float, ...]
    growing: bool
    warning: str | None


def integrability_growth(T: float, terminal, steps=(64, 128, 256), rel_jump: float = 0.05) -> GrowthDiagnostic:
    """Track ``E[exp(2 xi)]`` under refinement; flag values that keep climbing.

    On a finite lattice the expectation is always finite. Strictly increasing
    values whose log grows by more than ``rel_jump`` per refinement indicate
    that the continuum expectation is infinite.
    """
    logs = []
    for n in steps:
        lat = build_lattice(T, n)
        logs.append(check_integrability(lat, terminal(lat.states(n))).log_E_exp2xi)
    diffs = np.diff(logs)
    growing = bool(np.all(diffs > rel_jump * np.maximum(1.0, np.abs(logs[:-1]))))
    msg = None
    if growing:
        msg = (
            f"E[exp(2 xi)] keeps growing under refinement (log values {', '.join(f'{v:.4g}' for v in logs)}); "
            "the continuum expectation is likely infinite and no solution exists for f = z^2"
        )
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        log.warning(msg)
    return GrowthDiagnostic(tuple(steps), tuple(logs), growing, msg)


def lower_bound_chain(lattice: BinomialLattice, xi: np.ndarray, Y: AdaptedField) -> float:
    """Largest violation of ``Y >= E_i[xi] >= -E_i[xi^-]`` over all nodes."""
    xi = np.asarray(xi, dtype=float)
    m = backward_expectation(lattice, xi)
    neg = backward_expectation(lattice, np.maximum(-xi, 0.0))
    worst = 0.0
    for i in range(lattice.N + 1):
        worst = max(worst, float(np.max(m[i] - Y[i])), float(np.max(-neg[i] - m[i])))
    return worst
