"""Marginal inference on the fully connected pairwise model over candidates.

Sum-product message passing runs in the log domain with damped synchronous
updates on a fixed schedule, so a run is deterministic given tables and
config. The same engine optionally propagates forward-mode tangents of the
node potentials, which is how training differentiates through the fixed
number of iterations. An exact enumeration oracle covers small instances.

Conventions: node potential of actor i is exp(-unary[i]); the edge factor of
the unordered pair {i, j} combines both stored directions,
exp(-(pairwise[i, j, a, b] + pairwise[j, i, b, a])), matching the ordered
double sum in the joint energy.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .energy import EnergyTables
from .errors import (DegenerateCondition, EmptyConditioningSet,
                     NumericalFailure, StateSpaceTooLarge)

MAX_JOINT_STATES = 10_000_000


@dataclass(frozen=True)
class LbpConfig:
    max_iters: int = 50
    damping: float = 0.5
    tol: float = 1e-6
    fixed_iterations: bool = False

    def __post_init__(self):
        if not 0.0 <= self.damping < 1.0:
            raise ValueError("damping must be in [0, 1)")
        if self.tol <= 0 or self.max_iters < 1:
            raise ValueError("tol must be positive and max_iters >= 1")

    def to_dict(self) -> dict:
        return {"max_iters": self.max_iters, "damping": self.damping,
                "tol": self.tol, "fixed_iterations": self.fixed_iterations}

    @classmethod
    def from_dict(cls, data: dict) -> "LbpConfig":
        return cls(**data)


@dataclass
class MarginalSet:
    """Per-actor marginals and pairwise beliefs over candidates.

    Linear-domain arrays satisfy the usual normalization; the log-domain
    copies stay meaningful even for candidates whose mass underflows.
    Diagonal pairwise blocks are unused and stored as zeros.
    """

    marginals: np.ndarray            # (N+1, K)
    pairwise_beliefs: np.ndarray     # (N+1, N+1, K, K)
    converged: bool
    iters_used: int
    log_marginals: np.ndarray
    log_pairwise_beliefs: np.ndarray
    residuals: list[float] = field(default_factory=list)

    @property
    def n_nodes(self) -> int:
        return self.marginals.shape[0]

    @property
    def k(self) -> int:
        return self.marginals.shape[1]


def _lse(x, axis=-1, keepdims=False):
    m = np.max(x, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True))
    return out if keepdims else np.squeeze(out, axis=axis)


def _softmax(x, axis=-1):
    return np.exp(x - _lse(x, axis=axis, keepdims=True))


def tables_to_potentials(tables: EnergyTables) -> tuple[np.ndarray, np.ndarray]:
    """Log node and combined log edge potentials from energy tables."""
    log_node = -tables.unary
    log_edge = -(tables.pairwise + tables.pairwise.transpose(1, 0, 3, 2))
    return log_node, log_edge


@dataclass
class _EngineResult:
    log_marginals: np.ndarray
    log_pairwise: np.ndarray
    converged: bool
    iters_used: int
    residuals: list[float]
    d_log_marginals: np.ndarray | None = None
    d_log_pairwise: np.ndarray | None = None


def _zero_diag(arr: np.ndarray) -> None:
    idx = np.arange(arr.shape[-3])
    if arr.ndim == 3:        # (M, M, K)
        arr[idx, idx, :] = 0.0
    else:                    # (P, M, M, K)
        arr[:, idx, idx, :] = 0.0


def lbp_pass(log_node: np.ndarray, log_edge: np.ndarray, cfg: LbpConfig,
             node_dot: np.ndarray | None = None) -> _EngineResult:
    """Damped synchronous sum-product message passing.

    Messages m[i -> j](b) are proportional to
    sum_a exp(log_node[i, a] + log_edge[i, j, a, b]) * prod_{k != j} m[k -> i](a),
    mixed with the previous value as m <- damping * m_old + (1 - damping) * m_new
    (computed stably in the log domain) and renormalized each pass.

    With ``node_dot`` of shape (P, M, K), tangents of the log beliefs with
    respect to P scalar directions are propagated through every update; this
    requires ``fixed_iterations`` so the unrolled map has a fixed depth.
    """
    m_nodes, k = log_node.shape
    want_dot = node_dot is not None
    if want_dot and not cfg.fixed_iterations:
        raise ValueError("tangent propagation requires fixed_iterations")

    lm = np.full((m_nodes, m_nodes, k), -math.log(k))
    _zero_diag(lm)
    dlm = None
    if want_dot:
        dlm = np.zeros((node_dot.shape[0],) + lm.shape)

    log_d = math.log(cfg.damping) if cfg.damping > 0 else -np.inf
    log_1md = math.log1p(-cfg.damping)
    residuals: list[float] = []
    converged = False
    iters_used = 0

    for _ in range(cfg.max_iters):
        iters_used += 1
        s_in = lm.sum(axis=0)                                   # (M, K)
        pre = log_node + s_in
        g = pre[:, None, :] - lm.transpose(1, 0, 2)             # (M, M, K)
        x = g[:, :, :, None] + log_edge                         # (M, M, K, K)
        w = _softmax(x, axis=2)
        new = _lse(x, axis=2)                                   # (M, M, K) over b
        z = _lse(new, axis=2, keepdims=True)
        new = new - z
        _zero_diag(new)

        if want_dot:
            ds = dlm.sum(axis=1)                                # (P, M, K)
            dpre = node_dot + ds
            dg = dpre[:, :, None, :] - dlm.transpose(0, 2, 1, 3)
            dnew = np.einsum("ijab,pija->pijb", w, dg)
            # normalizer tangent; softmax is shift-invariant so the
            # normalized messages give the same weights
            dnew = dnew - np.einsum("ijb,pijb->pij", _softmax(new, axis=2), dnew)[..., None]
            _zero_diag(dnew)

        if cfg.damping > 0:
            u = log_d + lm
            v = log_1md + new
            mixed = np.logaddexp(u, v)
            if want_dot:
                wu = np.exp(u - mixed)
                wv = np.exp(v - mixed)
                dmixed = wu[None] * dlm + wv[None] * dnew
            zmix = _lse(mixed, axis=2, keepdims=True)
            mixed = mixed - zmix
            _zero_diag(mixed)
            if want_dot:
                dmixed = dmixed - np.einsum(
                    "ijb,pijb->pij", _softmax(mixed, axis=2), dmixed)[..., None]
                _zero_diag(dmixed)
        else:
            mixed = new
            dmixed = dnew if want_dot else None

        residual = float(np.max(np.abs(np.exp(mixed) - np.exp(lm))))
        residuals.append(residual)
        lm = mixed
        if want_dot:
            dlm = dmixed
        if not cfg.fixed_iterations and residual < cfg.tol:
            converged = True
            break
    else:
        converged = residuals[-1] < cfg.tol if residuals else False

    if not np.all(np.isfinite(lm)):
        raise NumericalFailure("non-finite message encountered")

    s_in = lm.sum(axis=0)
    pre = log_node + s_in
    log_marg = pre - _lse(pre, axis=1, keepdims=True)
    g = pre[:, None, :] - lm.transpose(1, 0, 2)
    lpb = g[:, :, :, None] + g.transpose(1, 0, 2)[:, :, None, :] + log_edge
    zpb = _lse(lpb.reshape(m_nodes, m_nodes, -1), axis=2).reshape(m_nodes, m_nodes, 1, 1)
    lpb = lpb - zpb
    idx = np.arange(m_nodes)
    lpb[idx, idx] = 0.0

    d_log_marg = d_lpb = None
    if want_dot:
        ds = dlm.sum(axis=1)
        dpre = node_dot + ds
        d_log_marg = dpre - np.einsum("ia,pia->pi", _softmax(pre, axis=1), dpre)[..., None]
        dg = dpre[:, :, None, :] - dlm.transpose(0, 2, 1, 3)
        d_lpb = dg[:, :, :, :, None] + dg.transpose(0, 2, 1, 3)[:, :, :, None, :]
        wpb = _softmax(lpb.reshape(m_nodes, m_nodes, -1), axis=2)
        corr = np.einsum("ijc,pijc->pij", wpb,
                         d_lpb.reshape(d_lpb.shape[0], m_nodes, m_nodes, -1))
        d_lpb = d_lpb - corr[:, :, :, None, None]
        d_lpb[:, idx, idx] = 0.0

    return _EngineResult(log_marginals=log_marg, log_pairwise=lpb,
                         converged=converged, iters_used=iters_used,
                         residuals=residuals,
                         d_log_marginals=d_log_marg, d_log_pairwise=d_lpb)


def _marginal_set_from_logs(log_marg, lpb, converged, iters_used, residuals) -> MarginalSet:
    m_nodes = log_marg.shape[0]
    marginals = np.exp(log_marg)
    beliefs = np.exp(lpb)
    idx = np.arange(m_nodes)
    beliefs[idx, idx] = 0.0
    if not (np.all(np.isfinite(marginals)) and np.all(np.isfinite(beliefs))):
        raise NumericalFailure("non-finite belief encountered")
    return MarginalSet(marginals=marginals, pairwise_beliefs=beliefs,
                       converged=converged, iters_used=iters_used,
                       log_marginals=log_marg, log_pairwise_beliefs=lpb,
                       residuals=list(residuals))


def lbp(tables: EnergyTables, cfg: LbpConfig = LbpConfig()) -> MarginalSet:
    """Approximate marginals and pairwise beliefs via loopy message passing."""
    log_node, log_edge = tables_to_potentials(tables)
    res = lbp_pass(log_node, log_edge, cfg)
    return _marginal_set_from_logs(res.log_marginals, res.log_pairwise,
                                   res.converged, res.iters_used, res.residuals)


def exact_marginals(tables: EnergyTables) -> MarginalSet:
    """Exact marginals by enumerating every joint candidate assignment.

    The joint energy is sum_i unary[i, y_i] plus the ordered double sum
    of pairwise[i, j, y_i, y_j] over i != j, normalized by the explicit
    partition function.
    """
    m_nodes, k = tables.unary.shape
    if k ** m_nodes > MAX_JOINT_STATES:
        raise StateSpaceTooLarge(
            f"{k}^{m_nodes} joint states exceed {MAX_JOINT_STATES}")

    energy = np.zeros((k,) * m_nodes)
    for i in range(m_nodes):
        shape = [1] * m_nodes
        shape[i] = k
        energy = energy + tables.unary[i].reshape(shape)
    for i in range(m_nodes):
        for j in range(i + 1, m_nodes):
            shape = [1] * m_nodes
            shape[i] = k
            shape[j] = k
            combined = tables.pairwise[i, j] + tables.pairwise[j, i].T
            energy = energy + combined.reshape(shape)

    neg = -energy
    log_z = _lse(neg.reshape(-1), axis=0)
    log_joint = neg - log_z

    log_marg = np.empty((m_nodes, k))
    if m_nodes == 1:
        log_marg[0] = log_joint
    else:
        for i in range(m_nodes):
            log_marg[i] = _lse(np.moveaxis(log_joint, i, 0).reshape(k, -1), axis=1)

    lpb = np.zeros((m_nodes, m_nodes, k, k))
    for i in range(m_nodes):
        for j in range(m_nodes):
            if i == j:
                continue
            moved = np.moveaxis(log_joint, (i, j), (0, 1)).reshape(k, k, -1)
            lpb[i, j] = _lse(moved, axis=2) if m_nodes > 2 else moved[:, :, 0]

    return _marginal_set_from_logs(log_marg, lpb, converged=True,
                                   iters_used=0, residuals=[])


def conditional_marginals(ms: MarginalSet, ego_candidate: int,
                          eps: float = 1e-12) -> np.ndarray:
    """Actor marginals conditioned on one ego candidate, shape (N, K).

    Reads the ego-actor pairwise beliefs directly, so a single inference pass
    serves every ego candidate.
    """
    n = ms.n_nodes - 1
    if n == 0:
        return np.zeros((0, ms.k))
    if not 0 <= ego_candidate < ms.k:
        raise IndexError("ego candidate out of range")
    if ms.marginals[0, ego_candidate] <= eps:
        raise DegenerateCondition(
            f"ego candidate {ego_candidate} has mass <= {eps}")
    rows = ms.log_pairwise_beliefs[0, 1:, ego_candidate, :]       # (N, K)
    return np.exp(rows - _lse(rows, axis=1, keepdims=True))


def set_conditional_marginals(ms: MarginalSet, candidate_set,
                              eps: float = 1e-12) -> np.ndarray:
    """Actor marginals conditioned on the ego choosing from a set, shape (N, K)."""
    members = sorted(set(int(a) for a in candidate_set))
    if not members:
        raise EmptyConditioningSet("conditioning set must be non-empty")
    if members[0] < 0 or members[-1] >= ms.k:
        raise IndexError("conditioning set member out of range")
    if float(ms.marginals[0, members].sum()) <= eps:
        raise DegenerateCondition("conditioning set has mass <= eps")
    n = ms.n_nodes - 1
    if n == 0:
        return np.zeros((0, ms.k))
    blocks = ms.log_pairwise_beliefs[0, 1:][:, members, :]        # (N, |S|, K)
    rows = _lse(blocks, axis=1)
    return np.exp(rows - _lse(rows, axis=1, keepdims=True))
