"""Compiled propagation kernels for coalition probabilities.

A fitted SCM is flattened into CSR arrays over its topological order.  Only
nodes that are ancestors of the target (or the target itself) are evaluated.
Both kernels perform the arithmetic of a node in the same order, so a
coalition evaluated from scratch and one reached incrementally along a
permutation produce bit-identical exceedance counts.
"""

from __future__ import annotations

from dataclasses import dataclass

import networkx as nx
import numpy as np
from numba import njit

from .mechanisms import FittedSCM, MechanismKind
from .plant.controller import BatteryController, battery_setpoint

FIXED, ADDITIVE, CONTROL = 0, 1, 2


@dataclass
class Plan:
    nodes: list
    kind: np.ndarray
    par_ptr: np.ndarray
    par_idx: np.ndarray
    par_coef: np.ndarray
    intercept: np.ndarray
    unit: np.ndarray  # node -> unit index or -1
    unit_node: np.ndarray  # unit -> node index
    ctrl: np.ndarray  # (n, 6) controller parameters
    relevant: np.ndarray  # evaluation order restricted to ancestors of the target
    desc_ptr: np.ndarray
    desc_idx: np.ndarray
    target: int


def supports(scm: FittedSCM) -> bool:
    return all(
        m.kind is not MechanismKind.DETERMINISTIC or isinstance(m.control, BatteryController)
        for m in scm.mechanisms.values()
    )


def compile_plan(scm: FittedSCM) -> Plan:
    order = scm.order
    index = {n: i for i, n in enumerate(order)}
    units = scm.attributable
    unit_index = {u: k for k, u in enumerate(units)}
    n = len(order)
    kind = np.zeros(n, dtype=np.int64)
    intercept = np.zeros(n)
    unit = np.full(n, -1, dtype=np.int64)
    ctrl = np.zeros((n, 6))
    par_ptr = np.zeros(n + 1, dtype=np.int64)
    par_idx: list[int] = []
    par_coef: list[float] = []
    for i, node in enumerate(order):
        if not scm.is_fixed(node):
            mech = scm.mechanisms[node]
            parents = [index[p] for p in scm.mechanism_parents(node)]
            par_idx.extend(parents)
            if mech.kind is MechanismKind.DETERMINISTIC:
                kind[i] = CONTROL
                ctrl[i] = mech.control.params
                par_coef.extend([0.0] * len(parents))
            else:
                kind[i] = ADDITIVE
                intercept[i] = mech.intercept
                par_coef.extend(mech.coefficients.tolist())
        par_ptr[i + 1] = len(par_idx)
        if node in unit_index:
            unit[i] = unit_index[node]

    g = scm.unfolded.to_networkx()
    target = index[scm.target]
    relevant_set = {index[a] for a in nx.ancestors(g, scm.target)} | {target}
    relevant = np.array(sorted(relevant_set), dtype=np.int64)

    children: list[list[int]] = [[] for _ in range(n)]
    for i in range(n):
        for j in par_idx[par_ptr[i] : par_ptr[i + 1]]:
            children[j].append(i)
    desc_ptr = np.zeros(len(units) + 1, dtype=np.int64)
    desc_idx: list[int] = []
    for k, u in enumerate(units):
        start = index[u]
        seen = {start}
        stack = [start]
        while stack:
            v = stack.pop()
            for c in children[v]:
                if c not in seen:
                    seen.add(c)
                    stack.append(c)
        desc_idx.extend(sorted(seen & relevant_set))
        desc_ptr[k + 1] = len(desc_idx)

    return Plan(
        nodes=order,
        kind=kind,
        par_ptr=par_ptr,
        par_idx=np.array(par_idx, dtype=np.int64),
        par_coef=np.array(par_coef, dtype=np.float64),
        intercept=intercept,
        unit=unit,
        unit_node=np.array([index[u] for u in units], dtype=np.int64),
        ctrl=ctrl,
        relevant=relevant,
        desc_ptr=desc_ptr,
        desc_idx=np.array(desc_idx, dtype=np.int64),
        target=target,
    )


@njit(cache=True)
def _eval_row(i, vals, noise, kind, par_ptr, par_idx, par_coef, intercept, ctrl):
    """Recompute row ``i`` of ``vals`` (one node over all samples)."""
    M = vals.shape[1]
    p0 = par_ptr[i]
    if kind[i] == CONTROL:
        c = ctrl[i]
        a, b, d, e = par_idx[p0], par_idx[p0 + 1], par_idx[p0 + 2], par_idx[p0 + 3]
        for m in range(M):
            vals[i, m] = battery_setpoint(vals[a, m], vals[b, m], vals[d, m], vals[e, m], c[0], c[1], c[2], c[3], c[4], c[5])
        return
    icpt = intercept[i]
    for m in range(M):
        vals[i, m] = icpt
    for j in range(p0, par_ptr[i + 1]):
        w = par_coef[j]
        q = par_idx[j]
        for m in range(M):
            vals[i, m] += w * vals[q, m]
    for m in range(M):
        vals[i, m] += noise[m]


@njit(cache=True)
def _count_events(row, mean, std, z_obs, tol):
    c = 0
    for m in range(row.shape[0]):
        if (row[m] - mean) / std >= z_obs - tol:
            c += 1
    return c


@njit(cache=True)
def _evaluate_all(vals, noise, kind, par_ptr, par_idx, par_coef, intercept, ctrl, unit, relevant, zero):
    for r in range(relevant.shape[0]):
        i = relevant[r]
        if kind[i] == FIXED:
            continue
        u = unit[i]
        _eval_row(i, vals, noise[u] if u >= 0 else zero, kind, par_ptr, par_idx, par_coef, intercept, ctrl)


@njit(cache=True)
def count_masks(masks, base, obs_noise, Z, kind, par_ptr, par_idx, par_coef, intercept, ctrl, unit, relevant, target, mean, std, z_obs, tol):
    """Exceedance counts for each coalition mask (rows of ``masks``)."""
    K, U = masks.shape
    M = Z.shape[0]
    n = base.shape[0]
    counts = np.zeros(K, dtype=np.int64)
    vals = np.empty((n, M))
    noise = np.empty((U, M))
    zero = np.zeros(M)
    for i in range(n):
        for m in range(M):
            vals[i, m] = base[i]
    for k in range(K):
        for u in range(U):
            if masks[k, u]:
                for m in range(M):
                    noise[u, m] = Z[m, u]
            else:
                for m in range(M):
                    noise[u, m] = obs_noise[u]
        _evaluate_all(vals, noise, kind, par_ptr, par_idx, par_coef, intercept, ctrl, unit, relevant, zero)
        counts[k] = _count_events(vals[target], mean, std, z_obs, tol)
    return counts


@njit(cache=True)
def count_prefixes(perms, base, obs_noise, Z, kind, par_ptr, par_idx, par_coef, intercept, ctrl, unit, relevant, desc_ptr, desc_idx, target, mean, std, z_obs, tol):
    """Exceedance counts for every prefix of every permutation: shape (P, U + 1)."""
    P, U = perms.shape
    M = Z.shape[0]
    n = base.shape[0]
    counts = np.zeros((P, U + 1), dtype=np.int64)
    init = np.empty((n, M))
    noise = np.empty((U, M))
    zero = np.zeros(M)
    for i in range(n):
        for m in range(M):
            init[i, m] = base[i]
    for u in range(U):
        for m in range(M):
            noise[u, m] = obs_noise[u]
    _evaluate_all(init, noise, kind, par_ptr, par_idx, par_coef, intercept, ctrl, unit, relevant, zero)
    c0 = _count_events(init[target], mean, std, z_obs, tol)
    ZT = np.ascontiguousarray(Z.T)
    vals = np.empty((n, M))
    for p in range(P):
        vals[:, :] = init
        for u in range(U):
            for m in range(M):
                noise[u, m] = obs_noise[u]
        counts[p, 0] = c0
        for k in range(U):
            u = perms[p, k]
            noise[u, :] = ZT[u]
            d0 = desc_ptr[u]
            d1 = desc_ptr[u + 1]
            if d0 == d1:
                counts[p, k + 1] = counts[p, k]
                continue
            for r in range(d0, d1):
                i = desc_idx[r]
                if kind[i] == FIXED:
                    continue
                w = unit[i]
                _eval_row(i, vals, noise[w] if w >= 0 else zero, kind, par_ptr, par_idx, par_coef, intercept, ctrl)
            counts[p, k + 1] = _count_events(vals[target], mean, std, z_obs, tol)
    return counts
