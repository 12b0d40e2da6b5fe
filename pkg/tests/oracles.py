"""Independent reference computations used by several test modules.

None of these touch the package's buffer code: they re-derive queue length
and per-packet delay from scalar bit accounting.
"""

from __future__ import annotations


def scalar_queue(arrivals, psi, G, slots):
    """Z after each slot: Z[t] = max(Z[t-1] - psi[t], 0) + A[t] * G."""
    z = [0] * (slots + 1)
    for t in range(1, slots + 1):
        z[t] = max(z[t - 1] - int(psi[t]), 0) + int(arrivals[t]) * G
    return z


def delay_oracle(arrivals, psi, G, slots):
    """Per-packet delays from the first-passage argmin on cumulative service.

    Packet a of slot t0 needs every bit queued ahead of it plus its own G
    bits. Those are ``max(Z[t0-1] - psi[t0], 0) + a * G`` bits, and it
    finishes in the first slot tau > t0 whose cumulative service since t0
    covers them. Returns (arrival_slot, seq, delay) in completion order.
    """
    z = scalar_queue(arrivals, psi, G, slots)
    out = []
    for t0 in range(1, slots + 1):
        ahead = max(z[t0 - 1] - int(psi[t0]), 0)
        for a in range(1, int(arrivals[t0]) + 1):
            need = ahead + a * G
            acc = 0
            for tau in range(t0 + 1, slots + 1):
                acc += int(psi[tau])
                if acc >= need:
                    out.append((tau, t0, a))
                    break
    out.sort()
    return [(t0, a, tau - t0) for tau, t0, a in out]


def virtual_queue_trace(violations, arrivals, eta):
    h, hs = 0.0, []
    for w, a in zip(violations, arrivals):
        h = max(h - eta * a, 0.0) + w
        hs.append(h)
    return hs


def infeasibility(alloc, cfg, tol=1e-9):
    """Name the first broken resource constraint, or return None.

    Checked from scratch: binary indicators, at most one user per subcarrier
    in each cell, and per-BS transmit power (summed over every beamformer,
    scheduled or not) within ``max_power + tol`` watts.
    """
    import numpy as np

    zeta = np.asarray(alloc.zeta)
    if not np.all((zeta == 0) | (zeta == 1)):
        return "non-binary"
    serving = cfg.serving_bs()
    for b in range(cfg.num_bs):
        users = [u for u in range(cfg.num_ues) if serving[u] == b]
        if (zeta[users].sum(axis=0) > 1).any():
            return f"shared subcarrier in cell {b}"
        power = float(np.sum(np.abs(alloc.w[users]) ** 2))
        if power > cfg.max_power + tol:
            return f"cell {b} power {power!r} W"
    return None
