"""Shared numeric oracles for the test suite.

These stay independent of the code paths they check: finite differences for
gradients, a quadruple-loop reference convolution, and brute-force candidate
minimizers for proximal maps.
"""

from __future__ import annotations

import numpy as np

from advprune.tensor import Tape, backward


def central_diff(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of scalar f at x, one coord at a time."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    """Norm-relative error of a against reference b."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(b.ravel()), 1e-12)
    return float(np.linalg.norm((a - b).ravel()) / denom)


def grad_check(build_loss, params: dict[str, np.ndarray], h: float = 1e-5) -> float:
    """Worst relative error of tape gradients vs central differences.

    ``build_loss(tape, vars)`` must construct a scalar loss from tape
    variables registered for each entry of ``params``.
    """
    tape = Tape()
    vars_ = {k: tape.variable(v, k) for k, v in params.items()}
    loss = build_loss(tape, vars_)
    grads = backward(loss)

    def loss_value(bound: dict[str, np.ndarray]) -> float:
        t = Tape()
        vs = {k: t.variable(v, k) for k, v in bound.items()}
        return float(build_loss(t, vs).data)

    worst = 0.0
    for key, value in params.items():
        def f(x, _key=key):
            bound = dict(params)
            bound[_key] = x
            return loss_value(bound)

        fd = central_diff(f, value.copy(), h=h)
        worst = max(worst, rel_err(grads[key].data, fd))
    return worst


def conv2d_reference(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Naive quadruple-loop valid convolution for (c_in,h,w) x (c_out,c_in,kh,kw)."""
    cin, h, w = x.shape
    cout, cin2, kh, kw = k.shape
    assert cin == cin2
    ho, wo = h - kh + 1, w - kw + 1
    out = np.zeros((cout, ho, wo))
    for o in range(cout):
        for p in range(ho):
            for q in range(wo):
                acc = 0.0
                for c in range(cin):
                    for i in range(kh):
                        for j in range(kw):
                            acc += x[c, p + i, q + j] * k[o, c, i, j]
                out[o, p, q] = acc
    return out
