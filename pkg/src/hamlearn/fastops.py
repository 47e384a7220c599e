"""Vectorized kernels for softplus MLP losses and their derivatives.

The tape in `tape.py` is the reference semantics; these kernels are the
throughput path used by training.  They are hand-derived closed forms of
the same quantities and are cross-checked against the tape in tests:

- ``mlp_forward``: batched forward pass.
- ``hnn_field``: Omega * dH/dx obtained by backpropagating the scalar
  output to the inputs (one reverse recurrence per batch).
- ``*_loss_grad``: parameter gradient of the batch loss.  For the
  Hamiltonian loss the forward quantity already contains a reverse
  sweep, so its gradient is a second reverse sweep over both phases.
- ``*_loss_hvp``: Hessian-vector products, computed by pushing a dual
  (tangent) component through every statement of the gradient kernel:
  exact second-order information, no graph materialization.

Everything is written in a numba-compatible numpy subset and compiled
twice via `_backend.dual` (pure numpy / @njit), selected by the
HAMLEARN_NUMBA env var.  Batch layout: X is (B, 2n) rows [q..., p...].

Only softplus activation is supported here (the smooth default); other
activations run on the tape path.
"""

from __future__ import annotations

import numpy as np

from ._backend import dual
from .network import NetworkSpec, packed_dims, param_count


def _check(spec: NetworkSpec, params, X, want_scalar_out: bool | None = None):
    if spec.activation != "softplus":
        raise NotImplementedError("fast kernels support softplus only")
    params = np.ascontiguousarray(params, np.float64)
    if params.shape != (param_count(spec),):
        raise ValueError("params length does not match spec")
    X = np.ascontiguousarray(np.atleast_2d(X), np.float64)
    if X.shape[1] != spec.input_dim:
        raise ValueError("input dim mismatch")
    if want_scalar_out is True and spec.output_dim != 1:
        raise ValueError("Hamiltonian kernels need output_dim == 1")
    if want_scalar_out is False and spec.output_dim != spec.input_dim:
        raise ValueError("field kernels need output_dim == input_dim")
    return params, X


@dual
def _k_forward(params, dims, woff, boff, X):
    B = X.shape[0]
    L = dims.shape[0] - 1
    a = X
    for l in range(1, L + 1):
        fi = dims[l - 1]
        fo = dims[l]
        W = params[woff[l - 1] : woff[l - 1] + fi * fo].reshape(fi, fo)
        b = params[boff[l - 1] : boff[l - 1] + fo]
        z = np.dot(np.ascontiguousarray(a), W) + b
        if l < L:
            a = np.logaddexp(0.0, z)
        else:
            a = z
    return a


@dual
def _k_hnn_field(params, dims, woff, boff, X):
    B = X.shape[0]
    d0 = dims[0]
    n = d0 // 2
    L = dims.shape[0] - 1
    CT = 0
    for l in range(1, L + 1):
        CT += dims[l]
    co = np.zeros(L + 1, np.int64)
    acc = 0
    for l in range(1, L + 1):
        co[l] = acc
        acc += dims[l]
    S = np.zeros((B, CT))
    # forward, keeping sigmoid(z) for the reverse recurrence
    a = X
    for l in range(1, L + 1):
        fi = dims[l - 1]
        fo = dims[l]
        W = params[woff[l - 1] : woff[l - 1] + fi * fo].reshape(fi, fo)
        b = params[boff[l - 1] : boff[l - 1] + fo]
        z = np.dot(np.ascontiguousarray(a), W) + b
        if l < L:
            t = np.exp(-np.abs(z))
            S[:, co[l] : co[l] + fo] = np.where(z >= 0.0, 1.0 / (1.0 + t), t / (1.0 + t))
            a = np.logaddexp(0.0, z)
    # reverse to inputs: u_L = 1, v_{l-1} = u_l W_l^T, u_{l-1} = v_{l-1} * s_{l-1}
    u = np.ones((B, dims[L]))
    v = np.ones((B, d0))
    for l in range(L, 0, -1):
        fi = dims[l - 1]
        fo = dims[l]
        W = params[woff[l - 1] : woff[l - 1] + fi * fo].reshape(fi, fo)
        v = np.dot(np.ascontiguousarray(u), np.ascontiguousarray(W.T))
        if l > 1:
            u = v * S[:, co[l - 1] : co[l - 1] + fi]
    F = np.empty((B, d0))
    F[:, :n] = v[:, n:d0]
    F[:, n:d0] = -v[:, :n]
    return F


@dual
def _k_hnn_loss_grad(params, dims, woff, boff, X, Xdot):
    B = X.shape[0]
    d0 = dims[0]
    n = d0 // 2
    L = dims.shape[0] - 1
    CT = 0
    for l in range(1, L + 1):
        CT += dims[l]
    co = np.zeros(L + 1, np.int64)
    acc = 0
    for l in range(1, L + 1):
        co[l] = acc
        acc += dims[l]
    VT = 0
    vo = np.zeros(L, np.int64)
    for l in range(L):
        vo[l] = VT
        VT += dims[l]
    A = np.zeros((B, CT))     # hidden activations
    S = np.zeros((B, CT))     # sigmoid(z)
    U = np.zeros((B, CT))     # dH/dz
    V = np.zeros((B, VT))     # dH/da (V[:, vo[0]] block = dH/dx)
    BARZ = np.zeros((B, CT))  # adjoint pieces deferred to phase B

    a = X
    for l in range(1, L + 1):
        fi = dims[l - 1]
        fo = dims[l]
        W = params[woff[l - 1] : woff[l - 1] + fi * fo].reshape(fi, fo)
        b = params[boff[l - 1] : boff[l - 1] + fo]
        z = np.dot(np.ascontiguousarray(a), W) + b
        if l < L:
            t = np.exp(-np.abs(z))
            S[:, co[l] : co[l] + fo] = np.where(z >= 0.0, 1.0 / (1.0 + t), t / (1.0 + t))
            a = np.logaddexp(0.0, z)
            A[:, co[l] : co[l] + fo] = a

    u = np.ones((B, dims[L]))
    U[:, co[L] : co[L] + dims[L]] = u
    for l in range(L, 0, -1):
        fi = dims[l - 1]
        fo = dims[l]
        W = params[woff[l - 1] : woff[l - 1] + fi * fo].reshape(fi, fo)
        v = np.dot(np.ascontiguousarray(u), np.ascontiguousarray(W.T))
        V[:, vo[l - 1] : vo[l - 1] + fi] = v
        if l > 1:
            u = v * S[:, co[l - 1] : co[l - 1] + fi]
            U[:, co[l - 1] : co[l - 1] + fi] = u

    G = V[:, vo[0] : vo[0] + d0]
    F = np.empty((B, d0))
    F[:, :n] = G[:, n:d0]
    F[:, n:d0] = -G[:, :n]
    R = F - Xdot
    loss = np.sum(R * R) / B

    grad = np.zeros(params.shape[0])
    sc = 2.0 / B
    barv = np.empty((B, d0))  # adjoint of v_{l-1}; starts as adjoint of dH/dx
    barv[:, :n] = -sc * R[:, n:d0]
    barv[:, n:d0] = sc * R[:, :n]

    # phase A: adjoints through the input-gradient recurrence (l ascending)
    for l in range(1, L + 1):
        fi = dims[l - 1]
        fo = dims[l]
        W = params[woff[l - 1] : woff[l - 1] + fi * fo].reshape(fi, fo)
        ul = U[:, co[l] : co[l] + fo]
        gW = np.dot(np.ascontiguousarray(barv.T), np.ascontiguousarray(ul))
        grad[woff[l - 1] : woff[l - 1] + fi * fo] += gW.ravel()
        if l < L:
            baru = np.dot(np.ascontiguousarray(barv), W)
            s = S[:, co[l] : co[l] + fo]
            vl = V[:, vo[l] : vo[l] + fo]
            BARZ[:, co[l] : co[l] + fo] = baru * vl * (s * (1.0 - s))
            barv = baru * s

    # phase B: adjoints through the forward recurrence (l descending)
    bara = np.zeros((B, dims[L - 1]))
    for l in range(L - 1, 0, -1):
        fi = dims[l - 1]
        fo = dims[l]
        W = params[woff[l - 1] : woff[l - 1] + fi * fo].reshape(fi, fo)
        s = S[:, co[l] : co[l] + fo]
        barz = BARZ[:, co[l] : co[l] + fo] + bara * s
        if l == 1:
            ap = X
        else:
            ap = A[:, co[l - 1] : co[l - 1] + fi]
        gW = np.dot(np.ascontiguousarray(ap.T), np.ascontiguousarray(barz))
        grad[woff[l - 1] : woff[l - 1] + fi * fo] += gW.ravel()
        grad[boff[l - 1] : boff[l - 1] + fo] += np.sum(barz, 0)
        if l > 1:
            bara = np.dot(np.ascontiguousarray(barz), np.ascontiguousarray(W.T))
    return loss, grad


@dual
def _k_hnn_loss_hvp(params, dims, woff, boff, X, Xdot, vec):
    # gradient kernel with a dual (tangent) component pushed through every
    # statement; the tangent of grad is exactly hessian @ vec
    B = X.shape[0]
    d0 = dims[0]
    n = d0 // 2
    L = dims.shape[0] - 1
    CT = 0
    for l in range(1, L + 1):
        CT += dims[l]
    co = np.zeros(L + 1, np.int64)
    acc = 0
    for l in range(1, L + 1):
        co[l] = acc
        acc += dims[l]
    VT = 0
    vo = np.zeros(L, np.int64)
    for l in range(L):
        vo[l] = VT
        VT += dims[l]
    A = np.zeros((B, CT))
    DA = np.zeros((B, CT))
    S = np.zeros((B, CT))
    DS = np.zeros((B, CT))    # sigma'(z) * dz
    U = np.zeros((B, CT))
    DU = np.zeros((B, CT))
    V = np.zeros((B, VT))
    DV = np.zeros((B, VT))
    BARZ = np.zeros((B, CT))
    BARZD = np.zeros((B, CT))

    a = X
    da = np.zeros((B, d0))
    for l in range(1, L + 1):
        fi = dims[l - 1]
        fo = dims[l]
        W = params[woff[l - 1] : woff[l - 1] + fi * fo].reshape(fi, fo)
        b = params[boff[l - 1] : boff[l - 1] + fo]
        Wd = vec[woff[l - 1] : woff[l - 1] + fi * fo].reshape(fi, fo)
        bd = vec[boff[l - 1] : boff[l - 1] + fo]
        ac = np.ascontiguousarray(a)
        dac = np.ascontiguousarray(da)
        z = np.dot(ac, W) + b
        dz = np.dot(dac, W) + np.dot(ac, Wd) + bd
        if l < L:
            t = np.exp(-np.abs(z))
            s = np.where(z >= 0.0, 1.0 / (1.0 + t), t / (1.0 + t))
            sp = s * (1.0 - s)
            S[:, co[l] : co[l] + fo] = s
            DS[:, co[l] : co[l] + fo] = sp * dz
            a = np.logaddexp(0.0, z)
            da = s * dz
            A[:, co[l] : co[l] + fo] = a
            DA[:, co[l] : co[l] + fo] = da

    u = np.ones((B, dims[L]))
    du = np.zeros((B, dims[L]))
    U[:, co[L] : co[L] + dims[L]] = u
    for l in range(L, 0, -1):
        fi = dims[l - 1]
        fo = dims[l]
        W = params[woff[l - 1] : woff[l - 1] + fi * fo].reshape(fi, fo)
        Wd = vec[woff[l - 1] : woff[l - 1] + fi * fo].reshape(fi, fo)
        WT = np.ascontiguousarray(W.T)
        WdT = np.ascontiguousarray(Wd.T)
        uc = np.ascontiguousarray(u)
        duc = np.ascontiguousarray(du)
        v = np.dot(uc, WT)
        dv = np.dot(duc, WT) + np.dot(uc, WdT)
        V[:, vo[l - 1] : vo[l - 1] + fi] = v
        DV[:, vo[l - 1] : vo[l - 1] + fi] = dv
        if l > 1:
            s = S[:, co[l - 1] : co[l - 1] + fi]
            ds = DS[:, co[l - 1] : co[l - 1] + fi]
            u = v * s
            du = dv * s + v * ds
            U[:, co[l - 1] : co[l - 1] + fi] = u
            DU[:, co[l - 1] : co[l - 1] + fi] = du

    G = V[:, vo[0] : vo[0] + d0]
    DG = DV[:, vo[0] : vo[0] + d0]
    F = np.empty((B, d0))
    DF = np.empty((B, d0))
    F[:, :n] = G[:, n:d0]
    F[:, n:d0] = -G[:, :n]
    DF[:, :n] = DG[:, n:d0]
    DF[:, n:d0] = -DG[:, :n]
    R = F - Xdot
    loss = np.sum(R * R) / B

    grad = np.zeros(params.shape[0])
    hvp = np.zeros(params.shape[0])
    sc = 2.0 / B
    barv = np.empty((B, d0))
    barvd = np.empty((B, d0))
    barv[:, :n] = -sc * R[:, n:d0]
    barv[:, n:d0] = sc * R[:, :n]
    barvd[:, :n] = -sc * DF[:, n:d0]
    barvd[:, n:d0] = sc * DF[:, :n]

    for l in range(1, L + 1):
        fi = dims[l - 1]
        fo = dims[l]
        W = params[woff[l - 1] : woff[l - 1] + fi * fo].reshape(fi, fo)
        Wd = vec[woff[l - 1] : woff[l - 1] + fi * fo].reshape(fi, fo)
        ul = np.ascontiguousarray(U[:, co[l] : co[l] + fo])
        dul = np.ascontiguousarray(DU[:, co[l] : co[l] + fo])
        bvT = np.ascontiguousarray(barv.T)
        bvdT = np.ascontiguousarray(barvd.T)
        grad[woff[l - 1] : woff[l - 1] + fi * fo] += np.dot(bvT, ul).ravel()
        hvp[woff[l - 1] : woff[l - 1] + fi * fo] += (np.dot(bvdT, ul) + np.dot(bvT, dul)).ravel()
        if l < L:
            bv = np.ascontiguousarray(barv)
            bvd = np.ascontiguousarray(barvd)
            baru = np.dot(bv, W)
            barud = np.dot(bvd, W) + np.dot(bv, Wd)
            s = S[:, co[l] : co[l] + fo]
            ds = DS[:, co[l] : co[l] + fo]
            vl = V[:, vo[l] : vo[l] + fo]
            dvl = DV[:, vo[l] : vo[l] + fo]
            sp = s * (1.0 - s)
            dsp = (1.0 - 2.0 * s) * ds  # tangent of sigma'
            BARZ[:, co[l] : co[l] + fo] = baru * vl * sp
            BARZD[:, co[l] : co[l] + fo] = (barud * vl * sp + baru * dvl * sp
                                            + baru * vl * dsp)
            barv = baru * s
            barvd = barud * s + baru * ds

    bara = np.zeros((B, dims[L - 1]))
    barad = np.zeros((B, dims[L - 1]))
    for l in range(L - 1, 0, -1):
        fi = dims[l - 1]
        fo = dims[l]
        W = params[woff[l - 1] : woff[l - 1] + fi * fo].reshape(fi, fo)
        Wd = vec[woff[l - 1] : woff[l - 1] + fi * fo].reshape(fi, fo)
        s = S[:, co[l] : co[l] + fo]
        ds = DS[:, co[l] : co[l] + fo]
        barz = np.ascontiguousarray(BARZ[:, co[l] : co[l] + fo] + bara * s)
        barzd = np.ascontiguousarray(BARZD[:, co[l] : co[l] + fo]
                                     + barad * s + bara * ds)
        if l == 1:
            ap = X
            dap = np.zeros((B, d0))
        else:
            ap = A[:, co[l - 1] : co[l - 1] + fi]
            dap = DA[:, co[l - 1] : co[l - 1] + fi]
        apT = np.ascontiguousarray(ap.T)
        dapT = np.ascontiguousarray(dap.T)
        grad[woff[l - 1] : woff[l - 1] + fi * fo] += np.dot(apT, barz).ravel()
        grad[boff[l - 1] : boff[l - 1] + fo] += np.sum(barz, 0)
        hvp[woff[l - 1] : woff[l - 1] + fi * fo] += (np.dot(dapT, barz) + np.dot(apT, barzd)).ravel()
        hvp[boff[l - 1] : boff[l - 1] + fo] += np.sum(barzd, 0)
        if l > 1:
            WT = np.ascontiguousarray(W.T)
            WdT = np.ascontiguousarray(Wd.T)
            bara = np.dot(barz, WT)
            barad = np.dot(barzd, WT) + np.dot(barz, WdT)
    return loss, grad, hvp


@dual
def _k_naive_loss_grad(params, dims, woff, boff, X, Xdot):
    B = X.shape[0]
    L = dims.shape[0] - 1
    CT = 0
    for l in range(1, L + 1):
        CT += dims[l]
    co = np.zeros(L + 1, np.int64)
    acc = 0
    for l in range(1, L + 1):
        co[l] = acc
        acc += dims[l]
    A = np.zeros((B, CT))
    S = np.zeros((B, CT))
    a = X
    for l in range(1, L + 1):
        fi = dims[l - 1]
        fo = dims[l]
        W = params[woff[l - 1] : woff[l - 1] + fi * fo].reshape(fi, fo)
        b = params[boff[l - 1] : boff[l - 1] + fo]
        z = np.dot(np.ascontiguousarray(a), W) + b
        if l < L:
            t = np.exp(-np.abs(z))
            S[:, co[l] : co[l] + fo] = np.where(z >= 0.0, 1.0 / (1.0 + t), t / (1.0 + t))
            a = np.logaddexp(0.0, z)
            A[:, co[l] : co[l] + fo] = a
        else:
            a = z
    R = a - Xdot
    loss = np.sum(R * R) / B
    grad = np.zeros(params.shape[0])
    barz = (2.0 / B) * R
    for l in range(L, 0, -1):
        fi = dims[l - 1]
        fo = dims[l]
        W = params[woff[l - 1] : woff[l - 1] + fi * fo].reshape(fi, fo)
        if l == 1:
            ap = X
        else:
            ap = A[:, co[l - 1] : co[l - 1] + fi]
        bz = np.ascontiguousarray(barz)
        grad[woff[l - 1] : woff[l - 1] + fi * fo] += np.dot(np.ascontiguousarray(ap.T), bz).ravel()
        grad[boff[l - 1] : boff[l - 1] + fo] += np.sum(barz, 0)
        if l > 1:
            bara = np.dot(bz, np.ascontiguousarray(W.T))
            barz = bara * S[:, co[l - 1] : co[l - 1] + fi]
    return loss, grad


@dual
def _k_naive_loss_hvp(params, dims, woff, boff, X, Xdot, vec):
    B = X.shape[0]
    d0 = dims[0]
    L = dims.shape[0] - 1
    CT = 0
    for l in range(1, L + 1):
        CT += dims[l]
    co = np.zeros(L + 1, np.int64)
    acc = 0
    for l in range(1, L + 1):
        co[l] = acc
        acc += dims[l]
    A = np.zeros((B, CT))
    DA = np.zeros((B, CT))
    S = np.zeros((B, CT))
    DS = np.zeros((B, CT))
    a = X
    da = np.zeros((B, d0))
    for l in range(1, L + 1):
        fi = dims[l - 1]
        fo = dims[l]
        W = params[woff[l - 1] : woff[l - 1] + fi * fo].reshape(fi, fo)
        b = params[boff[l - 1] : boff[l - 1] + fo]
        Wd = vec[woff[l - 1] : woff[l - 1] + fi * fo].reshape(fi, fo)
        bd = vec[boff[l - 1] : boff[l - 1] + fo]
        ac = np.ascontiguousarray(a)
        dac = np.ascontiguousarray(da)
        z = np.dot(ac, W) + b
        dz = np.dot(dac, W) + np.dot(ac, Wd) + bd
        if l < L:
            t = np.exp(-np.abs(z))
            s = np.where(z >= 0.0, 1.0 / (1.0 + t), t / (1.0 + t))
            S[:, co[l] : co[l] + fo] = s
            DS[:, co[l] : co[l] + fo] = (s * (1.0 - s)) * dz
            a = np.logaddexp(0.0, z)
            da = s * dz
            A[:, co[l] : co[l] + fo] = a
            DA[:, co[l] : co[l] + fo] = da
        else:
            a = z
            da = dz
    R = a - Xdot
    loss = np.sum(R * R) / B
    grad = np.zeros(params.shape[0])
    hvp = np.zeros(params.shape[0])
    barz = (2.0 / B) * R
    barzd = (2.0 / B) * da
    for l in range(L, 0, -1):
        fi = dims[l - 1]
        fo = dims[l]
        W = params[woff[l - 1] : woff[l - 1] + fi * fo].reshape(fi, fo)
        Wd = vec[woff[l - 1] : woff[l - 1] + fi * fo].reshape(fi, fo)
        if l == 1:
            ap = X
            dap = np.zeros((B, d0))
        else:
            ap = A[:, co[l - 1] : co[l - 1] + fi]
            dap = DA[:, co[l - 1] : co[l - 1] + fi]
        bz = np.ascontiguousarray(barz)
        bzd = np.ascontiguousarray(barzd)
        apT = np.ascontiguousarray(ap.T)
        dapT = np.ascontiguousarray(dap.T)
        grad[woff[l - 1] : woff[l - 1] + fi * fo] += np.dot(apT, bz).ravel()
        grad[boff[l - 1] : boff[l - 1] + fo] += np.sum(barz, 0)
        hvp[woff[l - 1] : woff[l - 1] + fi * fo] += (np.dot(dapT, bz) + np.dot(apT, bzd)).ravel()
        hvp[boff[l - 1] : boff[l - 1] + fo] += np.sum(barzd, 0)
        if l > 1:
            WT = np.ascontiguousarray(W.T)
            WdT = np.ascontiguousarray(Wd.T)
            bara = np.dot(bz, WT)
            barad = np.dot(bzd, WT) + np.dot(bz, WdT)
            s = S[:, co[l - 1] : co[l - 1] + fi]
            ds = DS[:, co[l - 1] : co[l - 1] + fi]
            barz = bara * s
            barzd = barad * s + bara * ds
    return loss, grad, hvp


# -- python-facing wrappers ---------------------------------------------------


def mlp_forward(spec: NetworkSpec, params, X) -> np.ndarray:
    params, X = _check(spec, params, X)
    dims, woff, boff = packed_dims(spec)
    return _k_forward(params, dims, woff, boff, X)


def hnn_field(spec: NetworkSpec, params, X) -> np.ndarray:
    """Predicted field Omega * dH/dx for a scalar-output network."""
    params, X = _check(spec, params, X, want_scalar_out=True)
    dims, woff, boff = packed_dims(spec)
    return _k_hnn_field(params, dims, woff, boff, X)


def predicted_field(spec: NetworkSpec, params, X, loss_kind: str) -> np.ndarray:
    """Learner's vector-field prediction at states X."""
    if loss_kind == "hnn":
        return hnn_field(spec, params, X)
    if loss_kind == "naive":
        params, X = _check(spec, params, X, want_scalar_out=False)
        dims, woff, boff = packed_dims(spec)
        return _k_forward(params, dims, woff, boff, X)
    raise ValueError(f"unknown loss kind {loss_kind!r}")


def _check_pair(spec, params, X, Xdot, scalar_out):
    params, X = _check(spec, params, X, want_scalar_out=scalar_out)
    Xdot = np.ascontiguousarray(np.atleast_2d(Xdot), np.float64)
    if Xdot.shape != X.shape:
        raise ValueError("Xdot shape must match X")
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    return params, X, Xdot


def loss_value(spec: NetworkSpec, params, X, Xdot, loss_kind: str) -> float:
    """Batch loss: mean over rows of the squared field error."""
    F = predicted_field(spec, params, X, loss_kind)
    Xdot = np.atleast_2d(np.asarray(Xdot, np.float64))
    R = F - Xdot
    return float(np.sum(R * R) / R.shape[0])


def loss_grad(spec: NetworkSpec, params, X, Xdot, loss_kind: str):
    """(loss, dloss/dparams) for one batch."""
    dims, woff, boff = packed_dims(spec)
    if loss_kind == "hnn":
        params, X, Xdot = _check_pair(spec, params, X, Xdot, True)
        loss, grad = _k_hnn_loss_grad(params, dims, woff, boff, X, Xdot)
    elif loss_kind == "naive":
        params, X, Xdot = _check_pair(spec, params, X, Xdot, False)
        loss, grad = _k_naive_loss_grad(params, dims, woff, boff, X, Xdot)
    else:
        raise ValueError(f"unknown loss kind {loss_kind!r}")
    return float(loss), np.asarray(grad)


def loss_hvp(spec: NetworkSpec, params, X, Xdot, vec, loss_kind: str):
    """(loss, grad, H @ vec) where H is the loss Hessian in params."""
    vec = np.ascontiguousarray(vec, np.float64)
    if vec.shape != (param_count(spec),):
        raise ValueError("direction length does not match spec")
    dims, woff, boff = packed_dims(spec)
    if loss_kind == "hnn":
        params, X, Xdot = _check_pair(spec, params, X, Xdot, True)
        loss, grad, hvp = _k_hnn_loss_hvp(params, dims, woff, boff, X, Xdot, vec)
    elif loss_kind == "naive":
        params, X, Xdot = _check_pair(spec, params, X, Xdot, False)
        loss, grad, hvp = _k_naive_loss_hvp(params, dims, woff, boff, X, Xdot, vec)
    else:
        raise ValueError(f"unknown loss kind {loss_kind!r}")
    return float(loss), np.asarray(grad), np.asarray(hvp)
