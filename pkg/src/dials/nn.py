"""Flat-parameter neural nets with hand-written gradients.

Everything trainable in this package (influence predictors, policies,
value heads) is built from these pieces.  Parameters live in one flat
vector (float64 by default) with a parallel gradient buffer, so
snapshotting, hashing, checkpointing and finite-difference checks all
operate on a single array.

Layer caches are explicit: ``forward`` returns caches, ``backward``
consumes them and accumulates into the gradient buffer.

The recurrent sequence kernels are JIT-compiled with numba when
available (set DIALS_NO_NUMBA=1 to force the pure-numpy fallback); the
two paths compute the same recurrences in the same order.
"""

from __future__ import annotations

import io
import json
import math
import os
import struct

import numpy as np

try:  # pragma: no cover - exercised implicitly everywhere
    if os.environ.get("DIALS_NO_NUMBA"):
        raise ImportError("numba disabled by DIALS_NO_NUMBA")
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    HAS_NUMBA = False

    def njit(*a, **k):  # type: ignore
        def wrap(fn):
            return fn
        return wrap


@njit(cache=True, fastmath=True)
def _gru_fwd_pre_kernel(rec, P_t, ZR_t):
    """rec[:, :2H] += P[:, :2H]; ZR = -(that block), ready for exp."""
    B, H3 = rec.shape
    H2 = ZR_t.shape[1]
    for b in range(B):
        for j in range(H2):
            v = rec[b, j] + P_t[b, j]
            rec[b, j] = v
            ZR_t[b, j] = -v


@njit(cache=True, fastmath=True)
def _gru_fwd_mid_kernel(ZR_t, rec, P_t, RC_t, C_t):
    """Finish the logistic (ZR holds exp(-pre)), stash the recurrent
    candidate, and build the candidate pre-activation for tanh."""
    B, H = C_t.shape
    for b in range(B):
        for j in range(2 * H):
            ZR_t[b, j] = 1.0 / (1.0 + ZR_t[b, j])
        for j in range(H):
            rc = rec[b, 2 * H + j]
            RC_t[b, j] = rc
            C_t[b, j] = P_t[b, 2 * H + j] + ZR_t[b, H + j] * rc


@njit(cache=True, fastmath=True)
def _gru_fwd_h_kernel(ZR_t, C_t, h, Hout_t):
    """h' = (1-z)h + z*tanh_c (C_t already passed through tanh)."""
    B, H = C_t.shape
    for b in range(B):
        for j in range(H):
            z = ZR_t[b, j]
            hn = (1.0 - z) * h[b, j] + z * C_t[b, j]
            h[b, j] = hn
            Hout_t[b, j] = hn


@njit(cache=True, fastmath=True)
def _gru_bwd_gates_kernel(dHout_t, dh, ZR_t, RC_t, C_t, Hprev_t, dpre_t, drec_t):
    """Per-step gate gradients; dh is replaced by its pre-recurrent part."""
    B, H = C_t.shape
    for b in range(B):
        for j in range(H):
            dtot = dHout_t[b, j] + dh[b, j]
            z = ZR_t[b, j]
            r = ZR_t[b, H + j]
            c = C_t[b, j]
            dc_pre = dtot * z * (1.0 - c * c)
            dz_pre = dtot * (c - Hprev_t[b, j]) * z * (1.0 - z)
            dr_pre = dc_pre * RC_t[b, j] * r * (1.0 - r)
            dpre_t[b, j] = dz_pre
            dpre_t[b, H + j] = dr_pre
            dpre_t[b, 2 * H + j] = dc_pre
            drec_t[b, j] = dz_pre
            drec_t[b, H + j] = dr_pre
            drec_t[b, 2 * H + j] = dc_pre * r
            dh[b, j] = dtot * (1.0 - z)


@njit(cache=True)
def _gru_advance_kernel(P, U, h, out):
    """Single-step single-row advance; P: (3H,), h: (H,), out: (H,)."""
    H = U.shape[0]
    rec = np.dot(h, U)
    for j in range(H):
        z = 1.0 / (1.0 + math.exp(-(P[j] + rec[j])))
        r = 1.0 / (1.0 + math.exp(-(P[H + j] + rec[H + j])))
        c = math.tanh(P[2 * H + j] + r * rec[2 * H + j])
        out[j] = (1.0 - z) * h[j] + z * c

# ---------------------------------------------------------------------------
# parameter storage
# ---------------------------------------------------------------------------


class ParameterVector:
    """Flat, seedable parameter store with an associated gradient buffer.

    specs: list of (name, shape, fan_in); fan_in None means zero init
    (used for biases), otherwise uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
    """

    def __init__(self, specs, seed: int | None = None, rng=None,
                 dtype=np.float64):
        self._index = {}
        offset = 0
        for name, shape, fan_in in specs:
            n = int(np.prod(shape))
            self._index[name] = (offset, tuple(shape), fan_in)
            offset += n
        self.size = offset
        self.dtype = np.dtype(dtype)
        self.data = np.zeros(offset, dtype=self.dtype)
        self.grad = np.zeros(offset, dtype=self.dtype)
        if rng is None and seed is not None:
            rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
        if rng is not None:
            for name, (ofs, shape, fan_in) in self._index.items():
                if fan_in:
                    lim = 1.0 / np.sqrt(fan_in)
                    n = int(np.prod(shape))
                    self.data[ofs:ofs + n] = rng.uniform(-lim, lim, size=n)
        # cached views; the flat buffers are never reallocated
        self._views = {}
        self._grad_views = {}
        for name, (ofs, shape, _) in self._index.items():
            n = int(np.prod(shape))
            self._views[name] = self.data[ofs:ofs + n].reshape(shape)
            self._grad_views[name] = self.grad[ofs:ofs + n].reshape(shape)

    def view(self, name: str) -> np.ndarray:
        return self._views[name]

    def grad_view(self, name: str) -> np.ndarray:
        return self._grad_views[name]

    def __getstate__(self):
        return {"_index": self._index, "size": self.size,
                "data": self.data, "grad": self.grad}

    def __setstate__(self, state):
        self._index = state["_index"]
        self.size = state["size"]
        self.data = state["data"]
        self.grad = state["grad"]
        self.dtype = self.data.dtype
        self._views = {}
        self._grad_views = {}
        for name, (ofs, shape, _) in self._index.items():
            n = int(np.prod(shape))
            self._views[name] = self.data[ofs:ofs + n].reshape(shape)
            self._grad_views[name] = self.grad[ofs:ofs + n].reshape(shape)

    def zero_grad(self) -> None:
        self.grad[:] = 0.0

    def clip_grad_norm(self, max_norm: float) -> float:
        norm = float(np.sqrt(np.dot(self.grad, self.grad)))
        if norm > max_norm and norm > 0:
            self.grad *= max_norm / norm
        return norm

    def copy_data(self) -> np.ndarray:
        return self.data.copy()

    def load_data(self, values: np.ndarray) -> None:
        if values.shape != self.data.shape:
            raise ValueError(f"parameter size mismatch: {values.shape} vs {self.data.shape}")
        self.data[:] = values  # casts to the vector dtype if needed


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------


class Sgd:
    """Plain minibatch gradient descent."""

    def __init__(self, pv: ParameterVector, lr: float):
        self.pv = pv
        self.lr = lr
        self._tmp = np.empty_like(pv.data)

    def step(self) -> None:
        np.multiply(self.pv.grad, self.lr, out=self._tmp)
        self.pv.data -= self._tmp


@njit(cache=True, fastmath=True)
def _adam_kernel(data, grad, m, v, consts):
    # consts: [beta1, 1-beta1, beta2, 1-beta2, eps, lr/bc1, 1/bc2] in data dtype
    b1, ob1, b2, ob2, eps, lr1, ib2 = (consts[0], consts[1], consts[2],
                                       consts[3], consts[4], consts[5],
                                       consts[6])
    for i in range(data.shape[0]):
        g = grad[i]
        mi = b1 * m[i] + ob1 * g
        vi = b2 * v[i] + ob2 * g * g
        m[i] = mi
        v[i] = vi
        data[i] -= lr1 * mi / (np.sqrt(vi * ib2) + eps)


class Adam:
    def __init__(self, pv: ParameterVector, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.pv = pv
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = np.zeros_like(pv.data)
        self.v = np.zeros_like(pv.data)
        self.t = 0

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        if HAS_NUMBA:
            consts = np.array(
                [self.beta1, 1.0 - self.beta1, self.beta2, 1.0 - self.beta2,
                 self.eps, self.lr / bc1, 1.0 / bc2], dtype=self.pv.dtype)
            _adam_kernel(self.pv.data, self.pv.grad, self.m, self.v, consts)
            return
        g = self.pv.grad
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * g
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * g * g
        mhat = self.m / bc1
        vhat = self.v / bc2
        self.pv.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


# ---------------------------------------------------------------------------
# functional pieces
# ---------------------------------------------------------------------------


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-z))


def one_hot(idx: int, n: int) -> np.ndarray:
    v = np.zeros(n)
    v[idx] = 1.0
    return v


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


class MlpEncoder:
    """Stack of Linear+tanh layers over a flat parameter vector."""

    def __init__(self, pv: ParameterVector, prefix: str, sizes):
        # sizes: [d_in, h1, h2, ...]
        self.pv = pv
        self.prefix = prefix
        self.sizes = list(sizes)
        self._keys = [(f"{prefix}.W{k}", f"{prefix}.b{k}")
                      for k in range(len(sizes) - 1)]

    @staticmethod
    def specs(prefix: str, sizes):
        out = []
        for k in range(len(sizes) - 1):
            out.append((f"{prefix}.W{k}", (sizes[k], sizes[k + 1]), sizes[k]))
            out.append((f"{prefix}.b{k}", (sizes[k + 1],), None))
        return out

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    def forward(self, x: np.ndarray):
        """x: (..., d_in) -> (features, cache)."""
        cache = []
        h = x
        for kW, kb in self._keys:
            y = np.tanh(h @ self.pv.view(kW) + self.pv.view(kb))
            cache.append((h, y))
            h = y
        return h, cache

    def backward(self, dout: np.ndarray, cache) -> np.ndarray:
        d = dout
        for k in reversed(range(len(self.sizes) - 1)):
            x, y = cache[k]
            kW, kb = self._keys[k]
            W = self.pv.view(kW)
            dz = d * (1.0 - y * y)
            flat_x = x.reshape(-1, x.shape[-1])
            flat_dz = dz.reshape(-1, dz.shape[-1])
            self.pv.grad_view(kW)[...] += flat_x.T @ flat_dz
            self.pv.grad_view(kb)[...] += flat_dz.sum(axis=0)
            d = dz @ W.T
        return d


class GruEncoder:
    """Stacked GRU cells with explicit BPTT.

    Fused gate layout per layer: x @ Wx + bx and h @ U each produce
    [z | r | c] blocks in one matmul; the reset gate scales the recurrent
    candidate block after the matmul.  Update: h' = (1-z)*h + z*c.
    """

    def __init__(self, pv: ParameterVector, prefix: str, sizes):
        self.pv = pv
        self.prefix = prefix
        self.sizes = list(sizes)  # [d_in, h1, h2, ...]
        self._keys = [(f"{prefix}.Wx{k}", f"{prefix}.bx{k}", f"{prefix}.U{k}")
                      for k in range(len(sizes) - 1)]

    @staticmethod
    def specs(prefix: str, sizes):
        out = []
        for k in range(len(sizes) - 1):
            d_in, d_h = sizes[k], sizes[k + 1]
            out.append((f"{prefix}.Wx{k}", (d_in, 3 * d_h), d_in))
            out.append((f"{prefix}.bx{k}", (3 * d_h,), None))
            out.append((f"{prefix}.U{k}", (d_h, 3 * d_h), d_h))
        return out

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    def initial_state(self, batch: int | None = None):
        dt = self.pv.dtype
        if batch is None:
            return [np.zeros(self.sizes[k + 1], dtype=dt) for k in range(self.n_layers)]
        return [np.zeros((batch, self.sizes[k + 1]), dtype=dt)
                for k in range(self.n_layers)]

    def step(self, x, hs):
        """Single step; x: (d_in,) or (B, d_in).  Returns (top, new_hs, cache)."""
        new_hs = []
        caches = []
        inp = x
        view = self.pv.view
        for k, (kWx, kbx, kU) in enumerate(self._keys):
            d_h = self.sizes[k + 1]
            h = hs[k]
            pre = inp @ view(kWx) + view(kbx)
            rec = h @ view(kU)
            zr = sigmoid(pre[..., :2 * d_h] + rec[..., :2 * d_h])
            z = zr[..., :d_h]
            r = zr[..., d_h:]
            rec_c = rec[..., 2 * d_h:]
            c = np.tanh(pre[..., 2 * d_h:] + r * rec_c)
            h_new = (1.0 - z) * h + z * c
            caches.append((inp, h, z, r, rec_c, c))
            new_hs.append(h_new)
            inp = h_new
        return inp, new_hs, caches

    def advance(self, x: np.ndarray, hs):
        """Acting-path step for a single 1-D token; no caches.

        Returns (top features, new hidden list)."""
        view = self.pv.view
        inp = x
        new_hs = []
        for k, (kWx, kbx, kU) in enumerate(self._keys):
            P = inp @ view(kWx) + view(kbx)
            h = hs[k]
            if HAS_NUMBA:
                out = np.empty_like(h)
                _gru_advance_kernel(P, view(kU), h, out)
            else:
                d_h = self.sizes[k + 1]
                rec = h @ view(kU)
                zr = sigmoid(P[:2 * d_h] + rec[:2 * d_h])
                z, r = zr[:d_h], zr[d_h:]
                c = np.tanh(P[2 * d_h:] + r * rec[2 * d_h:])
                out = (1.0 - z) * h + z * c
            new_hs.append(out)
            inp = out
        return inp, new_hs

    def forward_sequence(self, tokens: np.ndarray, h0=None, starts=None):
        """tokens: (B, T, d_in); starts: (B, T) bool, True resets hidden.

        Returns (features (B, T, d_top), final hidden, cache).  Internally
        the time axis leads so each timestep slice is contiguous.
        """
        B, T, _ = tokens.shape
        dt = self.pv.dtype
        hs = h0 if h0 is not None else self.initial_state(B)
        starts_t = starts.T if starts is not None else None
        view = self.pv.view
        inp_t = np.ascontiguousarray(tokens.swapaxes(0, 1))  # (T, B, d_in)
        layer_caches = []
        final_hs = []
        for k, (kWx, kbx, kU) in enumerate(self._keys):
            H = self.sizes[k + 1]
            P = (inp_t.reshape(T * B, -1) @ view(kWx) + view(kbx)).reshape(T, B, 3 * H)
            Hprev = np.empty((T, B, H), dtype=dt)
            ZR = np.empty((T, B, 2 * H), dtype=dt)
            RC = np.empty((T, B, H), dtype=dt)
            C = np.empty((T, B, H), dtype=dt)
            Hout = np.empty((T, B, H), dtype=dt)
            h = np.array(hs[k], dtype=dt)
            self._fwd(P, view(kU), h, starts_t, Hprev, ZR, RC, C, Hout)
            layer_caches.append((inp_t, Hprev, ZR, RC, C))
            final_hs.append(h)
            inp_t = Hout
        feats = inp_t.swapaxes(0, 1)  # (B, T, H_top) view
        return feats, final_hs, layer_caches

    @staticmethod
    def _fwd(P, U, h, starts_t, Hprev, ZR, RC, C, Hout):
        """Per-step recurrence; numpy keeps the SIMD exp/tanh, the small
        JIT kernels fuse the surrounding elementwise arithmetic."""
        if not HAS_NUMBA:
            return GruEncoder._fwd_numpy(P, U, h, starts_t, Hprev, ZR, RC, C, Hout)
        T = P.shape[0]
        for t in range(T):
            if starts_t is not None and starts_t[t].any():
                h *= (~starts_t[t])[:, None]
            Hprev[t] = h
            rec = h @ U
            _gru_fwd_pre_kernel(rec, P[t], ZR[t])
            np.exp(ZR[t], out=ZR[t])
            _gru_fwd_mid_kernel(ZR[t], rec, P[t], RC[t], C[t])
            np.tanh(C[t], out=C[t])
            _gru_fwd_h_kernel(ZR[t], C[t], h, Hout[t])

    @staticmethod
    def _fwd_numpy(P, U, h, starts_t, Hprev, ZR, RC, C, Hout):
        T, B, H = Hprev.shape
        for t in range(T):
            if starts_t is not None and starts_t[t].any():
                h *= (~starts_t[t])[:, None]
            Hprev[t] = h
            rec = h @ U
            zr_pre = rec[:, :2 * H]
            zr_pre += P[t, :, :2 * H]
            # in-place logistic on the [z | r] block
            zr = ZR[t]
            np.negative(zr_pre, out=zr)
            np.exp(zr, out=zr)
            zr += 1.0
            np.reciprocal(zr, out=zr)
            z = zr[:, :H]
            r = zr[:, H:]
            RC[t] = rec[:, 2 * H:]
            c = C[t]
            np.multiply(r, RC[t], out=c)
            c += P[t, :, 2 * H:]
            np.tanh(c, out=c)
            out = Hout[t]
            np.subtract(c, h, out=out)
            out *= z
            out += h
            h[:] = out

    def backward_sequence(self, dfeats: np.ndarray, layer_caches, starts=None):
        """Accumulate grads for a forward_sequence call; truncates at starts.

        Returns grads wrt the incoming hidden state per layer."""
        B, T, _ = dfeats.shape
        dt = self.pv.dtype
        starts_t = starts.T if starts is not None else None
        view, gview = self.pv.view, self.pv.grad_view
        dHout = dfeats.swapaxes(0, 1)  # (T, B, H_top) view
        dh_in = [None] * self.n_layers
        for k in range(self.n_layers - 1, -1, -1):
            kWx, kbx, kU = self._keys[k]
            inp_t, Hprev, ZR, RC, C = layer_caches[k]
            H = self.sizes[k + 1]
            dpre = np.empty((T, B, 3 * H), dtype=dt)
            drec = np.empty((T, B, 3 * H), dtype=dt)
            dh = np.zeros((B, H), dtype=dt)
            self._bwd(dHout, view(kU), Hprev, ZR, RC, C, starts_t,
                      dpre, drec, dh)
            dpre2 = dpre.reshape(T * B, 3 * H)
            drec2 = drec.reshape(T * B, 3 * H)
            gview(kWx)[...] += inp_t.reshape(T * B, -1).T @ dpre2
            gview(kbx)[...] += dpre2.sum(axis=0)
            gview(kU)[...] += Hprev.reshape(T * B, H).T @ drec2
            dh_in[k] = dh
            if k > 0:
                dHout = (dpre2 @ view(kWx).T).reshape(T, B, -1)
        return dh_in

    @staticmethod
    def _bwd(dHout, U, Hprev, ZR, RC, C, starts_t, dpre, drec, dh):
        if not HAS_NUMBA:
            return GruEncoder._bwd_numpy(dHout, U, Hprev, ZR, RC, C, starts_t,
                                         dpre, drec, dh)
        T = dpre.shape[0]
        U_T = U.T
        for t in range(T - 1, -1, -1):
            _gru_bwd_gates_kernel(dHout[t], dh, ZR[t], RC[t], C[t], Hprev[t],
                                  dpre[t], drec[t])
            dh += drec[t] @ U_T
            if starts_t is not None and starts_t[t].any():
                dh *= (~starts_t[t])[:, None]

    @staticmethod
    def _bwd_numpy(dHout, U, Hprev, ZR, RC, C, starts_t, dpre, drec, dh):
        T, B, _ = dpre.shape
        H = dh.shape[1]
        for t in range(T - 1, -1, -1):
            dtot = dHout[t] + dh
            zr = ZR[t]
            z = zr[:, :H]
            r = zr[:, H:]
            c, hp, rc = C[t], Hprev[t], RC[t]
            dc_pre = (dtot * z) * (1.0 - c * c)
            dz_pre = (dtot * (c - hp)) * z * (1.0 - z)
            dr_pre = (dc_pre * rc) * r * (1.0 - r)
            dpre[t, :, :H] = dz_pre
            dpre[t, :, H:2 * H] = dr_pre
            dpre[t, :, 2 * H:] = dc_pre
            dt_slice = drec[t]
            dt_slice[:, :H] = dz_pre
            dt_slice[:, H:2 * H] = dr_pre
            np.multiply(dc_pre, r, out=dt_slice[:, 2 * H:])
            # BLAS handles the transposed view without a copy
            dh[:] = dtot * (1.0 - z) + dt_slice @ U.T
            if starts_t is not None and starts_t[t].any():
                dh *= (~starts_t[t])[:, None]


class LinearHead:
    """Plain affine head (softmax/value heads share it)."""

    def __init__(self, pv: ParameterVector, prefix: str, d_in: int, d_out: int):
        self.pv = pv
        self.prefix = prefix
        self.d_in, self.d_out = d_in, d_out
        self._kW, self._kb = f"{prefix}.W", f"{prefix}.b"

    @staticmethod
    def specs(prefix: str, d_in: int, d_out: int):
        return [(f"{prefix}.W", (d_in, d_out), d_in), (f"{prefix}.b", (d_out,), None)]

    def forward(self, feats: np.ndarray) -> np.ndarray:
        return feats @ self.pv.view(self._kW) + self.pv.view(self._kb)

    def backward(self, dz: np.ndarray, feats: np.ndarray) -> np.ndarray:
        flat_f = feats.reshape(-1, feats.shape[-1])
        flat_dz = dz.reshape(-1, dz.shape[-1])
        self.pv.grad_view(self._kW)[...] += flat_f.T @ flat_dz
        self.pv.grad_view(self._kb)[...] += flat_dz.sum(axis=0)
        return dz @ self.pv.view(self._kW).T


# ---------------------------------------------------------------------------
# checkpoint format
# ---------------------------------------------------------------------------

_MAGIC = b"DIALSNET"
_VERSION = 1


def save_checkpoint(path, header: dict, params: np.ndarray) -> None:
    """Versioned binary: magic, version, JSON header, little-endian f64 array."""
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    arr = np.ascontiguousarray(params, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<Q", arr.size))
        fh.write(arr.tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        data = fh.read()
    buf = io.BytesIO(data)
    if buf.read(8) != _MAGIC:
        raise ValueError("not a dials checkpoint file")
    (version,) = struct.unpack("<I", buf.read(4))
    if version != _VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    (hlen,) = struct.unpack("<I", buf.read(4))
    header = json.loads(buf.read(hlen).decode("utf-8"))
    (n,) = struct.unpack("<Q", buf.read(8))
    params = np.frombuffer(buf.read(8 * n), dtype="<f8").astype(np.float64)
    return header, params


# ---------------------------------------------------------------------------
# finite-difference gradient check
# ---------------------------------------------------------------------------


def gradient_check(loss_fn, pv: ParameterVector, rng: np.random.Generator,
                   n_coords: int = 200, eps: float = 1e-4) -> float:
    """Max relative error between analytic and central-difference gradients.

    loss_fn() must recompute the scalar loss from pv.data alone.  The
    analytic gradient is taken from pv.grad as currently accumulated.
    Relative error is measured against the larger of the two values,
    floored at 0.1% of the largest analytic gradient so that coordinates
    with negligible gradient do not register finite-difference noise.
    Checking zero coordinates returns 0 by convention.
    """
    if n_coords <= 0 or pv.size == 0:
        return 0.0
    analytic = pv.grad.copy()
    coords = rng.choice(pv.size, size=min(n_coords, pv.size), replace=False)
    g_max = float(np.max(np.abs(analytic[coords]))) if len(coords) else 0.0
    floor = max(1e-12, 1e-3 * g_max)
    worst = 0.0
    for c in coords:
        orig = pv.data[c]
        pv.data[c] = orig + eps
        up = loss_fn()
        pv.data[c] = orig - eps
        dn = loss_fn()
        pv.data[c] = orig
        numeric = (up - dn) / (2.0 * eps)
        denom = max(abs(analytic[c]), abs(numeric), floor)
        worst = max(worst, abs(analytic[c] - numeric) / denom)
    return worst
