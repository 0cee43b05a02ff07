"""Latent-to-voxel-grid convolutional decoder with hand-written backprop.

Layout: affine(latent -> C0 x c^3) -> SiLU, then per stage
[nearest x2 upsample -> 3x3x3 conv (zero pad) -> SiLU], then a 1x1x1 conv and
``sigma_max * sigmoid`` so every output lies in [0, sigma_max].
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

SILU_LIPSCHITZ = 1.0998  # max |d/dx x*sigmoid(x)|


@dataclass(frozen=True)
class DecoderConfig:
    latent_in: int
    grid: int = 32
    coarse: int = 4
    widths: tuple = (32, 16, 8)
    sigma_max: float = 100.0

    def __post_init__(self):
        stages = self.n_stages  # raises on a bad size
        if stages < 0 or not self.widths:
            raise ValueError("need at least one channel width")

    @property
    def n_stages(self) -> int:
        ratio = self.grid / self.coarse
        k = int(round(np.log2(ratio))) if ratio >= 1 else -1
        if k < 0 or self.coarse * 2**k != self.grid:
            raise ValueError(f"grid {self.grid} is not coarse {self.coarse} times a power of two")
        return k

    def channels(self) -> list:
        """Channel count at the coarse grid and after each stage."""
        w = list(self.widths)
        return [w[min(i, len(w) - 1)] for i in range(self.n_stages + 1)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DecoderConfig":
        return cls(int(d["latent_in"]), int(d["grid"]), int(d["coarse"]), tuple(d["widths"]), float(d["sigma_max"]))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _im2col(x: np.ndarray) -> np.ndarray:
    c, d, h, w = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (1, 1)))
    v = np.lib.stride_tricks.sliding_window_view(xp, (3, 3, 3), axis=(1, 2, 3))
    return v.transpose(0, 4, 5, 6, 1, 2, 3).reshape(c * 27, d * h * w)


def conv3(x: np.ndarray, w: np.ndarray, cols: Optional[np.ndarray] = None) -> np.ndarray:
    """3x3x3 'same' convolution (cross-correlation), x: (Cin, D, H, W), w: (Cout, Cin, 3, 3, 3)."""
    if cols is None:
        cols = _im2col(x)
    return (w.reshape(w.shape[0], -1) @ cols).reshape((w.shape[0],) + x.shape[1:])


def conv3_input_grad(dy: np.ndarray, w: np.ndarray) -> np.ndarray:
    wt = np.ascontiguousarray(w[:, :, ::-1, ::-1, ::-1].transpose(1, 0, 2, 3, 4))
    return conv3(dy, wt)


def upsample2(x: np.ndarray) -> np.ndarray:
    c, d, h, w = x.shape
    y = np.broadcast_to(x[:, :, None, :, None, :, None], (c, d, 2, h, 2, w, 2))
    return y.reshape(c, 2 * d, 2 * h, 2 * w)


def upsample2_grad(dy: np.ndarray) -> np.ndarray:
    c, d, h, w = dy.shape
    return dy.reshape(c, d // 2, 2, h // 2, 2, w // 2, 2).sum(axis=(2, 4, 6))


# Per-axis phase matrices of nearest x2 upsampling followed by a 3-tap filter: output phase p
# reads coarse offsets (p-1, p) and E[p] folds the three fine taps onto those two offsets.
_PHASE = np.array([[[1, 0, 0], [0, 1, 1]],
                   [[1, 1, 0], [0, 0, 1]]], dtype=np.float64)


def _phase_kernels(w: np.ndarray) -> np.ndarray:
    """(2, 2, 2, Cout, Cin, 2, 2, 2) effective kernels, one per output phase."""
    e = _PHASE.astype(w.dtype)
    return np.einsum("oiabc,pxa,qyb,rzc->pqroixyz", w, e, e, e, optimize=True)


def upconv3(x: np.ndarray, w: np.ndarray):
    """conv3(upsample2(x), w) computed on the coarse grid, one 2x2x2 filter per output phase.

    Returns the output and the coarse im2col matrix needed by :func:`upconv3_grad`.
    """
    c, m = x.shape[0], x.shape[1]
    cols = _im2col(x).reshape(c, 3, 3, 3, -1)
    k = _phase_kernels(w)
    cout = w.shape[0]
    y = np.empty((2, 2, 2, cout, m ** 3), dtype=x.dtype)
    for p in range(2):
        for q in range(2):
            for r in range(2):
                sub = cols[:, p:p + 2, q:q + 2, r:r + 2].reshape(c * 8, -1)
                y[p, q, r] = k[p, q, r].reshape(cout, -1) @ sub
    y = y.reshape(2, 2, 2, cout, m, m, m).transpose(3, 4, 0, 5, 1, 6, 2)
    return y.reshape(cout, 2 * m, 2 * m, 2 * m), cols


def upconv3_grad(dy: np.ndarray, w: np.ndarray, cols: np.ndarray, param_grads: bool = True):
    """Gradients of :func:`upconv3` wrt its weights and its coarse input."""
    cout, cin = w.shape[:2]
    m = dy.shape[1] // 2
    d = dy.reshape(cout, m, 2, m, 2, m, 2).transpose(2, 4, 6, 0, 1, 3, 5).reshape(2, 2, 2, cout, m ** 3)
    k = _phase_kernels(w)
    dk = np.zeros_like(k) if param_grads else None
    dcols = np.zeros((cin, 3, 3, 3, m ** 3), dtype=dy.dtype)
    for p in range(2):
        for q in range(2):
            for r in range(2):
                if param_grads:
                    sub = cols[:, p:p + 2, q:q + 2, r:r + 2].reshape(cin * 8, -1)
                    dk[p, q, r] = (d[p, q, r] @ sub.T).reshape(cout, cin, 2, 2, 2)
                dcols[:, p:p + 2, q:q + 2, r:r + 2] += (k[p, q, r].reshape(cout, -1).T @ d[p, q, r]).reshape(
                    cin, 2, 2, 2, -1)
    dw = None
    if param_grads:
        e = _PHASE.astype(w.dtype)
        dw = np.einsum("pqroixyz,pxa,qyb,rzc->oiabc", dk, e, e, e, optimize=True)
    dxp = np.zeros((cin, m + 2, m + 2, m + 2), dtype=dy.dtype)
    for a in range(3):
        for b in range(3):
            for c in range(3):
                dxp[:, a:a + m, b:b + m, c:c + m] += dcols[:, a, b, c].reshape(cin, m, m, m)
    return dw, dxp[:, 1:-1, 1:-1, 1:-1]


class Decoder:
    """One decoder stack. Parameters live in ``self.params`` (name -> array)."""

    def __init__(self, cfg: DecoderConfig, params: Optional[dict] = None, dtype=np.float32):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        self.params = params if params is not None else {}

    @classmethod
    def init(cls, cfg: DecoderConfig, rng: np.random.Generator, dtype=np.float32,
             out_bias: float = 0.0) -> "Decoder":
        ch = cfg.channels()
        c3 = cfg.coarse ** 3
        p = {
            "fc.w": rng.normal(0.0, 1.0 / np.sqrt(cfg.latent_in), (cfg.latent_in, ch[0] * c3)),
            "fc.b": np.zeros(ch[0] * c3),
        }
        for s in range(1, cfg.n_stages + 1):
            fan_in = ch[s - 1] * 27
            p[f"conv{s}.w"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), (ch[s], ch[s - 1], 3, 3, 3))
            p[f"conv{s}.b"] = np.zeros(ch[s])
        p["out.w"] = rng.normal(0.0, 1.0 / np.sqrt(ch[-1]), ch[-1])
        p["out.b"] = np.full(1, float(out_bias))
        return cls(cfg, {k: v.astype(dtype) for k, v in p.items()}, dtype)

    def copy(self) -> "Decoder":
        return Decoder(self.cfg, {k: v.copy() for k, v in self.params.items()}, self.dtype)

    def astype(self, dtype) -> "Decoder":
        return Decoder(self.cfg, {k: v.astype(dtype) for k, v in self.params.items()}, dtype)

    @property
    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def forward(self, z: np.ndarray, keep: bool = False):
        """Decode one latent vector into a (grid, grid, grid) density array.

        With ``keep`` the activations needed by :meth:`backward` are returned too.
        """
        cfg, p = self.cfg, self.params
        z = np.asarray(z, dtype=self.dtype)
        if z.shape != (cfg.latent_in,):
            raise ValueError(f"latent of shape {z.shape}, decoder expects ({cfg.latent_in},)")
        ch = cfg.channels()
        cache = {"z": z}
        h = (z @ p["fc.w"] + p["fc.b"]).reshape(ch[0], cfg.coarse, cfg.coarse, cfg.coarse)
        s = _sigmoid(h)
        a = h * s
        cache["h0"], cache["s0"] = h, s
        for k in range(1, cfg.n_stages + 1):
            h, cols = upconv3(a, p[f"conv{k}.w"])
            h += p[f"conv{k}.b"][:, None, None, None]
            s = _sigmoid(h)
            a = h * s
            cache[f"cols{k}"] = cols
            cache[f"h{k}"], cache[f"s{k}"] = h, s
        o = np.tensordot(p["out.w"], a, axes=(0, 0)) + p["out.b"][0]
        so = _sigmoid(o)
        cache["a_last"], cache["so"] = a, so
        out = cfg.sigma_max * so
        return (out, cache) if keep else out

    def backward(self, cache: dict, dout: np.ndarray, param_grads: bool = True):
        """Gradients of a scalar loss given d(loss)/d(output grid).

        Returns ``(grads, dz)``; ``grads`` is empty when ``param_grads`` is False.
        """
        cfg, p = self.cfg, self.params
        dt = self.dtype
        g = {}
        so = cache["so"]
        do = np.asarray(dout, dtype=dt) * (cfg.sigma_max * so * (1.0 - so))
        a = cache["a_last"]
        if param_grads:
            g["out.w"] = np.tensordot(a, do, axes=([1, 2, 3], [0, 1, 2]))
            g["out.b"] = np.array([do.sum()], dtype=dt)
        da = p["out.w"][:, None, None, None] * do[None]
        for k in range(cfg.n_stages, 0, -1):
            h, s = cache[f"h{k}"], cache[f"s{k}"]
            dh = da * (s * (1.0 + h * (1.0 - s)))
            dw, da = upconv3_grad(dh, p[f"conv{k}.w"], cache[f"cols{k}"], param_grads)
            if param_grads:
                g[f"conv{k}.w"] = dw
                g[f"conv{k}.b"] = dh.sum(axis=(1, 2, 3))
        h, s = cache["h0"], cache["s0"]
        dh = (da * (s * (1.0 + h * (1.0 - s)))).reshape(-1)
        if param_grads:
            g["fc.w"] = np.outer(cache["z"], dh)
            g["fc.b"] = dh
        dz = p["fc.w"] @ dh
        return g, dz

    def lipschitz_bound(self) -> float:
        """Upper bound on ||decode(z1) - decode(z2)||_2 / ||z1 - z2||_2."""
        p, cfg = self.params, self.cfg
        L = np.linalg.norm(p["fc.w"].astype(np.float64), 2) * SILU_LIPSCHITZ
        for k in range(1, cfg.n_stages + 1):
            w = p[f"conv{k}.w"].astype(np.float64)
            taps = sum(np.linalg.norm(w[:, :, a, b, c], 2) for a in range(3) for b in range(3) for c in range(3))
            L *= np.sqrt(8.0) * taps * SILU_LIPSCHITZ
        L *= np.linalg.norm(p["out.w"].astype(np.float64)) * cfg.sigma_max / 4.0
        return float(L)
