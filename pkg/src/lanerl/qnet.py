"""Two-input convolutional Q-network with a hand-derived backward pass.

Layout (activations are NHWC, float64)::

    grid (45, 3, 1) -> conv 3x3 same, 16 -> ReLU -> conv 3x3 same, 32 -> ReLU
                    -> flatten (4320) -> dense 64 -> ReLU  ----+
    aux  (3,)       -> dense 16 -> ReLU  ----------------------+-> concat (80)
                    -> dense 64 -> ReLU -> dense 3 (linear Q values)

Convolution kernels are stored HWIO ``(3, 3, in, out)``; dense kernels are
``(in, out)``.  ``PARAM_ORDER`` is the serialisation order.
"""
from __future__ import annotations

import numpy as np

from .errors import InvalidArgument

GRID_SHAPE = (45, 3)
AUX_SIZE = 3
N_ACTIONS = 3

PARAM_ORDER = (
    "conv1.w", "conv1.b",
    "conv2.w", "conv2.b",
    "grid_dense.w", "grid_dense.b",
    "aux_dense.w", "aux_dense.b",
    "fusion.w", "fusion.b",
    "out.w", "out.b",
)


def _row_patches(x):
    """(N, H, M) -> (N*H, 3*M): every row next to its upper and lower neighbour, zero beyond the edges."""
    n, h, m = x.shape
    cols = np.zeros((n, h, 3, m))
    cols[:, 1:, 0] = x[:, :-1]
    cols[:, :, 1] = x
    cols[:, :-1, 2] = x[:, 1:]
    return cols.reshape(n * h, 3 * m)


def _row_patches_grad(dcols, shape):
    n, h, m = shape
    d = dcols.reshape(n, h, 3, m)
    dx = d[:, :, 1].copy()
    dx[:, :-1] += d[:, 1:, 0]
    dx[:, 1:] += d[:, :-1, 2]
    return dx


# The grid is only three cells wide, so a 3x3 "same" convolution maps a band of
# three full rows to one full output row.  Folding the column shifts and the zero
# padding into one block matrix turns each conv layer into a single matmul.
def _band_pairs(width):
    return [(oj, kj, oj + kj - 1) for oj in range(width) for kj in range(3) if 0 <= oj + kj - 1 < width]


def _band_matrix(kernel, width):
    """HWIO (3, 3, ci, co) kernel -> (3*width*ci, width*co) band matrix."""
    ci, co = kernel.shape[2:]
    band = np.zeros((3, width, ci, width, co))
    for oj, kj, cj in _band_pairs(width):
        band[:, cj, :, oj, :] = kernel[:, kj]
    return band.reshape(3 * width * ci, width * co)


def _band_to_kernel(gband, ci, co, width):
    gband = gband.reshape(3, width, ci, width, co)
    gk = np.zeros((3, 3, ci, co))
    for oj, kj, cj in _band_pairs(width):
        gk[:, kj] += gband[:, cj, :, oj, :]
    return gk


class QNetwork:
    def __init__(self, conv_filters=(16, 32), grid_units=64, aux_units=16, fusion_units=64, seed: int | None = 0):
        self.conv_filters = tuple(int(f) for f in conv_filters)
        self.grid_units = int(grid_units)
        self.aux_units = int(aux_units)
        self.fusion_units = int(fusion_units)
        f1, f2 = self.conv_filters
        flat = GRID_SHAPE[0] * GRID_SHAPE[1] * f2
        self.shapes = {
            "conv1.w": (3, 3, 1, f1), "conv1.b": (f1,),
            "conv2.w": (3, 3, f1, f2), "conv2.b": (f2,),
            "grid_dense.w": (flat, grid_units), "grid_dense.b": (grid_units,),
            "aux_dense.w": (AUX_SIZE, aux_units), "aux_dense.b": (aux_units,),
            "fusion.w": (grid_units + aux_units, fusion_units), "fusion.b": (fusion_units,),
            "out.w": (fusion_units, N_ACTIONS), "out.b": (N_ACTIONS,),
        }
        self.params = {k: np.zeros(s) for k, s in self.shapes.items()}
        if seed is not None:
            self.init(seed)

    @property
    def arch(self) -> str:
        f1, f2 = self.conv_filters
        g = GRID_SHAPE[0] * GRID_SHAPE[1]
        return (
            f"conv3x3:1>{f1};conv3x3:{f1}>{f2};dense:{g * f2}>{self.grid_units};"
            f"dense:{AUX_SIZE}>{self.aux_units};dense:{self.grid_units + self.aux_units}>{self.fusion_units};"
            f"dense:{self.fusion_units}>{N_ACTIONS}"
        )

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for s in self.shapes.values())

    def init(self, seed: int) -> None:
        """He-normal kernels for ReLU layers, a smaller scale on the output layer, zero biases."""
        rng = np.random.default_rng(seed)
        for name in PARAM_ORDER:
            shape = self.shapes[name]
            if name.endswith(".b"):
                self.params[name] = np.zeros(shape)
                continue
            fan_in = int(np.prod(shape[:-1]))
            gain = 1.0 if name == "out.w" else 2.0
            self.params[name] = rng.normal(0.0, np.sqrt(gain / fan_in), size=shape)

    def copy(self) -> "QNetwork":
        other = QNetwork(self.conv_filters, self.grid_units, self.aux_units, self.fusion_units, seed=None)
        other.load_params(self.params)
        return other

    def load_params(self, params) -> None:
        for k in PARAM_ORDER:
            self.params[k] = np.array(params[k], dtype=float, copy=True)

    def flat_params(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in PARAM_ORDER])

    def set_flat_params(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=float)
        if flat.size != self.n_params:
            raise InvalidArgument(f"expected {self.n_params} parameters, got {flat.size}")
        i = 0
        for k in PARAM_ORDER:
            n = int(np.prod(self.shapes[k]))
            self.params[k] = flat[i:i + n].reshape(self.shapes[k]).copy()
            i += n

    # -- forward / backward -------------------------------------------------
    @staticmethod
    def _check_inputs(grid, aux):
        grid = np.asarray(grid, dtype=float)
        aux = np.asarray(aux, dtype=float)
        single = grid.ndim == 2
        if single:
            grid, aux = grid[None], aux[None]
        if grid.ndim != 3 or grid.shape[1:] != GRID_SHAPE:
            raise InvalidArgument(f"grid must be {GRID_SHAPE} or batched (N, 45, 3), got {grid.shape}")
        if aux.ndim != 2 or aux.shape != (grid.shape[0], AUX_SIZE):
            raise InvalidArgument(f"aux must be ({grid.shape[0]}, {AUX_SIZE}), got {aux.shape}")
        return grid, aux, single

    def _forward(self, grid, aux):
        p = self.params
        n = grid.shape[0]
        h, w = GRID_SHAPE
        f1, f2 = self.conv_filters
        c1 = _row_patches(grid)
        z1 = c1 @ _band_matrix(p["conv1.w"], w) + np.tile(p["conv1.b"], w)
        a1 = np.maximum(z1, 0.0).reshape(n, h, w * f1)
        c2 = _row_patches(a1)
        z2 = c2 @ _band_matrix(p["conv2.w"], w) + np.tile(p["conv2.b"], w)
        flat = np.maximum(z2, 0.0).reshape(n, -1)
        z3 = flat @ p["grid_dense.w"] + p["grid_dense.b"]
        g = np.maximum(z3, 0.0)
        z4 = aux @ p["aux_dense.w"] + p["aux_dense.b"]
        u = np.maximum(z4, 0.0)
        cat = np.concatenate([g, u], axis=1)
        z5 = cat @ p["fusion.w"] + p["fusion.b"]
        f = np.maximum(z5, 0.0)
        q = f @ p["out.w"] + p["out.b"]
        cache = dict(n=n, c1=c1, z1=z1, a1=a1, c2=c2, z2=z2, flat=flat, z3=z3, aux=aux, z4=z4, cat=cat, z5=z5, f=f)
        return q, cache

    def forward(self, grid, aux) -> np.ndarray:
        """Q values, shape (3,) for one state or (N, 3) for a batch."""
        grid, aux, single = self._check_inputs(grid, aux)
        q, _ = self._forward(grid, aux)
        return q[0] if single else q

    def relu_masks(self, grid, aux):
        grid, aux, _ = self._check_inputs(grid, aux)
        _, c = self._forward(grid, aux)
        return [c[k] > 0 for k in ("z1", "z2", "z3", "z4", "z5")]

    def backward(self, cache, dq) -> dict:
        p = self.params
        n = cache["n"]
        f1, f2 = self.conv_filters
        g = {}
        g["out.w"] = cache["f"].T @ dq
        g["out.b"] = dq.sum(0)
        dz5 = (dq @ p["out.w"].T) * (cache["z5"] > 0)
        g["fusion.w"] = cache["cat"].T @ dz5
        g["fusion.b"] = dz5.sum(0)
        dcat = dz5 @ p["fusion.w"].T
        dz3 = dcat[:, :self.grid_units] * (cache["z3"] > 0)
        dz4 = dcat[:, self.grid_units:] * (cache["z4"] > 0)
        g["aux_dense.w"] = cache["aux"].T @ dz4
        g["aux_dense.b"] = dz4.sum(0)
        g["grid_dense.w"] = cache["flat"].T @ dz3
        g["grid_dense.b"] = dz3.sum(0)
        w = GRID_SHAPE[1]
        dz2 = (dz3 @ p["grid_dense.w"].T).reshape(-1, w * f2) * (cache["z2"] > 0)
        g["conv2.w"] = _band_to_kernel(cache["c2"].T @ dz2, f1, f2, w)
        g["conv2.b"] = dz2.reshape(-1, f2).sum(0)
        da1 = _row_patches_grad(dz2 @ _band_matrix(p["conv2.w"], w).T, cache["a1"].shape)
        dz1 = da1.reshape(-1, w * f1) * (cache["z1"] > 0)
        g["conv1.w"] = _band_to_kernel(cache["c1"].T @ dz1, 1, f1, w)
        g["conv1.b"] = dz1.reshape(-1, f1).sum(0)
        return g

    def loss_and_grads(self, grid, aux, actions, targets):
        """Mean squared error between Q(s, a) and fixed targets, with its gradient."""
        grid, aux, _ = self._check_inputs(grid, aux)
        actions = np.asarray(actions, dtype=int)
        targets = np.asarray(targets, dtype=float)
        q, cache = self._forward(grid, aux)
        n = len(actions)
        err = q[np.arange(n), actions] - targets
        loss = float(np.mean(err**2))
        dq = np.zeros_like(q)
        dq[np.arange(n), actions] = 2.0 * err / n
        return loss, self.backward(cache, dq)

    def loss(self, grid, aux, actions, targets) -> float:
        q = self.forward(grid, aux)
        q = q[None] if q.ndim == 1 else q
        err = q[np.arange(len(actions)), np.asarray(actions, dtype=int)] - np.asarray(targets, dtype=float)
        return float(np.mean(err**2))


class Adam:
    def __init__(self, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}
        self._scratch: dict = {}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
                self._scratch[k] = np.empty_like(g)
            m, v, tmp = self.m[k], self.v[k], self._scratch[k]
            m *= b1
            np.multiply(g, 1 - b1, out=tmp)
            m += tmp
            v *= b2
            np.multiply(g, g, out=tmp)
            tmp *= 1 - b2
            v += tmp
            # lr * m_hat / (sqrt(v_hat) + eps), computed in place
            np.sqrt(v, out=tmp)
            tmp *= 1.0 / np.sqrt(c2)
            tmp += self.eps
            np.divide(m, tmp, out=tmp)
            tmp *= self.lr / c1
            params[k] -= tmp
