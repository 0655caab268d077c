"""Minimal reverse-mode autodiff for the layers HistNet needs.

Arrays are NHWC. Convolution weights are stored ``(out, in, kh, kw)``.
Every op run through a :class:`Tape` appends a closure that pushes the
output gradient back to its inputs; :meth:`Tape.backward` replays them in
reverse.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Var:
    __slots__ = ("value", "grad", "name")

    def __init__(self, value, name=None):
        self.value = value
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def _acc(self, g):
        if self.grad is None:
            self.grad = g
        else:
            self.grad = self.grad + g


def _sum_f64(a, axis):
    return a.sum(axis=axis, dtype=np.float64).astype(a.dtype)


def im2col3x3(x):
    """``(N, H, W, C)`` -> ``(N*H*W, 9*C)`` with zero 'same' padding.

    Columns are ordered ``(ky, kx, c)``.
    """
    n, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = np.empty((n, h, w, 3, 3, c), dtype=x.dtype)
    for ky in range(3):
        for kx in range(3):
            cols[:, :, :, ky, kx, :] = xp[:, ky : ky + h, kx : kx + w, :]
    return cols.reshape(n * h * w, 9 * c)


def col2im3x3(dcols, shape):
    n, h, w, c = shape
    d = dcols.reshape(n, h, w, 3, 3, c)
    dxp = np.zeros((n, h + 2, w + 2, c), dtype=dcols.dtype)
    for ky in range(3):
        for kx in range(3):
            dxp[:, ky : ky + h, kx : kx + w, :] += d[:, :, :, ky, kx, :]
    return dxp[:, 1:-1, 1:-1, :]


def _conv_matrix(w):
    """``(O, C, 3, 3)`` -> ``(O, 9*C)`` matching the im2col column order."""
    o = w.shape[0]
    return w.transpose(0, 2, 3, 1).reshape(o, -1)


# output offset of deconv tap (ky, kx) is (1 - ky, 1 - kx)
_DECONV_TAPS = [(ky, kx) for ky in range(3) for kx in range(3)]


class Tape:
    """Records backward closures. ``Tape(record=False)`` runs inference
    without keeping activations alive."""

    def __init__(self, record: bool = True):
        self.record = record
        self._ops = []

    def _push(self, fn):
        if self.record:
            self._ops.append(fn)

    def backward(self, out: Var, grad=None):
        out.grad = np.ones_like(out.value) if grad is None else grad
        for fn in reversed(self._ops):
            fn()
        self._ops.clear()

    # -- layers --------------------------------------------------------

    def conv3x3(self, x: Var, w: Var, b: Var) -> Var:
        n, h, wd, c = x.shape
        o = w.shape[0]
        cols = im2col3x3(x.value)
        wmat = _conv_matrix(w.value)
        out = Var((cols @ wmat.T + b.value).reshape(n, h, wd, o))

        def back():
            dy = out.grad.reshape(-1, o)
            w._acc((dy.T @ cols).reshape(o, 3, 3, c).transpose(0, 3, 1, 2))
            b._acc(_sum_f64(dy, 0))
            x._acc(col2im3x3(dy @ wmat, x.shape))

        self._push(back)
        return out

    def conv1x1(self, x: Var, w: Var, b: Var) -> Var:
        n, h, wd, c = x.shape
        o = w.shape[0]
        flat = x.value.reshape(-1, c)
        wmat = w.value.reshape(o, c)
        out = Var((flat @ wmat.T + b.value).reshape(n, h, wd, o))

        def back():
            dy = out.grad.reshape(-1, o)
            w._acc((dy.T @ flat).reshape(w.shape))
            b._acc(_sum_f64(dy, 0))
            x._acc((dy @ wmat).reshape(x.shape))

        self._push(back)
        return out

    def deconv_up2(self, x: Var, w: Var, b: Var) -> Var:
        """3x3 transposed convolution, stride 2: output is exactly 2H x 2W.

        Input pixel ``(i, j)`` scatters ``w[:, :, ky, kx]`` onto output
        ``(2i + 1 - ky, 2j + 1 - kx)``; taps falling outside are dropped.
        Equivalent to placing the input on the even positions of a zero
        grid and applying :meth:`conv3x3` with the same weights.
        """
        n, h, wd, c = x.shape
        o = w.shape[0]
        flat = x.value.reshape(-1, c)
        wm = w.value.transpose(1, 2, 3, 0).reshape(c, 9 * o)
        taps = (flat @ wm).reshape(n, h, wd, 3, 3, o)
        yp = np.zeros((n, 2 * h + 2, 2 * wd + 2, o), dtype=taps.dtype)
        for ky, kx in _DECONV_TAPS:
            oy, ox = 2 - ky, 2 - kx
            yp[:, oy : oy + 2 * h : 2, ox : ox + 2 * wd : 2, :] += taps[:, :, :, ky, kx, :]
        out = Var(yp[:, 1:-1, 1:-1, :] + b.value)

        def back():
            dy = out.grad
            dyp = np.pad(dy, ((0, 0), (1, 1), (1, 1), (0, 0)))
            dtaps = np.empty((n, h, wd, 3, 3, o), dtype=dy.dtype)
            for ky, kx in _DECONV_TAPS:
                oy, ox = 2 - ky, 2 - kx
                dtaps[:, :, :, ky, kx, :] = dyp[:, oy : oy + 2 * h : 2, ox : ox + 2 * wd : 2, :]
            dt = dtaps.reshape(-1, 9 * o)
            w._acc((flat.T @ dt).reshape(c, 3, 3, o).transpose(3, 0, 1, 2))
            b._acc(_sum_f64(dy.reshape(-1, o), 0))
            x._acc((dt @ wm.T).reshape(x.shape))

        self._push(back)
        return out

    def maxpool2(self, x: Var) -> Var:
        n, h, wd, c = x.shape
        win = x.value.reshape(n, h // 2, 2, wd // 2, 2, c).transpose(0, 1, 3, 5, 2, 4)
        win = win.reshape(n, h // 2, wd // 2, c, 4)
        idx = np.argmax(win, axis=-1)
        out = Var(np.take_along_axis(win, idx[..., None], axis=-1)[..., 0])

        def back():
            dwin = np.zeros(win.shape, dtype=out.grad.dtype)
            np.put_along_axis(dwin, idx[..., None], out.grad[..., None], axis=-1)
            dx = dwin.reshape(n, h // 2, wd // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
            x._acc(dx.reshape(x.shape))

        self._push(back)
        return out

    def relu(self, x: Var) -> Var:
        mask = x.value > 0
        out = Var(np.maximum(x.value, 0))  # keeps NaN visible

        def back():
            x._acc(np.where(mask, out.grad, 0).astype(out.grad.dtype))

        self._push(back)
        return out

    def concat(self, xs) -> Var:
        sizes = [v.shape[-1] for v in xs]
        for v in xs[1:]:
            assert v.shape[:-1] == xs[0].shape[:-1], (
                f"concat shape mismatch: {[u.shape for u in xs]}")
        out = Var(np.concatenate([v.value for v in xs], axis=-1))

        def back():
            start = 0
            for v, s in zip(xs, sizes):
                v._acc(out.grad[..., start : start + s])
                start += s

        self._push(back)
        return out

    def l1_loss(self, residual: Var, base, target) -> Var:
        """``mean |residual + base - target|``; subgradient 0 at 0."""
        diff = residual.value[..., 0].astype(np.float64) + base - target
        out = Var(np.array(np.abs(diff).mean()))

        def back():
            g = np.sign(diff) * (float(out.grad) / diff.size)
            residual._acc(g[..., None].astype(residual.value.dtype))

        self._push(back)
        return out
