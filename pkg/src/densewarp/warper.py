"""Temporal correction: difference maps, dilated offset prediction, deformable warps.

A small convolutional model reads the difference between a spatially fused
heatmap and the view's own anchor heatmap, predicts five per-pixel offset
fields through dilated heads, deformably warps the fused heatmap with each
field, and maps the summed warps to the output channels. (The paper applies
the offsets to the spatially corrected heatmap; starting from it also makes
the zero-initialized model a no-op on top of spatial fusion.) One model is
trained per signed temporal mode. Forward, backward, and SGD are implemented here in
plain numpy (float64) so gradients can be checked against finite differences.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DivergedLoss,
    EmptyDataset,
    ModeMismatch,
    NonFinite,
    ShapeMismatch,
)
from .heatmap import Heatmap

DILATIONS = (3, 6, 12, 18, 24)
NUM_BLOCKS = 3
DWWT_MAGIC = b"DWWT"
DWWT_VERSION = 1


@dataclass
class ConvParams:
    weight: np.ndarray
    bias: np.ndarray


@dataclass
class WarperWeights:
    """All parameters of one temporal-mode model.

    Serialization order (also the gradient order): trunk blocks in order,
    each as conv1 weight, conv1 bias, conv2 weight, conv2 bias; then offset
    heads by ascending dilation (weight, bias); then the 1x1 output head
    (weight, bias).
    """

    temporal_mode: int
    channels: int
    joints: int
    blocks: list = field(default_factory=list)
    offset_heads: list = field(default_factory=list)
    output_head: ConvParams = None

    def __post_init__(self):
        if len(self.offset_heads) != len(DILATIONS):
            raise ValueError(f"expected {len(DILATIONS)} offset heads, got {len(self.offset_heads)}")
        for name, arr in self.param_list():
            if not np.isfinite(arr).all():
                raise NonFinite(f"parameter {name} contains NaN/Inf")

    def param_list(self):
        out = []
        for i, (c1, c2) in enumerate(self.blocks):
            out.append((f"block{i}.conv1.weight", c1.weight))
            out.append((f"block{i}.conv1.bias", c1.bias))
            out.append((f"block{i}.conv2.weight", c2.weight))
            out.append((f"block{i}.conv2.bias", c2.bias))
        for d, head in zip(DILATIONS, self.offset_heads):
            out.append((f"head_d{d}.weight", head.weight))
            out.append((f"head_d{d}.bias", head.bias))
        out.append(("output_head.weight", self.output_head.weight))
        out.append(("output_head.bias", self.output_head.bias))
        return out

    def copy(self) -> "WarperWeights":
        return WarperWeights(
            temporal_mode=self.temporal_mode,
            channels=self.channels,
            joints=self.joints,
            blocks=[(ConvParams(a.weight.copy(), a.bias.copy()), ConvParams(b.weight.copy(), b.bias.copy()))
                    for a, b in self.blocks],
            offset_heads=[ConvParams(h.weight.copy(), h.bias.copy()) for h in self.offset_heads],
            output_head=ConvParams(self.output_head.weight.copy(), self.output_head.bias.copy()),
        )


@dataclass(frozen=True)
class WarpInput:
    """Fused non-anchor heatmap paired with its view's anchor observation."""

    corrected: Heatmap
    anchor: Heatmap
    relative_offset: int

    def __post_init__(self):
        if self.relative_offset == 0:
            raise ValueError("relative_offset must be nonzero")
        if self.corrected.view != self.anchor.view:
            raise ShapeMismatch("corrected and anchor belong to different views")
        if self.corrected.data.shape != self.anchor.data.shape:
            raise ShapeMismatch("corrected and anchor dimensions differ")


def init_weights(mode: int, joints: int, channels: int, seed: int) -> WarperWeights:
    """He-uniform trunk, zero offset heads, 1/5-identity output head.

    The zero heads make the untrained model warp by nothing, so with the
    identity output head the whole operator starts as (clamped) identity on
    the fused input.
    """
    rng = np.random.default_rng(seed)

    def he(out_c, in_c):
        bound = np.sqrt(6.0 / (in_c * 9))
        return ConvParams(
            weight=rng.uniform(-bound, bound, size=(out_c, in_c, 3, 3)),
            bias=np.zeros(out_c),
        )

    blocks = []
    in_c = joints
    for _ in range(NUM_BLOCKS):
        blocks.append((he(channels, in_c), he(channels, channels)))
        in_c = channels
    heads = [
        ConvParams(weight=np.zeros((2, channels, 3, 3)), bias=np.zeros(2))
        for _ in DILATIONS
    ]
    out_head = ConvParams(
        weight=(np.eye(joints) / len(DILATIONS)).reshape(joints, joints, 1, 1),
        bias=np.zeros(joints),
    )
    return WarperWeights(
        temporal_mode=mode, channels=channels, joints=joints,
        blocks=blocks, offset_heads=heads, output_head=out_head,
    )


def difference_map(inp: WarpInput) -> np.ndarray:
    """Element-wise corrected minus anchor; values stay within [-1, 1]."""
    return inp.corrected.data - inp.anchor.data


# ---------------------------------------------------------------------------
# conv / warp primitives with explicit backward passes
# ---------------------------------------------------------------------------

def _im2col3(x, dilation):
    c, h, w = x.shape
    d = dilation
    xp = np.zeros((c, h + 2 * d, w + 2 * d))
    xp[:, d : d + h, d : d + w] = x
    taps = [
        xp[:, ky * d : ky * d + h, kx * d : kx * d + w]
        for ky in range(3)
        for kx in range(3)
    ]
    return np.stack(taps, axis=1).reshape(c * 9, h * w)


def _col2im3(dcols, shape, dilation):
    c, h, w = shape
    d = dilation
    dxp = np.zeros((c, h + 2 * d, w + 2 * d))
    dc = dcols.reshape(c, 9, h, w)
    i = 0
    for ky in range(3):
        for kx in range(3):
            dxp[:, ky * d : ky * d + h, kx * d : kx * d + w] += dc[:, i]
            i += 1
    return dxp[:, d : d + h, d : d + w]


def _conv3_forward(x, p: ConvParams, dilation):
    out_c = p.weight.shape[0]
    _, h, w = x.shape
    cols = _im2col3(x, dilation)
    y = (p.weight.reshape(out_c, -1) @ cols) + p.bias[:, None]
    return y.reshape(out_c, h, w), cols


def _conv3_backward(dy, cols, p: ConvParams, x_shape, dilation):
    out_c = dy.shape[0]
    dyf = dy.reshape(out_c, -1)
    dw = (dyf @ cols.T).reshape(p.weight.shape)
    db = dyf.sum(axis=1)
    dcols = p.weight.reshape(out_c, -1).T @ dyf
    dx = _col2im3(dcols, x_shape, dilation)
    return dx, dw, db


def _conv1_forward(x, p: ConvParams):
    out_c = p.weight.shape[0]
    c, h, w = x.shape
    y = p.weight.reshape(out_c, c) @ x.reshape(c, -1) + p.bias[:, None]
    return y.reshape(out_c, h, w)


def _conv1_backward(dy, x, p: ConvParams):
    out_c, c = p.weight.shape[:2]
    dyf = dy.reshape(out_c, -1)
    xf = x.reshape(c, -1)
    dw = (dyf @ xf.T).reshape(p.weight.shape)
    db = dyf.sum(axis=1)
    dx = (p.weight.reshape(out_c, c).T @ dyf).reshape(x.shape)
    return dx, dw, db


def _gather_corners(base, px, py):
    """The four zero-padded corner value grids around each sample position."""
    _, h, w = base.shape
    x0 = np.floor(px).astype(np.int64)
    y0 = np.floor(py).astype(np.int64)
    corners = {}
    for dy in (0, 1):
        for dx in (0, 1):
            yy = y0 + dy
            xx = x0 + dx
            valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            vals = base[:, np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
            corners[(dy, dx)] = vals * valid[None]
    return corners, px - x0, py - y0


def deformable_warp(base, offsets) -> np.ndarray:
    """Sample every channel of base at x + o(x) with zero padding.

    Zero offsets reproduce base exactly; samples fully outside the grid are 0.
    """
    base = np.asarray(base, dtype=float)
    offsets = np.asarray(offsets, dtype=float)
    if offsets.shape != (2,) + base.shape[1:]:
        raise ShapeMismatch(f"offsets shape {offsets.shape} does not match base {base.shape}")
    if not np.isfinite(offsets).all():
        raise NonFinite("offsets contain NaN/Inf")
    out, _ = _warp_forward(base, offsets)
    return out


def _warp_forward(base, offsets):
    _, h, w = base.shape
    xs, ys = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    px = xs + offsets[0]
    py = ys + offsets[1]
    v, fx, fy = _gather_corners(base, px, py)
    out = (
        v[(0, 0)] * ((1 - fy) * (1 - fx))[None]
        + v[(0, 1)] * ((1 - fy) * fx)[None]
        + v[(1, 0)] * (fy * (1 - fx))[None]
        + v[(1, 1)] * (fy * fx)[None]
    )
    return out, (v, fx, fy)


def _warp_backward_offsets(dout, cache):
    """d loss / d offsets, summed over channels (base is a constant input)."""
    v, fx, fy = cache
    ddx = (1 - fy)[None] * (v[(0, 1)] - v[(0, 0)]) + fy[None] * (v[(1, 1)] - v[(1, 0)])
    ddy = (1 - fx)[None] * (v[(1, 0)] - v[(0, 0)]) + fx[None] * (v[(1, 1)] - v[(0, 1)])
    return np.stack([(dout * ddx).sum(axis=0), (dout * ddy).sum(axis=0)])


# ---------------------------------------------------------------------------
# full model
# ---------------------------------------------------------------------------

def _trunk_forward(weights, phi):
    x = phi
    cache = []
    for c1, c2 in weights.blocks:
        pre1, cols1 = _conv3_forward(x, c1, 1)
        act = np.maximum(pre1, 0.0)
        out, cols2 = _conv3_forward(act, c2, 1)
        skip = x.shape[0] == out.shape[0]
        y = out + x if skip else out
        cache.append((x.shape, cols1, pre1 > 0, act.shape, cols2, skip))
        x = y
    return x, cache


def _trunk_backward(weights, cache, dx):
    grads = []
    for (x_shape, cols1, relu_mask, act_shape, cols2, skip), (c1, c2) in zip(
        reversed(cache), reversed(weights.blocks)
    ):
        dact, dw2, db2 = _conv3_backward(dx, cols2, c2, act_shape, 1)
        dact *= relu_mask
        dprev, dw1, db1 = _conv3_backward(dact, cols1, c1, x_shape, 1)
        if skip:
            dprev = dprev + dx
        grads.append((dw1, db1, dw2, db2))
        dx = dprev
    return list(reversed(grads))


def warper_forward(weights: WarperWeights, inp: WarpInput) -> Heatmap:
    """Apply the temporal model; output has the input's dimensions and labels."""
    out, _ = _forward_full(weights, inp)
    return Heatmap(
        view=inp.corrected.view, frame=inp.corrected.frame, data=out, anchor=False
    )


def _check_input(weights, inp):
    if weights.temporal_mode != inp.relative_offset:
        raise ModeMismatch(
            f"weights serve mode {weights.temporal_mode}, input has offset {inp.relative_offset}"
        )
    if inp.corrected.joints != weights.joints:
        raise ShapeMismatch(
            f"weights expect {weights.joints} joints, input has {inp.corrected.joints}"
        )


def _forward_full(weights, inp):
    _check_input(weights, inp)
    phi = difference_map(inp)
    base = inp.corrected.data
    feat, trunk_cache = _trunk_forward(weights, phi)
    warped_sum = np.zeros_like(base)
    head_caches = []
    for d, head in zip(DILATIONS, weights.offset_heads):
        offs_map, cols = _conv3_forward(feat, head, d)
        warped, wcache = _warp_forward(base, offs_map)
        warped_sum += warped
        head_caches.append((cols, wcache))
    pre = _conv1_forward(warped_sum, weights.output_head)
    out = np.clip(pre, 0.0, 1.0)
    cache = (phi, feat, trunk_cache, head_caches, warped_sum, pre)
    return out, cache


def _backward_full(weights, inp, cache, dout):
    """Gradients for every parameter, in param_list order."""
    phi, feat, trunk_cache, head_caches, warped_sum, pre = cache
    dpre = dout * ((pre > 0.0) & (pre < 1.0))
    dwarped_sum, dw_out, db_out = _conv1_backward(dpre, warped_sum, weights.output_head)
    dfeat = np.zeros_like(feat)
    head_grads = []
    for d, head, (cols, wcache) in zip(DILATIONS, weights.offset_heads, head_caches):
        doffs = _warp_backward_offsets(dwarped_sum, wcache)
        df, dw, db = _conv3_backward(doffs, cols, head, feat.shape, d)
        dfeat += df
        head_grads.append((dw, db))
    block_grads = _trunk_backward(weights, trunk_cache, dfeat)
    flat = []
    for dw1, db1, dw2, db2 in block_grads:
        flat.extend([dw1, db1, dw2, db2])
    for dw, db in head_grads:
        flat.extend([dw, db])
    flat.extend([dw_out, db_out])
    return flat


# Batched counterparts: samples are stacked so every convolution becomes a
# single GEMM over B*H*W pixel columns. Activations live as (C, B, H, W) so
# every reshape around the GEMMs is a view, never a copy. Used by training;
# inference keeps the single-sample path.

def _conv3_forward_b(x, p: ConvParams, dilation):
    """3x3 dilated conv as one stacked tap GEMM plus nine shifted adds.

    Avoids materializing im2col matrices: z = (9*out, in) @ x computes every
    tap's pointwise product at once, and each tap slab is added at its shift.
    """
    c, b, h, w = x.shape
    d = dilation
    out_c = p.weight.shape[0]
    xf = x.reshape(c, -1)
    w_flat = p.weight.transpose(2, 3, 0, 1).reshape(9 * out_c, c)
    z = (w_flat @ xf).reshape(3, 3, out_c, b, h, w)
    yp = np.zeros((out_c, b, h + 2 * d, w + 2 * d))
    for ky in range(3):
        for kx in range(3):
            # y(p) = sum_taps W_tap x(p + (ky-1, kx-1)*d): accumulate each tap
            # slab shifted the opposite way in the padded output.
            oy = (2 - ky) * d
            ox = (2 - kx) * d
            yp[:, :, oy : oy + h, ox : ox + w] += z[ky, kx]
    y = yp[:, :, d : d + h, d : d + w] + p.bias[:, None, None, None]
    return np.ascontiguousarray(y), x


def _conv3_backward_b(dy, x, p: ConvParams, x_shape, dilation):
    c, b, h, w = x_shape
    d = dilation
    out_c = dy.shape[0]
    dyf = dy.reshape(out_c, -1)
    db = dyf.sum(axis=1)

    # dx(q) = sum_taps W_tap^T dy(q - shift_tap): same trick, transposed.
    wt_flat = p.weight.transpose(2, 3, 1, 0).reshape(-1, out_c)
    dz = (wt_flat @ dyf).reshape(3, 3, c, b, h, w)
    dxp = np.zeros((c, b, h + 2 * d, w + 2 * d))
    for ky in range(3):
        for kx in range(3):
            dxp[:, :, ky * d : ky * d + h, kx * d : kx * d + w] += dz[ky, kx]
    dx = np.ascontiguousarray(dxp[:, :, d : d + h, d : d + w])

    # dW_tap = dy . x(shifted by tap): pad x once, GEMM against each tap view.
    xp = np.zeros((c, b, h + 2 * d, w + 2 * d))
    xp[:, :, d : d + h, d : d + w] = x.reshape(x_shape)
    dw = np.empty_like(p.weight)
    for ky in range(3):
        for kx in range(3):
            tap = xp[:, :, ky * d : ky * d + h, kx * d : kx * d + w].reshape(c, -1)
            dw[:, :, ky, kx] = dyf @ tap.T
    return dx, dw, db


def _conv1_forward_b(x, p: ConvParams):
    c, b, h, w = x.shape
    out_c = p.weight.shape[0]
    y = p.weight.reshape(out_c, c) @ x.reshape(c, -1) + p.bias[:, None]
    return y.reshape(out_c, b, h, w)


def _conv1_backward_b(dy, x, p: ConvParams):
    c = x.shape[0]
    out_c = p.weight.shape[0]
    dyf = dy.reshape(out_c, -1)
    xf = x.reshape(c, -1)
    dw = (dyf @ xf.T).reshape(p.weight.shape)
    db = dyf.sum(axis=1)
    dx = (p.weight.reshape(out_c, c).T @ dyf).reshape(x.shape)
    return dx, dw, db


def _trunk_forward_b(weights, phi):
    x = phi
    cache = []
    for c1, c2 in weights.blocks:
        pre1, cols1 = _conv3_forward_b(x, c1, 1)
        act = np.maximum(pre1, 0.0)
        out, cols2 = _conv3_forward_b(act, c2, 1)
        skip = x.shape[0] == out.shape[0]
        y = out + x if skip else out
        cache.append((x.shape, cols1, pre1 > 0, act.shape, cols2, skip))
        x = y
    return x, cache


def _trunk_backward_b(weights, cache, dx):
    grads = []
    for (x_shape, cols1, relu_mask, act_shape, cols2, skip), (c1, c2) in zip(
        reversed(cache), reversed(weights.blocks)
    ):
        dact, dw2, db2 = _conv3_backward_b(dx, cols2, c2, act_shape, 1)
        dact *= relu_mask
        dprev, dw1, db1 = _conv3_backward_b(dact, cols1, c1, x_shape, 1)
        if skip:
            dprev = dprev + dx
        grads.append((dw1, db1, dw2, db2))
        dx = dprev
    return list(reversed(grads))


def _forward_batch(weights, phis, bases):
    """phis/bases are (C, B, H, W); returns out (J, B, H, W) plus cache."""
    feat, trunk_cache = _trunk_forward_b(weights, phis)
    b = phis.shape[1]
    warped_sum = np.zeros_like(bases)
    head_caches = []
    for d, head in zip(DILATIONS, weights.offset_heads):
        offs, cols = _conv3_forward_b(feat, head, d)
        wcaches = []
        for i in range(b):
            warped, wc = _warp_forward(bases[:, i], offs[:, i])
            warped_sum[:, i] += warped
            wcaches.append(wc)
        head_caches.append((cols, wcaches))
    pre = _conv1_forward_b(warped_sum, weights.output_head)
    out = np.clip(pre, 0.0, 1.0)
    return out, (feat, trunk_cache, head_caches, warped_sum, pre)


def _backward_batch(weights, cache, dout):
    feat, trunk_cache, head_caches, warped_sum, pre = cache
    b = dout.shape[1]
    dpre = dout * ((pre > 0.0) & (pre < 1.0))
    dwarped_sum, dw_out, db_out = _conv1_backward_b(dpre, warped_sum, weights.output_head)
    dfeat = np.zeros_like(feat)
    head_grads = []
    for d, head, (cols, wcaches) in zip(DILATIONS, weights.offset_heads, head_caches):
        doffs = np.stack([
            _warp_backward_offsets(dwarped_sum[:, i], wcaches[i]) for i in range(b)
        ], axis=1)
        df, dw, db = _conv3_backward_b(doffs, cols, head, feat.shape, d)
        dfeat += df
        head_grads.append((dw, db))
    block_grads = _trunk_backward_b(weights, trunk_cache, dfeat)
    flat = []
    for dw1, db1, dw2, db2 in block_grads:
        flat.extend([dw1, db1, dw2, db2])
    for dw, db in head_grads:
        flat.extend([dw, db])
    flat.extend([dw_out, db_out])
    return flat


def loss_and_grads(weights: WarperWeights, samples):
    """Mean squared error over a batch plus gradients in param_list order.

    The loss is the mean over samples of each sample's mean squared pixel
    error; the whole batch runs as one stacked forward/backward pass.
    """
    for inp, _ in samples:
        _check_input(weights, inp)
    phis = np.stack([difference_map(inp) for inp, _ in samples], axis=1)
    bases = np.stack([inp.corrected.data for inp, _ in samples], axis=1)
    targets = np.stack([t.data for _, t in samples], axis=1)
    out, cache = _forward_batch(weights, phis, bases)
    diff = out - targets
    b = diff.shape[1]
    size = diff[:, 0].size
    loss = float((diff**2).sum() / (b * size))
    dout = 2.0 * diff / (size * b)
    grads = _backward_batch(weights, cache, dout)
    return loss, grads


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.05
    epochs: int = 50
    batch_size: int = 8
    momentum: float = 0.9
    channels: int = 16
    seed: int = 0


def warper_train(dataset, mode: int, hyper: TrainConfig) -> WarperWeights:
    """Mini-batch SGD with momentum on the heatmap MSE.

    Deterministic for a fixed seed: initialization and batch shuffling both
    derive from hyper.seed.
    """
    if not dataset:
        raise EmptyDataset("no training samples")
    for inp, target in dataset:
        if inp.relative_offset != mode:
            raise ModeMismatch(f"sample offset {inp.relative_offset} != trained mode {mode}")
        if target.data.shape != inp.corrected.data.shape:
            raise ShapeMismatch("target dimensions differ from input")
    joints = dataset[0][0].corrected.joints
    weights = init_weights(mode, joints, hyper.channels, hyper.seed)
    params = [arr for _, arr in weights.param_list()]
    vel = [np.zeros_like(p) for p in params]
    rng = np.random.default_rng(hyper.seed + 1)
    order = np.arange(len(dataset))
    for _ in range(hyper.epochs):
        rng.shuffle(order)
        epoch_loss = 0.0
        for lo in range(0, len(order), hyper.batch_size):
            batch = [dataset[i] for i in order[lo : lo + hyper.batch_size]]
            loss, grads = loss_and_grads(weights, batch)
            if not np.isfinite(loss):
                raise DivergedLoss(f"loss became {loss}")
            epoch_loss += loss * len(batch)
            for p, v, g in zip(params, vel, grads):
                v *= hyper.momentum
                v += g
                p -= hyper.lr * v
    return weights


def training_loss(weights: WarperWeights, dataset) -> float:
    """Mean MSE of the current weights over a dataset (no gradient step)."""
    total = 0.0
    for inp, target in dataset:
        out, _ = _forward_full(weights, inp)
        total += float(((out - target.data) ** 2).mean())
    return total / len(dataset)


# ---------------------------------------------------------------------------
# weight files
# ---------------------------------------------------------------------------

def save_weights(path, weights: WarperWeights) -> None:
    """DWWT format: header then float32 parameters in param_list order."""
    header = DWWT_MAGIC + struct.pack(
        "<IiII", DWWT_VERSION, weights.temporal_mode, weights.channels, weights.joints
    )
    with open(path, "wb") as fh:
        fh.write(header)
        for _, arr in weights.param_list():
            fh.write(arr.astype("<f4").tobytes())


def load_weights(path) -> WarperWeights:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != DWWT_MAGIC:
        raise ValueError(f"{path}: not a DWWT file")
    version, mode, channels, joints = struct.unpack("<IiII", raw[4:20])
    if version != DWWT_VERSION:
        raise ValueError(f"{path}: unsupported DWWT version {version}")
    template = init_weights(mode, joints, channels, seed=0)
    offset = 20
    for _, arr in template.param_list():
        n = arr.size * 4
        vals = np.frombuffer(raw[offset : offset + n], dtype="<f4").astype(np.float64)
        arr[...] = vals.reshape(arr.shape)
        offset += n
    if offset != len(raw):
        raise ValueError(f"{path}: trailing bytes after parameters")
    return template
