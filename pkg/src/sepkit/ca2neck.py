"""Content-aware alignment neck primitives and the 3-level pyramid pass.

LDConv replaces strided convolution on the way down: each output location
anchors at (i*stride, j*stride), samples N content-shifted points around
it (a deterministic zero-mean point layout plus offsets predicted by a
3x3 convolution), and mixes the N*C_in sampled values into C_out channels
with a 1x1 projection.  Stored mixing weights per output channel are
exactly C_in*N, so capacity grows linearly in the point count.

DySample replaces interpolation on the way up: a base grid places scale^2
output points uniformly inside every source cell (zero offsets reproduce
plain bilinear resizing), and a 1x1 head predicts per-point offsets that
are scaled by a static scope factor (default 0.25) before border-clamped
bilinear sampling.

The pyramid pass is PAN-style: one top-down sweep (DySample, concat,
1x1 merge, gated refinement) followed by one bottom-up sweep (LDConv
stride 2, concat, 1x1 merge, gated refinement)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .msgrb import MsgrbParams, msgrb_forward
from .rng import Stream
from .tensor import SamplingGrid, Tensor, require

DEFAULT_SCOPE = 0.25


def ldconv_coords(n_points: int) -> np.ndarray:
    """Deterministic zero-mean base coordinates for N sampling points.

    Enumerates the first N cells of a ceil(sqrt(N))-sized square grid in
    row-major order and subtracts their centroid, so irregular point
    counts give fractional, centered layouts.
    """
    if n_points <= 0:
        raise ValueError(f"point count must be positive, got {n_points}")
    b = math.isqrt(n_points)
    if b * b < n_points:
        b += 1
    cells = [(i, j) for i in range(b) for j in range(b)][:n_points]
    coords = np.asarray(cells, dtype=np.float64)
    return coords - coords.mean(axis=0)


@dataclass
class LdconvParams:
    n_points: int
    stride: int
    mix_w: np.ndarray     # (C_out, N*C_in, 1, 1); bias-free point mixing
    offset_w: np.ndarray  # (2N, C_in, 3, 3)
    offset_b: np.ndarray  # (2N,)

    @property
    def in_channels(self) -> int:
        return self.offset_w.shape[1]

    @property
    def out_channels(self) -> int:
        return self.mix_w.shape[0]

    @property
    def weights_per_output_channel(self) -> int:
        w = self.mix_w.value if isinstance(self.mix_w, ad.Var) else self.mix_w
        return int(np.prod(w.shape[1:]))

    @staticmethod
    def init(in_channels: int, out_channels: int, n_points: int = 5,
             stride: int = 1, rng: Stream = None,
             dtype=np.float64) -> "LdconvParams":
        """Zero offsets (fixed-grid sampling); mixing weights random when a
        stream is given, zero otherwise.

        Random init biases the offsets by +0.35 of a pixel: it keeps every
        sampling point off the integer lattice, where the interpolant's
        coordinate derivative is undefined."""
        require(n_points >= 1, f"need n_points >= 1, got {n_points}")
        require(stride >= 1, f"need stride >= 1, got {stride}")
        if rng is None:
            mix = np.zeros((out_channels, n_points * in_channels, 1, 1),
                           dtype=dtype)
            off_w = np.zeros((2 * n_points, in_channels, 3, 3), dtype=dtype)
            off_b = np.zeros(2 * n_points, dtype=dtype)
        else:
            mix = rng.normal((out_channels, n_points * in_channels, 1, 1),
                             scale=1.0 / np.sqrt(n_points * in_channels)
                             ).astype(dtype)
            off_w = rng.normal((2 * n_points, in_channels, 3, 3),
                               scale=0.02).astype(dtype)
            off_b = np.full(2 * n_points, 0.35, dtype=dtype)
        return LdconvParams(n_points=n_points, stride=stride, mix_w=mix,
                            offset_w=off_w, offset_b=off_b)

    @staticmethod
    def from_conv_kernel(kernel: np.ndarray, stride: int = 1,
                         dtype=np.float64) -> "LdconvParams":
        """Mixing weights arranged from a square (C_out, C_in, k, k) kernel.

        Point i*k+j carries kernel tap (i, j), matching the row-major
        order of ldconv_coords(k*k); offsets start at zero, so the result
        reproduces fixed k x k sampling."""
        co, ci, kh, kw = kernel.shape
        require(kh == kw, f"kernel must be square, got {kernel.shape}")
        n = kh * kw
        # (co, ci, kh, kw) -> (co, kh, kw, ci) -> (co, n*ci)
        mix = np.ascontiguousarray(kernel.transpose(0, 2, 3, 1)).reshape(
            co, n * ci, 1, 1).astype(dtype)
        p = LdconvParams.init(ci, co, n_points=n, stride=stride, dtype=dtype)
        p.mix_w = mix
        return p


def ldconv_forward(x, p: LdconvParams):
    """Deformable N-point downsampling; output is ceil(H/s) x ceil(W/s)."""
    xv = ad.as_var(x)
    n, c, h, w = xv.value.shape
    require(c == p.in_channels,
            f"input has {c} channels, params expect {p.in_channels}")
    offsets = ad.conv2d(xv, p.offset_w, p.offset_b, stride=p.stride,
                        padding=1)
    ho, wo = offsets.value.shape[2], offsets.value.shape[3]
    base = ldconv_coords(p.n_points)
    anchor_r = (np.arange(ho, dtype=xv.value.dtype) * p.stride
                ).reshape(1, 1, ho, 1)
    anchor_c = (np.arange(wo, dtype=xv.value.dtype) * p.stride
                ).reshape(1, 1, 1, wo)
    per_point = ad.split(offsets, [2] * p.n_points, axis=1)
    sampled = []
    for k in range(p.n_points):
        d_r, d_c = ad.split(per_point[k], [1, 1], axis=1)
        rows = ad.add(d_r, anchor_r + base[k, 0])
        cols = ad.add(d_c, anchor_c + base[k, 1])
        grid = ad.stack_last(rows, cols)  # (N, 1, ho, wo, 2)
        sampled.append(ad.bilinear_sample(xv, grid))
    stacked = ad.concat(sampled, axis=1)  # point-major (N, n_points*C, ho, wo)
    out = ad.conv2d(stacked, p.mix_w)
    return Tensor(out.value, copy=False) if isinstance(x, Tensor) else out


@dataclass
class DysampleParams:
    scale: int
    groups: int
    scope: float          # static offset scope factor
    offset_w: np.ndarray  # (2*groups*scale^2, C, 1, 1)
    offset_b: np.ndarray  # (2*groups*scale^2,)

    @property
    def channels(self) -> int:
        return self.offset_w.shape[1]

    @staticmethod
    def init(channels: int, scale: int = 2, groups: int = 1,
             scope: float = DEFAULT_SCOPE, rng: Stream = None,
             dtype=np.float64) -> "DysampleParams":
        """Zero-initialized head reproduces plain bilinear upsampling."""
        require(scale >= 2, f"scale must be >= 2, got {scale}")
        require(groups >= 1 and channels % groups == 0,
                f"channels {channels} must divide into groups {groups}")
        co = 2 * groups * scale * scale
        if rng is None:
            off_w = np.zeros((co, channels, 1, 1), dtype=dtype)
            off_b = np.zeros(co, dtype=dtype)
        else:
            off_w = rng.normal((co, channels, 1, 1), scale=0.02).astype(dtype)
            off_b = rng.normal((co,), scale=0.02).astype(dtype)
        return DysampleParams(scale=scale, groups=groups, scope=float(scope),
                              offset_w=off_w, offset_b=off_b)


def dysample_base_grid(h: int, w: int, scale: int, groups: int,
                       dtype=np.float64) -> np.ndarray:
    """Bilinear-initialized base grid: output (i, j) maps to source
    ((i+0.5)/s - 0.5, (j+0.5)/s - 0.5), shape (1, groups, s*h, s*w, 2)."""
    rows = (np.arange(scale * h, dtype=dtype) + 0.5) / scale - 0.5
    cols = (np.arange(scale * w, dtype=dtype) + 0.5) / scale - 0.5
    rr = np.broadcast_to(rows[:, None], (scale * h, scale * w))
    cc = np.broadcast_to(cols[None, :], (scale * h, scale * w))
    grid = np.stack([rr, cc], axis=-1)
    return np.broadcast_to(grid, (1, groups) + grid.shape).copy()


def dysample_offsets(x, p: DysampleParams):
    """Raw offset-head output at input resolution, (N, 2*g*s^2, H, W)."""
    xv = ad.as_var(x)
    require(xv.value.shape[1] == p.channels,
            f"input has {xv.value.shape[1]} channels, params expect "
            f"{p.channels}")
    out = ad.conv2d(xv, p.offset_w, p.offset_b)
    return Tensor(out.value, copy=False) if isinstance(x, Tensor) else out


def dysample_grid_from_offsets(offsets, h: int, w: int,
                               p: DysampleParams):
    """Base grid plus scope-scaled offsets, as a (N, g, s*h, s*w, 2) value.

    Offset channels are laid out ((group*2 + axis)*s + si)*s + sj, i.e.
    one (row, col) pair per group and per sub-cell position; the pixel
    rearrangement places pair (si, sj) at output (i*s + si, j*s + sj).
    """
    ov = ad.as_var(offsets)
    n = ov.value.shape[0]
    s, g = p.scale, p.groups
    require(ov.value.shape[1] == 2 * g * s * s,
            f"offset head produced {ov.value.shape[1]} channels, expected "
            f"{2 * g * s * s}")
    shaped = ad.reshape(ov, (n, g, 2, s, s, h, w))
    shuffled = ad.transpose(shaped, (0, 1, 2, 5, 3, 6, 4))
    maps = ad.reshape(shuffled, (n, g, 2, s * h, s * w))
    d_r, d_c = ad.split(maps, [1, 1], axis=2)
    d_r = ad.reshape(d_r, (n, g, s * h, s * w))
    d_c = ad.reshape(d_c, (n, g, s * h, s * w))
    base = dysample_base_grid(h, w, s, g, dtype=ov.value.dtype)
    rows = ad.add(ad.scale(d_r, p.scope), base[..., 0])
    cols = ad.add(ad.scale(d_c, p.scope), base[..., 1])
    return ad.stack_last(rows, cols)


def dysample_grid(x: Tensor, p: DysampleParams) -> SamplingGrid:
    """Typed sampling grid the upsampler would use for `x`."""
    offs = dysample_offsets(x, p)
    grid = dysample_grid_from_offsets(offs.data, x.shape[2], x.shape[3], p)
    return SamplingGrid(grid.value, copy=False)


def dysample_forward(x, p: DysampleParams):
    """Content-aware point-sampling upsampler, (N, C, H, W) -> (N, C, sH, sW)."""
    xv = ad.as_var(x)
    h, w = xv.value.shape[2], xv.value.shape[3]
    offs = dysample_offsets(xv, p)
    grid = dysample_grid_from_offsets(offs, h, w, p)
    out = ad.bilinear_sample(xv, grid)
    return Tensor(out.value, copy=False) if isinstance(x, Tensor) else out


# ---------------------------------------------------------------------------
# pyramid composition
# ---------------------------------------------------------------------------

@dataclass
class Ca2neckParams:
    channels: tuple                      # (C0, C1, C2), shallow to deep
    dys_td1: DysampleParams = None       # upsample level 2 -> level 1 size
    merge_td1_w: np.ndarray = None       # (C1, C2+C1, 1, 1)
    merge_td1_b: np.ndarray = None
    fuse_td1: MsgrbParams = None
    dys_td0: DysampleParams = None       # upsample level 1 -> level 0 size
    merge_td0_w: np.ndarray = None       # (C0, C1+C0, 1, 1)
    merge_td0_b: np.ndarray = None
    fuse_td0: MsgrbParams = None
    ld_bu1: LdconvParams = None          # downsample level 0 -> level 1 size
    merge_bu1_w: np.ndarray = None       # (C1, C1+C1, 1, 1)
    merge_bu1_b: np.ndarray = None
    fuse_bu1: MsgrbParams = None
    ld_bu2: LdconvParams = None          # downsample level 1 -> level 2 size
    merge_bu2_w: np.ndarray = None       # (C2, C2+C2, 1, 1)
    merge_bu2_b: np.ndarray = None
    fuse_bu2: MsgrbParams = None

    @staticmethod
    def init(channels, n_points: int = 5, scale: int = 2,
             scope: float = DEFAULT_SCOPE, rng: Stream = None,
             dtype=np.float64) -> "Ca2neckParams":
        """Build a parameter set.

        With a stream, merge convs and refinement blocks are generic
        random values; without one, everything learnable is zero (the
        sampling stages reduce to fixed-grid resizes and a zero merge
        silences each level, which tests override with explicit mixes)."""
        c0, c1, c2 = channels

        def merge(cin, cout):
            if rng is None:
                return (np.zeros((cout, cin, 1, 1), dtype=dtype),
                        np.zeros(cout, dtype=dtype))
            return (rng.normal((cout, cin, 1, 1),
                               scale=1.0 / np.sqrt(cin)).astype(dtype),
                    rng.normal((cout,), scale=0.1).astype(dtype))

        def fuse(c):
            return (MsgrbParams.identity(c, dtype=dtype) if rng is None
                    else MsgrbParams.random(c, rng, dtype=dtype))

        m1w, m1b = merge(c2 + c1, c1)
        m0w, m0b = merge(c1 + c0, c0)
        b1w, b1b = merge(c1 + c1, c1)
        b2w, b2b = merge(c2 + c2, c2)
        return Ca2neckParams(
            channels=(c0, c1, c2),
            dys_td1=DysampleParams.init(c2, scale=scale, scope=scope,
                                        rng=rng, dtype=dtype),
            merge_td1_w=m1w, merge_td1_b=m1b, fuse_td1=fuse(c1),
            dys_td0=DysampleParams.init(c1, scale=scale, scope=scope,
                                        rng=rng, dtype=dtype),
            merge_td0_w=m0w, merge_td0_b=m0b, fuse_td0=fuse(c0),
            ld_bu1=LdconvParams.init(c0, c1, n_points=n_points, stride=2,
                                     rng=rng, dtype=dtype),
            merge_bu1_w=b1w, merge_bu1_b=b1b, fuse_bu1=fuse(c1),
            ld_bu2=LdconvParams.init(c1, c2, n_points=n_points, stride=2,
                                     rng=rng, dtype=dtype),
            merge_bu2_w=b2w, merge_bu2_b=b2b, fuse_bu2=fuse(c2),
        )


def ca2neck_forward(features, p: Ca2neckParams):
    """Refine a 3-level pyramid (shallow to deep, sizes halving by level)."""
    require(len(features) == 3,
            f"expected 3 pyramid levels, got {len(features)}")
    was_tensor = isinstance(features[0], Tensor)
    c0, c1, c2 = [ad.as_var(f) for f in features]
    exp = p.channels
    for lvl, (f, c) in enumerate(zip((c0, c1, c2), exp)):
        require(f.value.shape[1] == c,
                f"level {lvl} has {f.value.shape[1]} channels, params "
                f"expect {c}")
    for lvl, (fine, coarse) in enumerate(((c0, c1), (c1, c2))):
        require(fine.value.shape[2] == 2 * coarse.value.shape[2]
                and fine.value.shape[3] == 2 * coarse.value.shape[3],
                f"level {lvl} must be exactly twice the size of level "
                f"{lvl + 1}")

    def merge(a, b, w, bias, fuse_params):
        mixed = ad.conv2d(ad.concat([a, b], axis=1), w, bias)
        return msgrb_forward(mixed, fuse_params)

    # top-down
    t1 = merge(dysample_forward(c2, p.dys_td1), c1,
               p.merge_td1_w, p.merge_td1_b, p.fuse_td1)
    t0 = merge(dysample_forward(t1, p.dys_td0), c0,
               p.merge_td0_w, p.merge_td0_b, p.fuse_td0)
    # bottom-up
    b1 = merge(ldconv_forward(t0, p.ld_bu1), t1,
               p.merge_bu1_w, p.merge_bu1_b, p.fuse_bu1)
    b2 = merge(ldconv_forward(b1, p.ld_bu2), c2,
               p.merge_bu2_w, p.merge_bu2_b, p.fuse_bu2)

    outs = [t0, b1, b2]
    if was_tensor:
        return [Tensor(o.value, copy=False) for o in outs]
    return outs
