"""Graph config files: a line-oriented chain description for the CLI.

Grammar (documented in the README):

    # full-line or trailing comments start with '#'
    [chain]                  # optional global section, must come first
    seed = 42                # default seed (overridable with --seed)
    dtype = f64              # f32 | f64, default f64

    [<module>]               # one section per chain stage, in order
    key = value

Module kinds and their keys (defaults in parentheses):

    msgrb     channels, height (8), width (8), batch (1), hidden (channels),
              params
    fddem     channels, height, width, batch (1), branches (3),
              reduction (4), params
    ldconv    in_channels, out_channels, points (5), stride (2),
              height (8), width (8), batch (1), params
    dysample  channels, scale (2), groups (1), scope (0.25), height (8),
              width (8), batch (1), params
    fft2      channels (1), height (64), width (64), batch (1),
              path (fast)            # fast | naive round-trip diagnostic
    ca2neck   channels (three comma-separated counts, shallow to deep),
              height (8), width (8), batch (1), points (5), scope (0.25),
              params

`params` is one of `zeros` (the declared identity initialization),
`random` (seeded from the run seed and the module's position), or
`file:PATH` (a SEPP parameter file).  A `ca2neck` stage consumes a
3-level pyramid and must be the only stage in its chain.

Declared sizes are used to synthesize inputs for `gradcheck` and `bench`
and to check that adjacent stages are shape-compatible before anything
runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import ca2neck as neck
from . import fddem as fd
from . import msgrb as ms
from . import spectral
from .errors import ConfigError
from .io import read_params
from .rng import Stream, derive_seed
from .tensor import DTYPES, Tensor

_MODULE_KINDS = ("msgrb", "fddem", "ldconv", "dysample", "fft2", "ca2neck")

_ALLOWED_KEYS = {
    "chain": {"seed", "dtype"},
    "msgrb": {"channels", "height", "width", "batch", "hidden", "params"},
    "fddem": {"channels", "height", "width", "batch", "branches",
              "reduction", "params"},
    "ldconv": {"in_channels", "out_channels", "points", "stride", "height",
               "width", "batch", "params"},
    "dysample": {"channels", "scale", "groups", "scope", "height", "width",
                 "batch", "params"},
    "fft2": {"channels", "height", "width", "batch", "path"},
    "ca2neck": {"channels", "height", "width", "batch", "points", "scope",
                "params"},
}


@dataclass
class ModuleSpec:
    kind: str
    options: dict
    lineno: int


@dataclass
class GraphConfig:
    seed: int
    dtype: str
    modules: list


def parse_config(path: str) -> GraphConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")

    seed = 0
    dtype = "f64"
    modules: list[ModuleSpec] = []
    section = None
    seen_chain = False
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if name == "chain":
                if seen_chain or modules:
                    raise ConfigError(
                        f"line {lineno}: [chain] must appear once, first")
                seen_chain = True
                section = ModuleSpec("chain", {}, lineno)
            elif name in _MODULE_KINDS:
                section = ModuleSpec(name, {}, lineno)
                modules.append(section)
            else:
                raise ConfigError(f"line {lineno}: unknown section [{name}]")
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        if section is None:
            raise ConfigError(f"line {lineno}: key outside any section")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _ALLOWED_KEYS[section.kind]:
            raise ConfigError(
                f"line {lineno}: unknown key {key!r} in [{section.kind}]")
        if key in section.options:
            raise ConfigError(
                f"line {lineno}: duplicate key {key!r} in [{section.kind}]")
        section.options[key] = value
        if section.kind == "chain":
            if key == "seed":
                seed = _parse_int(value, "seed", lineno)
            else:
                if value not in DTYPES:
                    raise ConfigError(
                        f"line {lineno}: dtype must be f32 or f64")
                dtype = value

    if not modules:
        raise ConfigError("config declares no modules")
    if any(m.kind == "ca2neck" for m in modules) and len(modules) > 1:
        raise ConfigError("a ca2neck stage must be the only stage in a chain")
    return GraphConfig(seed=seed, dtype=dtype, modules=modules)


def _parse_int(value: str, key: str, ctx) -> int:
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{ctx}: {key} must be an integer, got {value!r}")


def _opt_int(spec: ModuleSpec, key: str, default=None) -> int:
    if key not in spec.options:
        if default is None:
            raise ConfigError(
                f"line {spec.lineno}: [{spec.kind}] requires key {key!r}")
        return default
    return _parse_int(spec.options[key], key, f"line {spec.lineno}")


def _opt_float(spec: ModuleSpec, key: str, default: float) -> float:
    if key not in spec.options:
        return default
    try:
        return float(spec.options[key])
    except ValueError:
        raise ConfigError(
            f"line {spec.lineno}: {key} must be a number, got "
            f"{spec.options[key]!r}")


class ChainModule:
    """One built chain stage: parameters plus a polymorphic forward."""

    def __init__(self, name, kind, params, forward, in_shape, out_shape,
                 seed, source):
        self.name = name
        self.kind = kind
        self.params = params
        self.forward = forward
        self.in_shape = in_shape
        self.out_shape = out_shape
        self.seed = seed
        self.source = source


def _param_source(spec: ModuleSpec) -> str:
    src = spec.options.get("params", "zeros")
    if src in ("zeros", "random") or src.startswith("file:"):
        return src
    raise ConfigError(
        f"line {spec.lineno}: params must be zeros, random, or file:PATH, "
        f"got {src!r}")


def _materialize(source: str, identity_fn, random_fn, store_template_fn):
    if source == "zeros":
        return identity_fn()
    if source == "random":
        return random_fn()
    path = source[len("file:"):]
    store = read_params(path)
    return store.to_params(store_template_fn())


def build_module(spec: ModuleSpec, index: int, cfg: GraphConfig,
                 seed: int) -> ChainModule:
    dtype = DTYPES[cfg.dtype]
    batch = _opt_int(spec, "batch", 1)
    mod_seed = derive_seed(seed, index)
    source = "n/a" if spec.kind == "fft2" else _param_source(spec)
    rng = Stream(mod_seed)
    name = f"{spec.kind}{index}"

    if spec.kind == "msgrb":
        channels = _opt_int(spec, "channels")
        h, w = _opt_int(spec, "height", 8), _opt_int(spec, "width", 8)
        hidden = _opt_int(spec, "hidden", channels)
        params = _materialize(
            source,
            lambda: ms.MsgrbParams.identity(channels, hidden, dtype=dtype),
            lambda: ms.MsgrbParams.random(channels, rng, hidden, dtype=dtype),
            lambda: ms.MsgrbParams.identity(channels, hidden, dtype=dtype))
        shape = (batch, channels, h, w)
        return ChainModule(name, spec.kind, params,
                           lambda x: ms.msgrb_forward(x, params),
                           shape, shape, mod_seed, source)

    if spec.kind == "fddem":
        channels = _opt_int(spec, "channels")
        h, w = _opt_int(spec, "height"), _opt_int(spec, "width")
        branches = _opt_int(spec, "branches", 3)
        reduction = _opt_int(spec, "reduction", 4)
        params = _materialize(
            source,
            lambda: fd.FddemParams.identity(channels, h, w, branches,
                                            reduction, dtype=dtype),
            lambda: fd.FddemParams.random(channels, h, w, rng, branches,
                                          reduction, dtype=dtype),
            lambda: fd.FddemParams.identity(channels, h, w, branches,
                                            reduction, dtype=dtype))
        shape = (batch, channels, h, w)
        return ChainModule(name, spec.kind, params,
                           lambda x: fd.fddem_forward(x, params),
                           shape, shape, mod_seed, source)

    if spec.kind == "ldconv":
        cin = _opt_int(spec, "in_channels")
        cout = _opt_int(spec, "out_channels")
        points = _opt_int(spec, "points", 5)
        stride = _opt_int(spec, "stride", 2)
        h, w = _opt_int(spec, "height", 8), _opt_int(spec, "width", 8)
        params = _materialize(
            source,
            lambda: neck.LdconvParams.init(cin, cout, points, stride,
                                           dtype=dtype),
            lambda: neck.LdconvParams.init(cin, cout, points, stride,
                                           rng=rng, dtype=dtype),
            lambda: neck.LdconvParams.init(cin, cout, points, stride,
                                           dtype=dtype))
        in_shape = (batch, cin, h, w)
        out_shape = (batch, cout, math.ceil(h / stride),
                     math.ceil(w / stride))
        return ChainModule(name, spec.kind, params,
                           lambda x: neck.ldconv_forward(x, params),
                           in_shape, out_shape, mod_seed, source)

    if spec.kind == "dysample":
        channels = _opt_int(spec, "channels")
        scale = _opt_int(spec, "scale", 2)
        groups = _opt_int(spec, "groups", 1)
        scope = _opt_float(spec, "scope", neck.DEFAULT_SCOPE)
        h, w = _opt_int(spec, "height", 8), _opt_int(spec, "width", 8)
        params = _materialize(
            source,
            lambda: neck.DysampleParams.init(channels, scale, groups, scope,
                                             dtype=dtype),
            lambda: neck.DysampleParams.init(channels, scale, groups, scope,
                                             rng=rng, dtype=dtype),
            lambda: neck.DysampleParams.init(channels, scale, groups, scope,
                                             dtype=dtype))
        in_shape = (batch, channels, h, w)
        out_shape = (batch, channels, scale * h, scale * w)
        return ChainModule(name, spec.kind, params,
                           lambda x: neck.dysample_forward(x, params),
                           in_shape, out_shape, mod_seed, source)

    if spec.kind == "fft2":
        channels = _opt_int(spec, "channels", 1)
        h, w = _opt_int(spec, "height", 64), _opt_int(spec, "width", 64)
        path = spec.options.get("path", "fast")
        if path not in ("fast", "naive"):
            raise ConfigError(
                f"line {spec.lineno}: path must be fast or naive")
        force_naive = path == "naive"

        def forward(x):
            if isinstance(x, Tensor):
                return spectral.ifft2(spectral.fft2(x, force_naive),
                                      force_naive=force_naive)
            sre, sim = spectral.fft2_v(x, force_naive=force_naive)
            return spectral.ifft2_real_v(sre, sim, force_naive=force_naive)

        shape = (batch, channels, h, w)
        return ChainModule(f"fft2-{path}{index}", spec.kind, None, forward,
                           shape, shape, mod_seed, source)

    if spec.kind == "ca2neck":
        raw = spec.options.get("channels")
        if raw is None:
            raise ConfigError(
                f"line {spec.lineno}: [ca2neck] requires key 'channels'")
        try:
            channels = tuple(int(v) for v in raw.split(","))
        except ValueError:
            raise ConfigError(
                f"line {spec.lineno}: channels must be three integers")
        if len(channels) != 3:
            raise ConfigError(
                f"line {spec.lineno}: ca2neck needs exactly 3 channel counts")
        points = _opt_int(spec, "points", 5)
        scope = _opt_float(spec, "scope", neck.DEFAULT_SCOPE)
        h, w = _opt_int(spec, "height", 8), _opt_int(spec, "width", 8)
        if h % 4 or w % 4:
            raise ConfigError(
                f"line {spec.lineno}: level-0 sizes must be multiples of 4")
        params = _materialize(
            source,
            lambda: neck.Ca2neckParams.init(channels, points, scope=scope,
                                            dtype=dtype),
            lambda: neck.Ca2neckParams.init(channels, points, scope=scope,
                                            rng=rng, dtype=dtype),
            lambda: neck.Ca2neckParams.init(channels, points, scope=scope,
                                            dtype=dtype))
        shapes = tuple((batch, channels[i], h >> i, w >> i) for i in range(3))
        return ChainModule(name, spec.kind, params,
                           lambda xs: neck.ca2neck_forward(xs, params),
                           shapes, shapes, mod_seed, source)

    raise ConfigError(f"unknown module kind {spec.kind!r}")


def build_chain(cfg: GraphConfig, seed: int) -> list:
    """Build every stage and verify adjacent declared shapes line up."""
    chain = [build_module(spec, i, cfg, seed)
             for i, spec in enumerate(cfg.modules)]
    for prev, cur in zip(chain, chain[1:]):
        if prev.out_shape != cur.in_shape:
            raise ConfigError(
                f"stage {prev.name} produces shape {prev.out_shape} but "
                f"stage {cur.name} expects {cur.in_shape}")
    return chain
