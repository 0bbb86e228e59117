"""Spectral encoder and closed-form trajectory decoder.

The model maps the truncated graph-spectral coefficients of a scenario to
three latent quantities: a longitudinal acceleration and the amplitude and
rate of a logistic lateral profile. Decoding is an explicit formula rather
than a learned layer, so predictions are smooth by construction and the
whole network stays small.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np
from scipy.special import erf, expit

from .graph import (apply_inverse_distance_weights, build_line_graph,
                    build_mesh_graph, build_spider_graph, laplacian)
from .spectral import (ProductBasis, Spectrum, eigendecompose, gft_extended,
                       truncate_spectrum)

OUT = 3
LN_EPS = 1e-5
CHECKPOINT_VERSION = 1
GRAPH_KINDS = ("spider", "mesh")
PRESETS = ("gftnn", "gftnn-w", "gftnn-rdcby5", "gftnn-rdcby15")

_SQRT1_2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class ModelConfig:
    k: int                      # feature channels fed to the encoder (2 or 4)
    t_obs: int                  # observed steps (temporal graph size)
    t_pred: int                 # predicted steps
    n_v: int                    # vehicle slots (spatial graph size)
    p: int                      # temporal modes kept after truncation
    hidden: int = 50
    n_blocks: int = 1
    graph_kind: str = "spider"
    weighted: bool = False
    fps: float = 25.0

    def __post_init__(self):
        if self.k not in (2, 4):
            raise ValueError(f"k must be 2 or 4, got {self.k}")
        if self.t_obs < 2:
            raise ValueError(f"t_obs must be at least 2, got {self.t_obs}")
        if self.t_pred < 1:
            raise ValueError(f"t_pred must be at least 1, got {self.t_pred}")
        if self.n_v < 2:
            raise ValueError(f"n_v must be at least 2, got {self.n_v}")
        if not 1 <= self.p <= self.t_obs:
            raise ValueError(f"p must be in [1, {self.t_obs}], got {self.p}")
        if self.hidden < 1:
            raise ValueError(f"hidden must be positive, got {self.hidden}")
        if self.n_blocks < 1:
            raise ValueError(f"n_blocks must be positive, got {self.n_blocks}")
        if self.n_blocks > 1 and self.zk != OUT:
            raise ValueError(
                "stacked blocks reuse one weight shape, which needs "
                f"p * n_v == {OUT}; got {self.zk}"
            )
        if self.graph_kind not in GRAPH_KINDS:
            raise ValueError(f"graph_kind must be one of {GRAPH_KINDS}")
        if self.weighted and self.graph_kind != "spider":
            raise ValueError("inverse-distance weighting needs a spider graph")
        if self.fps <= 0:
            raise ValueError(f"fps must be positive, got {self.fps}")

    @property
    def zk(self) -> int:
        """Spectral coefficients per feature channel."""
        return self.p * self.n_v

    @property
    def z(self) -> int:
        """Total input size of the encoder."""
        return self.k * self.p * self.n_v


def preset_config(preset: str, fps, n_vehicles: int = 9, t_obs_s: float = 3.0,
                  t_pred_s: float = 5.0, hidden: int = 50) -> ModelConfig:
    """Named configurations; fps must be one of the supported camera rates."""
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}, expected one of {PRESETS}")
    if fps not in (10, 25):
        raise ValueError(f"preset {preset!r} expects fps 10 or 25, got {fps}")
    t_obs = round(fps * t_obs_s)
    t_pred = round(fps * t_pred_s)
    k = 4
    weighted = False
    p = t_obs
    if preset == "gftnn-w":
        k = 2
        weighted = True
    elif preset == "gftnn-rdcby5":
        p = max(1, t_obs // 5)
    elif preset == "gftnn-rdcby15":
        p = max(1, t_obs // 15)
    return ModelConfig(k=k, t_obs=t_obs, t_pred=t_pred, n_v=n_vehicles, p=p,
                       hidden=hidden, weighted=weighted, fps=float(fps))


class ModelParams:
    """Named float64 parameter arrays in a fixed iteration order."""

    def __init__(self, w_s, w_n, b_n, w_l, b_l, w_h, b_h):
        self.w_s = np.asarray(w_s, dtype=np.float64)
        self.w_n = [np.asarray(a, dtype=np.float64) for a in w_n]
        self.b_n = [np.asarray(a, dtype=np.float64) for a in b_n]
        self.w_l = [np.asarray(a, dtype=np.float64) for a in w_l]
        self.b_l = [np.asarray(a, dtype=np.float64) for a in b_l]
        self.w_h = np.asarray(w_h, dtype=np.float64)
        self.b_h = np.asarray(b_h, dtype=np.float64)

    def items(self):
        yield "w_s", self.w_s
        for k in range(len(self.w_n)):
            yield f"w_n_{k}", self.w_n[k]
            yield f"b_n_{k}", self.b_n[k]
            yield f"w_l_{k}", self.w_l[k]
            yield f"b_l_{k}", self.b_l[k]
        yield "w_h", self.w_h
        yield "b_h", self.b_h

    @property
    def n_params(self) -> int:
        return sum(arr.size for _, arr in self.items())

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.w_s.copy(),
            [a.copy() for a in self.w_n], [a.copy() for a in self.b_n],
            [a.copy() for a in self.w_l], [a.copy() for a in self.b_l],
            self.w_h.copy(), self.b_h.copy(),
        )

    @classmethod
    def from_named(cls, named: dict, k: int) -> "ModelParams":
        return cls(
            named["w_s"],
            [named[f"w_n_{i}"] for i in range(k)],
            [named[f"b_n_{i}"] for i in range(k)],
            [named[f"w_l_{i}"] for i in range(k)],
            [named[f"b_l_{i}"] for i in range(k)],
            named["w_h"], named["b_h"],
        )


def param_shapes(config: ModelConfig) -> dict:
    shapes = {"w_s": (config.z,)}
    for k in range(config.k):
        shapes[f"w_n_{k}"] = (config.hidden, config.zk)
        shapes[f"b_n_{k}"] = (config.hidden,)
        shapes[f"w_l_{k}"] = (OUT, config.hidden)
        shapes[f"b_l_{k}"] = (OUT,)
    shapes["w_h"] = (OUT, OUT * config.k)
    shapes["b_h"] = (OUT,)
    return shapes


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Uniform fan-in initialisation; gate weights start at 1, biases at 0."""
    rng = np.random.default_rng(seed)

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    w_n, b_n, w_l, b_l = [], [], [], []
    for _ in range(config.k):
        w_n.append(uniform((config.hidden, config.zk), config.zk))
        b_n.append(np.zeros(config.hidden))
        w_l.append(uniform((OUT, config.hidden), config.hidden))
        b_l.append(np.zeros(OUT))
    w_h = uniform((OUT, OUT * config.k), OUT * config.k)
    return ModelParams(np.ones(config.z), w_n, b_n, w_l, b_l, w_h, np.zeros(OUT))


def gelu(x):
    """Exact Gaussian error linear unit, x * Phi(x)."""
    x = np.asarray(x, dtype=np.float64)
    return x * 0.5 * (1.0 + erf(x * _SQRT1_2))


def gelu_grad(x):
    """d/dx of exact GELU: Phi(x) + x * phi(x)."""
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * (1.0 + erf(x * _SQRT1_2)) + x * np.exp(-0.5 * x * x) * _INV_SQRT_2PI


def layer_norm(v):
    """Zero-mean unit-variance normalisation without learned scale/shift."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size < 2:
        raise ValueError("layer norm needs a 1-d vector of length >= 2")
    return (v - v.mean()) / np.sqrt(v.var() + LN_EPS)


def spectral_gate(s, w_s):
    """Elementwise learned gate on the spectral coefficients."""
    s = np.asarray(s, dtype=np.float64)
    w_s = np.asarray(w_s, dtype=np.float64)
    if s.shape != w_s.shape:
        raise ValueError(f"gate shape {w_s.shape} does not match input {s.shape}")
    return s * w_s


def mlp_block(h, w_n, b_n, w_l, b_l, n_blocks: int = 1):
    """Per-channel block: layer norm, linear, GELU, linear down to 3."""
    out = np.asarray(h, dtype=np.float64)
    for _ in range(n_blocks):
        out = w_l @ gelu(w_n @ layer_norm(out) + b_n) + b_l
    return out


def encode(s, params: ModelParams, config: ModelConfig) -> np.ndarray:
    """Map a truncated spectrum of length config.z to the latent triple."""
    s = np.asarray(s, dtype=np.float64)
    if s.shape != (config.z,):
        raise ValueError(f"spectrum shape {s.shape} does not match z={config.z}")
    h_s = spectral_gate(s, params.w_s)
    parts = []
    for k in range(config.k):
        h_k = h_s[k * config.zk:(k + 1) * config.zk]
        parts.append(mlp_block(h_k, params.w_n[k], params.b_n[k],
                               params.w_l[k], params.b_l[k], config.n_blocks))
    h_c = np.concatenate(parts)
    return params.w_h @ expit(h_c) + params.b_h


@dataclass(frozen=True)
class Trajectory:
    """Planar trajectory sampled at step 0 .. T_pred, relative to step 0."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        if x.ndim != 1 or x.shape != y.shape or x.size < 2:
            raise ValueError(f"bad trajectory shapes {x.shape}, {y.shape}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("trajectory must be finite")
        x = np.ascontiguousarray(x)
        y = np.ascontiguousarray(y)
        x.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return self.x.size


def decode(h_z, v0: float, t_pred: int, fps) -> Trajectory:
    """Roll the latent triple out into a trajectory.

    Longitudinal: constant acceleration h_z[0] on top of the observed speed
    v0. Lateral: logistic profile with amplitude h_z[1] and rate h_z[2],
    centred on the horizon midpoint and shifted so y(0) = 0. Both
    components are exactly zero at step 0.
    """
    h = np.asarray(h_z, dtype=np.float64)
    if h.shape != (OUT,):
        raise ValueError(f"latent state must have shape ({OUT},), got {h.shape}")
    t = np.arange(t_pred + 1) / fps
    tau = t - 0.5 * (t_pred / fps)
    x = v0 * t + 0.5 * h[0] * t * t
    g = expit(-h[2] * tau)
    y = h[1] * (g - g[0])
    return Trajectory(x=x, y=y)


def decode_partials(h_z, t_pred: int, fps):
    """Analytic derivatives of the decoded trajectory w.r.t. the latents.

    Returns (dx/dh1, dy/dh2, dy/dh3), each sampled at step 0 .. T_pred.
    Accepts a single latent triple or a batch (B, 3).
    """
    h = np.asarray(h_z, dtype=np.float64)
    single = h.ndim == 1
    h = np.atleast_2d(h)
    if h.shape[1] != OUT:
        raise ValueError(f"latent state must have {OUT} entries, got {h.shape}")
    t = np.arange(t_pred + 1) / fps
    tau = t - 0.5 * (t_pred / fps)
    g = expit(-h[:, 2:3] * tau)
    g0 = g[:, :1]
    dx_dh1 = np.broadcast_to(0.5 * t * t, g.shape).copy()
    dy_dh2 = g - g0
    dy_dh3 = h[:, 1:2] * (-tau * g * (1.0 - g) + tau[0] * g0 * (1.0 - g0))
    if single:
        return dx_dh1[0], dy_dh2[0], dy_dh3[0]
    return dx_dh1, dy_dh2, dy_dh3


def truth_trajectory(scenario) -> Trajectory:
    """The recorded future as a trajectory anchored at (0, 0)."""
    return Trajectory(
        x=np.concatenate([[0.0], scenario.future[:, 0]]),
        y=np.concatenate([[0.0], scenario.future[:, 1]]),
    )


def build_basis(config: ModelConfig) -> ProductBasis:
    """Reference eigenbases: unit-weight temporal line and spatial graph."""
    temporal = eigendecompose(laplacian(build_line_graph(config.t_obs)))
    if config.graph_kind == "spider":
        spatial_graph = build_spider_graph(config.n_v, hub_index=0)
    else:
        spatial_graph = build_mesh_graph(config.n_v)
    return ProductBasis(temporal, eigendecompose(laplacian(spatial_graph)))


def select_channels(features, k: int):
    """Pick the encoder's channels: all four, or the two velocities."""
    if k == 4:
        return features
    if k == 2:
        return features[2:4]
    raise ValueError(f"k must be 2 or 4, got {k}")


def scenario_basis(scenario, basis: ProductBasis, config: ModelConfig) -> ProductBasis:
    """Per-scenario basis; with weighting enabled, the spatial factor is
    rebuilt from inverse hub distances at the last observed step."""
    if not config.weighted:
        return basis
    t0 = scenario.features.shape[1] - 1
    positions = np.stack([scenario.features[0, t0, :],
                          scenario.features[1, t0, :]], axis=1)
    g = build_spider_graph(config.n_v, hub_index=0)
    g = apply_inverse_distance_weights(g, positions, hub_index=0)
    return ProductBasis(basis.temporal, eigendecompose(laplacian(g)))


def scenario_spectrum(scenario, basis: ProductBasis, config: ModelConfig) -> np.ndarray:
    """Truncated spectral coefficients of one scenario, flattened to (z,)."""
    if scenario.t_obs != config.t_obs or scenario.n_vehicles != config.n_v:
        raise ValueError(
            f"scenario grid ({scenario.t_obs}, {scenario.n_vehicles}) does not "
            f"match config ({config.t_obs}, {config.n_v})"
        )
    feats = select_channels(scenario.features, config.k)
    fhat = gft_extended(feats, scenario_basis(scenario, basis, config))
    return truncate_spectrum(fhat, config.p)


def predict(scenario, basis: ProductBasis, params: ModelParams,
            config: ModelConfig) -> Trajectory:
    """Full inference path for one scenario."""
    if scenario.fps != config.fps:
        raise ValueError(
            f"scenario fps {scenario.fps} does not match model fps {config.fps}"
        )
    if scenario.t_pred != config.t_pred:
        raise ValueError(
            f"scenario horizon {scenario.t_pred} does not match config "
            f"{config.t_pred}"
        )
    s = scenario_spectrum(scenario, basis, config)
    h_z = encode(s, params, config)
    return decode(h_z, scenario.v0, config.t_pred, config.fps)


def _spectrum_doc(spec: Spectrum) -> dict:
    return {
        "source_graph_id": spec.source_graph_id,
        "eigenvalues": [repr(float(v)) for v in spec.eigenvalues],
        "eigenvectors": [repr(float(v)) for v in spec.eigenvectors.ravel()],
    }


def _spectrum_from_doc(doc: dict, n: int) -> Spectrum:
    w = np.array([float(s) for s in doc["eigenvalues"]])
    v = np.array([float(s) for s in doc["eigenvectors"]]).reshape(n, n)
    return Spectrum(w, v, doc.get("source_graph_id", ""))


@dataclass(frozen=True)
class Checkpoint:
    config: ModelConfig
    basis: ProductBasis
    params: ModelParams
    epochs_trained: int
    optimizer: dict | None


def save_checkpoint(path, config: ModelConfig, basis: ProductBasis,
                    params: ModelParams, epochs_trained: int = 0,
                    optimizer: dict | None = None):
    """Serialise model state to JSON.

    Floats are written as repr() strings so values survive the round trip
    bit for bit. The stored basis is the unweighted reference basis;
    distance-weighted spatial bases are always derived per scenario.
    """
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(config),
        "param_count": params.n_params,
        "epochs_trained": int(epochs_trained),
        "basis": {
            "temporal": _spectrum_doc(basis.temporal),
            "spatial": _spectrum_doc(basis.spatial),
        },
        "params": {name: [repr(float(v)) for v in arr.ravel()]
                   for name, arr in params.items()},
    }
    if optimizer is not None:
        doc["optimizer"] = {
            "step": int(optimizer["step"]),
            "m": {name: [repr(float(v)) for v in arr.ravel()]
                  for name, arr in optimizer["m"].items()},
            "v": {name: [repr(float(v)) for v in arr.ravel()]
                  for name, arr in optimizer["v"].items()},
        }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path) -> Checkpoint:
    with open(path) as fh:
        doc = json.load(fh)
    version = doc.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version!r}")
    cfg = ModelConfig(**doc["config"])
    shapes = param_shapes(cfg)
    named = {}
    for name, shape in shapes.items():
        flat = doc["params"].get(name)
        if flat is None:
            raise ValueError(f"{path}: checkpoint is missing parameter {name}")
        arr = np.array([float(s) for s in flat])
        if arr.size != int(np.prod(shape)):
            raise ValueError(f"{path}: parameter {name} has wrong size")
        named[name] = arr.reshape(shape)
    params = ModelParams.from_named(named, cfg.k)
    basis = ProductBasis(
        temporal=_spectrum_from_doc(doc["basis"]["temporal"], cfg.t_obs),
        spatial=_spectrum_from_doc(doc["basis"]["spatial"], cfg.n_v),
    )
    optimizer = None
    if "optimizer" in doc:
        opt = doc["optimizer"]
        optimizer = {
            "step": int(opt["step"]),
            "m": {name: np.array([float(s) for s in opt["m"][name]]).reshape(shapes[name])
                  for name in shapes},
            "v": {name: np.array([float(s) for s in opt["v"][name]]).reshape(shapes[name])
                  for name in shapes},
        }
    return Checkpoint(config=cfg, basis=basis, params=params,
                      epochs_trained=int(doc.get("epochs_trained", 0)),
                      optimizer=optimizer)
