"""FAWN: two CSI encoders, two-token cross-attention fusion, five linear heads.

Every forward function works on one example or on a batch (leading axis);
the graph ops carry the batch axis through untouched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import numerics as nx
from .data import GRID_X, GRID_Y, SHAPE_5G, SHAPE_WIFI, CsiSample, SceneLabel
from .numerics import Graph, Rng, ShapeError, Var

EMBED_DIM = 128
HEAD_SIZES = {"presence": 2, "px": GRID_X, "py": GRID_Y, "rx": GRID_X, "ry": GRID_Y}

FawnParams = dict[str, np.ndarray]


@dataclass(frozen=True)
class EncoderConfig:
    input_shape: tuple[int, int, int]
    pool1: tuple[int, int]
    pool2: tuple[int, int]
    conv1_filters: int = 16
    conv2_filters: int = 32
    dim: int = EMBED_DIM

    def stage_shapes(self) -> list[tuple[int, ...]]:
        """Shapes after conv1, pool1, conv2, pool2, flatten and fc."""
        _, h, w = self.input_shape
        h1, w1 = h // self.pool1[0], w // self.pool1[1]
        h2, w2 = h1 // self.pool2[0], w1 // self.pool2[1]
        return [
            (self.conv1_filters, h, w),
            (self.conv1_filters, h1, w1),
            (self.conv2_filters, h1, w1),
            (self.conv2_filters, h2, w2),
            (self.conv2_filters * h2 * w2,),
            (self.dim,),
        ]

    @property
    def flatten_len(self) -> int:
        n = self.stage_shapes()[4][0]
        if n <= 0:
            raise ShapeError(f"encoder for {self.input_shape} pools down to nothing")
        return n


ENC_5G = EncoderConfig(SHAPE_5G, pool1=(2, 2), pool2=(2, 2))
ENC_WIFI = EncoderConfig(SHAPE_WIFI, pool1=(2, 1), pool2=(2, 1))
ENCODERS = {"enc5g": ENC_5G, "encwifi": ENC_WIFI}


def param_specs() -> list[tuple[str, tuple[int, ...], int]]:
    """``(name, shape, fan_in)`` in the canonical order used for init and files."""
    specs = []
    for prefix, cfg in ENCODERS.items():
        c_in = cfg.input_shape[0]
        specs += [
            (f"{prefix}.conv1.w", (cfg.conv1_filters, c_in, 3, 3), c_in * 9),
            (f"{prefix}.conv1.b", (cfg.conv1_filters,), c_in * 9),
            (f"{prefix}.conv2.w", (cfg.conv2_filters, cfg.conv1_filters, 3, 3), cfg.conv1_filters * 9),
            (f"{prefix}.conv2.b", (cfg.conv2_filters,), cfg.conv1_filters * 9),
            (f"{prefix}.fc.w", (cfg.dim, cfg.flatten_len), cfg.flatten_len),
            (f"{prefix}.fc.b", (cfg.dim,), cfg.flatten_len),
        ]
    for name in ("Wq", "Wk", "Wv"):
        specs.append((f"fusion.{name}", (EMBED_DIM, EMBED_DIM), EMBED_DIM))
    for head, size in HEAD_SIZES.items():
        specs += [
            (f"heads.{head}.w", (size, 2 * EMBED_DIM), 2 * EMBED_DIM),
            (f"heads.{head}.b", (size,), 2 * EMBED_DIM),
        ]
    return specs


def init_params(rng: Rng) -> FawnParams:
    """Weights uniform on +-1/sqrt(fan_in), drawn in ``param_specs`` order; biases zero."""
    params = {}
    for name, shape, fan_in in param_specs():
        if name.endswith(".b"):
            params[name] = np.zeros(shape)
            continue
        bound = 1.0 / math.sqrt(fan_in)
        u = rng.uniform_array(int(np.prod(shape)))
        params[name] = (bound * (2.0 * u - 1.0)).reshape(shape)
    return params


def bind(graph: Graph, params: FawnParams) -> dict[str, Var]:
    return {name: graph.leaf(value, op="param") for name, value in params.items()}


# --- forward ----------------------------------------------------------------


def encoder_forward(x: Var, cfg: EncoderConfig, pv: dict[str, Var], prefix: str) -> Var:
    batched = x.value.ndim == 4
    if x.shape[-3:] != cfg.input_shape:
        raise ShapeError(f"{prefix}: input {x.shape} does not match {cfg.input_shape}")
    h = nx.relu(nx.conv2d(x, pv[f"{prefix}.conv1.w"], pv[f"{prefix}.conv1.b"]))
    h = nx.maxpool2d(h, cfg.pool1)
    h = nx.relu(nx.conv2d(h, pv[f"{prefix}.conv2.w"], pv[f"{prefix}.conv2.b"]))
    h = nx.maxpool2d(h, cfg.pool2)
    return nx.linear(nx.flatten(h, batched), pv[f"{prefix}.fc.w"], pv[f"{prefix}.fc.b"])


def fuse_attention(e5g: Var, ewifi: Var, wq: Var, wk: Var, wv: Var) -> tuple[Var, Var]:
    """Single-head attention between the two technology tokens.

    Returns the fused vector ``flatten(X + softmax(QK^T/sqrt(D)) V)`` of length
    2D and the 2x2 attention matrix.
    """
    if e5g.shape != ewifi.shape:
        raise ShapeError(f"embeddings differ in shape: {e5g.shape} vs {ewifi.shape}")
    d = e5g.shape[-1]
    x = nx.stack([e5g, ewifi], axis=-2)  # (..., 2, D)
    q = nx.linear(x, wq)
    k = nx.linear(x, wk)
    v = nx.linear(x, wv)
    attn = nx.softmax(nx.scale(nx.matmul(q, nx.swap_last(k)), 1.0 / math.sqrt(d)))
    updated = nx.add(x, nx.matmul(attn, v))
    fused = nx.reshape(updated, x.shape[:-2] + (2 * d,))
    return fused, attn


class HeadLogits(NamedTuple):
    presence: Var
    px: Var
    py: Var
    rx: Var
    ry: Var


def decoder_forward(fused: Var, pv: dict[str, Var]) -> HeadLogits:
    if fused.shape[-1] != 2 * EMBED_DIM:
        raise ShapeError(f"decoder expects {2 * EMBED_DIM} features, got {fused.shape}")
    return HeadLogits(*(nx.linear(fused, pv[f"heads.{h}.w"], pv[f"heads.{h}.b"]) for h in HEAD_SIZES))


class ForwardPass(NamedTuple):
    heads: HeadLogits
    attention: Var
    e5g: Var
    ewifi: Var


def forward(graph: Graph, pv: dict[str, Var], x5g, xwifi) -> ForwardPass:
    x5g = nx.as_var(graph, x5g)
    xwifi = nx.as_var(graph, xwifi)
    e5g = encoder_forward(x5g, ENC_5G, pv, "enc5g")
    ewifi = encoder_forward(xwifi, ENC_WIFI, pv, "encwifi")
    fused, attn = fuse_attention(e5g, ewifi, pv["fusion.Wq"], pv["fusion.Wk"], pv["fusion.Wv"])
    return ForwardPass(decoder_forward(fused, pv), attn, e5g, ewifi)


# --- decisions ----------------------------------------------------------------


@dataclass(frozen=True)
class SceneEstimate:
    presence: np.ndarray
    px: np.ndarray
    py: np.ndarray
    rx: np.ndarray
    ry: np.ndarray

    @property
    def person_present(self) -> bool:
        return bool(nx.sigmoid_array(self.presence[0]) > 0.5)

    @property
    def robot_present(self) -> bool:
        return bool(nx.sigmoid_array(self.presence[1]) > 0.5)

    @property
    def person_cell(self) -> tuple[int, int]:
        return int(np.argmax(self.px)), int(np.argmax(self.py))

    @property
    def robot_cell(self) -> tuple[int, int]:
        return int(np.argmax(self.rx)), int(np.argmax(self.ry))

    def to_label(self) -> SceneLabel:
        return SceneLabel(
            self.person_cell if self.person_present else None,
            self.robot_cell if self.robot_present else None,
        )


def estimates_from(heads: HeadLogits) -> list[SceneEstimate]:
    vals = [h.value for h in heads]
    if vals[0].ndim == 1:
        return [SceneEstimate(*(v.copy() for v in vals))]
    return [SceneEstimate(*(v[i].copy() for v in vals)) for i in range(vals[0].shape[0])]


def fawn_forward(sample: CsiSample, params: FawnParams) -> SceneEstimate:
    g = Graph()
    return estimates_from(forward(g, bind(g, params), sample.x5g, sample.xwifi).heads)[0]


def predict(
    params: FawnParams,
    samples: Sequence[CsiSample],
    batch_size: int = 64,
    zero_wifi: bool = False,
) -> list[SceneEstimate]:
    """Batched inference. ``zero_wifi`` blanks the Wi-Fi input (5G-only ablation)."""
    out = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        x5g = np.stack([s.x5g for s in chunk])
        xwifi = np.stack([s.xwifi for s in chunk])
        if zero_wifi:
            xwifi = np.zeros_like(xwifi)
        g = Graph()
        out += estimates_from(forward(g, bind(g, params), x5g, xwifi).heads)
    return out


# --- loss ---------------------------------------------------------------------


def label_targets(labels: Sequence[SceneLabel]) -> dict[str, np.ndarray]:
    """Target arrays for a batch; cells of absent entities are 0 and masked out."""
    for lab in labels:
        lab.validate()
    return {
        "presence": np.array([[lab.person_present, lab.robot_present] for lab in labels], dtype=np.float64),
        "px": np.array([lab.person[0] if lab.person else 0 for lab in labels]),
        "py": np.array([lab.person[1] if lab.person else 0 for lab in labels]),
        "rx": np.array([lab.robot[0] if lab.robot else 0 for lab in labels]),
        "ry": np.array([lab.robot[1] if lab.robot else 0 for lab in labels]),
        "person_mask": np.array([lab.person_present for lab in labels], dtype=np.float64),
        "robot_mask": np.array([lab.robot_present for lab in labels], dtype=np.float64),
    }


def fawn_loss(heads: HeadLogits, labels: SceneLabel | Sequence[SceneLabel]) -> Var:
    """Two presence BCE terms plus position CE terms for present entities, batch mean."""
    single = isinstance(labels, SceneLabel)
    t = label_targets([labels] if single else labels)
    if single:
        t = {k: v[0] for k, v in t.items()}
    n = 1 if single else len(labels)
    terms = [nx.sum_all(nx.bce_logits(heads.presence, t["presence"]))]
    for head, mask in (("px", "person_mask"), ("py", "person_mask"), ("rx", "robot_mask"), ("ry", "robot_mask")):
        ce = nx.cross_entropy_logits(getattr(heads, head), t[head])
        terms.append(nx.sum_all(nx.mul(ce, np.asarray(t[mask]))))
    total = terms[0]
    for term in terms[1:]:
        total = nx.add(total, term)
    return nx.scale(total, 1.0 / n)
