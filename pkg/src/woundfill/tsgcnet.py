"""Two-stream graph convolutional network for per-face segmentation.

The coordinate stream stacks graph-attention layers, the normal stream
stacks graph max-pooling layers over the same per-depth KNN graphs, and the
two are fused with norm balancing and a sigmoid self-attention gate before a
per-node classifier.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterator

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .knn import KnnGraph, build_knn
from .mesh import CellFeatures, TriMesh, cell_features
from .nn import MlpParams, init_mlp, mlp_apply

IN_DIM = 12


@dataclass
class ModelConfig:
    k: int = 16
    widths: tuple[int, ...] = (64, 128, 256)
    fusion_width: int = 512
    head_widths: tuple[int, ...] = (512, 256)
    num_classes: int = 2
    stn_widths: tuple[int, ...] = (64, 128)
    stn_fc: tuple[int, ...] = (64,)
    attention_hidden: int | None = None  # defaults to the layer width
    attention_norm: str = "softmax"  # or "literal" for the unnormalised weights
    use_norm: bool = False

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        self.head_widths = tuple(int(w) for w in self.head_widths)
        self.stn_widths = tuple(int(w) for w in self.stn_widths)
        self.stn_fc = tuple(int(w) for w in self.stn_fc)
        if self.attention_norm not in ("softmax", "literal"):
            raise ValueError(f"attention_norm must be 'softmax' or 'literal', not {self.attention_norm!r}")
        if self.k < 1 or self.num_classes < 2 or not self.widths:
            raise ValueError("invalid model configuration")

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("widths", "head_widths", "stn_widths", "stn_fc"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    @classmethod
    def tiny(cls, **overrides) -> "ModelConfig":
        """Small CPU-scale network with normalisation in the shared MLPs."""
        base = dict(k=8, widths=(16, 16, 16), fusion_width=32, head_widths=(32,),
                    stn_widths=(32, 64), stn_fc=(32,), use_norm=True)
        base.update(overrides)
        return cls(**base)


@dataclass
class StnParams:
    point_mlp: MlpParams
    fc: MlpParams

    def parameters(self) -> Iterator[tuple[str, Tensor]]:
        for n, p in self.point_mlp.parameters():
            yield f"point_mlp.{n}", p
        for n, p in self.fc.parameters():
            yield f"fc.{n}", p


@dataclass
class AttentionLayerParams:
    calibrate: MlpParams  # MLP^l on f_i (+) f_ij
    attend: MlpParams  # sigma on (f_i - f_ij) (+) f_ij

    def parameters(self):
        yield from ((f"calibrate.{n}", p) for n, p in self.calibrate.parameters())
        yield from ((f"attend.{n}", p) for n, p in self.attend.parameters())


@dataclass
class MaxPoolLayerParams:
    calibrate: MlpParams

    def parameters(self):
        yield from ((f"calibrate.{n}", p) for n, p in self.calibrate.parameters())


@dataclass
class ModelParams:
    config: ModelConfig
    stn_c: StnParams
    stn_n: StnParams
    c_layers: list[AttentionLayerParams]
    n_layers: list[MaxPoolLayerParams]
    fuse_c: MlpParams
    fuse_n: MlpParams
    att: MlpParams
    head: MlpParams

    def _mlps(self) -> Iterator[tuple[str, MlpParams]]:
        yield "stn_c.point_mlp", self.stn_c.point_mlp
        yield "stn_c.fc", self.stn_c.fc
        yield "stn_n.point_mlp", self.stn_n.point_mlp
        yield "stn_n.fc", self.stn_n.fc
        for i, layer in enumerate(self.c_layers):
            yield f"c_layers.{i}.calibrate", layer.calibrate
            yield f"c_layers.{i}.attend", layer.attend
        for i, layer in enumerate(self.n_layers):
            yield f"n_layers.{i}.calibrate", layer.calibrate
        yield "fuse_c", self.fuse_c
        yield "fuse_n", self.fuse_n
        yield "att", self.att
        yield "head", self.head

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return [(f"{prefix}.{n}", p) for prefix, mlp in self._mlps() for n, p in mlp.parameters()]

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self) -> list[tuple[str, np.ndarray]]:
        return [(f"{prefix}.{n}", b) for prefix, mlp in self._mlps() for n, b in mlp.buffers()]

    def state(self) -> list[tuple[str, np.ndarray]]:
        """Every stored array (parameters, then normalisation buffers) in declared order."""
        return [(n, p.data) for n, p in self.named_parameters()] + self.named_buffers()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    @property
    def dtype(self):
        return self.head.layers[0].weight.dtype


def _init_stn(rng, cfg: ModelConfig, dtype) -> StnParams:
    point_mlp = init_mlp(rng, (IN_DIM, *cfg.stn_widths), "relu", cfg.use_norm, dtype)
    dims = (cfg.stn_widths[-1], *cfg.stn_fc, IN_DIM * IN_DIM)
    acts = ["relu"] * len(cfg.stn_fc) + ["none"]
    fc = init_mlp(rng, dims, acts, False, dtype)
    # T starts exactly at the identity
    fc.layers[-1].weight.data[...] = 0.0
    fc.layers[-1].bias.data[...] = np.eye(IN_DIM, dtype=dtype).reshape(-1)
    return StnParams(point_mlp, fc)


def init_model(cfg: ModelConfig, seed: int = 0, dtype=np.float64) -> ModelParams:
    rng = np.random.default_rng(seed)
    stn_c = _init_stn(rng, cfg, dtype)
    stn_n = _init_stn(rng, cfg, dtype)
    c_layers, n_layers = [], []
    d = IN_DIM
    for w in cfg.widths:
        hidden = cfg.attention_hidden or w
        c_layers.append(AttentionLayerParams(
            calibrate=init_mlp(rng, (2 * d, w), "relu", cfg.use_norm, dtype),
            attend=init_mlp(rng, (2 * d, hidden, w), ["relu", "none"], cfg.use_norm, dtype),
        ))
        n_layers.append(MaxPoolLayerParams(
            calibrate=init_mlp(rng, (2 * d, w), "relu", cfg.use_norm, dtype),
        ))
        d = w
    total = sum(cfg.widths)
    fw = cfg.fusion_width
    fuse_c = init_mlp(rng, (total, fw), "relu", cfg.use_norm, dtype)
    fuse_n = init_mlp(rng, (total, fw), "relu", cfg.use_norm, dtype)
    att = init_mlp(rng, (2 * fw, 2 * fw), "sigmoid", False, dtype)
    head_dims = (2 * fw, *cfg.head_widths, cfg.num_classes)
    head = init_mlp(rng, head_dims, ["relu"] * len(cfg.head_widths) + ["none"], False, dtype)
    return ModelParams(cfg, stn_c, stn_n, c_layers, n_layers, fuse_c, fuse_n, att, head)


# traces --------------------------------------------------------------------

@dataclass
class GraphLayerTrace:
    graph: KnnGraph
    calibrated: np.ndarray  # M x k x w
    output: np.ndarray  # M x w
    attention: np.ndarray | None = None  # M x k x w, C-stream only


@dataclass
class FusionTrace:
    Fc: Tensor
    Fn: Tensor
    theta_c: np.ndarray
    theta_n: np.ndarray
    fc_hat: np.ndarray
    fn_hat: np.ndarray
    beta: np.ndarray
    fused: np.ndarray
    probs: Tensor


@dataclass
class ForwardTrace:
    transform_c: np.ndarray
    transform_n: np.ndarray
    graphs: list[KnnGraph] = field(default_factory=list)
    c_layers: list[GraphLayerTrace] = field(default_factory=list)
    n_layers: list[GraphLayerTrace] = field(default_factory=list)
    fusion: FusionTrace | None = None


# layers --------------------------------------------------------------------

def stn_transform(params: StnParams, F0, training: bool = False) -> Tensor:
    """The learned 12 x 12 matrix T for input ``F0``."""
    F0 = ag.as_tensor(F0)
    if F0.ndim != 2 or F0.shape[1] != IN_DIM:
        raise ValueError(f"input transformer expects M x {IN_DIM}, got {F0.shape}")
    h = mlp_apply(params.point_mlp, F0, training)
    pooled = ag.reshape(ag.max(h, axis=0), (1, -1))
    return ag.reshape(mlp_apply(params.fc, pooled, training), (IN_DIM, IN_DIM))


def stn_apply(params: StnParams, F0, training: bool = False) -> Tensor:
    F0 = ag.as_tensor(F0)
    return ag.matmul(F0, stn_transform(params, F0, training))


def _edge_inputs(F: Tensor, graph: KnnGraph) -> tuple[Tensor, Tensor]:
    if graph.n_nodes != F.shape[0]:
        raise ValueError(f"graph has {graph.n_nodes} rows but features have {F.shape[0]}")
    m, d = F.shape
    neighbors = ag.take_rows(F, graph.neighbors)  # M x k x d
    center = ag.broadcast_to(ag.reshape(F, (m, 1, d)), (m, graph.k, d))
    return center, neighbors


def attention_layer(params: AttentionLayerParams, F, graph: KnnGraph,
                    normalize: str = "softmax", training: bool = False) -> tuple[Tensor, GraphLayerTrace]:
    F = ag.as_tensor(F)
    center, nbr = _edge_inputs(F, graph)
    calibrated = mlp_apply(params.calibrate, ag.concat([center, nbr], -1), training)
    logits = mlp_apply(params.attend, ag.concat([center - nbr, nbr], -1), training)
    gamma = ag.softmax(logits, axis=1) if normalize == "softmax" else logits
    out = ag.sum(gamma * calibrated, axis=1)
    trace = GraphLayerTrace(graph, calibrated.data, out.data, attention=gamma.data)
    return out, trace


def maxpool_layer(params: MaxPoolLayerParams, F, graph: KnnGraph,
                  training: bool = False) -> tuple[Tensor, GraphLayerTrace]:
    F = ag.as_tensor(F)
    center, nbr = _edge_inputs(F, graph)
    calibrated = mlp_apply(params.calibrate, ag.concat([center, nbr], -1), training)
    out = ag.max(calibrated, axis=1)
    return out, GraphLayerTrace(graph, calibrated.data, out.data)


def fuse_classify(params: ModelParams, c_feats, n_feats, training: bool = False) -> FusionTrace:
    c_feats = [ag.as_tensor(t) for t in c_feats]
    n_feats = [ag.as_tensor(t) for t in n_feats]
    m = c_feats[0].shape[0]
    if any(t.shape[0] != m for t in c_feats + n_feats):
        raise ValueError("stream outputs disagree on the node count")
    Fc = mlp_apply(params.fuse_c, ag.concat(c_feats, -1), training)
    Fn = mlp_apply(params.fuse_n, ag.concat(n_feats, -1), training)
    norm_c = ag.l2norm(Fc, axis=1)
    norm_n = ag.l2norm(Fn, axis=1)
    # both norms zero: split evenly (the features are zero anyway)
    empty = ((norm_c.data + norm_n.data) == 0).astype(Fc.dtype)
    denom = norm_c + norm_n + empty
    theta_c = (norm_n + 0.5 * empty) / denom
    theta_n = (norm_c + 0.5 * empty) / denom
    fc_hat = theta_c * Fc
    fn_hat = theta_n * Fn
    joined = ag.concat([fc_hat, fn_hat], -1)
    beta = mlp_apply(params.att, joined, training)
    fused = beta * joined
    probs = ag.softmax(mlp_apply(params.head, fused, training), axis=1)
    return FusionTrace(Fc, Fn, theta_c.data[:, 0], theta_n.data[:, 0], fc_hat.data, fn_hat.data,
                       beta.data, fused.data, probs)


def model_forward(params: ModelParams, features: CellFeatures, graphs: list[KnnGraph] | None = None,
                  training: bool = False) -> tuple[Tensor, ForwardTrace]:
    """Class probabilities (M x C) for one mesh.

    ``graphs`` freezes the per-depth KNN graphs (used for gradient checks);
    by default each depth builds its graph from the current C-stream rows.
    The effective k is capped at M - 1 so tiny meshes still run.
    """
    cfg = params.config
    dtype = params.dtype
    coords = Tensor(np.asarray(features.coords, dtype=dtype))
    normals = Tensor(np.asarray(features.normals, dtype=dtype))
    m = coords.shape[0]
    if m < 2:
        raise ValueError("need at least two cells")
    Tc = stn_transform(params.stn_c, coords, training)
    Tn = stn_transform(params.stn_n, normals, training)
    c = ag.matmul(coords, Tc)
    n = ag.matmul(normals, Tn)
    trace = ForwardTrace(Tc.data, Tn.data)
    c_outs, n_outs = [], []
    k = min(cfg.k, m - 1)
    for depth in range(len(cfg.widths)):
        graph = graphs[depth] if graphs is not None else build_knn(c.data, k)
        c, tc = attention_layer(params.c_layers[depth], c, graph, cfg.attention_norm, training)
        n, tn = maxpool_layer(params.n_layers[depth], n, graph, training)
        trace.graphs.append(graph)
        trace.c_layers.append(tc)
        trace.n_layers.append(tn)
        c_outs.append(c)
        n_outs.append(n)
    trace.fusion = fuse_classify(params, c_outs, n_outs, training)
    return trace.fusion.probs, trace


def prepare_features(mesh: TriMesh) -> CellFeatures:
    """Cell features with coordinates centred and scaled to unit RMS radius.

    Normals are unit vectors already and pass through unchanged.
    """
    feats = cell_features(mesh)
    center = mesh.vertices[np.unique(mesh.faces)].mean(axis=0)
    pts = feats.coords.reshape(-1, 4, 3) - center
    scale = np.sqrt((pts[:, 3] ** 2).sum(1).mean())
    if scale <= 0:
        scale = 1.0
    return CellFeatures((pts / scale).reshape(-1, IN_DIM), feats.normals)


def predict_proba(params: ModelParams, mesh: TriMesh) -> np.ndarray:
    probs, _ = model_forward(params, prepare_features(mesh))
    return probs.data
