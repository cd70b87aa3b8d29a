"""
Semi-ACGAN
==========
Class-conditional generator G and a shared-trunk discriminator D with a
validity head and an auxiliary class head.  D reads labelled images with
both heads, unlabelled images with the validity head only, and generated
images with both heads.

Objectives (maximized; the functions below return the negated values):

* D: L_c^L + L_s^L + L_s^U
* G: L_c^L - L_s^L
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, Iterator, Sequence

import numpy as np

from bench_data import LabelledSet, SemiTask, UnlabelledSet, image_shape
from errors import ConfigError, ContractError, DataError, EmptyBatchError, ShapeError
from tensor_core import (
    Graph,
    Node,
    OptimizerState,
    ParamBundle,
    make_optimizer,
    named_gradients,
    optimizer_step,
)

logger = logging.getLogger(__name__)

GEN_FILTERS = 16
DISC_FILTERS = (16, 32)
UPSAMPLE = 4

Penalty = Callable[[Graph, dict[str, Node]], Node]


# ---------------------------------------------------------------------------
# Architecture and parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GanArch:
    image_shape: tuple[int, int, int]  # (C, H, W)
    num_classes: int
    noise_dim: int = 64
    gen_channels: int = 16

    @property
    def base_hw(self) -> tuple[int, int]:
        _, h, w = self.image_shape
        return h // UPSAMPLE, w // UPSAMPLE

    @property
    def feature_dim(self) -> int:
        h0, w0 = self.base_hw
        return DISC_FILTERS[1] * h0 * w0

    @classmethod
    def from_config(cls, cfg) -> "GanArch":
        return cls(
            image_shape=(cfg.channels, cfg.image_size, cfg.image_size),
            num_classes=cfg.num_classes,
            noise_dim=cfg.noise_dim,
            gen_channels=cfg.gen_channels,
        )

    @classmethod
    def from_manifest(cls, manifest: Sequence[tuple[str, tuple[int, ...]]]) -> "GanArch":
        """Recover the architecture from parameter shapes (square images)."""
        shapes = dict(manifest)
        try:
            num_classes, noise_dim = shapes["g.class_embed"]
            c0 = shapes["g.bn0.gamma"][0]
            hw0 = shapes["g.fc.w"][1] // c0
            channels = shapes["g.conv2.w"][0]
        except KeyError as exc:
            raise ContractError(f"manifest is missing {exc}") from exc
        side = int(round(math.sqrt(hw0))) * UPSAMPLE
        return cls((channels, side, side), num_classes, noise_dim, c0)

    def param_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        """Declaration order; this order defines the flattened weight vector."""
        c, _, _ = self.image_shape
        h0, w0 = self.base_hw
        c0, f1, f2 = self.gen_channels, DISC_FILTERS[0], DISC_FILTERS[1]
        return [
            ("g.class_embed", (self.num_classes, self.noise_dim)),
            ("g.fc.w", (self.noise_dim, c0 * h0 * w0)),
            ("g.fc.b", (c0 * h0 * w0,)),
            ("g.bn0.gamma", (c0,)),
            ("g.bn0.beta", (c0,)),
            ("g.conv1.w", (GEN_FILTERS, c0, 3, 3)),
            ("g.conv1.b", (GEN_FILTERS,)),
            ("g.bn1.gamma", (GEN_FILTERS,)),
            ("g.bn1.beta", (GEN_FILTERS,)),
            ("g.conv2.w", (c, GEN_FILTERS, 3, 3)),
            ("g.conv2.b", (c,)),
            ("d.conv1.w", (f1, c, 3, 3)),
            ("d.conv1.b", (f1,)),
            ("d.conv2.w", (f2, f1, 3, 3)),
            ("d.conv2.b", (f2,)),
            ("d.bn.gamma", (f2,)),
            ("d.bn.beta", (f2,)),
            ("d.adv.w", (self.feature_dim, 1)),
            ("d.adv.b", (1,)),
            ("d.cls.w", (self.feature_dim, self.num_classes)),
            ("d.cls.b", (self.num_classes,)),
        ]

    def buffer_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        out = []
        for layer, width in (("g.bn0", self.gen_channels), ("g.bn1", GEN_FILTERS), ("d.bn", DISC_FILTERS[1])):
            out += [(f"{layer}.running_mean", (width,)), (f"{layer}.running_var", (width,))]
        return out


class ModelParams(ParamBundle):
    """Θ of one Semi-ACGAN: generator ("g.*") and discriminator ("d.*")."""

    @property
    def generator(self) -> dict[str, np.ndarray]:
        return self.subset("g.")

    @property
    def discriminator(self) -> dict[str, np.ndarray]:
        return self.subset("d.")

    @property
    def arch(self) -> GanArch:
        return GanArch.from_manifest(self.manifest)


def default_buffers(arch: GanArch) -> dict[str, np.ndarray]:
    return {
        name: (np.ones(shape) if name.endswith("var") else np.zeros(shape))
        for name, shape in arch.buffer_shapes()
    }


def init_params(arch: GanArch, rng: np.random.Generator) -> ModelParams:
    params: dict[str, np.ndarray] = {}
    for name, shape in arch.param_shapes():
        if name == "g.class_embed":
            params[name] = rng.standard_normal(shape)
        elif name.endswith(".w"):
            params[name] = 0.02 * rng.standard_normal(shape)
        elif name.endswith("gamma"):
            params[name] = np.ones(shape)
        else:
            params[name] = np.zeros(shape)
    return ModelParams(params=params, buffers=default_buffers(arch))


def zero_params(arch: GanArch) -> ModelParams:
    return ModelParams(
        params={name: np.zeros(shape) for name, shape in arch.param_shapes()},
        buffers=default_buffers(arch),
    )


@dataclass(frozen=True)
class TrainSettings:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 0.0002
    betas: tuple[float, float] = (0.5, 0.999)
    leaky_slope: float = 0.2
    dropout: float = 0.25
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1
    prob_eps: float = 1e-7

    @classmethod
    def from_config(cls, cfg) -> "TrainSettings":
        return cls(
            epochs=cfg.base_epochs,
            batch_size=cfg.batch_size,
            lr=cfg.base_lr,
            betas=tuple(cfg.adam_betas),
            leaky_slope=cfg.leaky_slope,
            dropout=cfg.dropout,
            bn_eps=cfg.bn_eps,
            bn_momentum=cfg.bn_momentum,
            prob_eps=cfg.prob_eps,
        )

    @classmethod
    def for_fine_tuning(cls, cfg) -> "TrainSettings":
        return replace(cls.from_config(cfg), epochs=cfg.ft_epochs, lr=cfg.ft_lr)


# ---------------------------------------------------------------------------
# Forward passes on a graph
# ---------------------------------------------------------------------------

def _generator(
    g: Graph,
    p: dict[str, Node],
    buffers: dict[str, np.ndarray],
    arch: GanArch,
    z: Node,
    y: np.ndarray,
    s: TrainSettings,
    train: bool,
) -> tuple[Node, dict[str, Node]]:
    n = z.shape[0]
    h0, w0 = arch.base_hw
    h = z * g.embedding(p["g.class_embed"], y)
    h = (h @ p["g.fc.w"] + p["g.fc.b"]).reshape(n, arch.gen_channels, h0, w0)
    bn0 = g.batch_norm(h, p["g.bn0.gamma"], p["g.bn0.beta"],
                       buffers["g.bn0.running_mean"], buffers["g.bn0.running_var"], train, s.bn_eps)
    h = g.upsample2d(bn0, UPSAMPLE)
    h = g.conv2d(h, p["g.conv1.w"], stride=1, padding=1) + p["g.conv1.b"].reshape(1, -1, 1, 1)
    bn1 = g.batch_norm(h, p["g.bn1.gamma"], p["g.bn1.beta"],
                       buffers["g.bn1.running_mean"], buffers["g.bn1.running_var"], train, s.bn_eps)
    h = g.leaky_relu(bn1, s.leaky_slope)
    h = g.conv2d(h, p["g.conv2.w"], stride=1, padding=1) + p["g.conv2.b"].reshape(1, -1, 1, 1)
    return h.tanh(), {"g.bn0": bn0, "g.bn1": bn1}


def _trunk(
    g: Graph,
    p: dict[str, Node],
    buffers: dict[str, np.ndarray],
    x: Node,
    s: TrainSettings,
    train: bool,
    rng: np.random.Generator | None,
    dropout: bool = True,
) -> tuple[Node, Node]:
    """Shared D layers; returns (flat features, batch-norm node)."""
    h = g.conv2d(x, p["d.conv1.w"], stride=2, padding=1) + p["d.conv1.b"].reshape(1, -1, 1, 1)
    h = g.dropout(g.leaky_relu(h, s.leaky_slope), s.dropout, rng, train and dropout)
    h = g.conv2d(h, p["d.conv2.w"], stride=2, padding=1) + p["d.conv2.b"].reshape(1, -1, 1, 1)
    h = g.dropout(g.leaky_relu(h, s.leaky_slope), s.dropout, rng, train and dropout)
    bn = g.batch_norm(h, p["d.bn.gamma"], p["d.bn.beta"],
                      buffers["d.bn.running_mean"], buffers["d.bn.running_var"], train, s.bn_eps)
    return bn.reshape(x.shape[0], -1), bn


def _validity(p: dict[str, Node], feat: Node) -> Node:
    return (feat @ p["d.adv.w"] + p["d.adv.b"]).sigmoid().reshape(feat.shape[0])


def _class_logits(p: dict[str, Node], feat: Node) -> Node:
    return feat @ p["d.cls.w"] + p["d.cls.b"]


def _check_images(arch: GanArch, x: np.ndarray) -> None:
    if x.ndim != 4 or image_shape(x) != arch.image_shape:
        raise ShapeError(f"images {x.shape} do not match architecture {arch.image_shape}")


def _check_labels(arch: GanArch, y: np.ndarray) -> None:
    if y.size and (y.min() < 0 or y.max() >= arch.num_classes):
        raise ContractError(f"class id outside [0, {arch.num_classes})")


# ---------------------------------------------------------------------------
# Public forward ops
# ---------------------------------------------------------------------------

def generate(
    params: ModelParams,
    z_b: np.ndarray,
    y: Sequence[int] | np.ndarray,
    settings: TrainSettings | None = None,
) -> np.ndarray:
    """x_fake = G(z_b, y) with batch-norm in eval mode."""
    arch = params.arch
    y = np.asarray(y, dtype=np.int64)
    if z_b.ndim != 2 or z_b.shape[1] != arch.noise_dim:
        raise ShapeError(f"noise {z_b.shape} must be (N, {arch.noise_dim})")
    _check_labels(arch, y)
    g = Graph()
    out, _ = _generator(g, params.bind(g, trainable=False), params.buffers, arch,
                        g.constant(z_b), y, settings or TrainSettings(), train=False)
    return out.value.copy()


def discriminate(
    params: ModelParams, x: np.ndarray, settings: TrainSettings | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """[p(s=real|x), p(y|x)] = D(x) in eval mode."""
    arch = params.arch
    _check_images(arch, x)
    g = Graph()
    p = params.bind(g, trainable=False)
    feat, _ = _trunk(g, p, params.buffers, g.constant(x), settings or TrainSettings(), False, None)
    return _validity(p, feat).value.copy(), g.softmax(_class_logits(p, feat)).value.copy()


def class_logits(params: ModelParams, x: np.ndarray, settings: TrainSettings | None = None) -> np.ndarray:
    arch = params.arch
    _check_images(arch, x)
    g = Graph()
    p = params.bind(g, trainable=False)
    feat, _ = _trunk(g, p, params.buffers, g.constant(x), settings or TrainSettings(), False, None)
    return _class_logits(p, feat).value.copy()


def predict_from_logits(logits: np.ndarray, allowed: Sequence[int] | None = None) -> np.ndarray:
    """Row argmax; ties go to the lowest class id, ``allowed`` masks the rest."""
    scores = np.array(logits, dtype=np.float64)
    if allowed is not None:
        mask = np.full(scores.shape[1], -np.inf)
        mask[list(allowed)] = 0.0
        scores = scores + mask
    return scores.argmax(axis=1)


def predict(
    params: ModelParams,
    x: np.ndarray,
    allowed: Sequence[int] | None = None,
    settings: TrainSettings | None = None,
) -> np.ndarray:
    return predict_from_logits(class_logits(params, x, settings), allowed)


def accuracy(params: ModelParams, data: LabelledSet, allowed: Sequence[int] | None = None) -> float:
    if len(data) == 0:
        return 0.0
    return float(np.mean(predict(params, data.images, allowed) == data.labels))


def class_log_likelihood_grads(
    params: ModelParams, data: LabelledSet, settings: TrainSettings | None = None
) -> Iterator[dict[str, np.ndarray]]:
    """Per-example d log p(y|x) / d θ_D, D in eval mode."""
    arch = params.arch
    s = settings or TrainSettings()
    if len(data):
        _check_images(arch, data.images)
        _check_labels(arch, data.labels)
    for i in range(len(data)):
        g = Graph()
        p = params.bind(g, trainable=("d.",))
        feat, _ = _trunk(g, p, params.buffers, g.constant(data.images[i:i + 1]), s, False, None)
        probs = g.softmax(_class_logits(p, feat))
        loglik = _mean_log(g, _pick(g, probs, data.labels[i:i + 1]), s.prob_eps)
        yield named_gradients(g, loglik, {k: v for k, v in p.items() if k.startswith("d.")})


# ---------------------------------------------------------------------------
# Loss terms
# ---------------------------------------------------------------------------

def _as_nodes(*xs) -> tuple[Graph, list[Node], bool]:
    graph = next((x.graph for x in xs if isinstance(x, Node)), None)
    standalone = graph is None
    graph = graph or Graph()
    return graph, [graph.lift(x) for x in xs], standalone


def _mean_log(g: Graph, p: Node, eps: float) -> Node:
    if p.value.size == 0:
        raise EmptyBatchError("log-likelihood over an empty batch")
    return g.log(g.clip(p, eps, 1.0 - eps)).mean()


def _finish(node: Node, standalone: bool):
    return float(node.value) if standalone else node


def loss_source_labelled(p_real_on_real, p_fake_on_fake, eps: float = 1e-7):
    """L_s^L = E[log p(s=real|x_real)] + E[log p(s=fake|x_fake)]."""
    g, (real, fake), standalone = _as_nodes(p_real_on_real, p_fake_on_fake)
    return _finish(_mean_log(g, real, eps) + _mean_log(g, fake, eps), standalone)


def _pick(g: Graph, probs: Node, labels: np.ndarray) -> Node:
    labels = np.asarray(labels, dtype=np.int64)
    n, c = probs.shape
    if labels.shape != (n,):
        raise ShapeError(f"{labels.shape[0] if labels.ndim else 0} labels for {n} rows")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ContractError(f"label outside [0, {c})")
    onehot = np.zeros((n, c))
    onehot[np.arange(n), labels] = 1.0
    return (probs * onehot).sum(axis=1)


def loss_class_labelled(p_class_on_real, y_real, p_class_on_fake, y_fake, eps: float = 1e-7):
    """L_c^L = E[log p(y=ŷ|x_real)] + E[log p(y=ŷ|x_fake)]."""
    g, (real, fake), standalone = _as_nodes(p_class_on_real, p_class_on_fake)
    total = _mean_log(g, _pick(g, real, y_real), eps) + _mean_log(g, _pick(g, fake, y_fake), eps)
    return _finish(total, standalone)


def loss_source_unlabelled(p_real_on_unlabelled, eps: float = 1e-7):
    """L_s^U = E[log p(s=real|x_real)] over unlabelled reals; no class term."""
    g, (real,), standalone = _as_nodes(p_real_on_unlabelled)
    return _finish(_mean_log(g, real, eps), standalone)


def d_objective(l_c, l_s, l_su=0.0):
    """Negated D maximand, ready for a minimizer."""
    return -(l_c + l_s + l_su)


def g_objective(l_c, l_s):
    """Negated G maximand, ready for a minimizer."""
    return -(l_c - l_s)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class _Batch:
    x_l: np.ndarray
    y_l: np.ndarray
    x_u: np.ndarray


def _fold_stats(
    buffers: dict[str, np.ndarray], layer: str, bn_nodes: Sequence[Node], momentum: float
) -> None:
    """Blend train-mode batch statistics into running buffers (unbiased variance)."""
    for node in bn_nodes:
        saved = node.saved
        m = saved["count"]
        mean_key, var_key = f"{layer}.running_mean", f"{layer}.running_var"
        buffers[mean_key] = (1.0 - momentum) * buffers[mean_key] + momentum * saved["mean"]
        buffers[var_key] = (1.0 - momentum) * buffers[var_key] + momentum * saved["var"] * m / (m - 1)


def _apply(
    model: ModelParams,
    g: Graph,
    loss: Node,
    nodes: dict[str, Node],
    prefix: str,
    opt: OptimizerState,
) -> tuple[ModelParams, OptimizerState]:
    trainable = {k: v for k, v in nodes.items() if k.startswith(prefix)}
    grads = named_gradients(g, loss, trainable)
    updated, opt = optimizer_step({k: model.params[k] for k in trainable}, grads, opt)
    return model.with_params(updated), opt


def _d_step(
    model: ModelParams,
    batch: _Batch,
    classes: np.ndarray,
    s: TrainSettings,
    rng: np.random.Generator,
    opt: OptimizerState,
    use_unlabelled: bool,
    penalty: Penalty | None,
) -> tuple[ModelParams, OptimizerState, float]:
    arch = model.arch
    g = Graph()
    p = model.bind(g, trainable=("d.",))
    n_fake = max(len(batch.y_l), len(batch.x_u), 1)
    z = g.constant(rng.standard_normal((n_fake, arch.noise_dim)))
    y_fake = rng.choice(classes, size=n_fake)
    x_fake, _ = _generator(g, p, model.buffers, arch, z, y_fake, s, train=True)

    real_bn = []
    feat_f, _ = _trunk(g, p, model.buffers, x_fake, s, True, rng)
    p_s_f = _validity(p, feat_f)

    if len(batch.y_l):
        feat_l, bn_l = _trunk(g, p, model.buffers, g.constant(batch.x_l), s, True, rng)
        real_bn.append(bn_l)
        l_s = loss_source_labelled(_validity(p, feat_l), 1.0 - p_s_f, s.prob_eps)
        l_c = loss_class_labelled(
            g.softmax(_class_logits(p, feat_l)), batch.y_l,
            g.softmax(_class_logits(p, feat_f)), y_fake, s.prob_eps,
        )
    else:
        l_s, l_c = _mean_log(g, 1.0 - p_s_f, s.prob_eps), 0.0

    l_su = 0.0
    if use_unlabelled and len(batch.x_u):
        feat_u, bn_u = _trunk(g, p, model.buffers, g.constant(batch.x_u), s, True, rng)
        real_bn.append(bn_u)
        l_su = loss_source_unlabelled(_validity(p, feat_u), s.prob_eps)

    loss = d_objective(l_c, l_s, l_su)
    if penalty is not None:
        loss = loss + penalty(g, p)
    model, opt = _apply(model, g, loss, p, "d.", opt)
    _fold_stats(model.buffers, "d.bn", real_bn, s.bn_momentum)
    return model, opt, float(loss.value)


def _g_step(
    model: ModelParams,
    batch: _Batch,
    classes: np.ndarray,
    s: TrainSettings,
    rng: np.random.Generator,
    opt: OptimizerState,
) -> tuple[ModelParams, OptimizerState, float]:
    arch = model.arch
    g = Graph()
    p = model.bind(g, trainable=("g.",))
    n_fake = max(len(batch.y_l), len(batch.x_u), 1)
    z = g.constant(rng.standard_normal((n_fake, arch.noise_dim)))
    y_fake = rng.choice(classes, size=n_fake)
    x_fake, gen_bn = _generator(g, p, model.buffers, arch, z, y_fake, s, train=True)
    feat_f, _ = _trunk(g, p, model.buffers, x_fake, s, True, rng)
    p_s_f = _validity(p, feat_f)

    if len(batch.y_l):
        feat_l, _ = _trunk(g, p, model.buffers, g.constant(batch.x_l), s, True, rng)
        l_s = loss_source_labelled(_validity(p, feat_l), 1.0 - p_s_f, s.prob_eps)
        l_c = loss_class_labelled(
            g.softmax(_class_logits(p, feat_l)), batch.y_l,
            g.softmax(_class_logits(p, feat_f)), y_fake, s.prob_eps,
        )
    else:
        l_s, l_c = _mean_log(g, 1.0 - p_s_f, s.prob_eps), 0.0

    loss = g_objective(l_c, l_s)
    model, opt = _apply(model, g, loss, p, "g.", opt)
    for layer, node in gen_bn.items():
        _fold_stats(model.buffers, layer, [node], s.bn_momentum)
    return model, opt, float(loss.value)


def _draw(n: int, size: int, rng: np.random.Generator) -> np.ndarray:
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    return rng.choice(n, size=size, replace=n < size)


def fit(
    model: ModelParams,
    labelled: LabelledSet,
    unlabelled: UnlabelledSet,
    classes: Sequence[int],
    settings: TrainSettings,
    rng: np.random.Generator,
    use_unlabelled: bool = True,
    penalty: Penalty | None = None,
) -> ModelParams:
    """Alternate D and G steps over the given data for ``settings.epochs``."""
    model = model.copy()
    n_l = len(labelled)
    n_u = len(unlabelled) if use_unlabelled else 0
    if settings.epochs == 0 or n_l + n_u == 0:
        return model
    classes_arr = np.asarray(sorted(classes), dtype=np.int64)
    if classes_arr.size == 0:
        raise ConfigError("training needs at least one class to condition G on")

    d_opt = make_optimizer("adam", settings.lr, betas=settings.betas)
    g_opt = make_optimizer("adam", settings.lr, betas=settings.betas)
    bs = settings.batch_size
    steps = math.ceil(max(n_l, n_u) / bs)
    for epoch in range(settings.epochs):
        d_total = g_total = 0.0
        for _ in range(steps):
            il, iu = _draw(n_l, bs, rng), _draw(n_u, bs, rng)
            batch = _Batch(labelled.images[il], labelled.labels[il], unlabelled.images[iu])
            model, d_opt, d_loss = _d_step(model, batch, classes_arr, settings, rng, d_opt, use_unlabelled, penalty)
            model, g_opt, g_loss = _g_step(model, batch, classes_arr, settings, rng, g_opt)
            d_total += d_loss
            g_total += g_loss
        logger.debug("epoch %d/%d  d_loss=%.4f  g_loss=%.4f",
                     epoch + 1, settings.epochs, d_total / steps, g_total / steps)
    return model


def check_task(task: SemiTask, arch: GanArch) -> None:
    if not task.classes:
        raise DataError(f"task {task.task_id} has no classes")
    labels = task.train.labelled.labels
    if len(labels):
        missing = sorted(set(task.classes) - set(labels.tolist()))
        if missing:
            raise ConfigError(f"task {task.task_id}: no labelled example for classes {missing}")
        stray = sorted(set(labels.tolist()) - set(task.classes))
        if stray:
            raise ConfigError(f"task {task.task_id}: labels {stray} outside the task's classes")
    if max(task.classes) >= arch.num_classes:
        raise ConfigError(f"task {task.task_id}: class ids exceed the {arch.num_classes}-way head")
    for split in (task.train.labelled.images, task.train.unlabelled.images):
        if len(split):
            _check_images(arch, split)


def train_base(
    task: SemiTask,
    cfg,
    rng: np.random.Generator,
    init: ModelParams | None = None,
    use_unlabelled: bool = True,
    penalty: Penalty | None = None,
) -> ModelParams:
    """Train one base model on ``task``'s training split."""
    arch = GanArch.from_config(cfg)
    check_task(task, arch)
    model = init.copy() if init is not None else init_params(arch, rng)
    if model.manifest != arch.param_shapes():
        raise ConfigError("initial parameters do not match the configured architecture")
    return fit(
        model, task.train.labelled, task.train.unlabelled, task.classes,
        TrainSettings.from_config(cfg), rng, use_unlabelled=use_unlabelled, penalty=penalty,
    )


def recalibrate_batch_norm(
    params: ModelParams, images: np.ndarray, settings: TrainSettings | None = None
) -> ModelParams:
    """Set D's running statistics to the exact statistics of ``images``."""
    if len(images) == 0:
        return params.copy()
    s = settings or TrainSettings()
    g = Graph()
    p = params.bind(g, trainable=False)
    _, bn = _trunk(g, p, params.buffers, g.constant(images), s, True, None, dropout=False)
    out = params.copy()
    m = bn.saved["count"]
    out.buffers["d.bn.running_mean"] = bn.saved["mean"].copy()
    out.buffers["d.bn.running_var"] = bn.saved["var"] * (m / (m - 1))
    return out
