"""
Hypernetwork VAE
================
A VAE over weight chunks with task-conditional Gaussian priors.

* encoder q(z | chunk, t):  [chunk | t | chunk-embedding] -> 30 -> (mean, log-variance) in R^10
* decoder p(chunk | z, t):  [z | t | chunk-embedding] -> 30 -> chunk
* prior   p(z | t) = N(W_mu^T t, diag exp(W_logvar^T t))

The prior's variance map is read as a log-variance so every task prior is a
valid Gaussian; the parameterization stays linear in t.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

from errors import ContractError
from semi_acgan import ModelParams
from tensor_core import (
    Graph,
    Node,
    ParamBundle,
    make_optimizer,
    named_gradients,
    optimizer_step,
)
from weight_codec import (
    DEFAULT_CHUNK_SIZE,
    ChunkSet,
    Manifest,
    chunk,
    flatten,
    manifest_length,
    num_chunks_for,
    unchunk,
    unflatten,
)

logger = logging.getLogger(__name__)

LEAKY_SLOPE = 0.2
LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TaskDescriptor:
    task_id: int
    num_tasks: int

    def __post_init__(self) -> None:
        if not 0 <= self.task_id < self.num_tasks:
            raise ContractError(f"task id {self.task_id} outside [0, {self.num_tasks})")

    @property
    def vector(self) -> np.ndarray:
        t = np.zeros(self.num_tasks)
        t[self.task_id] = 1.0
        return t

    @classmethod
    def from_vector(cls, t: np.ndarray) -> "TaskDescriptor":
        t = np.asarray(t, dtype=np.float64).ravel()
        if np.count_nonzero(t) != 1 or t.max() != 1.0:
            raise ContractError(f"task descriptor must be one-hot, got {t}")
        return cls(int(t.argmax()), t.size)


def _task_vector(t: TaskDescriptor | np.ndarray) -> np.ndarray:
    return t.vector if isinstance(t, TaskDescriptor) else TaskDescriptor.from_vector(t).vector


@dataclass(frozen=True)
class TaskPrior:
    mean: np.ndarray
    log_var: np.ndarray
    task_ids: tuple[int, ...] = ()

    @property
    def variance(self) -> np.ndarray:
        return np.exp(self.log_var)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "log_var": self.log_var.tolist(), "task_ids": list(self.task_ids)}

    @classmethod
    def from_dict(cls, raw: dict) -> "TaskPrior":
        return cls(np.asarray(raw["mean"], dtype=np.float64),
                   np.asarray(raw["log_var"], dtype=np.float64),
                   tuple(int(i) for i in raw.get("task_ids", ())))


@dataclass(frozen=True)
class LatentPosterior:
    mean: Node | np.ndarray
    log_var: Node | np.ndarray


@dataclass(frozen=True)
class HyperArch:
    chunk_size: int
    num_chunks: int
    num_tasks: int
    latent_dim: int = 10
    hidden: int = 30
    embed_dim: int = 8

    def param_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        cs, t, lat, hid, emb = self.chunk_size, self.num_tasks, self.latent_dim, self.hidden, self.embed_dim
        return [
            ("enc.fc.w", (cs + t + emb, hid)),
            ("enc.fc.b", (hid,)),
            ("enc.mu.w", (hid, lat)),
            ("enc.mu.b", (lat,)),
            ("enc.logvar.w", (hid, lat)),
            ("enc.logvar.b", (lat,)),
            ("dec.fc.w", (lat + t + emb, hid)),
            ("dec.fc.b", (hid,)),
            ("dec.out.w", (hid, cs)),
            ("dec.out.b", (cs,)),
            ("prior.w_mu", (t, lat)),
            ("prior.w_logvar", (t, lat)),
            ("chunk_embed", (self.num_chunks, emb)),
        ]


@dataclass
class HyperParams(ParamBundle):
    """φ, θ, W_mu, W_logvar and chunk embeddings, plus the target layout they generate."""

    target_manifest: Manifest = ()
    chunk_size: int = DEFAULT_CHUNK_SIZE

    @property
    def arch(self) -> HyperArch:
        p = self.params
        num_tasks, latent = p["prior.w_mu"].shape
        num_chunks, embed = p["chunk_embed"].shape
        return HyperArch(self.chunk_size, num_chunks, num_tasks, latent, p["enc.fc.w"].shape[1], embed)

    @property
    def pad_len(self) -> int:
        return self.arch.num_chunks * self.chunk_size - manifest_length(self.target_manifest)


def init_hyper(
    target_manifest: Manifest,
    num_tasks: int,
    rng: np.random.Generator,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    latent_dim: int = 10,
    hidden: int = 30,
    embed_dim: int = 8,
    scale: float = 0.05,
) -> HyperParams:
    """Uniform ±scale weights, zero biases, zero W_logvar (unit-variance priors)."""
    arch = HyperArch(
        chunk_size, num_chunks_for(manifest_length(target_manifest), chunk_size),
        num_tasks, latent_dim, hidden, embed_dim,
    )
    params = {}
    for name, shape in arch.param_shapes():
        if name.endswith(".b") or name == "prior.w_logvar":
            params[name] = np.zeros(shape)
        else:
            params[name] = rng.uniform(-scale, scale, size=shape)
    return HyperParams(params=params, target_manifest=tuple(target_manifest), chunk_size=chunk_size)


def hyper_from_config(target_manifest: Manifest, cfg, rng: np.random.Generator) -> HyperParams:
    return init_hyper(
        target_manifest, cfg.num_tasks, rng, chunk_size=cfg.chunk_size, latent_dim=cfg.latent_dim,
        hidden=cfg.encoder_hidden, embed_dim=cfg.chunk_embed_dim, scale=cfg.hypernet_init_scale,
    )


# ---------------------------------------------------------------------------
# Graph builders (rows = batch of chunks)
# ---------------------------------------------------------------------------

def _check_ids(hyper: HyperParams, ids: np.ndarray) -> np.ndarray:
    ids = np.atleast_1d(np.asarray(ids, dtype=np.int64))
    n = hyper.arch.num_chunks
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise ContractError(f"chunk id outside [0, {n})")
    return ids


def tile_rows(x: np.ndarray, n: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.broadcast_to(x, (n, x.shape[-1])).copy() if x.ndim == 1 else x


def _encode(g: Graph, p: dict[str, Node], chunks: Node, t_rows: Node, ids: np.ndarray) -> tuple[Node, Node]:
    x = g.concat([chunks, t_rows, g.embedding(p["chunk_embed"], ids)], axis=1)
    h = g.leaky_relu(x @ p["enc.fc.w"] + p["enc.fc.b"], LEAKY_SLOPE)
    return h @ p["enc.mu.w"] + p["enc.mu.b"], h @ p["enc.logvar.w"] + p["enc.logvar.b"]


def _decode(g: Graph, p: dict[str, Node], z: Node, t_rows: Node, ids: np.ndarray) -> Node:
    x = g.concat([z, t_rows, g.embedding(p["chunk_embed"], ids)], axis=1)
    h = g.leaky_relu(x @ p["dec.fc.w"] + p["dec.fc.b"], LEAKY_SLOPE)
    return h @ p["dec.out.w"] + p["dec.out.b"]


def _kl_nodes(g: Graph, mu_q, lv_q, mu_p, lv_p) -> Node:
    mu_q, lv_q, mu_p, lv_p = (g.lift(v) for v in (mu_q, lv_q, mu_p, lv_p))
    diff = mu_q - mu_p
    ratio = (lv_q.exp() + diff * diff) * (-lv_p).exp()
    return (0.5 * (lv_p - lv_q) + 0.5 * ratio - 0.5).sum()


def elbo_node(
    g: Graph,
    p: dict[str, Node],
    chunks: np.ndarray,
    t_rows: np.ndarray,
    ids: np.ndarray,
    eps: np.ndarray,
    prior: tuple[np.ndarray, np.ndarray] | None = None,
) -> Node:
    """Summed single-sample ELBO over rows.

    ``prior`` pins the KL target to stored (mean, log-variance) rows instead
    of the live W_mu / W_logvar maps.
    """
    t_node = g.constant(t_rows)
    mu_q, lv_q = _encode(g, p, g.constant(chunks), t_node, ids)
    if prior is None:
        mu_p, lv_p = t_node @ p["prior.w_mu"], t_node @ p["prior.w_logvar"]
    else:
        mu_p, lv_p = g.constant(prior[0]), g.constant(prior[1])
    z = mu_q + (0.5 * lv_q).exp() * g.constant(eps)
    diff = g.constant(chunks) - _decode(g, p, z, t_node, ids)
    n, d = chunks.shape
    recon = -0.5 * (diff * diff).sum() - 0.5 * n * d * LOG_2PI
    return recon - _kl_nodes(g, mu_q, lv_q, mu_p, lv_p)


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------

def prior_of(t: TaskDescriptor | np.ndarray, w_mu: np.ndarray, w_logvar: np.ndarray) -> TaskPrior:
    vec = _task_vector(t)
    if vec.size != w_mu.shape[0]:
        raise ContractError(f"task vector of length {vec.size} for {w_mu.shape[0]} prior rows")
    return TaskPrior(mean=vec @ w_mu, log_var=vec @ w_logvar, task_ids=(int(vec.argmax()),))


def task_prior(hyper: HyperParams, t: TaskDescriptor) -> TaskPrior:
    return prior_of(t, hyper.params["prior.w_mu"], hyper.params["prior.w_logvar"])


def encode(chunk_values: np.ndarray, t: TaskDescriptor | np.ndarray, chunk_id, hyper: HyperParams) -> LatentPosterior:
    ids = _check_ids(hyper, chunk_id)
    chunks = np.atleast_2d(np.asarray(chunk_values, dtype=np.float64))
    if chunks.shape[1] != hyper.chunk_size:
        raise ContractError(f"chunk length {chunks.shape[1]} != chunk_size {hyper.chunk_size}")
    g = Graph()
    mu, lv = _encode(g, hyper.bind(g, trainable=False), g.constant(chunks),
                     g.constant(tile_rows(_task_vector(t), len(ids))), ids)
    return LatentPosterior(mean=mu.value.copy(), log_var=lv.value.copy())


def reparameterize(post: LatentPosterior, eps):
    """z = mean + exp(log_var / 2) * eps; differentiable when ``post`` holds nodes."""
    if isinstance(post.mean, Node):
        g = post.mean.graph
        return g.lift(post.mean) + (0.5 * g.lift(post.log_var)).exp() * g.lift(eps)
    return np.asarray(post.mean) + np.exp(0.5 * np.asarray(post.log_var)) * np.asarray(eps)


def decode(z: np.ndarray, t: TaskDescriptor | np.ndarray, chunk_id, hyper: HyperParams) -> np.ndarray:
    ids = _check_ids(hyper, chunk_id)
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if z.shape[1] != hyper.arch.latent_dim:
        raise ContractError(f"latent of width {z.shape[1]}, expected {hyper.arch.latent_dim}")
    z_rows = tile_rows(z[0], len(ids)) if len(z) == 1 else z
    return decode_rows(hyper, z_rows, tile_rows(_task_vector(t), len(ids)), ids)


def decode_rows(hyper: HyperParams, z_rows: np.ndarray, t_rows: np.ndarray, ids: np.ndarray) -> np.ndarray:
    g = Graph()
    out = _decode(g, hyper.bind(g, trainable=False), g.constant(z_rows), g.constant(t_rows), ids)
    return out.value.copy()


def kl_gaussians(q: LatentPosterior, p: TaskPrior | LatentPosterior):
    """Closed-form KL(q || p) for diagonal Gaussians, summed over dimensions (and rows)."""
    parts = (q.mean, q.log_var, p.mean, p.log_var)
    graph = next((v.graph for v in parts if isinstance(v, Node)), None)
    if graph is not None:
        return _kl_nodes(graph, *parts)
    mu_q, lv_q, mu_p, lv_p = (np.asarray(v, dtype=np.float64) for v in parts)
    ratio = (np.exp(lv_q) + (mu_q - mu_p) ** 2) * np.exp(-lv_p)
    return float(np.sum(0.5 * (lv_p - lv_q) + 0.5 * ratio - 0.5))


def elbo(chunk_values: np.ndarray, t: TaskDescriptor | np.ndarray, chunk_id, hyper: HyperParams, eps: np.ndarray) -> float:
    ids = _check_ids(hyper, chunk_id)
    chunks = np.atleast_2d(np.asarray(chunk_values, dtype=np.float64))
    g = Graph()
    node = elbo_node(g, hyper.bind(g, trainable=False), chunks, tile_rows(_task_vector(t), len(ids)),
                     ids, np.atleast_2d(eps))
    return float(node.value)


def elbo_gradients(
    chunk_values: np.ndarray, t: TaskDescriptor | np.ndarray, chunk_id, hyper: HyperParams, eps: np.ndarray
) -> dict[str, np.ndarray]:
    """d ELBO / d parameter for every hypernetwork parameter."""
    ids = _check_ids(hyper, chunk_id)
    chunks = np.atleast_2d(np.asarray(chunk_values, dtype=np.float64))
    g = Graph()
    p = hyper.bind(g, trainable=True)
    node = elbo_node(g, p, chunks, tile_rows(_task_vector(t), len(ids)), ids, np.atleast_2d(eps))
    return named_gradients(g, node, p)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def chunk_models(models: Sequence[ModelParams], hyper: HyperParams) -> list[ChunkSet]:
    if not models:
        raise ContractError("hypernetwork training needs at least one base model")
    sets = [chunk(flatten(m), hyper.chunk_size) for m in models]
    first = sets[0].manifest
    if any(s.manifest != first for s in sets[1:]):
        raise ContractError("base models flatten to different manifests")
    if hyper.target_manifest and tuple(hyper.target_manifest) != first:
        raise ContractError("base model manifest differs from the hypernetwork's target layout")
    if sets[0].num_chunks != hyper.arch.num_chunks:
        raise ContractError(f"{sets[0].num_chunks} chunks, hypernetwork embeds {hyper.arch.num_chunks}")
    return sets


def hyper_step(
    hyper: HyperParams,
    opt,
    chunks: np.ndarray,
    t_rows: np.ndarray,
    ids: np.ndarray,
    eps: np.ndarray,
    trainable: bool | tuple[str, ...] = True,
    prior: tuple[np.ndarray, np.ndarray] | None = None,
):
    """One optimizer step on -ELBO; returns (hyper', opt', -ELBO)."""
    g = Graph()
    p = hyper.bind(g, trainable=trainable)
    loss = -elbo_node(g, p, chunks, t_rows, ids, eps, prior=prior)
    names = [k for k, n in p.items() if g.nodes[n.id].requires_grad]
    grads = named_gradients(g, loss, {k: p[k] for k in names})
    updated, opt = optimizer_step({k: hyper.params[k] for k in names}, grads, opt)
    return hyper.with_params(updated), opt, float(loss.value)


def train_hypernet(
    models: Sequence[ModelParams],
    t: TaskDescriptor,
    hyper: HyperParams,
    cfg,
    rng: np.random.Generator,
    on_epoch_end: Callable[[int, HyperParams], HyperParams] | None = None,
) -> HyperParams:
    """Maximize the ELBO over every chunk of every base model, batch size 1 (Adadelta)."""
    sets = chunk_models(models, hyper)
    if not hyper.target_manifest:
        hyper = HyperParams(params=hyper.params, buffers=hyper.buffers,
                            target_manifest=sets[0].manifest, chunk_size=hyper.chunk_size)
    hyper = hyper.copy()
    if cfg.hypernet_epochs == 0:
        return hyper

    all_chunks = np.concatenate([s.chunks for s in sets])
    all_ids = np.tile(np.arange(sets[0].num_chunks), len(sets))
    t_row = t.vector[None, :]
    latent = hyper.arch.latent_dim
    opt = make_optimizer("adadelta", cfg.hypernet_lr)
    for epoch in range(cfg.hypernet_epochs):
        total = 0.0
        for i in rng.permutation(len(all_chunks)):
            hyper, opt, loss = hyper_step(
                hyper, opt, all_chunks[i:i + 1], t_row, all_ids[i:i + 1], rng.standard_normal((1, latent))
            )
            total += loss
        logger.debug("hypernet task %d epoch %d/%d  -elbo/chunk=%.4f",
                     t.task_id, epoch + 1, cfg.hypernet_epochs, total / len(all_chunks))
        if on_epoch_end is not None:
            hyper = on_epoch_end(epoch, hyper)
    return hyper


def reconstruction_mse(hyper: HyperParams, models: Sequence[ModelParams], t: TaskDescriptor) -> float:
    """Mean squared error of decode(posterior mean) over every chunk."""
    sets = chunk_models(models, hyper)
    chunks = np.concatenate([s.chunks for s in sets])
    ids = np.tile(np.arange(sets[0].num_chunks), len(sets))
    t_rows = tile_rows(t.vector, len(ids))
    post = encode(chunks, t.vector, ids, hyper)
    recon = decode_rows(hyper, np.asarray(post.mean), t_rows, ids)
    return float(np.mean((chunks - recon) ** 2))


def posterior_kl(hyper: HyperParams, models: Sequence[ModelParams], t: TaskDescriptor) -> float:
    """Mean per-chunk KL(q(z | chunk, t) || p(z | t))."""
    sets = chunk_models(models, hyper)
    chunks = np.concatenate([s.chunks for s in sets])
    ids = np.tile(np.arange(sets[0].num_chunks), len(sets))
    post = encode(chunks, t.vector, ids, hyper)
    prior = task_prior(hyper, t)
    return kl_gaussians(post, prior) / len(ids)


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def conditioning_vector(prior: TaskPrior, t: TaskDescriptor | None, num_tasks: int) -> np.ndarray:
    """``t``'s one-hot, or the uniform blend of the tasks ``prior`` aggregates."""
    if t is not None:
        return t.vector
    vec = np.zeros(num_tasks)
    if prior.task_ids:
        vec[list(prior.task_ids)] = 1.0 / len(prior.task_ids)
    return vec


def decode_model(hyper: HyperParams, z: np.ndarray, condition: np.ndarray) -> ModelParams:
    """Decode every chunk with one latent ``z`` and reassemble Θ."""
    arch = hyper.arch
    ids = np.arange(arch.num_chunks)
    chunks = decode_rows(hyper, tile_rows(z, arch.num_chunks), tile_rows(condition, arch.num_chunks), ids)
    cs = ChunkSet(chunk_size=hyper.chunk_size, chunks=chunks, pad_len=hyper.pad_len,
                  manifest=tuple(hyper.target_manifest))
    return unflatten(unchunk(cs))


def iter_sampled_models(
    prior: TaskPrior,
    hyper: HyperParams,
    count: int,
    rng: np.random.Generator,
    t: TaskDescriptor | None = None,
) -> Iterator[ModelParams]:
    """Yield ``count`` decoded models, one z draw each, one at a time."""
    if count < 1:
        raise ContractError(f"sample count must be >= 1, got {count}")
    if not hyper.target_manifest:
        raise ContractError("hypernetwork has no target layout; train it first")
    condition = conditioning_vector(prior, t, hyper.arch.num_tasks)
    std = np.exp(0.5 * prior.log_var)
    for _ in range(count):
        z = prior.mean + std * rng.standard_normal(prior.mean.shape)
        yield decode_model(hyper, z, condition)


def sample_models(
    prior: TaskPrior,
    hyper: HyperParams,
    count: int,
    rng: np.random.Generator,
    t: TaskDescriptor | None = None,
) -> list[ModelParams]:
    return list(iter_sampled_models(prior, hyper, count, rng, t))
