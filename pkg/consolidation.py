"""
Meta-consolidation
==================
The prior store (one frozen (mean, log-variance) snapshot per finished task)
and the replay pass that re-trains the hypernetwork on pseudo-models decoded
from every stored prior.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from errors import StateError
from hypernet_vae import (
    HyperParams,
    TaskDescriptor,
    TaskPrior,
    decode_rows,
    hyper_step,
    task_prior,
    tile_rows,
)
from tensor_core import make_optimizer

logger = logging.getLogger(__name__)

# replay moves the encoder, decoder and chunk embeddings; the stored priors stay put
CONSOLIDATION_TRAINABLE = ("enc.", "dec.", "chunk_embed")

DecodeHook = Callable[[int, int], None]


def _frozen(prior: TaskPrior) -> TaskPrior:
    mean, log_var = np.array(prior.mean, dtype=np.float64), np.array(prior.log_var, dtype=np.float64)
    mean.setflags(write=False)
    log_var.setflags(write=False)
    return TaskPrior(mean=mean, log_var=log_var, task_ids=prior.task_ids)


@dataclass(frozen=True)
class PriorStore:
    """task id -> TaskPrior snapshot, in arrival order."""

    priors: dict[int, TaskPrior] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.priors)

    def __getitem__(self, task_id: int) -> TaskPrior:
        try:
            return self.priors[task_id]
        except KeyError:
            raise StateError(f"no stored prior for task {task_id}") from None

    def __iter__(self) -> Iterator[int]:
        return iter(self.priors)

    @property
    def task_ids(self) -> tuple[int, ...]:
        return tuple(self.priors)

    def with_prior(self, task_id: int, prior: TaskPrior) -> "PriorStore":
        return PriorStore({**self.priors, task_id: _frozen(prior)})

    def to_dict(self) -> dict:
        return {str(k): v.to_dict() for k, v in self.priors.items()}

    @classmethod
    def from_dict(cls, raw: dict) -> "PriorStore":
        store = cls()
        for key in sorted(raw, key=int):
            store = store.with_prior(int(key), TaskPrior.from_dict(raw[key]))
        return store


def record_prior(store: PriorStore, task_id: int, hyper: HyperParams) -> PriorStore:
    """Append a snapshot of p(z | t_task_id); tasks must arrive in order."""
    if task_id in store.priors:
        raise StateError(f"prior for task {task_id} already recorded")
    if task_id != len(store):
        raise StateError(f"expected prior for task {len(store)}, got task {task_id}")
    prior = task_prior(hyper, TaskDescriptor(task_id, hyper.arch.num_tasks))
    logger.debug("Recorded prior for task %d: |mean|=%.4f", task_id, float(np.linalg.norm(prior.mean)))
    return store.with_prior(task_id, prior)


def provisional_store(store: PriorStore, task_id: int, hyper: HyperParams) -> PriorStore:
    """``store`` plus the current prior of a task still being trained."""
    if task_id in store.priors:
        return store
    return store.with_prior(task_id, task_prior(hyper, TaskDescriptor(task_id, hyper.arch.num_tasks)))


def aggregate_priors(store: PriorStore) -> TaskPrior:
    """Mean of the stored means and of the stored variances (re-logged)."""
    if not len(store):
        raise StateError("cannot aggregate an empty prior store")
    if len(store) == 1:
        only = next(iter(store.priors.values()))
        return TaskPrior(mean=only.mean.copy(), log_var=only.log_var.copy(), task_ids=store.task_ids)
    means = np.stack([p.mean for p in store.priors.values()])
    variances = np.stack([p.variance for p in store.priors.values()])
    return TaskPrior(mean=means.mean(axis=0), log_var=np.log(variances.mean(axis=0)),
                     task_ids=store.task_ids)


def consolidate(
    hyper: HyperParams,
    store: PriorStore,
    k: int,
    num_pseudo: int,
    cfg,
    rng: np.random.Generator,
    on_decode: DecodeHook | None = None,
) -> HyperParams:
    """Replay tasks 0..k: decode ``num_pseudo`` pseudo-models per stored prior,
    each from its own latent draw, and take one -ELBO step per chunk id
    against them.

    Pseudo-model chunks are fixed targets; the KL of a replayed task is taken
    against its stored prior.
    """
    if not len(store):
        raise StateError("consolidation needs at least one stored prior")
    missing = [j for j in range(k + 1) if j not in store.priors]
    if missing:
        raise StateError(f"prior store lacks tasks {missing} for consolidation up to task {k}")
    if num_pseudo == 0:
        return hyper

    arch = hyper.arch
    ids = np.arange(arch.num_chunks)
    opt = make_optimizer("adadelta", cfg.consolidation_lr)
    for j in range(k + 1):
        prior = store[j]
        t_vec = TaskDescriptor(j, arch.num_tasks).vector
        zs = prior.mean + np.exp(0.5 * prior.log_var) * rng.standard_normal((num_pseudo, arch.latent_dim))
        # every chunk of pseudo-model i is decoded from the same zs[i]
        rows = decode_rows(
            hyper,
            np.repeat(zs, arch.num_chunks, axis=0),
            tile_rows(t_vec, num_pseudo * arch.num_chunks),
            np.tile(ids, num_pseudo),
        )
        pseudo = rows.reshape(num_pseudo, arch.num_chunks, arch.chunk_size)
        if on_decode is not None:
            for i in range(num_pseudo):
                on_decode(j, i)

        t_rows = tile_rows(t_vec, num_pseudo)
        stored = (tile_rows(prior.mean, num_pseudo), tile_rows(prior.log_var, num_pseudo))
        total = 0.0
        for c in rng.permutation(arch.num_chunks):
            hyper, opt, loss = hyper_step(
                hyper, opt, pseudo[:, c, :], t_rows, np.full(num_pseudo, c),
                rng.standard_normal((num_pseudo, arch.latent_dim)),
                trainable=CONSOLIDATION_TRAINABLE, prior=stored,
            )
            total += loss
        logger.debug("consolidate up to task %d: replayed task %d  -elbo/chunk=%.4f",
                     k, j, total / (arch.num_chunks * num_pseudo))
    return hyper
