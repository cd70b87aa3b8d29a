"""
Continual runtime
=================
Runs the task stream in order.  For each task it trains B base models,
fits and consolidates the hypernetwork, and keeps a small exemplar buffer.
Inference decodes ensembles from the stored priors, fine-tunes each member
on the buffer and combines them by majority vote.  The Single-SSL and
EWC-SSL baselines share the same base learner and data pipeline.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from bench_data import (
    LabelledSet,
    SemiTask,
    TaskStream,
    UnlabelledSet,
    balanced_counts,
    empty_labelled,
    empty_unlabelled,
)
from bench_metrics import AccuracyMatrix
from config import ExperimentConfig, resolve_threads
from consolidation import PriorStore, aggregate_priors, consolidate, provisional_store, record_prior
from errors import ContractError, DataFormatError, ShapeError, StateError
from hypernet_vae import HyperParams, TaskDescriptor, hyper_from_config, iter_sampled_models, train_hypernet
from semi_acgan import (
    GanArch,
    ModelParams,
    TrainSettings,
    accuracy,
    class_log_likelihood_grads,
    fit,
    init_params,
    predict,
    recalibrate_batch_norm,
    train_base,
)
from tensor_core import Graph, Node, ParamBundle, rng_stream
from weight_codec import flatten, load_checkpoint, save_checkpoint

logger = logging.getLogger(__name__)

METHODS = ("mcssl", "single-ssl", "ewc-ssl")
STATE_FILE = "state.json"
HYPER_FILE = "hyper.mcwt"
BUFFER_FILE = "buffer.npz"


# ---------------------------------------------------------------------------
# Exemplar buffer
# ---------------------------------------------------------------------------

def _concat_labelled(parts: Sequence[LabelledSet], shape: tuple[int, int, int]) -> LabelledSet:
    if not parts:
        return empty_labelled(shape)
    return LabelledSet(
        np.concatenate([p.images for p in parts]),
        np.concatenate([p.labels for p in parts]),
        np.concatenate([p.ids for p in parts]),
    )


def _concat_unlabelled(parts: Sequence[UnlabelledSet], shape: tuple[int, int, int]) -> UnlabelledSet:
    if not parts:
        return empty_unlabelled(shape)
    return UnlabelledSet(np.concatenate([p.images for p in parts]), np.concatenate([p.ids for p in parts]))


@dataclass
class ExemplarBuffer:
    """Per-task labelled and unlabelled exemplars kept for inference-time fine-tuning."""

    image_shape: tuple[int, int, int]
    labelled: dict[int, LabelledSet] = field(default_factory=dict)
    unlabelled: dict[int, UnlabelledSet] = field(default_factory=dict)

    @property
    def task_ids(self) -> tuple[int, ...]:
        return tuple(self.labelled)

    def task_slice(self, task_id: int) -> tuple[LabelledSet, UnlabelledSet]:
        if task_id not in self.labelled:
            raise StateError(f"buffer holds nothing for task {task_id}")
        return self.labelled[task_id], self.unlabelled[task_id]

    def joint(self) -> tuple[LabelledSet, UnlabelledSet]:
        return (
            _concat_labelled(list(self.labelled.values()), self.image_shape),
            _concat_unlabelled(list(self.unlabelled.values()), self.image_shape),
        )

    def save(self, path: Path) -> None:
        arrays: dict[str, np.ndarray] = {"image_shape": np.asarray(self.image_shape)}
        for k in self.task_ids:
            lab, unl = self.task_slice(k)
            arrays[f"l{k}_images"], arrays[f"l{k}_labels"], arrays[f"l{k}_ids"] = lab.images, lab.labels, lab.ids
            arrays[f"u{k}_images"], arrays[f"u{k}_ids"] = unl.images, unl.ids
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path: Path, task_ids: Iterable[int]) -> "ExemplarBuffer":
        try:
            with np.load(path) as raw:
                buf = cls(tuple(int(d) for d in raw["image_shape"]))
                for k in task_ids:
                    buf.labelled[k] = LabelledSet(raw[f"l{k}_images"], raw[f"l{k}_labels"], raw[f"l{k}_ids"])
                    buf.unlabelled[k] = UnlabelledSet(raw[f"u{k}_images"], raw[f"u{k}_ids"])
        except (OSError, KeyError, ValueError) as exc:
            raise DataFormatError(f"cannot read exemplar buffer {path}: {exc}") from exc
        return buf


def update_buffer(
    buffer: ExemplarBuffer,
    task: SemiTask,
    m_buf: int,
    n_buf: int,
    rng: np.random.Generator,
) -> ExemplarBuffer:
    """Add a class-balanced labelled sample and a uniform unlabelled sample of ``task``."""
    if m_buf < 0 or n_buf < 0:
        raise ContractError(f"buffer capacities must be >= 0, got {m_buf}/{n_buf}")
    lab, unl = task.train.labelled, task.train.unlabelled
    keep: list[np.ndarray] = []
    if len(lab) <= m_buf:
        keep.append(np.arange(len(lab)))
    elif m_buf:
        classes = list(task.classes)
        for c, quota in zip(classes, balanced_counts(m_buf, len(classes))):
            pool = np.flatnonzero(lab.labels == c)
            keep.append(rng.choice(pool, size=min(quota, pool.size), replace=False))
    li = np.sort(np.concatenate(keep)) if keep else np.zeros(0, dtype=np.int64)
    ui = np.sort(rng.choice(len(unl), size=min(n_buf, len(unl)), replace=False))

    out = ExemplarBuffer(buffer.image_shape, dict(buffer.labelled), dict(buffer.unlabelled))
    out.labelled[task.task_id] = LabelledSet(lab.images[li], lab.labels[li], lab.ids[li])
    out.unlabelled[task.task_id] = UnlabelledSet(unl.images[ui], unl.ids[ui])
    logger.debug("Buffer task %d: %d labelled, %d unlabelled", task.task_id, li.size, ui.size)
    return out


# ---------------------------------------------------------------------------
# State
# ---------------------------------------------------------------------------

class MaterializationTracker:
    """Counts decoded ensemble members alive at once."""

    def __init__(self) -> None:
        self.live = 0
        self.peak = 0
        self.total = 0

    @contextmanager
    def hold(self) -> Iterator[None]:
        self.live += 1
        self.total += 1
        self.peak = max(self.peak, self.live)
        try:
            yield
        finally:
            self.live -= 1


@dataclass
class ExperimentState:
    config: ExperimentConfig
    method: str
    priors: PriorStore
    buffer: ExemplarBuffer
    matrix: AccuracyMatrix
    hyper: HyperParams | None = None
    model: ModelParams | None = None            # baselines: the sequentially trained model
    fisher: dict[str, np.ndarray] | None = None  # ewc-ssl: accumulated diagonal Fisher
    anchor: dict[str, np.ndarray] | None = None  # ewc-ssl: θ* after the previous task
    base_accuracy: list[float] = field(default_factory=list)
    peak_live_models: int = 0

    @property
    def tasks_done(self) -> int:
        return len(self.buffer.task_ids)


def new_state(cfg: ExperimentConfig, method: str = "mcssl") -> ExperimentState:
    if method not in METHODS:
        raise ContractError(f"unknown method {method!r}; expected one of {METHODS}")
    shape = (cfg.channels, cfg.image_size, cfg.image_size)
    return ExperimentState(cfg, method, PriorStore(), ExemplarBuffer(shape), AccuracyMatrix(cfg.num_tasks))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def _base_init(cfg: ExperimentConfig, k: int, l: int) -> ModelParams:
    arch = GanArch.from_config(cfg)
    if cfg.shared_init:
        return init_params(arch, rng_stream(cfg.seed, "init"))
    return init_params(arch, rng_stream(cfg.seed, "init", k, l))


def _train_base_models(task: SemiTask, cfg: ExperimentConfig) -> list[ModelParams]:
    k = task.task_id

    def one(l: int) -> ModelParams:
        return train_base(task, cfg, rng_stream(cfg.seed, "base", k, l), init=_base_init(cfg, k, l))

    threads = min(resolve_threads(), cfg.num_base_models)
    if threads == 1:
        return [one(l) for l in range(cfg.num_base_models)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, range(cfg.num_base_models)))


def _run_mcssl(state: ExperimentState, task: SemiTask) -> None:
    cfg, k = state.config, task.task_id
    models = _train_base_models(task, cfg)
    state.base_accuracy.append(float(np.mean([accuracy(m, task.test.labelled, task.classes) for m in models])))
    logger.info("Task %d: %d base models, mean test accuracy %.4f", k, len(models), state.base_accuracy[-1])

    hyper = state.hyper
    if hyper is None:
        hyper = hyper_from_config(tuple(flatten(models[0]).manifest), cfg, rng_stream(cfg.seed, "hyper-init"))

    def replay(epoch: int, h: HyperParams) -> HyperParams:
        store = provisional_store(state.priors, k, h)
        return consolidate(h, store, k, cfg.pseudo_models, cfg, rng_stream(cfg.seed, "consolidate", k, epoch))

    t = TaskDescriptor(k, cfg.num_tasks)
    hyper = train_hypernet(models, t, hyper, cfg, rng_stream(cfg.seed, "hypernet", k), on_epoch_end=replay)
    state.hyper = hyper
    state.priors = record_prior(state.priors, k, hyper)


def _run_baseline(state: ExperimentState, task: SemiTask) -> None:
    cfg, k = state.config, task.task_id
    init = state.model if state.model is not None else _base_init(cfg, k, 0)
    penalty = None
    if state.method == "ewc-ssl" and state.fisher is not None and cfg.ewc_lambda > 0:
        penalty = make_ewc_penalty(state.fisher, state.anchor, cfg.ewc_lambda)
    state.model = train_base(task, cfg, rng_stream(cfg.seed, "base", k, 0), init=init, penalty=penalty)
    state.base_accuracy.append(accuracy(state.model, task.test.labelled, task.classes))
    logger.info("Task %d: %s model test accuracy %.4f", k, state.method, state.base_accuracy[-1])


def run_task(state: ExperimentState, task: SemiTask) -> ExperimentState:
    """Learn ``task``; only buffer exemplars and prior statistics outlive the call."""
    if task.task_id != state.tasks_done:
        raise StateError(f"expected task {state.tasks_done}, got task {task.task_id}")
    cfg = state.config
    if state.method == "mcssl":
        _run_mcssl(state, task)
    else:
        _run_baseline(state, task)
    state.buffer = update_buffer(
        state.buffer, task, cfg.buffer_labelled, cfg.buffer_unlabelled, rng_stream(cfg.seed, "buffer", task.task_id)
    )
    if state.method == "ewc-ssl":
        lab, _ = state.buffer.task_slice(task.task_id)
        # the penalty only ever anchors to the task just finished
        state.fisher = estimate_fisher(state.model, lab, TrainSettings.from_config(cfg))
        state.anchor = {n: v.copy() for n, v in state.model.discriminator.items()}
    return state


# ---------------------------------------------------------------------------
# EWC
# ---------------------------------------------------------------------------

def estimate_fisher(model: ModelParams, labelled: LabelledSet, settings: TrainSettings | None = None) -> dict[str, np.ndarray]:
    """Diagonal Fisher of D: mean squared per-example class log-likelihood gradient."""
    fisher = {n: np.zeros_like(v) for n, v in model.discriminator.items()}
    count = 0
    for grads in class_log_likelihood_grads(model, labelled, settings):
        for n, g in grads.items():
            fisher[n] += g * g
        count += 1
    if count:
        fisher = {n: f / count for n, f in fisher.items()}
    return fisher


def ewc_penalty_value(
    params: dict[str, np.ndarray], fisher: dict[str, np.ndarray], anchor: dict[str, np.ndarray], lam: float
) -> float:
    """(λ/2) Σ F (θ - θ*)²."""
    return float(0.5 * lam * sum(np.sum(fisher[n] * (params[n] - anchor[n]) ** 2) for n in fisher))


def make_ewc_penalty(fisher: dict[str, np.ndarray], anchor: dict[str, np.ndarray], lam: float):
    def penalty(g: Graph, nodes: dict[str, Node]) -> Node:
        total = None
        for n, f in fisher.items():
            diff = nodes[n] - anchor[n]
            term = (g.constant(f) * diff * diff).sum()
            total = term if total is None else total + term
        return (0.5 * lam) * total

    return penalty


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------

def majority_vote(votes: Sequence[np.ndarray]) -> np.ndarray:
    """Most frequent label per item; ties go to the lowest label."""
    if not len(votes):
        raise ContractError("majority vote over zero models")
    lengths = {len(v) for v in votes}
    if len(lengths) != 1:
        raise ShapeError(f"vote lists of unequal length: {[len(v) for v in votes]}")
    stacked = np.stack([np.asarray(v, dtype=np.int64) for v in votes])  # (models, items)
    if stacked.size == 0:
        return np.zeros(0, dtype=np.int64)
    if stacked.min() < 0:
        raise ContractError("labels must be non-negative")
    counts = np.zeros((int(stacked.max()) + 1, stacked.shape[1]), dtype=np.int64)
    items = np.broadcast_to(np.arange(stacked.shape[1]), stacked.shape)
    np.add.at(counts, (stacked, items), 1)
    return counts.argmax(axis=0)


def fine_tune(
    model: ModelParams,
    labelled: LabelledSet,
    unlabelled: UnlabelledSet,
    cfg: ExperimentConfig,
    rng: np.random.Generator,
    classes: Sequence[int] = (),
) -> ModelParams:
    """Run the Semi-ACGAN objective on buffer data; empty buffer → unchanged."""
    if cfg.ft_epochs == 0 or len(labelled) + len(unlabelled) == 0:
        return model.copy()
    cond = sorted(set(labelled.classes) | set(classes))
    return fit(model, labelled, unlabelled, cond, TrainSettings.for_fine_tuning(cfg), rng)


def _buffer_images(labelled: LabelledSet, unlabelled: UnlabelledSet) -> np.ndarray:
    return np.concatenate([labelled.images, unlabelled.images])


def prepare_member(
    model: ModelParams,
    labelled: LabelledSet,
    unlabelled: UnlabelledSet,
    cfg: ExperimentConfig,
    rng: np.random.Generator,
    classes: Sequence[int],
) -> ModelParams:
    """Batch-norm recalibration, buffer fine-tuning, recalibration."""
    images = _buffer_images(labelled, unlabelled)
    s = TrainSettings.from_config(cfg)
    model = recalibrate_batch_norm(model, images, s)
    model = fine_tune(model, labelled, unlabelled, cfg, rng, classes)
    return recalibrate_batch_norm(model, images, s)


def _vote_accuracy(votes: list[np.ndarray], test: LabelledSet) -> tuple[np.ndarray, float]:
    labels = majority_vote(votes)
    acc = float(np.mean(labels == test.labels)) if len(test) else 0.0
    return labels, acc


def _seen_classes(tasks: Sequence[SemiTask]) -> list[int]:
    return sorted({c for t in tasks for c in t.classes})


def infer_task_agnostic(
    state: ExperimentState,
    tasks: Sequence[SemiTask],
    rng: np.random.Generator,
    ensemble_size: int | None = None,
    tracker: MaterializationTracker | None = None,
) -> tuple[list[np.ndarray], list[float]]:
    """Aggregate prior → E decoded members → buffer fine-tuning → vote on every seen task."""
    if not len(state.priors):
        raise StateError("task-agnostic inference needs at least one stored prior")
    cfg = state.config
    count = ensemble_size or cfg.ensemble_size
    tracker = tracker or MaterializationTracker()
    allowed = _seen_classes(tasks)
    lab, unl = state.buffer.joint()
    votes: list[list[np.ndarray]] = [[] for _ in tasks]
    members = iter_sampled_models(aggregate_priors(state.priors), state.hyper, count, rng)
    for member in members:
        with tracker.hold():
            member = prepare_member(member, lab, unl, cfg, rng, allowed)
            for j, task in enumerate(tasks):
                votes[j].append(predict(member, task.test.labelled.images, allowed))
            del member
    results = [_vote_accuracy(v, t.test.labelled) for v, t in zip(votes, tasks)]
    state.peak_live_models = max(state.peak_live_models, tracker.peak)
    return [r[0] for r in results], [r[1] for r in results]


def infer_task_aware(
    state: ExperimentState,
    tasks: Sequence[SemiTask],
    rng: np.random.Generator,
    ensemble_size: int | None = None,
    tracker: MaterializationTracker | None = None,
) -> tuple[list[np.ndarray], list[float]]:
    """One ensemble per task from that task's prior, fine-tuned on its buffer slice."""
    cfg = state.config
    count = ensemble_size or cfg.ensemble_size
    tracker = tracker or MaterializationTracker()
    preds, row = [], []
    for task in tasks:
        prior = state.priors[task.task_id]
        t = TaskDescriptor(task.task_id, cfg.num_tasks)
        lab, unl = state.buffer.task_slice(task.task_id)
        votes = []
        for member in iter_sampled_models(prior, state.hyper, count, rng, t=t):
            with tracker.hold():
                member = prepare_member(member, lab, unl, cfg, rng, task.classes)
                votes.append(predict(member, task.test.labelled.images, task.classes))
                del member
        labels, acc = _vote_accuracy(votes, task.test.labelled)
        preds.append(labels)
        row.append(acc)
    state.peak_live_models = max(state.peak_live_models, tracker.peak)
    return preds, row


def infer_baseline(state: ExperimentState, tasks: Sequence[SemiTask], rng: np.random.Generator, task_aware: bool) -> list[float]:
    """Single-model row; buffer fine-tuning happens on a throwaway copy."""
    if state.model is None:
        raise StateError("baseline inference before any task was trained")
    cfg = state.config
    if task_aware:
        row = []
        for task in tasks:
            lab, unl = state.buffer.task_slice(task.task_id)
            member = prepare_member(state.model, lab, unl, cfg, rng, task.classes)
            row.append(accuracy(member, task.test.labelled, task.classes))
        return row
    allowed = _seen_classes(tasks)
    lab, unl = state.buffer.joint()
    member = prepare_member(state.model, lab, unl, cfg, rng, allowed)
    return [accuracy(member, task.test.labelled, allowed) for task in tasks]


def evaluate_row(state: ExperimentState, tasks: Sequence[SemiTask], task_aware: bool | None = None) -> list[float]:
    """Accuracy on every task seen so far, after the latest task."""
    cfg = state.config
    aware = cfg.task_aware if task_aware is None else task_aware
    rng = rng_stream(cfg.seed, "infer", len(tasks) - 1)
    if state.method == "mcssl":
        infer = infer_task_aware if aware else infer_task_agnostic
        _, row = infer(state, tasks, rng)
        return row
    return infer_baseline(state, tasks, rng, aware)


# ---------------------------------------------------------------------------
# Experiment driver
# ---------------------------------------------------------------------------

def run_experiment(
    stream: TaskStream,
    cfg: ExperimentConfig,
    method: str = "mcssl",
    out_dir: str | Path | None = None,
    state: ExperimentState | None = None,
) -> ExperimentState:
    """Train and evaluate task by task, saving state after each when ``out_dir`` is given."""
    state = state or new_state(cfg, method)
    if len(stream) != cfg.num_tasks:
        raise ContractError(f"stream has {len(stream)} tasks, config expects {cfg.num_tasks}")
    for task in stream.tasks[state.tasks_done:]:
        state = run_task(state, task)
        row = evaluate_row(state, stream.tasks[:task.task_id + 1])
        state.matrix.append_row(row)
        logger.info("%s after task %d: %s", method, task.task_id + 1, " ".join(f"{a:.3f}" for a in row))
        if out_dir is not None:
            save_state(state, out_dir)
    return state


def baseline_single_ssl(stream: TaskStream, cfg: ExperimentConfig) -> AccuracyMatrix:
    return run_experiment(stream, cfg, "single-ssl").matrix


def baseline_ewc_ssl(stream: TaskStream, cfg: ExperimentConfig) -> AccuracyMatrix:
    if cfg.ewc_lambda < 0:
        raise ContractError(f"ewc_lambda must be >= 0, got {cfg.ewc_lambda}")
    return run_experiment(stream, cfg, "ewc-ssl").matrix


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def _method_dir(out_dir: str | Path, method: str) -> Path:
    return Path(out_dir) / method


def save_state(state: ExperimentState, out_dir: str | Path) -> Path:
    """Write ``<out>/<method>/state.json`` plus checkpoints and the buffer."""
    root = _method_dir(out_dir, state.method)
    root.mkdir(parents=True, exist_ok=True)
    doc = {
        "method": state.method,
        "config": state.config.to_dict(),
        "tasks_done": state.tasks_done,
        "priors": state.priors.to_dict(),
        "matrix": state.matrix.to_dict(),
        "base_accuracy": state.base_accuracy,
        "peak_live_models": state.peak_live_models,
        "hyper_manifest": [[n, list(s)] for n, s in state.hyper.target_manifest] if state.hyper else None,
    }
    if state.hyper is not None:
        save_checkpoint(state.hyper, root / HYPER_FILE)
    if state.model is not None:
        save_checkpoint(state.model, root / "model.mcwt")
    if state.fisher is not None:
        save_checkpoint(ParamBundle(params=state.fisher), root / "ewc_fisher.mcwt")
        save_checkpoint(ParamBundle(params=state.anchor), root / "ewc_anchor.mcwt")
    state.buffer.save(root / BUFFER_FILE)
    path = root / STATE_FILE
    path.write_text(json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8")
    logger.debug("Saved %s state after %d tasks to %s", state.method, state.tasks_done, root)
    return path


def load_state(out_dir: str | Path, method: str) -> ExperimentState:
    root = _method_dir(out_dir, method)
    path = root / STATE_FILE
    if not path.exists():
        raise StateError(f"no saved {method} state under {root}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path} is not valid JSON: {exc}") from exc

    cfg = ExperimentConfig.from_dict(doc["config"])
    done = int(doc["tasks_done"])
    state = new_state(cfg, doc["method"])
    state.priors = PriorStore.from_dict(doc["priors"])
    state.matrix = AccuracyMatrix.from_dict(doc["matrix"])
    state.base_accuracy = [float(a) for a in doc["base_accuracy"]]
    state.peak_live_models = int(doc["peak_live_models"])
    state.buffer = ExemplarBuffer.load(root / BUFFER_FILE, range(done))
    if doc.get("hyper_manifest"):
        raw = load_checkpoint(root / HYPER_FILE, HyperParams)
        manifest = tuple((n, tuple(s)) for n, s in doc["hyper_manifest"])
        state.hyper = HyperParams(params=raw.params, target_manifest=manifest, chunk_size=cfg.chunk_size)
    if (root / "model.mcwt").exists():
        state.model = load_checkpoint(root / "model.mcwt", ModelParams)
    if (root / "ewc_fisher.mcwt").exists():
        state.fisher = load_checkpoint(root / "ewc_fisher.mcwt", ParamBundle).params
        state.anchor = load_checkpoint(root / "ewc_anchor.mcwt", ParamBundle).params
    if len(state.matrix.rows) != done:
        raise StateError(f"{path}: {len(state.matrix.rows)} matrix rows for {done} finished tasks")
    logger.info("Resuming %s after %d of %d tasks", method, done, cfg.num_tasks)
    return state
