"""SGD training loop with periodic validation and early stopping on HITS@3."""

from __future__ import annotations

import copy
import json
import queue
import threading
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np
import torch

from config import logger, read_key_value_file
from constants import DESK_SCALE, MODEL_CONSTANTS, SAMPLER_DEFAULTS, TRAIN_DEFAULTS
import database
from errors import ConfigError, NumericError
from evaluation import evaluate
from kg import SymbolTable
from model import BatchItem, BoxModel, backward, check_finite, save, sgd_step
from sampler import EvalSample, TrainSample, complement, draw_negatives
import strings as S
from utils import sub_rng


@dataclass(frozen=True)
class TrainConfig:
    dim: int = TRAIN_DEFAULTS.DIM
    learning_rate: float = TRAIN_DEFAULTS.LEARNING_RATE
    batch_size: int = TRAIN_DEFAULTS.BATCH_SIZE
    max_steps: int = TRAIN_DEFAULTS.MAX_STEPS
    k_negatives: int = TRAIN_DEFAULTS.K_NEGATIVES
    eval_every: int = TRAIN_DEFAULTS.EVAL_EVERY
    patience: int = TRAIN_DEFAULTS.PATIENCE
    gamma: float = TRAIN_DEFAULTS.GAMMA
    seed: int = 0
    strategy: str = "plain"
    variant: str = "q2b"
    desk_scale: bool = False
    deterministic: bool = False
    threads: int = 1

    def __post_init__(self):
        for key in ("dim", "learning_rate", "batch_size", "max_steps", "k_negatives", "eval_every", "gamma", "threads"):
            value = getattr(self, key)
            if value <= 0:
                raise ConfigError(S.CONFIG_POSITIVE.format(key=key, value=value))
        if self.patience < 0:
            raise ConfigError(S.CONFIG_BAD_VALUE.format(key="patience", value=self.patience))
        if self.variant not in MODEL_CONSTANTS.VARIANTS:
            raise ConfigError(S.CONFIG_BAD_VALUE.format(key="variant", value=self.variant))
        if self.strategy not in SAMPLER_DEFAULTS.STRATEGIES:
            raise ConfigError(S.CONFIG_BAD_VALUE.format(key="strategy", value=self.strategy))

    @classmethod
    def build(cls, values: Mapping[str, object] | None = None) -> TrainConfig:
        """
        Config from raw values; the desk preset applies first so explicit
        values still win over it.
        """
        values = dict(values or {})
        known = {f.name: f for f in fields(cls)}
        for key in values:
            if key not in known:
                raise ConfigError(S.CONFIG_UNKNOWN_KEY.format(key=key))
        typed = {k: _coerce(k, v, known[k].type) for k, v in values.items()}
        merged = {}
        if typed.get("desk_scale"):
            merged.update(desk_preset())
        merged.update(typed)
        return cls(**merged)

    @classmethod
    def from_file(cls, path: str | Path | None, overrides: Mapping[str, object] | None = None) -> TrainConfig:
        values: dict[str, object] = dict(read_key_value_file(path)) if path else {}
        values.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.build(values)

    def as_dict(self) -> dict:
        return asdict(self)


def desk_preset() -> dict[str, object]:
    return {
        "dim": DESK_SCALE.DIM,
        "max_steps": DESK_SCALE.MAX_STEPS,
        "batch_size": DESK_SCALE.BATCH_SIZE,
        "gamma": DESK_SCALE.GAMMA,
        "eval_every": DESK_SCALE.EVAL_EVERY,
        "learning_rate": DESK_SCALE.LEARNING_RATE,
        "desk_scale": True,
    }


def _coerce(key: str, value: object, annotation: str) -> object:
    if not isinstance(value, str):
        return value
    text = value.strip()
    try:
        if annotation == "int":
            return int(text)
        if annotation == "float":
            return float(text)
        if annotation == "bool":
            lowered = text.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
    except ValueError:
        raise ConfigError(S.CONFIG_BAD_VALUE.format(key=key, value=value)) from None
    return text


@dataclass
class RunManifest:
    config: dict
    digests: dict[str, str] = field(default_factory=dict)
    history: list[dict] = field(default_factory=list)
    best_step: int | None = None
    best_hits3: float | None = None
    best_checkpoint: str | None = None
    diverged_at: int | None = None
    stopped_early: bool = False
    steps_run: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(self.to_json(), encoding="utf-8")
        return path

    @classmethod
    def read(cls, path: str | Path) -> RunManifest:
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))


def make_batches(
    samples: Sequence[TrainSample],
    config: TrainConfig,
    seed: int,
    entities: Sequence[int],
    epochs: int | None = None,
) -> Iterator[list[BatchItem]]:
    """
    Stream batches of (query, positive, negatives) triples.

    Samples are reshuffled every epoch; each visit draws one positive
    uniformly and ``k_negatives`` fresh negatives. Batches run across epoch
    boundaries, so only the final batch of a finite stream can be short.
    """
    if not samples:
        raise ConfigError(S.NO_SAMPLES)
    rng = sub_rng(seed, "batches")
    pool = np.asarray(sorted(entities), dtype=np.int64)
    complements: dict[int, np.ndarray] = {}
    batch: list[BatchItem] = []
    epoch = 0
    while epochs is None or epoch < epochs:
        for i in rng.permutation(len(samples)):
            sample = samples[int(i)]
            if int(i) not in complements:
                complements[int(i)] = complement(sample.positives, pool)
            positives = sorted(sample.positives)
            positive = positives[int(rng.integers(len(positives)))]
            negs = draw_negatives(complements[int(i)], config.k_negatives, rng)
            batch.append(BatchItem(sample.query, positive, tuple(int(n) for n in negs), tuple(sample.gens)))
            if len(batch) == config.batch_size:
                yield batch
                batch = []
        epoch += 1
    if batch:
        yield batch


_DONE = object()


def _prefetch(batches: Iterator[list[BatchItem]], depth: int) -> Iterator[list[BatchItem]]:
    """Assemble batches on a worker thread, ``depth`` ahead of the consumer."""
    buffer: queue.Queue = queue.Queue(maxsize=depth)
    stop = threading.Event()

    def put(item) -> bool:
        while not stop.is_set():
            try:
                buffer.put(item, timeout=0.1)
                return True
            except queue.Full:
                continue
        return False

    def worker():
        try:
            for batch in batches:
                if not put(batch):
                    return
        except Exception as e:
            put(e)
        put(_DONE)

    thread = threading.Thread(target=worker, name="omqa-batches", daemon=True)
    thread.start()
    try:
        while True:
            item = buffer.get()
            if item is _DONE:
                return
            if isinstance(item, Exception):
                raise item
            yield item
    finally:
        stop.set()


def _validation_entry(step: int, metrics, loss: float) -> dict:
    row = metrics.overall
    return {
        "step": step,
        "hits@1": row.hits.get(1, 0.0),
        "hits@3": row.hits.get(3, 0.0),
        "hits@10": row.hits.get(10, 0.0),
        "mrr": row.mrr,
        "loss": loss,
    }


def train(
    config: TrainConfig,
    samples: Sequence[TrainSample],
    valid: Sequence[EvalSample],
    symbols: SymbolTable,
    entities: Sequence[int] | None = None,
    out_dir: str | Path | None = None,
    run_id: str | None = None,
    digests: Mapping[str, str] | None = None,
) -> tuple[BoxModel, RunManifest]:
    """
    Train a box model and return its best-on-validation parameters.

    Args:
        config: Hyperparameters
        samples: Training queries with positives (and gens for ``o2b``)
        valid: Validation queries with hard answers
        symbols: Vocabulary shared with the samples
        entities: Negative pool; every entity of ``symbols`` by default
        out_dir: Where ``best.ckpt`` and ``manifest.json`` go
        run_id: Ledger run receiving the evaluation history
        digests: Input file digests recorded in the manifest

    Returns:
        (model, manifest)
    """
    if not samples or not valid:
        raise ConfigError(S.NO_SAMPLES)
    torch.manual_seed(config.seed)
    torch.set_num_threads(1 if config.deterministic else config.threads)

    model = BoxModel(symbols, config.dim, config.gamma, config.variant, config.seed)
    manifest = RunManifest(config=config.as_dict(), digests=dict(digests or {}))
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    pool = symbols.entity_ids() if entities is None else list(entities)
    batches = make_batches(samples, config, config.seed, pool)
    if not config.deterministic:
        batches = _prefetch(batches, TRAIN_DEFAULTS.PREFETCH_DEPTH)

    best_state = copy.deepcopy(model.state_dict())
    best_hits3 = -1.0
    stale = 0
    running = 0.0

    def run_validation(step: int) -> bool:
        nonlocal best_state, best_hits3, stale
        metrics = evaluate(model, valid)
        entry = _validation_entry(step, metrics, running)
        manifest.history.append(entry)
        if run_id is not None:
            database.record_evaluation(run_id, step, entry, running)
        if entry["hits@3"] > best_hits3:
            best_hits3, stale = entry["hits@3"], 0
            best_state = copy.deepcopy(model.state_dict())
            manifest.best_step, manifest.best_hits3 = step, best_hits3
            if out is not None:
                manifest.best_checkpoint = save(model, out / "best.ckpt", {"step": step}).name
        else:
            stale += 1
        logger.info(
            S.VALIDATION.format(
                step=step, hits3=entry["hits@3"], mrr=entry["mrr"], best=best_hits3, best_step=manifest.best_step
            )
        )
        return stale >= config.patience

    step = 0
    for step, batch in enumerate(batches, start=1):
        try:
            running, grads = backward(model, batch)
            sgd_step(model, grads, config.learning_rate)
            check_finite(model)
        except NumericError as e:
            logger.error(f"{S.DIVERGED.format(step=step)} ({e.parameter})")
            manifest.diverged_at = step
            break
        if step % max(1, config.max_steps // 20) == 0:
            logger.info(S.TRAIN_PROGRESS.format(step=step, max_steps=config.max_steps, loss=running))
        if step % config.eval_every == 0 and run_validation(step):
            manifest.stopped_early = True
            logger.info(S.EARLY_STOP.format(step=step, evals=stale))
            break
        if step >= config.max_steps:
            break

    manifest.steps_run = step
    if not manifest.history and manifest.diverged_at is None:
        run_validation(step)
    if hasattr(batches, "close"):
        batches.close()

    model.load_state_dict(best_state)
    if out is not None:
        if manifest.best_checkpoint is None:
            manifest.best_checkpoint = save(model, out / "best.ckpt", {"step": manifest.best_step or 0}).name
        manifest.write(out / "manifest.json")
    return model, manifest
