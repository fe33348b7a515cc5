"""Box embeddings for conjunctive queries.

Entities and concepts are points, relations are boxes. A query is embedded by
walking its shape template: anchors are points, edges project (translate and
widen) the box of their source, and nodes with several in-edges intersect the
incoming boxes. Unions are embedded branch by branch and scored with the
closest branch.
"""

from __future__ import annotations

import json
import math
import struct
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from config import logger
from constants import CHECKPOINT_FORMAT, MODEL_CONSTANTS
from errors import ArityError, CheckpointError, ConfigError, ContractError, NumericError
from kg import SymbolTable
from query import ConjunctiveQuery, QueryShape, match_shape
import strings as S


@dataclass(frozen=True)
class Box:
    """Center and non-negative offset; tensors of shape (..., d)."""

    center: torch.Tensor
    offset: torch.Tensor


@dataclass(frozen=True)
class QueryEmbedding:
    """One box per union branch."""

    branches: tuple[Box, ...]


@dataclass(frozen=True)
class QueryPlan:
    """A query bound to its template: node ids per anchor, relation id per edge."""

    shape: QueryShape
    anchors: tuple[int, ...]
    relations: tuple[int, ...]


@dataclass
class Gradients:
    """Gradient per named parameter, detached from the graph."""

    tensors: dict[str, torch.Tensor]

    def __getitem__(self, name: str) -> torch.Tensor:
        return self.tensors[name]

    def norm(self) -> float:
        return math.sqrt(sum(float((g * g).sum()) for g in self.tensors.values()))


class CenterIntersection(nn.Module):
    """Attention over input centers, softmax taken across inputs per dimension."""

    def __init__(self, dim: int):
        super().__init__()
        self.layer1 = nn.Linear(dim, dim)
        self.layer2 = nn.Linear(dim, dim)

    def forward(self, centers: torch.Tensor) -> torch.Tensor:
        hidden = F.relu(self.layer1(centers))
        attention = F.softmax(self.layer2(hidden), dim=0)
        return torch.sum(attention * centers, dim=0)


class OffsetIntersection(nn.Module):
    """DeepSets gate: shrinks the element-wise minimum of the input offsets."""

    def __init__(self, dim: int):
        super().__init__()
        self.layer1 = nn.Linear(dim, dim)
        self.layer2 = nn.Linear(dim, dim)
        self.layer3 = nn.Linear(dim, dim)

    def forward(self, offsets: torch.Tensor) -> torch.Tensor:
        hidden = F.relu(self.layer2(F.relu(self.layer1(offsets))))
        gate = torch.sigmoid(self.layer3(hidden.mean(dim=0)))
        smallest, _ = torch.min(offsets, dim=0)
        return smallest * gate


class BoxModel(nn.Module):
    """
    Parameters of the box model.

    Args:
        symbols: Vocabulary; node ids index ``entity_embedding`` rows and
            relation ids (``type`` included) index the relation tables
        dim: Embedding dimension d
        gamma: Margin
        variant: ``q2b`` (plain loss) or ``o2b`` (generalization-weighted loss)
        seed: Initialization seed
    """

    def __init__(self, symbols: SymbolTable, dim: int, gamma: float, variant: str = "o2b", seed: int = 0):
        super().__init__()
        if variant not in MODEL_CONSTANTS.VARIANTS:
            raise ConfigError(S.CONFIG_BAD_VALUE.format(key="variant", value=variant))
        if dim <= 0 or gamma <= 0:
            raise ConfigError(S.CONFIG_POSITIVE.format(key="dim/gamma", value=f"{dim}/{gamma}"))
        self.symbols = symbols
        self.dim = dim
        self.gamma = float(gamma)
        self.variant = variant
        self.seed = seed

        generator = torch.Generator().manual_seed(seed)
        bound = MODEL_CONSTANTS.INIT_SCALE / math.sqrt(dim)

        def uniform(rows: int, low: float, high: float) -> torch.Tensor:
            return low + (high - low) * torch.rand(rows, dim, generator=generator)

        self.entity_embedding = nn.Parameter(uniform(symbols.num_nodes, -bound, bound))
        self.relation_center = nn.Parameter(uniform(symbols.num_relations, -bound, bound))
        self.relation_offset = nn.Parameter(uniform(symbols.num_relations, 0.0, bound))
        self.center_net = CenterIntersection(dim)
        self.offset_net = OffsetIntersection(dim)
        for module in (self.center_net, self.offset_net):
            for layer in module.children():
                limit = math.sqrt(6.0 / (layer.in_features + layer.out_features))
                with torch.no_grad():
                    layer.weight.copy_((torch.rand(dim, dim, generator=generator) * 2 - 1) * limit)
                    layer.bias.zero_()

        self._plans: dict[ConjunctiveQuery, QueryPlan] = {}

    def clamp_offsets(self) -> None:
        with torch.no_grad():
            self.relation_offset.clamp_(min=0.0)

    def plan(self, q: ConjunctiveQuery) -> QueryPlan:
        cached = self._plans.get(q)
        if cached is None:
            cached = compile_query(self.symbols, q)
            self._plans[q] = cached
        return cached


# =============================================================================
# OPERATORS
# =============================================================================


def embed_entity(model: BoxModel, c: int | str | torch.Tensor) -> Box:
    """Point box (row, 0) for a node id, name or id tensor."""
    if isinstance(c, str):
        c = model.symbols.node_id(c)
    ids = torch.as_tensor(c, dtype=torch.long)
    if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= model.symbols.num_nodes):
        raise ContractError(f"node id out of range: {c}")
    center = model.entity_embedding[ids]
    return Box(center, torch.zeros_like(center))


def project(box: Box, relation: int | str | torch.Tensor, model: BoxModel) -> Box:
    if isinstance(relation, str):
        relation = model.symbols.relation_id(relation)
    ids = torch.as_tensor(relation, dtype=torch.long)
    return Box(box.center + model.relation_center[ids], box.offset + model.relation_offset[ids])


def intersect(boxes: Sequence[Box], model: BoxModel) -> Box:
    if len(boxes) < 2:
        raise ArityError(S.ARITY.format(count=len(boxes)))
    centers = torch.stack([b.center for b in boxes])
    offsets = torch.stack([b.offset for b in boxes])
    return Box(model.center_net(centers), model.offset_net(offsets))


def compile_query(symbols: SymbolTable, q: ConjunctiveQuery) -> QueryPlan:
    """Bind q to its shape template and resolve its symbols."""
    match = match_shape(q)
    anchors = tuple(symbols.node_id(match.nodes[n].name) for n in match.shape.anchors)
    relations = tuple(symbols.relation_id(r) for r in match.relations)
    return QueryPlan(match.shape, anchors, relations)


def _embed_group(model: BoxModel, shape: QueryShape, anchors: torch.Tensor, relations: torch.Tensor) -> QueryEmbedding:
    """Embed a batch of plans sharing one shape; anchors (B, a), relations (B, e)."""
    anchor_slot = {n: k for k, n in enumerate(shape.anchors)}
    branches = []
    for group in shape.branch_edges():
        boxes: dict[str, Box] = {}
        pending: dict[str, list[Box]] = defaultdict(list)
        needed = defaultdict(int)
        for j in group:
            needed[shape.edges[j][1]] += 1
        for j in sorted(group, key=shape.topological_edges().index):
            src, dst = shape.edges[j]
            if src in anchor_slot:
                source = embed_entity(model, anchors[:, anchor_slot[src]])
            else:
                source = boxes[src]
            pending[dst].append(project(source, relations[:, j], model))
            if len(pending[dst]) == needed[dst]:
                incoming = pending.pop(dst)
                boxes[dst] = incoming[0] if len(incoming) == 1 else intersect(incoming, model)
        branches.append(boxes[shape.distinguished])
    return QueryEmbedding(tuple(branches))


def embed_plans(model: BoxModel, plans: Sequence[QueryPlan]) -> QueryEmbedding:
    """Batched embedding of plans that all share one shape."""
    if not plans:
        raise ContractError(S.EMPTY_BATCH)
    shape = plans[0].shape
    if any(p.shape.name != shape.name for p in plans):
        raise ContractError("embed_plans needs plans of a single shape")
    anchors = torch.tensor([p.anchors for p in plans], dtype=torch.long)
    relations = torch.tensor([p.relations for p in plans], dtype=torch.long)
    return _embed_group(model, shape, anchors, relations)


def embed_query(model: BoxModel, q: ConjunctiveQuery) -> QueryEmbedding:
    """Embedding of one query; each branch box has shape (d,)."""
    batched = embed_plans(model, [model.plan(q)])
    return QueryEmbedding(tuple(Box(b.center[0], b.offset[0]) for b in batched.branches))


def distance(embedding: QueryEmbedding, points: torch.Tensor) -> torch.Tensor:
    """
    L1 distance from points to the closest branch center.

    ``points`` is (..., d) and broadcasts against the branch centers; the
    result drops the last dimension.
    """
    per_branch = [torch.abs(points - b.center).sum(dim=-1) for b in embedding.branches]
    if len(per_branch) == 1:
        return per_branch[0]
    return torch.stack(per_branch).min(dim=0).values


def prob(dist: torch.Tensor | float, gamma: float) -> torch.Tensor:
    return torch.sigmoid(gamma - torch.as_tensor(dist))


def _log_sigmoid(x: torch.Tensor) -> torch.Tensor:
    return F.logsigmoid(x).clamp(min=math.log(MODEL_CONSTANTS.LOG_CLAMP))


# =============================================================================
# LOSS AND GRADIENTS
# =============================================================================


def plan_distances(model: BoxModel, plans: Sequence[QueryPlan], targets: torch.Tensor) -> torch.Tensor:
    """
    Distances d(targets[i, t], plans[i]) grouped by shape.

    Args:
        plans: M plans of any shapes
        targets: (M, t) node ids

    Returns:
        (M, t) tensor
    """
    groups: dict[str, list[int]] = defaultdict(list)
    for i, p in enumerate(plans):
        groups[p.shape.name].append(i)
    order, pieces = [], []
    for name in sorted(groups):
        idx = groups[name]
        embedding = embed_plans(model, [plans[i] for i in idx])
        widened = QueryEmbedding(
            tuple(Box(b.center.unsqueeze(1), b.offset.unsqueeze(1)) for b in embedding.branches)
        )
        pieces.append(distance(widened, model.entity_embedding[targets[idx]]))
        order.extend(idx)
    stacked = torch.cat(pieces)
    return stacked[torch.argsort(torch.tensor(order, dtype=torch.long))]


@dataclass(frozen=True)
class BatchItem:
    """One (query, positive answer, negatives) training triple."""

    query: ConjunctiveQuery
    positive: int
    negatives: tuple[int, ...]
    gens: tuple[ConjunctiveQuery, ...] = ()


def batch_loss(model: BoxModel, batch: Sequence[BatchItem], positive_weight: float = 1.0) -> torch.Tensor:
    """
    Mean loss over the batch.

    The positive set of an item is its query plus its distinct
    generalizations, each weighted 1/|P| (times ``positive_weight``);
    negatives are scored against the query alone.
    """
    if not batch:
        raise ConfigError(S.EMPTY_BATCH)
    if any(not item.negatives for item in batch):
        raise ConfigError(S.CONFIG_POSITIVE.format(key="k_negatives", value=0))

    plans = [model.plan(item.query) for item in batch]
    targets = torch.tensor([(item.positive, *item.negatives) for item in batch], dtype=torch.long)
    dist = plan_distances(model, plans, targets)
    negative_term = -_log_sigmoid(dist[:, 1:] - model.gamma).mean(dim=1)
    positive_term = -_log_sigmoid(model.gamma - dist[:, 0])

    if model.variant == "o2b":
        owners, gen_plans, gen_targets, sizes = [], [], [], []
        for i, (item, own) in enumerate(zip(batch, plans)):
            distinct = [p for p in dict.fromkeys(model.plan(g) for g in item.gens) if p != own]
            owners += [i] * len(distinct)
            gen_plans += distinct
            gen_targets += [(item.positive,)] * len(distinct)
            sizes.append(1 + len(distinct))
        if gen_plans:
            gen_dist = plan_distances(model, gen_plans, torch.tensor(gen_targets, dtype=torch.long))[:, 0]
            positive_term = positive_term.index_add(
                0, torch.tensor(owners, dtype=torch.long), -_log_sigmoid(model.gamma - gen_dist)
            )
        positive_term = positive_term / torch.tensor(sizes, dtype=dist.dtype)

    return (positive_weight * positive_term + negative_term).mean()


def loss(
    model: BoxModel,
    query: ConjunctiveQuery,
    positive: int,
    negatives: Sequence[int],
    gens: Iterable[ConjunctiveQuery] = (),
) -> torch.Tensor:
    """Loss of one training triple; ``q2b`` models ignore ``gens``."""
    return batch_loss(model, [BatchItem(query, positive, tuple(negatives), tuple(gens))])


def backward(model: BoxModel, batch: Sequence[BatchItem]) -> tuple[float, Gradients]:
    """
    Mean batch loss and its gradients.

    Raises:
        NumericError: non-finite loss or gradient; ``parameter`` names the culprit
    """
    model.zero_grad(set_to_none=False)
    value = batch_loss(model, batch)
    if not torch.isfinite(value):
        raise NumericError(S.NON_FINITE.format(where="loss"), "loss")
    value.backward()
    grads = {}
    for name, param in model.named_parameters():
        grad = param.grad if param.grad is not None else torch.zeros_like(param)
        if not torch.isfinite(grad).all():
            raise NumericError(S.NON_FINITE.format(where=f"gradient of {name}"), name)
        grads[name] = grad.detach().clone()
    return float(value), Gradients(grads)


def sgd_step(model: BoxModel, grads: Gradients, lr: float) -> None:
    """Plain SGD update followed by the offset clamp."""
    with torch.no_grad():
        for name, param in model.named_parameters():
            param -= lr * grads[name]
    model.clamp_offsets()


def check_finite(model: BoxModel) -> None:
    for name, param in model.named_parameters():
        if not torch.isfinite(param).all():
            raise NumericError(S.NON_FINITE.format(where=name), name)


# =============================================================================
# SCORING
# =============================================================================


def score_all(model: BoxModel, queries: Sequence[ConjunctiveQuery], chunk: int = 256) -> np.ndarray:
    """Distances of every query to every node point, shape (len(queries), num_nodes)."""
    result = np.empty((len(queries), model.symbols.num_nodes), dtype=np.float64)
    points = model.entity_embedding.detach()
    by_shape: dict[str, list[int]] = defaultdict(list)
    for i, q in enumerate(queries):
        by_shape[model.plan(q).shape.name].append(i)
    with torch.no_grad():
        for name in sorted(by_shape):
            idx = by_shape[name]
            for start in range(0, len(idx), chunk):
                part = idx[start : start + chunk]
                embedding = embed_plans(model, [model.plan(queries[i]) for i in part])
                dist = torch.stack(
                    [torch.cdist(b.center, points, p=1) for b in embedding.branches]
                ).min(dim=0).values
                result[part] = dist.double().numpy()
    return result


def containment_gap(
    model: BoxModel,
    pairs: Sequence[tuple[ConjunctiveQuery, ConjunctiveQuery]],
    answers: Sequence[Iterable[int]],
) -> float:
    """
    Mean of d(v, q_super) - d(v, q_sub) over the answers v of each q_sub.

    Non-positive values mean the entailed query's box sits at least as close
    to the entities as the entailing one.
    """
    gaps = []
    with torch.no_grad():
        for (sub, sup), ids in zip(pairs, answers):
            ids = sorted(ids)
            if not ids:
                continue
            points = model.entity_embedding[torch.tensor(ids, dtype=torch.long)]
            gaps.append(distance(embed_query(model, sup), points) - distance(embed_query(model, sub), points))
    if not gaps:
        return 0.0
    return float(torch.cat(gaps).mean())


# =============================================================================
# CHECKPOINTS
# =============================================================================


def _metadata(model: BoxModel, extra: Mapping | None) -> dict:
    return {
        "version": CHECKPOINT_FORMAT.VERSION,
        "dim": model.dim,
        "gamma": model.gamma,
        "variant": model.variant,
        "seed": model.seed,
        "symbols": model.symbols.to_dict(),
        "arrays": [
            {"name": name, "shape": list(t.shape)} for name, t in model.state_dict().items()
        ],
        "extra": dict(extra or {}),
    }


def save(model: BoxModel, path: str | Path, extra: Mapping | None = None) -> Path:
    """Write magic, length-prefixed JSON metadata, then little-endian float32 arrays."""
    path = Path(path)
    header = json.dumps(_metadata(model, extra), sort_keys=True, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_FORMAT.MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for tensor in model.state_dict().values():
            f.write(tensor.detach().cpu().numpy().astype(CHECKPOINT_FORMAT.DTYPE).tobytes())
    logger.debug(f"Saved checkpoint {path} ({len(header)} metadata bytes)")
    return path


def read_metadata(path: str | Path) -> tuple[dict, bytes]:
    path = Path(path)
    data = path.read_bytes()
    magic = CHECKPOINT_FORMAT.MAGIC
    if not data.startswith(magic):
        raise CheckpointError(S.BAD_MAGIC.format(path=path))
    start = len(magic) + CHECKPOINT_FORMAT.LENGTH_BYTES
    if len(data) < start:
        raise CheckpointError(S.TRUNCATED.format(path=path))
    (length,) = struct.unpack("<I", data[len(magic) : start])
    if len(data) < start + length:
        raise CheckpointError(S.TRUNCATED.format(path=path))
    try:
        meta = json.loads(data[start : start + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CheckpointError(S.BAD_MAGIC.format(path=path)) from None
    if meta.get("version") != CHECKPOINT_FORMAT.VERSION:
        raise CheckpointError(S.BAD_MAGIC.format(path=path))
    return meta, data[start + length :]


def load(path: str | Path) -> BoxModel:
    """Rebuild a model from a checkpoint written by ``save``."""
    meta, payload = read_metadata(path)
    model = BoxModel(
        SymbolTable.from_dict(meta["symbols"]), meta["dim"], meta["gamma"], meta["variant"], meta["seed"]
    )
    itemsize = np.dtype(CHECKPOINT_FORMAT.DTYPE).itemsize
    state, offset = {}, 0
    for entry in meta["arrays"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        end = offset + count * itemsize
        if end > len(payload):
            raise CheckpointError(S.TRUNCATED.format(path=path))
        array = np.frombuffer(payload, dtype=CHECKPOINT_FORMAT.DTYPE, count=count, offset=offset)
        state[entry["name"]] = torch.from_numpy(array.astype(np.float32).reshape(entry["shape"]))
        offset = end
    if offset != len(payload):
        raise CheckpointError(S.TRUNCATED.format(path=path))
    model.load_state_dict(state)
    return model
