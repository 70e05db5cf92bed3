"""Random-forest gesture classifier: bagged CART trees with Gini splits.

Determinism contract: given the same row order, params, and seed, training
produces bit-identical models. Per-tree seeds derive from the master seed
through a splitmix64 stream fixed up front, so trees could be grown in any
order (or in parallel) without changing the result. Split ties resolve to
the lower feature index, then the lower threshold.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import GestureClass, N_CLASSES

MODEL_FORMAT = "hugloop-forest"
MODEL_VERSION = 1

_MASK64 = (1 << 64) - 1


class ModelFormatError(Exception):
    """Raised for corrupt, truncated, or wrong-version model files."""


class SchemaMismatchError(Exception):
    """Raised when a model and a feature vector disagree on the registry."""


def splitmix64_stream(seed: int, count: int) -> list[int]:
    """First `count` outputs of the splitmix64 sequence started at `seed`."""
    state = seed & _MASK64
    out = []
    for _ in range(count):
        state = (state + 0x9E3779B97F4A7C15) & _MASK64
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        out.append(z ^ (z >> 31))
    return out


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    max_depth: int | None = None        # None = grow until pure
    min_leaf: int = 1
    features_per_split: int | None = None  # None = floor(sqrt(n_features))
    bootstrap: bool = True
    seed: int = 0

    def violations(self) -> list[str]:
        out = []
        if self.n_trees < 1:
            out.append(f"n_trees: need >= 1, got {self.n_trees}")
        if self.min_leaf < 1:
            out.append(f"min_leaf: need >= 1, got {self.min_leaf}")
        if self.features_per_split is not None and self.features_per_split < 1:
            out.append(f"features_per_split: need >= 1, got {self.features_per_split}")
        if self.max_depth is not None and self.max_depth < 1:
            out.append(f"max_depth: need >= 1, got {self.max_depth}")
        return out


@dataclass(frozen=True)
class Dataset:
    """Feature matrix plus integer class labels under one schema."""

    x: np.ndarray            # (n, d) float64
    y: np.ndarray            # (n,) int64, values are GestureClass ints
    schema_id: str

    def __post_init__(self):
        if self.x.ndim != 2 or self.y.ndim != 1 or len(self.x) != len(self.y):
            raise ValueError("dataset needs x of shape (n, d) and y of shape (n,)")

    @classmethod
    def from_rows(cls, rows: Sequence[tuple], schema_id: str | None = None) -> "Dataset":
        """Build from (FeatureVector, GestureClass) pairs."""
        if not rows:
            raise ValueError("empty dataset")
        sid = schema_id if schema_id is not None else rows[0][0].schema_id
        for fv, _ in rows:
            if fv.schema_id != sid:
                raise SchemaMismatchError(
                    f"row schema {fv.schema_id!r} != dataset schema {sid!r}"
                )
        x = np.stack([fv.values for fv, _ in rows]).astype(np.float64)
        y = np.array([int(label) for _, label in rows], dtype=np.int64)
        return cls(x=x, y=y, schema_id=sid)

    def __len__(self) -> int:
        return len(self.y)


# A tree is parallel arrays over nodes: feature[i] == -1 marks a leaf whose
# class counts sit in counts[i]; internal nodes route x[feature] <= threshold
# to left[i], else right[i].
Tree = dict


@dataclass(frozen=True)
class ForestModel:
    trees: tuple[Tree, ...]
    n_trees: int
    seed: int
    schema_id: str
    n_features: int
    params: ForestParams
    _cache: dict = field(default_factory=dict, compare=False, repr=False)


def _gini_of_counts(c0: float, c1: float, c2: float, c3: float, n: float) -> float:
    return 1.0 - ((c0 / n) ** 2 + (c1 / n) ** 2 + (c2 / n) ** 2 + (c3 / n) ** 2)


def _best_split(x: np.ndarray, y: np.ndarray, idx: np.ndarray, feats: np.ndarray, min_leaf: int):
    """Best (score, feature, threshold) over the candidate features, or None.

    Scores are weighted child Gini impurities; the scan keeps strict `<`
    improvements only, so the first feature (ascending index) and the first
    boundary (ascending threshold) win ties.
    """
    n = len(idx)
    best = None
    for f in feats:
        vals = x[idx, f]
        order = np.argsort(vals, kind="stable")
        sv = vals[order]
        sy = y[idx][order]
        onehot = np.zeros((n, N_CLASSES), dtype=np.float64)
        onehot[np.arange(n), sy] = 1.0
        pref = np.cumsum(onehot, axis=0)           # pref[i-1] = counts of first i rows
        total = pref[-1]
        i = np.arange(1, n, dtype=np.float64)      # left sizes
        ok = (sv[:-1] < sv[1:]) & (i >= min_leaf) & ((n - i) >= min_leaf)
        if not np.any(ok):
            continue
        lc = pref[:-1]
        rc = total[None, :] - lc
        gl = 1.0 - (
            (lc[:, 0] / i) ** 2 + (lc[:, 1] / i) ** 2
            + (lc[:, 2] / i) ** 2 + (lc[:, 3] / i) ** 2
        )
        gr = 1.0 - (
            (rc[:, 0] / (n - i)) ** 2 + (rc[:, 1] / (n - i)) ** 2
            + (rc[:, 2] / (n - i)) ** 2 + (rc[:, 3] / (n - i)) ** 2
        )
        score = (i * gl + (n - i) * gr) / n
        score[~ok] = np.inf
        k = int(np.argmin(score))                  # first minimum: lowest threshold
        if best is None or score[k] < best[0]:
            thr = (sv[k] + sv[k + 1]) / 2.0
            best = (float(score[k]), int(f), float(thr))
    return best


def _grow_tree(
    x: np.ndarray,
    y: np.ndarray,
    rng: np.random.Generator,
    fps: int,
    max_depth: int | None,
    min_leaf: int,
    bootstrap: bool,
) -> Tree:
    n, d = x.shape
    if bootstrap:
        root_idx = rng.integers(0, n, size=n)
    else:
        root_idx = np.arange(n)
    tree: Tree = {"feature": [], "threshold": [], "left": [], "right": [], "counts": []}

    def add_node() -> int:
        for key in ("feature", "threshold", "left", "right", "counts"):
            tree[key].append(None)
        return len(tree["feature"]) - 1

    def build(idx: np.ndarray, depth: int) -> int:
        node = add_node()
        counts = np.bincount(y[idx], minlength=N_CLASSES)
        n_node = len(idx)
        pure = int(np.max(counts)) == n_node
        depth_done = max_depth is not None and depth >= max_depth
        split = None
        if not pure and not depth_done and n_node >= 2 * min_leaf and n_node >= 2:
            feats = np.sort(rng.choice(d, size=min(fps, d), replace=False))
            cand = _best_split(x, y, idx, feats, min_leaf)
            if cand is not None:
                parent = _gini_of_counts(*counts.astype(np.float64), float(n_node))
                if cand[0] < parent:
                    split = cand
        if split is None:
            tree["feature"][node] = -1
            tree["threshold"][node] = 0.0
            tree["left"][node] = -1
            tree["right"][node] = -1
            tree["counts"][node] = [int(c) for c in counts]
            return node
        _, f, thr = split
        go_left = x[idx, f] <= thr
        tree["feature"][node] = f
        tree["threshold"][node] = thr
        tree["counts"][node] = None
        tree["left"][node] = build(idx[go_left], depth + 1)
        tree["right"][node] = build(idx[~go_left], depth + 1)
        return node

    build(root_idx, 0)
    return tree


def train(data: Dataset, params: ForestParams) -> ForestModel:
    bad = params.violations()
    if bad:
        raise ValueError("; ".join(bad))
    if len(data) == 0:
        raise ValueError("cannot train on an empty dataset")
    n, d = data.x.shape
    fps = params.features_per_split
    if fps is None:
        fps = max(1, math.isqrt(d))
    if fps > d:
        raise ValueError(f"features_per_split {fps} exceeds feature count {d}")
    seeds = splitmix64_stream(params.seed, params.n_trees)
    trees = tuple(
        _grow_tree(
            data.x,
            data.y,
            np.random.default_rng(s),
            fps,
            params.max_depth,
            params.min_leaf,
            params.bootstrap,
        )
        for s in seeds
    )
    return ForestModel(
        trees=trees,
        n_trees=params.n_trees,
        seed=params.seed,
        schema_id=data.schema_id,
        n_features=d,
        params=params,
    )


def _tree_arrays(model: ForestModel, k: int):
    cached = model._cache.get(k)
    if cached is None:
        tree = model.trees[k]
        feature = np.array(tree["feature"], dtype=np.int64)
        threshold = np.array(tree["threshold"], dtype=np.float64)
        left = np.array(tree["left"], dtype=np.int64)
        right = np.array(tree["right"], dtype=np.int64)
        counts = np.zeros((len(feature), N_CLASSES), dtype=np.float64)
        for i, c in enumerate(tree["counts"]):
            if c is not None:
                counts[i] = c
        sums = counts.sum(axis=1)
        freq = np.divide(counts, sums[:, None], out=np.zeros_like(counts), where=sums[:, None] > 0)
        cached = (feature, threshold, left, right, freq)
        model._cache[k] = cached
    return cached


def predict_proba_batch(model: ForestModel, x: np.ndarray) -> np.ndarray:
    """Class probabilities (n, 4): mean over trees of leaf class frequencies."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != model.n_features:
        raise SchemaMismatchError(
            f"input has {x.shape[1]} features, model expects {model.n_features}"
        )
    probs = np.zeros((len(x), N_CLASSES), dtype=np.float64)
    rows = np.arange(len(x))
    for k in range(model.n_trees):
        feature, threshold, left, right, freq = _tree_arrays(model, k)
        node = np.zeros(len(x), dtype=np.int64)
        while True:
            f = feature[node]
            active = f >= 0
            if not np.any(active):
                break
            sel = rows[active]
            vals = x[sel, f[active]]
            go_left = vals <= threshold[node[active]]
            node[sel] = np.where(go_left, left[node[active]], right[node[active]])
        probs += freq[node]
    probs /= model.n_trees
    return probs


def predict_proba(model: ForestModel, values: np.ndarray) -> np.ndarray:
    return predict_proba_batch(model, values)[0]


def predict(model: ForestModel, fv) -> tuple[GestureClass, np.ndarray]:
    """Predicted class and probabilities; ties break by class order."""
    schema = getattr(fv, "schema_id", None)
    if schema is not None and schema != model.schema_id:
        raise SchemaMismatchError(
            f"feature schema {schema!r} != model schema {model.schema_id!r}"
        )
    values = getattr(fv, "values", fv)
    probs = predict_proba(model, values)
    return GestureClass(int(np.argmax(probs))), probs


def predict_classes(model: ForestModel, x: np.ndarray) -> np.ndarray:
    return np.argmax(predict_proba_batch(model, x), axis=1)


@dataclass(frozen=True)
class EvalResult:
    confusion: np.ndarray    # (4, 4) counts, rows = true class, cols = predicted
    accuracy: float

    def __post_init__(self):
        assert self.confusion.shape == (N_CLASSES, N_CLASSES)


def evaluate(model: ForestModel, data: Dataset) -> EvalResult:
    if len(data) == 0:
        raise ValueError("cannot evaluate on empty data")
    if data.schema_id != model.schema_id:
        raise SchemaMismatchError(
            f"dataset schema {data.schema_id!r} != model schema {model.schema_id!r}"
        )
    pred = predict_classes(model, data.x)
    confusion = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(confusion, (data.y, pred), 1)
    accuracy = float(np.trace(confusion)) / float(len(data))
    return EvalResult(confusion=confusion, accuracy=accuracy)


def split_indices(n: int, fractions: Sequence[float], seed: int) -> list[np.ndarray]:
    """Deterministic shuffled split of range(n) into len(fractions) parts."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    out = []
    start = 0
    for frac in fractions[:-1]:
        stop = start + int(round(frac * n))
        out.append(order[start:stop])
        start = stop
    out.append(order[start:])
    return out


def _model_to_dict(model: ForestModel) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "schema_id": model.schema_id,
        "n_features": model.n_features,
        "n_trees": model.n_trees,
        "seed": model.seed,
        "params": {
            "n_trees": model.params.n_trees,
            "max_depth": model.params.max_depth,
            "min_leaf": model.params.min_leaf,
            "features_per_split": model.params.features_per_split,
            "bootstrap": model.params.bootstrap,
            "seed": model.params.seed,
        },
        "trees": list(model.trees),
    }


def save(model: ForestModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(_model_to_dict(model), sort_keys=True, separators=(",", ":")))


def dumps(model: ForestModel) -> str:
    return json.dumps(_model_to_dict(model), sort_keys=True, separators=(",", ":"))


def load(path: str | Path, expect_schema: str | None = None) -> ForestModel:
    try:
        doc = json.loads(Path(path).read_text())
        if doc.get("format") != MODEL_FORMAT:
            raise ModelFormatError(f"not a {MODEL_FORMAT} file: {path}")
        if doc.get("version") != MODEL_VERSION:
            raise ModelFormatError(f"unsupported model version {doc.get('version')}")
        params = ForestParams(**doc["params"])
        model = ForestModel(
            trees=tuple(doc["trees"]),
            n_trees=int(doc["n_trees"]),
            seed=int(doc["seed"]),
            schema_id=str(doc["schema_id"]),
            n_features=int(doc["n_features"]),
            params=params,
        )
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"corrupt or truncated model file {path}: {exc}") from exc
    if expect_schema is not None and model.schema_id != expect_schema:
        raise SchemaMismatchError(
            f"model schema {model.schema_id!r} != expected {expect_schema!r}"
        )
    return model
