"""From-scratch decision-tree ensembles.

Single CART trees split on Gini impurity with exhaustive midpoint
thresholds; the extra-trees variant draws one uniform threshold per
candidate feature instead. Random forests bag bootstrap replicas, extra
trees use the full sample, and gradient boosting fits one squared-error
regression tree per class and stage to softmax residuals. Feature
importance is the classic impurity-decrease accumulation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyNode, UntrainedModel
from .ingest import CLASS_ORDER, N_CLASSES, LabeledTable, ScamLabel


def gini_index(counts: np.ndarray) -> float:
    """1 - sum of squared class proportions."""
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        raise EmptyNode("gini of an empty node is undefined")
    p = counts / total
    return float(1.0 - (p * p).sum())


@dataclass
class Leaf:
    n_samples: int
    value: np.ndarray  # class proportions (K,) or a 1-element regression mean


@dataclass
class Split:
    feature: int
    threshold: float
    n_samples: int
    impurity_decrease: float
    left: "Split | Leaf"
    right: "Split | Leaf"


@dataclass(frozen=True)
class TreeConfig:
    max_depth: int | None = None
    min_samples_leaf: int = 1
    feature_subsample: int | str | None = "sqrt"  # "sqrt", None (all), or a count
    threshold_rule: str = "exhaustive"  # or "random_uniform"

    def __post_init__(self):
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be >= 1 when set")
        if self.threshold_rule not in ("exhaustive", "random_uniform"):
            raise ValueError(f"unknown threshold_rule {self.threshold_rule!r}")


@dataclass
class DecisionTree:
    root: Split | Leaf
    n_features: int
    n_root: int
    criterion: str  # "gini" or "squared_error"


def _n_candidates(cfg: TreeConfig, m: int) -> int:
    if cfg.feature_subsample is None:
        return m
    if cfg.feature_subsample == "sqrt":
        return max(1, int(math.floor(math.sqrt(m))))
    return max(1, min(int(cfg.feature_subsample), m))


def _candidate_features(cfg: TreeConfig, m: int, rng: np.random.Generator) -> np.ndarray:
    k = _n_candidates(cfg, m)
    if k == m:
        return np.arange(m)
    # sorted so equal-gain ties resolve to the lowest feature index
    return np.sort(rng.choice(m, size=k, replace=False))


def _best_exhaustive_gini(x: np.ndarray, y: np.ndarray, msl: int) -> tuple[float, float] | None:
    """Best midpoint threshold for one feature; returns (decrease, threshold)
    or None when no valid split exists. Ties keep the lowest threshold."""
    n = x.shape[0]
    if n < 2:
        return None
    order = np.argsort(x, kind="stable")
    xs = x[order]
    ys = y[order]
    onehot = np.zeros((n, N_CLASSES))
    onehot[np.arange(n), ys] = 1.0
    left = np.cumsum(onehot, axis=0)[:-1]
    total = onehot.sum(axis=0)
    nl = np.arange(1, n, dtype=np.float64)
    nr = n - nl
    valid = xs[:-1] < xs[1:]
    valid &= (nl >= msl) & (nr >= msl)
    if not valid.any():
        return None
    right = total[None, :] - left
    gini_l = 1.0 - ((left / nl[:, None]) ** 2).sum(axis=1)
    gini_r = 1.0 - ((right / nr[:, None]) ** 2).sum(axis=1)
    parent = 1.0 - ((total / n) ** 2).sum()
    decrease = parent - (nl * gini_l + nr * gini_r) / n
    decrease[~valid] = -np.inf
    best = int(np.argmax(decrease))
    if decrease[best] <= 0.0:
        return None
    a, b = xs[best], xs[best + 1]
    threshold = (a + b) / 2.0
    if not threshold < b:  # adjacent floats: fall back to the left value
        threshold = a
    return float(decrease[best]), float(threshold)


def _best_exhaustive_var(x: np.ndarray, r: np.ndarray, msl: int) -> tuple[float, float] | None:
    """Squared-error twin of the Gini scan, for regression targets."""
    n = x.shape[0]
    if n < 2:
        return None
    order = np.argsort(x, kind="stable")
    xs = x[order]
    rs = r[order]
    csum = np.cumsum(rs)
    csq = np.cumsum(rs * rs)
    nl = np.arange(1, n, dtype=np.float64)
    nr = n - nl
    valid = xs[:-1] < xs[1:]
    valid &= (nl >= msl) & (nr >= msl)
    if not valid.any():
        return None
    sum_l, sq_l = csum[:-1], csq[:-1]
    sum_r, sq_r = csum[-1] - sum_l, csq[-1] - sq_l
    var_l = np.maximum(sq_l / nl - (sum_l / nl) ** 2, 0.0)
    var_r = np.maximum(sq_r / nr - (sum_r / nr) ** 2, 0.0)
    parent = max(csq[-1] / n - (csum[-1] / n) ** 2, 0.0)
    decrease = parent - (nl * var_l + nr * var_r) / n
    decrease[~valid] = -np.inf
    best = int(np.argmax(decrease))
    if decrease[best] <= 0.0:
        return None
    a, b = xs[best], xs[best + 1]
    threshold = (a + b) / 2.0
    if not threshold < b:
        threshold = a
    return float(decrease[best]), float(threshold)


def _impurity(y_or_r: np.ndarray, criterion: str) -> float:
    if criterion == "gini":
        return gini_index(np.bincount(y_or_r, minlength=N_CLASSES))
    mean = y_or_r.mean()
    return float(np.mean((y_or_r - mean) ** 2))


def _random_uniform_split(x: np.ndarray, target: np.ndarray, criterion: str,
                          msl: int, rng: np.random.Generator) -> tuple[float, float] | None:
    lo, hi = float(x.min()), float(x.max())
    if not lo < hi:
        return None
    threshold = float(rng.uniform(lo, hi))
    mask = x <= threshold
    nl = int(mask.sum())
    nr = x.shape[0] - nl
    if nl < msl or nr < msl or nl == 0 or nr == 0:
        return None
    n = x.shape[0]
    parent = _impurity(target, criterion)
    child = (nl * _impurity(target[mask], criterion)
             + nr * _impurity(target[~mask], criterion)) / n
    decrease = parent - child
    if decrease <= 0.0:
        return None
    return decrease, threshold


def _leaf(target: np.ndarray, criterion: str) -> Leaf:
    n = target.shape[0]
    if criterion == "gini":
        value = np.bincount(target, minlength=N_CLASSES) / n
    else:
        value = np.array([target.mean()])
    return Leaf(n_samples=n, value=value)


def _grow(rows: np.ndarray, target: np.ndarray, cfg: TreeConfig, criterion: str,
          rng: np.random.Generator, depth: int) -> Split | Leaf:
    n = rows.shape[0]
    if n == 0:
        raise EmptyNode("cannot grow a tree node from zero rows")
    if (n < 2 * cfg.min_samples_leaf or n < 2
            or (cfg.max_depth is not None and depth >= cfg.max_depth)
            or _impurity(target, criterion) == 0.0):
        return _leaf(target, criterion)

    best: tuple[float, int, float] | None = None  # decrease, feature, threshold
    for f in _candidate_features(cfg, rows.shape[1], rng):
        x = rows[:, f]
        if cfg.threshold_rule == "exhaustive":
            found = (_best_exhaustive_gini(x, target, cfg.min_samples_leaf)
                     if criterion == "gini"
                     else _best_exhaustive_var(x, target, cfg.min_samples_leaf))
        else:
            found = _random_uniform_split(x, target, criterion,
                                          cfg.min_samples_leaf, rng)
        if found is not None and (best is None or found[0] > best[0]):
            best = (found[0], int(f), found[1])
    if best is None:
        return _leaf(target, criterion)
    decrease, feature, threshold = best
    mask = rows[:, feature] <= threshold
    left = _grow(rows[mask], target[mask], cfg, criterion, rng, depth + 1)
    right = _grow(rows[~mask], target[~mask], cfg, criterion, rng, depth + 1)
    return Split(feature=feature, threshold=threshold, n_samples=n,
                 impurity_decrease=decrease, left=left, right=right)


def grow_tree(rows: np.ndarray, y: np.ndarray, cfg: TreeConfig,
              rng: np.random.Generator) -> DecisionTree:
    """Gini classification tree over integer class codes."""
    rows = np.asarray(rows, dtype=np.float64)
    y = np.asarray(y, dtype=np.intp)
    root = _grow(rows, y, cfg, "gini", rng, depth=0)
    return DecisionTree(root=root, n_features=rows.shape[1],
                        n_root=rows.shape[0], criterion="gini")


def grow_regression_tree(rows: np.ndarray, r: np.ndarray, cfg: TreeConfig,
                         rng: np.random.Generator) -> DecisionTree:
    """Squared-error tree with mean-residual leaves."""
    rows = np.asarray(rows, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    root = _grow(rows, r, cfg, "squared_error", rng, depth=0)
    return DecisionTree(root=root, n_features=rows.shape[1],
                        n_root=rows.shape[0], criterion="squared_error")


def _apply_one(node: Split | Leaf, row: np.ndarray) -> np.ndarray:
    while isinstance(node, Split):
        node = node.left if row[node.feature] <= node.threshold else node.right
    return node.value


def tree_values(tree: DecisionTree, rows: np.ndarray) -> np.ndarray:
    """Leaf values row by row: (n, K) proportions or (n, 1) means."""
    rows = np.asarray(rows, dtype=np.float64)
    return np.array([_apply_one(tree.root, row) for row in rows])


def predict_tree(tree: DecisionTree, rows: np.ndarray) -> np.ndarray:
    """Class codes; argmax over leaf proportions (ties to lowest index)."""
    return tree_values(tree, rows).argmax(axis=1)


# ---------------------------------------------------------------------------
# Ensembles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: int | None = None
    min_samples_leaf: int = 1
    feature_subsample: int | str | None = "sqrt"
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")

    def to_dict(self) -> dict:
        return {"n_trees": self.n_trees, "max_depth": self.max_depth,
                "min_samples_leaf": self.min_samples_leaf,
                "feature_subsample": self.feature_subsample, "seed": self.seed}


@dataclass(frozen=True)
class BoostConfig:
    n_stages: int = 100
    learning_rate: float = 0.1
    max_depth: int = 3
    min_samples_leaf: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_stages < 1 or not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("need n_stages >= 1 and learning_rate in (0, 1]")

    def to_dict(self) -> dict:
        return {"n_stages": self.n_stages, "learning_rate": self.learning_rate,
                "max_depth": self.max_depth,
                "min_samples_leaf": self.min_samples_leaf, "seed": self.seed}


@dataclass
class ForestModel:
    trees: list[DecisionTree]
    feature_names: list[str]
    kind: str  # "rf" or "et"
    config: ForestConfig


@dataclass
class BoostingModel:
    init_scores: np.ndarray  # (K,) log prior scores
    stages: list[list[DecisionTree]]  # one squared-error tree per class per stage
    feature_names: list[str]
    config: BoostConfig
    deviance_path: list[float]  # training deviance after init and each stage


def _forest(table: LabeledTable, cfg: ForestConfig, kind: str) -> ForestModel:
    tree_cfg = TreeConfig(
        max_depth=cfg.max_depth,
        min_samples_leaf=cfg.min_samples_leaf,
        feature_subsample=cfg.feature_subsample,
        threshold_rule="exhaustive" if kind == "rf" else "random_uniform",
    )
    y = table.y
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n_trees)
    trees = []
    for seq in seeds:
        rng = np.random.default_rng(seq)
        if kind == "rf":
            idx = rng.integers(0, table.n_rows, size=table.n_rows)
            trees.append(grow_tree(table.rows[idx], y[idx], tree_cfg, rng))
        else:
            trees.append(grow_tree(table.rows, y, tree_cfg, rng))
    return ForestModel(trees=trees, feature_names=list(table.feature_names),
                       kind=kind, config=cfg)


def train_random_forest(table: LabeledTable, cfg: ForestConfig) -> ForestModel:
    """Bootstrap bagging, sqrt-feature subsets, exhaustive thresholds."""
    return _forest(table, cfg, "rf")


def train_extra_trees(table: LabeledTable, cfg: ForestConfig) -> ForestModel:
    """Full sample per tree, one uniform random threshold per candidate."""
    return _forest(table, cfg, "et")


def predict_forest(model: ForestModel, rows: np.ndarray) -> list[ScamLabel]:
    """Majority vote over per-tree hard predictions, ties to lowest code."""
    if not model.trees:
        raise UntrainedModel("forest has no trees")
    rows = np.asarray(rows, dtype=np.float64)
    votes = np.zeros((rows.shape[0], N_CLASSES), dtype=np.intp)
    for tree in model.trees:
        codes = predict_tree(tree, rows)
        votes[np.arange(rows.shape[0]), codes] += 1
    return [CLASS_ORDER[c] for c in votes.argmax(axis=1)]


def train_gradient_boosting(table: LabeledTable, cfg: BoostConfig) -> BoostingModel:
    """Stagewise softmax boosting: each stage fits one regression tree per
    class to the residual (onehot - probability) and adds
    learning_rate * prediction to that class score. Training deviance is
    recorded after every stage and never increases."""
    y = table.y
    n = table.n_rows
    counts = np.bincount(y, minlength=N_CLASSES)
    priors = counts / n
    init = np.log(np.clip(priors, 1e-15, None))
    scores = np.tile(init, (n, 1))
    onehot = np.zeros((n, N_CLASSES))
    onehot[np.arange(n), y] = 1.0

    tree_cfg = TreeConfig(max_depth=cfg.max_depth,
                          min_samples_leaf=cfg.min_samples_leaf,
                          feature_subsample=None, threshold_rule="exhaustive")

    def deviance(s: np.ndarray) -> float:
        shifted = s - s.max(axis=1, keepdims=True)
        logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        return float(-logp[np.arange(n), y].mean())

    path = [deviance(scores)]
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n_stages * N_CLASSES)
    stages: list[list[DecisionTree]] = []
    for stage in range(cfg.n_stages):
        shifted = np.exp(scores - scores.max(axis=1, keepdims=True))
        probs = shifted / shifted.sum(axis=1, keepdims=True)
        stage_trees = []
        for k in range(N_CLASSES):
            rng = np.random.default_rng(seeds[stage * N_CLASSES + k])
            residual = onehot[:, k] - probs[:, k]
            tree = grow_regression_tree(table.rows, residual, tree_cfg, rng)
            scores[:, k] += cfg.learning_rate * tree_values(tree, table.rows)[:, 0]
            stage_trees.append(tree)
        stages.append(stage_trees)
        path.append(deviance(scores))
    return BoostingModel(init_scores=init, stages=stages,
                         feature_names=list(table.feature_names),
                         config=cfg, deviance_path=path)


def boosting_scores(model: BoostingModel, rows: np.ndarray) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.float64)
    scores = np.tile(model.init_scores, (rows.shape[0], 1))
    for stage_trees in model.stages:
        for k, tree in enumerate(stage_trees):
            scores[:, k] += model.config.learning_rate * tree_values(tree, rows)[:, 0]
    return scores


def predict_boosting(model: BoostingModel, rows: np.ndarray) -> list[ScamLabel]:
    if not model.stages:
        raise UntrainedModel("boosting model has no stages")
    codes = boosting_scores(model, rows).argmax(axis=1)
    return [CLASS_ORDER[c] for c in codes]


# ---------------------------------------------------------------------------
# Importance
# ---------------------------------------------------------------------------

def _accumulate_importance(node: Split | Leaf, n_root: int, acc: np.ndarray) -> None:
    if isinstance(node, Leaf):
        return
    acc[node.feature] += (node.n_samples / n_root) * node.impurity_decrease
    _accumulate_importance(node.left, n_root, acc)
    _accumulate_importance(node.right, n_root, acc)


def feature_importance(model: ForestModel | BoostingModel) -> np.ndarray:
    """Mean impurity-decrease importance per feature, normalized to sum 1
    (all-zero when no split was ever made)."""
    if isinstance(model, ForestModel):
        trees = model.trees
    else:
        trees = [t for stage in model.stages for t in stage]
    if not trees:
        raise UntrainedModel("model has no trees")
    acc = np.zeros(len(model.feature_names))
    for tree in trees:
        _accumulate_importance(tree.root, tree.n_root, acc)
    acc /= len(trees)
    total = acc.sum()
    if total > 0:
        acc = acc / total
    return acc


def importance_ranking(feature_names: list[str], vim: np.ndarray) -> list[tuple[str, float]]:
    """Descending by importance; exact ties order alphabetically."""
    pairs = sorted(zip(feature_names, vim), key=lambda p: (-p[1], p[0]))
    return [(name, float(v)) for name, v in pairs]


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _node_to_dict(node: Split | Leaf) -> dict:
    if isinstance(node, Leaf):
        return {"leaf": True, "n": node.n_samples, "value": node.value.tolist()}
    return {"leaf": False, "feature": node.feature, "threshold": node.threshold,
            "n": node.n_samples, "decrease": node.impurity_decrease,
            "left": _node_to_dict(node.left), "right": _node_to_dict(node.right)}


def _node_from_dict(doc: dict) -> Split | Leaf:
    if doc["leaf"]:
        return Leaf(n_samples=int(doc["n"]), value=np.asarray(doc["value"], dtype=np.float64))
    return Split(feature=int(doc["feature"]), threshold=float(doc["threshold"]),
                 n_samples=int(doc["n"]), impurity_decrease=float(doc["decrease"]),
                 left=_node_from_dict(doc["left"]), right=_node_from_dict(doc["right"]))


def _tree_to_dict(tree: DecisionTree) -> dict:
    return {"root": _node_to_dict(tree.root), "n_features": tree.n_features,
            "n_root": tree.n_root, "criterion": tree.criterion}


def _tree_from_dict(doc: dict) -> DecisionTree:
    return DecisionTree(root=_node_from_dict(doc["root"]),
                        n_features=int(doc["n_features"]),
                        n_root=int(doc["n_root"]), criterion=doc["criterion"])


def tree_model_to_dict(model: ForestModel | BoostingModel) -> dict:
    if isinstance(model, ForestModel):
        return {"kind": model.kind, "config": model.config.to_dict(),
                "feature_names": model.feature_names,
                "trees": [_tree_to_dict(t) for t in model.trees]}
    return {"kind": "gb", "config": model.config.to_dict(),
            "feature_names": model.feature_names,
            "init_scores": model.init_scores.tolist(),
            "deviance_path": model.deviance_path,
            "stages": [[_tree_to_dict(t) for t in stage] for stage in model.stages]}


def tree_model_from_dict(doc: dict) -> ForestModel | BoostingModel:
    if doc["kind"] in ("rf", "et"):
        return ForestModel(trees=[_tree_from_dict(t) for t in doc["trees"]],
                           feature_names=list(doc["feature_names"]),
                           kind=doc["kind"], config=ForestConfig(**doc["config"]))
    return BoostingModel(
        init_scores=np.asarray(doc["init_scores"], dtype=np.float64),
        stages=[[_tree_from_dict(t) for t in stage] for stage in doc["stages"]],
        feature_names=list(doc["feature_names"]),
        config=BoostConfig(**doc["config"]),
        deviance_path=[float(v) for v in doc["deviance_path"]],
    )


def save_tree_model(model: ForestModel | BoostingModel, path: Path | str) -> None:
    Path(path).write_text(json.dumps(tree_model_to_dict(model), sort_keys=True),
                          encoding="utf-8")


def load_tree_model(path: Path | str) -> ForestModel | BoostingModel:
    return tree_model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
