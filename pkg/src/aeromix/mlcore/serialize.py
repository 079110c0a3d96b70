"""Versioned text serialization of fitted models.

Layout::

    aeromix-model 1
    kind gbt
    param learning_rate 0.1
    ...
    n_features 15
    base_score 41.2
    trees 100
    tree 7
    <node> <feature> <threshold> <left> <right> <n_samples> <value>
    ...

Trees are written as preorder node lists.  Floats use ``repr`` so a model
reloads bit-for-bit.
"""

import json
from pathlib import Path

import numpy as np

from ..exceptions import TableFormatError
from .ensemble import GradientBoostingRegressor, RandomForestRegressor
from .linear import LinearRegression
from .tree import RegressionTree

MAGIC = "aeromix-model"
VERSION = 1
_KINDS = {GradientBoostingRegressor: "gbt", RandomForestRegressor: "rf", LinearRegression: "linear"}
_CLASSES = {v: k for k, v in _KINDS.items()}


def _tree_lines(tree):
    yield f"tree {tree.n_nodes}"
    for i in range(tree.n_nodes):
        yield (f"{i} {tree.feature[i]} {float(tree.threshold[i])!r} {tree.left[i]} {tree.right[i]} "
               f"{tree.n_samples[i]} {float(tree.value[i])!r}")


def model_lines(model):
    kind = _KINDS[type(model)]
    yield f"{MAGIC} {VERSION}"
    yield f"kind {kind}"
    for name, value in sorted(model.get_params().items()):
        yield f"param {name} {json.dumps(value)}"
    yield f"n_features {model.n_features_in_}"
    if kind == "linear":
        yield "coef " + " ".join(repr(float(c)) for c in model.coef_)
        yield f"intercept {model.intercept_!r}"
        return
    if kind == "gbt":
        yield f"base_score {model.base_score_!r}"
    yield f"trees {len(model.trees_)}"
    for tree in model.trees_:
        yield from _tree_lines(tree)


def dumps_model(model):
    return "\n".join(model_lines(model)) + "\n"


class _Reader:
    def __init__(self, lines):
        self.lines = lines
        self.pos = 0

    def raw(self):
        if self.pos >= len(self.lines):
            raise TableFormatError("unexpected end of model file")
        self.pos += 1
        return self.lines[self.pos - 1]

    def next(self, key=None):
        tokens = self.raw().split(" ")
        if key is not None and tokens[0] != key:
            raise TableFormatError(f"line {self.pos}: expected {key!r}, got {tokens[0]!r}")
        return tokens

    def peek(self):
        return self.lines[self.pos].split(" ", 1)[0] if self.pos < len(self.lines) else None


def _read_tree(reader):
    n = int(reader.next("tree")[1])
    rows = [reader.next() for _ in range(n)]
    cols = list(zip(*rows)) if rows else [()] * 7
    return RegressionTree(
        feature=np.array(cols[1], dtype=np.int64),
        threshold=np.array([float(v) for v in cols[2]]),
        left=np.array(cols[3], dtype=np.int64),
        right=np.array(cols[4], dtype=np.int64),
        value=np.array([float(v) for v in cols[6]]),
        n_samples=np.array(cols[5], dtype=np.int64),
    )


def read_model(reader):
    magic = reader.next(MAGIC)
    if int(magic[1]) != VERSION:
        raise TableFormatError(f"unsupported model version {magic[1]}")
    kind = reader.next("kind")[1]
    params = {}
    while reader.peek() == "param":
        _, name, raw = reader.raw().split(" ", 2)
        params[name] = json.loads(raw)
    model = _CLASSES[kind](**params)
    model.n_features_in_ = int(reader.next("n_features")[1])
    if kind == "linear":
        model.coef_ = np.array([float(v) for v in reader.next("coef")[1:] if v])
        model.intercept_ = float(reader.next("intercept")[1])
        return model
    if kind == "gbt":
        model.base_score_ = float(reader.next("base_score")[1])
    n_trees = int(reader.next("trees")[1])
    model.trees_ = [_read_tree(reader) for _ in range(n_trees)]
    return model


def loads_model(text):
    return read_model(_Reader(text.splitlines()))


def save_model(model, path):
    Path(path).write_text(dumps_model(model), encoding="utf-8")


def load_model(path):
    return loads_model(Path(path).read_text(encoding="utf-8"))
