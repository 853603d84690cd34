"""Datasets: citation plain-text loader, canonical TSV format, SBM generator,
split construction and sparsity perturbations."""

from __future__ import annotations

import hashlib
import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .graph import Graph

logger = logging.getLogger(__name__)

SPLIT_NAMES = ("train", "val", "test")


@dataclass(frozen=True, eq=False)
class Dataset:
    graph: Graph
    features: np.ndarray
    labels: np.ndarray
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray
    class_count: int
    name: str = "dataset"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.graph.num_nodes
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise ValueError(f"features must have {n} rows, got shape {self.features.shape}")
        if self.labels.shape != (n,):
            raise ValueError(f"labels must have shape ({n},), got {self.labels.shape}")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ValueError(f"labels must lie in [0, {self.class_count})")
        masks = [self.train_mask, self.val_mask, self.test_mask]
        for m in masks:
            if m.shape != (n,) or m.dtype != bool:
                raise ValueError("masks must be boolean vectors of length N")
        if (np.sum(masks, axis=0) > 1).any():
            raise ValueError("train/val/test masks overlap")
        for arr in (self.features, self.labels, *masks):
            arr.flags.writeable = False

    @property
    def num_nodes(self) -> int:
        return self.graph.num_nodes

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    def mask(self, split: str) -> np.ndarray:
        if split not in SPLIT_NAMES:
            raise ValueError(f"unknown split {split!r}")
        return getattr(self, f"{split}_mask")

    def with_(self, **changes) -> "Dataset":
        return replace(self, **changes)

    def content_hash(self) -> str:
        """SHA-256 over graph, features, labels and masks (name and meta excluded)."""
        h = hashlib.sha256()
        edges, weights = self.graph.edge_list()
        for arr in (
            np.array([self.num_nodes, self.class_count], dtype=np.int64),
            edges,
            weights,
            np.ascontiguousarray(self.features, dtype=np.float64),
            self.labels.astype(np.int64),
            self.train_mask,
            self.val_mask,
            self.test_mask,
        ):
            h.update(np.ascontiguousarray(arr).tobytes())
            h.update(b"|")
        return h.hexdigest()

    def equals(self, other: "Dataset") -> bool:
        return (
            self.graph == other.graph
            and self.class_count == other.class_count
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and all(np.array_equal(self.mask(s), other.mask(s)) for s in SPLIT_NAMES)
        )


def row_normalize(features: np.ndarray) -> np.ndarray:
    """Scale each row to unit L1 norm; all-zero rows are left at zero."""
    norms = np.abs(features).sum(axis=1, keepdims=True)
    return np.divide(features, norms, out=np.zeros_like(features, dtype=np.float64), where=norms > 0)


def _empty_masks(n):
    return tuple(np.zeros(n, dtype=bool) for _ in SPLIT_NAMES)


# --- citation plain text ---------------------------------------------------


def load_citation_plaintext(content_path, cites_path, name=None) -> Dataset:
    """Read the public ``.content`` / ``.cites`` pair.

    Content lines are ``id feat_1 ... feat_d class``; cites lines are two ids.
    Node indices follow first appearance in the content file; class tokens
    are numbered alphabetically. Citations touching unknown ids are dropped.
    """
    content_path, cites_path = Path(content_path), Path(cites_path)
    ids, rows, classes = {}, [], []
    arity = None
    with content_path.open(encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) < 3:
                raise ValueError(f"{content_path}:{lineno}: expected id, features and class")
            if arity is None:
                arity = len(tokens) - 2
            elif len(tokens) - 2 != arity:
                raise ValueError(
                    f"{content_path}:{lineno}: expected {arity} features, got {len(tokens) - 2}"
                )
            if tokens[0] in ids:
                raise ValueError(f"{content_path}:{lineno}: duplicate node id {tokens[0]!r}")
            try:
                rows.append([float(t) for t in tokens[1:-1]])
            except ValueError:
                raise ValueError(f"{content_path}:{lineno}: non-numeric feature token") from None
            ids[tokens[0]] = len(ids)
            classes.append(tokens[-1])
    n = len(ids)
    class_tokens = sorted(set(classes))
    class_index = {c: i for i, c in enumerate(class_tokens)}
    labels = np.array([class_index[c] for c in classes], dtype=np.int64)
    features = np.array(rows, dtype=np.float64).reshape(n, arity or 0)

    pairs, dangling, loops = set(), 0, 0
    with cites_path.open(encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) != 2:
                raise ValueError(f"{cites_path}:{lineno}: expected two node ids")
            a, b = tokens
            if a not in ids or b not in ids:
                dangling += 1
                continue
            u, v = ids[a], ids[b]
            if u == v:
                loops += 1
                continue
            pairs.add((min(u, v), max(u, v)))
    if dangling:
        logger.warning("dropped %d citation(s) referencing unknown node ids", dangling)
    if loops:
        logger.warning("dropped %d self-citation(s)", loops)
    edges = np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)
    graph = Graph.from_edges(n, edges)
    train, val, test = _empty_masks(n)
    return Dataset(
        graph,
        features,
        labels,
        train,
        val,
        test,
        class_count=len(class_tokens),
        name=name or content_path.stem,
        meta={"classes": class_tokens, "dropped_citations": dangling, "dropped_self_citations": loops},
    )


def load_citation_dir(path) -> Dataset:
    """Load the single ``*.content`` / ``*.cites`` pair found in a directory."""
    path = Path(path)
    contents = sorted(path.glob("*.content"))
    if len(contents) != 1:
        raise FileNotFoundError(f"expected exactly one *.content file in {path}, found {len(contents)}")
    cites = contents[0].with_suffix(".cites")
    if not cites.exists():
        raise FileNotFoundError(f"missing {cites}")
    return load_citation_plaintext(contents[0], cites)


# --- canonical TSV format --------------------------------------------------


def save_canonical(dataset: Dataset, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    edges, weights = dataset.graph.edge_list()
    with open(d / "edges.tsv", "w", encoding="utf-8", newline="\n") as f:
        weighted = not np.all(weights == 1.0)
        for (u, v), w in zip(edges, weights):
            f.write(f"{u}\t{v}\t{float(w)!r}\n" if weighted else f"{u}\t{v}\n")
    with open(d / "features.tsv", "w", encoding="utf-8", newline="\n") as f:
        for row in dataset.features:
            f.write("\t".join(repr(float(x)) for x in row) + "\n")
    with open(d / "labels.tsv", "w", encoding="utf-8", newline="\n") as f:
        f.writelines(f"{int(y)}\n" for y in dataset.labels)
    with open(d / "split.tsv", "w", encoding="utf-8", newline="\n") as f:
        for i in range(dataset.num_nodes):
            tag = next((s for s in SPLIT_NAMES if dataset.mask(s)[i]), "none")
            f.write(f"{i}\t{tag}\n")


def _read_lines(path):
    if not path.exists():
        raise FileNotFoundError(f"missing {path}")
    with open(path, encoding="utf-8") as f:
        return [line.rstrip("\n") for line in f if line.strip()]


def load_canonical(directory, class_count=None) -> Dataset:
    d = Path(directory)
    feat_lines = _read_lines(d / "features.tsv")
    features = np.array([[float(x) for x in line.split("\t")] for line in feat_lines], dtype=np.float64)
    n = len(feat_lines)
    if n and len({len(line.split("\t")) for line in feat_lines}) != 1:
        raise ValueError(f"{d / 'features.tsv'}: rows have inconsistent arity")
    labels = np.array([int(x) for x in _read_lines(d / "labels.tsv")], dtype=np.int64)
    if labels.shape[0] != n:
        raise ValueError(f"labels.tsv has {labels.shape[0]} entries but features.tsv has {n} rows")

    edges, weights = [], []
    for lineno, line in enumerate(_read_lines(d / "edges.tsv"), 1):
        parts = line.split("\t")
        if len(parts) not in (2, 3):
            raise ValueError(f"{d / 'edges.tsv'}:{lineno}: expected 'u<TAB>v[<TAB>w]'")
        u, v = int(parts[0]), int(parts[1])
        if not (0 <= u < n and 0 <= v < n):
            raise ValueError(f"{d / 'edges.tsv'}:{lineno}: index out of range [0, {n})")
        if u == v:
            raise ValueError(f"{d / 'edges.tsv'}:{lineno}: raw self-loop {u} {v}")
        edges.append((u, v))
        weights.append(float(parts[2]) if len(parts) == 3 else 1.0)
    graph = Graph.from_edges(n, np.array(edges, dtype=np.int64).reshape(-1, 2), weights)

    train, val, test = _empty_masks(n)
    masks = {"train": train, "val": val, "test": test}
    for lineno, line in enumerate(_read_lines(d / "split.tsv"), 1):
        node, tag = line.split("\t")
        i = int(node)
        if not 0 <= i < n:
            raise ValueError(f"{d / 'split.tsv'}:{lineno}: index out of range [0, {n})")
        if tag == "none":
            continue
        if tag not in masks:
            raise ValueError(f"{d / 'split.tsv'}:{lineno}: unknown split {tag!r}")
        if any(m[i] for m in masks.values()):
            raise ValueError(f"{d / 'split.tsv'}:{lineno}: node {i} assigned to more than one split")
        masks[tag][i] = True
    if class_count is None:
        class_count = int(labels.max()) + 1 if n else 0
    return Dataset(graph, features, labels, train, val, test, class_count=class_count, name=d.name)


# --- splits ----------------------------------------------------------------


def make_split(dataset: Dataset, per_class_train: int, val_count: int, test_count: int, seed: int = 0) -> Dataset:
    """Seeded split: ``per_class_train`` nodes of every class, then val and test from the rest."""
    rng = np.random.default_rng(seed)
    n = dataset.num_nodes
    train = np.zeros(n, dtype=bool)
    for c in range(dataset.class_count):
        members = np.flatnonzero(dataset.labels == c)
        if len(members) < per_class_train:
            raise ValueError(f"class {c} has {len(members)} nodes, fewer than per_class_train={per_class_train}")
        train[rng.choice(members, size=per_class_train, replace=False)] = True
    rest = rng.permutation(np.flatnonzero(~train))
    if val_count + test_count > len(rest):
        raise ValueError(f"only {len(rest)} nodes remain for val_count={val_count} + test_count={test_count}")
    val = np.zeros(n, dtype=bool)
    test = np.zeros(n, dtype=bool)
    val[rest[:val_count]] = True
    test[rest[val_count : val_count + test_count]] = True
    return dataset.with_(train_mask=train, val_mask=val, test_mask=test)


# --- synthetic SBM ---------------------------------------------------------


def synth_sbm(
    n: int,
    classes: int,
    p_in: float,
    p_out: float,
    feat_dim: int,
    signal_strength: float = 1.0,
    seed: int = 0,
) -> Dataset:
    """Stochastic block model with Gaussian class-conditional features.

    Each class gets a random mean direction of unit norm; a node's features
    are ``signal_strength * mean[label] + N(0, I)``. If the sampled graph is
    disconnected, the components are chained together by a path through one
    node of each (``meta['connected_by_path']``). No split is drawn.
    """
    if not 0.0 <= p_out <= p_in <= 1.0:
        raise ValueError(f"need 0 <= p_out <= p_in <= 1, got p_in={p_in}, p_out={p_out}")
    if n < classes or classes < 1:
        raise ValueError("need at least one node per class")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % classes).astype(np.int64)

    rows, cols = [], []
    chunk = max(1, 2_000_000 // max(n, 1))
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        block = labels[start:stop, None] == labels[None, :]
        prob = np.where(block, p_in, p_out)
        hit = rng.random((stop - start, n)) < prob
        r, c = np.nonzero(hit)
        r = r + start
        keep = c > r
        rows.append(r[keep])
        cols.append(c[keep])
    edges = np.stack([np.concatenate(rows), np.concatenate(cols)], axis=1)

    adj = sp.coo_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(n, n))
    n_comp, comp = connected_components(adj, directed=False)
    added = 0
    if n_comp > 1:
        reps = np.array([np.flatnonzero(comp == k)[0] for k in range(n_comp)])
        bridge = np.stack([reps[:-1], reps[1:]], axis=1)
        edges = np.concatenate([edges, bridge])
        added = len(bridge)
    graph = Graph.from_edges(n, edges)

    means = rng.standard_normal((classes, feat_dim))
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    features = signal_strength * means[labels] + rng.standard_normal((n, feat_dim))
    train, val, test = _empty_masks(n)
    return Dataset(
        graph,
        features,
        labels,
        train,
        val,
        test,
        class_count=classes,
        name=f"sbm-n{n}-c{classes}",
        meta={"connected_by_path": n_comp > 1, "added_edges": added, "seed": seed},
    )


SBM_DEFAULTS = {"n": 300, "c": 3, "pin": 0.1, "pout": 0.01, "d": 16, "s": 1.0, "seed": 0, "train": 20}


def parse_sbm_spec(spec: str) -> dict:
    """Parse ``sbm:n=300,c=3,pin=0.1,pout=0.01,d=16,s=1.0`` (prefix optional)."""
    body = spec[4:] if spec.startswith("sbm:") else spec
    out = dict(SBM_DEFAULTS)
    if body.strip():
        for item in body.split(","):
            if "=" not in item:
                raise ValueError(f"bad SBM spec item {item!r}; expected key=value")
            k, v = item.split("=", 1)
            k = k.strip()
            if k not in SBM_DEFAULTS and k not in ("val", "test"):
                raise ValueError(f"unknown SBM spec key {k!r}")
            out[k] = float(v) if k in ("pin", "pout", "s") else int(v)
    return out


def sbm_from_spec(spec: str) -> Dataset:
    """Generate an SBM and its split from a spec string.

    The split puts ``train`` nodes per class in training, ``val`` nodes
    (default 20% of N) in validation and, unless ``test`` is given, every
    remaining node in test.
    """
    p = parse_sbm_spec(spec)
    ds = synth_sbm(p["n"], p["c"], p["pin"], p["pout"], p["d"], p["s"], p["seed"])
    n_train = p["train"] * p["c"]
    val = p.get("val", int(round(0.2 * p["n"])))
    test = p.get("test", p["n"] - n_train - val)
    return make_split(ds, p["train"], val, test, seed=p["seed"])


# --- sparsity perturbations -----------------------------------------------


def perturb_edges(dataset: Dataset, keep_rate: float, seed: int = 0) -> Dataset:
    """Keep each undirected edge independently with probability ``keep_rate``."""
    if not 0.0 < keep_rate <= 1.0:
        raise ValueError(f"keep_rate must lie in (0, 1], got {keep_rate}")
    if keep_rate == 1.0:
        return dataset
    edges, weights = dataset.graph.edge_list()
    keep = np.random.default_rng(seed).random(len(edges)) < keep_rate
    graph = Graph.from_edges(dataset.num_nodes, edges[keep], weights[keep])
    return dataset.with_(graph=graph)


def perturb_features(dataset: Dataset, keep_rate: float, seed: int = 0) -> Dataset:
    """Zero the whole feature row of each node with probability ``1 - keep_rate``."""
    if not 0.0 < keep_rate <= 1.0:
        raise ValueError(f"keep_rate must lie in (0, 1], got {keep_rate}")
    if keep_rate == 1.0:
        return dataset
    keep = np.random.default_rng(seed).random(dataset.num_nodes) < keep_rate
    return dataset.with_(features=np.where(keep[:, None], dataset.features, 0.0))


def subsample_labels(dataset: Dataset, per_class: int, seed: int = 0) -> Dataset:
    """Shrink the train mask to ``per_class`` seeded picks per class."""
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    rng = np.random.default_rng(seed)
    train = np.zeros(dataset.num_nodes, dtype=bool)
    for c in range(dataset.class_count):
        members = np.flatnonzero(dataset.train_mask & (dataset.labels == c))
        if len(members) == 0:
            raise ValueError(f"class {c} has no training nodes")
        take = min(per_class, len(members))
        train[rng.choice(members, size=take, replace=False)] = True
    return dataset.with_(train_mask=train)


def load_dataset(path, fmt: str, *, row_norm: bool = True, split_seed: int = 0) -> Dataset:
    """Resolve a CLI ``--dataset/--format`` pair into a ready-to-train Dataset.

    Citation datasets receive the 20-per-class / 500 / 1000 split; canonical
    datasets keep their stored split.
    """
    if fmt.startswith("sbm"):
        ds = sbm_from_spec(fmt)
    elif fmt == "citation":
        if path is None:
            raise ValueError("--dataset is required for the citation format")
        ds = load_citation_dir(path)
        ds = make_split(ds, 20, 500, 1000, seed=split_seed)
    elif fmt == "canonical":
        if path is None:
            raise ValueError("--dataset is required for the canonical format")
        ds = load_canonical(path)
    else:
        raise ValueError(f"unknown dataset format {fmt!r}")
    features = row_normalize(ds.features) if row_norm else ds.features
    return ds.with_(features=features, meta={**ds.meta, "row_normalized": row_norm})


def cora_dir() -> Path | None:
    """Location of the plain-text Cora files, from ``$CORA_DIR`` if set."""
    env = os.environ.get("CORA_DIR")
    if env and (Path(env) / "cora.content").exists():
        return Path(env)
    return None
