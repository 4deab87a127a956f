"""Claims, propagation graphs, and their on-disk formats."""

from __future__ import annotations

import ast
import json
import logging
import math
import re
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

log = logging.getLogger(__name__)


class CascadeError(ValueError):
    """A claim or dataset violates a structural invariant."""


class ClaimValidationError(CascadeError):
    def __init__(self, claim_id: str, reason: str):
        super().__init__(f"claim {claim_id!r}: {reason}")
        self.claim_id = claim_id
        self.reason = reason


@dataclass(frozen=True)
class LabelSet:
    names: tuple[str, ...]

    def __post_init__(self):
        if len(self.names) < 2:
            raise CascadeError("a label set needs at least two labels")
        if len(set(self.names)) != len(self.names):
            raise CascadeError(f"duplicate labels in {self.names}")

    def __len__(self):
        return len(self.names)

    def __contains__(self, label):
        return label in self.names

    def index(self, label: str) -> int:
        try:
            return self.names.index(label)
        except ValueError:
            raise CascadeError(f"unknown label {label!r}; expected one of {self.names}") from None

    def parse(self, raw: str) -> str:
        """Map a raw label string (short code or long name) onto this set."""
        key = raw.strip()
        if key in self.names:
            return key
        alias = _LABEL_ALIASES.get(key.lower())
        if alias in self.names:
            return alias
        raise CascadeError(f"unknown label {raw!r}; expected one of {self.names}")


FOUR_CLASS = LabelSet(("NR", "F", "T", "U"))
THREE_CLASS = LabelSet(("F", "T", "U"))

_LABEL_ALIASES = {
    "non-rumor": "NR", "nonrumor": "NR", "non-rumour": "NR", "nr": "NR",
    "false": "F", "f": "F",
    "true": "T", "t": "T",
    "unverified": "U", "u": "U",
}


@dataclass(frozen=True)
class TweetNode:
    uid: str
    text: str = ""
    t: float = 0.0


@dataclass(frozen=True)
class Claim:
    """One labeled cascade. Node 0 is the source tweet.

    ``edges`` holds (parent, child) index pairs; an edge's time offset is
    its child's ``t``.
    """

    id: str
    label: str
    nodes: tuple[TweetNode, ...]
    edges: tuple[tuple[int, int], ...]
    event: str | None = None

    @property
    def n(self) -> int:
        return len(self.nodes)

    def edge_times(self) -> list[float]:
        return [self.nodes[c].t for _, c in self.edges]

    def validate(self, label_set: LabelSet | None = None) -> Claim:
        problem = claim_problem(self, label_set)
        if problem:
            raise ClaimValidationError(self.id, problem)
        return self


def claim_problem(claim: Claim, label_set: LabelSet | None = None) -> str | None:
    """Describe the first invariant ``claim`` breaks, or None if it is valid."""
    n = len(claim.nodes)
    if n == 0:
        return "no nodes"
    if label_set is not None and claim.label not in label_set:
        return f"label {claim.label!r} not in {label_set.names}"
    uids = [node.uid for node in claim.nodes]
    if len(set(uids)) != n:
        return "duplicate node uid"
    for node in claim.nodes:
        if not math.isfinite(node.t) or node.t < 0:
            return f"node {node.uid!r} has invalid time offset {node.t}"
    if claim.nodes[0].t != 0:
        return f"source node time offset is {claim.nodes[0].t}, expected 0"
    seen = set()
    children: list[list[int]] = [[] for _ in range(n)]
    for p, c in claim.edges:
        if not (0 <= p < n and 0 <= c < n):
            return f"edge ({p}, {c}) references a node outside [0, {n})"
        if p == c:
            return f"self-loop on node {p}"
        if (p, c) in seen:
            return f"duplicate edge ({p}, {c})"
        seen.add((p, c))
        children[p].append(c)
    reached = {0}
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in children[u]:
            if v not in reached:
                reached.add(v)
                queue.append(v)
    if len(reached) != n:
        missing = sorted(set(range(n)) - reached)
        return f"nodes {missing[:5]} unreachable from the source"
    if _has_cycle(children):
        return "propagation structure contains a cycle"
    return None


def _has_cycle(children: list[list[int]]) -> bool:
    indeg = [0] * len(children)
    for cs in children:
        for c in cs:
            indeg[c] += 1
    stack = [u for u, d in enumerate(indeg) if d == 0]
    visited = 0
    while stack:
        u = stack.pop()
        visited += 1
        for c in children[u]:
            indeg[c] -= 1
            if indeg[c] == 0:
                stack.append(c)
    return visited != len(children)


@dataclass(frozen=True)
class Dataset:
    claims: tuple[Claim, ...]
    label_set: LabelSet = FOUR_CLASS

    def __post_init__(self):
        if len(self.claims) < 1:
            raise CascadeError("a dataset needs at least one claim")
        for c in self.claims:
            if c.label not in self.label_set:
                raise ClaimValidationError(c.id, f"label {c.label!r} not in {self.label_set.names}")

    def __len__(self):
        return len(self.claims)

    def __iter__(self):
        return iter(self.claims)

    def __getitem__(self, i):
        return self.claims[i]

    def labels(self) -> np.ndarray:
        return np.array([self.label_set.index(c.label) for c in self.claims], dtype=np.int64)

    def subset(self, idx: Iterable[int]) -> Dataset:
        return Dataset(tuple(self.claims[i] for i in idx), self.label_set)


@dataclass(frozen=True, eq=False)
class PropagationGraph:
    x: np.ndarray
    a_td: np.ndarray
    a_bu: np.ndarray
    claim_id: str = ""

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def edges(self) -> np.ndarray:
        """(E, 2) array of top-down (parent, child) pairs in row-major order."""
        return np.argwhere(self.a_td > 0)


def build_graph(claim: Claim, features: np.ndarray) -> PropagationGraph:
    features = np.asarray(features)
    if features.ndim != 2 or features.shape[0] != claim.n:
        raise CascadeError(
            f"claim {claim.id!r}: feature matrix has shape {features.shape}, expected {claim.n} rows"
        )
    claim.validate()
    a = np.zeros((claim.n, claim.n), dtype=features.dtype if features.dtype.kind == "f" else np.float64)
    for p, c in claim.edges:
        a[p, c] = 1.0
    a.setflags(write=False)
    at = a.T.copy()
    at.setflags(write=False)
    return PropagationGraph(features, a, at, claim.id)


def truncate_claim(claim: Claim, deadline_minutes: float | None = None, max_tweets: int | None = None) -> Claim:
    """Keep the part of the cascade visible under an early-detection budget.

    Exactly one of ``deadline_minutes`` (keep nodes with t <= deadline) and
    ``max_tweets`` (keep the earliest nodes by t, ties by index) is given.
    Node 0 always survives; nodes whose every parent was dropped are dropped
    too, so the result stays rooted.
    """
    if (deadline_minutes is None) == (max_tweets is None):
        raise ValueError("give exactly one of deadline_minutes and max_tweets")
    if deadline_minutes is not None:
        if deadline_minutes < 0:
            raise ValueError("deadline must be non-negative")
        keep = {i for i, node in enumerate(claim.nodes) if node.t <= deadline_minutes}
    else:
        if max_tweets < 1:
            raise ValueError("max_tweets must be at least 1")
        order = sorted(range(claim.n), key=lambda i: (claim.nodes[i].t, i))
        keep = set(order[:max_tweets])
    keep.add(0)
    if len(keep) == claim.n:
        return claim

    # drop kept nodes that are only reachable through dropped ones
    children: dict[int, list[int]] = {}
    for p, c in claim.edges:
        if p in keep and c in keep:
            children.setdefault(p, []).append(c)
    reached = {0}
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in children.get(u, ()):
            if v not in reached:
                reached.add(v)
                queue.append(v)
    kept = sorted(reached)
    remap = {old: new for new, old in enumerate(kept)}
    edges = tuple((remap[p], remap[c]) for p, c in claim.edges if p in remap and c in remap)
    return Claim(claim.id, claim.label, tuple(claim.nodes[i] for i in kept), edges, claim.event)


# -- canonical jsonl --------------------------------------------------------


def claim_to_record(claim: Claim) -> dict:
    return {
        "id": claim.id,
        "label": claim.label,
        "event": claim.event,
        "nodes": [{"uid": nd.uid, "text": nd.text, "t": nd.t} for nd in claim.nodes],
        "edges": [[p, c] for p, c in claim.edges],
    }


def claim_from_record(rec: dict, label_set: LabelSet = FOUR_CLASS) -> Claim:
    try:
        cid = str(rec["id"])
        nodes = tuple(
            TweetNode(str(nd["uid"]), str(nd.get("text", "")), float(nd["t"])) for nd in rec["nodes"]
        )
        edges = tuple((int(p), int(c)) for p, c in rec["edges"])
        label = label_set.parse(str(rec["label"]))
        event = rec.get("event")
    except CascadeError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CascadeError(f"malformed record {rec.get('id', '?')!r}: {exc}") from exc
    return Claim(cid, label, nodes, edges, None if event is None else str(event))


def write_claims(dataset: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for claim in dataset.claims:
            fh.write(json.dumps(claim_to_record(claim), ensure_ascii=False, sort_keys=True))
            fh.write("\n")


def load_claims(path, format: str = "canonical-jsonl", label_set: LabelSet = FOUR_CLASS, strict: bool = True,
                labels_path=None) -> Dataset:
    """Read a dataset; invalid claims raise in strict mode, else are skipped with a warning."""
    if format == "canonical-jsonl":
        claims = _read_jsonl(Path(path), label_set)
    elif format == "ma-tree":
        claims = read_ma_trees(path, labels_path, label_set, strict=strict)
    else:
        raise ValueError(f"unknown format {format!r}")

    good = []
    skipped = []
    for claim in claims:
        problem = claim_problem(claim, label_set)
        if problem is None:
            good.append(claim)
        elif strict:
            raise ClaimValidationError(claim.id, problem)
        else:
            skipped.append(claim.id)
            log.warning("skipping claim %s: %s", claim.id, problem)
    if not good:
        raise CascadeError(f"{path}: no valid claims")
    return Dataset(tuple(good), label_set)


def _read_jsonl(path: Path, label_set: LabelSet) -> list[Claim]:
    claims = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CascadeError(f"{path}:{lineno}: not valid JSON ({exc.msg})") from exc
            if not isinstance(rec, dict):
                raise CascadeError(f"{path}:{lineno}: expected a JSON object")
            claims.append(claim_from_record(rec, label_set))
    return claims


# -- Ma et al. tree format (read-only) -------------------------------------

_TREE_LINE = re.compile(r"^\s*(\[[^\]]*\])\s*->\s*(\[[^\]]*\])\s*$")


@dataclass
class ConversionReport:
    claims: int = 0
    malformed: list[tuple[str, int, str]] = field(default_factory=list)
    imputed_times: list[str] = field(default_factory=list)
    dropped_edges: list[tuple[str, str]] = field(default_factory=list)
    rejected: list[tuple[str, str]] = field(default_factory=list)


def parse_tree_line(line: str) -> tuple[tuple[str, str, str], tuple[str, str, str]]:
    m = _TREE_LINE.match(line)
    if not m:
        raise ValueError("expected \"['uid', 'idx', 't']->['uid', 'idx', 't']\"")
    ends = []
    for part in m.groups():
        try:
            val = ast.literal_eval(part)
        except (SyntaxError, ValueError):
            raise ValueError(f"cannot parse {part!r}") from None
        if not (isinstance(val, list) and len(val) == 3):
            raise ValueError(f"{part!r} is not a 3-element list")
        ends.append(tuple(str(v).strip() for v in val))
    return ends[0], ends[1]


def parse_tree_file(path, claim_id: str, label: str, report: ConversionReport | None = None) -> Claim:
    """Build one claim from a tree file.

    The ``ROOT`` line names the source tweet. Node uids are ``uid:idx``.
    Unparseable times become the node's position index; self-loops and
    repeated edges are dropped and listed in ``report``.
    """
    report = report if report is not None else ConversionReport()
    keys: dict[tuple[str, str, str], int] = {}
    order: list[tuple[str, str, str]] = []
    raw_edges: list[tuple[int, int]] = []
    source = None

    def node_of(key):
        if key not in keys:
            keys[key] = len(order)
            order.append(key)
        return keys[key]

    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                parent, child = parse_tree_line(line)
            except ValueError as exc:
                report.malformed.append((str(path), lineno, str(exc)))
                continue
            if parent[0].upper() == "ROOT":
                if source is None:
                    source = child
                    node_of(child)
                continue
            raw_edges.append((node_of(parent), node_of(child)))

    if not order:
        raise CascadeError(f"{path}: no usable tree lines")
    if source is None:
        # fall back to the first parent seen
        source = order[raw_edges[0][0]] if raw_edges else order[0]

    # source first, others by time then first appearance
    def t_of(i):
        try:
            return float(order[i][2])
        except ValueError:
            return math.nan

    src_idx = keys[source]
    rest = [i for i in range(len(order)) if i != src_idx]
    times = {i: t_of(i) for i in range(len(order))}
    if any(math.isnan(v) for v in times.values()):
        report.imputed_times.append(claim_id)
        times = {i: float(pos) for pos, i in enumerate([src_idx] + rest)}
    t0 = times[src_idx]
    rest.sort(key=lambda i: (times[i], i))
    new_index = {old: new for new, old in enumerate([src_idx] + rest)}

    uid_count: dict[str, int] = {}
    nodes = []
    for old in [src_idx] + rest:
        uid, idx, _ = order[old]
        base = f"{uid}:{idx}"
        k = uid_count.get(base, 0)
        uid_count[base] = k + 1
        t = max(times[old] - t0, 0.0) if old != src_idx else 0.0
        nodes.append(TweetNode(base if k == 0 else f"{base}#{k}", "", t))

    seen = set()
    edges = []
    for p, c in raw_edges:
        e = (new_index[p], new_index[c])
        if e[0] == e[1] or e in seen:
            report.dropped_edges.append((claim_id, "self-loop" if e[0] == e[1] else "duplicate"))
            continue
        seen.add(e)
        edges.append(e)
    return Claim(claim_id, label, tuple(nodes), tuple(edges))


def read_label_file(path, label_set: LabelSet = FOUR_CLASS) -> dict[str, str]:
    labels = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            if ":" not in line:
                raise CascadeError(f"{path}:{lineno}: expected 'label:claim_id'")
            raw, cid = line.strip().split(":", 1)
            labels[cid.strip()] = label_set.parse(raw)
    return labels


def read_ma_trees(tree_dir, labels_path=None, label_set: LabelSet = FOUR_CLASS, strict: bool = True,
                  report: ConversionReport | None = None) -> list[Claim]:
    """Read ``<tree_dir>/<claim_id>.txt`` files labelled by ``labels_path``.

    ``labels_path`` defaults to ``label.txt`` next to the tree directory or
    inside it.
    """
    tree_dir = Path(tree_dir)
    report = report if report is not None else ConversionReport()
    if labels_path is None:
        for cand in (tree_dir / "label.txt", tree_dir.parent / "label.txt"):
            if cand.exists():
                labels_path = cand
                break
        else:
            raise CascadeError(f"no label file found for {tree_dir}")
    labels = read_label_file(labels_path, label_set)
    files = sorted(p for p in tree_dir.glob("*.txt") if p.resolve() != Path(labels_path).resolve())
    if not files:
        raise CascadeError(f"{tree_dir}: no tree files")
    claims = []
    for f in files:
        cid = f.stem
        if cid not in labels:
            report.rejected.append((cid, "no label"))
            if strict:
                raise ClaimValidationError(cid, "no label in label file")
            continue
        n_bad = len(report.malformed)
        claim = parse_tree_file(f, cid, labels[cid], report)
        if strict and len(report.malformed) > n_bad:
            path, lineno, msg = report.malformed[n_bad]
            raise CascadeError(f"{path}:{lineno}: {msg}")
        claims.append(claim)
    report.claims = len(claims)
    return claims


def convert_ma_trees(tree_dir, out_path, labels_path=None, label_set: LabelSet = FOUR_CLASS,
                     strict: bool = False) -> ConversionReport:
    report = ConversionReport()
    claims = read_ma_trees(tree_dir, labels_path, label_set, strict=strict, report=report)
    good = []
    for claim in claims:
        problem = claim_problem(claim, label_set)
        if problem is None:
            good.append(claim)
        elif strict:
            raise ClaimValidationError(claim.id, problem)
        else:
            report.rejected.append((claim.id, problem))
    report.claims = len(good)
    write_claims(Dataset(tuple(good), label_set), out_path)
    return report

