"""Interaction graph construction and graph-attention fusion.

Nodes are the per-step features of the three aggregated context
modalities plus the current text, all aligned to the current text
length, so a graph over L steps has exactly 4L nodes. Three undirected
edge types connect them:

* intra:        same node kind, different steps (all pairs, optionally
                capped to a +-window; current-text nodes participate too),
* inter:        different context modalities, same step,
* interaction:  current text to each context modality, same step.

Self-loops are not stored as edges; the attention layer adds them.
Neighborhood aggregation iterates in a canonical (kind, step) order of
the endpoints, which makes the encoder permutation-equivariant bit for
bit under node relabeling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .nn import Dropout, LayerNorm, Linear, Module, Parameter
from .tensor import Tensor, concat, gather_rows, repeat_rows, segment_sum

NODE_KINDS = ("V", "T", "A", "Tc")
EDGE_TYPES = ("intra", "inter", "interaction")


@dataclass
class FusedContext:
    """Fused global-local sequence for one context side."""

    side: str    # "previous" or "following"
    seq: Tensor  # (current_text_steps, hidden_dim)


@dataclass
class InteractionGraph:
    length: int                    # current text steps (L)
    node_kinds: np.ndarray         # (4L,) indices into NODE_KINDS
    node_steps: np.ndarray         # (4L,)
    features: Tensor               # (4L, hidden_dim)
    intra_edges: np.ndarray        # (n, 2) unordered index pairs
    inter_edges: np.ndarray
    interaction_edges: np.ndarray

    @property
    def num_nodes(self):
        return 4 * self.length

    def edges_of_type(self, edge_type):
        return {"intra": self.intra_edges, "inter": self.inter_edges,
                "interaction": self.interaction_edges}[edge_type]

    def all_edges(self):
        return np.concatenate(
            [self.intra_edges, self.inter_edges, self.interaction_edges], axis=0)

    def without_interaction_edges(self):
        """Copy of the graph with the interaction edge set dropped."""
        return InteractionGraph(
            length=self.length, node_kinds=self.node_kinds,
            node_steps=self.node_steps, features=self.features,
            intra_edges=self.intra_edges, inter_edges=self.inter_edges,
            interaction_edges=np.empty((0, 2), dtype=np.int64))

    def kind_slice(self, kind):
        k = NODE_KINDS.index(kind)
        return slice(k * self.length, (k + 1) * self.length)

    def node_label(self, index):
        return f"{NODE_KINDS[self.node_kinds[index]]}[{self.node_steps[index]}]"

    def serialize(self):
        """Structured-text edge list: one line per node with its neighbors."""
        edges = self.all_edges()
        neighbors = [[] for _ in range(self.num_nodes)]
        for i, j in edges:
            neighbors[i].append(j)
            neighbors[j].append(i)
        lines = [
            f"graph length={self.length} nodes={self.num_nodes} "
            f"intra={len(self.intra_edges)} inter={len(self.inter_edges)} "
            f"interaction={len(self.interaction_edges)}"
        ]
        for i in range(self.num_nodes):
            ordered = sorted(neighbors[i],
                             key=lambda j: (self.node_kinds[j], self.node_steps[j]))
            names = " ".join(self.node_label(j) for j in ordered)
            lines.append(f"{self.node_label(i)}: {names}")
        return "\n".join(lines) + "\n"

    def validate(self):
        """Re-check every structural invariant; raises on violation."""
        if self.features.shape[0] != self.num_nodes:
            raise ShapeError("nodes", self.num_nodes, self.features.shape[0], "graph")
        edges = self.all_edges()
        if len(edges):
            if np.any(edges[:, 0] == edges[:, 1]):
                raise ValueError("graph contains a self-loop edge")
            canon = np.sort(edges, axis=1)
            if len(np.unique(canon, axis=0)) != len(canon):
                raise ValueError("graph contains duplicate edges")
        kinds, steps = self.node_kinds, self.node_steps
        for i, j in self.intra_edges:
            if kinds[i] != kinds[j] or steps[i] == steps[j]:
                raise ValueError(f"bad intra edge {self.node_label(i)}-{self.node_label(j)}")
        tc = NODE_KINDS.index("Tc")
        for i, j in self.inter_edges:
            if kinds[i] == kinds[j] or steps[i] != steps[j] or tc in (kinds[i], kinds[j]):
                raise ValueError(f"bad inter edge {self.node_label(i)}-{self.node_label(j)}")
        for i, j in self.interaction_edges:
            if steps[i] != steps[j] or (kinds[i] == tc) == (kinds[j] == tc):
                raise ValueError(
                    f"bad interaction edge {self.node_label(i)}-{self.node_label(j)}")


def build_graph(video, text, audio, current_text, tc_intra_edges=True,
                intra_window=None):
    """Assemble the interaction graph over {V, T, A, Tc} node sequences.

    All four sequences must share the current text length. ``intra_window``
    optionally caps intra-modal edges to step distance <= window.
    """
    seqs = {"V": video.seq, "T": text.seq, "A": audio.seq, "Tc": current_text}
    length = current_text.shape[0]
    for kind, seq in seqs.items():
        if seq.shape[0] != length:
            raise ShapeError("time_steps", length, seq.shape[0], f"graph nodes '{kind}'")
    node_kinds = np.repeat(np.arange(4), length)
    node_steps = np.tile(np.arange(length), 4)
    features = concat([seqs[k] for k in NODE_KINDS], axis=0)

    def base(kind):
        return NODE_KINDS.index(kind) * length

    intra = []
    intra_kinds = NODE_KINDS if tc_intra_edges else NODE_KINDS[:3]
    for kind in intra_kinds:
        off = base(kind)
        for i in range(length):
            for j in range(i + 1, length):
                if intra_window is not None and j - i > intra_window:
                    break
                intra.append((off + i, off + j))
    inter = []
    for i in range(length):
        inter.extend([
            (base("V") + i, base("T") + i),
            (base("V") + i, base("A") + i),
            (base("T") + i, base("A") + i),
        ])
    interaction = []
    for i in range(length):
        interaction.extend([
            (base("Tc") + i, base("V") + i),
            (base("Tc") + i, base("T") + i),
            (base("Tc") + i, base("A") + i),
        ])

    def as_pairs(pairs):
        return np.asarray(pairs, dtype=np.int64).reshape(len(pairs), 2)

    return InteractionGraph(
        length=length, node_kinds=node_kinds, node_steps=node_steps,
        features=features, intra_edges=as_pairs(intra),
        inter_edges=as_pairs(inter), interaction_edges=as_pairs(interaction))


@dataclass
class GraphAttention:
    """Per-edge attention coefficients, exposed for inspection and tests."""

    coefficients: Tensor       # (directed_edges, heads)
    targets: np.ndarray        # target node of each directed edge
    sources: np.ndarray
    segment_starts: np.ndarray  # neighborhoods group contiguous rows


class GraphAttentionEncoder(Module):
    """Multi-head graph attention with dropout, linear, GELU, residual and
    layer normalization on top."""

    def __init__(self, dim, rng, heads=2, dropout=0.1, dropout_rng=None,
                 leaky_slope=0.2):
        super().__init__()
        if dim % heads != 0:
            raise ShapeError("hidden_dim", f"divisible by {heads} heads", dim, "GAE")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.leaky_slope = leaky_slope
        bound = np.sqrt(6.0 / (2 * dim))
        self.weight = Parameter(rng.uniform(-bound, bound, size=(dim, dim)))
        self.attn_src = Parameter(rng.uniform(-bound, bound, size=(1, heads, self.head_dim)))
        self.attn_dst = Parameter(rng.uniform(-bound, bound, size=(1, heads, self.head_dim)))
        self.linear = Linear(dim, dim, rng)
        self.norm = LayerNorm(dim)
        self.dropout = Dropout(dropout, dropout_rng)

    def _directed_edges(self, graph):
        """Directed edge arrays plus self-loops, sorted by the canonical
        (kind, step) identity of target then source."""
        und = graph.all_edges()
        nodes = np.arange(graph.num_nodes)
        targets = np.concatenate([und[:, 0], und[:, 1], nodes])
        sources = np.concatenate([und[:, 1], und[:, 0], nodes])
        kinds, steps = graph.node_kinds, graph.node_steps
        order = np.lexsort((steps[sources], kinds[sources],
                            steps[targets], kinds[targets]))
        targets, sources = targets[order], sources[order]
        boundary = np.flatnonzero(np.diff(targets, prepend=targets[0] - 1))
        return targets, sources, boundary

    def forward(self, graph, return_attention=False):
        x = graph.features
        if x.shape[-1] != self.dim:
            raise ShapeError("hidden_dim", self.dim, x.shape[-1], "GAE input")
        n = graph.num_nodes
        targets, sources, starts = self._directed_edges(graph)
        z = (x @ self.weight).reshape(n, self.heads, self.head_dim)
        score_src = (z * self.attn_src).sum(axis=2)  # (n, heads)
        score_dst = (z * self.attn_dst).sum(axis=2)
        logits = (gather_rows(score_dst, targets)
                  + gather_rows(score_src, sources)).leaky_relu(self.leaky_slope)
        seg_lengths = np.diff(np.append(starts, len(targets)))
        shift = np.repeat(np.maximum.reduceat(logits.data, starts, axis=0),
                          seg_lengths, axis=0)
        weights = (logits - Tensor(shift)).exp()
        denom = repeat_rows(segment_sum(weights, starts), seg_lengths)
        alpha = weights / denom
        messages = gather_rows(z, sources) * alpha.reshape(len(targets), self.heads, 1)
        pooled = segment_sum(messages, starts).reshape(n, self.dim)
        # Segments follow sorted target identity; scatter back to node order.
        seg_targets = targets[starts]
        positions = np.empty(n, dtype=np.int64)
        positions[seg_targets] = np.arange(n)
        attended = gather_rows(pooled, positions)
        out = self.norm(x + self.linear(self.dropout(attended)).gelu())
        if return_attention:
            return out, GraphAttention(coefficients=alpha, targets=targets,
                                       sources=sources, segment_starts=starts)
        return out


class GraphFusion(Module):
    """Graph attention encoding plus per-step fusion of the four node kinds."""

    def __init__(self, dim, rng, heads=2, dropout=0.1, dropout_rng=None):
        super().__init__()
        from .nn import Conv1d

        self.dim = dim
        self.encoder = GraphAttentionEncoder(dim, rng, heads, dropout, dropout_rng)
        self.fuse_conv = Conv1d(4 * dim, dim, 3, rng)

    def forward(self, graph):
        return self.fuse_nodes(self.encoder(graph), graph)

    def fuse_nodes(self, node_features, graph):
        """Concatenate fused {V, T, A, Tc} per step and convolve to dim."""
        per_kind = [node_features[graph.kind_slice(k)] for k in NODE_KINDS]
        return self.fuse_conv(concat(per_kind, axis=1))
