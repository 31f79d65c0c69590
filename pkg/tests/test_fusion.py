"""Interaction graph construction against a brute-force edge oracle, and the
graph attention encoder's normalization/equivariance guarantees."""

import numpy as np
import pytest

from contextdub.aggregation import AggregatedFeature
from contextdub.fusion import (NODE_KINDS, GraphAttentionEncoder, GraphFusion,
                               InteractionGraph, build_graph)
from contextdub.gradcheck import analytic_gradients
from contextdub.nn import Parameter
from contextdub.tensor import Tensor

DIM = 16


def make_graph(rng, length, dim=DIM, **kwargs):
    def agg(mod):
        return AggregatedFeature(mod, "previous",
                                 Tensor(rng.normal(size=(length, dim))))

    return build_graph(agg("video"), agg("text"), agg("audio"),
                       Tensor(rng.normal(size=(length, dim))), **kwargs)


def brute_force_edges(graph):
    """Classify every unordered node pair by the three edge predicates."""
    tc = NODE_KINDS.index("Tc")
    kinds, steps = graph.node_kinds, graph.node_steps
    intra, inter, interaction = set(), set(), set()
    for i in range(graph.num_nodes):
        for j in range(i + 1, graph.num_nodes):
            same_kind = kinds[i] == kinds[j]
            same_step = steps[i] == steps[j]
            involves_tc = tc in (kinds[i], kinds[j])
            if same_kind and not same_step:
                intra.add((i, j))
            elif not same_kind and same_step and not involves_tc:
                inter.add((i, j))
            elif not same_kind and same_step and involves_tc:
                interaction.add((i, j))
    return intra, inter, interaction


def edge_set(pairs):
    return {tuple(sorted(p)) for p in pairs.tolist()}


class TestBuildGraph:
    @pytest.mark.parametrize("length,counts", [(1, (0, 3, 3)), (2, (4, 6, 6)),
                                               (3, (12, 9, 9))])
    def test_edge_counts_closed_form(self, rng, length, counts):
        graph = make_graph(rng, length)
        assert graph.num_nodes == 4 * length
        assert (len(graph.intra_edges), len(graph.inter_edges),
                len(graph.interaction_edges)) == counts
        # closed forms: intra 4*C(L,2), inter 3L, interaction 3L
        assert len(graph.intra_edges) == 4 * length * (length - 1) // 2
        assert len(graph.inter_edges) == 3 * length
        assert len(graph.interaction_edges) == 3 * length

    def test_matches_brute_force_oracle(self, rng):
        for length in (1, 2, 3, 5, 8):
            graph = make_graph(rng, length)
            intra, inter, interaction = brute_force_edges(graph)
            assert edge_set(graph.intra_edges) == intra
            assert edge_set(graph.inter_edges) == inter
            assert edge_set(graph.interaction_edges) == interaction
            graph.validate()

    def test_length_mismatch_names_kind(self, rng):
        video = AggregatedFeature("video", "previous", Tensor(rng.normal(size=(3, DIM))))
        text = AggregatedFeature("text", "previous", Tensor(rng.normal(size=(2, DIM))))
        audio = AggregatedFeature("audio", "previous", Tensor(rng.normal(size=(3, DIM))))
        with pytest.raises(Exception, match="'T'"):
            build_graph(video, text, audio, Tensor(rng.normal(size=(3, DIM))))

    def test_without_tc_intra_edges(self, rng):
        graph = make_graph(rng, 3, tc_intra_edges=False)
        assert len(graph.intra_edges) == 3 * 3  # three kinds only
        tc = NODE_KINDS.index("Tc")
        assert all(graph.node_kinds[i] != tc and graph.node_kinds[j] != tc
                   for i, j in graph.intra_edges)

    def test_intra_window_caps_step_distance(self, rng):
        graph = make_graph(rng, 6, intra_window=1)
        steps = graph.node_steps
        assert all(abs(steps[i] - steps[j]) <= 1 for i, j in graph.intra_edges)
        assert len(graph.intra_edges) == 4 * 5

    def test_serialize_lists_every_node(self, rng):
        graph = make_graph(rng, 2)
        text = graph.serialize()
        lines = text.strip().splitlines()
        assert len(lines) == 1 + graph.num_nodes
        assert "interaction=6" in lines[0]
        assert any(line.startswith("Tc[1]:") for line in lines)


class TestGraphAttentionEncoder:
    def test_default_head_count_is_two(self, rng):
        gae = GraphAttentionEncoder(DIM, rng, dropout=0.0).eval()
        assert gae.heads == 2
        graph = make_graph(rng, 2)
        _, attention = gae(graph, return_attention=True)
        assert attention.coefficients.shape[1] == 2

    def test_neighborhood_coefficients_sum_to_one(self, rng):
        gae = GraphAttentionEncoder(DIM, rng, dropout=0.0).eval()
        for length in (1, 2, 4, 7):
            graph = make_graph(rng, length)
            _, att = gae(graph, return_attention=True)
            sums = np.add.reduceat(att.coefficients.data, att.segment_starts, axis=0)
            assert np.abs(sums - 1.0).max() <= 1e-6

    def test_isolated_node_attends_to_itself(self, rng):
        length = 1
        graph = make_graph(rng, length)
        empty = np.empty((0, 2), dtype=np.int64)
        isolated = InteractionGraph(
            length=length, node_kinds=graph.node_kinds, node_steps=graph.node_steps,
            features=graph.features, intra_edges=empty, inter_edges=empty,
            interaction_edges=empty)
        gae = GraphAttentionEncoder(DIM, rng, dropout=0.0).eval()
        _, att = gae(isolated, return_attention=True)
        assert att.coefficients.shape[0] == 4  # self-loops only
        assert np.allclose(att.coefficients.data, 1.0)

    def test_permutation_equivariance_bitwise(self, rng):
        gae = GraphAttentionEncoder(DIM, rng, dropout=0.0).eval()
        for trial in range(5):
            length = int(rng.integers(1, 6))
            graph = make_graph(rng, length)
            out = gae(graph).data
            perm = rng.permutation(graph.num_nodes)
            inverse = np.argsort(perm)
            permuted = InteractionGraph(
                length=length,
                node_kinds=graph.node_kinds[perm],
                node_steps=graph.node_steps[perm],
                features=Tensor(graph.features.data[perm]),
                intra_edges=inverse[graph.intra_edges],
                inter_edges=inverse[graph.inter_edges],
                interaction_edges=inverse[graph.interaction_edges])
            out_perm = gae(permuted).data
            assert np.array_equal(out_perm, out[perm])

    def test_dropping_interaction_isolates_current_text_single_step(self, rng):
        # On a 1-step graph Tc has no intra or inter edges, so removing the
        # interaction edges must sever every path from Tc to the modalities.
        gae = GraphAttentionEncoder(DIM, rng, dropout=0.0).eval()
        graph = make_graph(rng, 1)
        altered_features = graph.features.data.copy()
        altered_features[3] += 5.0  # perturb the Tc node
        altered = InteractionGraph(
            length=1, node_kinds=graph.node_kinds, node_steps=graph.node_steps,
            features=Tensor(altered_features), intra_edges=graph.intra_edges,
            inter_edges=graph.inter_edges,
            interaction_edges=graph.interaction_edges)
        with_edges = np.allclose(gae(altered).data[:3], gae(graph).data[:3])
        assert not with_edges
        dropped_a = gae(graph.without_interaction_edges()).data
        dropped_b = gae(altered.without_interaction_edges()).data
        assert np.array_equal(dropped_a[:3], dropped_b[:3])

    def test_gradient_check(self, rng):
        gae = GraphAttentionEncoder(8, rng, dropout=0.0).eval()
        graph = make_graph(rng, 2, dim=8)
        probe = Tensor(rng.normal(size=(8, 8)))
        from contextdub.gradcheck import gradient_check

        report = gradient_check(lambda: (gae(graph) * probe).sum(),
                                gae.named_parameters())
        assert report.max_relative_error < 1e-4, str(report)


class TestGraphFusion:
    def test_fused_shape(self, rng):
        fusion = GraphFusion(DIM, rng, dropout=0.0).eval()
        graph = make_graph(rng, 5)
        assert fusion(graph).shape == (5, DIM)

    def test_zeroed_audio_nodes_change_output(self, rng):
        fusion = GraphFusion(DIM, rng, dropout=0.0).eval()
        graph = make_graph(rng, 2)
        zeroed_features = graph.features.data.copy()
        zeroed_features[graph.kind_slice("A")] = 0.0
        zeroed = InteractionGraph(
            length=2, node_kinds=graph.node_kinds, node_steps=graph.node_steps,
            features=Tensor(zeroed_features), intra_edges=graph.intra_edges,
            inter_edges=graph.inter_edges, interaction_edges=graph.interaction_edges)
        assert not np.allclose(fusion(zeroed).data, fusion(graph).data)

    def test_gradient_reaches_every_node_kind(self, rng):
        fusion = GraphFusion(DIM, rng, dropout=0.0).eval()
        length = 3
        kinds = {}
        for mod in ("video", "text", "audio", "Tc"):
            kinds[mod] = Parameter(rng.normal(size=(length, DIM)))
        graph = build_graph(
            AggregatedFeature("video", "previous", kinds["video"]),
            AggregatedFeature("text", "previous", kinds["text"]),
            AggregatedFeature("audio", "previous", kinds["audio"]),
            kinds["Tc"])
        out = fusion(graph)
        (out * Tensor(rng.normal(size=(length, DIM)))).sum().backward()
        for mod, param in kinds.items():
            assert param.grad is not None and np.abs(param.grad).max() > 0, mod


def test_graph_validate_flags_bad_edges(rng):
    graph = make_graph(rng, 2)
    broken = InteractionGraph(
        length=2, node_kinds=graph.node_kinds, node_steps=graph.node_steps,
        features=graph.features,
        intra_edges=np.array([[0, 3]]),  # V[0]-T[1] matches no predicate
        inter_edges=graph.inter_edges,
        interaction_edges=graph.interaction_edges)
    with pytest.raises(ValueError, match="intra"):
        broken.validate()
