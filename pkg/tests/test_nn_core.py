"""
Tests for the network building blocks
"""

import pytest
import torch
from torch.func import functional_call

from src.exceptions import ArgumentError
from src.fbnet import count_parameters
from src.nn_core import (
    AdaptiveGraphPooling,
    CrossTransformer,
    EdgeConv,
    GraphPooling,
    LayerSpec,
    NodeShuffle,
    PointPooling,
    SharedMLP,
    adaptgp,
    cross_transformer,
    edgeconv,
    global_max_avg_pool,
    nodeshuffle,
    shared_mlp,
    shuffle_rows,
)


@pytest.fixture
def cloud(generator):
    points = torch.rand(2, 40, 3, generator=generator, dtype=torch.float64)
    features = torch.randn(2, 40, 8, generator=generator, dtype=torch.float64)
    return points, features


@pytest.fixture
def small_cloud(generator):
    """Eight points with four channels: small enough for finite differences"""
    points = torch.rand(1, 8, 3, generator=generator, dtype=torch.float64)
    features = torch.randn(1, 8, 4, generator=generator, dtype=torch.float64)
    return points, features


def gradcheck_everything(layer, inputs):
    """Finite-difference check against the layer inputs and all of its parameters at once"""
    names = [name for name, _ in layer.named_parameters()]
    params = [p.detach().clone().requires_grad_(True) for p in layer.parameters()]
    inputs = [x.detach().clone().requires_grad_(True) for x in inputs]

    def run(*args):
        state = dict(zip(names, args[len(inputs):]))
        return functional_call(layer, state, tuple(args[: len(inputs)]))

    return torch.autograd.gradcheck(run, (*inputs, *params))


def test_shared_mlp_checks_channels():
    mlp = SharedMLP((4, 8, 2))
    assert shared_mlp(torch.zeros(3, 5, 4), mlp).shape == (3, 5, 2)
    with pytest.raises(ArgumentError):
        mlp(torch.zeros(3, 5, 6))


def test_layer_spec_validation():
    with pytest.raises(ArgumentError):
        LayerSpec(0, 8)
    with pytest.raises(ArgumentError):
        LayerSpec(3, 8, activation="gelu")


class TestEdgeConv:
    def test_shape_and_coordinate_input(self, cloud):
        points, _ = cloud
        layer = EdgeConv(LayerSpec(3, 16, k=6)).double()
        assert edgeconv(points, None, layer).shape == (2, 40, 16)

    def test_permutation_equivariant(self, cloud):
        points, features = cloud
        layer = EdgeConv(LayerSpec(8, 16, k=6)).double()
        perm = torch.randperm(40, generator=torch.Generator().manual_seed(0))
        out = layer(points, features)
        permuted = layer(points[:, perm], features[:, perm])
        torch.testing.assert_close(permuted, out[:, perm])

    def test_gradcheck(self, cloud):
        points, features = cloud
        layer = EdgeConv(LayerSpec(8, 4, k=5)).double()
        features = features[:, :12].clone().requires_grad_(True)
        assert torch.autograd.gradcheck(lambda f: layer(points[:, :12], f), (features,))

    def test_gradcheck_parameters(self, small_cloud):
        layer = EdgeConv(LayerSpec(4, 4, k=3)).double()
        assert gradcheck_everything(layer, small_cloud)

    def test_rejects_wrong_channels(self, cloud):
        points, features = cloud
        with pytest.raises(ArgumentError):
            EdgeConv(LayerSpec(4, 16, k=6)).double()(points, features)


class TestPooling:
    def test_adaptgp_pools_convex_combinations(self, cloud):
        points, features = cloud
        layer = AdaptiveGraphPooling(8, pool_rate=4, k=6).double()
        pooled_points, pooled_features, (point_w, feature_w, idx) = layer(points, features, return_weights=True)
        assert pooled_points.shape == (2, 10, 3)
        assert pooled_features.shape == (2, 10, 8)
        torch.testing.assert_close(point_w.sum(dim=2), torch.ones(2, 10, 1, dtype=torch.float64))
        torch.testing.assert_close(feature_w.sum(dim=2), torch.ones(2, 10, 8, dtype=torch.float64))
        # every pooled point lies in the bounding box of its neighbors
        neighbors = torch.stack([points[b][idx[b]] for b in range(2)])
        assert (pooled_points >= neighbors.min(dim=2).values - 1e-12).all()
        assert (pooled_points <= neighbors.max(dim=2).values + 1e-12).all()

    def test_adaptgp_gradcheck(self, small_cloud):
        layer = AdaptiveGraphPooling(4, pool_rate=2, k=3).double()
        assert gradcheck_everything(layer, small_cloud)

    def test_adaptgp_ignores_point_order(self, cloud):
        points, features = cloud
        layer = AdaptiveGraphPooling(8, pool_rate=4, k=6).double()
        perm = torch.randperm(40, generator=torch.Generator().manual_seed(2))
        pooled_points, pooled_features = layer(points, features)
        permuted_points, permuted_features = layer(points[:, perm], features[:, perm])
        torch.testing.assert_close(permuted_points, pooled_points)
        torch.testing.assert_close(permuted_features, pooled_features)

    def test_adaptgp_rounds_center_count_up(self, cloud):
        points, features = cloud
        pooled_points, _ = adaptgp(points, features, AdaptiveGraphPooling(8, pool_rate=3, k=6).double())
        assert pooled_points.shape[1] == 14

    def test_adaptgp_parameter_count(self):
        for channels in (64, 128):
            layer = AdaptiveGraphPooling(channels, pool_rate=2)
            assert count_parameters(layer) == channels ** 2 + 6 * channels + 1

    def test_point_pooling_keeps_input_points(self, cloud):
        points, features = cloud
        pooled_points, pooled_features = PointPooling(8, pool_rate=4, k=6)(points, features)
        assert pooled_features.shape == (2, 10, 8)
        for b in range(2):
            distances = torch.cdist(pooled_points[b], points[b])
            assert (distances.min(dim=1).values == 0).all()

    def test_graph_pooling_shapes(self, cloud):
        points, features = cloud
        pooled_points, pooled_features = GraphPooling(8, pool_rate=2, k=6).double()(points, features)
        assert pooled_points.shape == (2, 20, 3)
        assert pooled_features.shape == (2, 20, 8)


class TestCrossTransformer:
    def test_attention_weights_sum_to_one(self, cloud, generator):
        points, features = cloud
        layer = CrossTransformer(8, k=5).double()
        pb = torch.rand(2, 25, 3, generator=generator, dtype=torch.float64)
        fb = torch.randn(2, 25, 8, generator=generator, dtype=torch.float64)
        out, weights = layer(points, features, pb, fb, return_weights=True)
        assert out.shape == (2, 40, 8)
        torch.testing.assert_close(weights.sum(dim=2), torch.ones(2, 40, 8, dtype=torch.float64))

    def test_self_attention_matches_cross_with_itself(self, cloud):
        points, features = cloud
        layer = CrossTransformer(8, k=5).double()
        torch.testing.assert_close(layer.self_attention(points, features), cross_transformer(points, features, points, features, layer))

    def test_parameter_count(self):
        assert count_parameters(CrossTransformer(128)) == 3 * 128 ** 2 + 7 * 128

    def test_gradcheck_inputs(self, cloud):
        points, features = cloud
        layer = CrossTransformer(8, k=4).double()
        fa = features[:, :10].clone().requires_grad_(True)
        fb = features[:, 10:20].clone().requires_grad_(True)
        assert torch.autograd.gradcheck(lambda a, b: layer(points[:, :10], a, points[:, 10:20], b), (fa, fb))

    def test_gradcheck_parameters(self, cloud):
        points, features = cloud
        layer = CrossTransformer(8, k=4).double()
        params = dict(layer.named_parameters())
        weight = params["attention.net.2.weight"].detach().clone().requires_grad_(True)

        def run(w):
            return functional_call(layer, {**params, "attention.net.2.weight": w}, (points[:, :10], features[:, :10], points, features))

        assert torch.autograd.gradcheck(run, (weight,))

    def test_gradcheck_everything(self, small_cloud):
        points, features = small_cloud
        layer = CrossTransformer(4, k=3).double()
        assert gradcheck_everything(layer, (points[:, :5], features[:, :5], points, features))

    def test_rejects_too_few_reference_points(self, cloud):
        points, features = cloud
        layer = CrossTransformer(8, k=16).double()
        with pytest.raises(ArgumentError):
            layer(points, features, points[:, :8], features[:, :8])


class TestNodeShuffle:
    def test_shuffle_rows_layout(self):
        features = torch.arange(12.0).reshape(1, 2, 6)
        shuffled = shuffle_rows(features, 3)
        assert shuffled.shape == (1, 6, 2)
        # row i*r + j holds channel group j of point i
        assert shuffled[0, 4].tolist() == features[0, 1, 2:4].tolist()

    def test_expands_rows(self, cloud):
        points, features = cloud
        layer = NodeShuffle(8, r=4, k=6).double()
        assert nodeshuffle(points, features, layer).shape == (2, 160, 8)

    def test_gradcheck(self, small_cloud):
        layer = NodeShuffle(4, r=2, k=3).double()
        assert gradcheck_everything(layer, small_cloud)

    def test_parameter_count(self):
        c, r = 128, 2
        assert count_parameters(NodeShuffle(c, r)) == 2 * c * c + c + r * c * c + r * c


def test_global_pool_puts_max_first():
    features = torch.tensor([[[1.0, -2.0], [3.0, 0.0]]])
    assert global_max_avg_pool(features).tolist() == [[[3.0, 0.0, 2.0, -1.0]]]
