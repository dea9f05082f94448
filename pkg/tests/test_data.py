"""
Tests for synthetic shapes, point files and dataset manifests
"""

import json
import os

import numpy as np
import pytest
import torch
from scipy.spatial.distance import cdist

from src.data import (
    CompletionDataset,
    DatasetManifest,
    ManifestEntry,
    ShapeSpec,
    bounding_ball,
    generate_dataset,
    make_loader,
    make_partial,
    random_shape_spec,
    read_xyz,
    resample,
    sample_complete,
    view_directions,
    write_xyz,
)
from src.exceptions import ArgumentError, DataError, ParseError


class TestShapes:
    def test_sphere_lands_on_unit_radius(self):
        spec = ShapeSpec("sphere", rotation=(10, 20, 30), translation=(3, -1, 2), scale=2.5, seed=1)
        points = sample_complete(spec, 500)
        np.testing.assert_allclose(np.linalg.norm(points, axis=1), 1.0, atol=1e-12)

    @pytest.mark.parametrize("extents", [(1.0, 1.0, 1.0), (1.0, 2.0, 3.0)])
    def test_box_faces_follow_their_areas(self, extents):
        n = 100_000
        points = sample_complete(ShapeSpec("box", seed=4, extents=extents), n)
        a, b, c = extents
        half = np.array(extents) / 2 / (0.5 * np.sqrt(a * a + b * b + c * c))
        # every sample sits on the face where its scaled coordinate reaches 1
        scaled = points / half
        axis = np.abs(scaled).argmax(axis=1)
        face = 2 * axis + (scaled[np.arange(n), axis] > 0)
        counts = np.bincount(face, minlength=6)
        areas = np.repeat([b * c, a * c, a * b], 2)
        expected = n * areas / areas.sum()
        np.testing.assert_allclose(counts, expected, rtol=0.05)

    @pytest.mark.parametrize("kind", ["box", "cylinder", "cone"])
    def test_primitives_fit_the_unit_ball(self, kind):
        spec = ShapeSpec(kind, rotation=(30, 0, 45), scale=0.7, seed=2, extents=(0.5, 1.5, 0.8))
        points = sample_complete(spec, 1000)
        assert points.shape == (1000, 3)
        assert np.linalg.norm(points, axis=1).max() <= 1 + 1e-9

    def test_union_samples_both_parts(self):
        parts = (
            ShapeSpec("sphere", translation=(-1, 0, 0), scale=0.5),
            ShapeSpec("box", translation=(1, 0, 0), extents=(0.4, 0.4, 0.4)),
        )
        spec = ShapeSpec("union", seed=4, parts=parts)
        points = sample_complete(spec, 800)
        assert points.shape == (800, 3)
        assert (points[:, 0] < 0).any() and (points[:, 0] > 0).any()
        assert np.linalg.norm(points, axis=1).max() <= 1 + 1e-9

    def test_union_ball_contains_part_balls(self):
        parts = (ShapeSpec("sphere", translation=(-2, 0, 0)), ShapeSpec("sphere", translation=(2, 0, 0)))
        center, radius = bounding_ball(ShapeSpec("union", parts=parts))
        np.testing.assert_allclose(center, 0.0, atol=1e-12)
        assert radius == pytest.approx(3.0)

    def test_sampling_is_seeded(self):
        spec = ShapeSpec("cone", seed=9, extents=(0.5, 1.0, 1.0))
        np.testing.assert_array_equal(sample_complete(spec, 100), sample_complete(spec, 100))

    def test_unknown_kind_rejected(self):
        with pytest.raises(ArgumentError):
            sample_complete(ShapeSpec("torus"), 10)

    def test_invalid_scale_rejected(self):
        with pytest.raises(ArgumentError):
            ShapeSpec("sphere", scale=0.0)

    def test_random_specs_sample(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            points = sample_complete(random_shape_spec(rng, seed=1), 64)
            assert np.isfinite(points).all()


class TestPartials:
    def test_view_crop_keeps_facing_half(self):
        complete = sample_complete(ShapeSpec("sphere", seed=3), 1024)
        partial = make_partial(complete, (0, 0, 1), 0.5)
        assert len(partial) == 512
        assert (partial[:, 2] >= np.median(complete[:, 2])).all()

    def test_crop_keeps_original_order(self):
        complete = np.array([[0, 0, 3.0], [0, 0, 1.0], [0, 0, 2.0], [0, 0, 0.0]])
        assert make_partial(complete, (0, 0, 1), 0.5).tolist() == [[0, 0, 3], [0, 0, 2]]

    def test_crop_rounds_up(self):
        assert len(make_partial(np.random.default_rng(0).random((5, 3)), (1, 0, 0), 0.5)) == 3

    @pytest.mark.parametrize("view,ratio", [((0, 0, 0), 0.5), ((1, 0, 0), 0.0), ((1, 0, 0), 1.5)])
    def test_bad_arguments(self, view, ratio):
        with pytest.raises(ArgumentError):
            make_partial(np.zeros((4, 3)), view, ratio)

    def test_view_directions_are_unit_and_distinct(self):
        views = view_directions(26)
        np.testing.assert_allclose(np.linalg.norm(views, axis=1), 1.0)
        assert len(np.unique(views.round(8), axis=0)) == 26

    def test_every_view_gives_a_different_partial(self):
        complete = sample_complete(ShapeSpec("sphere", seed=5), 1024)
        partials = [make_partial(complete, view) for view in view_directions(26)]
        assert all(p.shape == (512, 3) for p in partials)
        assert len({p.tobytes() for p in partials}) == 26

    def test_resample_stays_inside_the_source(self):
        rng = np.random.default_rng(0)
        cloud = rng.random((10, 3))
        for n in (4, 10, 25):
            out = resample(cloud, n, rng)
            assert out.shape == (n, 3)
            assert (cdist(out, cloud).min(axis=1) == 0).all()


class TestXYZ:
    def test_reads_simple_file(self, tmp_path):
        path = tmp_path / "two.xyz"
        path.write_text("0 0 0\n1 0 0\n", encoding="utf-8")
        assert read_xyz(path).tolist() == [[0, 0, 0], [1, 0, 0]]

    def test_write_then_read_is_exact(self, tmp_path):
        cloud = np.random.default_rng(5).standard_normal((50, 3))
        path = tmp_path / "cloud.xyz"
        write_xyz(cloud, path)
        np.testing.assert_array_equal(read_xyz(path), cloud)
        assert "\t" not in path.read_text(encoding="utf-8")

    def test_accepts_tensors(self, tmp_path):
        path = tmp_path / "t.xyz"
        write_xyz(torch.ones(3, 3), path)
        assert read_xyz(path).shape == (3, 3)

    @pytest.mark.parametrize("text,line", [("0 0 0\n1 0\n", 2), ("0 0 x\n", 1), ("0 0 0\n0 0 0\nnan 0 0\n", 3)])
    def test_malformed_line_is_named(self, tmp_path, text, line):
        path = tmp_path / "bad.xyz"
        path.write_text(text, encoding="utf-8")
        with pytest.raises(ParseError) as excinfo:
            read_xyz(path)
        assert excinfo.value.line_number == line
        assert f"line {line}" in str(excinfo.value)

    def test_missing_and_empty_files(self, tmp_path):
        with pytest.raises(DataError):
            read_xyz(tmp_path / "missing.xyz")
        empty = tmp_path / "empty.xyz"
        empty.write_text("", encoding="utf-8")
        with pytest.raises(DataError):
            read_xyz(empty)


class TestManifest:
    def test_generated_manifest(self, tiny_dataset):
        assert len(tiny_dataset) == 6
        assert {len(tiny_dataset.split(t)) for t in ("train", "val", "test")} == {1, 2, 3}
        assert tiny_dataset.resolution_for("train") == 128
        tiny_dataset.validate()

    def test_json_layout(self, tiny_dataset):
        with open(os.path.join(tiny_dataset.root, "manifest.json"), encoding="utf-8") as fh:
            data = json.load(fh)
        assert set(data["entries"][0]) == {"id", "partial", "complete", "resolution", "split"}
        loaded = DatasetManifest.load(os.path.join(tiny_dataset.root, "manifest.json"))
        assert loaded.entries == tiny_dataset.entries

    def test_partials_are_subsets_of_completes(self, tiny_dataset):
        for entry in tiny_dataset.entries:
            partial = read_xyz(tiny_dataset.resolve(entry.partial))
            complete = read_xyz(tiny_dataset.resolve(entry.complete))
            assert partial.shape == (64, 3)
            assert (cdist(partial, complete).min(axis=1) == 0).all()

    def test_missing_file_fails_validation(self, tmp_path):
        manifest = DatasetManifest(
            entries=[ManifestEntry("a", "p.xyz", "c.xyz", 128, "train")], root=str(tmp_path)
        )
        with pytest.raises(DataError):
            manifest.validate()

    def test_mixed_resolutions_rejected(self, tmp_path):
        manifest = DatasetManifest(
            entries=[
                ManifestEntry("a", "p.xyz", "c.xyz", 128, "train"),
                ManifestEntry("b", "p.xyz", "c.xyz", 256, "train"),
            ]
        )
        with pytest.raises(DataError):
            manifest.resolution_for("train")

    def test_malformed_manifest(self, tmp_path):
        path = tmp_path / "manifest.json"
        path.write_text('{"entries": [{"id": "a"}]}', encoding="utf-8")
        with pytest.raises(DataError):
            DatasetManifest.load(path)


class TestGeneration:
    def test_same_seed_same_bytes(self, tmp_path):
        kwargs = dict(num_shapes=3, seed=11, complete_size=64, partial_size=32, views_per_shape=2)
        generate_dataset(str(tmp_path / "a"), **kwargs)
        generate_dataset(str(tmp_path / "b"), workers=2, **kwargs)
        for sub in ("manifest.json", os.path.join("complete", "00001.xyz")):
            assert (tmp_path / "a" / sub).read_bytes() == (tmp_path / "b" / sub).read_bytes()
        partials_a = sorted(os.listdir(tmp_path / "a" / "partial"))
        assert partials_a == sorted(os.listdir(tmp_path / "b" / "partial"))
        for name in partials_a:
            assert (tmp_path / "a" / "partial" / name).read_bytes() == (tmp_path / "b" / "partial" / name).read_bytes()

    def test_rejects_empty_dataset(self, tmp_path):
        with pytest.raises(ArgumentError):
            generate_dataset(str(tmp_path), num_shapes=0)


class TestLoading:
    def test_items(self, tiny_dataset):
        dataset = CompletionDataset(tiny_dataset, "train")
        item = dataset[0]
        assert item["partial"].shape == (64, 3) and item["partial"].dtype == torch.float32
        assert item["complete"].shape == (128, 3)

    def test_loader_order_is_seeded(self, tiny_dataset):
        dataset = CompletionDataset(tiny_dataset, None)
        first = [batch["id"] for batch in make_loader(dataset, 2, shuffle=True, seed=5)]
        second = [batch["id"] for batch in make_loader(dataset, 2, shuffle=True, seed=5)]
        assert first == second
