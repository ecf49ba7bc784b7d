import json

import numpy as np
import pytest

import latmap

SPEC = {
    "embedding_dim": 16,
    "n_frames": 12,
    "n_heldout": 2,
    "image_rows": 80,
    "image_cols": 80,
    "focal": 50.0,
    "stream": {"length": 10, "move_at": 5},
}


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("scene")
    assert latmap.synth(str(out), SPEC, seed=3) == (12, 2, 10)
    return out


@pytest.fixture(scope="module")
def built(dataset):
    return latmap.build(dataset, steps=800, seed=3)


def test_back_project_identity():
    depth = np.ones((1, 1), dtype=np.float32)
    emb = np.array([[[3.0, 4.0]]], dtype=np.float32)
    pts, y = latmap.back_project(depth, emb, np.eye(3), [1, 2, 3], 1, 1, 0, 0)
    np.testing.assert_array_equal(pts, [[1, 2, 4]])
    np.testing.assert_allclose(y, [[0.6, 0.8]], atol=1e-7)


def test_build_and_query(dataset, built):
    m, info = built
    assert len(info["losses"]) == 800
    assert info["train_cosine"] > 0.99
    assert m.revision == 800
    assert m.feature_dim == 16
    pts = np.loadtxt(dataset / "region_centers.txt").reshape(-1, 3)
    ref = np.loadtxt(dataset / "region_centers.ref").reshape(len(pts), -1)
    feats = m.query(pts)
    assert feats.shape == ref.shape
    cos = (feats * ref).sum(1) / np.linalg.norm(feats, axis=1) / np.linalg.norm(ref, axis=1)
    assert cos.mean() >= 0.99


def test_save_load_roundtrip(tmp_path, built):
    m, _ = built
    m.save(tmp_path / "m.lmap")
    again = latmap.Map.load(tmp_path / "m.lmap")
    assert again.to_bytes() == m.to_bytes()
    assert latmap.Map.from_bytes(m.to_bytes()).num_occupied == m.num_occupied


def test_replay_and_token(dataset, built):
    m, _ = built
    updated, reports = latmap.replay(m, dataset / "stream.json")
    assert len(reports) == 10
    assert [r["tau"] for r in reports if r["updated"]] == [5, 10]
    assert updated.revision == m.revision + 40
    tok = updated.token(seed=1)
    assert tok.shape == (256,)
    assert np.array_equal(tok, updated.token(seed=1))
    assert updated.occupied_vertices().shape == (updated.num_occupied, 3)


def test_empty_replay_keeps_map(tmp_path, dataset, built):
    m, _ = built
    manifest = {"format": "latmap-stream", "version": 1, "dataset": str(dataset), "steps": []}
    (tmp_path / "s.json").write_text(json.dumps(manifest))
    same, reports = latmap.replay(m, tmp_path / "s.json")
    assert reports == []
    assert same.to_bytes() == m.to_bytes()


def test_errors_carry_kind(tmp_path):
    (tmp_path / "bad.lmap").write_bytes(b"LMAPxx")
    with pytest.raises(latmap.LatmapError) as e:
        latmap.Map.load(tmp_path / "bad.lmap")
    assert e.value.kind == "format"
    with pytest.raises(latmap.LatmapError):
        latmap.build(tmp_path, config={"train": {"bogus": 1}})


def test_gradcheck_and_cli():
    r = latmap.gradcheck(seed=5, cases=10)
    assert r["ok"] and r["cases"] == 10
    code, out, err = latmap.run_cli(["--help"])
    assert code == 0 and "replay" in out
    code, _, err = latmap.run_cli(["nope"])
    assert code == 2 and err.startswith("error: kind=")
