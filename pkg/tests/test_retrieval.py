import numpy as np
import pytest

from crossview import (
    DataValidationError,
    Descriptor,
    Domain,
    search,
    similarity_heatmap,
)
from crossview.alignment import AlignmentModel, DomainStats
from crossview.retrieval import (
    Heatmap,
    bilinear_upsample,
    load_results,
    save_results,
    write_heatmap_csv,
    write_heatmap_pgm,
)

from conftest import load_golden, make_map


def ids(n, prefix="g"):
    return [f"{prefix}{i:03d}" for i in range(n)]


def test_exact_match_ranks_first(rng):
    gallery = rng.standard_normal((6, 4))
    results = search(["q"], gallery[2:3].copy(), ids(6), gallery, k=3)
    assert results[0].hits[0].gallery_id == "g002"
    assert results[0].hits[0].score == pytest.approx(1.0)


def test_orthogonal_query_scores_zero():
    results = search(["q"], np.array([[1.0, 0.0]]), ["g000"], np.array([[0.0, 1.0]]), k=1)
    assert results[0].hits[0].score == pytest.approx(0.0, abs=1e-15)


def test_matches_brute_force_oracle(rng):
    # Independent oracle: plain per-pair cosine plus a stable sort.
    q = rng.standard_normal((3, 8))
    g = rng.standard_normal((5, 8))
    gallery_ids = ids(5)
    results = search(ids(3, "q"), q, gallery_ids, g, k=5)
    for qi, result in enumerate(results):
        scored = []
        for j in range(5):
            cos = float(
                np.dot(q[qi], g[j]) / (np.linalg.norm(q[qi]) * np.linalg.norm(g[j]))
            )
            scored.append((-cos, gallery_ids[j]))
        expected = [gid for _, gid in sorted(scored)]
        assert [h.gallery_id for h in result.hits] == expected


def test_tie_break_by_gallery_id():
    q = np.array([[1.0, 0.0]])
    g = np.array([[2.0, 0.0], [1.0, 0.0], [3.0, 0.0]])  # all cosine 1.0
    results = search(["q"], q, ["zzz", "aaa", "mmm"], g, k=3)
    assert [h.gallery_id for h in results[0].hits] == ["aaa", "mmm", "zzz"]


def test_invariant_to_gallery_rescaling(rng):
    q = rng.standard_normal((4, 6))
    g = rng.standard_normal((7, 6))
    base = search(ids(4, "q"), q, ids(7), g, k=7)
    scaled = g.copy()
    scaled[3] *= 42.0
    rescaled = search(ids(4, "q"), q, ids(7), scaled, k=7)
    for a, b in zip(base, rescaled):
        assert [h.gallery_id for h in a.hits] == [h.gallery_id for h in b.hits]


def test_returns_min_k_n(rng):
    g = rng.standard_normal((3, 4))
    results = search(["q"], rng.standard_normal((1, 4)), ids(3), g, k=10)
    assert len(results[0].hits) == 3


def test_threads_do_not_change_results(rng):
    q = rng.standard_normal((16, 5))
    g = rng.standard_normal((9, 5))
    single = search(ids(16, "q"), q, ids(9), g, k=9, threads=1)
    multi = search(ids(16, "q"), q, ids(9), g, k=9, threads=4)
    assert single == multi


def test_empty_gallery_rejected(rng):
    with pytest.raises(DataValidationError, match="empty gallery"):
        search(["q"], rng.standard_normal((1, 3)), [], np.empty((0, 3)), k=1)


def test_dimension_mismatch(rng):
    with pytest.raises(DataValidationError, match="dimension mismatch"):
        search(["q"], rng.standard_normal((1, 3)), ["g"], rng.standard_normal((1, 4)), k=1)


def test_results_roundtrip(tmp_path, rng):
    results = search(
        ids(3, "q"), rng.standard_normal((3, 4)), ids(5), rng.standard_normal((5, 4)), k=5
    )
    path = tmp_path / "results.jsonl"
    save_results(results, path, meta={"config": {}})
    assert load_results(path) == results


# ---------------------------------------------------------------- heatmaps


def golden_model():
    golden = load_golden("heatmap_golden.json")
    d = golden["d"]
    model = AlignmentModel(
        drone_stats=DomainStats(
            mean=np.array(golden["mu_drone"]),
            projection=np.array(golden["p_drone"]),
            eigenvalues=np.zeros(d),
        ),
        satellite_stats=DomainStats(
            mean=np.array(golden["mu_sat"]),
            projection=np.array(golden["p_sat"]),
            eigenvalues=np.zeros(d),
        ),
        rotation=np.array(golden["rotation"]),
        d=d,
    )
    return golden, model


def test_heatmap_matches_scripted_oracle():
    golden, model = golden_model()
    ambient = golden["ambient_dim"]
    patches = np.array(golden["patches_row_major"])  # (4, ambient), 2x2 row-major
    data = patches.T.reshape(ambient, 2, 2)
    fmap = make_map(data, image_id="q")
    sat = Descriptor(
        values=np.array(golden["sat_vector"]),
        image_id="g",
        domain=Domain.SATELLITE,
    )
    heatmap = similarity_heatmap(fmap, sat, model)
    np.testing.assert_allclose(heatmap.values, golden["expected_grid"], atol=1e-6)
    assert heatmap.values.min() == pytest.approx(0.0)
    assert heatmap.values.max() == pytest.approx(1.0)


def test_heatmap_delta_fixture():
    # Satellite descriptor equal to one aligned patch, every other patch
    # orthogonal to it: response is 1 there, 0 elsewhere.
    d = 4
    eye = np.eye(d)
    model = AlignmentModel(
        drone_stats=DomainStats(np.zeros(d), eye, np.zeros(d)),
        satellite_stats=DomainStats(np.zeros(d), eye, np.zeros(d)),
        rotation=eye,
        d=d,
    )
    patches = np.array(
        [[1.0, 0.0, 0.0, 0.0],
         [0.0, 1.0, 0.0, 0.0],
         [0.0, 0.0, 1.0, 0.0],
         [0.0, 0.0, 0.0, 1.0]]
    )
    fmap = make_map(patches.T.reshape(d, 2, 2), image_id="q")
    sat = Descriptor(values=patches[1], image_id="g", domain=Domain.SATELLITE)
    heatmap = similarity_heatmap(fmap, sat, model)
    expected = np.zeros((2, 2))
    expected[0, 1] = 1.0
    np.testing.assert_allclose(heatmap.values, expected, atol=1e-12)


def test_heatmap_constant_map_warns():
    d = 3
    model = AlignmentModel(
        drone_stats=DomainStats(np.zeros(d), np.eye(d), np.zeros(d)),
        satellite_stats=DomainStats(np.zeros(d), np.eye(d), np.zeros(d)),
        rotation=np.eye(d),
        d=d,
    )
    fmap = make_map(np.broadcast_to([[1.0]], (d, 2, 2)).copy() * np.array([1.0, 2.0, 3.0])[:, None, None])
    sat = Descriptor(values=np.array([1.0, 2.0, 3.0]), image_id="g", domain=Domain.SATELLITE)
    with pytest.warns(UserWarning, match="constant"):
        heatmap = similarity_heatmap(fmap, sat, model)
    np.testing.assert_array_equal(heatmap.values, np.full((2, 2), 0.5))


def test_heatmap_dimension_mismatch():
    d = 3
    model = AlignmentModel(
        drone_stats=DomainStats(np.zeros(d), np.eye(d), np.zeros(d)),
        satellite_stats=DomainStats(np.zeros(d), np.eye(d), np.zeros(d)),
        rotation=np.eye(d),
        d=d,
    )
    fmap = make_map(np.ones((4, 2, 2)))
    sat = Descriptor(values=np.ones(3), image_id="g", domain=Domain.SATELLITE)
    with pytest.raises(DataValidationError, match="does not match"):
        similarity_heatmap(fmap, sat, model)


def test_bilinear_upsample_preserves_extrema_locations():
    values = np.array([[0.2, 0.4, 0.1], [0.6, 1.0, 0.3], [0.0, 0.5, 0.2]])
    up = bilinear_upsample(values, 9, 9)
    assert up.shape == (9, 9)
    # align-corners: corners map exactly
    assert up[0, 0] == pytest.approx(values[0, 0])
    assert up[-1, -1] == pytest.approx(values[-1, -1])
    assert np.unravel_index(np.argmax(up), up.shape) == (4, 4)
    assert np.unravel_index(np.argmin(up), up.shape) == (8, 0)
    assert up.min() >= 0.0 and up.max() <= 1.0


def test_upsample_degenerate_sizes():
    values = np.array([[0.0, 1.0]])
    up = bilinear_upsample(values, 3, 4)
    assert up.shape == (3, 4)
    np.testing.assert_allclose(up[:, 0], 0.0)
    np.testing.assert_allclose(up[:, -1], 1.0)


def test_pgm_and_csv_export(tmp_path):
    heatmap = Heatmap(
        query_id="q", gallery_id="g", values=np.array([[0.0, 0.5], [0.75, 1.0]])
    )
    pgm = tmp_path / "h.pgm"
    csv = tmp_path / "h.csv"
    write_heatmap_pgm(heatmap, pgm, comment="meta")
    write_heatmap_csv(heatmap, csv, comment="meta")
    raw = pgm.read_bytes()
    assert raw.startswith(b"P5\n# meta\n2 2\n65535\n")
    samples = np.frombuffer(raw.split(b"65535\n", 1)[1], dtype=">u2").reshape(2, 2)
    assert samples[0, 0] == 0
    assert samples[1, 1] == 65535
    assert samples[0, 1] == round(0.5 * 65535)
    lines = csv.read_text().splitlines()
    assert lines[0] == "# meta"
    grid = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
    np.testing.assert_array_equal(grid, heatmap.values)
