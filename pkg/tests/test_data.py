import logging

import numpy as np
import pytest
from PIL import Image

from malaria_cnn import data as D
from malaria_cnn.errors import ConfigError, LayoutError


def save_png(path, arr, mode=None):
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(arr, dtype=np.uint8), mode=mode).save(path)


@pytest.fixture
def corpus(tmp_path):
    rng = np.random.default_rng(0)
    for cls, n in (("Parasitized", 3), ("Uninfected", 4)):
        for i in range(n):
            save_png(tmp_path / cls / f"img_{i}.png", rng.integers(0, 256, (10, 12, 3)))
    return tmp_path


class TestDecode:
    def test_white(self, tmp_path):
        save_png(tmp_path / "w.png", np.full((2, 2, 3), 255))
        assert np.all(D.decode_png(tmp_path / "w.png", (2, 2)) == 1.0)

    def test_checkerboard_downsample(self, tmp_path):
        board = (np.indices((4, 4)).sum(axis=0) % 2) * 255
        save_png(tmp_path / "c.png", np.repeat(board[..., None], 3, axis=2))
        out = D.decode_png(tmp_path / "c.png", (2, 2))
        assert out.shape == (2, 2, 3)
        assert np.all(np.abs(out - 0.5) <= 1 / 255)

    def test_rgba_alpha_dropped(self, tmp_path):
        rgba = np.zeros((3, 3, 4), dtype=np.uint8)
        rgba[..., 0], rgba[..., 3] = 255, 10
        save_png(tmp_path / "a.png", rgba, mode="RGBA")
        out = D.decode_png(tmp_path / "a.png", (3, 3))
        assert out.shape == (3, 3, 3)
        assert np.all(out[..., 0] == 1.0) and np.all(out[..., 1:] == 0.0)

    def test_upsample_ramp_by_hand(self):
        # half-pixel centres: outputs sample input x = -0.25 (clamped), 0.25, 0.75, 1.25 (clamped)
        img = np.array([[0.0, 1.0]], dtype=np.float32).reshape(1, 2, 1)
        out = D.resize_bilinear(img, (1, 4))
        assert out[0, :, 0].tolist() == [0.0, 0.25, 0.75, 1.0]

    def test_resize_and_range(self, tmp_path):
        save_png(tmp_path / "r.png", np.random.default_rng(1).integers(0, 256, (37, 23, 3)))
        out = D.decode_png(tmp_path / "r.png", (16, 16))
        assert out.shape == (16, 16, 3) and out.min() >= 0 and out.max() <= 1


class TestLoad:
    def test_labels_and_order(self, corpus):
        recs = D.load_image_dataset(corpus, (8, 8), workers=3)
        assert len(recs) == 7
        ids = [r.source_id for r in recs]
        assert ids == sorted(ids)
        assert all(r.label == (1 if r.source_id.startswith("Parasitized/") else 0) for r in recs)
        assert all(r.pixels.shape == (8, 8, 3) and 0 <= r.pixels.min() and r.pixels.max() <= 1 for r in recs)

    def test_repeat_scans_identical(self, corpus):
        a = D.load_image_dataset(corpus, (8, 8), workers=1)
        b = D.load_image_dataset(corpus, (8, 8), workers=4)
        assert [r.source_id for r in a] == [r.source_id for r in b]
        assert all(np.array_equal(x.pixels, y.pixels) for x, y in zip(a, b))

    def test_missing_subdir(self, tmp_path):
        save_png(tmp_path / "Parasitized" / "x.png", np.zeros((2, 2, 3)))
        with pytest.raises(LayoutError):
            D.load_image_dataset(tmp_path)

    def test_corrupt_file_skipped(self, corpus, caplog):
        (corpus / "Uninfected" / "broken.png").write_bytes(b"\x89PNG not really")
        skipped = []
        with caplog.at_level(logging.WARNING):
            recs = D.load_image_dataset(corpus, (8, 8), skipped=skipped)
        assert len(recs) == 7
        assert [s.source_id for s in skipped] == ["Uninfected/broken.png"]
        assert "skipped 1" in caplog.text

    def test_fraction_subset_is_seeded(self, corpus):
        a = D.load_image_dataset(corpus, (4, 4), fraction=0.5, seed=1)
        b = D.load_image_dataset(corpus, (4, 4), fraction=0.5, seed=1)
        assert len(a) == 4 and [r.source_id for r in a] == [r.source_id for r in b]


class TestSplit:
    def test_full_corpus_sizes(self):
        assert D.split_811(27_558, 0).sizes() == (22_046, 2_756, 2_756)

    def test_smallest(self):
        assert D.split_811(10, 0).sizes() == (8, 1, 1)

    def test_too_small(self):
        with pytest.raises(ConfigError):
            D.split_811(9)

    def test_seeded(self):
        a, b, c = D.split_811(500, 1), D.split_811(500, 1), D.split_811(500, 2)
        assert all(np.array_equal(getattr(a, f), getattr(b, f)) for f in ("train", "validation", "test"))
        assert not np.array_equal(a.test, c.test)
        assert a.sizes() == c.sizes()

    def test_disjoint_and_covering(self):
        for n in np.linspace(10, 30_000, 50).astype(int):
            s = D.split_811(int(n), int(n))
            tr, va, te = map(set, (s.train.tolist(), s.validation.tolist(), s.test.tolist()))
            assert not (tr & va or tr & te or va & te)
            assert tr | va | te == set(range(n))
            assert len(te) == len(va) == -(-n // 10)


class TestBatches:
    @pytest.fixture(scope="class")
    @staticmethod
    def recs():
        return D.synthetic_dataset(100, (16, 16), seed=0)

    def test_batch_sizes(self, recs):
        sizes = [x.shape[0] for x, _ in D.batch_iter(recs, range(100), 32)]
        assert sizes == [32, 32, 32, 4]

    def test_permutation(self, recs):
        order = D.epoch_order(range(100), seed=3, epoch=0)
        assert sorted(order.tolist()) == list(range(100))
        labels = np.concatenate([y for _, y in D.batch_iter(recs, range(100), 32, seed=3)])
        assert np.array_equal(labels, D.onehot([recs[i].label for i in order]))

    def test_epochs_reshuffle(self):
        a = D.epoch_order(range(1000), seed=0, epoch=0)
        b = D.epoch_order(range(1000), seed=0, epoch=1)
        assert np.mean(a != b) >= 0.99

    def test_onehot(self):
        oh = D.onehot([0, 1, 1])
        assert oh.tolist() == [[1, 0], [0, 1], [0, 1]]
        assert np.all(oh.sum(axis=1) == 1)


class TestSynthetic:
    def test_balance_and_range(self):
        recs = D.synthetic_dataset(2000, (32, 32), seed=0)
        labels = np.array([r.label for r in recs])
        assert np.sum(labels == 0) == np.sum(labels == 1) == 1000
        assert all(r.pixels.min() >= 0 and r.pixels.max() <= 1 and r.pixels.shape == (32, 32, 3) for r in recs)

    @pytest.mark.parametrize("n,size", [(3, (32, 32)), (0, (32, 32)), (10, (8, 8))])
    def test_invalid(self, n, size):
        with pytest.raises(ConfigError):
            D.synthetic_dataset(n, size)

    def test_three_nn_baseline_learns(self):
        recs = D.synthetic_dataset(1000, (32, 32), seed=1)
        x = np.stack([r.pixels.ravel() for r in recs]).astype(np.float64)
        y = np.array([r.label for r in recs])
        cut = 800
        xtr, ytr, xte, yte = x[:cut], y[:cut], x[cut:], y[cut:]
        d2 = (xte ** 2).sum(1)[:, None] + (xtr ** 2).sum(1)[None, :] - 2 * xte @ xtr.T
        nn = np.argsort(d2, axis=1)[:, :3]
        pred = (ytr[nn].sum(axis=1) >= 2).astype(int)
        assert np.mean(pred == yte) > 0.7
