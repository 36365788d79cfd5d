import numpy as np
import pytest

from imuvid.align import CrossModalAligner
from imuvid.errors import FormatError
from imuvid.evaluate import WindowClassifier
from imuvid.imu_encoder import EncoderConfig, MaskedPretrainer
from imuvid.serialize import (
    load_aligner,
    load_classifier,
    load_imu_encoder,
    load_masked,
    save_aligner,
    save_classifier,
    save_masked,
)
from imuvid.synthetic import SynthConfig, generate_dataset
from imuvid.video_encoder import VideoEncoderConfig

SMALL_IMU = EncoderConfig(model_dim=8, num_layers=1, num_heads=2, ff_dim=16, dropout=0.0)
SMALL_VID = VideoEncoderConfig(
    frame_height=8, frame_width=8, tubelet=(2, 4, 4),
    model_dim=8, num_layers=1, num_heads=2, ff_dim=16, dropout=0.0,
)


@pytest.fixture(scope="module")
def world():
    cfg = SynthConfig(
        num_classes=2, train_per_class=6, heldout_per_class=2, ood_per_class=2,
        frame_height=8, frame_width=8, seed=2,
    )
    return cfg, generate_dataset(cfg)


class TestAlignerCheckpoint:
    def test_forward_outputs_bitwise_after_roundtrip(self, world, tmp_path):
        _, ds = world
        train = ds.split("train")
        al = CrossModalAligner(imu_config=SMALL_IMU, video_config=SMALL_VID,
                               proj_dim=8, epochs=1, batch_size=6, seed=0)
        al.fit(train.items)
        path = tmp_path / "align.ckpt"
        save_aligner(al, path)
        back = load_aligner(path)
        x = train.windows()
        np.testing.assert_array_equal(al.transform(x), back.transform(x))
        clips = train.clips()
        np.testing.assert_array_equal(al.encode_clips(clips), back.encode_clips(clips))

    def test_save_load_save_identical_bytes(self, world, tmp_path):
        _, ds = world
        al = CrossModalAligner(imu_config=SMALL_IMU, video_config=SMALL_VID,
                               proj_dim=8, epochs=0, batch_size=6, seed=0)
        al.fit(ds.split("train").items)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_aligner(al, p1)
        save_aligner(load_aligner(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_wrong_kind_rejected(self, world, tmp_path):
        _, ds = world
        pre = MaskedPretrainer(imu_config=SMALL_IMU, epochs=0, seed=0)
        pre.fit(ds.split("train").windows())
        path = tmp_path / "masked.ckpt"
        save_masked(pre, path)
        with pytest.raises(FormatError, match="alignment"):
            load_aligner(path)


class TestMaskedCheckpoint:
    def test_roundtrip_preserves_encoder_outputs(self, world, tmp_path):
        _, ds = world
        windows = ds.split("train").windows()
        pre = MaskedPretrainer(imu_config=SMALL_IMU, epochs=1, batch_size=6, seed=0)
        pre.fit(windows)
        path = tmp_path / "masked.ckpt"
        save_masked(pre, path)
        back = load_masked(path)
        a = pre.encoder_.window_embedding(windows).data
        b = back.encoder_.window_embedding(windows).data
        np.testing.assert_array_equal(a, b)
        assert back.mask_ratio == pre.mask_ratio


class TestClassifierCheckpoint:
    def test_roundtrip_preserves_predictions(self, world, tmp_path):
        _, ds = world
        train = ds.split("train")
        clf = WindowClassifier(mode="scratch", imu_config=SMALL_IMU, epochs=1,
                               batch_size=6, seed=0)
        clf.fit(train.windows(), train.labels())
        path = tmp_path / "sup.ckpt"
        save_classifier(clf, path)
        back = load_classifier(path)
        x = ds.split("heldout").windows()
        np.testing.assert_array_equal(clf.predict(x), back.predict(x))
        np.testing.assert_array_equal(clf._logits(x), back._logits(x))


class TestEncoderExtraction:
    def test_encoder_loads_from_all_checkpoint_kinds(self, world, tmp_path):
        _, ds = world
        train = ds.split("train")
        windows = train.windows()

        al = CrossModalAligner(imu_config=SMALL_IMU, video_config=SMALL_VID,
                               proj_dim=8, epochs=0, seed=0)
        al.fit(train.items)
        save_aligner(al, tmp_path / "a.ckpt")
        enc_a, cfg_a = load_imu_encoder(tmp_path / "a.ckpt")
        np.testing.assert_array_equal(
            enc_a.window_embedding(windows).data,
            al.model_.imu.window_embedding(windows).data,
        )
        assert cfg_a["kind"] == "align"

        pre = MaskedPretrainer(imu_config=SMALL_IMU, epochs=0, seed=0)
        pre.fit(windows)
        save_masked(pre, tmp_path / "m.ckpt")
        enc_m, cfg_m = load_imu_encoder(tmp_path / "m.ckpt")
        assert cfg_m["kind"] == "masked"
        np.testing.assert_array_equal(
            enc_m.window_embedding(windows).data,
            pre.encoder_.window_embedding(windows).data,
        )
