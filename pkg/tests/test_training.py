import numpy as np
import pytest

from fiberpaint.checkpoints import read_checkpoint, write_checkpoint
from fiberpaint.errors import ContractError, NumericalError
from fiberpaint.model import InpaintingGan, ModelConfig
from fiberpaint.phantoms import DatasetSplit, desk_phantom_config, generate_phantom, scan_seed
from fiberpaint.seeding import STREAM_MODEL_INIT, derive_rng
from fiberpaint.training import METRIC_COLUMNS, TrainConfig, Trainer, load_model_arrays


@pytest.fixture(scope="module")
def tiny_cohort():
    volumes = {}
    for scan_id in range(6):
        cfg = desk_phantom_config((16, 16, 16), scan_seed(123, scan_id))
        vol, _ = generate_phantom(cfg)
        volumes[scan_id] = vol
    split = DatasetSplit(train=(0, 1, 2, 3), val=(4,), test=(5,))
    return volumes, split


def _configs(epochs=2, **overrides):
    model_cfg = ModelConfig(n=4, width=8)
    defaults = dict(batch_size=2, epochs=epochs, lr=1e-3, checkpoint_every=1)
    defaults.update(overrides)
    return model_cfg, TrainConfig(**defaults)


class TestTrainerSmoke:
    def test_single_epoch_produces_finite_metrics(self, tiny_cohort):
        volumes, split = tiny_cohort
        model_cfg, train_cfg = _configs(epochs=1)
        trainer = Trainer(model_cfg, train_cfg, volumes, split)
        history = trainer.run()
        assert len(history) == 1
        row = history[0]
        assert set(row) == set(METRIC_COLUMNS)
        assert all(np.isfinite(v) for v in row.values())

    def test_partial_batch_below_two_is_dropped(self, tiny_cohort):
        volumes, split = tiny_cohort
        # 4 training scans, batch 3: one batch of 3, trailing single dropped
        model_cfg, train_cfg = _configs(epochs=1, batch_size=3)
        trainer = Trainer(model_cfg, train_cfg, volumes, split)
        history = trainer.run()
        assert np.isfinite(history[0]["total"])

    def test_metrics_file_has_contract_columns(self, tiny_cohort, tmp_path):
        volumes, split = tiny_cohort
        model_cfg, train_cfg = _configs(epochs=1)
        Trainer(model_cfg, train_cfg, volumes, split, out_dir=tmp_path).run()
        header = (tmp_path / "metrics.tsv").read_text().splitlines()[0]
        assert header.split("\t") == list(METRIC_COLUMNS)


class TestDeterminism:
    def test_same_seed_reproduces_history_exactly(self, tiny_cohort):
        volumes, split = tiny_cohort
        model_cfg, train_cfg = _configs(epochs=2)
        h1 = Trainer(model_cfg, train_cfg, volumes, split).run()
        h2 = Trainer(model_cfg, train_cfg, volumes, split).run()
        assert h1 == h2

    def test_resume_retraces_uninterrupted_trajectory(self, tiny_cohort, tmp_path):
        volumes, split = tiny_cohort
        model_cfg, train_cfg4 = _configs(epochs=4)
        straight = Trainer(model_cfg, train_cfg4, volumes, split, out_dir=tmp_path / "a")
        straight.run()

        _, train_cfg2 = _configs(epochs=2)
        first_leg = Trainer(model_cfg, train_cfg2, volumes, split, out_dir=tmp_path / "b")
        first_leg.run()
        resumed = Trainer(model_cfg, train_cfg4, volumes, split, out_dir=tmp_path / "b2")
        resumed.load_checkpoint(tmp_path / "b" / "ckpt_00002.mdck")
        resumed.run()
        assert resumed.epoch == 4
        for name, p in straight.model.all_parameters().items():
            assert np.array_equal(p.data, resumed.model.all_parameters()[name].data), name
        assert straight.history[2:] == resumed.history

    def test_epoch_numbering_continues_after_resume(self, tiny_cohort, tmp_path):
        volumes, split = tiny_cohort
        model_cfg, train_cfg = _configs(epochs=3)
        trainer = Trainer(model_cfg, train_cfg, volumes, split, out_dir=tmp_path)
        trainer.run()
        fresh = Trainer(model_cfg, train_cfg, volumes, split)
        fresh.load_checkpoint(tmp_path / "ckpt_00003.mdck")
        assert fresh.epoch == 3


class TestCheckpointFormat:
    def test_roundtrip_preserves_arrays_bitwise(self, tmp_path):
        rng = np.random.default_rng(0)
        arrays = {
            "weights": rng.normal(size=(3, 4)).astype(np.float32),
            "scalar": np.asarray(1.25, dtype=np.float64),
            "step": np.asarray(7, dtype=np.int64),
        }
        path = tmp_path / "state.mdck"
        write_checkpoint(path, epoch=5, config_text="a = 1\n", rng_state={"x": 1}, arrays=arrays)
        ckpt = read_checkpoint(path)
        assert ckpt.epoch == 5
        assert ckpt.config_text == "a = 1\n"
        assert ckpt.rng_state == {"x": 1}
        for name, arr in arrays.items():
            assert np.array_equal(ckpt.arrays[name], arr)
            assert ckpt.arrays[name].dtype == arr.dtype

    def test_magic_guard(self, tmp_path):
        path = tmp_path / "bogus.mdck"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(ContractError, match="magic"):
            read_checkpoint(path)

    def test_shape_mismatch_is_a_versioned_error(self, tiny_cohort, tmp_path):
        volumes, split = tiny_cohort
        model_cfg, train_cfg = _configs(epochs=1)
        trainer = Trainer(model_cfg, train_cfg, volumes, split, out_dir=tmp_path)
        trainer.run()
        other = InpaintingGan(ModelConfig(n=4, width=12), derive_rng(0, STREAM_MODEL_INIT))
        ckpt = read_checkpoint(tmp_path / "ckpt_00001.mdck")
        with pytest.raises(ContractError, match="v1"):
            load_model_arrays(other, ckpt.arrays)


def test_nan_abort_raises_numerical_error(tiny_cohort):
    volumes, split = tiny_cohort
    model_cfg, train_cfg = _configs(epochs=10, lr=1e12)  # guaranteed blow-up
    trainer = Trainer(model_cfg, train_cfg, volumes, split)
    with np.errstate(all="ignore"), pytest.raises(NumericalError):
        trainer.run()


def test_empty_training_split_rejected(tiny_cohort):
    volumes, _ = tiny_cohort
    model_cfg, train_cfg = _configs()
    bad_split = DatasetSplit(train=(), val=(4,), test=(5,))
    with pytest.raises(ContractError):
        Trainer(model_cfg, train_cfg, volumes, bad_split)


def test_train_config_contracts():
    with pytest.raises(ContractError):
        TrainConfig(batch_size=1)
    with pytest.raises(ContractError):
        TrainConfig(smoothing=0.4)
    with pytest.raises(ContractError):
        TrainConfig(epochs=0)
