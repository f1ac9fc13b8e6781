import json

import pytest

from evagcn.config import RunConfig, TrainConfig, iter_keys, rescale_schedule


def test_defaults():
    cfg = RunConfig()
    assert cfg.sampling.max_num_events == 40
    assert cfg.point_graph.radius == 5.0
    assert cfg.voxel_graph.radius == 2.0
    assert cfg.voxel.top_k == 2048
    assert tuple(cfg.voxel.voxel_size) == (4, 4, 4)
    assert cfg.train.epochs == 150
    assert cfg.train.lr == 0.001
    assert cfg.train.lr_decay_epochs == [60, 110]
    assert cfg.train.lr_decay_factor == 0.1
    assert cfg.model.num_blocks == 3


def test_hash_is_canonical():
    a, b = RunConfig(), RunConfig.from_dict(json.loads(RunConfig().canonical_json()))
    assert a.hash() == b.hash()
    assert len(a.digest()) == 32
    c = a.with_overrides(["model.hidden_dim=32"])
    assert c.hash() != a.hash()
    # the model change does not invalidate cached graphs
    assert c.preprocess_hash() == a.preprocess_hash()
    assert a.with_overrides(["voxel.top_k=100"]).preprocess_hash() != a.preprocess_hash()
    # training-only knobs do not change the model hash
    assert a.with_overrides(["train.lr=0.01"]).model_hash() == a.model_hash()
    assert a.with_overrides(['train.branch_mode="point_only"']).model_hash() != a.model_hash()


def test_overrides_and_errors():
    cfg = RunConfig().with_overrides(["train.lr_decay_epochs=[10,20]", "sampling.strategy=fps",
                                      "voxel.voxel_size=[2,2,2]"])
    assert cfg.train.lr_decay_epochs == [10, 20]
    assert cfg.sampling.strategy == "fps"
    with pytest.raises(KeyError):
        RunConfig().with_overrides(["train.nope=1"])
    with pytest.raises(ValueError):
        RunConfig().with_overrides(["train.lr"])
    with pytest.raises(KeyError):
        RunConfig.from_dict({"train": {"bogus": 1}})


def test_schedule_validation_and_lr():
    with pytest.raises(ValueError):
        TrainConfig(epochs=50, lr_decay_epochs=[60])
    with pytest.raises(ValueError):
        TrainConfig(lr_decay_epochs=[60, 60])
    t = TrainConfig(epochs=150)
    assert t.lr_at(0) == 0.001 and t.lr_at(59) == 0.001
    assert t.lr_at(60) == pytest.approx(1e-4)
    assert t.lr_at(110) == pytest.approx(1e-5)
    assert rescale_schedule([60, 110], 150, 30) == [12, 22]
    assert rescale_schedule([60, 110], 150, 1) == []


def test_save_load(tmp_path):
    cfg = RunConfig().with_overrides(["train.seed=5"])
    cfg.save(tmp_path / "c.json")
    assert RunConfig.load(tmp_path / "c.json").hash() == cfg.hash()
    yaml = pytest.importorskip("yaml")
    (tmp_path / "c.yaml").write_text(yaml.safe_dump({"train": {"seed": 5}}))
    assert RunConfig.load(tmp_path / "c.yaml").hash() == cfg.hash()


def test_iter_keys_lists_every_field():
    keys = dict(iter_keys())
    d = RunConfig().to_dict()
    assert len(keys) == sum(len(v) for v in d.values())
    assert keys["train.epochs"] == 150
