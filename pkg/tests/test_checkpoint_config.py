import numpy as np
import pytest

from msaan.checkpoint import dumps, load_checkpoint, loads, save_checkpoint
from msaan.config import PRESET_VALUES, load_config_file, parse_config_text, resolve
from msaan.errors import CheckpointError, ContractError
from msaan.model import ModelConfig, init_weights

CFG = ModelConfig(n_blocks=2, channels=20, scale=3, use_fg=False)


def trained_store(seed=0):
    store = init_weights(CFG, np.random.default_rng(seed))
    rng = np.random.default_rng(seed + 1)
    for p in store.entries.values():
        p.m[...] = rng.standard_normal(p.m.shape)
        p.v[...] = rng.uniform(size=p.v.shape)
    store.step = 123
    return store


def test_round_trip_is_bit_exact(tmp_path):
    store = trained_store()
    save_checkpoint(tmp_path / "a.msaa", CFG, store)
    cfg, back = load_checkpoint(tmp_path / "a.msaa", expected=CFG)
    assert cfg == CFG and back.step == 123
    for name, p in store.entries.items():
        q = back.entries[name]
        assert p.value.tobytes() == q.value.tobytes()
        assert p.m.tobytes() == q.m.tobytes() and p.v.tobytes() == q.v.tobytes()
    assert dumps(cfg, back) == dumps(CFG, store)


def test_weights_only():
    store = trained_store()
    cfg, back = loads(dumps(CFG, store, with_adam=False))
    assert back.step == 0 and not back.entries["sfem.w.kernel"].m.any()


def test_config_mismatch_rejected():
    blob = dumps(CFG, trained_store())
    with pytest.raises(CheckpointError):
        loads(blob, expected=CFG.ablate("leb"))
    with pytest.raises(CheckpointError):
        loads(b"XXXX" + blob[4:])
    with pytest.raises(CheckpointError):
        loads(blob[:-7])
    with pytest.raises(CheckpointError):
        loads(blob + b"\0")


def test_config_layers():
    cfg = resolve({"preset": "light", "lr_max": 5e-4, "seed": 3}, {"seed": 9})
    assert (cfg.n_blocks, cfg.channels) == (12, 40)
    assert cfg.lr_max == 5e-4 and cfg.seed == 9
    assert resolve({}, {"preset": "standard"}).channels == 60
    assert set(PRESET_VALUES) == {"tiny", "light", "standard"}


def test_config_file_parsing(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\nscale = 3\nuse_fg = false  # trailing\n\nlr_max=2e-3\n")
    assert load_config_file(path) == {"scale": 3, "use_fg": False, "lr_max": 2e-3}
    with pytest.raises(ContractError):
        parse_config_text("nonsense = 1")
    with pytest.raises(ContractError):
        parse_config_text("scale = two")
    with pytest.raises(ContractError):
        parse_config_text("just text")


def test_config_validates_model():
    with pytest.raises(ContractError):
        resolve({}, {"channels": 22})
    with pytest.raises(ContractError):
        resolve({}, {"preset": "huge"})


def test_echo_lists_every_field():
    text = resolve().echo()
    assert "lr_min=1e-07" in text and "preset=tiny" in text
