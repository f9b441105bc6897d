"""Config parsing/echo and checkpoint round trips."""

import numpy as np
import pytest

from voxseg import autodiff as ad
from voxseg import checkpoint as ckpt
from voxseg import model as mdl
from voxseg.config import Config, ConfigError, model_spec_from_config
from voxseg.optim import AdamW, AdamWConfig


class TestConfig:
    def test_defaults_resolve(self):
        cfg = Config.default()
        assert cfg.get_int("model.embed_dim") == 64
        assert cfg.get_float("train.lr") == 2e-4
        assert cfg.get_bool("prompter.share_qk") is True
        assert cfg.get_int_tuple("encoder.taps") == (3, 6, 9, 12)

    def test_load_file_with_comments(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text(
            "# comment\n"
            "model.embed_dim = 32   # inline comment\n"
            "prompter.layer=3\n"
            "\n"
            "augment.flip_h = 0.5\n"
        )
        cfg = Config.load(path)
        assert cfg.get_int("model.embed_dim") == 32
        assert cfg.get_int("prompter.layer") == 3
        assert cfg.get_float("augment.flip_h") == 0.5
        assert cfg.get_int("patch.h") == 4  # untouched default

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("model.embed_dmi = 32\n")
        with pytest.raises(ConfigError):
            Config.load(path)
        with pytest.raises(ConfigError):
            Config.default().override("nope", 1)

    def test_malformed_line_rejected(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("just some words\n")
        with pytest.raises(ConfigError):
            Config.load(path)

    def test_echo_is_exact(self):
        cfg = Config.default().override("train.lr", "2e-4")
        lines = cfg.resolved_lines()
        assert "train.lr = 2e-4" in lines
        assert len(lines) == len(cfg.values)
        assert lines == sorted(lines)

    def test_bad_values_raise(self):
        cfg = Config.default().override("model.embed_dim", "abc")
        with pytest.raises(ConfigError):
            cfg.get_int("model.embed_dim")
        cfg2 = Config.default().override("prompter.share_qk", "maybe")
        with pytest.raises(ConfigError):
            cfg2.get_bool("prompter.share_qk")

    def test_model_spec_from_config_auto_adapter(self):
        spec = model_spec_from_config(Config.default())
        assert spec.adapter_dim == 64 // 4
        spec2 = model_spec_from_config(
            Config.default().override("encoder.adapter_dim", "8")
        )
        assert spec2.adapter_dim == 8


def _tiny_store(seed=0):
    spec = mdl.ModelSpec(
        vol_dims=(16, 16, 16), patch=(4, 4, 4), embed_dim=16, heads=2,
        adapter_dim=4, prompt_n=16, dec_channels=8,
    ).validate()
    with ad.precision("f32"):
        return spec, mdl.init_store(spec, seed)


class TestCheckpoint:
    def test_round_trip_bitwise(self, tmp_path):
        spec, store = _tiny_store()
        opt = AdamW(store, AdamWConfig())
        # take one real-ish step so moments are nonzero
        for _, t in store.trainable():
            t.grad = np.ones_like(t.data)
        opt.step()
        path = tmp_path / "m.ckpt"
        ckpt.save_checkpoint(path, store, opt, config_lines=["a = 1", "b = two"])
        step, lines, entries, moments = ckpt.load_checkpoint(path)
        assert step == 1
        assert lines == ["a = 1", "b = two"]
        assert [n for n, _, _ in entries] == store.names()
        for name, frozen, arr in entries:
            assert frozen == store.is_frozen(name)
            assert np.array_equal(arr, store[name].data)
        for name, (m, v) in moments.items():
            assert np.array_equal(m, opt.state()["m"][name])
            assert np.array_equal(v, opt.state()["v"][name])

    def test_restore_into_existing_store(self, tmp_path):
        spec, store = _tiny_store(seed=0)
        path = tmp_path / "m.ckpt"
        ckpt.save_checkpoint(path, store, None, step=0)
        _, _, entries, _ = ckpt.load_checkpoint(path)
        _, store2 = _tiny_store(seed=99)  # different init
        ckpt.restore_into(store2, entries)
        for name, t, _ in store.items():
            assert np.array_equal(t.data, store2[name].data)

    def test_store_from_entries(self, tmp_path):
        spec, store = _tiny_store()
        path = tmp_path / "m.ckpt"
        ckpt.save_checkpoint(path, store, None)
        _, _, entries, _ = ckpt.load_checkpoint(path)
        rebuilt = ckpt.store_from_entries(entries)
        assert rebuilt.names() == store.names()
        assert rebuilt.trainable_params() == store.trainable_params()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOTACKPT\nstuff\n")
        with pytest.raises(ckpt.CheckpointError) as err:
            ckpt.load_checkpoint(path)
        assert err.value.code == "bad_magic"

    def test_truncated_payload(self, tmp_path):
        spec, store = _tiny_store()
        path = tmp_path / "m.ckpt"
        ckpt.save_checkpoint(path, store, None)
        raw = path.read_bytes()
        path.write_bytes(raw[:-8])
        with pytest.raises(Exception):
            ckpt.load_checkpoint(path)

    def test_layout_mismatch_rejected(self, tmp_path):
        spec, store = _tiny_store()
        path = tmp_path / "m.ckpt"
        ckpt.save_checkpoint(path, store, None)
        _, _, entries, _ = ckpt.load_checkpoint(path)
        other_spec = mdl.ModelSpec(
            vol_dims=(16, 16, 16), patch=(4, 4, 4), embed_dim=16, heads=2,
            adapter_dim=4, prompt_n=16, dec_channels=8, share_qk=False,
        ).validate()
        with ad.precision("f32"):
            other = mdl.init_store(other_spec, 0)
        with pytest.raises(ckpt.CheckpointError):
            ckpt.restore_into(other, entries)
