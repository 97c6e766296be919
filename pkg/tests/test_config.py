import pytest

from pqrlka.config import PipelineConfig, load_config, save_config
from pqrlka.dataio import DataFormatError


def test_defaults():
    cfg = PipelineConfig()
    assert (cfg.path_length, cfg.walks_per_node, cfg.embed_dim, cfg.out_dim, cfg.hidden) == (7, 100, 128, 256, 256)
    assert (cfg.batch_size, cfg.clip_norm, cfg.seq_len, cfg.lam, cfg.et_cap) == (64, 10.0, 200, 0.5, 500.0)
    assert (cfg.test_fraction, cfg.difficulty_levels, cfg.kg_method, cfg.kg_threshold) == (0.2, 100, "kappa_adj", 0.3)
    assert cfg.training().batch_size == 64 and cfg.model().lam == 0.5 and cfg.skipgram().dim == 128


def test_roundtrip(tmp_path):
    cfg = PipelineConfig(seed=4, lr=0.01, sg_parallel=True, method_thresholds={"kappa_adj": 0.15, "sk": 0.1})
    save_config(cfg, tmp_path / "c.ini")
    assert load_config(tmp_path / "c.ini") == cfg


def test_partial_file_overrides_defaults(tmp_path):
    (tmp_path / "c.ini").write_text("[train]\nepochs = 3\n\n[kg.thresholds]\nphi = 0.2\n")
    cfg = load_config(tmp_path / "c.ini")
    assert cfg.epochs == 3 and cfg.hidden == 256
    assert cfg.threshold_for("phi") == 0.2 and cfg.threshold_for("yule") == 0.3


@pytest.mark.parametrize("text", ["[x]\nnope = 1\n", "[train]\nepochs = many\n", "[run]\ndeterministic = maybe\n"])
def test_bad_files(tmp_path, text):
    (tmp_path / "c.ini").write_text(text)
    with pytest.raises(DataFormatError):
        load_config(tmp_path / "c.ini")


def test_parallel_skipgram_needs_nondeterministic_mode():
    assert not PipelineConfig(sg_parallel=True).skipgram().parallel
    assert PipelineConfig(sg_parallel=True, deterministic=False).skipgram().parallel
