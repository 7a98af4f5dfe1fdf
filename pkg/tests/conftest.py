import pytest

from scenehyper.data import build_dataset, default_specs
from scenehyper.harness.config import TrainConfig

TINY = dict(
    downsample_sizes=(64, 32, 16, 8), radii=(0.15, 0.3, 0.5, 0.7), max_samples=(8, 8, 8, 8),
    sa_widths=(8, 8, 16, 16), fp_width=16, num_candidates=8, n_d=4,
    decoder_layers=2, width=8, attention_heads=2, ffn_width=16,
    embed_count=4, unit_fan_in=4, c_a=4, c_s=4,
    warmup_epochs=1, finetune_epochs=1, batch_size=4,
)


def tiny_config(**kw) -> TrainConfig:
    return TrainConfig(**{**TINY, **kw})


@pytest.fixture(scope="session")
def tiny_data(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny_data")
    build_dataset(default_specs(), 40, 0, out)
    return out
