import pytest

from survfix.pipeline import PipelineConfig
from survfix.synth import SynthConfig, generate, write_dataset

FAST = PipelineConfig(gp_depths=(2,), gp_seeds=2, gp_generations=20, n_bootstrap=50)

SIX_STRATA = SynthConfig(
    n_subjects=1800,
    strata=6,
    beta_true=(0.5, -0.5),
    teachers=(("t_stage", "severity * 0.693"),),
    rng_seed=0,
)


@pytest.fixture(scope="session")
def fast_config():
    return FAST


@pytest.fixture(scope="session")
def six_strata_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("six")
    paths = write_dataset(generate(SIX_STRATA), out, "six")
    return paths


@pytest.fixture(scope="session")
def noise_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("noise")
    return write_dataset(generate(SynthConfig(n_subjects=400, beta_true=(0.0, 0.0), rng_seed=3)), out, "noise")
