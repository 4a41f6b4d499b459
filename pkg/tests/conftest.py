import warnings

import pytest
from hypothesis import settings

from dmnet.config import Config
from dmnet.data import SyntheticDatasetSpec, build_index, generate_synthetic_dataset, load_fold_spec

settings.register_profile("default", deadline=None, max_examples=30)
settings.load_profile("default")


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("shapes")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # 160 < 10 x 8 classes is fine for 1-shot tests
        generate_synthetic_dataset(SyntheticDatasetSpec(n_images=160, image_size=32, seed=0), root)
    return root


@pytest.fixture(scope="session")
def fold0():
    return load_fold_spec("synthetic", 0)


@pytest.fixture(scope="session")
def train_index(corpus, fold0):
    return build_index(corpus, fold0, "train")


@pytest.fixture(scope="session")
def test_index(corpus, fold0):
    return build_index(corpus, fold0, "test")


@pytest.fixture
def tiny_cfg(corpus, tmp_path):
    """A configuration that trains in seconds: 32 px images, 8x8 features, 16 channels."""
    return Config().replace(
        data=dict(root=str(corpus), image_size=32),
        model=dict(stride=4, reduce_dim=16),
        cprm=dict(channel_rank=4),
        kms=dict(lambda_warm=0.4),
        train=dict(max_iter=6, iters_per_epoch=5, batch_size=2, lr=0.01, out_dir=str(tmp_path / "run")),
        eval=dict(n_pairs=8, batch_size=4),
    )


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            props = dict(getattr(rep, "user_properties", []))
            if "criterion" in props and rep.when in ("call", "setup"):
                status = "PASS" if outcome == "passed" else "FAIL"
                lines.append((rep.location[1] or 0, f"{status}  {props['criterion']}  [{props.get('detail', '')}]"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
