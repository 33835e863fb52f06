import pytest

from clearlink.dataset import DatasetSpec, synthesize_dataset


@pytest.fixture(scope="session")
def scene_manifest(tmp_path_factory):
    """A miniature synthesized dataset shared by training/evaluation tests."""
    out = tmp_path_factory.mktemp("scenes")
    spec = DatasetSpec(train_count=6, val_count=2, test_count=2)
    return synthesize_dataset(spec, str(out))
