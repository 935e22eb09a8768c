import numpy as np
import pytest
import torch

from motret.common_space import TrainConfig
from motret.data import write_synthetic_dataset
from motret.pipeline import LoadedDataset, TrainResult, load_dataset, train_on_dataset


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory) -> LoadedDataset:
    """Eight synthetic text-motion pairs materialized on disk."""
    root = tmp_path_factory.mktemp("tiny-data")
    write_synthetic_dataset(root, n_pairs=8, seed=7)
    return load_dataset(root / "manifest.json")


def tiny_train_config(**overrides) -> TrainConfig:
    """Small, fast config used wherever training quality does not matter."""
    base = dict(
        motion_variant="mot",
        text_variant="affine",
        loss="infonce",
        d_common=16,
        lr=2e-3,
        batch_size=8,
        epochs=40,
        seed=0,
        max_len=64,
        motion_kwargs={"d_model": 16, "heads": 2, "depth": 1, "d_motion": 16, "ffn_dim": 32, "max_len": 64},
        upstream={"kind": "hashed", "dim": 32, "seed": 0},
    )
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def tiny_train_result(tiny_dataset) -> TrainResult:
    return train_on_dataset(tiny_train_config(), tiny_dataset)


@pytest.fixture(scope="session")
def trained_artifacts(tmp_path_factory, tiny_dataset, tiny_train_result):
    """Checkpoints + index built once and shared by the CLI/service tests."""
    from motret.checkpoints import save_motion_checkpoint, save_text_checkpoint
    from motret.index import EmbeddingStore, save_index
    from motret.pipeline import encode_motion_set

    out = tmp_path_factory.mktemp("artifacts")
    result = tiny_train_result
    save_motion_checkpoint(out / "model.menc", result.model.motion_encoder, result.model.motion_proj)
    save_text_checkpoint(
        out / "model.tenc",
        result.model.text_encoder,
        result.model.text_proj,
        result.model.log_tau.item(),
        upstream=result.builder.upstream,
        vocab=result.builder.vocab,
    )
    embeddings = encode_motion_set(
        result.model.motion_encoder, result.model.motion_proj, tiny_dataset, max_len=64
    )
    save_index(EmbeddingStore.build(embeddings), out / "index.midx")
    return {
        "dir": out,
        "menc": out / "model.menc",
        "tenc": out / "model.tenc",
        "index": out / "index.midx",
        "manifest": tiny_dataset.base_dir / "manifest.json",
        "dataset": tiny_dataset,
        "result": result,
    }


@pytest.fixture(autouse=True)
def _deterministic_torch():
    torch.manual_seed(1234)
    np.random.seed(1234)
    yield
