import numpy as np
import pytest
import torch

from oodx.conformance import (
    DEMO_ARCH,
    build_demo_checkpoint,
    build_demo_dataset,
)
from oodx.extract import ExtractionJob, OdinOptions, extract


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    """One fully loaded extraction shared by the read-only tests."""
    root = tmp_path_factory.mktemp("corpus")
    ckpt = build_demo_checkpoint(root / "demo.pt", seed=0)
    data = build_demo_dataset(root / "demo.npz", seed=0)
    job = ExtractionJob(
        checkpoint=ckpt,
        dataset=data,
        out=root / "demo.oodf",
        mc_dropout_T=4,
        odin=OdinOptions(temperature=1000.0, epsilon=0.0014),
        batch_size=8,
        seed=0,
    )
    return job, extract(job)


@pytest.fixture()
def workdir(tmp_path):
    """Fresh checkpoint + dataset pair for tests that tweak the job."""
    ckpt = build_demo_checkpoint(tmp_path / "demo.pt", seed=0)
    data = build_demo_dataset(tmp_path / "demo.npz", seed=0)
    return tmp_path, ckpt, data


def make_checkpoint(path, arch, seed=0):
    return build_demo_checkpoint(path, seed=seed, arch={**DEMO_ARCH, **arch})


def make_module_checkpoint(path, module, seed=0):
    torch.manual_seed(seed)
    torch.save(module, path)
    return path


def read_sidecar(path):
    import json

    return json.loads(open(path).read())


def rng_dataset(path, n=12, d=8, seed=3, labels=True):
    rng = np.random.default_rng(seed)
    arrays = {"x": rng.standard_normal((n, d)).astype(np.float32)}
    if labels:
        arrays["y"] = rng.integers(0, 2, n)
    np.savez(path, **arrays)
    return path
