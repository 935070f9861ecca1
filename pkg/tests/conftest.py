import sys
import time
from pathlib import Path
from types import SimpleNamespace

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from backbones import build_backbone, build_toy_backbone
from spips.backbone import save_backbone
from spips.datasets import ManifestKind, load_manifest, synth_2afc
from spips.trainer import TrainConfig, train

# Frozen corpus identity: all trainer-level expectations below were verified
# against this exact corpus before the thresholds went into the suite.
CORPUS_SEED = 3
CORPUS_SIZE = 200


@pytest.fixture(scope="session")
def alexnet_spec():
    return build_backbone()


@pytest.fixture(scope="session")
def toy_spec():
    return build_toy_backbone()


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    """(manifest path, loaded samples) for the frozen synthetic corpus."""
    outdir = tmp_path_factory.mktemp("corpus")
    manifest = synth_2afc(outdir, CORPUS_SIZE, seed=CORPUS_SEED)
    return manifest, load_manifest(manifest, ManifestKind.TWOAFC)


@pytest.fixture(scope="session")
def feature_cache(tmp_path_factory):
    return tmp_path_factory.mktemp("feature-cache")


@pytest.fixture(scope="session")
def trained_full(alexnet_spec, corpus, feature_cache):
    """Full-head training run at the frozen seed, with wall time recorded.

    The cache starts cold, so `seconds` covers map/feature precompute plus
    the optimization loop.
    """
    _, samples = corpus
    cfg = TrainConfig(seed=0, cache_dir=feature_cache)
    t0 = time.perf_counter()
    head, report = train(alexnet_spec, samples, cfg)
    seconds = time.perf_counter() - t0
    return SimpleNamespace(head=head, report=report, seconds=seconds)


@pytest.fixture(scope="session")
def backbone_file(alexnet_spec, tmp_path_factory):
    path = tmp_path_factory.mktemp("weights") / "alexnet-fixture.spwt"
    save_backbone(alexnet_spec, path)
    return path
