import hashlib
import json
import time
from pathlib import Path

import numpy as np
import pytest

import sgz
from sgz.pipeline import load_checkpoint, save_checkpoint, split_indices, train
from sgz.predictors import PredictorConfig
from sgz.synth import SynthConfig, synth_generate

SRC = Path(sgz.__file__).parent
FIXTURES = Path(__file__).parent / "fixtures"


def _source_digest() -> str:
    h = hashlib.sha256()
    for path in sorted(SRC.glob("*.py")):
        h.update(path.read_bytes())
    return h.hexdigest()[:16]


class ModelCache:
    """Trained checkpoints keyed by (source digest, recipe), kept in pytest's cache dir."""

    def __init__(self, root: Path):
        self.root = root
        self.digest = _source_digest()
        self.datasets: dict = {}

    def dataset(self, **synth):
        key = json.dumps(synth, sort_keys=True)
        if key not in self.datasets:
            self.datasets[key] = synth_generate(SynthConfig(**synth))
        return self.datasets[key]

    def model(self, synth: dict, epochs: int, lr: float = 1e-3, **model):
        recipe = json.dumps({"synth": synth, "epochs": epochs, "lr": lr, "model": model,
                             "src": self.digest}, sort_keys=True)
        path = self.root / (hashlib.sha256(recipe.encode()).hexdigest()[:20] + ".sgz")
        side = path.with_suffix(".json")
        if path.exists() and side.exists():
            ckpt = load_checkpoint(path)
            ckpt.train_seconds = json.loads(side.read_text())["seconds"]
            return ckpt
        ds = self.dataset(**synth)
        cfg = PredictorConfig(ds.num_object_types, ds.num_relation_types, **model)
        tr, _ = split_indices(len(ds.graphs), cfg.seed)
        t0 = time.process_time()
        ckpt = train(ds, cfg, epochs=epochs, lr=lr, seed=cfg.seed, indices=tr)
        ckpt.train_seconds = time.process_time() - t0
        save_checkpoint(ckpt, path)
        side.write_text(json.dumps({"seconds": ckpt.train_seconds}))
        return ckpt


# One line per acceptance criterion, echoed in the terminal summary.
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def models(request) -> ModelCache:
    return ModelCache(Path(request.config.cache.mkdir("sgz-models")))


SMALL = {"num_graphs": 60, "max_nodes": 14, "weights": True, "seed": 11}


@pytest.fixture(scope="session")
def small_dataset(models):
    return models.dataset(**SMALL)


@pytest.fixture(scope="session")
def small_model(models):
    return models.model(SMALL, epochs=3, weights=True)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# Recipes shared by the pipeline tests and the acceptance suite (same cache entries).
CORR = {"num_graphs": 2000, "seed": 7}
CORR_EPOCHS = 30
VARIANTS = {
    "full": {},
    "noctx": {"context": ()},
    "noedge": {"context": ("node", "structure")},
    "gaussian": {"dist": "gaussian"},
    "gmm5": {"dist": "gmm5"},
}
ER = {"kind": "er", "num_graphs": 300, "min_nodes": 32, "max_nodes": 32, "density": 0.1, "seed": 7}
ER_EPOCHS = 15
RULES = {"num_graphs": 400, "modes": 1, "seed": 7}
RULES_EPOCHS = 15


@pytest.fixture(scope="session")
def corr_dataset(models):
    return models.dataset(**CORR)


@pytest.fixture(scope="session")
def corr_test(corr_dataset):
    _, te = split_indices(len(corr_dataset.graphs), 7)
    return [corr_dataset.graphs[i] for i in te]


@pytest.fixture(scope="session")
def corr_model(models):
    def get(name: str):
        return models.model(CORR, epochs=CORR_EPOCHS, **VARIANTS[name])
    return get


@pytest.fixture(scope="session")
def er_model(models):
    return models.model(ER, epochs=ER_EPOCHS)


@pytest.fixture(scope="session")
def er_test(models):
    ds = models.dataset(**ER)
    _, te = split_indices(len(ds.graphs), 7)
    return [ds.graphs[i] for i in te]
