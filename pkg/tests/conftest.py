import sys
from pathlib import Path

import numpy as np
import pytest

FIXTURES = Path(__file__).resolve().parent / "fixtures"
sys.path.insert(0, str(FIXTURES))

from ccrag.config import load_config  # noqa: E402
from ccrag.indexer import index_corpus, read_corpus  # noqa: E402
from ccrag.providers import ChatProvider, EmbeddingProvider, Mode, Providers, Transcript  # noqa: E402
from ccrag.store import EMBEDDING_DIM, CausalGraph, SourceRef  # noqa: E402

CONFIG = FIXTURES / "fixture.toml"
TRANSCRIPTS = FIXTURES / "transcripts.jsonl"
CORPUS = FIXTURES / "corpus"
DATASET = FIXTURES / "dataset.jsonl"


def unit(rng: np.random.Generator, dim: int = EMBEDDING_DIM) -> np.ndarray:
    v = rng.standard_normal(dim)
    return (v / np.linalg.norm(v)).astype(np.float32)


def ref(doc: str = "doc.txt", start: int = 0, end: int = 10, chunk: int = 0, excerpt: str = "x") -> SourceRef:
    return SourceRef(doc, chunk, start, end, excerpt)


def replay_providers(transcript: Transcript | None = None) -> Providers:
    t = transcript if transcript is not None else Transcript(TRANSCRIPTS)
    return Providers(EmbeddingProvider(None, Mode.REPLAY, t), ChatProvider(Mode.REPLAY, t))


@pytest.fixture(scope="session")
def cfg():
    return load_config(CONFIG)


@pytest.fixture(scope="session")
def transcript():
    return Transcript(TRANSCRIPTS)


@pytest.fixture()
def providers(transcript):
    return replay_providers(transcript)


@pytest.fixture(scope="session")
def docs():
    return read_corpus(CORPUS)


@pytest.fixture(scope="session")
def fixture_graph(cfg, transcript, docs):
    """The bundled corpus indexed once from the replay transcript (read-only)."""
    store = CausalGraph()
    index_corpus(docs, store, replay_providers(transcript), cfg.indexing)
    return store


@pytest.fixture()
def rng():
    return np.random.default_rng(20240611)
