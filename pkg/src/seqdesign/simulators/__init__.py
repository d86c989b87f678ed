"""Benchmark simulators behind one common interface, addressable by preset key."""

from __future__ import annotations

import importlib.resources
import os

from ..config import ConfigDoc, parse_config
from ..errors import ConfigError
from .base import HistoryToken, Simulator, SimulatorSpec
from .ces import CESSimulator
from .image import ImageCorpus, ImageDiscoverySimulator, make_digits_corpus
from .location import LocationFindingSimulator

CORPUS_ENV_VAR = "SEQDESIGN_ID_CORPUS"


def builtin_config() -> ConfigDoc:
    """Parse the packaged presets file."""
    text = (importlib.resources.files("seqdesign") / "data" / "presets.cfg").read_text()
    return parse_config(text)


def resolve_corpus_path(doc: ConfigDoc | None = None, corpus_path=None):
    """id.corpus_path config key, with the environment variable as fallback."""
    if corpus_path is not None:
        return corpus_path
    if doc is not None and "id" in doc and doc["id"].get("corpus_path"):
        return doc["id"]["corpus_path"]
    return os.environ.get(CORPUS_ENV_VAR) or None


def build_simulator(key: str, doc: ConfigDoc | None = None,
                    corpus_path=None) -> Simulator:
    """Instantiate the simulator preset named `key`.

    `doc` defaults to the packaged presets file; pass a custom parsed config
    to add or alter presets.  For image discovery, the corpus is loaded from
    `corpus_path`, the `id.corpus_path` config key, or the environment.
    """
    doc = builtin_config() if doc is None else doc
    section = f"simulator:{key}"
    if section not in doc:
        known = sorted(s.split(":", 1)[1] for s in doc if s.startswith("simulator:"))
        raise ConfigError(f"unknown simulator preset {key!r}; known: {known}")
    body = dict(doc[section])
    kind = body.pop("kind", None)
    if kind == "lf":
        return LocationFindingSimulator(**body)
    if kind == "ces":
        return CESSimulator(**body)
    if kind == "id":
        path = resolve_corpus_path(doc, corpus_path)
        corpus = ImageCorpus.load(path) if path else None
        sim = ImageDiscoverySimulator(corpus=corpus, **body)
        if corpus is not None and corpus.image_size != sim.image_size:
            raise ConfigError(
                f"corpus images are {corpus.image_size}px but preset {key!r} "
                f"expects {sim.image_size}px"
            )
        return sim
    raise ConfigError(f"unknown simulator kind {kind!r} in [{section}]")


__all__ = [
    "CESSimulator",
    "CORPUS_ENV_VAR",
    "HistoryToken",
    "ImageCorpus",
    "ImageDiscoverySimulator",
    "LocationFindingSimulator",
    "Simulator",
    "SimulatorSpec",
    "build_simulator",
    "builtin_config",
    "make_digits_corpus",
    "resolve_corpus_path",
]
