import json
import re
from pathlib import Path

import pytest

from visassoc.corpus import load_corpus
from visassoc.gateway import (
    Gateway,
    GatewayPolicy,
    RecordingBackend,
    ReplayBackend,
)
from visassoc.salience import ConcretenessLexicon

DATA_DIR = Path(__file__).parent / "data"


class ScriptedBackend:
    """Deterministic stand-in for the real model services.

    Answers are a pure function of the request content, so recording a run
    and replaying it later produce identical pipelines.
    """

    backend_id = "scripted"

    def complete(self, request):
        prompt = request.prompt
        if prompt.startswith("USER: <image> Please generate a detailed caption"):
            tag = request.image_uri.rsplit("/", 1)[-1]
            return f"A detailed, vivid description of scene {tag} with rich context."
        if "semantic abstraction scale" in prompt:
            words = prompt.rsplit("Words: ", 1)[1].split(", ")
            scene = re.search(r"scene (\w+)", prompt)
            tag = scene.group(1) if scene else "ctx"

            def rung(word, degree):
                # low degrees shared across images, high degrees tied to the
                # scene context: uniqueness then grows with abstraction
                if degree <= 2:
                    return [f"{word}{degree}{s}" for s in "abc"]
                return [f"{word}{degree}{s} {tag}" for s in "abc"]

            return json.dumps(
                {
                    word: {str(d): rung(word, d) for d in range(1, 6)}
                    for word in words
                }
            )
        if "MUST include the word: " in prompt:
            word = prompt.split("MUST include the word: ", 1)[1].split(".\n", 1)[0]
            return f"A scene of {word} in quiet light."
        raise AssertionError(f"unscripted prompt: {prompt[:80]!r}")


@pytest.fixture
def data_dir() -> Path:
    return DATA_DIR


@pytest.fixture
def lexicon() -> ConcretenessLexicon:
    return ConcretenessLexicon.from_tsv(DATA_DIR / "lexicon.tsv")


@pytest.fixture
def corpus10():
    return load_corpus(DATA_DIR / "corpus10.jsonl", "caption_jsonl")


@pytest.fixture
def scripted_backend() -> ScriptedBackend:
    return ScriptedBackend()


@pytest.fixture
def scripted_gateway(scripted_backend) -> Gateway:
    return Gateway(scripted_backend, policy=GatewayPolicy(backoff=0.0))


@pytest.fixture
def replay_recorder(tmp_path, scripted_backend):
    """(record_gateway, make_replay_gateway): run once against the script,
    then replay the recorded cache offline."""
    replay_path = tmp_path / "replay.jsonl"
    record_gateway = Gateway(
        RecordingBackend(scripted_backend, replay_path),
        policy=GatewayPolicy(backoff=0.0),
    )

    def make_replay_gateway() -> Gateway:
        return Gateway(ReplayBackend(replay_path), policy=GatewayPolicy(backoff=0.0))

    return record_gateway, make_replay_gateway, replay_path
