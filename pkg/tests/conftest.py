from __future__ import annotations

import random
from importlib import resources

import pytest
import torch

from idiomctx.corpus import ColumnMapping, Instance, Label, load_dataset
from idiomctx.encoding import ToyTokenizer
from idiomctx.model import IdiomaticityModel, ModelConfig

TOY_TRAIN = resources.files("idiomctx") / "data" / "toy_train.csv"
TOY_TEST = resources.files("idiomctx") / "data" / "toy_test.csv"

ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")


@pytest.fixture(scope="session")
def toy_rows() -> list[Instance]:
    return load_dataset(TOY_TRAIN, ColumnMapping())


@pytest.fixture
def tokenizer() -> ToyTokenizer:
    return ToyTokenizer()


@pytest.fixture
def toy_model_factory():
    def make(variant="Full", **kw):
        torch.manual_seed(kw.pop("seed", 0))
        return IdiomaticityModel.from_config(ModelConfig(variant=variant, **kw))
    return make


def make_instance(target="They handed out wet blankets to everyone.", mwe="wet blanket",
                  previous="P.", next="N.", label=Label.IDIOMATIC, id="x1", language="EN") -> Instance:
    return Instance(id, language, mwe, previous, target, next, label)


HEADS = ["wet", "hot", "gold", "big", "cold", "dark", "open", "red", "green", "sharp"]
TAILS = ["blanket", "potato", "mine", "fish", "shoulder", "horse", "book", "tape", "light", "tongue"]
FILLER = ["they", "saw", "a", "the", "quite", "near", "after", "we", "under", "river", "every",
          "morning", "then", "only", "it", "was", "also", "city"]
SUFFIXES = ["", "s", "es", "ing", "ed"]


def generate_inflection_corpus(n: int, seed: int = 0):
    """Sentences with one MWE occurrence whose final word may carry a suffix.

    Returns (target, lemma, expected_surface) triples.
    """
    rng = random.Random(seed)
    out = []
    for _ in range(n):
        lemma_words = [rng.choice(HEADS), rng.choice(TAILS)]
        if rng.random() < 0.2:
            lemma_words.insert(1, rng.choice(HEADS))
        surface_words = list(lemma_words)
        surface_words[-1] += rng.choice(SUFFIXES)
        if rng.random() < 0.3:
            surface_words[0] = surface_words[0].capitalize()
        before = [rng.choice(FILLER) for _ in range(rng.randint(0, 6))]
        after = [rng.choice(FILLER) for _ in range(rng.randint(0, 6))]
        surface = " ".join(surface_words)
        punct = rng.choice(["", ",", ".", "!", ";"])
        pre = " ".join(before) + (rng.choice([" ", ", ", " (\""]) if before else rng.choice(["", "\""]))
        post = punct + (" " + " ".join(after) if after else "")
        target = pre + surface + post
        out.append((target, " ".join(lemma_words), surface))
    return out


def generated_instances(n: int, seed: int = 0) -> list[Instance]:
    rng = random.Random(seed)
    rows = []
    for k, (target, lemma, _) in enumerate(generate_inflection_corpus(n, seed)):
        prev = " ".join(rng.choice(FILLER) for _ in range(rng.randint(0, 8)))
        nxt = " ".join(rng.choice(FILLER) for _ in range(rng.randint(0, 8)))
        rows.append(Instance(f"g{k}", rng.choice(["EN", "PT", "GL"]), lemma, prev, target, nxt,
                             rng.choice([Label.IDIOMATIC, Label.NON_IDIOMATIC])))
    return rows
