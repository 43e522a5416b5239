import random
from pathlib import Path

import pytest

from ctiner.corpus import AnnotatedDoc, DatasetBundle, LabelSchema, entity_set

DATA_DIR = Path(__file__).parent / "data"

NINE_TYPES = ("Malware", "ThreatActor", "Organization", "Tool", "Vulnerability",
              "Indicator", "Location", "Campaign", "Infrastructure")


@pytest.fixture(scope="session")
def toy_bundle_dir() -> Path:
    return DATA_DIR / "toy"


@pytest.fixture(scope="session")
def toy_bundle(toy_bundle_dir):
    from ctiner.corpus import load_dataset

    return load_dataset(toy_bundle_dir)


def synth_doc(doc_id: str, rng: random.Random, types=NINE_TYPES,
              type_weights=None, max_mentions: int = 4) -> AnnotatedDoc:
    """One synthetic doc whose spans are guaranteed substrings of its text."""
    n_mentions = rng.randint(0, max_mentions)
    mentions = []
    words = [f"filler{rng.randint(0, 99)}" for _ in range(rng.randint(3, 8))]
    for k in range(n_mentions):
        etype = rng.choices(types, weights=type_weights)[0]
        span = f"{etype.lower()}-{rng.randint(0, 399)}"
        mentions.append((span, etype))
        words.insert(rng.randint(0, len(words)), span)
    text = " ".join(words)
    return AnnotatedDoc(id=doc_id, text=text, gold=entity_set(mentions))


def make_synth_bundle(n_train: int, n_test: int, seed: int,
                      n_dev: int = 0, types=NINE_TYPES,
                      skewed: bool = True) -> DatasetBundle:
    """Synthetic bundle with a long-tailed type distribution, like real CTI sets."""
    rng = random.Random(seed)
    weights = [2.0 ** -i for i in range(len(types))] if skewed else None
    schema = LabelSchema(name=f"synth-{seed}", types=tuple(types))

    def split(prefix, n):
        return [synth_doc(f"{prefix}{i:05d}", rng, types, weights)
                for i in range(n)]

    bundle = DatasetBundle(
        name=schema.name, schema=schema,
        train=split("tr", n_train), test=split("te", n_test),
        dev=split("dv", n_dev) if n_dev else None)
    bundle.validate()
    return bundle
