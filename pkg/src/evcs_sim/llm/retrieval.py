"""Term-frequency retrieval over a directory of plain-text passages."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from importlib import resources
from pathlib import Path


@dataclass(frozen=True)
class Passage:
    passage_id: str
    text: str


class Corpus:
    def __init__(self, passages: list[Passage]) -> None:
        self.passages = sorted(passages, key=lambda p: p.passage_id)
        self._counts = [Counter(p.text.casefold().split()) for p in self.passages]

    @classmethod
    def from_dir(cls, path: str | Path) -> Corpus:
        files = sorted(p for p in Path(path).iterdir() if p.is_file() and p.suffix == ".txt")
        return cls([Passage(f.stem, f.read_text(encoding="utf-8").strip()) for f in files])

    @classmethod
    def bundled(cls) -> Corpus:
        root = resources.files("evcs_sim.data").joinpath("corpus")
        items = sorted((t for t in root.iterdir() if t.name.endswith(".txt")), key=lambda t: t.name)
        return cls([Passage(t.name[: -len(".txt")], t.read_text(encoding="utf-8").strip()) for t in items])

    def __len__(self) -> int:
        return len(self.passages)

    def score(self, query: str) -> list[int]:
        terms = query.casefold().split()
        return [sum(c[t] for t in terms) for c in self._counts]


def retrieve_context(query: str, corpus: Corpus, k: int = 3) -> list[Passage]:
    """Top-k passages by summed query-term frequency; ties go to the smaller id."""
    if k <= 0 or not len(corpus):
        return []
    scores = corpus.score(query)
    order = sorted(range(len(corpus)), key=lambda i: (-scores[i], corpus.passages[i].passage_id))
    return [corpus.passages[i] for i in order[:k]]
