from __future__ import annotations

from pathlib import Path

from .nn import ContractError

BOS = "<s>"
EOS = "</s>"


class Vocabulary:
    """Ordered symbol table; index 0 is BOS and index 1 is EOS."""

    bos = 0
    eos = 1

    def __init__(self, content: list[str]):
        content = list(content)
        if not content:
            raise ContractError("vocabulary needs at least one content symbol")
        if len(set(content)) != len(content):
            raise ContractError("vocabulary symbols must be distinct")
        if BOS in content or EOS in content:
            raise ContractError("reserved symbols listed as content")
        self.symbols = [BOS, EOS] + content
        self._index = {s: i for i, s in enumerate(self.symbols)}

    @property
    def content(self) -> list[str]:
        return self.symbols[2:]

    def __len__(self) -> int:
        return len(self.symbols)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and other.symbols == self.symbols

    def index(self, symbol: str) -> int:
        try:
            return self._index[symbol]
        except KeyError:
            raise ContractError(f"symbol {symbol!r} not in vocabulary") from None

    def encode(self, symbols) -> list[int]:
        return [self.index(s) for s in symbols]

    def decode(self, ids) -> list[str]:
        return [self.symbols[i] for i in ids]

    def content_index(self, symbol: str) -> int:
        """Index among content symbols only (frame-label class id)."""
        return self.index(symbol) - 2

    def save(self, path) -> None:
        Path(path).write_text("".join(s + "\n" for s in self.symbols))

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = [ln for ln in Path(path).read_text().splitlines() if ln]
        if lines[:2] != [BOS, EOS]:
            raise ContractError(f"{path}: vocabulary must start with {BOS} and {EOS}")
        return cls(lines[2:])
