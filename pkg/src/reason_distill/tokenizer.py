"""Closed-vocabulary tokenizer for the synthetic reasoning corpus.

Deterministic whitespace tokenization with digit splitting: multi-digit
numbers become one token per digit, words are lowercased, and the structural
markers ("Question:", "Reasoning:", "Answer:"), the newline, <eos>, and <unk>
are reserved tokens with fixed low ids.

Decoding is the inverse on corpus-shaped text: tokens are joined with single
spaces, consecutive digit tokens merge into one number, and newlines attach
without surrounding spaces. Corpus surfaces therefore keep punctuation spaced
("3 + 4 = 7 .") so that encode/decode round-trips exactly.
"""

from __future__ import annotations

import json
import re
from collections.abc import Iterable
from pathlib import Path

from .errors import DataError

UNK = "<unk>"
EOS = "<eos>"
NEWLINE = "\n"
QUESTION_MARKER = "Question:"
REASONING_MARKER = "Reasoning:"
ANSWER_MARKER = "Answer:"

SPECIAL_TOKENS = (UNK, EOS, NEWLINE, QUESTION_MARKER, REASONING_MARKER, ANSWER_MARKER)

# single digits, alphabetic runs, or single punctuation characters
_PIECE_RE = re.compile(r"\d|[A-Za-z]+|[^\w\s]")


class Tokenizer:
    """Bidirectional token/id mapping over a fixed vocabulary."""

    def __init__(self, words: Iterable[str]):
        extra = sorted(set(words) - set(SPECIAL_TOKENS))
        for word in extra:
            if not word or any(ch.isspace() for ch in word):
                raise DataError(f"vocabulary word may not contain whitespace: {word!r}")
        self._tokens: list[str] = list(SPECIAL_TOKENS) + extra
        self._ids: dict[str, int] = {tok: i for i, tok in enumerate(self._tokens)}

    @property
    def vocab_size(self) -> int:
        return len(self._tokens)

    @property
    def eos_id(self) -> int:
        return self._ids[EOS]

    @property
    def unk_id(self) -> int:
        return self._ids[UNK]

    def token(self, token_id: int) -> str:
        if not 0 <= token_id < len(self._tokens):
            raise DataError(f"token id {token_id} outside vocabulary of {len(self._tokens)}")
        return self._tokens[token_id]

    def token_id(self, token: str) -> int:
        try:
            return self._ids[token]
        except KeyError:
            raise DataError(f"token {token!r} not in vocabulary") from None

    def encode(self, text: str) -> list[int]:
        """Map text to token ids; out-of-vocabulary words become <unk>."""
        ids: list[int] = []
        for line_no, line in enumerate(text.split("\n")):
            if line_no:
                ids.append(self._ids[NEWLINE])
            for chunk in line.split():
                if chunk in self._ids:
                    ids.append(self._ids[chunk])
                    continue
                for piece in _PIECE_RE.findall(chunk):
                    key = piece if piece.isdigit() else piece.lower()
                    ids.append(self._ids.get(key, self._ids[UNK]))
        return ids

    def decode(self, ids: Iterable[int]) -> str:
        """Render token ids back to text, stopping at the first <eos>."""
        out: list[str] = []
        prev: str | None = None
        for token_id in ids:
            tok = self.token(int(token_id))
            if tok == EOS:
                break
            if tok == NEWLINE:
                out.append("\n")
            elif prev is None or prev == NEWLINE:
                out.append(tok)
            elif len(tok) == 1 and tok.isdigit() and len(prev) == 1 and prev.isdigit():
                out.append(tok)
            else:
                out.append(" " + tok)
            prev = tok
        return "".join(out)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps({"tokens": self._tokens}, indent=0) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Tokenizer":
        try:
            payload = json.loads(Path(path).read_text())
            tokens = payload["tokens"]
        except (OSError, ValueError, KeyError) as exc:
            raise DataError(f"cannot load vocabulary from {path}: {exc}") from exc
        if tokens[: len(SPECIAL_TOKENS)] != list(SPECIAL_TOKENS):
            raise DataError(f"vocabulary file {path} does not start with the reserved tokens")
        return cls(tokens[len(SPECIAL_TOKENS) :])

    @classmethod
    def from_texts(cls, texts: Iterable[str], extra_words: Iterable[str] = ()) -> "Tokenizer":
        """Build a closed vocabulary covering every word in the given texts."""
        words: set[str] = set(extra_words)
        words.update(str(d) for d in range(10))
        probe = cls(())
        for text in texts:
            for line in text.split("\n"):
                for chunk in line.split():
                    if chunk in probe._ids:
                        continue
                    for piece in _PIECE_RE.findall(chunk):
                        words.add(piece if piece.isdigit() else piece.lower())
        return cls(words)
