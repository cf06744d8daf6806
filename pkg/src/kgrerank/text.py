"""Text normalization shared by the graph store, distillation, and model.

One canonical form everywhere: lowercase, punctuation stripped, tokens
split on whitespace. Entity surface strings join their tokens with
underscores so that exact-match recognition against graph vocabularies
works on token sequences.
"""

import re

_TOKEN_RE = re.compile(r"[a-z0-9]+")

# Sentence ends at . ! or ? followed by whitespace or end of text.
_SENTENCE_RE = re.compile(r"[.!?](?:\s+|$)")


def tokenize(text: str) -> list[str]:
    """Lowercase whitespace-and-punctuation split."""
    return _TOKEN_RE.findall(text.lower())


def normalize_phrase(text: str) -> str:
    """Canonical entity surface form: lowercased tokens joined by '_'.

    "New York City" -> "new_york_city". Already-underscored input is a
    fixed point because '_' is not a token character.
    """
    return "_".join(tokenize(text))


def phrase_tokens(surface: str) -> tuple[str, ...]:
    """Token tuple of a normalized entity surface form."""
    return tuple(surface.split("_"))


def split_sentences(text: str) -> list[list[str]]:
    """Split a passage into tokenized sentences.

    Splits after '.', '!' or '?' followed by whitespace or end of text;
    a passage without terminators is a single sentence. Empty sentences
    are never returned. No abbreviation handling: "e.g. test." splits
    after "g." by design.

    Token positions are preserved: concatenating the returned sentences
    equals tokenize(text), so sentence spans index into the passage
    token sequence.
    """
    pieces = _SENTENCE_RE.split(text)
    return [toks for piece in pieces if (toks := tokenize(piece))]
