"""Tokenization, vocabulary construction, and token-id documents.

Tokenization is deliberately simple and fully deterministic: lowercase,
split on runs of [a-z0-9], drop tokens from a fixed bundled stopword list.
Token id 0 is reserved for padding and never appears in a stored document;
id 1 is a learned unknown token used as the entire document for items whose
text yields no tokens.
"""

import re
from dataclasses import dataclass, field

from .errors import DataError

PAD_ID = 0
UNK_ID = 1
FIRST_TOKEN_ID = 2

_TOKEN_RE = re.compile(r"[a-z0-9]+")

# Fixed English stopword list; bundled so results never depend on an external
# corpus package.
STOPWORDS = frozenset(
    """a about above after again against all am an and any are aren as at be because been
    before being below between both but by can cannot could couldn did didn do does doesn
    doing don down during each few for from further had hadn has hasn have haven having he
    her here hers herself him himself his how i if in into is isn it its itself just ll me
    more most mustn my myself no nor not now of off on once only or other ought our ours
    ourselves out over own re s same shan she should shouldn so some such t than that the
    their theirs them themselves then there these they this those through to too under
    until up ve very was wasn we were weren what when where which while who whom why will
    with won would wouldn you your yours yourself yourselves""".split()
)


def tokenize(text: str) -> list[str]:
    return [t for t in _TOKEN_RE.findall(text.lower()) if t not in STOPWORDS]


@dataclass
class ItemCorpus:
    """Per-item token-id documents plus the vocabulary that produced them."""

    vocab: dict[str, int]
    docs: list[list[int]]
    textless: list[bool]
    max_len: int
    pad_id: int = PAD_ID
    unk_id: int = UNK_ID
    _id_to_token: dict[int, str] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self._id_to_token:
            self._id_to_token = {i: t for t, i in self.vocab.items()}

    @property
    def num_items(self) -> int:
        return len(self.docs)

    @property
    def vocab_size(self) -> int:
        """Number of real tokens (excludes pad/unk)."""
        return len(self.vocab)

    @property
    def num_embeddings(self) -> int:
        """Embedding columns: real tokens plus pad and unk."""
        return len(self.vocab) + 2

    def token_strings(self, doc: list[int]) -> list[str]:
        return [self._id_to_token.get(i, "<unk>") for i in doc]

    def validate(self) -> None:
        limit = self.num_embeddings
        for item, doc in enumerate(self.docs):
            if not doc:
                raise DataError(f"item {item} has an empty document")
            if any(t == PAD_ID or t >= limit for t in doc):
                raise DataError(f"item {item} has out-of-range or pad token ids")
            if len(doc) > self.max_len:
                raise DataError(f"item {item} document exceeds max_len {self.max_len}")


def build_vocab(
    texts: list[str],
    max_vocab: int = 8000,
    min_df: int = 1,
    max_len: int = 300,
) -> ItemCorpus:
    """Top-`max_vocab` tokens by document frequency (ties by token string).

    Unknown tokens are dropped, documents truncated to `max_len`; items left
    with no tokens fall back to a single unknown-token document and are
    flagged textless.
    """
    if max_vocab < 1:
        raise DataError(f"max_vocab must be >= 1, got {max_vocab}")
    token_docs = [tokenize(t) for t in texts]
    df: dict[str, int] = {}
    for tokens in token_docs:
        for tok in set(tokens):
            df[tok] = df.get(tok, 0) + 1
    ranked = sorted(
        (tok for tok, count in df.items() if count >= min_df),
        key=lambda tok: (-df[tok], tok),
    )[:max_vocab]
    vocab = {tok: FIRST_TOKEN_ID + i for i, tok in enumerate(ranked)}

    docs: list[list[int]] = []
    textless: list[bool] = []
    for tokens in token_docs:
        ids = [vocab[t] for t in tokens if t in vocab][:max_len]
        if ids:
            docs.append(ids)
            textless.append(False)
        else:
            docs.append([UNK_ID])
            textless.append(True)
    return ItemCorpus(vocab=vocab, docs=docs, textless=textless, max_len=max_len)
