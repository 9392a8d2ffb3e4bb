"""
Tokenizer and vocabulary for the text channel.

Every segment of a configuration string becomes role-prefixed tokens:

    ads:<name> and ael:<El> per adsorbate atom           segment 1
    cat:<formula>, cel:<El> per catalyst element, hkl:h_k_l   segment 2
    pri:<El>:<n> / sec:<El>:<n> (n capped at '8+'), or pri:none / sec:none   segment 3

Token order carries no meaning: the encoder mean-pools. A count token the
vocabulary never saw reads as the nearest count it did see for the same role
and element, so dense permissive strings stay legible to a model trained on
strict ones.
"""
from collections import Counter
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from src.config import COUNT_TOKEN_CAP
from src.core.elements import formula_symbols, parse_formula
from src.text.stringify import ConfigString

UNK = "<unk>"
COUNT_ROLES = ("pri", "sec")


def _count_token(role: str, element: str, n: int) -> str:
    count = f"{COUNT_TOKEN_CAP}+" if n >= COUNT_TOKEN_CAP else str(n)
    return f"{role}:{element}:{count}"


def _split_count_token(token: str) -> Optional[Tuple[str, str, int]]:
    parts = token.split(":")
    if len(parts) != 3 or parts[0] not in COUNT_ROLES:
        return None
    digits = parts[2].rstrip("+")
    if not digits.isdigit():
        return None
    return parts[0], parts[1], int(digits)


def _group_tokens(role: str, counts: Counter) -> List[str]:
    if not counts:
        return [f"{role}:none"]
    return [_count_token(role, el, counts[el]) for el in sorted(counts)]


def tokenize(config: ConfigString) -> List[str]:
    """
    Split a configuration string into role-prefixed tokens.

    Raises:
        ParseError: if a segment does not follow the string grammar
    """
    tokens = [f"ads:{config.adsorbate}"]
    tokens.extend(f"ael:{s}" for s in formula_symbols(config.adsorbate))

    formula, miller = config.surface
    tokens.append(f"cat:{formula}")
    tokens.extend(f"cel:{el}" for el in sorted(parse_formula(formula)))
    tokens.append("hkl:" + "_".join(str(x) for x in miller))

    if config.has_config:
        primary, secondary = config.counts()
        tokens.extend(_group_tokens("pri", primary))
        tokens.extend(_group_tokens("sec", secondary))
    return tokens


@dataclass(frozen=True)
class TokenVocabulary:
    """Ordered token list; id 0 is always the UNK token."""
    tokens: Tuple[str, ...]

    def __post_init__(self):
        if not self.tokens or self.tokens[0] != UNK:
            raise ValueError(f"vocabulary must start with {UNK}")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocabulary has duplicate tokens")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})
        counts: Dict[Tuple[str, str], List[Tuple[int, int]]] = {}
        for i, token in enumerate(self.tokens):
            split = _split_count_token(token)
            if split is not None:
                counts.setdefault(split[:2], []).append((split[2], i))
        object.__setattr__(self, "_counts", {key: sorted(value) for key, value in counts.items()})

    def __len__(self) -> int:
        return len(self.tokens)

    @classmethod
    def build(cls, configs: Iterable[ConfigString]) -> "TokenVocabulary":
        """Vocabulary of every token in the given strings, sorted."""
        seen = set()
        for config in configs:
            seen.update(tokenize(config))
        seen.discard(UNK)
        return cls((UNK,) + tuple(sorted(seen)))

    def id_of(self, token: str) -> int:
        """Id of a token; unseen counts fall back to the nearest seen count (the smaller on a tie)."""
        index: Dict[str, int] = self._index  # type: ignore[attr-defined]
        if token in index:
            return index[token]
        split = _split_count_token(token)
        known = self._counts.get(split[:2]) if split is not None else None  # type: ignore[attr-defined]
        if not known:
            return 0
        return min(known, key=lambda pair: (abs(pair[0] - split[2]), pair[0]))[1]

    def encode(self, config: ConfigString) -> Tuple[List[int], int]:
        """
        Token ids of a configuration string.

        Returns:
            Tuple of (ids, number of tokens mapped to UNK)
        """
        ids = [self.id_of(t) for t in tokenize(config)]
        return ids, sum(1 for i in ids if i == 0)

    def to_list(self) -> List[str]:
        return list(self.tokens)

    @classmethod
    def from_list(cls, tokens: Sequence[str]) -> "TokenVocabulary":
        return cls(tuple(tokens))
