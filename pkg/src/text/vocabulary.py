"""
Toy text encoder: a frozen random embedding table, sinusoidal position mix,
and per-subject learnable word tokens such as "<new1>".
"""

import math
import re
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..utils.errors import AlreadyExistsError, InvalidArgumentError

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
SPECIAL_TOKENS = [PAD, BOS, EOS, UNK]
PROMPT_PREFIXES = ["very small", "close up"]
POSITION_MIX = 0.5

_WORD_PATTERN = re.compile(r"<[^<>\s]+>|[a-z0-9']+")
_TOKEN_NAME = re.compile(r"^<[a-z0-9_\-]+>$")


class TokenInit(str, Enum):
    CLASS_WORD_COPY = "class-word-copy"
    RANDOM = "random"


def split_words(prompt: str) -> List[str]:
    """Lowercase words; learnable tokens like <new1> stay intact, punctuation is dropped"""
    return _WORD_PATTERN.findall(prompt.lower())


def is_learnable_name(word: str) -> bool:
    return bool(_TOKEN_NAME.match(word)) and word not in SPECIAL_TOKENS


def learnable_positions(prompt: str, token_names: Iterable[str]) -> Dict[str, List[int]]:
    """Encoded-sequence positions of each token name (offset by the leading <bos>)"""
    words = split_words(prompt)
    return {
        name: [i + 1 for i, word in enumerate(words) if word == name.lower()]
        for name in token_names
    }


def position_table(length: int, width: int) -> torch.Tensor:
    positions = torch.arange(length, dtype=torch.float32)[:, None]
    div = torch.exp(torch.arange(0, width, 2, dtype=torch.float32) * (-math.log(10000.0) / width))
    table = torch.zeros(length, width)
    table[:, 0::2] = torch.sin(positions * div)
    table[:, 1::2] = torch.cos(positions * div)[:, : width // 2]
    return table


def _parameter_key(name: str) -> str:
    return re.sub(r"[^a-z0-9_]", "_", name.strip("<>").lower())


@dataclass
class LearnableToken:
    name: str
    index: int
    key: str
    init: TokenInit
    class_word: Optional[str] = None


@dataclass
class EncodedPrompt:
    prompt: str
    embedding: torch.Tensor  # [tokens, width]
    token_ids: torch.Tensor  # [tokens]
    positions: List[int]
    positions_by_token: Dict[str, List[int]]


class Vocabulary(nn.Module):
    """Base word table (frozen buffer) plus learnable token rows (parameters)"""

    def __init__(self, words: Sequence[str], width: int = 64, max_tokens: int = 40, seed: int = 0):
        super().__init__()
        if max_tokens < 3:
            raise InvalidArgumentError("max_tokens must leave room for <bos>, <eos> and a word")
        plain = sorted({w.lower() for w in words if w and not w.startswith("<")})
        self.words: List[str] = SPECIAL_TOKENS + plain
        self.base_tokens: Dict[str, int] = {word: i for i, word in enumerate(self.words)}
        self.width = width
        self.max_tokens = max_tokens
        self.seed = seed

        generator = torch.Generator().manual_seed(seed)
        self.register_buffer("base_table", torch.randn(len(self.words), width, generator=generator))
        self.register_buffer("positions", position_table(max_tokens, width), persistent=False)
        self.learnable = nn.ParameterDict()
        self.learnable_tokens: Dict[str, LearnableToken] = {}

    @property
    def base_size(self) -> int:
        return len(self.words)

    def register_learnable_token(
        self,
        name: str,
        init: TokenInit = TokenInit.CLASS_WORD_COPY,
        class_word: Optional[str] = None,
        seed: int = 0,
    ) -> int:
        """Add a trainable token and return its index"""
        name = name.lower()
        init = TokenInit(init)
        if not is_learnable_name(name):
            raise InvalidArgumentError(f"learnable token names look like <new1>, got {name!r}")
        if name in self.learnable_tokens:
            raise AlreadyExistsError(f"token {name} is already registered")
        key = _parameter_key(name)
        if key in self.learnable:
            raise AlreadyExistsError(f"token {name} collides with an existing parameter key")

        if init == TokenInit.CLASS_WORD_COPY:
            if class_word is None or class_word.lower() not in self.base_tokens:
                raise InvalidArgumentError(f"class word {class_word!r} is not in the vocabulary")
            vector = self.base_table[self.base_tokens[class_word.lower()]].detach().clone()
        else:
            generator = torch.Generator().manual_seed(seed)
            vector = torch.randn(self.width, generator=generator).to(self.base_table.device)

        index = self.base_size + len(self.learnable_tokens)
        self.learnable[key] = nn.Parameter(vector)
        self.learnable_tokens[name] = LearnableToken(
            name=name, index=index, key=key, init=init, class_word=class_word
        )
        return index

    def token_embedding(self, name: str) -> torch.Tensor:
        token = self.learnable_tokens.get(name.lower())
        if token is None:
            raise InvalidArgumentError(f"unknown learnable token {name}")
        return self.learnable[token.key]

    def embedding_table(self) -> torch.Tensor:
        if not self.learnable_tokens:
            return self.base_table
        rows = [self.learnable[token.key] for token in self.learnable_tokens.values()]
        return torch.cat([self.base_table, torch.stack(rows)], dim=0)

    def contains_learnable(self, prompt: str) -> bool:
        return any(is_learnable_name(word) for word in split_words(prompt))

    def tokenize(self, prompt: str) -> List[int]:
        words = split_words(prompt)
        ids = [self.base_tokens[BOS]]
        for word in words:
            if word.startswith("<"):
                token = self.learnable_tokens.get(word)
                if token is None:
                    raise InvalidArgumentError(f"unknown learnable token {word} in prompt {prompt!r}")
                ids.append(token.index)
            else:
                ids.append(self.base_tokens.get(word, self.base_tokens[UNK]))
        ids.append(self.base_tokens[EOS])
        if len(ids) > self.max_tokens:
            raise InvalidArgumentError(
                f"prompt has {len(words)} words, at most {self.max_tokens - 2} fit"
            )
        return ids + [self.base_tokens[PAD]] * (self.max_tokens - len(ids))

    def _embed(self, ids: List[int]) -> torch.Tensor:
        token_ids = torch.tensor(ids, dtype=torch.long, device=self.base_table.device)
        return F.embedding(token_ids, self.embedding_table()) + POSITION_MIX * self.positions

    def encode_prompt(self, prompt: str) -> EncodedPrompt:
        if not split_words(prompt):
            raise InvalidArgumentError("cannot encode an empty prompt")
        ids = self.tokenize(prompt)
        learnable_ids = {token.index for token in self.learnable_tokens.values()}
        positions = [i for i, token_id in enumerate(ids) if token_id in learnable_ids]
        by_token = learnable_positions(prompt, [w for w in split_words(prompt) if w.startswith("<")])
        return EncodedPrompt(
            prompt=prompt,
            embedding=self._embed(ids),
            token_ids=torch.tensor(ids, dtype=torch.long),
            positions=positions,
            positions_by_token=by_token,
        )

    def encode_empty(self) -> EncodedPrompt:
        """Unconditional embedding: <bos> <eos> and padding"""
        ids = [self.base_tokens[BOS], self.base_tokens[EOS]]
        ids += [self.base_tokens[PAD]] * (self.max_tokens - len(ids))
        return EncodedPrompt(
            prompt="",
            embedding=self._embed(ids),
            token_ids=torch.tensor(ids, dtype=torch.long),
            positions=[],
            positions_by_token={},
        )

    def encode_batch(self, prompts: Sequence[str], allow_empty: bool = False) -> torch.Tensor:
        """Stack encoded prompts -> [B, tokens, width]; empty strings map to encode_empty when allowed"""
        rows = []
        for prompt in prompts:
            if allow_empty and not split_words(prompt):
                rows.append(self.encode_empty().embedding)
            else:
                rows.append(self.encode_prompt(prompt).embedding)
        return torch.stack(rows, dim=0)

    def export_registry(self) -> dict:
        return {
            "words": self.words[len(SPECIAL_TOKENS):],
            "width": self.width,
            "max_tokens": self.max_tokens,
            "seed": self.seed,
            "learnable": [
                {"name": t.name, "init": t.init.value, "class_word": t.class_word or ""}
                for t in self.learnable_tokens.values()
            ],
        }

    @classmethod
    def from_registry(cls, registry: dict) -> "Vocabulary":
        vocabulary = cls(
            registry["words"],
            width=int(registry["width"]),
            max_tokens=int(registry["max_tokens"]),
            seed=int(registry.get("seed", 0)),
        )
        for entry in registry.get("learnable", []):
            # values are overwritten by the checkpoint state
            vocabulary.register_learnable_token(entry["name"], init=TokenInit.RANDOM)
            token = vocabulary.learnable_tokens[entry["name"]]
            token.init = TokenInit(entry["init"])
            token.class_word = entry.get("class_word") or None
        return vocabulary


def default_base_words(extra: Iterable[str] = ()) -> List[str]:
    """Words of the shipped prompt templates, the prompt prefixes and ``extra``"""
    from .templates import PromptTemplateLibrary

    words = set()
    for template in PromptTemplateLibrary().list_templates():
        words.update(w for w in split_words(template.text) if not w.startswith("<"))
    for prefix in PROMPT_PREFIXES:
        words.update(split_words(prefix))
    words.update(["a", "and"])
    for word in extra:
        words.update(split_words(word))
    # template slots like [c1] split into "c1"
    return sorted(w for w in words if not re.fullmatch(r"c\d", w))
