"""GUI layout DSL: vocabulary, tokenizer, parser, serializer and block split.

Programs look like ``stack { row { label btn } row { slider } }``. Tokens are
whitespace separated. A *block* is one top-level container of the program
(its tag, braces and body) followed by ``BLOCK-END``.
"""
from dataclasses import dataclass, field

import numpy as np

TOKENS = (
    "PAD", "BLOCK-END", "{", "}", "stack", "row",
    "label", "btn", "switch", "slider", "img", "text", "check",
)
LEAF_TAGS = ("label", "btn", "switch", "slider", "img", "text", "check")
CONTAINER_TAGS = ("stack", "row")

PAD, BLOCK_END, OPEN, CLOSE, STACK, ROW = range(6)


class DslError(ValueError):
    pass


class UnknownToken(DslError):
    def __init__(self, word, position):
        super().__init__(f"unknown token {word!r} at position {position}")
        self.word = word
        self.position = position


class DslSyntaxError(DslError):
    def __init__(self, position, expected):
        super().__init__(f"syntax error at token {position}: expected {expected}")
        self.position = position
        self.expected = expected


class NotAProgram(DslError):
    pass


class MalformedBlock(DslError):
    pass


class Vocab:
    """Bijective token string <-> id table."""

    def __init__(self, tokens=TOKENS):
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self.tokens = tuple(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self):
        return len(self.tokens)

    def __getitem__(self, token):
        return self.index[token]

    def decode(self, ids):
        return [self.tokens[i] for i in ids]


VOCAB = Vocab()
K = len(VOCAB)


@dataclass(frozen=True)
class Leaf:
    tag: str


@dataclass(frozen=True)
class Container:
    tag: str
    children: tuple = field(default_factory=tuple)


def tokenize(text, vocab=VOCAB):
    ids = []
    for pos, word in enumerate(text.split()):
        try:
            ids.append(vocab.index[word])
        except KeyError:
            raise UnknownToken(word, pos) from None
    return ids


def detokenize(ids, vocab=VOCAB):
    return " ".join(vocab.decode(ids))


class _Parser:
    def __init__(self, ids, vocab):
        self.ids = list(ids)
        self.vocab = vocab
        self.pos = 0

    def peek(self):
        return self.ids[self.pos] if self.pos < len(self.ids) else None

    def expect(self, tid, what):
        if self.peek() != tid:
            raise DslSyntaxError(self.pos, what)
        self.pos += 1

    def program(self):
        self.expect(STACK, "'stack'")
        self.expect(OPEN, "'{'")
        children = []
        while self.peek() != CLOSE:
            tid = self.peek()
            if tid is None:
                raise DslSyntaxError(self.pos, "'}' (unclosed brace)")
            if self.vocab.tokens[tid] not in CONTAINER_TAGS:
                raise DslSyntaxError(self.pos, "container ('row' or 'stack')")
            children.append(self.container())
        self.pos += 1
        if self.pos != len(self.ids):
            raise DslSyntaxError(self.pos, "end of program")
        return Container("stack", tuple(children))

    def container(self):
        tag = self.vocab.tokens[self.ids[self.pos]]
        self.pos += 1
        self.expect(OPEN, "'{'")
        children = []
        while True:
            tid = self.peek()
            if tid is None:
                raise DslSyntaxError(self.pos, "'}' (unclosed brace)")
            if tid == CLOSE:
                break
            word = self.vocab.tokens[tid]
            if word in LEAF_TAGS:
                children.append(Leaf(word))
                self.pos += 1
            elif word in CONTAINER_TAGS:
                children.append(self.container())
            else:
                raise DslSyntaxError(self.pos, "leaf or container")
        if not children:
            raise DslSyntaxError(self.pos, "at least one child (empty container)")
        self.pos += 1
        return Container(tag, tuple(children))


def parse(ids, vocab=VOCAB):
    """Build a :class:`Container` tree rooted at ``stack``.

    The root may be empty (``stack { }``); every nested container needs at
    least one child. Leaves directly under the root are rejected.
    """
    return _Parser(ids, vocab).program()


def ast_tokens(node, vocab=VOCAB):
    if isinstance(node, Leaf):
        return [vocab.index[node.tag]]
    out = [vocab.index[node.tag], OPEN]
    for child in node.children:
        out.extend(ast_tokens(child, vocab))
    out.append(CLOSE)
    return out


def serialize(ast, vocab=VOCAB):
    return detokenize(ast_tokens(ast, vocab), vocab)


def count_nodes(node):
    if isinstance(node, Leaf):
        return 1
    return 1 + sum(count_nodes(c) for c in node.children)


def blockify(ids, vocab=VOCAB):
    """Split a program into per-block token lists, each ending in BLOCK-END."""
    try:
        parse(ids, vocab)
    except DslError as exc:
        raise NotAProgram(str(exc)) from exc
    body = list(ids[2:-1])
    blocks = []
    start = 0
    depth = 0
    for i, tid in enumerate(body):
        if tid == OPEN:
            depth += 1
        elif tid == CLOSE:
            depth -= 1
            if depth == 0:
                blocks.append(body[start:i + 1] + [BLOCK_END])
                start = i + 1
    return blocks


def check_block(block):
    if not block or block[-1] != BLOCK_END:
        raise MalformedBlock("block does not end with BLOCK-END")
    depth = 0
    for tid in block[:-1]:
        if tid == BLOCK_END:
            raise MalformedBlock("BLOCK-END inside block")
        if tid == OPEN:
            depth += 1
        elif tid == CLOSE:
            depth -= 1
            if depth < 0:
                raise MalformedBlock("unbalanced braces in block")
    if depth != 0:
        raise MalformedBlock("unbalanced braces in block")


def deblockify(blocks):
    out = [STACK, OPEN]
    for block in blocks:
        check_block(block)
        out.extend(block[:-1])
    out.append(CLOSE)
    return out


def one_hot(ids, vocab=VOCAB, dtype=np.float32):
    out = np.zeros((len(ids), len(vocab)), dtype=dtype)
    out[np.arange(len(ids)), np.asarray(ids, dtype=np.intp)] = 1.0
    return out
