"""Tokenizer for the orchestration surface language (.oz files)."""

from __future__ import annotations

from dataclasses import dataclass

KEYWORDS = {
    "proc", "fun", "thread", "local", "in", "end", "if", "then", "else",
    "case", "of", "skip", "try", "catch", "raise", "lazy",
}

# longest-match first
OPERATORS = [
    "==", "\\=", ">=", "=<", "[]",
    "=", "+", "-", "*", "/", ">", "<", "|", "#",
    "(", ")", "{", "}", "[", "]", ":", "?", ".",
]


class LexError(Exception):
    def __init__(self, message, line, col):
        super().__init__(f"{line}:{col}: {message}")
        self.line = line
        self.col = col
        self.message = message


@dataclass(frozen=True)
class Token:
    kind: str  # kw | var | atom | int | float | op | eof
    text: str
    value: object
    line: int
    col: int

    @property
    def span(self):
        return (self.line, self.col)


def tokenize(source: str) -> list:
    tokens = []
    i, line, col = 0, 1, 1
    n = len(source)

    def here():
        return line, col

    while i < n:
        c = source[i]
        if c == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if c in " \t\r":
            i += 1
            col += 1
            continue
        if c == "%":
            while i < n and source[i] != "\n":
                i += 1
            continue
        start_line, start_col = line, col
        if c == "'":
            j = i + 1
            buf = []
            while True:
                if j >= n or source[j] == "\n":
                    raise LexError("unterminated atom quote", start_line, start_col)
                if source[j] == "\\" and j + 1 < n:
                    buf.append(source[j + 1])
                    j += 2
                    continue
                if source[j] == "'":
                    break
                buf.append(source[j])
                j += 1
            text = source[i : j + 1]
            tokens.append(Token("atom", text, "".join(buf), start_line, start_col))
            col += j + 1 - i
            i = j + 1
            continue
        if c.isdigit():
            j = i
            while j < n and source[j].isdigit():
                j += 1
            if j + 1 < n and source[j] == "." and source[j + 1].isdigit():
                j += 1
                while j < n and source[j].isdigit():
                    j += 1
                text = source[i:j]
                tokens.append(Token("float", text, float(text), start_line, start_col))
            else:
                text = source[i:j]
                tokens.append(Token("int", text, int(text), start_line, start_col))
            col += j - i
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            text = source[i:j]
            if text in KEYWORDS:
                tokens.append(Token("kw", text, text, start_line, start_col))
            elif text in ("true", "false"):
                tokens.append(Token("bool", text, text == "true", start_line, start_col))
            elif text[0].isupper():
                tokens.append(Token("var", text, text, start_line, start_col))
            elif text[0].islower():
                tokens.append(Token("atom", text, text, start_line, start_col))
            else:
                raise LexError(f"illegal identifier {text!r}", start_line, start_col)
            col += j - i
            i = j
            continue
        matched = None
        for op in OPERATORS:
            if source.startswith(op, i):
                matched = op
                break
        if matched is None:
            raise LexError(f"illegal character {c!r}", start_line, start_col)
        tokens.append(Token("op", matched, matched, start_line, start_col))
        i += len(matched)
        col += len(matched)
        continue
    tokens.append(Token("eof", "", None, line, col))
    return tokens
