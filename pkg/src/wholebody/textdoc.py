"""Minimal structured-text document format used for models and configs.

A document is a sequence of lines.  Each line is either a key followed by
whitespace-separated values, a block opener ``kind name {``, or a closing
``}``.  Comments start with ``#`` and run to end of line.  Blocks nest.

Example::

    name biped
    gravity 0 0 -9.81
    link torso {
      mass 23.65
    }
"""

from __future__ import annotations

from dataclasses import dataclass, field


class DocError(ValueError):
    """Parse or schema error, carrying a line number when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


@dataclass
class Block:
    """One block of a document: scalar fields plus nested child blocks."""

    kind: str = ""
    name: str = ""
    line: int = 0
    fields: dict = field(default_factory=dict)
    blocks: list = field(default_factory=list)

    def get(self, key, default=None):
        return self.fields[key][0] if key in self.fields else default

    def require(self, key):
        if key not in self.fields:
            raise DocError(f"{self._label()} missing required key '{key}'", self.line)
        return self.fields[key][0]

    def floats(self, key, n=None, default=None):
        if key not in self.fields:
            if default is not None:
                return list(default)
            raise DocError(f"{self._label()} missing required key '{key}'", self.line)
        tokens, line = self.fields[key]
        try:
            vals = [float(t) for t in tokens]
        except ValueError:
            raise DocError(f"non-numeric value for '{key}': {' '.join(tokens)}", line)
        if n is not None and len(vals) != n:
            raise DocError(f"'{key}' expects {n} numbers, got {len(vals)}", line)
        return vals

    def scalar(self, key, default=None):
        if key not in self.fields:
            if default is not None:
                return default
            raise DocError(f"{self._label()} missing required key '{key}'", self.line)
        return self.floats(key)[0] if len(self.fields[key][0]) == 1 else self.floats(key, 1)[0]

    def string(self, key, default=None):
        if key not in self.fields:
            if default is not None:
                return default
            raise DocError(f"{self._label()} missing required key '{key}'", self.line)
        tokens, _ = self.fields[key]
        return " ".join(tokens)

    def boolean(self, key, default=False):
        if key not in self.fields:
            return default
        tokens, line = self.fields[key]
        word = tokens[0].lower()
        if word in ("true", "1", "yes"):
            return True
        if word in ("false", "0", "no"):
            return False
        raise DocError(f"'{key}' expects true/false, got '{tokens[0]}'", line)

    def children(self, kind):
        return [b for b in self.blocks if b.kind == kind]

    def _label(self):
        return f"{self.kind} '{self.name}'" if self.kind else "document"


def parse_document(text):
    """Parse ``text`` into a root :class:`Block`.

    Raises :class:`DocError` with the offending line number on malformed
    input (unbalanced braces, bad block headers, duplicate keys).
    """
    root = Block()
    stack = [root]
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line == "}":
            if len(stack) == 1:
                raise DocError("unmatched '}'", lineno)
            stack.pop()
            continue
        if line.endswith("{"):
            header = line[:-1].split()
            if len(header) != 2:
                raise DocError(f"block header must be 'kind name {{', got '{line}'", lineno)
            block = Block(kind=header[0], name=header[1], line=lineno)
            stack[-1].blocks.append(block)
            stack.append(block)
            continue
        tokens = line.split()
        key, values = tokens[0], tokens[1:]
        current = stack[-1]
        if key in current.fields:
            raise DocError(f"duplicate key '{key}' in {current._label()}", lineno)
        current.fields[key] = (values, lineno)
    if len(stack) != 1:
        raise DocError(f"unclosed block '{stack[-1].kind} {stack[-1].name}'", stack[-1].line)
    return root


def _format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_block(fields, blocks=(), indent=0):
    """Serialize (key -> value-or-sequence) fields plus (kind, name, fields, blocks) children."""
    pad = "  " * indent
    out = []
    for key, value in fields.items():
        if isinstance(value, (list, tuple)):
            out.append(pad + key + " " + " ".join(_format_value(x) for x in value))
        else:
            out.append(pad + key + " " + _format_value(value))
    for kind, name, child_fields, child_blocks in blocks:
        out.append(pad + f"{kind} {name} {{")
        out.append(dump_block(child_fields, child_blocks, indent + 1))
        out.append(pad + "}")
    return "\n".join(out)
