"""Item formats: how a blob decomposes into items and how keys are read from them.

A format must satisfy ``b"".join(fmt.items(blob)) == blob`` for every blob it
accepts.  Two formats are built in, ``new_line`` and ``tsv``; others can be
added with :func:`register_format`.
"""

from __future__ import annotations

import re

from .errors import FormatError, UnknownFormat

_NUMBER_RE = re.compile(rb"^\s*[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?\s*$")
_INT_RE = re.compile(rb"^\s*[+-]?\d+\s*$")

# Column names accepted by ``new_line`` for BED-like records.
BED_COLUMNS = {
    "chrom": 0,
    "start_position": 1,
    "end_position": 2,
    "name": 3,
    "score": 4,
    "strand": 5,
}


class FormatSpec:
    """Delimiter-terminated records.  Subclasses override :meth:`field`."""

    name = "abstract"
    delimiter = b"\n"

    def items(self, blob):
        if not isinstance(blob, (bytes, bytearray)):
            raise FormatError(f"{self.name}: expected bytes, got {type(blob).__name__}")
        if not blob:
            return []
        d = self.delimiter
        parts = bytes(blob).split(d)
        out = [p + d for p in parts[:-1]]
        if parts[-1]:
            out.append(parts[-1])
        return out

    def join(self, items):
        return b"".join(items)

    def terminate(self, item):
        """Item with its delimiter guaranteed; reordering must not glue records."""
        return item if item.endswith(self.delimiter) else item + self.delimiter

    def body(self, item):
        return item[:-len(self.delimiter)] if item.endswith(self.delimiter) else item

    def column(self, identifier):
        """Column index for ``identifier``, or None for the whole record."""
        raise NotImplementedError

    def split_columns(self, line, maxsplit):
        raise NotImplementedError

    def getter(self, identifier):
        """``item -> field bytes`` with the identifier resolved once."""
        if type(self).field is not FormatSpec.field:
            return lambda item: self.field(item, identifier)
        index = self.column(identifier)
        d, nd, name, splitter = self.delimiter, len(self.delimiter), self.name, \
            self.split_columns

        def get(item):
            line = (item[:-nd] if item.endswith(d) else item).rstrip(b"\r")
            if index is None:
                return line
            cols = splitter(line, index + 1)
            if index >= len(cols):
                raise FormatError(f"{name}: record has no column {identifier!r}: {line[:60]!r}")
            return cols[index]
        return get

    def field(self, item, identifier):
        return self.getter(identifier)(item)


class NewLineFormat(FormatSpec):
    """One record per line.  Identifiers select whitespace-separated columns."""

    name = "new_line"

    def column(self, identifier):
        if identifier is None or identifier == "line":
            return None
        return _column_index(identifier, BED_COLUMNS)

    def split_columns(self, line, maxsplit):
        return line.split(None, maxsplit)


class TsvFormat(FormatSpec):
    """Tab-separated records; identifiers are column indices."""

    name = "tsv"

    def column(self, identifier):
        return None if identifier is None else _column_index(identifier, {})

    def split_columns(self, line, maxsplit):
        return line.split(b"\t", maxsplit)


def _column_index(identifier, aliases):
    if isinstance(identifier, int):
        if identifier < 0:
            raise FormatError(f"negative column index {identifier}")
        return identifier
    if isinstance(identifier, str):
        if identifier.isdigit():
            return int(identifier)
        if identifier in aliases:
            return aliases[identifier]
    raise FormatError(f"unknown identifier {identifier!r}")


_REGISTRY = {}


def register_format(fmt):
    _REGISTRY[fmt.name] = fmt
    return fmt


def get_format(name):
    if isinstance(name, FormatSpec):
        return name
    try:
        return _REGISTRY[name]
    except KeyError:
        raise UnknownFormat(f"no format registered under {name!r}") from None


def registered_formats():
    return sorted(_REGISTRY)


register_format(NewLineFormat())
register_format(TsvFormat())


# -- keys ---------------------------------------------------------------------

def is_decimal(raw):
    return bool(_NUMBER_RE.match(raw))


def numeric_value(raw):
    if _INT_RE.match(raw):
        return int(raw)
    if _NUMBER_RE.match(raw):
        return float(raw)
    raise FormatError(f"non-numeric key {raw[:40]!r}")


def detect_numeric(fmt, identifier, items):
    """True when every item's identifier field parses as a decimal number."""
    if not items:
        return False
    get = fmt.getter(identifier)
    match = _NUMBER_RE.match
    return all(match(get(it)) for it in items)


def key_function(fmt, identifier, numeric):
    get = fmt.getter(identifier)
    if numeric:
        return lambda item: numeric_value(get(item))
    return get
