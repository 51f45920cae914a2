"""Word -> (CUI set, semantic group) thesaurus loaded from a small TSV file.

Each non-comment line holds ``word<TAB>cui[,cui...]<TAB>GROUP``. Words are
lowercased; group ids are assigned in order of first appearance.
"""

from __future__ import annotations

import io
import os
import re
from dataclasses import dataclass, field
from typing import IO, Iterable, Optional, Union

CUI_PATTERN = re.compile(r"C\d{7}")


class LexiconParseError(ValueError):
    """Raised for a malformed lexicon line; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


@dataclass(frozen=True)
class SemanticGroup:
    id: int
    name: str


@dataclass(frozen=True)
class LexiconEntry:
    word: str
    cuis: frozenset
    group: int


@dataclass(frozen=True)
class Lexicon:
    entries: dict = field(default_factory=dict)
    cui_index: dict = field(default_factory=dict)
    groups: tuple = ()

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, word: str) -> bool:
        return word.lower() in self.entries

    @property
    def group_count(self) -> int:
        return len(self.groups)

    def group_of(self, word: str) -> Optional[int]:
        entry = self.entries.get(word.lower())
        return None if entry is None else entry.group

    def group_name(self, group_id: int) -> str:
        return self.groups[group_id].name

    def group_id(self, name: str) -> int:
        for group in self.groups:
            if group.name == name:
                return group.id
        raise KeyError(name)

    def siblings(self, word: str) -> frozenset:
        """All words sharing at least one CUI with ``word`` (itself included)."""
        entry = self.entries.get(word.lower())
        if entry is None:
            return frozenset()
        out = set()
        for cui in entry.cuis:
            out |= self.cui_index[cui]
        return frozenset(out)


def _parse_lines(lines: Iterable[str]) -> Lexicon:
    entries: dict = {}
    groups: list = []
    group_ids: dict = {}
    for line_no, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 3:
            raise LexiconParseError(line_no, f"expected 3 tab-separated columns, got {len(cols)}")
        word, cui_col, group_name = (c.strip() for c in cols)
        if not word:
            raise LexiconParseError(line_no, "empty word")
        if any(ch.isspace() for ch in word):
            raise LexiconParseError(line_no, f"multi-word entry {word!r} is not supported")
        word = word.lower()
        cuis = [c.strip() for c in cui_col.split(",")]
        for cui in cuis:
            if not CUI_PATTERN.fullmatch(cui):
                raise LexiconParseError(line_no, f"bad CUI {cui!r}")
        if not group_name:
            raise LexiconParseError(line_no, "empty semantic group")
        group_name = group_name.upper()
        if group_name not in group_ids:
            group_ids[group_name] = len(groups)
            groups.append(SemanticGroup(len(groups), group_name))
        gid = group_ids[group_name]

        previous = entries.get(word)
        if previous is not None:
            if previous.group != gid:
                raise LexiconParseError(
                    line_no,
                    f"word {word!r} already assigned to {groups[previous.group].name}, not {group_name}",
                )
            entries[word] = LexiconEntry(word, previous.cuis | frozenset(cuis), gid)
        else:
            entries[word] = LexiconEntry(word, frozenset(cuis), gid)

    index: dict = {}
    for entry in entries.values():
        for cui in entry.cuis:
            index.setdefault(cui, set()).add(entry.word)
    cui_index = {cui: frozenset(words) for cui, words in index.items()}
    return Lexicon(entries=entries, cui_index=cui_index, groups=tuple(groups))


def load_lexicon(source: Union[IO, bytes, str]) -> Lexicon:
    """Parse a lexicon from a binary/text stream or an in-memory bytes/str payload."""
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    if isinstance(source, str):
        return _parse_lines(io.StringIO(source))
    data = source.read()
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    return _parse_lines(io.StringIO(data))


def read_lexicon(path: Union[str, os.PathLike]) -> Lexicon:
    with open(path, "rb") as fh:
        return load_lexicon(fh)


def dump_lexicon(lex: Lexicon) -> str:
    """Serialize to TSV, sorted by (group id, word) so group ids survive a reload."""
    rows = sorted(lex.entries.values(), key=lambda e: (e.group, e.word))
    return "".join(
        f"{e.word}\t{','.join(sorted(e.cuis))}\t{lex.groups[e.group].name}\n" for e in rows
    )


def sibling_pairs(lex: Lexicon) -> list:
    """Unordered word pairs sharing a CUI, sorted."""
    pairs = set()
    for words in lex.cui_index.values():
        ordered = sorted(words)
        for i, a in enumerate(ordered):
            for b in ordered[i + 1:]:
                pairs.add((a, b))
    return sorted(pairs)
