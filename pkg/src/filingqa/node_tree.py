"""Hierarchical table-of-contents trees: parse, validate, generate, traverse.

The on-disk schema is a JSON object ``{doc_name, structure}`` where each
node carries ``title``, ``start_index``/``end_index`` (1-based page
numbers), optional ``nodes`` (children), optional ``summary``, and a
unique zero-padded 4-digit ``node_id``. Leaf nodes serialize without a
``nodes`` key; unknown keys are rejected.

A node's *section extent* is the hull of its own page range and its
descendants' extents: parents commonly cover only their heading page
while children extend further. Validation enforces, per level, that
children are ordered by start page, start no earlier than their parent,
and that each child's extent stays within the parent's section, which
ends where the parent's next sibling begins (a shared boundary page is
allowed) or at the enclosing bound (the document's page count at the
root, when known).

Traversal asks an LLM to select node ids over the outline (titles plus
optional summaries) and returns the exact page texts of the selected
nodes' extents, in page order.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Iterator

from .corpus import Document, span_tokenize
from .prompting import render
from .providers import CompletionProvider, PriceTable

SUMMARY_TOKEN_CAP = 60

_ROOT_FIELDS = {"doc_name", "structure"}
_NODE_FIELDS = {"title", "start_index", "end_index", "nodes", "node_id", "summary"}
_NODE_REQUIRED = {"title", "start_index", "end_index", "node_id"}


class TreeError(Exception):
    """Base error for node-tree parsing, validation, and traversal."""


class TreeParseError(TreeError):
    """Malformed JSON or missing/ill-typed required fields."""


class UnknownFieldError(TreeParseError):
    """The JSON carries a key outside the tree schema."""


class RangeViolation(TreeError):
    """A page range is inverted, out of order, or escapes its section."""


class DuplicateNodeId(TreeError):
    """Two nodes share a node_id."""


class TreeGenerationFailed(TreeError):
    """The provider could not produce a valid tree, even after repair."""


class TraversalFailed(TreeError):
    """The provider could not produce a usable node selection, even after repair."""


@dataclass
class Node:
    title: str
    start_index: int
    end_index: int
    node_id: str
    nodes: list["Node"] = field(default_factory=list)
    summary: str | None = None

    def extent(self) -> tuple[int, int]:
        """Hull of this node's range and all descendant extents."""
        lo, hi = self.start_index, self.end_index
        for child in self.nodes:
            clo, chi = child.extent()
            lo = min(lo, clo)
            hi = max(hi, chi)
        return lo, hi

    def walk(self) -> Iterator["Node"]:
        yield self
        for child in self.nodes:
            yield from child.walk()

    def to_dict(self) -> dict:
        d: dict = {
            "title": self.title,
            "start_index": self.start_index,
            "end_index": self.end_index,
        }
        if self.summary is not None:
            d["summary"] = self.summary
        if self.nodes:
            d["nodes"] = [c.to_dict() for c in self.nodes]
        d["node_id"] = self.node_id
        return d


@dataclass
class NodeTree:
    doc_name: str
    structure: list[Node] = field(default_factory=list)

    def walk(self) -> Iterator[Node]:
        for node in self.structure:
            yield from node.walk()

    def find(self, node_id: str) -> Node | None:
        for node in self.walk():
            if node.node_id == node_id:
                return node
        return None

    def node_ids(self) -> list[str]:
        return [n.node_id for n in self.walk()]

    def to_dict(self) -> dict:
        return {
            "doc_name": self.doc_name,
            "structure": [n.to_dict() for n in self.structure],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


@dataclass
class TreeGenReport:
    """Token, latency, and cost accounting for one tree generation."""

    input_tokens: int
    output_tokens: int
    latency: float
    with_summaries: bool
    cost: float = 0.0

    @property
    def total_tokens(self) -> int:
        return self.input_tokens + self.output_tokens

    def to_dict(self) -> dict:
        return {
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "total_tokens": self.total_tokens,
            "latency": self.latency,
            "with_summaries": self.with_summaries,
            "cost": self.cost,
        }


# ---------------------------------------------------------------------------
# Parsing and validation


def _parse_node(raw: dict, path: str) -> Node:
    if not isinstance(raw, dict):
        raise TreeParseError(f"{path}: node must be an object")
    unknown = set(raw) - _NODE_FIELDS
    if unknown:
        raise UnknownFieldError(f"{path}: unknown fields {sorted(unknown)}")
    missing = _NODE_REQUIRED - set(raw)
    if missing:
        raise TreeParseError(f"{path}: missing fields {sorted(missing)}")
    if not isinstance(raw["title"], str) or not isinstance(raw["node_id"], str):
        raise TreeParseError(f"{path}: title and node_id must be strings")
    for key in ("start_index", "end_index"):
        if not isinstance(raw[key], int) or isinstance(raw[key], bool):
            raise TreeParseError(f"{path}: {key} must be an integer")
    summary = raw.get("summary")
    if summary is not None and not isinstance(summary, str):
        raise TreeParseError(f"{path}: summary must be a string")
    children_raw = raw.get("nodes", [])
    if not isinstance(children_raw, list):
        raise TreeParseError(f"{path}: nodes must be a list")
    children = [
        _parse_node(c, f"{path}.nodes[{i}]") for i, c in enumerate(children_raw)
    ]
    return Node(
        title=raw["title"],
        start_index=raw["start_index"],
        end_index=raw["end_index"],
        node_id=raw["node_id"],
        nodes=children,
        summary=summary,
    )


def tree_from_dict(data: dict) -> NodeTree:
    if not isinstance(data, dict):
        raise TreeParseError("tree root must be an object")
    unknown = set(data) - _ROOT_FIELDS
    if unknown:
        raise UnknownFieldError(f"root: unknown fields {sorted(unknown)}")
    missing = _ROOT_FIELDS - set(data)
    if missing:
        raise TreeParseError(f"root: missing fields {sorted(missing)}")
    if not isinstance(data["doc_name"], str):
        raise TreeParseError("doc_name must be a string")
    if not isinstance(data["structure"], list):
        raise TreeParseError("structure must be a list")
    return NodeTree(
        doc_name=data["doc_name"],
        structure=[
            _parse_node(n, f"structure[{i}]") for i, n in enumerate(data["structure"])
        ],
    )


def validate_tree(tree: NodeTree, page_count: int | None = None) -> None:
    """Check node_id uniqueness and the section-range rules.

    Raises :class:`DuplicateNodeId` or :class:`RangeViolation`.
    """
    seen: set[str] = set()
    for node in tree.walk():
        if not re.fullmatch(r"\d{4}", node.node_id):
            raise TreeParseError(
                f"node_id must be a zero-padded 4-digit string, got {node.node_id!r}"
            )
        if node.node_id in seen:
            raise DuplicateNodeId(f"duplicate node_id {node.node_id!r}")
        seen.add(node.node_id)

    high = page_count if page_count is not None else None

    def check_level(nodes: list[Node], low: int, high: int | None, where: str) -> None:
        for i, node in enumerate(nodes):
            label = f"{where}{node.node_id}"
            if node.start_index > node.end_index:
                raise RangeViolation(
                    f"{label}: inverted range [{node.start_index}, {node.end_index}]"
                )
            if node.start_index < low:
                raise RangeViolation(
                    f"{label}: starts at {node.start_index}, before section start {low}"
                )
            if i + 1 < len(nodes) and nodes[i + 1].start_index < node.start_index:
                raise RangeViolation(
                    f"{label}: siblings out of order "
                    f"({nodes[i + 1].start_index} after {node.start_index})"
                )
            node_high = nodes[i + 1].start_index if i + 1 < len(nodes) else high
            _, ext_end = node.extent()
            if node_high is not None and ext_end > node_high:
                raise RangeViolation(
                    f"{label}: section extends to page {ext_end}, "
                    f"beyond its bound {node_high}"
                )
            check_level(node.nodes, node.start_index, node_high, f"{label}/")

    check_level(tree.structure, 1, high, "")


def parse_tree(json_text: str, page_count: int | None = None) -> NodeTree:
    """Parse and validate a tree from its JSON text."""
    try:
        data = json.loads(json_text)
    except json.JSONDecodeError as exc:
        raise TreeParseError(f"malformed JSON: {exc}") from exc
    tree = tree_from_dict(data)
    validate_tree(tree, page_count=page_count)
    return tree


# ---------------------------------------------------------------------------
# Deterministic generation from headings


@dataclass(frozen=True)
class Heading:
    level: int
    title: str
    page: int


_MD_HEADING = re.compile(r"^(#{1,6})\s+(.+?)\s*$")


def _is_upper_heading(line: str) -> bool:
    s = line.strip()
    return (
        len(s) >= 4
        and any(c.isalpha() for c in s)
        and s == s.upper()
        and not s.endswith((".", "!", "?", ";", ","))
    )


def detect_headings(pages: list[str] | tuple[str, ...]) -> list[Heading]:
    """Markdown headings (level = number of '#') and all-uppercase lines
    (level 1), in page order."""
    headings: list[Heading] = []
    for page_no, page_text in enumerate(pages, start=1):
        for line in page_text.split("\n"):
            m = _MD_HEADING.match(line.strip())
            if m:
                headings.append(Heading(len(m.group(1)), m.group(2), page_no))
            elif _is_upper_heading(line):
                headings.append(Heading(1, line.strip(), page_no))
    return headings


def _truncate_tokens(text: str, cap: int) -> str:
    spans = span_tokenize(text)
    if len(spans) <= cap:
        return text
    return text[: spans[cap - 1][2]]


def _is_heading_line(line: str, title: str | None = None) -> bool:
    s = line.strip()
    m = _MD_HEADING.match(s)
    if m:
        return title is None or m.group(2) == title
    if _is_upper_heading(s):
        return title is None or s == title
    return False


def _section_summary(pages: list[str] | tuple[str, ...], heading: Heading) -> str:
    """First sentence of the section body following the heading's line."""
    lines = pages[heading.page - 1].split("\n")
    start = next(
        (i for i, ln in enumerate(lines) if _is_heading_line(ln, heading.title)), -1
    )
    body: list[str] = []
    for ln in lines[start + 1 :]:
        if _is_heading_line(ln):
            break
        if ln.strip():
            body.append(ln.strip())
    text = " ".join(body)
    first = re.split(r"(?<=[.!?])\s+", text)[0] if text else heading.title
    return _truncate_tokens(first, SUMMARY_TOKEN_CAP)


def build_tree_from_headings(
    doc_name: str,
    pages: list[str] | tuple[str, ...],
    with_summaries: bool = False,
) -> NodeTree:
    """Pure tree construction from detected headings.

    No headings: one node covering all pages. Sections run from their
    heading's page to the page before the next same-or-shallower heading
    (same-page neighbors keep a single-page range); the last section runs
    to the document's end. node_ids are assigned in order of appearance.
    """
    page_count = len(pages)
    headings = detect_headings(pages)
    counter = 0

    def next_id() -> str:
        nonlocal counter
        node_id = f"{counter:04d}"
        counter += 1
        return node_id

    if not headings:
        root = Node(
            title=doc_name or "Document",
            start_index=1,
            end_index=page_count,
            node_id=next_id(),
            summary=_truncate_tokens(pages[0].strip(), SUMMARY_TOKEN_CAP)
            if with_summaries
            else None,
        )
        return NodeTree(doc_name=doc_name, structure=[root])

    ends: list[int] = []
    for i, h in enumerate(headings):
        nxt = next(
            (g for g in headings[i + 1 :] if g.level <= h.level),
            None,
        )
        if nxt is None:
            ends.append(page_count)
        elif nxt.page > h.page:
            ends.append(nxt.page - 1)
        else:
            ends.append(h.page)

    tree = NodeTree(doc_name=doc_name)
    stack: list[tuple[int, Node]] = []
    for h, end in zip(headings, ends):
        node = Node(
            title=h.title,
            start_index=h.page,
            end_index=end,
            node_id=next_id(),
            summary=_section_summary(pages, h) if with_summaries else None,
        )
        while stack and stack[-1][0] >= h.level:
            stack.pop()
        if stack:
            stack[-1][1].nodes.append(node)
        else:
            tree.structure.append(node)
        stack.append((h.level, node))
    return tree


def generate_tree_deterministic(doc: Document, with_summaries: bool = False) -> NodeTree:
    """Offline heading-based tree for a document; pure and reproducible."""
    tree = build_tree_from_headings(doc.doc_id, doc.pages, with_summaries)
    validate_tree(tree, page_count=doc.page_count)
    return tree


# ---------------------------------------------------------------------------
# Provider-backed generation


def _render_document_pages(doc: Document) -> str:
    parts = []
    for page_no, text in enumerate(doc.pages, start=1):
        parts.append(f"[page {page_no}]")
        parts.append(text)
    return "\n".join(parts)


def _cap_summaries(tree: NodeTree, with_summaries: bool) -> None:
    for node in tree.walk():
        if not with_summaries:
            node.summary = None
        elif node.summary is not None:
            node.summary = _truncate_tokens(node.summary, SUMMARY_TOKEN_CAP)


def _provider_usage(llm: CompletionProvider, start: int) -> tuple[int, int, float]:
    entries = llm.transcripts.entries()[start:]
    return (
        sum(e.input_tokens for e in entries),
        sum(e.output_tokens for e in entries),
        sum(e.latency for e in entries),
    )


def generate_tree(
    doc: Document,
    llm: CompletionProvider,
    with_summaries: bool = False,
    prices: PriceTable | None = None,
) -> tuple[NodeTree, TreeGenReport]:
    """Ask the provider for the document's tree; one repair retry on
    invalid output. Single-page documents take the deterministic fallback
    without a provider call."""
    t_start = len(llm.transcripts.entries())

    if doc.page_count == 1:
        tree = generate_tree_deterministic(doc, with_summaries)
        return tree, TreeGenReport(0, 0, 0.0, with_summaries)

    clause = (
        " Include for every node a summary field of at most 60 tokens."
        if with_summaries
        else ""
    )
    prompt = render(
        "tree_gen_v1",
        summaries_clause=clause,
        doc_name=doc.doc_id,
        page_count=str(doc.page_count),
        document=_render_document_pages(doc),
    )
    reply = llm.complete(prompt)
    try:
        tree = parse_tree(reply.text, page_count=doc.page_count)
    except TreeError as exc:
        repair = render(
            "repair_v1", error=str(exc), previous=reply.text, original=prompt
        )
        reply = llm.complete(repair)
        try:
            tree = parse_tree(reply.text, page_count=doc.page_count)
        except TreeError as exc2:
            raise TreeGenerationFailed(
                f"provider output unusable after repair: {exc2}"
            ) from exc2

    _cap_summaries(tree, with_summaries)
    in_tok, out_tok, latency = _provider_usage(llm, t_start)
    cost = 0.0
    if prices is not None:
        price = prices.get(llm.provider_id)
        cost = in_tok * price.input_per_token + out_tok * price.output_per_token
    return tree, TreeGenReport(in_tok, out_tok, latency, with_summaries, cost)


# ---------------------------------------------------------------------------
# Traversal retrieval


@dataclass
class TraversalResult:
    node_ids: list[str]
    pages: list[int]
    context: str
    replies: list[str]

    def page_ranges(self) -> list[tuple[int, int]]:
        """Selected pages as maximal contiguous (start, end) runs."""
        ranges: list[tuple[int, int]] = []
        for p in self.pages:
            if ranges and p == ranges[-1][1] + 1:
                ranges[-1] = (ranges[-1][0], p)
            else:
                ranges.append((p, p))
        return ranges


def render_outline(tree: NodeTree) -> str:
    lines: list[str] = []

    def visit(node: Node, depth: int) -> None:
        desc = node.title if node.summary is None else f"{node.title} | {node.summary}"
        lines.append(
            f"{'  ' * depth}{node.node_id} | pages {node.start_index}-{node.end_index} | {desc}"
        )
        for child in node.nodes:
            visit(child, depth + 1)

    for node in tree.structure:
        visit(node, 0)
    return "\n".join(lines)


def _parse_selection(text: str) -> list[str]:
    try:
        data = json.loads(text.strip())
    except json.JSONDecodeError as exc:
        raise TreeParseError(f"selection is not JSON: {exc}") from exc
    if not isinstance(data, list) or not all(isinstance(x, str) for x in data):
        raise TreeParseError("selection must be a JSON array of node_id strings")
    return data


def traverse_retrieve(
    tree: NodeTree,
    question: str,
    llm: CompletionProvider,
    doc: Document,
) -> TraversalResult:
    """Select nodes over the outline and return their pages' exact text.

    An invalid or unknown-id selection gets one repair round; a second
    failure raises :class:`TraversalFailed`.
    """
    known = set(tree.node_ids())
    prompt = render("traverse_v1", question=question, outline=render_outline(tree))
    replies: list[str] = []

    def attempt(p: str) -> list[str]:
        reply = llm.complete(p)
        replies.append(reply.text)
        ids = _parse_selection(reply.text)
        unknown = [i for i in ids if i not in known]
        if unknown:
            raise TreeParseError(f"unknown node_id(s): {unknown}")
        return ids

    try:
        ids = attempt(prompt)
    except TreeParseError as exc:
        repair = render(
            "repair_v1", error=str(exc), previous=replies[-1] if replies else "",
            original=prompt,
        )
        try:
            ids = attempt(repair)
        except TreeParseError as exc2:
            raise TraversalFailed(f"selection unusable after repair: {exc2}") from exc2

    pages: set[int] = set()
    for node_id in ids:
        node = tree.find(node_id)
        assert node is not None
        lo, hi = node.extent()
        pages.update(range(lo, hi + 1))
    ordered = sorted(p for p in pages if 1 <= p <= doc.page_count)
    context = "\n".join(doc.pages[p - 1] for p in ordered)
    return TraversalResult(node_ids=ids, pages=ordered, context=context, replies=replies)
