"""Static target description: manifest loading, seed annotation, backward slicing.

A target is described declaratively by a manifest file (JSON): its functions,
call graph, per-function CFG with optional data facts attached to blocks, and
the security-relevant API call sites inside it.  Everything here is immutable
after load and safe to share across threads.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from semfuzz.errors import (
    ParseError,
    UnknownFunction,
    UnknownSite,
    ValidationError,
)

API_CATEGORIES = ("file_io", "network", "string_parsing", "memory_alloc", "other")

CONSTRAINT_KINDS = ("length_bound", "value_range", "format_literal", "unknown")


@dataclass(frozen=True)
class ParamConstraint:
    param_index: int
    kind: str = "unknown"
    detail: str = ""


@dataclass(frozen=True)
class BlockFact:
    """A declared data fact attached to a CFG block.

    ``api`` restricts the fact to call sites of that API name; ``None``
    applies to any downstream site.
    """

    param_index: int
    kind: str
    detail: str
    api: str | None = None


@dataclass(frozen=True)
class BasicBlock:
    block_id: str
    successors: tuple[str, ...] = ()
    facts: tuple[BlockFact, ...] = ()


@dataclass(frozen=True)
class FunctionDecl:
    function_id: str


@dataclass(frozen=True)
class ApiCallSite:
    function_id: str
    block_id: str
    api_name: str
    category: str
    arity: int = 1
    param_constraints: tuple[ParamConstraint, ...] = ()


@dataclass(frozen=True)
class SeedAnnotation:
    seed_id: str
    reachable_functions: frozenset[str]
    touched_api_categories: frozenset[str]


@dataclass(frozen=True)
class TargetManifest:
    target_id: str
    functions: tuple[FunctionDecl, ...]
    call_graph: dict[str, tuple[str, ...]]
    cfg: dict[str, tuple[BasicBlock, ...]]
    api_sites: tuple[ApiCallSite, ...]
    input_format: str
    entry_function: str
    regions: tuple[str, ...] = ()

    def function_ids(self) -> frozenset[str]:
        return frozenset(f.function_id for f in self.functions)

    def blocks_of(self, function_id: str) -> tuple[BasicBlock, ...]:
        if function_id not in self.cfg:
            raise UnknownFunction(f"function {function_id!r} has no CFG")
        return self.cfg[function_id]


@dataclass(frozen=True)
class ApiCategoryTable:
    """Pattern table mapping API names to categories.

    Patterns are either exact names or ``prefix*`` globs.  Lookup is total:
    anything unmatched falls through to ``other``.
    """

    entries: tuple[tuple[str, str], ...]
    source: str = "builtin"

    def __post_init__(self) -> None:
        for pattern, category in self.entries:
            if not pattern:
                raise ValidationError("empty pattern in API category table")
            if category not in API_CATEGORIES:
                raise ValidationError(f"unknown category {category!r} for pattern {pattern!r}")


# Scaled-down category table: libc and POSIX staples, common parser/codec
# entry points, and allocation/string routines that show up in crash reports.
_BUILTIN_ENTRIES: tuple[tuple[str, str], ...] = (
    # file I/O
    ("fopen*", "file_io"),
    ("freopen", "file_io"),
    ("fclose", "file_io"),
    ("fread*", "file_io"),
    ("fwrite*", "file_io"),
    ("fseek*", "file_io"),
    ("ftell*", "file_io"),
    ("fgets", "file_io"),
    ("fgetc", "file_io"),
    ("fputs", "file_io"),
    ("open*", "file_io"),
    ("close", "file_io"),
    ("read", "file_io"),
    ("readv", "file_io"),
    ("write", "file_io"),
    ("writev", "file_io"),
    ("lseek*", "file_io"),
    ("mmap*", "file_io"),
    ("munmap", "file_io"),
    ("stat*", "file_io"),
    ("fstat*", "file_io"),
    ("unlink*", "file_io"),
    ("ioctl", "file_io"),
    # network
    ("socket*", "network"),
    ("connect", "network"),
    ("bind", "network"),
    ("listen", "network"),
    ("accept*", "network"),
    ("recv*", "network"),
    ("send*", "network"),
    ("getaddrinfo", "network"),
    ("getnameinfo", "network"),
    ("inet_*", "network"),
    ("ntoh*", "network"),
    ("hton*", "network"),
    ("pcap_*", "network"),
    ("ssl_*", "network"),
    ("SSL_*", "network"),
    # string parsing / formatting
    ("str*", "string_parsing"),
    ("sscanf", "string_parsing"),
    ("scanf", "string_parsing"),
    ("sprintf", "string_parsing"),
    ("snprintf", "string_parsing"),
    ("vsnprintf", "string_parsing"),
    ("vsprintf", "string_parsing"),
    ("atoi", "string_parsing"),
    ("atol", "string_parsing"),
    ("atof", "string_parsing"),
    ("gets", "string_parsing"),
    ("regcomp", "string_parsing"),
    ("regexec", "string_parsing"),
    ("sqlite3_prepare*", "string_parsing"),
    ("sqlite3_exec", "string_parsing"),
    ("png_get*", "string_parsing"),
    ("png_read*", "string_parsing"),
    ("json_*", "string_parsing"),
    ("xml_*", "string_parsing"),
    ("inflate*", "string_parsing"),
    ("deflate*", "string_parsing"),
    # memory allocation / movement
    ("malloc", "memory_alloc"),
    ("calloc", "memory_alloc"),
    ("realloc*", "memory_alloc"),
    ("free", "memory_alloc"),
    ("alloca", "memory_alloc"),
    ("mem*", "memory_alloc"),
    ("bcopy", "memory_alloc"),
    ("bzero", "memory_alloc"),
    ("png_malloc", "memory_alloc"),
    ("av_malloc*", "memory_alloc"),
)

BUILTIN_API_TABLE = ApiCategoryTable(entries=_BUILTIN_ENTRIES, source="builtin")


def _pattern_matches(pattern: str, name: str) -> bool:
    if pattern.endswith("*"):
        return name.startswith(pattern[:-1])
    return name == pattern


def _pattern_specificity(pattern: str) -> int:
    # literal prefix length; exact patterns outrank globs of the same stem
    return len(pattern) if not pattern.endswith("*") else len(pattern) - 1


def categorize_api(name: str, table: ApiCategoryTable = BUILTIN_API_TABLE) -> str:
    """Categorize an API name; the longest-matching pattern wins."""
    best: tuple[int, int, str] | None = None
    for pattern, category in table.entries:
        if not _pattern_matches(pattern, name):
            continue
        exact = 0 if pattern.endswith("*") else 1
        key = (_pattern_specificity(pattern), exact, category)
        if best is None or key[:2] > best[:2]:
            best = key
    return best[2] if best is not None else "other"


def load_api_table(path: str | Path) -> ApiCategoryTable:
    """Load a user-supplied category table: JSON object of pattern -> category."""
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read API table {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ParseError(f"API table {path} must be a JSON object")
    return ApiCategoryTable(entries=tuple(sorted(raw.items())), source="user_supplied")


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ValidationError(message)


def load_manifest(path: str | Path, api_table: ApiCategoryTable = BUILTIN_API_TABLE) -> TargetManifest:
    """Load and validate a target manifest file.

    Raises ParseError for unreadable/malformed files and ValidationError for
    structural problems; both name the offending element.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ParseError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"manifest {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ParseError(f"manifest {path} must be a JSON object")

    for key in ("target_id", "functions", "call_graph", "cfg", "api_sites", "input_format"):
        _require(key in raw, f"manifest missing required key {key!r}")

    functions = tuple(FunctionDecl(function_id=f["id"]) for f in raw["functions"])
    _require(len(functions) > 0, "manifest declares no functions (no entry point)")
    fn_ids = [f.function_id for f in functions]
    _require(len(set(fn_ids)) == len(fn_ids), "duplicate function id in manifest")
    fn_set = set(fn_ids)

    entry = raw.get("entry_function", fn_ids[0])
    _require(entry in fn_set, f"entry_function {entry!r} is not a declared function")

    call_graph: dict[str, tuple[str, ...]] = {}
    for caller, callees in raw["call_graph"].items():
        _require(caller in fn_set, f"call_graph caller {caller!r} is not a declared function")
        for callee in callees:
            _require(callee in fn_set, f"call_graph edge {caller!r} -> {callee!r} targets undeclared function {callee!r}")
        call_graph[caller] = tuple(callees)

    cfg: dict[str, tuple[BasicBlock, ...]] = {}
    for fn, blocks_raw in raw["cfg"].items():
        _require(fn in fn_set, f"cfg entry for undeclared function {fn!r}")
        blocks = []
        for b in blocks_raw:
            facts = tuple(
                BlockFact(
                    param_index=int(f["param_index"]),
                    kind=f.get("kind", "unknown"),
                    detail=f.get("detail", ""),
                    api=f.get("api"),
                )
                for f in b.get("facts", ())
            )
            for f in facts:
                _require(f.kind in CONSTRAINT_KINDS, f"block {b['id']!r} fact has unknown kind {f.kind!r}")
                _require(f.param_index >= 0, f"block {b['id']!r} fact has negative param_index")
            blocks.append(BasicBlock(block_id=b["id"], successors=tuple(b.get("succ", ())), facts=facts))
        ids = [b.block_id for b in blocks]
        _require(len(set(ids)) == len(ids), f"duplicate block id in cfg of {fn!r}")
        id_set = set(ids)
        for b in blocks:
            for succ in b.successors:
                _require(
                    succ in id_set,
                    f"cfg of {fn!r}: block {b.block_id!r} has successor {succ!r} outside the function",
                )
        cfg[fn] = tuple(blocks)

    sites = []
    for s in raw["api_sites"]:
        fn = s["function"]
        _require(fn in fn_set, f"api_site references undeclared function {fn!r}")
        blocks = cfg.get(fn, ())
        block_ids = {b.block_id for b in blocks}
        _require(s["block"] in block_ids, f"api_site in {fn!r} references unknown block {s['block']!r}")
        category = s.get("category")
        if category is None:
            category = categorize_api(s["api"], api_table)
        _require(category in API_CATEGORIES, f"api_site {s['api']!r} has unknown category {category!r}")
        arity = int(s.get("arity", 1))
        _require(arity >= 1, f"api_site {s['api']!r} has non-positive arity")
        constraints = tuple(
            ParamConstraint(param_index=int(c["param_index"]), kind=c.get("kind", "unknown"), detail=c.get("detail", ""))
            for c in s.get("param_constraints", ())
        )
        for c in constraints:
            _require(c.param_index < arity, f"api_site {s['api']!r} constraint param {c.param_index} >= arity {arity}")
        sites.append(
            ApiCallSite(
                function_id=fn,
                block_id=s["block"],
                api_name=s["api"],
                category=category,
                arity=arity,
                param_constraints=constraints,
            )
        )

    regions = tuple(raw.get("regions", ()))

    return TargetManifest(
        target_id=raw["target_id"],
        functions=functions,
        call_graph=call_graph,
        cfg=cfg,
        api_sites=tuple(sites),
        input_format=raw["input_format"],
        entry_function=entry,
        regions=regions,
    )


def seed_id_for(seed: bytes) -> str:
    return hashlib.sha256(seed).hexdigest()[:16]


def annotate_seed(seed: bytes, entry_function: str, manifest: TargetManifest) -> SeedAnnotation:
    """Annotate a seed with the call-graph closure from its entry function."""
    if entry_function not in manifest.function_ids():
        raise UnknownFunction(f"entry function {entry_function!r} not declared in manifest")
    reachable: set[str] = set()
    frontier = [entry_function]
    while frontier:
        fn = frontier.pop()
        if fn in reachable:
            continue
        reachable.add(fn)
        frontier.extend(manifest.call_graph.get(fn, ()))
    categories = frozenset(
        site.category for site in manifest.api_sites if site.function_id in reachable
    )
    return SeedAnnotation(
        seed_id=seed_id_for(seed),
        reachable_functions=frozenset(reachable),
        touched_api_categories=categories,
    )


def _reaching_blocks(blocks: tuple[BasicBlock, ...], target_block: str) -> set[str]:
    """Blocks lying on some path from the function entry to ``target_block``.

    The first declared block is the function entry.  An unreachable target
    yields the empty set.
    """
    if not blocks:
        return set()
    succ = {b.block_id: b.successors for b in blocks}
    entry = blocks[0].block_id

    # forward reachability from entry
    fwd: set[str] = set()
    stack = [entry]
    while stack:
        b = stack.pop()
        if b in fwd:
            continue
        fwd.add(b)
        stack.extend(succ.get(b, ()))
    if target_block not in fwd:
        return set()

    # backward reachability from the target
    preds: dict[str, list[str]] = {}
    for b in blocks:
        for s in b.successors:
            preds.setdefault(s, []).append(b.block_id)
    bwd: set[str] = set()
    stack = [target_block]
    while stack:
        b = stack.pop()
        if b in bwd:
            continue
        bwd.add(b)
        stack.extend(preds.get(b, ()))
    return fwd & bwd


def backward_slice(site: ApiCallSite, manifest: TargetManifest) -> list[ParamConstraint]:
    """Collect declared facts reaching a call site, one constraint per parameter.

    Parameters with no reaching fact come back as ``unknown``.  When several
    facts reach the same parameter the winner is chosen by sorted
    (block_id, kind, detail) order so the result is deterministic.
    """
    if site not in manifest.api_sites:
        raise UnknownSite(f"site {site.api_name!r} in {site.function_id!r} does not belong to manifest")
    blocks = manifest.cfg.get(site.function_id, ())
    reaching = _reaching_blocks(blocks, site.block_id)

    candidates: dict[int, list[tuple[str, str, str]]] = {}
    for b in blocks:
        if b.block_id not in reaching:
            continue
        for fact in b.facts:
            if fact.api is not None and fact.api != site.api_name:
                continue
            if fact.param_index >= site.arity:
                continue
            candidates.setdefault(fact.param_index, []).append((b.block_id, fact.kind, fact.detail))

    constraints = []
    for idx in range(site.arity):
        if idx in candidates:
            _, kind, detail = min(candidates[idx])
            constraints.append(ParamConstraint(param_index=idx, kind=kind, detail=detail))
        else:
            constraints.append(ParamConstraint(param_index=idx, kind="unknown", detail=""))
    return constraints
