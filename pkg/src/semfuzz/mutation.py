"""Structured mutation: prompt construction, candidate generation, validation,
and repair.

The generation path is provider-agnostic: a remote model speaks the HTTP
contract in ``providers``, while ``GrammarMutator`` is a deterministic offline
stand-in that mutates a lenient parse of the seed and re-serializes it, so its
output is grammatical by construction.  The repair sanitizer reuses the same
lenient parse + serialize round trip, which is what makes the
``validate(repair(x))`` invariant hold without per-rule patching.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace
from pathlib import Path

from semfuzz.errors import (
    EmptyWindow,
    ParseError,
    ProviderError,
    UnknownFormat,
    ValidationError,
)
from semfuzz.target_model import ParamConstraint, TargetManifest, backward_slice

FORMATS = ("chunked-binary", "line-protocol", "query-text", "raw-bytes")

ORIGINS = ("provider", "repaired_provider", "repaired_rule", "grammar_fallback")

DEFAULT_TEMPERATURE = 0.8
DEFAULT_K = 5

EXCERPT_CAP_BYTES = 512
MAX_EXCERPTS = 3
MAX_CHAIN_LEN = 12

# ops applied per mutation: mostly one, occasionally stacked deeper
STACK_PROBS = (0.985, 0.012, 0.003)

_ARG_TYPES = {
    "chunked-binary": ("bytes",),
    "line-protocol": ("string",),
    "query-text": ("string",),
    "raw-bytes": ("bytes",),
}

# rotation of mutation goals per format; campaigns cycle through these
OBJECTIVES = {
    "chunked-binary": (
        "increase buffer length by 20%",
        "set length fields to boundary values",
        "reorder the chunks while keeping the header first",
        "append a rarely used chunk type",
    ),
    "line-protocol": (
        "introduce uncommon delimiter",
        "increase string length by 20%",
        "set numeric fields to boundary values",
        "reorder the lines and combine protocols",
    ),
    "query-text": (
        "combine clauses that rarely appear together",
        "set numeric values to boundary values",
        "reorder query clauses",
        "increase string length by 20%",
    ),
    "raw-bytes": (
        "increase buffer length by 20%",
        "set bytes to boundary values",
        "reorder byte blocks",
        "introduce uncommon delimiter",
    ),
}


def objective_for(input_format: str, iteration: int) -> str:
    if input_format not in OBJECTIVES:
        raise UnknownFormat(f"no objectives for format {input_format!r}")
    cycle = OBJECTIVES[input_format]
    return cycle[iteration % len(cycle)]


# --------------------------------------------------------------------------
# domain types
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MutationContext:
    function_chain: tuple[str, ...]
    arg_types: tuple[str, ...]
    observed_examples: tuple[bytes, ...]
    param_constraints: tuple[ParamConstraint, ...]
    input_format: str

    def __post_init__(self):
        if not self.function_chain:
            raise ValidationError("mutation context requires a non-empty function chain")
        if len(self.observed_examples) > MAX_EXCERPTS:
            raise ValidationError(f"at most {MAX_EXCERPTS} observed examples allowed")
        for ex in self.observed_examples:
            if len(ex) > EXCERPT_CAP_BYTES:
                raise ValidationError("observed example exceeds excerpt cap")


@dataclass(frozen=True)
class MutationPrompt:
    context_section: str
    objective_section: str
    grammar_section: str
    rendered: str


@dataclass(frozen=True)
class GenerationRequest:
    prompt: MutationPrompt
    temperature: float = DEFAULT_TEMPERATURE
    k: int = DEFAULT_K

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError(f"candidate count k must be >= 1, got {self.k}")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValidationError(f"temperature must be in [0, 2], got {self.temperature}")


@dataclass
class CandidateInput:
    data: bytes
    origin: str
    valid: bool = False

    def __post_init__(self):
        if self.origin not in ORIGINS:
            raise ValidationError(f"unknown candidate origin {self.origin!r}")


@dataclass(frozen=True)
class FormatSchema:
    format_id: str
    rules: dict

    def __post_init__(self):
        if self.format_id not in FORMATS:
            raise UnknownFormat(f"unknown input format {self.format_id!r}")


def load_schema(path: str | Path) -> FormatSchema:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read schema {path}: {exc}") from exc
    if not isinstance(raw, dict) or "format" not in raw:
        raise ParseError(f"schema {path} must be a JSON object with a 'format' key")
    return FormatSchema(format_id=raw["format"], rules=raw)


# --------------------------------------------------------------------------
# context and prompt construction
# --------------------------------------------------------------------------


def _static_chain(manifest: TargetManifest) -> tuple[str, ...]:
    """Reachable functions in breadth-first call-graph order from the entry."""
    chain = []
    frontier = [manifest.entry_function]
    seen = set()
    while frontier:
        fn = frontier.pop(0)
        if fn in seen:
            continue
        seen.add(fn)
        chain.append(fn)
        frontier.extend(manifest.call_graph.get(fn, ()))
    return tuple(chain[:MAX_CHAIN_LEN])


def _sliced_constraints(manifest: TargetManifest) -> tuple[ParamConstraint, ...]:
    out = []
    for site in manifest.api_sites:
        for c in backward_slice(site, manifest):
            if c.kind != "unknown":
                out.append((site.api_name, c))
    out.sort(key=lambda pair: (pair[0], pair[1].param_index))
    return tuple(c for _, c in out[:8])


def build_context(seed, annotation, record, manifest: TargetManifest) -> MutationContext:
    """Assemble the execution context for one seed.

    ``seed`` may be a queue entry or raw bytes.  A dynamically observed call
    sequence wins over the static call-graph order; without a record the
    static order is used and no output excerpt is available.
    """
    seed_bytes = seed if isinstance(seed, (bytes, bytearray)) else seed.data
    seed_bytes = bytes(seed_bytes)

    chain: tuple[str, ...] = ()
    if record is not None and record.call_sequence:
        deduped = []
        for fn in record.call_sequence:
            if fn not in deduped:
                deduped.append(fn)
        chain = tuple(deduped[:MAX_CHAIN_LEN])
    if not chain:
        chain = _static_chain(manifest)

    examples = [seed_bytes[:EXCERPT_CAP_BYTES]]
    if record is not None and record.raw_signals.output_bytes:
        examples.append(record.raw_signals.output_bytes[:EXCERPT_CAP_BYTES])

    constraints = _sliced_constraints(manifest)
    return MutationContext(
        function_chain=chain,
        arg_types=_ARG_TYPES.get(manifest.input_format, ("bytes",)),
        observed_examples=tuple(examples[:MAX_EXCERPTS]),
        param_constraints=constraints,
        input_format=manifest.input_format,
    )


def _render_excerpt(data: bytes) -> str:
    chars = []
    for b in data:
        if 32 <= b < 127 and b != 34:
            chars.append(chr(b))
        elif b == 10:
            chars.append("\\n")
        else:
            chars.append(f"\\x{b:02x}")
    return '"' + "".join(chars) + '"'


def _grammar_rules_text(input_format: str) -> list[str]:
    if input_format == "chunked-binary":
        return ["Each chunk is a 4-byte type, a 2-byte big-endian length, and a payload."]
    if input_format == "line-protocol":
        return ["Each line is a protocol keyword followed by semicolon-separated key=value fields."]
    if input_format == "query-text":
        return ["A query is a verb, a table, and optional WHERE/AND/ORDER/GROUP/LIMIT clauses."]
    return []


def build_prompt(ctx: MutationContext, objective: str) -> MutationPrompt:
    """Render the fixed three-section prompt: context, objective, grammar.

    The layout is byte-stable for fixed inputs and the objective text appears
    verbatim, so distinct objectives always yield distinct prompts.
    """
    if not objective:
        raise ValidationError("mutation objective must be non-empty")

    context_lines = [
        "Given the following parser context:",
        f"Function chain: {' -> '.join(ctx.function_chain)}",
        f"Argument types: {', '.join(ctx.arg_types)}",
    ]
    if ctx.observed_examples:
        context_lines.append(f"Observed inputs: {_render_excerpt(ctx.observed_examples[0])}")
        for ex in ctx.observed_examples[1:]:
            context_lines.append(f"                 {_render_excerpt(ex)}")
    else:
        context_lines.append("Observed inputs: (none)")
    context_section = "\n".join(context_lines)

    objective_section = f"Goal: {objective}"

    grammar_lines = _grammar_rules_text(ctx.input_format)
    for c in ctx.param_constraints:
        grammar_lines.append(f"Constraint: parameter {c.param_index} {c.kind} {c.detail}".rstrip())
    grammar_lines.append(f"Follow the {ctx.input_format} syntax strictly.")
    grammar_section = "\n".join(grammar_lines)

    rendered = f"{context_section}\n{objective_section}\n{grammar_section}\n"
    return MutationPrompt(
        context_section=context_section,
        objective_section=objective_section,
        grammar_section=grammar_section,
        rendered=rendered,
    )


def generate(req: GenerationRequest, provider, seed: bytes = b"", fallback=None) -> list[CandidateInput]:
    """Produce up to k candidates from a provider.

    On ProviderError the fallback (if any) takes over; candidates then carry
    its origin.  Without a fallback the error propagates so the caller can
    handle the degradation itself.
    """
    try:
        raw = provider.generate(req, seed)
        origin = provider.origin
    except ProviderError:
        if fallback is None:
            raise
        raw = fallback.generate(req, seed)
        origin = fallback.origin
    return [CandidateInput(data=bytes(b), origin=origin) for b in raw[: req.k]]


# --------------------------------------------------------------------------
# validation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    rule: str
    offset: int
    note: str = ""


def _is_ascii_int(text: str, signed: bool = False) -> bool:
    # str.isdigit accepts superscripts and other Unicode digits that int()
    # rejects, so numeric checks stay ASCII-only
    if signed and text.startswith("-"):
        text = text[1:]
    return bool(text) and all(c in "0123456789" for c in text)


def _validate_chunked(data: bytes, rules: dict) -> list[Violation]:
    violations = []
    magic = bytes.fromhex(rules["magic_hex"])
    if data[: len(magic)] != magic:
        violations.append(Violation("bad_magic", 0, f"expected {magic!r}"))
        return violations
    type_size = rules.get("type_size", 4)
    length_size = rules.get("length_size", 2)
    max_payload = rules.get("max_payload", 65535)
    max_chunks = rules.get("max_chunks", 512)
    pos = len(magic)
    chunks = 0
    while pos < len(data):
        header_end = pos + type_size + length_size
        if header_end > len(data):
            violations.append(Violation("truncated_header", pos))
            break
        declared = int.from_bytes(data[pos + type_size : header_end], rules.get("endian", "big"))
        if declared > max_payload:
            violations.append(Violation("oversized_payload", pos + type_size, f"declared {declared}"))
            break
        if header_end + declared > len(data):
            violations.append(
                Violation("length_overrun", pos + type_size, f"declared {declared}, {len(data) - header_end} remain")
            )
            break
        pos = header_end + declared
        chunks += 1
        if chunks > max_chunks:
            violations.append(Violation("too_many_chunks", pos))
            break
    return violations


def _validate_lines(data: bytes, rules: dict) -> list[Violation]:
    violations = []
    text = data.decode("latin-1")
    protocols = set(rules["protocols"])
    numeric = set(rules.get("numeric_fields", ()))
    hexfields = set(rules.get("hex_fields", ()))
    flag_chars = set(rules.get("flag_chars", ""))
    max_value = rules.get("max_value", 65535)

    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        return [Violation("empty_input", 0, "at least one line required")]
    if len(lines) > rules.get("max_lines", 64):
        return [Violation("too_many_lines", 0)]

    offset = 0
    for raw_line in text.splitlines():
        line = raw_line.strip()
        if line:
            proto, _, body = line.partition(" ")
            if proto.upper() not in protocols:
                violations.append(Violation("unknown_protocol", offset, proto))
            for part in body.split(rules.get("field_sep", ";")):
                if not part or "=" not in part:
                    continue
                key, _, value = part.partition("=")
                key = key.strip()
                if not key.isalnum():
                    violations.append(Violation("bad_field_key", offset, key))
                elif key in numeric:
                    if not _is_ascii_int(value.strip()):
                        violations.append(Violation("bad_numeric_value", offset, f"{key}={value}"))
                    elif int(value.strip()) > max_value:
                        violations.append(Violation("value_out_of_range", offset, f"{key}={value}"))
                elif key in hexfields:
                    v = value.strip()
                    ok = len(v) % 2 == 0 and all(c in "0123456789abcdefABCDEF" for c in v)
                    if not ok:
                        violations.append(Violation("bad_hex_value", offset, f"{key}={value}"))
                elif key == "flags" and not set(value.strip()) <= flag_chars:
                    violations.append(Violation("bad_flag_char", offset, value))
        offset += len(raw_line) + 1
    return violations


def _validate_query(data: bytes, rules: dict) -> list[Violation]:
    text = data.decode("latin-1", errors="replace")
    tokens = text.split()
    offsets = []
    cursor = 0
    for tok in tokens:
        at = text.find(tok, cursor)
        offsets.append(at)
        cursor = at + len(tok)

    verbs = set(rules["verbs"])
    tables = rules["tables"]
    ops = set(rules["ops"])
    dirs = set(rules["dirs"])
    max_value = rules.get("max_value", 10**6)

    if not tokens:
        return [Violation("missing_verb", 0)]
    if tokens[0].upper() not in verbs:
        return [Violation("bad_verb", offsets[0], tokens[0])]
    if len(tokens) < 2 or tokens[1].lower() not in tables:
        at = offsets[1] if len(tokens) > 1 else len(text)
        return [Violation("bad_table", at, tokens[1] if len(tokens) > 1 else "")]

    columns = set(tables[tokens[1].lower()])
    violations = []
    have_cond = False
    i = 2

    def cond_at(j: int) -> int:
        violating = []
        if j + 2 >= len(tokens):
            violating.append(Violation("incomplete_condition", offsets[j - 1]))
            return len(tokens)
        if tokens[j].lower() not in columns:
            violating.append(Violation("bad_column", offsets[j], tokens[j]))
        if tokens[j + 1] not in ops:
            violating.append(Violation("bad_operator", offsets[j + 1], tokens[j + 1]))
        raw = tokens[j + 2]
        if not _is_ascii_int(raw, signed=True):
            violating.append(Violation("bad_number", offsets[j + 2], raw))
        elif abs(int(raw)) > max_value:
            violating.append(Violation("value_out_of_range", offsets[j + 2], raw))
        violations.extend(violating)
        return j + 3

    while i < len(tokens):
        word = tokens[i].upper()
        if word == "WHERE" and not have_cond:
            have_cond = True
            i = cond_at(i + 1)
        elif word == "AND" and have_cond:
            i = cond_at(i + 1)
        elif word in ("ORDER", "GROUP"):
            if i + 1 >= len(tokens):
                violations.append(Violation("missing_column", offsets[i], word))
                break
            if tokens[i + 1].lower() not in columns:
                violations.append(Violation("bad_column", offsets[i + 1], tokens[i + 1]))
            i += 2
            if word == "ORDER" and i < len(tokens) and tokens[i].upper() in dirs:
                i += 1
        elif word == "LIMIT":
            if i + 1 >= len(tokens):
                violations.append(Violation("missing_limit_value", offsets[i]))
                break
            if not _is_ascii_int(tokens[i + 1]):
                violations.append(Violation("bad_limit", offsets[i + 1], tokens[i + 1]))
            i += 2
        else:
            violations.append(Violation("bad_clause", offsets[i], tokens[i]))
            break
    return violations


def validate(data: bytes, schema: FormatSchema) -> list[Violation]:
    """Check one input against its format schema; empty list means valid.

    Violations are deterministic and carry the rule name plus the byte offset
    of the offending element.
    """
    if schema.format_id == "chunked-binary":
        return _validate_chunked(data, schema.rules)
    if schema.format_id == "line-protocol":
        return _validate_lines(data, schema.rules)
    if schema.format_id == "query-text":
        return _validate_query(data, schema.rules)
    if schema.format_id == "raw-bytes":
        return []
    raise UnknownFormat(f"no validator for format {schema.format_id!r}")


# --------------------------------------------------------------------------
# lenient structural models (shared by sanitizer and grammar mutator)
# --------------------------------------------------------------------------


def _parse_chunks_lenient(data: bytes, rules: dict) -> list[tuple[bytes, bytes]]:
    """Best-effort chunk list; fixes lengths by clamping and drops scraps."""
    type_size = rules.get("type_size", 4)
    length_size = rules.get("length_size", 2)
    max_payload = rules.get("max_payload", 65535)
    magic = bytes.fromhex(rules["magic_hex"])
    pos = len(magic) if data[: len(magic)] == magic else 0
    chunks = []
    while pos + type_size + length_size <= len(data) and len(chunks) < rules.get("max_chunks", 512):
        ctype = data[pos : pos + type_size]
        declared = int.from_bytes(data[pos + type_size : pos + type_size + length_size], rules.get("endian", "big"))
        start = pos + type_size + length_size
        take = min(declared, len(data) - start, max_payload)
        chunks.append((ctype, data[start : start + take]))
        pos = start + take
    return chunks


def _serialize_chunks(chunks: list[tuple[bytes, bytes]], rules: dict) -> bytes:
    type_size = rules.get("type_size", 4)
    length_size = rules.get("length_size", 2)
    max_payload = rules.get("max_payload", 65535)
    out = [bytes.fromhex(rules["magic_hex"])]
    for ctype, payload in chunks[: rules.get("max_chunks", 512)]:
        payload = payload[:max_payload]
        out.append(ctype[:type_size].ljust(type_size, b"X"))
        out.append(len(payload).to_bytes(length_size, rules.get("endian", "big")))
        out.append(payload)
    return b"".join(out)


def _parse_lines_lenient(data: bytes, rules: dict) -> list[tuple[str, list[tuple[str, str]]]]:
    protocols = rules["protocols"]
    numeric = set(rules.get("numeric_fields", ()))
    hexfields = set(rules.get("hex_fields", ()))
    flag_chars = rules.get("flag_chars", "")
    max_value = rules.get("max_value", 65535)
    lines = []
    for raw_line in data.decode("latin-1").splitlines():
        line = raw_line.strip()
        if not line:
            continue
        proto, _, body = line.partition(" ")
        proto = proto.upper()
        if proto not in protocols:
            proto = protocols[0]
        fields = []
        for part in body.split(rules.get("field_sep", ";")):
            if not part or "=" not in part:
                continue
            key, _, value = part.partition("=")
            key, value = key.strip(), value.strip()
            if not key.isalnum():
                continue
            if key in numeric:
                digits = "".join(c for c in value if c in "0123456789") or "0"
                value = str(min(int(digits), max_value))
            elif key in hexfields:
                kept = "".join(c for c in value.lower() if c in "0123456789abcdef")
                value = kept[: len(kept) - len(kept) % 2]
            elif key == "flags":
                value = "".join(c for c in value if c in flag_chars)
            fields.append((key, value))
        lines.append((proto, fields))
    return lines[: rules.get("max_lines", 64)]


def _serialize_lines(lines: list[tuple[str, list[tuple[str, str]]]], rules: dict) -> bytes:
    if not lines:
        lines = [(rules["protocols"][0], [("len", "0")])]
    sep = rules.get("field_sep", ";")
    rendered = []
    for proto, fields in lines[: rules.get("max_lines", 64)]:
        body = sep.join(f"{k}={v}" for k, v in fields)
        rendered.append(f"{proto} {body}".rstrip())
    return ("\n".join(rendered) + "\n").encode()


def _parse_query_lenient(data: bytes, rules: dict) -> dict:
    tokens = data.decode("latin-1", errors="replace").split()
    tables = rules["tables"]
    verb = tokens[0].upper() if tokens and tokens[0].upper() in rules["verbs"] else rules["verbs"][0]
    table = (
        tokens[1].lower()
        if len(tokens) > 1 and tokens[1].lower() in tables
        else sorted(tables)[0]
    )
    columns = set(tables[table])
    max_value = rules.get("max_value", 10**6)

    query = {"verb": verb, "table": table, "conds": [], "order": None, "dir": "", "group": None, "limit": None}
    i = 2
    while i < len(tokens):
        word = tokens[i].upper()
        if word in ("WHERE", "AND"):
            if i + 2 < len(tokens):
                col, op, raw = tokens[i + 1].lower(), tokens[i + 2], tokens[i + 3] if i + 3 < len(tokens) else "1"
                if col in columns and op in rules["ops"]:
                    digits = "".join(c for c in raw if c in "-0123456789") or "1"
                    try:
                        value = max(min(int(digits), max_value), -max_value)
                    except ValueError:
                        value = 1
                    query["conds"].append([col, op, value])
            i += 4
        elif word == "ORDER" and i + 1 < len(tokens):
            col = tokens[i + 1].lower()
            if col in columns:
                query["order"] = col
            i += 2
            if i < len(tokens) and tokens[i].upper() in rules["dirs"]:
                query["dir"] = tokens[i].upper()
                i += 1
        elif word == "GROUP" and i + 1 < len(tokens):
            col = tokens[i + 1].lower()
            if col in columns:
                query["group"] = col
            i += 2
        elif word == "LIMIT" and i + 1 < len(tokens):
            if _is_ascii_int(tokens[i + 1]):
                query["limit"] = min(int(tokens[i + 1]), max_value)
            i += 2
        else:
            i += 1
    return query


def _serialize_query(query: dict) -> bytes:
    parts = [query["verb"], query["table"]]
    for idx, (col, op, value) in enumerate(query["conds"]):
        parts.extend(["WHERE" if idx == 0 else "AND", col, op, str(value)])
    if query["order"]:
        parts.extend(["ORDER", query["order"]])
        if query["dir"]:
            parts.append(query["dir"])
    if query["group"]:
        parts.extend(["GROUP", query["group"]])
    if query["limit"] is not None:
        parts.extend(["LIMIT", str(query["limit"])])
    return " ".join(parts).encode()


def _recognizable(data: bytes, schema: FormatSchema) -> bool:
    """Whether the sanitizer has any structure to anchor on.

    Without an anchor (intact magic, a known protocol keyword, a known query
    keyword) the sanitizer would have to invent content from nothing, so such
    candidates go to the drop path instead.
    """
    rules = schema.rules
    if schema.format_id == "chunked-binary":
        magic = bytes.fromhex(rules["magic_hex"])
        return data[: len(magic)] == magic
    if schema.format_id == "line-protocol":
        protocols = set(rules["protocols"])
        for line in data.decode("latin-1").splitlines():
            if line.strip().partition(" ")[0].upper() in protocols:
                return True
        return False
    if schema.format_id == "query-text":
        keywords = {v.upper() for v in rules["verbs"]}
        keywords |= {c.upper() for c in rules.get("clauses", ())}
        keywords |= {t.upper() for t in rules["tables"]}
        return any(tok.upper() in keywords for tok in data.decode("latin-1", errors="replace").split())
    return True


def _sanitize(data: bytes, schema: FormatSchema) -> bytes:
    if schema.format_id == "chunked-binary":
        return _serialize_chunks(_parse_chunks_lenient(data, schema.rules), schema.rules)
    if schema.format_id == "line-protocol":
        return _serialize_lines(_parse_lines_lenient(data, schema.rules), schema.rules)
    if schema.format_id == "query-text":
        return _serialize_query(_parse_query_lenient(data, schema.rules))
    return data


def repair(candidate: CandidateInput, violations: list[Violation], schema: FormatSchema, provider=None) -> CandidateInput:
    """One repair round: rule sanitizer, then at most one provider call.

    The result is either marked valid (and guaranteed to re-validate) or
    returned invalid for the caller to drop.  Repair failure is a value, not
    an error.
    """
    if candidate.valid:
        raise ValidationError("repair requires an invalid candidate")

    if _recognizable(candidate.data, schema):
        fixed = _sanitize(candidate.data, schema)
        if not validate(fixed, schema):
            return CandidateInput(data=fixed, origin="repaired_rule", valid=True)

    if provider is not None:
        summary = "; ".join(f"{v.rule}@{v.offset}" for v in violations[:4]) or "unspecified"
        ctx = MutationContext(
            function_chain=("schema_validator",),
            arg_types=_ARG_TYPES.get(schema.format_id, ("bytes",)),
            observed_examples=(candidate.data[:EXCERPT_CAP_BYTES],),
            param_constraints=(),
            input_format=schema.format_id,
        )
        prompt = build_prompt(ctx, f"repair the input so it passes validation ({summary})")
        req = GenerationRequest(prompt=prompt, temperature=0.2, k=1)
        try:
            raw = provider.generate(req, candidate.data)
        except ProviderError:
            raw = []
        if raw and not validate(bytes(raw[0]), schema):
            return CandidateInput(data=bytes(raw[0]), origin="repaired_provider", valid=True)

    return replace(candidate, valid=False)


def valid_input_rate(window) -> float:
    candidates = list(window)
    if not candidates:
        raise EmptyWindow("valid-input rate needs at least one generated candidate")
    return sum(1 for c in candidates if c.valid) / len(candidates)


# --------------------------------------------------------------------------
# deterministic grammar fallback
# --------------------------------------------------------------------------

_CHUNK_BOUNDARY_SIZES = (0, 1, 16, 255, 256, 511, 512, 513, 600)
_HEAD_BOUNDARY_VALUES = (0, 1, 2, 8, 255, 4096, 65535)
_LINE_BOUNDARY_VALUES = (0, 1, 8, 40, 255, 1500, 4095)
_QUERY_BOUNDARY_VALUES = (0, 1, 3, 10, 50, 120, 200)
_OPT_HEX_POOL = ("01", "0101", "0204ffff", "020a11223344556677889900", "0210")


class GrammarMutator:
    """Schema-aware offline mutator with a provider-compatible interface.

    Mutations parse the seed leniently, edit the structure, and re-serialize,
    so output stays grammatical even when seeds are not.  A fixed RNG seed
    reproduces the full candidate stream.
    """

    origin = "grammar_fallback"

    def __init__(self, schema: FormatSchema, seed: int = 0):
        self.schema = schema
        self._rng = random.Random(seed)

    # -- provider protocol ---------------------------------------------------

    def generate(self, req: GenerationRequest, seed: bytes) -> list[bytes]:
        objective = req.prompt.objective_section if req.prompt is not None else ""
        return [self.mutate(seed, objective) for _ in range(req.k)]

    # -- public single-mutation entry ----------------------------------------

    def mutate(self, seed: bytes, objective: str = "") -> bytes:
        n_ops = self._rng.choices((1, 2, 3), weights=STACK_PROBS)[0]
        data = seed
        for _ in range(n_ops):
            data = self._apply_one(data, objective.lower())
        return data

    def _apply_one(self, data: bytes, objective: str) -> bytes:
        fmt = self.schema.format_id
        if fmt == "chunked-binary":
            return self._mutate_chunked(data, objective)
        if fmt == "line-protocol":
            return self._mutate_lines(data, objective)
        if fmt == "query-text":
            return self._mutate_query(data, objective)
        return self._mutate_raw(data, objective)

    def _weighted_op(self, ops: list[tuple[str, float]], objective: str, bias: dict[str, tuple[str, ...]]) -> str:
        weights = []
        boosted: tuple[str, ...] = ()
        for keyword, op_names in bias.items():
            if keyword in objective:
                boosted = boosted + op_names
        for name, w in ops:
            weights.append(w * 2.0 if name in boosted else w)
        return self._rng.choices([name for name, _ in ops], weights=weights)[0]

    # -- chunked binary ------------------------------------------------------

    def _mutate_chunked(self, data: bytes, objective: str) -> bytes:
        rules = self.schema.rules
        rng = self._rng
        chunks = _parse_chunks_lenient(data, rules)
        ops = [
            ("grow_payload", 2.0),
            ("boundary_size", 1.5),
            ("new_chunk", 2.0),
            ("set_head_fields", 1.5),
            ("change_type", 1.0),
            ("duplicate_chunk", 1.0),
            ("drop_chunk", 1.0),
            ("reorder_chunks", 1.0),
            ("byte_noise", 1.5),
        ]
        bias = {
            "length": ("grow_payload", "boundary_size"),
            "boundary": ("boundary_size", "set_head_fields"),
            "reorder": ("reorder_chunks", "duplicate_chunk"),
            "rarely": ("new_chunk", "change_type"),
            "chunk type": ("new_chunk", "change_type"),
        }
        op = self._weighted_op(ops, objective, bias)
        types = [t.encode() for t in rules["chunk_types"]]

        def pick(idx_ok=None):
            pool = [i for i in range(len(chunks)) if idx_ok is None or idx_ok(chunks[i])]
            return rng.choice(pool) if pool else None

        if op == "grow_payload" and chunks:
            i = pick()
            ctype, payload = chunks[i]
            extra = max(1, len(payload) // 5)
            chunks[i] = (ctype, (payload + bytes([rng.randrange(256)]) * extra)[: rules.get("max_payload", 65535)])
        elif op == "boundary_size" and chunks:
            i = pick()
            ctype, payload = chunks[i]
            size = rng.choice(_CHUNK_BOUNDARY_SIZES)
            filler = payload or b"\x00"
            chunks[i] = (ctype, (filler * (size // len(filler) + 1))[:size])
        elif op == "new_chunk":
            ctype = rng.choice(types)
            if ctype == b"HEAD":
                w, h = rng.choice(_HEAD_BOUNDARY_VALUES), rng.choice(_HEAD_BOUNDARY_VALUES)
                payload = w.to_bytes(2, "big") + h.to_bytes(2, "big")
            elif ctype == b"PALT":
                payload = bytes(rng.randrange(256) for _ in range(3 * rng.randint(1, 4)))
            else:
                payload = bytes(rng.randrange(256) for _ in range(rng.randint(0, 12)))
            chunks.insert(rng.randint(0, len(chunks)), (ctype, payload))
        elif op == "set_head_fields":
            i = pick(lambda c: c[0] == b"HEAD")
            if i is None:
                w, h = rng.choice(_HEAD_BOUNDARY_VALUES), rng.choice(_HEAD_BOUNDARY_VALUES)
                chunks.insert(0, (b"HEAD", w.to_bytes(2, "big") + h.to_bytes(2, "big")))
            else:
                w, h = rng.choice(_HEAD_BOUNDARY_VALUES), rng.choice(_HEAD_BOUNDARY_VALUES)
                chunks[i] = (b"HEAD", w.to_bytes(2, "big") + h.to_bytes(2, "big"))
        elif op == "change_type" and chunks:
            i = pick()
            chunks[i] = (rng.choice(types), chunks[i][1])
        elif op == "duplicate_chunk" and chunks:
            i = pick()
            chunks.insert(i, chunks[i])
        elif op == "drop_chunk" and len(chunks) > 1:
            chunks.pop(pick())
        elif op == "reorder_chunks" and len(chunks) > 1:
            rng.shuffle(chunks)
        elif op == "byte_noise" and chunks:
            i = pick(lambda c: len(c[1]) > 0)
            if i is not None:
                ctype, payload = chunks[i]
                mutable = bytearray(payload)
                for _ in range(rng.randint(1, 3)):
                    mutable[rng.randrange(len(mutable))] = rng.randrange(256)
                chunks[i] = (ctype, bytes(mutable))
        return _serialize_chunks(chunks, rules)

    # -- line protocol -------------------------------------------------------

    def _random_fields(self, proto: str) -> list[tuple[str, str]]:
        rules = self.schema.rules
        rng = self._rng
        known = rules["fields"].get(proto, ["len"])
        fields = []
        for key in rng.sample(known, rng.randint(1, min(2, len(known)))):
            if key == "flags":
                count = rng.randint(1, 2)
                fields.append((key, "".join(rng.sample(rules.get("flag_chars", "S"), count))))
            elif key in rules.get("hex_fields", ()):
                fields.append((key, rng.choice(_OPT_HEX_POOL)))
            else:
                fields.append((key, str(rng.choice(_LINE_BOUNDARY_VALUES))))
        return fields

    def _mutate_lines(self, data: bytes, objective: str) -> bytes:
        rules = self.schema.rules
        rng = self._rng
        lines = _parse_lines_lenient(data, rules)
        ops = [
            ("add_line", 2.0),
            ("drop_line", 1.0),
            ("duplicate_line", 1.0),
            ("reorder_lines", 1.0),
            ("change_proto", 1.5),
            ("add_field", 1.5),
            ("drop_field", 1.0),
            ("change_value", 2.0),
            ("change_flags", 1.5),
            ("pad_delimiters", 1.0),
        ]
        bias = {
            "delimiter": ("pad_delimiters", "add_field"),
            "length": ("add_line", "duplicate_line"),
            "boundary": ("change_value",),
            "reorder": ("reorder_lines", "change_proto"),
            "combine": ("add_line", "change_proto"),
        }
        op = self._weighted_op(ops, objective, bias)
        protocols = rules["protocols"]

        if op == "add_line" or not lines:
            proto = rng.choice(protocols)
            lines.insert(rng.randint(0, len(lines)), (proto, self._random_fields(proto)))
        elif op == "drop_line" and len(lines) > 1:
            lines.pop(rng.randrange(len(lines)))
        elif op == "duplicate_line":
            i = rng.randrange(len(lines))
            lines.insert(i, lines[i])
        elif op == "reorder_lines" and len(lines) > 1:
            rng.shuffle(lines)
        elif op == "change_proto":
            i = rng.randrange(len(lines))
            lines[i] = (rng.choice(protocols), lines[i][1])
        elif op == "add_field":
            i = rng.randrange(len(lines))
            proto, fields = lines[i]
            lines[i] = (proto, fields + self._random_fields(proto))
        elif op == "drop_field":
            i = rng.randrange(len(lines))
            proto, fields = lines[i]
            if fields:
                fields = list(fields)
                fields.pop(rng.randrange(len(fields)))
                lines[i] = (proto, fields)
        elif op == "change_value":
            i = rng.randrange(len(lines))
            proto, fields = lines[i]
            if fields:
                j = rng.randrange(len(fields))
                key, value = fields[j]
                if key in rules.get("hex_fields", ()):
                    value = rng.choice(_OPT_HEX_POOL)
                elif key == "flags":
                    value = "".join(rng.sample(rules.get("flag_chars", "S"), rng.randint(1, 2)))
                else:
                    value = str(rng.choice(_LINE_BOUNDARY_VALUES))
                fields = list(fields)
                fields[j] = (key, value)
                lines[i] = (proto, fields)
        elif op == "change_flags":
            i = rng.randrange(len(lines))
            proto, fields = lines[i]
            flags = "".join(rng.sample(rules.get("flag_chars", "S"), rng.randint(1, 2)))
            fields = [(k, v) for k, v in fields if k != "flags"] + [("flags", flags)]
            lines[i] = (proto, fields)
        elif op == "pad_delimiters":
            # extra separators read back as empty fields; still grammatical
            i = rng.randrange(len(lines))
            proto, fields = lines[i]
            lines[i] = (proto, fields + [("pad", "")])
        return _serialize_lines(lines, rules)

    # -- query text ----------------------------------------------------------

    def _mutate_query(self, data: bytes, objective: str) -> bytes:
        rules = self.schema.rules
        rng = self._rng
        query = _parse_query_lenient(data, rules)
        columns = rules["tables"][query["table"]]
        ops = [
            ("add_cond", 1.2),
            ("drop_cond", 1.0),
            ("change_value", 1.5),
            ("change_op", 1.2),
            ("change_col", 1.2),
            ("change_verb", 1.2),
            ("change_table", 1.0),
            ("add_order", 1.0),
            ("drop_order", 0.75),
            ("flip_dir", 1.0),
            ("add_group", 1.0),
            ("drop_group", 0.75),
            ("add_limit", 1.0),
            ("drop_limit", 0.75),
            ("reorder_clauses", 1.0),
        ]
        bias = {
            "combine": ("add_cond", "add_order", "add_group", "add_limit"),
            "rarely": ("add_cond", "add_order", "add_group", "add_limit"),
            "boundary": ("change_value", "add_limit"),
            "reorder": ("reorder_clauses", "change_col"),
            "length": ("add_cond", "change_value"),
        }
        op = self._weighted_op(ops, objective, bias)

        if op == "add_cond" and len(query["conds"]) < 4:
            query["conds"].append(
                [rng.choice(columns), rng.choice(rules["ops"]), rng.choice(_QUERY_BOUNDARY_VALUES)]
            )
        elif op == "drop_cond" and query["conds"]:
            query["conds"].pop(rng.randrange(len(query["conds"])))
        elif op == "change_value" and query["conds"]:
            cond = rng.choice(query["conds"])
            cond[2] = rng.choice(_QUERY_BOUNDARY_VALUES)
        elif op == "change_op" and query["conds"]:
            cond = rng.choice(query["conds"])
            cond[1] = rng.choice(rules["ops"])
        elif op == "change_col" and query["conds"]:
            cond = rng.choice(query["conds"])
            cond[0] = rng.choice(columns)
        elif op == "change_verb":
            query["verb"] = rng.choice(rules["verbs"])
        elif op == "change_table":
            old_cols = rules["tables"][query["table"]]
            new_table = rng.choice(sorted(rules["tables"]))
            new_cols = rules["tables"][new_table]
            remap = dict(zip(old_cols, new_cols))
            query["table"] = new_table
            for cond in query["conds"]:
                cond[0] = remap.get(cond[0], new_cols[0])
            if query["order"]:
                query["order"] = remap.get(query["order"], new_cols[0])
            if query["group"]:
                query["group"] = remap.get(query["group"], new_cols[0])
        elif op == "add_order":
            query["order"] = rng.choice(columns)
            query["dir"] = rng.choice(["", *rules["dirs"]])
        elif op == "drop_order":
            query["order"] = None
            query["dir"] = ""
        elif op == "flip_dir" and query["order"]:
            query["dir"] = "ASC" if query["dir"] == "DESC" else "DESC"
        elif op == "add_group":
            query["group"] = rng.choice(columns)
        elif op == "drop_group":
            query["group"] = None
        elif op == "add_limit":
            query["limit"] = rng.choice((0, 1, 2, 3, 5, 10))
        elif op == "drop_limit":
            query["limit"] = None
        elif op == "reorder_clauses" and len(query["conds"]) > 1:
            rng.shuffle(query["conds"])
        return _serialize_query(query)

    # -- raw bytes -----------------------------------------------------------

    def _mutate_raw(self, data: bytes, objective: str) -> bytes:
        rng = self._rng
        out = bytearray(data or b"\x00")
        choice = rng.randrange(4)
        if choice == 0:
            out[rng.randrange(len(out))] = rng.randrange(256)
        elif choice == 1:
            at = rng.randint(0, len(out))
            out[at:at] = bytes(rng.randrange(256) for _ in range(rng.randint(1, 8)))
        elif choice == 2 and len(out) > 1:
            at = rng.randrange(len(out))
            del out[at : at + rng.randint(1, 4)]
        else:
            out.extend(out[-4:] or b"\x00")
        max_len = self.schema.rules.get("max_len", 4096)
        return bytes(out[:max_len])
