"""Four instrumented toy targets with documented planted bugs.

Target        format          planted bugs
------        ------          ------------
chunky        chunked-binary  heap_overflow_guard   (DATA payload > 512)
                              integer_underflow_guard (HEAD height=0 then DATA)
                              palette_oob_guard     (DATA index >= palette size)
dissect       line-protocol   oob_read_guard        (TCP option length overrun)
                              logic_assert:bad_reassembly (ICMP fragment + ARP
                                                    + zero total length)
miniq         query-text      logic_assert:wrong_plan (index eq + range cond
                                                    + ORDER DESC + LIMIT)
                              logic_assert:bad_aggregate (COUNT/SUM + GROUP on
                                                    the first filtered column
                                                    + ORDER)
mathbench     raw-bytes       none (computation-only null-result target)

The miniq and dissect logic bugs are triggered by rare *combinations* of
individually common constructs.  Their parsers route control flow through a
shared stepping-stone trace point between per-construct branches, so every
edge a trigger produces is already covered once each construct has appeared
anywhere in the corpus: the bugs are invisible to pure coverage feedback by
construction.

Guard predicates are computed as data, and the guard call sites sit on the
path every successful parse takes.
"""

from __future__ import annotations

import math

from semfuzz.executor import TraceContext

# --------------------------------------------------------------------------
# chunky: chunked binary image-like parser
# --------------------------------------------------------------------------

CHUNKY_MAGIC = b"CNKY"
CHUNKY_TYPES = (b"HEAD", b"DATA", b"PALT", b"COMM", b"TAIL")
CHUNKY_ROW_BUFFER = 512


def _chunky_read_magic(data: bytes, ctx: TraceContext) -> bool:
    ctx.call("read_magic")
    if data[:4] != CHUNKY_MAGIC:
        ctx.hit("chunky:bad_magic")
        ctx.log("bad magic")
        return False
    ctx.hit("chunky:magic_ok")
    return True


def _chunky_read_chunk_header(data: bytes, pos: int, ctx: TraceContext):
    ctx.call("read_chunk_header")
    if pos + 6 > len(data):
        ctx.hit("chunky:truncated_header")
        return None
    ctype = data[pos : pos + 4]
    length = int.from_bytes(data[pos + 4 : pos + 6], "big")
    if pos + 6 + length > len(data):
        ctx.hit("chunky:truncated_payload")
        return None
    ctx.hit("chunky:header_ok")
    return ctype, data[pos + 6 : pos + 6 + length], pos + 6 + length


def _chunky_handle_head(payload: bytes, state: dict, ctx: TraceContext) -> None:
    ctx.call("handle_head")
    if len(payload) < 4:
        ctx.hit("chunky:head_short")
        ctx.log("head too short")
        return
    state["width"] = int.from_bytes(payload[0:2], "big")
    state["height"] = int.from_bytes(payload[2:4], "big")
    state["head_seen"] = True
    ctx.hit("chunky:head_ok")
    ctx.log(f"head {state['width']}x{state['height']}")


def _chunky_handle_palette(payload: bytes, state: dict, ctx: TraceContext) -> None:
    ctx.call("handle_palette")
    entries = len(payload) // 3
    state["palette_n"] = entries
    if entries == 0:
        ctx.hit("chunky:palette_empty")
    else:
        ctx.hit("chunky:palette_ok")
    ctx.log(f"palette entries={entries}")


def _chunky_handle_data(payload: bytes, state: dict, ctx: TraceContext) -> None:
    ctx.call("handle_data")
    # fixed row buffer: oversized payloads overrun it
    ctx.guard(len(payload) <= CHUNKY_ROW_BUFFER, "heap_overflow_guard")
    if state.get("head_seen"):
        ctx.hit("chunky:data_with_head")
        # rows_remaining = height - rows_done underflows when height == 0
        ctx.guard(state["height"] > 0, "integer_underflow_guard")
    else:
        ctx.hit("chunky:data_headless")
    palette_n = state.get("palette_n")
    if palette_n is not None:
        ctx.hit("chunky:data_indexed")
        worst = max(payload) if payload else 0
        ctx.guard(worst < max(palette_n, 1), "palette_oob_guard")
    state["data_bytes"] += len(payload)
    state["data_chunks"] += 1


def _chunky_finalize(state: dict, ctx: TraceContext) -> None:
    ctx.call("finalize")
    if state["chunks"] == 0:
        ctx.hit("chunky:empty_file")
    else:
        ctx.hit("chunky:summarize")
    ctx.ret("chunks", state["chunks"])
    ctx.ret("data_bytes", state["data_bytes"])
    flags = (
        int(state.get("head_seen", False)),
        int(state.get("palette_n") is not None),
        int(state["data_chunks"] > 0),
        int(state["unknown"] > 0),
    )
    ctx.region("parser_state", bytes(flags))
    ctx.log(f"parsed chunks={state['chunks']} unknown={state['unknown']}")
    ctx.out(f"chunky ok chunks={state['chunks']}\n".encode())


def run_chunky(data: bytes, ctx: TraceContext) -> None:
    ctx.call("parse_chunky")
    state = {"chunks": 0, "data_bytes": 0, "data_chunks": 0, "unknown": 0}
    if not _chunky_read_magic(data, ctx):
        _chunky_finalize(state, ctx)
        return
    pos = 4
    while pos < len(data):
        ctx.hit("chunky:loop")
        parsed = _chunky_read_chunk_header(data, pos, ctx)
        if parsed is None:
            break
        ctype, payload, pos = parsed
        state["chunks"] += 1
        if ctype == b"HEAD":
            _chunky_handle_head(payload, state, ctx)
        elif ctype == b"DATA":
            _chunky_handle_data(payload, state, ctx)
        elif ctype == b"PALT":
            _chunky_handle_palette(payload, state, ctx)
        elif ctype == b"COMM":
            ctx.hit("chunky:comment")
            ctx.log("comment chunk")
        elif ctype == b"TAIL":
            ctx.hit("chunky:tail")
            break
        else:
            ctx.hit("chunky:unknown_type")
            state["unknown"] += 1
        if state["chunks"] > 512:
            ctx.hit("chunky:too_many_chunks")
            break
    _chunky_finalize(state, ctx)


# --------------------------------------------------------------------------
# dissect: line-oriented packet dissector
# --------------------------------------------------------------------------

DISSECT_PROTOS = ("TCP", "UDP", "ICMP", "ARP")


def _dissect_fields(body: str, ctx: TraceContext) -> dict[str, str]:
    fields: dict[str, str] = {}
    for part in body.split(";"):
        ctx.hit("dissect:field")
        if not part:
            ctx.hit("dissect:field_empty")
            continue
        if "=" not in part:
            ctx.hit("dissect:field_bare")
            continue
        key, _, value = part.partition("=")
        key = key.strip()
        if key.isalnum():
            ctx.hit("dissect:field_ok")
            fields[key] = value.strip()
        else:
            ctx.hit("dissect:field_badkey")
    return fields


def _dissect_int(value: str) -> int:
    try:
        return int(value)
    except ValueError:
        return 0


def _dissect_tcp_options(hexstr: str, ctx: TraceContext) -> int:
    ctx.call("parse_tcp_options")
    try:
        blob = bytes.fromhex(hexstr)
    except ValueError:
        ctx.hit("dissect:opt_bad_hex")
        return 0
    count = 0
    pos = 0
    while pos < len(blob):
        ctx.hit("dissect:opt_loop")
        kind = blob[pos]
        if kind in (0, 1):  # EOL / NOP single-byte options
            ctx.hit("dissect:opt_single")
            pos += 1
            count += 1
            continue
        if pos + 2 > len(blob):
            ctx.hit("dissect:opt_truncated")
            break
        optlen = blob[pos + 1]
        ctx.hit("dissect:opt_sized")
        # reading optlen bytes from the option must stay in bounds
        ctx.guard(optlen >= 2 and pos + optlen <= len(blob), "oob_read_guard")
        pos += optlen
        count += 1
    return count


def _dissect_line(line: str, session: dict, ctx: TraceContext) -> None:
    ctx.call("dissect_line")
    proto, _, body = line.partition(" ")
    proto = proto.strip().upper()
    fields = _dissect_fields(body, ctx)
    length = _dissect_int(fields.get("len", "0"))
    session["total_len"] += length
    ctx.hit("dissect:dispatch")
    if proto == "TCP":
        ctx.hit("dissect:tcp")
        session["protos"].add("TCP")
        flags = fields.get("flags", "")
        if "S" in flags:
            ctx.hit("dissect:tcp_syn")
        if "F" in flags:
            ctx.hit("dissect:tcp_fin")
        opts = 0
        if "opt" in fields:
            ctx.hit("dissect:tcp_opt")
            opts = _dissect_tcp_options(fields["opt"], ctx)
        ctx.log(f"tcp flags={flags or 'none'} opts={opts}")
    elif proto == "UDP":
        ctx.hit("dissect:udp")
        session["protos"].add("UDP")
        if length > 1500:
            ctx.hit("dissect:udp_jumbo")
            ctx.log("udp jumbo")
        ctx.log("udp datagram")
    elif proto == "ICMP":
        ctx.hit("dissect:icmp")
        session["protos"].add("ICMP")
        if "F" in fields.get("flags", ""):
            ctx.hit("dissect:icmp_frag")
            session["fragments"] += 1
            ctx.log("icmp fragment")
        else:
            ctx.log("icmp packet")
    elif proto == "ARP":
        ctx.hit("dissect:arp")
        session["protos"].add("ARP")
        op = _dissect_int(fields.get("op", "1"))
        ctx.log("arp request" if op == 1 else "arp reply")
    else:
        ctx.hit("dissect:unknown_proto")
        session["unknown"] += 1


def run_dissect(data: bytes, ctx: TraceContext) -> None:
    ctx.call("dissect")
    text = data.decode("latin-1")
    session = {"protos": set(), "fragments": 0, "total_len": 0, "unknown": 0}
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        ctx.hit("dissect:empty")
        ctx.log("empty capture")
    for line in lines[:64]:
        ctx.hit("dissect:line")
        _dissect_line(line, session, ctx)
    ctx.call("reassemble")
    # reassembly bookkeeping breaks when fragmented ICMP coexists with ARP
    # chatter and the accumulated payload length is zero
    bad_reassembly = session["fragments"] > 0 and "ARP" in session["protos"] and session["total_len"] == 0
    ctx.hit("dissect:reassembly_check")
    ctx.guard(not bad_reassembly, "logic_assert:bad_reassembly")
    protos = "+".join(sorted(session["protos"])) or "none"
    ctx.ret("lines", len(lines))
    ctx.ret("total_len", session["total_len"])
    ctx.log(f"session protos={protos} frags={session['fragments']}")
    ctx.region("session_state", f"{protos}|{session['fragments'] > 0}|{session['unknown'] > 0}".encode())
    ctx.out(f"dissected {len(lines)} lines protos={protos}\n".encode())


# --------------------------------------------------------------------------
# miniq: miniature query engine
# --------------------------------------------------------------------------

MINIQ_VERBS = ("GET", "COUNT", "SUM")
MINIQ_TABLES = {
    "items": ("id", "price", "qty"),
    "events": ("id", "ts", "level"),
}

_MINIQ_ROWS = {
    "items": [
        {"id": i, "price": (i * 7) % 50 + 1, "qty": (i * 3) % 10} for i in range(1, 11)
    ],
    "events": [
        {"id": i, "ts": 100 + i * 10, "level": i % 4} for i in range(1, 11)
    ],
}


def _miniq_tokenize(data: bytes, ctx: TraceContext) -> list[str]:
    ctx.call("tokenize")
    text = data.decode("latin-1", errors="replace")
    tokens = text.split()
    if len(tokens) > 64:
        ctx.hit("miniq:token_overflow")
        tokens = tokens[:64]
    return tokens


def _miniq_parse_cond(tokens: list[str], i: int, query: dict, ctx: TraceContext) -> int:
    """Parse ``col op value`` starting at i; returns next index or -1."""
    ctx.call("parse_condition")
    if i + 2 >= len(tokens):
        ctx.hit("miniq:cond_short")
        return -1
    col, op, raw = tokens[i].lower(), tokens[i + 1], tokens[i + 2]
    if col not in MINIQ_TABLES[query["table"]]:
        ctx.hit("miniq:cond_badcol")
        return -1
    ctx.hit("miniq:step")
    if op == "=":
        ctx.hit("miniq:op_eq")
    elif op == "<":
        ctx.hit("miniq:op_lt")
    elif op == ">":
        ctx.hit("miniq:op_gt")
    else:
        ctx.hit("miniq:cond_badop")
        return -1
    try:
        value = int(raw)
    except ValueError:
        ctx.hit("miniq:cond_badval")
        return -1
    query["conds"].append((col, op, value))
    return i + 3


def _miniq_parse(tokens: list[str], ctx: TraceContext) -> dict | None:
    ctx.call("parse_query")
    if not tokens:
        ctx.hit("miniq:no_verb")
        return None
    verb = tokens[0].upper()
    if verb not in MINIQ_VERBS:
        ctx.hit("miniq:bad_verb")
        return None
    ctx.hit(f"miniq:verb_{verb.lower()}")
    if len(tokens) < 2 or tokens[1].lower() not in MINIQ_TABLES:
        ctx.hit("miniq:bad_table")
        return None
    table = tokens[1].lower()
    ctx.hit(f"miniq:table_{table}")
    query = {
        "verb": verb,
        "table": table,
        "conds": [],
        "order": None,
        "desc": False,
        "group": None,
        "limit": None,
    }
    i = 2
    steps = 0
    while i < len(tokens):
        ctx.hit("miniq:step")
        steps += 1
        if steps > 16:
            ctx.hit("miniq:clause_overflow")
            return None
        word = tokens[i].upper()
        if word == "WHERE" and not query["conds"]:
            ctx.hit("miniq:cl_where")
            i = _miniq_parse_cond(tokens, i + 1, query, ctx)
        elif word == "AND" and query["conds"]:
            ctx.hit("miniq:cl_and")
            i = _miniq_parse_cond(tokens, i + 1, query, ctx)
        elif word == "ORDER" and i + 1 < len(tokens):
            ctx.hit("miniq:cl_order")
            col = tokens[i + 1].lower()
            if col not in MINIQ_TABLES[table]:
                ctx.hit("miniq:order_badcol")
                return None
            query["order"] = col
            i += 2
            if i < len(tokens) and tokens[i].upper() in ("ASC", "DESC"):
                ctx.hit("miniq:step")
                if tokens[i].upper() == "DESC":
                    ctx.hit("miniq:dir_desc")
                    query["desc"] = True
                else:
                    ctx.hit("miniq:dir_asc")
                i += 1
        elif word == "GROUP" and i + 1 < len(tokens):
            ctx.hit("miniq:cl_group")
            col = tokens[i + 1].lower()
            if col not in MINIQ_TABLES[table]:
                ctx.hit("miniq:group_badcol")
                return None
            query["group"] = col
            i += 2
        elif word == "LIMIT" and i + 1 < len(tokens):
            ctx.hit("miniq:cl_limit")
            try:
                query["limit"] = max(0, int(tokens[i + 1]))
            except ValueError:
                ctx.hit("miniq:limit_badval")
                return None
            i += 2
        else:
            ctx.hit("miniq:bad_clause")
            return None
        if i < 0:
            return None
    # terminal stone: the exit edge of the last clause always lands here, so
    # a construct appearing at the end of a query covers the same edges as
    # one appearing mid-query
    ctx.hit("miniq:step")
    return query


def _miniq_plan(query: dict, ctx: TraceContext) -> dict:
    ctx.call("plan_query")
    ctx.hit("miniq:step")
    uses_index = any(col == "id" and op == "=" for col, op, _ in query["conds"])
    has_range = any(op in ("<", ">") for _, op, _ in query["conds"])
    if uses_index:
        ctx.hit("miniq:plan_index")
    else:
        ctx.hit("miniq:plan_full")
    cost = 10 if uses_index else 10 * len(_MINIQ_ROWS[query["table"]])
    cost += 5 * len(query["conds"])
    if query["order"]:
        cost += 20
    return {"uses_index": uses_index, "has_range": has_range, "cost": cost}


def _miniq_execute(query: dict, plan: dict, ctx: TraceContext) -> list[dict]:
    ctx.call("execute_query")
    rows = []
    for row in _MINIQ_ROWS[query["table"]]:
        keep = True
        for col, op, value in query["conds"]:
            actual = row[col]
            if op == "=":
                keep = keep and actual == value
            elif op == "<":
                keep = keep and actual < value
            else:
                keep = keep and actual > value
        if keep:
            ctx.hit("miniq:row_pass")
            rows.append(row)
        else:
            ctx.hit("miniq:row_fail")
    ctx.hit("miniq:step")
    if query["order"]:
        ctx.hit("miniq:apply_order")
        rows.sort(key=lambda r: r[query["order"]], reverse=query["desc"])
    if query["limit"] is not None:
        ctx.hit("miniq:apply_limit")
        rows = rows[: query["limit"]]
    return rows


def run_miniq(data: bytes, ctx: TraceContext) -> None:
    ctx.call("miniq")
    tokens = _miniq_tokenize(data, ctx)
    query = _miniq_parse(tokens, ctx)
    if query is None:
        ctx.hit("miniq:reject")
        ctx.log("query rejected")
        ctx.ret("rows", -1)
        ctx.out(b"error: malformed query\n")
        return
    plan = _miniq_plan(query, ctx)
    rows = _miniq_execute(query, plan, ctx)

    # planner consistency checks; both predicates are data-only conjunctions
    # of individually common constructs, evaluated on the common path; the
    # column relations tie otherwise-independent clauses together, so the
    # conjunctions are narrow even though every construct is common
    range_on_order = any(
        op in ("<", ">") and col == query["order"] for col, op, _ in query["conds"]
    )
    wrong_plan = (
        plan["uses_index"] and range_on_order and query["desc"] and query["limit"] is not None
    )
    first_cond = query["conds"][0] if query["conds"] else (None, None, None)
    bad_aggregate = (
        query["verb"] in ("COUNT", "SUM")
        and query["group"] is not None
        and query["group"] == first_cond[0]
        and first_cond[1] == "="
        and query["order"] == query["group"]
    )
    ctx.hit("miniq:verify")
    ctx.guard(not wrong_plan, "logic_assert:wrong_plan")
    ctx.guard(not bad_aggregate, "logic_assert:bad_aggregate")

    if query["verb"] == "GET":
        result = f"rows={len(rows)}"
        value = len(rows)
    elif query["verb"] == "COUNT":
        result = f"count={len(rows)}"
        value = len(rows)
    else:
        col = first_cond[0] or MINIQ_TABLES[query["table"]][1]
        value = sum(r[col] for r in rows)
        result = f"sum={value}"

    # structural signature emitted both composite and per-dimension, so one
    # construct change moves several tokens while value jitter moves few
    order_sig = "0" if query["order"] is None else ("1d" if query["desc"] else "1a")
    grouped = int(query["group"] is not None)
    limited = int(query["limit"] is not None)
    kind = "index" if plan["uses_index"] else "full"
    scan = "rng" if plan["has_range"] else "pt"
    shape = f"w{len(query['conds'])}o{order_sig}g{grouped}l{limited}"
    plan_sig = f"{kind}_{scan}_o{order_sig}_g{grouped}_l{limited}"
    ctx.ret("rows", len(rows))
    ctx.ret("cost", plan["cost"])
    ctx.ret("value", value)
    ctx.log(f"verb={query['verb'].lower()} table={query['table']}")
    ctx.log(f"plan={plan_sig} kind={kind} scan={scan} ord={order_sig} "
            f"grouped={grouped} limited={limited}")
    ctx.log(f"shape={shape} where={len(query['conds'])} order={order_sig} "
            f"group={grouped} limit={limited}")
    ctx.region("plan_state", f"{plan_sig}|{shape}".encode())
    ctx.out(f"{result}\n".encode())


# --------------------------------------------------------------------------
# mathbench: computation-heavy null-result target
# --------------------------------------------------------------------------

MATHBENCH_ITERS = 200


def run_mathbench(data: bytes, ctx: TraceContext) -> None:
    ctx.call("mathbench")
    seed = sum(data) % 256 if data else 0
    acc = 0.0
    for i in range(MATHBENCH_ITERS):
        ctx.hit("mathbench:loop")
        acc += abs(math.sin(0.1 * i + 0.001 * seed)) + 0.9
    if seed % 16 == 0:
        ctx.hit("mathbench:residue")
        ctx.log("residue class hit")
    ctx.hit("mathbench:done")
    ctx.ret("acc", acc)
    ctx.ret("iters", MATHBENCH_ITERS)
    ctx.log(f"bench complete iters={MATHBENCH_ITERS}")
    ctx.out(b"mathbench ok\n")
