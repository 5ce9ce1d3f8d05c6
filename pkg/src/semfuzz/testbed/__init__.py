"""Built-in fuzzing targets: instrumented toy programs plus their manifests,
format schemas, and seed corpora.

Each target ships as a package data directory::

    testbed/<target_id>/manifest.json   static target description
    testbed/<target_id>/schema.json     input format description for mutators
    testbed/<target_id>/seeds/          initial corpus files
"""

from __future__ import annotations

from pathlib import Path

from semfuzz.errors import UnknownFunction
from semfuzz.executor import TargetHandle
from semfuzz.testbed.targets import run_chunky, run_dissect, run_mathbench, run_miniq

_DATA_ROOT = Path(__file__).parent

_RUNNERS = {
    "chunky": (run_chunky, "chunked-binary"),
    "dissect": (run_dissect, "line-protocol"),
    "miniq": (run_miniq, "query-text"),
    "mathbench": (run_mathbench, "raw-bytes"),
}


def register_targets() -> dict[str, TargetHandle]:
    """Build handles for all shipped targets, keyed by target id."""
    handles = {}
    for target_id, (runner, input_format) in _RUNNERS.items():
        root = _DATA_ROOT / target_id
        handles[target_id] = TargetHandle(
            target_id=target_id,
            run=runner,
            input_format=input_format,
            manifest_path=str(root / "manifest.json"),
            schema_path=str(root / "schema.json"),
            seeds_dir=str(root / "seeds"),
        )
    return handles


def get_target(target_id: str) -> TargetHandle:
    handles = register_targets()
    if target_id not in handles:
        known = ", ".join(sorted(handles))
        raise UnknownFunction(f"unknown target {target_id!r} (built-in targets: {known})")
    return handles[target_id]
