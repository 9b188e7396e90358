"""Smoke test for the twinpilot extension module.

Build it first, e.g. `maturin develop -m crates/py/Cargo.toml`, or
`cargo build -p twinpilot-py --release` and put the renamed library
(`twinpilot.so`) on PYTHONPATH.
"""

import json
import sys
import tempfile
from pathlib import Path

import twinpilot


def main() -> int:
    call = twinpilot.FunctionCall("conveyor_1_run('forward', 13)")
    assert call.name == "conveyor_1_run"
    assert call.args == ["forward", 13]
    assert str(call) == "conveyor_1_run('forward', 13)"
    try:
        twinpilot.FunctionCall("conveyor_1_run(")
    except twinpilot.TwinpilotError:
        pass
    else:
        raise AssertionError("malformed call accepted")

    assert "storage-retrieval" in twinpilot.bundled_scripts()
    lines = twinpilot.replay_script("storage-retrieval")
    assert len(lines) == 12, lines
    assert lines[-1].startswith("[Storage Station]")

    session = twinpilot.Session("demo")
    until = session.schedule("demo-scenario")
    session.run_until(until)
    texts = [e["text"] for e in session.events()]
    assert any("robot arm" in t.lower() for t in texts), texts
    assert session.snapshot()["now"] == until

    plain = twinpilot.Session(plain=True)
    plain.run_until(3)
    assert len(plain.events()) == 0

    manual = twinpilot.Session("demo")
    manual.agents_enabled = False
    manual.advance()
    manual.inject({"type": "place_entity", "module": "Storage Station", "track": "C1",
                  "position": 0, "kind": "carrier"})
    manual.advance()
    manual.start_recording()
    manual.invoke("Storage Station", "conveyor_1_run('forward', 13)")
    manual.advance(13)
    recorded, warnings = manual.stop_recording("smoke", "Move the carrier to the pick point.")
    assert warnings == [], warnings
    assert len(recorded) == 1
    assert recorded.manifest()["routine"] == 1

    sample = twinpilot.Dataset.sample()
    report = sample.evaluate("oracle")
    assert report["backend"] == "oracle"
    assert report["overall"]["rate"] == 1.0, report["table"]
    assert all(c["verdict"] == "match" for c in report["cases"])
    with tempfile.TemporaryDirectory() as tmp:
        n = sample.export_sft(Path(tmp) / "sft.jsonl")
        assert n == len(sample)
        sample.export_tests(Path(tmp) / "tests.jsonl")
        again = twinpilot.Dataset.load(Path(tmp) / "tests.jsonl")
        assert again.to_jsonl() == sample.to_jsonl()

    print(json.dumps({"cases": len(sample), "events": len(texts), "ok": True}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
