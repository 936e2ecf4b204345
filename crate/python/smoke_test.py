"""Smoke test for the tasc Python extension.

    pip install --no-build-isolation ./crates/py
    python python/smoke_test.py
"""

import json
import sys
import tempfile
from pathlib import Path

import tasc

ROOT = Path(__file__).resolve().parent.parent


def main() -> int:
    scenario = ROOT / "scenarios" / "tabletop.json"
    fixtures = ROOT / "fixtures"

    reports = json.loads(tasc.check_fixtures([str(fixtures)]))
    assert reports and all(r["ok"] for r in reports), reports

    schema = json.loads(tasc.wire_schema())
    assert schema["title"] == "WireMessage"

    with tempfile.TemporaryDirectory() as tmp:
        log = Path(tmp) / "place.jsonl"
        report = json.loads(tasc.run_episode(str(scenario), str(fixtures), "place", "tasc", seed=3, telemetry=str(log)))
        assert report["success"], report
        again = json.loads(tasc.run_episode(str(scenario), str(fixtures), "place", "tasc", seed=3))
        assert again["final_state_hash"] == report["final_state_hash"]

        replayed = json.loads(tasc.replay_telemetry(str(log)))
        assert replayed["matched"], replayed

    try:
        tasc.run_episode(str(scenario), str(fixtures), "place", "nonsense")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown method accepted")

    print(f"ok: place seed 3 in {report['ticks']} ticks, {len(reports)} fixtures valid, replay matched")
    return 0


if __name__ == "__main__":
    sys.exit(main())
