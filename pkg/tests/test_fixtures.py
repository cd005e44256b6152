"""The committed transcript must be exactly what the authoring tables produce
with the current prompt templates."""

from build_fixtures import record
from conftest import TRANSCRIPTS


def test_transcript_is_current(tmp_path):
    fresh = tmp_path / "transcripts.jsonl"
    record(fresh)
    assert fresh.read_bytes() == TRANSCRIPTS.read_bytes(), (
        "tests/fixtures/transcripts.jsonl is stale; re-run tests/fixtures/build_fixtures.py"
    )
