"""Backend selection and fallback behavior (protocol-level, via a stub)."""

import json
import os
import stat
import sys
import textwrap

import numpy as np
import pytest

from illm import backend
from illm.entropy import range_encode, uniform_byte_table

STUB_OK = """\
#!/usr/bin/env python3
import base64, json, sys
sys.path.insert(0, {src!r})
import numpy as np
from illm.entropy import CDFTable, range_decode, range_encode

req = json.load(sys.stdin)
if req["op"] == "probe":
    print(json.dumps({{"ok": True, "capabilities": {{
        "version": "stub-1", "precision_min": 8, "precision_max": 24,
        "conformance_hash": "stub", "self_test_passed": {selftest}}}}}))
    sys.exit(0)
spec = req["table"]
table = CDFTable([list(r) for r in spec["rows"]], spec["offsets"],
                 np.asarray(spec["row_index"]), spec["precision"], spec["has_escape"])
if req["op"] == "encode":
    data = range_encode(np.asarray(req["symbols"]), table)
    print(json.dumps({{"ok": True, "data_b64": base64.b64encode(data).decode()}}))
else:
    syms = range_decode(base64.b64decode(req["data_b64"]), table, req["n"])
    print(json.dumps({{"ok": True, "symbols": [int(s) for s in syms]}}))
"""


@pytest.fixture
def stub_backend(tmp_path, monkeypatch):
    src = str(os.path.join(os.path.dirname(backend.__file__), ".."))

    def install(self_test_passed=True):
        script = tmp_path / "stub_backend.py"
        script.write_text(STUB_OK.format(src=src, selftest="True" if self_test_passed else "False"))
        script.chmod(script.stat().st_mode | stat.S_IEXEC)
        monkeypatch.setenv("ILLM_FAST_BACKEND_CMD", f"{sys.executable} {script}")
        backend.active_backend(refresh=True)
        return script

    yield install
    monkeypatch.delenv("ILLM_FAST_BACKEND_CMD", raising=False)
    monkeypatch.delenv("ILLM_BACKEND", raising=False)
    backend._resolved = None


class TestSelection:
    def test_default_is_reference(self, monkeypatch):
        monkeypatch.delenv("ILLM_BACKEND", raising=False)
        assert backend.active_backend(refresh=True) == "reference"
        backend._resolved = None

    def test_fast_without_backend_falls_back(self, monkeypatch, tmp_path):
        monkeypatch.setenv("ILLM_BACKEND", "fast")
        monkeypatch.setenv("ILLM_FAST_BACKEND_CMD", str(tmp_path / "missing"))
        with pytest.warns(UserWarning):
            assert backend.active_backend(refresh=True) == "reference"
        backend._resolved = None

    def test_failed_selftest_falls_back(self, monkeypatch, stub_backend):
        stub_backend(self_test_passed=False)
        monkeypatch.setenv("ILLM_BACKEND", "fast")
        with pytest.warns(UserWarning):
            assert backend.active_backend(refresh=True) == "reference"
        backend._resolved = None

    def test_unknown_choice_warns(self, monkeypatch):
        monkeypatch.setenv("ILLM_BACKEND", "quantum")
        with pytest.warns(UserWarning):
            assert backend.active_backend(refresh=True) == "reference"
        backend._resolved = None


class TestDispatch:
    def test_stub_roundtrip_matches_reference(self, monkeypatch, stub_backend):
        stub_backend(self_test_passed=True)
        monkeypatch.setenv("ILLM_BACKEND", "fast")
        assert backend.active_backend(refresh=True) == "fast"
        rng = np.random.default_rng(0)
        table = uniform_byte_table(200)
        syms = rng.integers(0, 256, 200)
        via_fast = backend.range_encode(syms, table)
        assert via_fast == range_encode(syms, table)
        assert np.array_equal(backend.range_decode(via_fast, table, 200), syms)
        backend._resolved = None

    def test_probe_reports_capabilities(self, stub_backend):
        stub_backend(self_test_passed=True)
        caps = backend.probe()
        assert caps is not None
        assert caps.version == "stub-1"
        assert caps.self_test_passed
        backend._resolved = None
