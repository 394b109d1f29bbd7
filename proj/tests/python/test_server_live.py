import json
import re
import signal
import subprocess
import time

import jsonschema
import pytest
from websockets.sync.client import connect


@pytest.fixture()
def server(otgym_bin, tmp_path):
    proc = subprocess.Popen(
        [str(otgym_bin), "serve", "--port", "0", "--duration", "60", "--tick-rate", "50", "--out", str(tmp_path)],
        stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
    line = proc.stdout.readline()
    m = re.search(r"http://([\d.]+):(\d+)", line)
    assert m, line
    yield {"url": f"ws://{m.group(1)}:{m.group(2)}/session", "proc": proc, "out": tmp_path}
    if proc.poll() is None:
        proc.send_signal(signal.SIGINT)
        proc.wait(timeout=10)


class Checked:
    """Client that validates every server message against its schema."""

    def __init__(self, url, schema_dir):
        self.ws = connect(url, open_timeout=5)
        self.schemas = {p.name.split(".")[0]: json.loads(p.read_text())
                        for p in (schema_dir / "server_to_client").glob("*.schema.json")}
        self.seq = 0
        self.last_in = 0
        self.seen = 0

    def send(self, type_, payload=None):
        self.seq += 1
        self.ws.send(json.dumps({"type": type_, "seq": self.seq, "payload": payload or {}}))
        return self.seq

    def until(self, type_, timeout=10.0):
        end = time.monotonic() + timeout
        while time.monotonic() < end:
            msg = json.loads(self.ws.recv(timeout=end - time.monotonic()))
            jsonschema.validate(msg, self.schemas[msg["type"]], cls=jsonschema.Draft202012Validator)
            assert msg["seq"] > self.last_in
            self.last_in = msg["seq"]
            self.seen += 1
            if msg["type"] == type_:
                return msg["payload"]
        raise TimeoutError(type_)


def test_live_session_messages_match_schemas(server, schema_dir):
    c = Checked(server["url"], schema_dir)
    c.send("start")
    assert c.until("error")["code"] == "hello_required"
    c.send("hello", {"protocol": 1, "client": "pytest"})
    hello = c.until("hello")
    assert hello["role"] == "operator"
    s = c.send("start")
    ack = c.until("ack")
    assert ack["ref_seq"] == s and ack["state"]["running"]
    c.send("operator_input", {"delta_p_h": [0.001, 0.0]})
    assert c.until("ack")["applied"] is True
    c.send("mode_change", {"mode": "autonomous"})
    assert c.until("ack")["state"]["mode"] == "autonomous"
    c.send("operator_input", {"delta_p_h": [0.001, 0.0]})
    assert c.until("ack")["applied"] is False
    c.send("mode_change", {"mode": "warp"})
    assert c.until("error")["code"] == "bad_payload"
    for _ in range(10):
        state = c.until("state_update")
    assert state["tick"] > 0
    c.until("haptic_update")

    observer = Checked(server["url"], schema_dir)
    observer.send("hello", {"protocol": 1})
    assert observer.until("hello")["role"] == "observer"
    observer.send("pause")
    assert observer.until("error")["code"] == "not_operator"
    observer.ws.close()

    c.send("reset", {"seed": 11})
    assert c.until("ack")["state"]["seed"] == 11
    c.ws.close()

    proc = server["proc"]
    proc.send_signal(signal.SIGINT)
    assert proc.wait(timeout=10) == 0
    summary = json.loads((server["out"] / "serve.json").read_text())
    assert summary["ticks"] > 0


def test_static_client_is_served(server):
    import urllib.request

    http = server["url"].replace("ws://", "http://").replace("/session", "/")
    with urllib.request.urlopen(http, timeout=5) as r:
        assert r.status == 200
        assert "text/html" in r.headers["Content-Type"]


def test_version_mismatch_is_closed(server, schema_dir):
    c = Checked(server["url"], schema_dir)
    c.send("hello", {"protocol": 2})
    assert c.until("error")["code"] == "version_mismatch"
    with pytest.raises(Exception):
        c.until("state_update", timeout=3)
    assert c.ws.close_code == 1008
