"""Smoke test for the Python bindings.

Build and install first:  pip install --no-build-isolation -e crates/py
Then run:                 python3 python/smoke_test.py
"""

from pathlib import Path

import osn_rebac

FIXTURES = Path(__file__).resolve().parent.parent / "crates" / "core" / "fixtures"


def check_parser():
    text = "[-, {dob}, {read, !share}, 1, [forall c: int_component(c,A) & installed(u,A)]]"
    p = osn_rebac.parse_policy(text)
    assert p.target == "-"
    assert p.data == ["dob"]
    assert sorted(p.actions) == ["!share", "read"]
    assert p.decision == 1
    assert osn_rebac.parse_policy(str(p)) == p
    try:
        osn_rebac.parse_policy("[u, {read}, 2, [installed(u,A)]]")
    except osn_rebac.PolicyParseError as e:
        _, kind, position = e.args
        assert kind == "syntax" and position == 12, e.args
    else:
        raise AssertionError("decision 2 accepted")


def check_horoscope():
    s = osn_rebac.Scenario.load(str(FIXTURES / "horoscope.json"))
    assert s.users == ["ann", "bob", "cat"]
    d = s.decide("horoscope/C1", "ann", "dob", ["read"])
    assert d["outcome"] == "grant" and d["matched_policy"] == "ann-dob", d
    d = s.decide("horoscope/C2", "ann", "dob", ["read"])
    assert d["outcome"] == "deny" and d["alert"] == "SuspiciousAccessRequest", d
    explained = s.explain("horoscope/C1", "ann", "dob", ["read"])
    assert any(p["id"] == "ann-dob" and p["matches"] for p in explained["policies"])
    out = s.run()
    kinds = [a["kind"] for a in out["alerts"]]
    assert kinds.count("SuspiciousAccessRequest") == 3, kinds
    assert len(out["decisions"]) == 13 and len(out["flows"]) >= 4


def check_kdb_audit():
    s = osn_rebac.Scenario.load(str(FIXTURES / "kdb.json"))
    for assume in (False, True):
        report = s.audit(assume_consent=assume)
        assert not report["oversharing"] and not report["undersharing"], report
        assert report["checked"] > 0


def check_errors():
    try:
        osn_rebac.Scenario.from_json('{"graph": {"users": ["a"], "edges": [{"from": "a", "to": "zed", "relation": "friend", "trust": 0.5}]}}')
    except osn_rebac.LoadError:
        pass
    else:
        raise AssertionError("dangling edge accepted")
    assert osn_rebac.classify(0.0) == "NS"
    assert [osn_rebac.recommend_level(l) for l in ("NS", "LS", "MS", "HS")] == [0, 1, 2, 3]


if __name__ == "__main__":
    check_parser()
    check_horoscope()
    check_kdb_audit()
    check_errors()
    print("python smoke test: ok")
