"""Acceptance reporting: one PASS/FAIL line per criterion in the terminal summary."""
import pytest

_RESULTS: dict[str, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(cid, title): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    cid, title = mark.args
    entry = _RESULTS.setdefault(cid, {"title": title, "ok": True, "ran": False, "detail": []})
    if rep.when == "call" or rep.failed:
        entry["ran"] = True
        entry["ok"] &= rep.passed
        entry["detail"] += [str(v) for k, v in item.user_properties if k == "detail"]


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for cid in sorted(_RESULTS, key=lambda c: int(c[2:])):
        e = _RESULTS[cid]
        status = "PASS" if e["ok"] and e["ran"] else ("FAIL" if e["ran"] else "SKIP")
        detail = f"  [{'; '.join(dict.fromkeys(e['detail']))}]" if e["detail"] else ""
        tr.write_line(f"{cid:<5} {status}  {e['title']}{detail}")
