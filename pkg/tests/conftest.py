import os

from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# acceptance results, printed one line per criterion at the end of the run
_RESULTS = {}


def record(criterion, label, ok, detail=""):
    _RESULTS.setdefault(criterion, []).append((label, bool(ok), detail))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for criterion in sorted(_RESULTS):
        checks = _RESULTS[criterion]
        failed = [c for c in checks if not c[1]]
        verdict = "PASS" if not failed else "FAIL"
        tr.write_line(f"{verdict} criterion {criterion}: {len(checks) - len(failed)}/{len(checks)} checks")
        for label, ok, detail in checks:
            tr.write_line(f"    {'ok  ' if ok else 'FAIL'} {label}" + (f" ({detail})" if detail else ""))
