import functools

ACCEPTANCE: dict[str, str] = {}


def criterion(key: str):
    """Record a PASS/FAIL line for an acceptance test, including failures by exception."""

    def wrap(fn):
        @functools.wraps(fn)
        def inner(*args, **kwargs):
            try:
                detail = fn(*args, **kwargs)
            except AssertionError as exc:
                ACCEPTANCE[key] = f"FAIL  criterion {key}: {str(exc).splitlines()[0] if str(exc) else 'assertion'}"
                raise
            except Exception as exc:
                ACCEPTANCE[key] = f"FAIL  criterion {key}: {type(exc).__name__}: {exc}"
                raise
            ACCEPTANCE[key] = f"PASS  criterion {key}: {detail or ''}"

        return inner

    return wrap


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int(k[0]), k)):
        terminalreporter.write_line(ACCEPTANCE[key])
