"""Suite runner and deterministic report serialization."""

from __future__ import annotations

import csv
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import jsonschema

from . import __version__
from .suites import Check, Context, DEFAULT_WINDOW, plain, run_check, suite_checks

SEED_ENV = "FLAGLAB_SEED"
FLOAT_FORMAT = "%.12e"
VERDICTS = ("PASS", "FAIL", "SKIP")

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["seed"],
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "window": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 2,
                   "maxItems": 2},
        "jobs": {"type": "integer", "minimum": 1},
        "note": {"type": "string"},
    },
}


class ConfigError(ValueError):
    """Invalid run configuration; ``pointer`` is the JSON pointer of the offending value."""

    def __init__(self, pointer, message):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer, self.message = pointer, message


def _pointer(path):
    return "".join("/" + str(p).replace("~", "~0").replace("/", "~1") for p in path)


def validate_config(cfg, env=None):
    """Checked copy of ``cfg`` with defaults filled in and the env seed applied."""
    errors = sorted(jsonschema.Draft7Validator(CONFIG_SCHEMA).iter_errors(cfg),
                    key=lambda e: (list(map(str, e.absolute_path)), e.message))
    if errors:
        e = errors[0]
        raise ConfigError(_pointer(e.absolute_path), e.message)
    out = dict(cfg)
    lo, hi = out.setdefault("window", list(DEFAULT_WINDOW))
    if hi - lo < 2:
        raise ConfigError("/window/1", "window must span at least three nested windows")
    env = os.environ if env is None else env
    if env.get(SEED_ENV) not in (None, ""):
        try:
            out["seed"] = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError("/seed", f"{SEED_ENV}={env[SEED_ENV]!r} is not an integer") from None
        if out["seed"] < 0:
            raise ConfigError("/seed", f"{SEED_ENV} must be nonnegative")
    return out


def load_config(path, env=None):
    if path is None:
        return validate_config({"seed": 0}, env)
    with open(path, encoding="utf-8") as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("", f"not valid JSON ({exc})") from None
    return validate_config(cfg, env)


@dataclass
class RunReport:
    suite: str
    config: dict
    checks: list = field(default_factory=list)
    version: str = __version__

    @property
    def summary(self):
        out = dict.fromkeys(VERDICTS, 0)
        for c in self.checks:
            out[c.verdict.split("(")[0]] += 1
        return out

    @property
    def ok(self):
        return not any(c.failed for c in self.checks)

    def to_json(self):
        return {"tool": {"name": "flaglab", "version": self.version}, "suite": self.suite,
                "config": plain(self.config), "summary": self.summary,
                "checks": [c.to_json() for c in self.checks]}

    def timings(self):
        return {c.name: round(c.seconds, 3) for c in self.checks}


def _run_one(args):
    name, ctx = args
    return run_check(name, ctx)


def run_suite(suite, config, jobs=1, bless=False) -> RunReport:
    """Run every check of ``suite`` with at most ``jobs`` worker processes."""
    ctx = Context(seed=config["seed"], bless=bless, window=tuple(config.get("window", DEFAULT_WINDOW)))
    names = [c.name for c in suite_checks(suite)]
    jobs = max(1, min(int(jobs), len(names)))
    if jobs == 1:
        results = [run_check(n, ctx) for n in names]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, [(n, ctx) for n in names]))
    return RunReport(suite, dict(config), results)


# ---------------------------------------------------------------- serialization

def _json(obj, indent=0):
    pad, inner = "  " * indent, "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(k, ensure_ascii=False)}: {_json(obj[k], indent + 1)}"
                 for k in sorted(obj)]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        return "[\n" + ",\n".join(inner + _json(v, indent + 1) for v in obj) + "\n" + pad + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, float):
        return FLOAT_FORMAT % obj
    if isinstance(obj, int):
        return str(obj)
    return json.dumps(obj, ensure_ascii=False)


def _scalar(v):
    if isinstance(v, bool) or v is None:
        return json.dumps(v)
    if isinstance(v, float):
        return FLOAT_FORMAT % v
    return str(v)


def flatten(obj, prefix=""):
    """(dotted key, scalar) rows, dict keys sorted, list entries by index."""
    if isinstance(obj, dict):
        if not obj:
            return [(prefix, "{}")]
        return [row for k in sorted(obj) for row in flatten(obj[k], f"{prefix}.{k}" if prefix else str(k))]
    if isinstance(obj, list):
        if not obj:
            return [(prefix, "[]")]
        return [row for i, v in enumerate(obj) for row in flatten(v, f"{prefix}.{i}" if prefix else str(i))]
    return [(prefix, _scalar(obj))]


def _text(doc):
    cols = ("check", "criterion", "verdict")
    rows = [{"check": c["name"], "criterion": str(c["criterion"]), "verdict": c["verdict"]}
            for c in doc["checks"]]
    widths = {k: max(len(k), *(len(r[k]) for r in rows)) if rows else len(k) for k in cols}
    line = lambda r: " | ".join(r[k].ljust(widths[k]) for k in cols).rstrip()
    head = [f"flaglab {doc['tool']['version']}  suite={doc['suite']}  seed={doc['config']['seed']}",
            line({k: k for k in cols}), "-+-".join("-" * widths[k] for k in cols)]
    s = doc["summary"]
    tail = [f"PASS {s['PASS']}  FAIL {s['FAIL']}  SKIP {s['SKIP']}"]
    return "\n".join(head + [line(r) for r in rows] + tail) + "\n"


def emit_report(report: RunReport, fmt="json") -> bytes:
    """Deterministic bytes: sorted keys and %.12e floats in every format."""
    doc = report.to_json()
    if fmt == "json":
        return (_json(doc) + "\n").encode("utf-8")
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["check", "criterion", "verdict", "key", "value"])
        for c in doc["checks"]:
            for key, val in flatten(c["values"]):
                w.writerow([c["name"], c["criterion"], c["verdict"], key, val])
        return buf.getvalue().encode("utf-8")
    if fmt == "text":
        return _text(doc).encode("utf-8")
    raise ValueError(f"unknown report format {fmt!r}")


def write_outputs(report: RunReport, out_dir):
    """report.json, report.csv, artifacts under tables/ and grids/, timings.json."""
    os.makedirs(out_dir, exist_ok=True)
    for fmt in ("json", "csv"):
        with open(os.path.join(out_dir, f"report.{fmt}"), "wb") as fh:
            fh.write(emit_report(report, fmt))
    for c in report.checks:
        for rel, data in sorted(c.artifacts.items()):
            path = os.path.join(out_dir, rel)
            os.makedirs(os.path.dirname(path), exist_ok=True)
            with open(path, "wb") as fh:
                fh.write(data)
    # wall times vary run to run, so they stay out of the report
    with open(os.path.join(out_dir, "timings.json"), "w", encoding="utf-8") as fh:
        json.dump(report.timings(), fh, indent=2, sort_keys=True)
        fh.write("\n")
