"""Checked-in fixture data: synthetic traces and the golden constant-speed run.

Layout under the fixture directory::

    traces/constant.csv
    traces/sawtooth.csv
    traces/stop_and_go.csv
    golden/constant_record.csv
    MANIFEST.yaml        config hash and file digests
"""

from __future__ import annotations

import hashlib
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from .config import config_from_text, config_hash, default_config_text
from .prediction import NoiseModel, write_trace_csv
from .sim import run, synth_trace

TRACE_SPECS = {
    "constant": ("constant", {"v": 20.0}, 120.0, 0),
    "sawtooth": ("sawtooth", {"v_low": 5.0, "v_high": 25.0, "accel": 1.0}, 200.0, 0),
    "stop_and_go": ("stop_and_go", {}, 700.0, 42),
}
# the constant-speed lead at 20 m/s has a 12..60 m headway band; start in its middle
GOLDEN_GAP = 36.0


@dataclass
class FixtureStatus:
    ok: bool
    differing: list = field(default_factory=list)
    missing: list = field(default_factory=list)
    config_hash_ok: bool = True

    def summary(self) -> str:
        if self.ok:
            return "fixtures up to date"
        parts = []
        if not self.config_hash_ok:
            parts.append("config hash mismatch: default config changed since fixtures were generated")
        parts += [f"differs: {p}" for p in self.differing]
        parts += [f"missing: {p}" for p in self.missing]
        return "\n".join(parts)


def default_fixture_dir() -> Path:
    return Path(__file__).resolve().parents[2] / "fixtures"


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_fixtures(out: Path, seed_offset: int = 0, config_text: str | None = None) -> list[str]:
    """Generate every fixture file into ``out``; returns the relative paths written."""
    out = Path(out)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    (out / "golden").mkdir(parents=True, exist_ok=True)
    written = []
    traces = {}
    for name, (kind, params, duration, seed) in TRACE_SPECS.items():
        tr = synth_trace(kind, dict(params), duration, seed + seed_offset)
        traces[name] = tr
        rel = f"traces/{name}.csv"
        write_trace_csv(tr, out / rel)
        written.append(rel)
    config_text = config_text or default_config_text()
    cfg = replace(config_from_text(config_text).sim, initial_gap=GOLDEN_GAP, noise=NoiseModel(0.0, 0))
    rec = run(cfg, traces["constant"])
    rel = "golden/constant_record.csv"
    rec.write_csv(out / rel)
    written.append(rel)
    manifest = {
        "config_hash": config_hash(config_text),
        "files": {r: _digest(out / r) for r in written},
    }
    (out / "MANIFEST.yaml").write_text(yaml.safe_dump(manifest, sort_keys=True))
    return written


def regenerate_fixtures(directory=None, check_only: bool = True, seed_offset: int = 0,
                        config_text: str | None = None) -> FixtureStatus:
    """Regenerate fixtures and compare with ``directory``.

    With ``check_only`` the directory is left untouched and drift is
    reported; otherwise the directory is rewritten first (status then
    reflects the fresh files, i.e. ok). ``config_text`` stands in for the
    packaged default config.
    """
    config_text = config_text or default_config_text()
    directory = Path(directory) if directory else default_fixture_dir()
    if not check_only:
        write_fixtures(directory, seed_offset, config_text)
    with tempfile.TemporaryDirectory() as tmp:
        fresh = Path(tmp)
        written = write_fixtures(fresh, seed_offset, config_text)
        differing, missing = [], []
        for rel in written:
            have = directory / rel
            if not have.is_file():
                missing.append(rel)
            elif have.read_bytes() != (fresh / rel).read_bytes():
                differing.append(rel)
    hash_ok = True
    man = directory / "MANIFEST.yaml"
    if man.is_file():
        recorded = (yaml.safe_load(man.read_text()) or {}).get("config_hash")
        hash_ok = recorded == config_hash(config_text)
    else:
        missing.append("MANIFEST.yaml")
    return FixtureStatus(not (differing or missing) and hash_ok, differing, missing, hash_ok)
