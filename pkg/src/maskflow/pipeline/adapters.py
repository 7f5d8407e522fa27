"""External model stages run as subprocesses or through a file-drop directory.

Each stage has a file contract:

* ``i2v``: image ``{in}`` and prompt ``{prompt}`` -> frame directory ``{out}``
* ``detect_segment``: image ``{in}`` and object prompt ``{prompt}`` -> grayscale mask image ``{out}``
* ``inpaint``: frame directory ``{in}``, mask directory ``{mask}`` and ``{prompt}`` -> frame directory ``{out}``

In file-drop mode a JSON job file is written to ``drop_dir`` and the stage
waits for the worker to create ``{out}`` and the sentinel ``{out}.done``.
"""
from __future__ import annotations

import json
import logging
import shlex
import subprocess
import sys
import time
import uuid
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from ..core import MediaError, ValidationError, load_mask, load_video

log = logging.getLogger(__name__)

STAGES = {
    "i2v": ("in", "out", "prompt"),
    "detect_segment": ("in", "out", "prompt"),
    "inpaint": ("in", "out", "mask", "prompt"),
}


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str, returncode: Optional[int] = None):
        super().__init__(f"{stage}: {message}")
        self.stage = stage
        self.returncode = returncode


class StageTimeout(StageError):
    pass


@dataclass(frozen=True)
class AdapterSpec:
    name: str
    command_template: str = ""
    timeout: float = 600.0
    mode: str = "invoke"
    drop_dir: Optional[str] = None
    version: str = ""
    poll_interval: float = 0.05

    def __post_init__(self):
        if self.name not in STAGES:
            raise ValidationError(f"unknown adapter stage {self.name!r}")
        if self.mode not in ("invoke", "file-drop"):
            raise ValidationError(f"unknown adapter mode {self.mode!r}")
        if self.timeout <= 0:
            raise ValidationError("timeout must be positive")
        if self.mode == "invoke":
            missing = [p for p in STAGES[self.name] if "{" + p + "}" not in self.command_template]
            if missing:
                raise ValidationError(f"{self.name} template lacks placeholders {missing}")
        elif not self.drop_dir:
            raise ValidationError(f"{self.name}: file-drop mode needs drop_dir")

    @classmethod
    def from_config(cls, name: str, d: dict, base: Path = Path(".")) -> "AdapterSpec":
        drop = d.get("drop_dir")
        if drop is not None:
            drop = str((base / drop).resolve())
        return cls(
            name=name,
            command_template=d.get("command", ""),
            timeout=float(d.get("timeout", 600.0)),
            mode=d.get("mode", "invoke"),
            drop_dir=drop,
            version=str(d.get("version", "")),
        )

    def provenance(self) -> dict:
        return {"mode": self.mode, "command": self.command_template, "version": self.version}


def render_command(template: str, values: dict) -> list:
    """Split first, then substitute, so paths with spaces stay one argument."""
    mapping = {"python": sys.executable}
    mapping.update({k: str(v) for k, v in values.items()})
    try:
        return [tok.format_map(mapping) for tok in shlex.split(template)]
    except KeyError as e:
        raise ValidationError(f"template placeholder {e} has no value") from e


def check_outputs(stage: str, out: Path) -> None:
    try:
        if stage == "detect_segment":
            load_mask(out)
        else:
            load_video(out)
    except (MediaError, ValidationError) as e:
        raise StageError(stage, f"invalid output at {out}: {e}") from e


def _invoke(adapter: AdapterSpec, values: dict) -> None:
    argv = render_command(adapter.command_template, values)
    log.debug("running %s: %s", adapter.name, argv)
    try:
        proc = subprocess.run(argv, capture_output=True, text=True, timeout=adapter.timeout)
    except subprocess.TimeoutExpired as e:
        raise StageTimeout(adapter.name, f"timed out after {adapter.timeout}s") from e
    except OSError as e:
        raise StageError(adapter.name, f"cannot start {argv[0]}: {e}") from e
    if proc.returncode != 0:
        tail = (proc.stderr or "").strip().splitlines()[-3:]
        raise StageError(adapter.name, f"exit code {proc.returncode}: {' | '.join(tail)}", proc.returncode)


def _file_drop(adapter: AdapterSpec, values: dict) -> None:
    drop = Path(adapter.drop_dir)
    drop.mkdir(parents=True, exist_ok=True)
    job = {"stage": adapter.name, **{k: str(v) for k, v in values.items()}}
    job_path = drop / f"{adapter.name}-{uuid.uuid4().hex}.json"
    tmp = job_path.with_suffix(".tmp")
    tmp.write_text(json.dumps(job, sort_keys=True))
    tmp.rename(job_path)
    sentinel = Path(str(values["out"]) + ".done")
    deadline = time.monotonic() + adapter.timeout
    while not sentinel.exists():
        if time.monotonic() > deadline:
            raise StageTimeout(adapter.name, f"no output at {values['out']} after {adapter.timeout}s")
        time.sleep(adapter.poll_interval)


def run_stage(adapter: AdapterSpec, inputs: dict) -> Path:
    """Run one external stage and validate its declared output. Returns the output path."""
    for key in STAGES[adapter.name]:
        if key not in inputs:
            raise ValidationError(f"{adapter.name} needs input {key!r}")
    for key in ("in", "mask"):
        if key in inputs and not Path(inputs[key]).exists():
            raise StageError(adapter.name, f"input {key}={inputs[key]} does not exist")
    out = Path(inputs["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    if adapter.mode == "invoke":
        _invoke(adapter, inputs)
    else:
        _file_drop(adapter, inputs)
    check_outputs(adapter.name, out)
    return out
