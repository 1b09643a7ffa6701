"""
Profile and Field File Parser

Reads variance profiles from presets, inline mappings, JSON or TOML files
(paths, bytes or uploads) and reads/writes field dumps and result files.

Field dumps come in two formats:
    .npz  arrays `values` (and `levels` when kept) plus a JSON `header` string
    .csv  first line `# {json header}`, then N rows of N comma-separated values
"""

import json
import subprocess
import tomllib
from functools import lru_cache
from io import StringIO
from pathlib import Path
from typing import Any, BinaryIO

import numpy as np
import pandas as pd

from src import __version__
from src.errors import ConfigError, ProfileError
from src.lattice import GridSize
from src.profile import PRESETS, StepProfile
from src.samplers import FieldSample


@lru_cache(maxsize=1)
def version_string() -> str:
    """Package version with a git-describe suffix when run from a checkout."""
    try:
        described = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5,
            cwd=Path(__file__).resolve().parent,
        )
    except (OSError, subprocess.SubprocessError):
        return __version__
    tag = described.stdout.strip()
    return f"{__version__}+{tag}" if described.returncode == 0 and tag else __version__


def profile_from_mapping(data: dict[str, Any], strict: bool = False) -> StepProfile:
    """
    Build a profile from {"sigmas": [...], "lambdas": [...]}.

    "variances" (sigma^2 values) may replace "sigmas"; a nested "profile" table
    is unwrapped first.

    Raises:
        ProfileError: If keys are missing or the profile is invalid
    """
    if "profile" in data and isinstance(data["profile"], dict):
        data = data["profile"]
    if "lambdas" not in data or not ({"sigmas", "variances"} & data.keys()):
        raise ProfileError("profile needs 'lambdas' and 'sigmas' (or 'variances')")
    if "sigmas" in data:
        sigmas = [float(s) for s in data["sigmas"]]
    else:
        sigmas = [float(v) ** 0.5 for v in data["variances"]]
    return StepProfile.create(sigmas, [float(x) for x in data["lambdas"]], strict=strict)


def parse_profile_content(content: str, strict: bool = False) -> StepProfile:
    """
    Parse a JSON or TOML profile document.

    Time Complexity: O(M) where M is the number of segments

    Args:
        content: Document text; JSON when it starts with '{', TOML otherwise
        strict: Reject unnormalized profiles instead of rescaling

    Returns:
        StepProfile

    Raises:
        ProfileError: If the document cannot be parsed
    """
    text = content.strip()
    if not text:
        raise ProfileError("empty profile document")
    try:
        data = json.loads(text) if text.startswith("{") else tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ProfileError(f"could not parse profile document: {exc}") from exc
    return profile_from_mapping(data, strict)


def load_profile(source: str | dict | bytes | BinaryIO | StepProfile,
                 strict: bool = False) -> StepProfile:
    """
    Resolve a profile from a preset name, mapping, file path, bytes or file object.

    Raises:
        ProfileError: If the source is unknown or malformed
    """
    if isinstance(source, StepProfile):
        return source
    if isinstance(source, dict):
        return profile_from_mapping(source, strict)
    if isinstance(source, str):
        if source in PRESETS:
            return StepProfile.preset(source)
        path = Path(source)
        if path.is_file():
            return parse_profile_content(path.read_text(encoding="utf-8"), strict)
        if source.lstrip().startswith("{"):
            return parse_profile_content(source, strict)
        raise ProfileError(f"unknown profile '{source}': not a preset and not a file")
    content = source if isinstance(source, bytes) else source.read()
    if isinstance(content, bytes):
        try:
            content = content.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ProfileError("profile file is not UTF-8 text") from exc
    return parse_profile_content(content, strict)


def field_header(sample: FieldSample) -> dict[str, Any]:
    header = sample.header()
    header["version"] = version_string()
    return header


def write_field(sample: FieldSample, path: str | Path) -> Path:
    """
    Dump a field sample as .npz or .csv (chosen by the file suffix).

    Raises:
        ConfigError: If the suffix is neither .npz nor .csv
    """
    path = Path(path)
    header = json.dumps(field_header(sample), sort_keys=True)
    if path.suffix == ".npz":
        arrays = {"values": sample.values, "header": np.array(header)}
        if sample.levels is not None:
            arrays["levels"] = sample.levels
        np.savez(path, **arrays)
    elif path.suffix == ".csv":
        body = pd.DataFrame(sample.values).to_csv(header=False, index=False, float_format="%.17g")
        path.write_text(f"# {header}\n{body}", encoding="utf-8")
    else:
        raise ConfigError(f"unsupported field format '{path.suffix}' (use .npz or .csv)")
    return path


def _sample_from(header: dict[str, Any], values: np.ndarray, levels: np.ndarray | None) -> FieldSample:
    profile = profile_from_mapping(header["profile"]) if header.get("profile") else None
    return FieldSample(header["kind"], GridSize(int(header["n"])), values, int(header["seed"]),
                       profile, levels, dict(header.get("extra", {})))


def read_field(path: str | Path) -> FieldSample:
    """
    Restore a FieldSample written by write_field.

    Raises:
        ConfigError: If the file is not a field dump
    """
    path = Path(path)
    if path.suffix == ".npz":
        with np.load(path) as data:
            header = json.loads(str(data["header"]))
            levels = data["levels"] if "levels" in data.files else None
            return _sample_from(header, data["values"], levels)
    if path.suffix == ".csv":
        first, _, body = path.read_text(encoding="utf-8").partition("\n")
        if not first.startswith("# "):
            raise ConfigError(f"{path} has no field header line")
        values = pd.read_csv(StringIO(body), header=None).to_numpy(dtype=float)
        return _sample_from(json.loads(first[2:]), values, None)
    raise ConfigError(f"unsupported field format '{path.suffix}' (use .npz or .csv)")


def write_result(payload: dict[str, Any], table: pd.DataFrame | None, path: str | Path | None,
                 fmt: str) -> str:
    """
    Render a result as JSON or as CSV with a `# {json}` header line.

    The text is written to `path` when given and returned either way.
    """
    if fmt == "csv" and table is not None:
        header = json.dumps(payload.get("meta", {}), sort_keys=True)
        text = f"# {header}\n" + table.to_csv(index=False, float_format="%.10g")
    else:
        text = json.dumps(payload, sort_keys=True, indent=2, default=_jsonable) + "\n"
    if path:
        Path(path).write_text(text, encoding="utf-8")
    return text


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def read_config_file(path: str | Path) -> dict[str, Any]:
    """
    Load a JSON or TOML experiment config file.

    Raises:
        ConfigError: If the file is missing or malformed
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    text = path.read_text(encoding="utf-8")
    try:
        if path.suffix == ".toml":
            return tomllib.loads(text)
        return json.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"could not parse {path}: {exc}") from exc
