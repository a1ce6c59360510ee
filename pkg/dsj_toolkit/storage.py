"""Configuration loading and result persistence.

Floats are written with ``repr`` so every value parses back exactly, and
every JSON document is written with sorted keys. Together this makes a
rerun with identical inputs produce byte-identical files.
"""

import csv
import hashlib
import io
import json
import logging
import os
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Union

from pydantic import ValidationError

from dsj_toolkit import __version__
from dsj_toolkit.exceptions import (
    ConfigError,
    ConfigParseError,
    ConfigValidationError,
    StorageError,
    UnknownKeyError,
)
from dsj_toolkit.models import ModelBundle
from dsj_toolkit.schemas import DSJConfig, config_error_from, schema_has_path

logger = logging.getLogger(__name__)

MANIFEST_NAME = 'manifest.json'
DEFAULT_CONFIG_PATH = Path(__file__).with_name('default_config.json')


@dataclass(frozen=True)
class Table:
    """Rows of a CSV file under a header."""

    header: Sequence[str]
    rows: Sequence[Sequence[Any]]


@dataclass(frozen=True)
class OutputRecord:
    path: str
    sha256: str
    size_bytes: int


@dataclass(frozen=True)
class RunManifest:
    """Inputs and outputs of one run.

    Attributes:
        config_sha256: Digest of the effective configuration
        tool_version: Version of the toolkit that wrote the outputs
        command: Subcommand and flags
        outputs: Written files relative to the output directory
        timestamp: UTC time of the run (SOURCE_DATE_EPOCH if set)
        path: Location of the manifest file
    """

    config_sha256: str
    tool_version: str
    command: str
    outputs: tuple
    timestamp: str
    path: Path

    def to_dict(self) -> dict:
        return {
            'config_sha256': self.config_sha256,
            'tool_version': self.tool_version,
            'command': self.command,
            'outputs': [
                {
                    'path': record.path,
                    'sha256': record.sha256,
                    'size_bytes': record.size_bytes,
                }
                for record in self.outputs
            ],
            'timestamp': self.timestamp,
        }


Artifact = Union[Table, Mapping]


def _cell(value: Any) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _render_csv(table: Table) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(table.header)
    for row in table.rows:
        writer.writerow([_cell(value) for value in row])
    return buffer.getvalue()


def _render_json(document: Any) -> str:
    return json.dumps(document, indent=2, sort_keys=True) + '\n'


def _write_text_atomic(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + '.tmp')
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp.write_text(text, encoding='utf-8')
        tmp.replace(path)
    except OSError as exc:
        raise StorageError(f'Cannot write {path.name}', str(path)) from exc


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open('rb') as handle:
        for chunk in iter(lambda: handle.read(1024 * 1024), b''):
            digest.update(chunk)
    return digest.hexdigest()


def write_csv(path: Path, table: Table) -> Path:
    """Write a table as CSV."""
    _write_text_atomic(Path(path), _render_csv(table))
    return Path(path)


def write_json(path: Path, document: Any) -> Path:
    """Write a JSON document with sorted keys."""
    _write_text_atomic(Path(path), _render_json(document))
    return Path(path)


def read_json(path: Path) -> Any:
    """Read a JSON document.

    Raises:
        StorageError: If the file cannot be read
        ConfigParseError: If the text is not valid JSON
    """
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as exc:
        raise StorageError(f'Cannot read {path.name}', str(path)) from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigParseError(
            f'Invalid JSON in {path.name}: {exc.msg}', exc.lineno, exc.colno
        ) from exc


def _parse_override(item: str) -> tuple:
    key, sep, text = item.partition('=')
    key = key.strip()
    if not sep or not key:
        raise ConfigError(
            'Overrides must look like section.key=value', [item]
        )
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        value = text
    return key.split('.'), value


def apply_overrides(document: dict, overrides: Iterable[str]) -> dict:
    """Set dotted keys of a raw configuration document.

    Args:
        document: Parsed configuration, modified in place
        overrides: Items of the form ``section.key=value``; values are
            parsed as JSON and kept as text when that fails

    Returns:
        The updated document

    Raises:
        UnknownKeyError: If a key is not part of the schema
    """
    unknown = []
    for item in overrides:
        parts, value = _parse_override(item)
        if not schema_has_path(parts):
            unknown.append('.'.join(parts))
            continue
        node = document
        for part in parts[:-1]:
            child = node.get(part)
            if not isinstance(child, dict):
                child = node[part] = {}
            node = child
        node[parts[-1]] = value
        logger.debug('Override %s=%r', '.'.join(parts), value)
    if unknown:
        raise UnknownKeyError('Overrides name unknown keys', unknown)
    return document


def load_config(
    path: Path = DEFAULT_CONFIG_PATH, overrides: Iterable[str] = ()
) -> DSJConfig:
    """Parse, override and schema-check a configuration file.

    Args:
        path: JSON configuration file
        overrides: ``section.key=value`` items applied before validation

    Returns:
        Schema-checked document, still in millimetres and degrees

    Raises:
        StorageError: If the file cannot be read
        ConfigParseError: If the file is not valid JSON
        UnknownKeyError: If the document or an override names unknown keys
        ConfigValidationError: If values violate the schema
    """
    document = read_json(path)
    if not isinstance(document, dict):
        raise ConfigValidationError(
            'Configuration must be a JSON object', [str(path)]
        )
    apply_overrides(document, overrides)
    try:
        return DSJConfig.model_validate(document)
    except ValidationError as exc:
        raise config_error_from(exc) from exc


def config_digest(config: DSJConfig) -> str:
    """SHA-256 of the canonical JSON form of a configuration."""
    text = json.dumps(config.model_dump(mode='json'), sort_keys=True)
    return hashlib.sha256(text.encode('utf-8')).hexdigest()


def save_bundle(bundle: ModelBundle, path: Path) -> Path:
    """Write a validated bundle in SI units."""
    return write_json(path, bundle.to_dict())


def load_bundle(path: Path) -> ModelBundle:
    """Read a bundle written by :func:`save_bundle`."""
    return ModelBundle.from_dict(read_json(path))


def _timestamp() -> str:
    epoch = os.environ.get('SOURCE_DATE_EPOCH')
    moment = (
        datetime.fromtimestamp(int(epoch), tz=timezone.utc)
        if epoch
        else datetime.now(tz=timezone.utc)
    )
    return moment.isoformat(timespec='seconds')


def write_results(
    artifacts: Mapping[str, Artifact],
    out_dir: Path,
    config_sha256: str,
    command: str,
) -> RunManifest:
    """Write every artifact, then the manifest describing them.

    Args:
        artifacts: File name to table (CSV) or mapping (JSON)
        out_dir: Output directory, created if missing
        config_sha256: Digest of the effective configuration
        command: Subcommand and flags of the run

    Returns:
        Manifest of the run

    Raises:
        StorageError: If a file cannot be written
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise StorageError(
            'Cannot create output directory', str(out_dir)
        ) from exc

    records = []
    for name, artifact in artifacts.items():
        target = out_dir / name
        if isinstance(artifact, Table):
            write_csv(target, artifact)
        else:
            write_json(target, artifact)
        records.append(
            OutputRecord(
                path=name,
                sha256=_sha256_file(target),
                size_bytes=target.stat().st_size,
            )
        )
        logger.debug('Wrote %s', target)

    manifest = RunManifest(
        config_sha256=config_sha256,
        tool_version=__version__,
        command=command,
        outputs=tuple(records),
        timestamp=_timestamp(),
        path=out_dir / MANIFEST_NAME,
    )
    write_json(manifest.path, manifest.to_dict())
    logger.info('Wrote %d files to %s', len(records), out_dir)
    return manifest
