"""Retrieve a UCI HAR archive, verify its digest and unpack it.

The library itself never touches the network; this module backs the
``fetch`` command only.
"""

from __future__ import annotations

import hashlib
import io
import shutil
import tempfile
import urllib.error
import urllib.request
import zipfile
from pathlib import Path
from urllib.parse import urlparse

from .errors import FetchError, IngestError, IntegrityError

DEFAULT_URL = "https://archive.ics.uci.edu/static/public/240/human+activity+recognition+using+smartphones.zip"
_CHUNK = 1 << 20


def _read_source(source: str, timeout: float) -> bytes:
    scheme = urlparse(source).scheme
    if scheme in ("http", "https", "ftp", "file"):
        try:
            with urllib.request.urlopen(source, timeout=timeout) as resp:
                buf = io.BytesIO()
                while chunk := resp.read(_CHUNK):
                    buf.write(chunk)
                return buf.getvalue()
        except (urllib.error.URLError, TimeoutError, ConnectionError) as exc:
            raise FetchError(f"could not retrieve {source}: {exc}") from None
    path = Path(source)
    if not path.is_file():
        raise FetchError(f"no such archive: {source}")
    return path.read_bytes()


def _find_release(root: Path) -> Path | None:
    for cand in [root, *sorted(p for p in root.rglob("*") if p.is_dir())]:
        if (cand / "train" / "Inertial Signals").is_dir() and (cand / "test" / "Inertial Signals").is_dir():
            return cand
    return None


def _extract(blob: bytes, into: Path, depth: int = 0) -> None:
    try:
        with zipfile.ZipFile(io.BytesIO(blob)) as zf:
            for member in zf.infolist():
                target = (into / member.filename).resolve()
                if not target.is_relative_to(into.resolve()):
                    raise IntegrityError(f"archive member escapes destination: {member.filename}")
            zf.extractall(into)
    except zipfile.BadZipFile as exc:
        raise IntegrityError(f"archive is not a valid zip file: {exc}") from None
    if _find_release(into) is None and depth < 2:
        # the UCI download wraps the release zip in another zip
        for inner in sorted(into.rglob("*.zip")):
            _extract(inner.read_bytes(), inner.parent / inner.stem, depth + 1)


def fetch(source: str, dest, sha256: str, timeout: float = 60.0) -> Path:
    """Copy or download ``source`` and unpack the release into ``dest``.

    ``sha256`` is the expected hex digest of the archive bytes; a mismatch
    raises :class:`IntegrityError` before anything is written to ``dest``.
    """
    dest = Path(dest)
    blob = _read_source(source, timeout)
    digest = hashlib.sha256(blob).hexdigest()
    if digest.lower() != sha256.strip().lower():
        raise IntegrityError(f"sha256 mismatch for {source}: got {digest}, expected {sha256}")
    dest.parent.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory(dir=dest.parent) as tmp:
        tmp = Path(tmp)
        _extract(blob, tmp)
        release = _find_release(tmp)
        if release is None:
            raise IngestError("archive does not contain train/ and test/ with Inertial Signals/")
        if dest.exists():
            shutil.rmtree(dest)
        shutil.move(str(release), str(dest))
    return dest
