"""Render table HTML to images via an external renderer subprocess, and
preprocess rendered images into network-ready tensors.

The renderer is any executable honoring the call
``<renderer> --format png --quality 100 <input.html> <output.png>``.
Resolution order: the ``TABLESIEVE_RENDERER`` environment variable, an
explicit argument, ``wkhtmltoimage`` on PATH, then the built-in
pure-Python rasterizer (run as a subprocess under the same contract).
"""

from __future__ import annotations

import json
import logging
import os
import shutil
import subprocess
import sys
import tempfile
from dataclasses import dataclass
from html.parser import HTMLParser
from pathlib import Path
from urllib.parse import urljoin, urlparse

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DataError, RenderFailed

log = logging.getLogger(__name__)

VIEWPORT_WIDTH = 1024
DEFAULT_TIMEOUT_SECS = 30.0


@dataclass(frozen=True)
class RenderJob:
    example_id: str
    html_path: Path
    output_path: Path
    asset_policy: str = "offline"
    timeout: float = DEFAULT_TIMEOUT_SECS

    def validate(self) -> None:
        if self.timeout <= 0:
            raise DataError("render timeout must be > 0")
        if self.asset_policy not in ("fetch", "offline"):
            raise DataError(f"unknown asset policy {self.asset_policy!r}")


@dataclass(frozen=True)
class ImageTensor:
    data: np.ndarray  # 224 x 224 x 3, finite
    preprocessing_id: str


def resolve_renderer(explicit: str | None = None) -> list[str]:
    """Command prefix for the renderer subprocess."""
    env = os.environ.get("TABLESIEVE_RENDERER")
    if env:
        return [env]
    if explicit:
        return [explicit]
    found = shutil.which("wkhtmltoimage")
    if found:
        return [found]
    return [sys.executable, "-m", "tablesieve.rasterize"]


# ---------------------------------------------------------------------------
# Asset fetching


class _AssetCollector(HTMLParser):
    def __init__(self) -> None:
        super().__init__(convert_charrefs=False)
        self.refs: list[tuple[str, str]] = []  # (kind, url)

    def handle_starttag(self, tag, attrs):
        d = dict(attrs)
        if tag == "link" and d.get("rel", "").lower() == "stylesheet" and d.get("href"):
            self.refs.append(("css", d["href"]))
        elif tag == "img" and d.get("src"):
            self.refs.append(("img", d["src"]))


def fetch_assets(
    html: str, base_url: str, out_dir, timeout: float = 10.0
) -> tuple[str, list[Path]]:
    """Download stylesheet/image references into out_dir and rewrite the
    references to local paths. Every failure is soft: the original
    reference stays and a warning is logged. A host that fails DNS
    resolution is skipped for all subsequent assets."""
    import requests

    collector = _AssetCollector()
    try:
        collector.feed(html)
        collector.close()
    except Exception as exc:
        log.warning("asset scan failed: %s", exc)
        return html, []
    if not collector.refs:
        return html, []
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dead_hosts: set[str] = set()
    saved: list[Path] = []
    rewrites: dict[str, str] = {}
    for i, (kind, ref) in enumerate(collector.refs):
        if ref in rewrites:
            continue
        absolute = urljoin(base_url, ref)
        host = urlparse(absolute).netloc
        if host in dead_hosts:
            log.warning("skipping %s (host %s unresolvable)", ref, host)
            continue
        try:
            resp = requests.get(absolute, timeout=timeout)
            resp.raise_for_status()
        except requests.exceptions.ConnectionError as exc:
            if _is_dns_failure(exc):
                dead_hosts.add(host)
            log.warning("asset fetch failed for %s: %s", absolute, exc)
            continue
        except requests.exceptions.RequestException as exc:
            log.warning("asset fetch failed for %s: %s", absolute, exc)
            continue
        ext = Path(urlparse(absolute).path).suffix
        if not ext:
            ext = ".css" if kind == "css" else ".img"
        local = out_dir / f"asset_{i:04d}{ext}"
        local.write_bytes(resp.content)
        saved.append(local)
        rewrites[ref] = local.name
    for ref, local_name in rewrites.items():
        for quote in ('"', "'"):
            html = html.replace(f"{quote}{ref}{quote}", f"{quote}{local_name}{quote}")
    return html, saved


def _is_dns_failure(exc: Exception) -> bool:
    seen = set()
    cursor: BaseException | None = exc
    while cursor is not None and id(cursor) not in seen:
        seen.add(id(cursor))
        text = str(cursor)
        if "getaddrinfo" in text or "Name or service not known" in text or (
            "NameResolutionError" in type(cursor).__name__
        ):
            return True
        cursor = cursor.__cause__ or cursor.__context__
    return False


# ---------------------------------------------------------------------------
# Rendering


def wrap_fragment(table_html: str) -> str:
    """Minimal standalone document around a table fragment."""
    return (
        "<!DOCTYPE html><html><head><meta charset=\"utf-8\"></head>"
        f"<body>{table_html}</body></html>"
    )


def render_table(job: RenderJob, renderer: str | None = None) -> Path:
    """Run the renderer subprocess for one job; returns the output path.

    Raises RenderFailed (with captured stderr) on non-zero exit, timeout,
    or an output that does not decode to a nonempty image.
    """
    job.validate()
    html = Path(job.html_path).read_text()
    cmd_prefix = resolve_renderer(renderer)
    out_path = Path(job.output_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory(prefix="tablesieve-render-") as tmp:
        in_path = Path(tmp) / "input.html"
        in_path.write_text(wrap_fragment(html) if "<body" not in html else html)
        cmd = [*cmd_prefix, "--format", "png", "--quality", "100",
               str(in_path), str(out_path)]
        try:
            proc = subprocess.run(
                cmd, capture_output=True, timeout=job.timeout, text=True
            )
        except subprocess.TimeoutExpired as exc:
            raise RenderFailed(
                f"renderer timed out after {job.timeout}s for {job.example_id}",
                stderr=(exc.stderr or b"").decode() if isinstance(exc.stderr, bytes)
                else (exc.stderr or ""),
            ) from exc
        except OSError as exc:
            raise RenderFailed(
                f"renderer could not be launched: {exc}", stderr=""
            ) from exc
    if proc.returncode != 0:
        raise RenderFailed(
            f"renderer exited {proc.returncode} for {job.example_id}",
            stderr=proc.stderr,
        )
    if not out_path.exists() or out_path.stat().st_size == 0:
        raise RenderFailed(
            f"renderer produced no output for {job.example_id}", stderr=proc.stderr
        )
    try:
        with Image.open(out_path) as img:
            width, height = img.size
    except (UnidentifiedImageError, OSError) as exc:
        raise RenderFailed(
            f"renderer output for {job.example_id} is not a decodable image: {exc}",
            stderr=proc.stderr,
        ) from exc
    if width < 1 or height < 1:
        raise RenderFailed(
            f"renderer produced a zero-area image for {job.example_id}",
            stderr=proc.stderr,
        )
    return out_path


def write_render_log(path, entries: list[dict]) -> None:
    """JSONL render log; one object per job with viewport and status."""
    with open(path, "w") as f:
        for entry in entries:
            f.write(json.dumps(entry, sort_keys=True) + "\n")


def render_log_entry(example_id: str, status: str, image_path=None, error=None) -> dict:
    return {
        "id": example_id,
        "status": status,
        "image_path": str(image_path) if image_path else None,
        "error": error,
        "viewport": VIEWPORT_WIDTH,
    }


# ---------------------------------------------------------------------------
# Preprocessing


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample with half-pixel centers, no aspect preservation."""
    h, w = img.shape[:2]
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    y0f = np.floor(ys)
    x0f = np.floor(xs)
    fy = (ys - y0f)[:, None, None]
    fx = (xs - x0f)[None, :, None]
    y0 = np.clip(y0f, 0, h - 1).astype(np.intp)
    y1 = np.clip(y0f + 1, 0, h - 1).astype(np.intp)
    x0 = np.clip(x0f, 0, w - 1).astype(np.intp)
    x1 = np.clip(x0f + 1, 0, w - 1).astype(np.intp)
    img = img.astype(np.float64)
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bottom = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return top * (1 - fy) + bottom * fy


def preprocess(image_path, manifest) -> ImageTensor:
    """Decode, squash to 224x224, apply the manifest's channel order,
    mean subtraction, and scale. Returns a tensor stamped with the
    manifest's preprocessing id."""
    try:
        with Image.open(image_path) as img:
            rgb = np.asarray(img.convert("RGB"), dtype=np.float64)
    except (UnidentifiedImageError, OSError) as exc:
        raise DataError(f"cannot decode image {image_path}: {exc}") from exc
    if rgb.size == 0:
        raise DataError(f"image {image_path} has zero area")
    data = resize_bilinear(rgb, 224, 224)
    pp = manifest.preprocessing
    if pp["channel_order"] == "bgr":
        data = data[:, :, ::-1]
    data = (data - np.asarray(pp["means"], dtype=np.float64)) * float(pp["scale"])
    if not np.isfinite(data).all():
        raise DataError(f"preprocessed tensor for {image_path} is not finite")
    return ImageTensor(data=data, preprocessing_id=manifest.preprocessing_id)
