"""Shared HTTP transport for model backends.

Both the cue and planner remote backends speak the same wire protocol:
HTTP POST of a JSON body {"prompt": ..., "image": ...?} to the endpoint,
plain-text response body. One retry with exponential backoff.
"""

from __future__ import annotations

import base64
import time
from pathlib import Path

import requests

from .domain import AlignBotError


class BackendTimeout(AlignBotError):
    pass


class BackendUnavailable(AlignBotError):
    pass


def image_payload(image_ref: str | None, transport: str) -> dict | None:
    """Build the image part of the body per the configured transport:
    "reference" sends the locator, "inline" sends base64 bytes, "none"
    omits the image entirely. Negotiated via config, never sniffed."""
    if image_ref is None or transport == "none":
        return None
    if transport == "reference":
        return {"kind": "reference", "ref": image_ref}
    if transport == "inline":
        data = Path(image_ref).read_bytes()
        return {"kind": "inline", "data": base64.b64encode(data).decode("ascii")}
    raise AlignBotError(f"unknown image transport {transport!r}")


def post_prompt(
    endpoint_url: str,
    prompt: str,
    image: dict | None,
    timeout: float,
    retries: int = 1,
    backoff: float = 0.5,
) -> str:
    """POST the prompt, return the plain-text response body. Retries once
    on timeout/connection errors with exponential backoff."""
    body: dict = {"prompt": prompt}
    if image is not None:
        body["image"] = image
    last: Exception | None = None
    for attempt in range(retries + 1):
        try:
            resp = requests.post(endpoint_url, json=body, timeout=timeout)
            resp.raise_for_status()
            return resp.text
        except requests.Timeout as exc:
            last = BackendTimeout(f"{endpoint_url} timed out after {timeout}s")
            last.__cause__ = exc
        except requests.RequestException as exc:
            last = BackendUnavailable(f"{endpoint_url} unavailable: {exc}")
            last.__cause__ = exc
        if attempt < retries:
            time.sleep(backoff * (2**attempt))
    assert last is not None
    raise last
