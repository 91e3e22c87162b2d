"""Minimal JSON chat-endpoint client used by the optional HTTP-backed ports."""

from __future__ import annotations

import os
from typing import Any, Callable

import requests

from .errors import EndpointError


class ChatEndpoint:
    """POSTs chat messages to a JSON endpoint and extracts the reply text.

    The auth token is read from the environment variable named by
    ``auth_env`` and sent as a bearer header when present. ``post`` is
    injectable for tests.
    """

    def __init__(
        self,
        url: str,
        model: str = "default",
        auth_env: str = "TRAJMEM_API_KEY",
        timeout: float = 30.0,
        retries: int = 2,
        post: Callable[..., Any] | None = None,
    ) -> None:
        self.url = url
        self.model = model
        self.auth_env = auth_env
        self.timeout = timeout
        self.retries = retries
        self._post = post or requests.post

    def complete(self, prompt: str, system: str | None = None) -> str:
        messages = []
        if system:
            messages.append({"role": "system", "content": system})
        messages.append({"role": "user", "content": prompt})
        payload = {"model": self.model, "messages": messages}
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.auth_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        last_error: Exception | None = None
        for _ in range(self.retries + 1):
            try:
                response = self._post(
                    self.url, json=payload, headers=headers, timeout=self.timeout
                )
                response.raise_for_status()
                return _extract_text(response.json())
            except Exception as exc:  # noqa: BLE001 - retried, re-raised below
                last_error = exc
        raise EndpointError(f"chat endpoint {self.url} failed: {last_error}")


def _extract_text(data: Any) -> str:
    if isinstance(data, dict):
        choices = data.get("choices")
        if isinstance(choices, list) and choices:
            message = choices[0].get("message", {})
            if isinstance(message, dict) and isinstance(message.get("content"), str):
                return message["content"]
            if isinstance(choices[0].get("text"), str):
                return choices[0]["text"]
        for key in ("content", "text", "completion"):
            if isinstance(data.get(key), str):
                return data[key]
    raise EndpointError("chat endpoint response has no text content")
