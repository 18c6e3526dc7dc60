"""Uniform object storage: local filesystem backend and an S3-protocol client.

Both backends expose the same five operations (put/get/list/head/delete) with
content-MD5 etags, bytewise-sorted listings, and an atomic put-if-absent that
the transaction log uses as its only concurrency-control primitive.

Keys are '/'-separated segments of [A-Za-z0-9._=-], at most 900 bytes. The
filesystem backend maps keys to paths under ``root/objects`` and stages
writes in ``root/tmp``; conditional puts become an os.link onto the final
path, which the kernel makes atomic.
"""

from __future__ import annotations

import hashlib
import http.client
import os
import re
import secrets
import ssl
import time
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from pathlib import Path
from urllib.parse import quote, urlsplit

from .errors import (
    BackendUnavailable,
    ConfigInvalid,
    InvalidKey,
    NotFound,
    PreconditionFailed,
)
from .sigv4 import EMPTY_PAYLOAD_SHA256, sign_request_v4, uri_encode_path

_SEGMENT_RE = re.compile(r"^[A-Za-z0-9._=-]+$")
MAX_KEY_BYTES = 900


def validate_key(key: str) -> str:
    if not key or key.startswith("/"):
        raise InvalidKey(key, "key must be non-empty with no leading '/'")
    if len(key.encode()) > MAX_KEY_BYTES:
        raise InvalidKey(key, f"key exceeds {MAX_KEY_BYTES} bytes")
    for segment in key.split("/"):
        if not _SEGMENT_RE.match(segment):
            raise InvalidKey(key, f"bad segment {segment!r}")
    return key


@dataclass(frozen=True)
class ObjectMeta:
    key: str
    size_bytes: int
    etag: str


class FsStore:
    """Filesystem-backed object store rooted at a local directory."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._objects = self.root / "objects"
        self._tmp = self.root / "tmp"
        self._objects.mkdir(parents=True, exist_ok=True)
        self._tmp.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self._objects / validate_key(key)

    def put(self, key: str, data: bytes, if_none_match: bool = False) -> ObjectMeta:
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self._tmp / f"put-{secrets.token_hex(8)}"
        try:
            with open(tmp, "wb") as f:
                f.write(data)
                f.flush()
                os.fsync(f.fileno())
            if if_none_match:
                try:
                    os.link(tmp, path)  # atomic no-replace
                except FileExistsError:
                    raise PreconditionFailed(key)
            else:
                os.replace(tmp, path)
                tmp = None
        finally:
            if tmp is not None:
                try:
                    os.unlink(tmp)
                except FileNotFoundError:
                    pass
        return ObjectMeta(key, len(data), hashlib.md5(data).hexdigest())

    def get(self, key: str) -> bytes:
        try:
            return self._path(key).read_bytes()
        except (FileNotFoundError, IsADirectoryError):
            raise NotFound(key)

    def head(self, key: str) -> ObjectMeta:
        data = self.get(key)
        return ObjectMeta(key, len(data), hashlib.md5(data).hexdigest())

    def delete(self, key: str) -> None:
        try:
            os.unlink(self._path(key))
        except FileNotFoundError:
            pass

    def list(self, prefix: str = "") -> list[ObjectMeta]:
        metas = []
        for dirpath, _, filenames in os.walk(self._objects):
            rel = os.path.relpath(dirpath, self._objects)
            for name in filenames:
                key = name if rel == "." else f"{rel}/{name}".replace(os.sep, "/")
                if key.startswith(prefix):
                    metas.append(self.head(key))
        metas.sort(key=lambda m: m.key)
        return metas


@dataclass
class S3Config:
    endpoint: str
    region: str
    access_key: str
    secret_key: str
    bucket: str
    path_style: bool = True

    def validate(self) -> None:
        scheme = urlsplit(self.endpoint).scheme
        if scheme not in ("http", "https"):
            raise ConfigInvalid("endpoint", f"{self.endpoint!r} must be http(s)")
        for field in ("region", "access_key", "secret_key", "bucket"):
            if not getattr(self, field):
                raise ConfigInvalid(field, "required for the s3 store")

    @classmethod
    def from_env(cls, env: dict | None = None) -> "S3Config":
        env = os.environ if env is None else env
        cfg = cls(
            endpoint=env.get("BRC_S3_ENDPOINT", ""),
            region=env.get("BRC_S3_REGION", ""),
            access_key=env.get("BRC_S3_ACCESS_KEY", ""),
            secret_key=env.get("BRC_S3_SECRET_KEY", ""),
            bucket=env.get("BRC_S3_BUCKET", ""),
        )
        cfg.validate()
        return cfg


class S3Store:
    """Client for any S3-compatible gateway, path-style addressing, SigV4."""

    def __init__(self, config: S3Config):
        config.validate()
        self.config = config
        split = urlsplit(config.endpoint)
        self._https = split.scheme == "https"
        self._host = split.netloc

    # -- request plumbing ---------------------------------------------------

    def _request(
        self,
        method: str,
        key: str | None,
        query: list[tuple[str, str]] | None = None,
        body: bytes = b"",
        extra_headers: dict[str, str] | None = None,
    ) -> tuple[int, dict[str, str], bytes]:
        path = f"/{self.config.bucket}" + (f"/{key}" if key else "")
        query = query or []
        payload_hash = hashlib.sha256(body).hexdigest() if body else EMPTY_PAYLOAD_SHA256
        timestamp = time.strftime("%Y%m%dT%H%M%SZ", time.gmtime())
        headers = {
            "host": self._host,
            "x-amz-date": timestamp,
            "x-amz-content-sha256": payload_hash,
        }
        if extra_headers:
            headers.update(extra_headers)
        authorization = sign_request_v4(
            method, path, query, headers, payload_hash,
            access_key=self.config.access_key,
            secret_key=self.config.secret_key,
            region=self.config.region,
            timestamp=timestamp,
        )
        send_headers = dict(headers)
        send_headers["Authorization"] = authorization
        if body:
            send_headers["Content-Length"] = str(len(body))
        url = uri_encode_path(path)
        if query:
            url += "?" + "&".join(f"{quote(k, safe='')}={quote(v, safe='')}" for k, v in query)
        try:
            if self._https:
                conn = http.client.HTTPSConnection(self._host, context=ssl.create_default_context())
            else:
                conn = http.client.HTTPConnection(self._host)
            try:
                conn.request(method, url, body=body or None, headers=send_headers)
                resp = conn.getresponse()
                data = resp.read()
                return resp.status, {k.lower(): v for k, v in resp.getheaders()}, data
            finally:
                conn.close()
        except OSError as exc:
            raise BackendUnavailable(f"s3 endpoint {self.config.endpoint}: {exc}")

    @staticmethod
    def _unexpected(status: int, body: bytes) -> BackendUnavailable:
        return BackendUnavailable(f"unexpected S3 status {status}: {body[:200]!r}")

    # -- operations ------------------------------------------------------------

    def put(self, key: str, data: bytes, if_none_match: bool = False) -> ObjectMeta:
        validate_key(key)
        extra = {"if-none-match": "*"} if if_none_match else {}
        status, headers, body = self._request("PUT", key, body=data, extra_headers=extra)
        if status == 412:
            raise PreconditionFailed(key)
        if status != 200:
            raise self._unexpected(status, body)
        etag = headers.get("etag", "").strip('"')
        return ObjectMeta(key, len(data), etag or hashlib.md5(data).hexdigest())

    def get(self, key: str) -> bytes:
        validate_key(key)
        status, _, body = self._request("GET", key)
        if status == 404:
            raise NotFound(key)
        if status != 200:
            raise self._unexpected(status, body)
        return body

    def head(self, key: str) -> ObjectMeta:
        validate_key(key)
        status, headers, body = self._request("HEAD", key)
        if status == 404:
            raise NotFound(key)
        if status != 200:
            raise self._unexpected(status, body)
        return ObjectMeta(key, int(headers.get("content-length", "0")), headers.get("etag", "").strip('"'))

    def delete(self, key: str) -> None:
        validate_key(key)
        status, _, body = self._request("DELETE", key)
        if status not in (200, 204, 404):
            raise self._unexpected(status, body)

    def list(self, prefix: str = "") -> list[ObjectMeta]:
        metas: list[ObjectMeta] = []
        token: str | None = None
        while True:
            query: list[tuple[str, str]] = [("list-type", "2")]
            if prefix:
                query.append(("prefix", prefix))
            if token:
                query.append(("continuation-token", token))
            status, _, body = self._request("GET", None, query=query)
            if status != 200:
                raise self._unexpected(status, body)
            page, token = _parse_list_response(body)
            metas.extend(page)
            if token is None:
                break
        metas.sort(key=lambda m: m.key)
        return metas

    def probe_conditional_put(self) -> None:
        """Refuse endpoints that ignore If-None-Match.

        Some S3-compatible gateways accept the header without honoring it,
        which silently breaks commit safety; probe with a throwaway key and
        raise BackendUnavailable if the second conditional put succeeds.
        """
        key = f"_probe/{secrets.token_hex(8)}"
        try:
            self.put(key, b"probe", if_none_match=True)
            try:
                self.put(key, b"probe", if_none_match=True)
            except PreconditionFailed:
                return
            raise BackendUnavailable(
                f"endpoint {self.config.endpoint} ignores If-None-Match; refusing unsafe store"
            )
        finally:
            try:
                self.delete(key)
            except BackendUnavailable:
                pass


def _strip_ns(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _parse_list_response(body: bytes) -> tuple[list[ObjectMeta], str | None]:
    try:
        root = ET.fromstring(body)
    except ET.ParseError as exc:
        raise BackendUnavailable(f"unparseable list response: {exc}")
    metas = []
    truncated = False
    token = None
    for child in root:
        tag = _strip_ns(child.tag)
        if tag == "Contents":
            fields = {_strip_ns(g.tag): (g.text or "") for g in child}
            metas.append(
                ObjectMeta(
                    key=fields.get("Key", ""),
                    size_bytes=int(fields.get("Size", "0")),
                    etag=fields.get("ETag", "").strip('"'),
                )
            )
        elif tag == "IsTruncated":
            truncated = (child.text or "").strip() == "true"
        elif tag == "NextContinuationToken":
            token = child.text or None
    return metas, (token if truncated else None)


def open_store(kind: str, data_root: str | Path, s3_config: S3Config | None = None):
    """Store factory used by the CLI: 'fs' under the data root, or 's3'."""
    if kind == "fs":
        return FsStore(Path(data_root) / "store")
    if kind == "s3":
        if s3_config is None:
            raise ConfigInvalid("store", "s3 store requires S3 configuration")
        return S3Store(s3_config)
    raise ConfigInvalid("store", f"unknown store kind {kind!r}")
