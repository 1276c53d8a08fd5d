"""Generation backends behind one interface: live HTTP, scripted replay, and
a synthetic degrading fixer.

The synthetic backend exists so the repair loop can be exercised offline with
controllable dynamics: it injects known defects into a real template, then on
each feedback turn repairs each flagged defect with probability ``p_fix``,
while each executed repair spawns one fresh defect with probability
``p_spawn``.  A configurable fraction of the initial defects is "stubborn"
(never repaired).  Defects are real template mutations detected by the real
linter, so the synthetic path runs the identical loop code as the live path.
"""

from __future__ import annotations

import json
import math
import os
import random
import re
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Optional, Protocol, Sequence

import requests

from .linter import LintReport, lint_template
from .located_json import LocatedNode, escape_pointer_token, parse_located, render_value
from .schema_store import SchemaStore, builtin_core_schemas

__all__ = [
    "ChatMessage",
    "GenerationConfig",
    "TransportError",
    "AuthError",
    "ScriptExhausted",
    "NoTemplateFound",
    "Backend",
    "generate",
    "HttpBackend",
    "ScriptedBackend",
    "SyntheticBackend",
    "SyntheticParams",
    "DefectSpec",
    "DEFECT_KINDS",
    "extract_template",
    "mix64",
    "resolve_api_key",
    "synthetic_base_template",
]

_ROLES = ("system", "user", "assistant")


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in _ROLES:
            raise ValueError(f"unknown chat role {self.role!r}")
        if not self.content:
            raise ValueError("chat message content must be non-empty")


@dataclass(frozen=True)
class GenerationConfig:
    model: str = "gpt-4o"
    temperature: float = 0.0
    max_retries: int = 3
    timeout_seconds: float = 60.0

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.timeout_seconds <= 0:
            raise ValueError("timeout_seconds must be positive")


class TransportError(RuntimeError):
    """HTTP transport or response-shape failure."""

    def __init__(self, message: str, status: Optional[int] = None, body_excerpt: str = ""):
        super().__init__(message)
        self.status = status
        self.body_excerpt = body_excerpt


class AuthError(TransportError):
    """Missing or rejected API credentials."""


class ScriptExhausted(RuntimeError):
    """Replay backend was asked for more responses than its script holds."""


class NoTemplateFound(ValueError):
    """No parseable JSON template could be extracted from a model response."""


class Backend(Protocol):
    def complete(self, conversation: Sequence[ChatMessage], cfg: GenerationConfig) -> str: ...


def generate(conversation: Sequence[ChatMessage], cfg: GenerationConfig, backend: Backend) -> str:
    """Run one completion through the given backend."""
    if not conversation:
        raise ValueError("conversation must be non-empty")
    if conversation[0].role != "system":
        raise ValueError("first message must have the system role")
    return backend.complete(conversation, cfg)


_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def mix64(*components: int) -> int:
    """Mix integers into one 64-bit seed via a splitmix64 finalizer chain.

    Benchmark cells derive their seed as
    ``mix64(master_seed, trial_index, case_index, generation_index)`` so a
    cell's randomness is independent of execution schedule.
    """
    acc = 0x9E3779B97F4A7C15
    for c in components:
        acc = _splitmix64(acc ^ (c & _MASK64))
    return acc


def resolve_api_key() -> Optional[str]:
    """Bearer token from IACLOOP_API_KEY, falling back to OPENAI_API_KEY."""
    return os.environ.get("IACLOOP_API_KEY") or os.environ.get("OPENAI_API_KEY")


class HttpBackend:
    """OpenAI-compatible chat-completions client with retry/backoff.

    Retries 5xx responses and transport timeouts up to ``cfg.max_retries``
    times with exponential backoff (1s, 2s, 4s, ...).  Never mutates the
    conversation it is given.
    """

    def __init__(
        self,
        base_url: str,
        api_key: Optional[str] = None,
        session: Optional[Any] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self._session = session if session is not None else requests.Session()
        self._sleep = sleep
        self.last_retry_count = 0

    def complete(self, conversation: Sequence[ChatMessage], cfg: GenerationConfig) -> str:
        key = self.api_key or resolve_api_key()
        if not key:
            raise AuthError("no API key configured (set IACLOOP_API_KEY or OPENAI_API_KEY)")
        payload = {
            "model": cfg.model,
            "messages": [{"role": m.role, "content": m.content} for m in conversation],
            "temperature": cfg.temperature,
        }
        headers = {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}
        url = f"{self.base_url}/v1/chat/completions"
        self.last_retry_count = 0
        attempt = 0
        while True:
            try:
                response = self._session.post(
                    url, json=payload, headers=headers, timeout=cfg.timeout_seconds
                )
            except (requests.Timeout, requests.ConnectionError) as exc:
                if attempt >= cfg.max_retries:
                    raise TransportError(f"transport failure after retries: {exc}") from exc
                self._backoff(attempt)
                attempt += 1
                continue
            if response.status_code == 401:
                raise AuthError("authentication rejected", status=401, body_excerpt=response.text[:200])
            if 500 <= response.status_code < 600:
                if attempt >= cfg.max_retries:
                    raise TransportError(
                        f"server error {response.status_code} after retries",
                        status=response.status_code,
                        body_excerpt=response.text[:200],
                    )
                self._backoff(attempt)
                attempt += 1
                continue
            if response.status_code != 200:
                raise TransportError(
                    f"unexpected status {response.status_code}",
                    status=response.status_code,
                    body_excerpt=response.text[:200],
                )
            return self._extract_content(response)

    def _backoff(self, attempt: int) -> None:
        self._sleep(float(2**attempt))
        self.last_retry_count += 1

    @staticmethod
    def _extract_content(response: Any) -> str:
        try:
            body = response.json()
        except ValueError as exc:
            raise TransportError("response body is not JSON", status=200) from exc
        try:
            choices = body["choices"]
            content = choices[0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"response missing field: {exc}", status=200) from exc
        if not isinstance(content, str):
            raise TransportError("response content is not a string", status=200)
        return content


class ScriptedBackend:
    """Deterministic replay of a fixed response sequence."""

    def __init__(self, responses: Sequence[str]):
        self._responses = list(responses)
        self._cursor = 0

    @classmethod
    def from_dir(cls, path: str | Path) -> "ScriptedBackend":
        """Read numbered response files (000.txt, 001.txt, ...) in name order."""
        directory = Path(path)
        files = sorted(directory.glob("*.txt"))
        if not files:
            raise FileNotFoundError(f"no *.txt response files under {directory}")
        return cls([f.read_text(encoding="utf-8") for f in files])

    def complete(self, conversation: Sequence[ChatMessage], cfg: GenerationConfig) -> str:
        if self._cursor >= len(self._responses):
            raise ScriptExhausted(f"script exhausted after {len(self._responses)} responses")
        text = self._responses[self._cursor]
        self._cursor += 1
        return text


_FENCE_RE = re.compile(r"```[^\n]*\n(.*?)```", re.DOTALL)


def _largest_balanced_braces(text: str) -> Optional[str]:
    best: Optional[tuple[int, int]] = None
    for start, ch in enumerate(text):
        if ch != "{":
            continue
        if best is not None and start <= best[1]:
            continue  # inside a span we already matched
        depth = 0
        in_string = False
        escaped = False
        for i in range(start, len(text)):
            c = text[i]
            if in_string:
                if escaped:
                    escaped = False
                elif c == "\\":
                    escaped = True
                elif c == '"':
                    in_string = False
                continue
            if c == '"':
                in_string = True
            elif c == "{":
                depth += 1
            elif c == "}":
                depth -= 1
                if depth == 0:
                    if best is None or (i - start) > (best[1] - best[0]):
                        best = (start, i)
                    break
    if best is None:
        return None
    return text[best[0] : best[1] + 1]


def extract_template(response_text: str) -> LocatedNode:
    """Pull a JSON template out of free-form model output.

    Tries fenced code blocks first, then the largest balanced-brace
    substring, then the whole text.  Raises NoTemplateFound when nothing
    parses; the returned root carries the exact substring that parsed in
    ``source_text``.
    """
    for match in _FENCE_RE.finditer(response_text):
        try:
            return parse_located(match.group(1))
        except ValueError:
            continue
    candidate = _largest_balanced_braces(response_text)
    if candidate is not None:
        try:
            return parse_located(candidate)
        except ValueError:
            pass
    try:
        return parse_located(response_text)
    except ValueError:
        raise NoTemplateFound("no parseable JSON template in response") from None


# ---------------------------------------------------------------------------
# Synthetic degrading fixer
# ---------------------------------------------------------------------------

DEFECT_KINDS = (
    "drop_required",
    "wrong_type",
    "bad_intrinsic_getazs",
    "unknown_top_key",
    "unused_parameter",
    "bad_enum",
)

_TOP_KEY_POOL = ("Extras", "Notes", "Widgets", "Custom", "Legacy", "Annotations")
_PARAM_POOL = ("Stage", "Owner", "CostCenter", "Retention", "Zone", "Quota")

_WRONG_VALUES = {
    "string": 12345,
    "integer": "twelve",
    "number": "twelve",
    "boolean": "yes",
    "object": "plain",
    "array": "not-an-array",
}

_BAD_ENUM_VALUE = "__invalid_enum__"

# (store fingerprint, blocks) -> count of distinct error-kind sites.  Site
# eligibility depends on the store's property specs, so the cache keys on them.
_SITE_COUNT_CACHE: dict[tuple, int] = {}


def _store_fingerprint(store: SchemaStore) -> tuple:
    return tuple(
        sorted((name, tuple(schema.properties.values())) for name, schema in store.schemas.items())
    )


def _blocks_for(defect_count: int, store: SchemaStore) -> int:
    """Smallest block count whose base template leaves free-site headroom."""
    needed = math.ceil(defect_count * 1.25) + 2
    fingerprint = _store_fingerprint(store)
    blocks = 1
    while True:
        key = (fingerprint, blocks)
        if key not in _SITE_COUNT_CACHE:
            probe = SyntheticBackend.__new__(SyntheticBackend)
            probe.store = store
            probe.template = synthetic_base_template(blocks)
            probe.live = []
            _SITE_COUNT_CACHE[key] = len(
                {site for _, site in probe._eligible_pairs(error_only=True)}
            )
        if _SITE_COUNT_CACHE[key] >= needed:
            return blocks
        blocks += 1


@dataclass(frozen=True)
class SyntheticParams:
    """Dynamics of the degrading fixer.

    ``p_fix`` is the per-iteration repair probability for a flagged defect,
    ``p_spawn`` the probability an executed repair injects one new defect,
    ``stubborn_fraction`` the share of initial defects whose repair
    probability is forced to zero.
    """

    p_fix: float
    p_spawn: float
    stubborn_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("p_fix", "p_spawn", "stubborn_fraction"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value}")


@dataclass
class DefectSpec:
    """One live injected defect: what it is, where, and how to undo it exactly."""

    kind: str
    target_pointer: str
    stubborn: bool = False
    # Undo payload: original value and its key position for property mutations.
    original: Any = None
    key_index: int = 0
    expected_code: str = ""
    expected_message: str = ""
    # Where the linter anchors this defect's diagnostic (E3003 points at the
    # Properties object, not the missing key); defaults to the site itself.
    expected_pointer: str = ""

    def diagnostic_key(self) -> tuple[str, str, str]:
        pointer = self.expected_pointer or self.target_pointer
        return (self.expected_code, pointer, self.expected_message)


def synthetic_base_template(blocks: int) -> dict:
    """Clean template (lints empty against the builtin store) with repeatable
    resource blocks providing defect-injection sites."""
    resources: dict[str, Any] = {
        "Vpc": {
            "Type": "AWS::EC2::VPC",
            "Properties": {
                "CidrBlock": "10.0.0.0/16",
                "EnableDnsSupport": True,
                "InstanceTenancy": "default",
            },
        }
    }
    for i in range(blocks):
        resources[f"Subnet{i}"] = {
            "Type": "AWS::EC2::Subnet",
            "Properties": {
                "VpcId": {"Ref": "Vpc"},
                "CidrBlock": f"10.0.{i}.0/24",
                "AvailabilityZone": "us-east-1a",
                "MapPublicIpOnLaunch": False,
            },
        }
        resources[f"Bucket{i}"] = {
            "Type": "AWS::S3::Bucket",
            "Properties": {
                "BucketName": f"artifact-store-{i}",
                "AccessControl": "Private",
                "ObjectLockEnabled": False,
                "Tags": [{"Key": "env", "Value": "dev"}],
            },
        }
        resources[f"Instance{i}"] = {
            "Type": "AWS::EC2::Instance",
            "Properties": {
                "ImageId": f"ami-{i:017d}",
                "InstanceType": "t2.micro",
                "AvailabilityZone": "us-east-1a",
                "Monitoring": False,
                "Tenancy": "default",
            },
        }
    return {
        "AWSTemplateFormatVersion": "2010-09-09",
        "Description": "Synthetic fixture stack",
        "Resources": resources,
    }


def _insert_key_at(mapping: dict, key: str, value: Any, index: int) -> None:
    """Reinsert a key at its original position (dicts preserve insertion order)."""
    items = list(mapping.items())
    items.insert(index, (key, value))
    mapping.clear()
    mapping.update(items)


class SyntheticBackend:
    """Offline backend that probabilistically repairs flagged defects.

    The first completion builds a fresh template with ``initial_defects``
    injected defects (an int, or an inclusive (lo, hi) range sampled per
    generation); every later feedback turn runs one repair/spawn step.
    Identical construction (params, seed, sizing) and call sequence yield
    identical strings.
    """

    def __init__(
        self,
        params: SyntheticParams,
        initial_defects: int | tuple[int, int] = 8,
        store: Optional[SchemaStore] = None,
    ):
        self.params = params
        self.initial_defects = initial_defects
        self.store = store if store is not None else builtin_core_schemas()
        self.rng = random.Random(params.seed)
        self.template: dict = {}
        self.live: list[DefectSpec] = []

    # -- backend interface ---------------------------------------------------

    def complete(self, conversation: Sequence[ChatMessage], cfg: GenerationConfig) -> str:
        from .loop import FEEDBACK_HEADER  # local import to avoid a cycle

        last_user = next((m for m in reversed(conversation) if m.role == "user"), None)
        if last_user is not None and last_user.content.startswith(FEEDBACK_HEADER):
            report = lint_template(parse_located(self._serialize()), self.store)
            return self.synthetic_step(report)
        return self.initial_generation()

    # -- generation and stepping ----------------------------------------------

    def initial_generation(self) -> str:
        """Build a fresh defective template; resets any previous state."""
        if isinstance(self.initial_defects, tuple):
            lo, hi = self.initial_defects
            count = self.rng.randint(lo, hi)
        else:
            count = self.initial_defects
        self.template = synthetic_base_template(_blocks_for(count, self.store))
        self.live = []
        # Injections only ever remove eligibility at the occupied site, so the
        # clean-template enumeration can be filtered instead of recomputed.
        all_pairs = self._eligible_pairs(error_only=True)
        occupied: set[str] = set()
        for _ in range(count):
            pairs = [p for p in all_pairs if p[1] not in occupied]
            if not pairs:
                raise ValueError("template has no free defect sites left")
            kind, site = pairs[self.rng.randrange(len(pairs))]
            self._inject(kind, site)
            occupied.add(site)
        stubborn_count = round(self.params.stubborn_fraction * count)
        for idx in sorted(self.rng.sample(range(count), stubborn_count)):
            self.live[idx].stubborn = True
        return self._serialize()

    def synthetic_step(self, report: Optional[LintReport] = None) -> str:
        """One repair round over the tracked template.

        A live defect counts as flagged when the report contains its
        diagnostic; with ``report=None`` every live defect is flagged.  Each
        flagged non-stubborn defect is repaired with probability ``p_fix``,
        and each executed repair spawns one fresh defect with probability
        ``p_spawn`` at a uniformly chosen eligible site.
        """
        if report is not None:
            flagged = {d.diagnostic_key() for d in self.live} & {
                (diag.code, diag.pointer, diag.message) for diag in report.diagnostics
            }
        else:
            flagged = {d.diagnostic_key() for d in self.live}
        to_repair = []
        for defect in self.live:
            if defect.stubborn or defect.diagnostic_key() not in flagged:
                continue
            if self.rng.random() < self.params.p_fix:
                to_repair.append(defect)
        for defect in to_repair:
            self._repair(defect)
            if self.rng.random() < self.params.p_spawn:
                pairs = self._eligible_pairs(error_only=False)
                if pairs:
                    kind, site = pairs[self.rng.randrange(len(pairs))]
                    self._inject(kind, site)
        return self._serialize()

    def _serialize(self) -> str:
        return json.dumps(self.template, indent=2)

    # -- defect plumbing -------------------------------------------------------

    def _occupied(self) -> set[str]:
        return {d.target_pointer for d in self.live}

    def _eligible_pairs(self, error_only: bool) -> list[tuple[str, str]]:
        """(kind, site-pointer) pairs in document order; at most one live
        defect may occupy a site."""
        occupied = self._occupied()
        pairs: list[tuple[str, str]] = []
        for name in _TOP_KEY_POOL:
            pointer = "/" + name
            if name not in self.template and pointer not in occupied:
                pairs.append(("unknown_top_key", pointer))
        if not error_only:
            for name in _PARAM_POOL:
                pointer = "/Parameters/" + name
                if name not in self.template.get("Parameters", {}) and pointer not in occupied:
                    pairs.append(("unused_parameter", pointer))
        for logical_id, entry in self.template.get("Resources", {}).items():
            schema = self.store.lookup(entry.get("Type", ""))
            if schema is None:
                continue
            properties = entry.get("Properties", {})
            for prop_name, value in properties.items():
                spec = schema.properties.get(prop_name)
                if spec is None:
                    continue
                pointer = (
                    "/Resources/"
                    + escape_pointer_token(logical_id)
                    + "/Properties/"
                    + escape_pointer_token(prop_name)
                )
                if pointer in occupied:
                    continue
                if spec.required:
                    pairs.append(("drop_required", pointer))
                pairs.append(("wrong_type", pointer))
                if spec.primitive == "string" and isinstance(value, str):
                    pairs.append(("bad_intrinsic_getazs", pointer))
                    if spec.enum_values is not None and value in spec.enum_values:
                        pairs.append(("bad_enum", pointer))
        return pairs

    def _site_parts(self, pointer: str) -> tuple[dict, str, object]:
        """(properties-dict, prop-name, spec) for a property site pointer."""
        _, _, logical_id, _, prop_name = pointer.split("/")
        logical_id = logical_id.replace("~1", "/").replace("~0", "~")
        prop_name = prop_name.replace("~1", "/").replace("~0", "~")
        entry = self.template["Resources"][logical_id]
        schema = self.store.lookup(entry["Type"])
        return entry["Properties"], prop_name, schema.properties[prop_name]

    def _inject(self, kind: str, pointer: str) -> DefectSpec:
        if kind == "unknown_top_key":
            name = pointer[1:]
            self.template[name] = {}
            defect = DefectSpec(
                kind,
                pointer,
                expected_code="E1001",
                expected_message=f"Unknown top-level section '{name}'",
            )
        elif kind == "unused_parameter":
            name = pointer.rsplit("/", 1)[1]
            self.template.setdefault("Parameters", {})[name] = {"Type": "String"}
            defect = DefectSpec(
                kind,
                pointer,
                expected_code="W2001",
                expected_message=f"Parameter '{name}' is never used",
            )
        else:
            properties, prop_name, spec = self._site_parts(pointer)
            original = properties[prop_name]
            index = list(properties).index(prop_name)
            if kind == "drop_required":
                del properties[prop_name]
                defect = DefectSpec(
                    kind,
                    pointer,
                    original=original,
                    key_index=index,
                    expected_code="E3003",
                    expected_message=f"Required property '{prop_name}' is missing",
                    expected_pointer=pointer.rsplit("/", 1)[0],
                )
            elif kind == "wrong_type":
                bad = _WRONG_VALUES[spec.primitive]
                properties[prop_name] = bad
                defect = DefectSpec(
                    kind,
                    pointer,
                    original=original,
                    key_index=index,
                    expected_code="E3012",
                    expected_message=f"{render_value(bad)} is not of type '{spec.primitive}'",
                )
            elif kind == "bad_intrinsic_getazs":
                properties[prop_name] = {"Fn::GetAZs": ""}
                defect = DefectSpec(
                    kind,
                    pointer,
                    original=original,
                    key_index=index,
                    expected_code="E1015",
                    expected_message="{'Fn::GetAZs': ''} is not of type 'string'",
                )
            elif kind == "bad_enum":
                properties[prop_name] = _BAD_ENUM_VALUE
                enum_rendered = render_value(list(spec.enum_values))
                defect = DefectSpec(
                    kind,
                    pointer,
                    original=original,
                    key_index=index,
                    expected_code="E3030",
                    expected_message=f"{render_value(_BAD_ENUM_VALUE)} is not one of {enum_rendered}",
                )
            else:
                raise ValueError(f"unknown defect kind {kind!r}")
        self.live.append(defect)
        return defect

    def _repair(self, defect: DefectSpec) -> None:
        pointer = defect.target_pointer
        if defect.kind == "unknown_top_key":
            del self.template[pointer[1:]]
        elif defect.kind == "unused_parameter":
            name = pointer.rsplit("/", 1)[1]
            params = self.template["Parameters"]
            del params[name]
            if not params:
                del self.template["Parameters"]
        elif defect.kind == "drop_required":
            properties, prop_name, _ = self._site_parts(pointer)
            _insert_key_at(properties, prop_name, defect.original, defect.key_index)
        else:
            properties, prop_name, _ = self._site_parts(pointer)
            properties[prop_name] = defect.original
        self.live.remove(defect)
