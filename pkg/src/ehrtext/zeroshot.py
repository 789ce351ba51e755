"""Zero-shot yes/no mortality prompts against a chat-completion endpoint.

Each record goes build_prompt -> query -> parse_answer -> resolve_prediction.
Completions that do not start with "yes" or "no" count as unanswered and
are resolved as the default token "No".
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
import re
import string
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import requests

from .evaluate import metrics_report

logger = logging.getLogger(__name__)

SLOT = "[textual EHR]"

P1_SCAFFOLD = (
    "You are an extremely helpful healthcare assistant. You answer the question using only 'yes' or 'no' "
    "and considering a patient hospital profile: '[textual EHR]'.\n"
    "Question: Is the patient dead?.\n"
    "Answer (only yes or no): "
)

P2_SCAFFOLD = (
    "Analyze the provided ICU data for a patient. The data covers the first 48 hours of the ICU stay, "
    "including vital statistics, lab test results, and treatments administered. Answer only Yes for a "
    "prediction of survival or No for a prediction of mortality. The patient ICU data is: '[textual EHR]'. "
    "Based on this data, answer.\n"
    "Question: Will the patient survive in the next 24 hours?.\n"
    "Answer (use only yes or no): "
)

DEFAULT_BUDGET = 1024
MAX_NEW_TOKENS = 2


class PromptKind(str, enum.Enum):
    P1 = "p1"
    P2 = "p2"


class Outcome(enum.Enum):
    MORTALITY = 1
    SURVIVAL = 0


class Status(str, enum.Enum):
    YES = "YES"
    NO = "NO"
    UNANSWERED = "UNANSWERED"


class PromptError(ValueError):
    pass


class EndpointError(RuntimeError):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    kind: PromptKind
    scaffold: str
    yes_means: Outcome

    @property
    def no_means(self) -> Outcome:
        return Outcome.SURVIVAL if self.yes_means is Outcome.MORTALITY else Outcome.MORTALITY

    def fill(self, ehr_text: str) -> str:
        return self.scaffold.replace(SLOT, ehr_text)


TEMPLATES: dict[PromptKind, PromptTemplate] = {
    PromptKind.P1: PromptTemplate(PromptKind.P1, P1_SCAFFOLD, Outcome.MORTALITY),
    PromptKind.P2: PromptTemplate(PromptKind.P2, P2_SCAFFOLD, Outcome.SURVIVAL),
}

TokenCounter = Callable[[str], int]

_TOKEN = re.compile(r"\S+")


def count_tokens(text: str) -> int:
    """Whitespace-run token proxy; swap in a model tokenizer via ``counter=``."""
    return len(text.split())


def truncate_to_budget(text: str, budget: int, counter: TokenCounter = count_tokens) -> str:
    """Longest prefix made of whole whitespace tokens whose count fits ``budget``."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if counter(text) <= budget:
        return text
    ends = [m.end() for m in _TOKEN.finditer(text)]
    lo, hi = 0, len(ends)  # invariant: prefix of lo tokens fits, hi tokens does not
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if counter(text[: ends[mid - 1]]) <= budget:
            lo = mid
        else:
            hi = mid
    return text[: ends[lo - 1]] if lo else ""


def build_prompt(kind: PromptKind | str, ehr_text: str, budget: int = DEFAULT_BUDGET, counter: TokenCounter = count_tokens) -> str:
    """Fill the scaffold, truncating only the EHR text so the prompt fits ``budget``."""
    template = TEMPLATES[PromptKind(kind)]
    base = counter(template.fill(""))
    if base >= budget:
        raise PromptError(f"{template.kind.value} scaffold needs {base} tokens; budget is {budget}")
    text = truncate_to_budget(ehr_text, budget - base, counter) if ehr_text else ehr_text
    prompt = template.fill(text)
    # text glued to the slot quotes may change the count; drop tokens until it fits
    while counter(prompt) > budget and text:
        text = truncate_to_budget(text, max(counter(text) - 1, 1), counter) if counter(text) > 1 else ""
        prompt = template.fill(text)
    return prompt


# --- endpoint client -----------------------------------------------------


@dataclass(frozen=True)
class ClientConfig:
    endpoint_url: str = "http://localhost:8000/v1/chat/completions"
    model: str = "meditron-7b"
    auth_env: str | None = "OPENAI_API_KEY"
    max_in_flight: int = 4
    timeout_s: float = 60.0
    max_attempts: int = 3
    backoff_s: float = 0.5
    # "mock" endpoint only: stay_id -> completion, default completion otherwise
    mock_script: str | None = None
    mock_default: str = "No"

    @classmethod
    def from_dict(cls, d: dict) -> ClientConfig:
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown zero-shot client keys: {sorted(unknown)}")
        return cls(**d)


def _completion_text(body: dict) -> str:
    choice = body["choices"][0]
    if isinstance(choice.get("message"), dict):
        content = choice["message"]["content"]
    else:
        content = choice["text"]
    if not isinstance(content, str):
        raise TypeError("completion content is not a string")
    return content


def query_endpoint(cfg: ClientConfig, prompt: str, session: requests.Session | None = None) -> str:
    """POST one chat-completion request; returns the completion text verbatim.

    Transient failures (connection errors, timeouts, 429, 5xx) are retried with
    exponential backoff up to ``cfg.max_attempts`` attempts in total.
    Raises :class:`EndpointError` once attempts are exhausted, on other
    non-2xx responses and on malformed bodies.
    """
    headers = {"Content-Type": "application/json"}
    token = os.environ.get(cfg.auth_env) if cfg.auth_env else None
    if token:
        headers["Authorization"] = f"Bearer {token}"
    payload = {
        "model": cfg.model,
        "messages": [{"role": "user", "content": prompt}],
        "max_tokens": MAX_NEW_TOKENS,
        "temperature": 0,
    }
    http = session or requests
    last: Exception | None = None
    for attempt in range(cfg.max_attempts):
        if attempt:
            time.sleep(cfg.backoff_s * 2 ** (attempt - 1))
        try:
            resp = http.post(cfg.endpoint_url, json=payload, headers=headers, timeout=cfg.timeout_s)
        except (requests.ConnectionError, requests.Timeout) as exc:
            last = exc
            continue
        if resp.status_code == 429 or resp.status_code >= 500:
            last = EndpointError(f"HTTP {resp.status_code}")
            continue
        if not 200 <= resp.status_code < 300:
            raise EndpointError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return _completion_text(resp.json())
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise EndpointError(f"malformed completion body: {exc}") from exc
    raise EndpointError(f"gave up after {cfg.max_attempts} attempts: {last}")


class CompletionClient(Protocol):
    def complete(self, stay_id: str, prompt: str) -> str: ...


class HttpClient:
    def __init__(self, cfg: ClientConfig) -> None:
        self.cfg = cfg
        self.session = requests.Session()

    def complete(self, stay_id: str, prompt: str) -> str:
        return query_endpoint(self.cfg, prompt, self.session)


class ScriptedClient:
    """In-process stand-in for an endpoint: replays completions per stay_id.

    A script value of ``None`` simulates a failed request.
    """

    def __init__(self, script: dict[str, str | None] | None = None, default: str = "No") -> None:
        self.script = dict(script or {})
        self.default = default

    def complete(self, stay_id: str, prompt: str) -> str:
        raw = self.script.get(stay_id, self.default)
        if raw is None:
            raise EndpointError(f"scripted failure for {stay_id}")
        return raw


def make_client(cfg: ClientConfig) -> CompletionClient:
    if cfg.endpoint_url == "mock":
        script = None
        if cfg.mock_script:
            script = json.loads(Path(cfg.mock_script).read_text(encoding="utf-8"))
        return ScriptedClient(script, cfg.mock_default)
    return HttpClient(cfg)


# --- answers -------------------------------------------------------------


@dataclass(frozen=True)
class ParsedAnswer:
    status: Status
    raw: str


_STRIP = string.whitespace + string.punctuation


def parse_answer(raw: str | None) -> ParsedAnswer:
    """YES/NO when the normalized completion starts with that word, else UNANSWERED.

    Normalization lowercases and strips leading whitespace and punctuation.
    The word must end at a non-alphanumeric character ("no." is NO, "not" is not).
    """
    if raw is None:
        return ParsedAnswer(Status.UNANSWERED, "")
    norm = raw.lower().lstrip(_STRIP)
    for word, status in (("yes", Status.YES), ("no", Status.NO)):
        if norm.startswith(word) and not norm[len(word) : len(word) + 1].isalnum():
            return ParsedAnswer(status, raw)
    return ParsedAnswer(Status.UNANSWERED, raw)


@dataclass(frozen=True)
class Resolved:
    label: int
    was_unanswered: bool


def resolve_prediction(parsed: ParsedAnswer, kind: PromptKind | str, default_level: str = "token") -> Resolved:
    """Map an answer to a mortality label (1 = death).

    With ``default_level="token"`` an unanswered completion becomes the token
    "No" and then follows the prompt's meaning of "no" (survival for P1,
    mortality for P2). ``"class"`` resolves it to label 0 for both prompts.
    """
    template = TEMPLATES[PromptKind(kind)]
    unanswered = parsed.status is Status.UNANSWERED
    if unanswered and default_level == "class":
        return Resolved(0, True)
    if default_level not in ("token", "class"):
        raise ValueError(f"unknown default_level {default_level!r}")
    token = Status.NO if unanswered else parsed.status
    outcome = template.yes_means if token is Status.YES else template.no_means
    return Resolved(outcome.value, unanswered)


@dataclass
class HarnessResult:
    kind: PromptKind
    n_answered: int
    n_unanswered: int
    n_errors: int
    stay_ids: list[str]
    true_labels: list[int]
    predictions: list[int]
    statuses: list[Status]
    metrics: dict = field(default_factory=dict)

    def summary(self) -> dict:
        n = self.n_answered + self.n_unanswered
        return {
            "prompt": self.kind.value,
            "n": n,
            "n_answered": self.n_answered,
            "n_unanswered": self.n_unanswered,
            "pct_unanswered": round(100.0 * self.n_unanswered / n, 2) if n else None,
            "n_errors": self.n_errors,
            **self.metrics,
        }


@dataclass(frozen=True)
class HarnessRecord:
    stay_id: str
    text: str
    label: int


def run_harness(
    records: Sequence[HarnessRecord],
    kind: PromptKind | str,
    client: CompletionClient,
    budget: int = DEFAULT_BUDGET,
    counter: TokenCounter = count_tokens,
    max_in_flight: int = 4,
    audit_path: str | Path | None = None,
    default_level: str = "token",
) -> HarnessResult:
    """Query every record and tally answered/unanswered completions.

    Request failures never abort the batch; they count as unanswered. The
    metrics use the resolved 0/1 predictions as scores. The audit log is
    written in record order whatever order the requests complete in.
    """
    kind = PromptKind(kind)

    def one(rec: HarnessRecord) -> tuple[str, ParsedAnswer, bool]:
        prompt = build_prompt(kind, rec.text, budget, counter)
        try:
            raw = client.complete(rec.stay_id, prompt)
            error = False
        except EndpointError as exc:
            logger.warning("stay %s: %s", rec.stay_id, exc)
            raw, error = None, True
        return prompt, parse_answer(raw), error

    if max_in_flight > 1:
        with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
            results = list(pool.map(one, records))
    else:
        results = [one(r) for r in records]

    preds, statuses, audit = [], [], []
    n_errors = 0
    for rec, (prompt, parsed, error) in zip(records, results):
        res = resolve_prediction(parsed, kind, default_level)
        preds.append(res.label)
        statuses.append(parsed.status)
        n_errors += error
        audit.append(
            {
                "stay_id": rec.stay_id,
                "prompt_hash": hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:16],
                "raw": None if error else parsed.raw,
                "status": parsed.status.value,
                "label": res.label,
            }
        )
    n_unanswered = sum(s is Status.UNANSWERED for s in statuses)
    truth = [int(r.label) for r in records]
    metrics = metrics_report(preds, truth) if records else {}
    if audit_path is not None:
        path = Path(audit_path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            for row in audit:
                fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    return HarnessResult(
        kind=kind,
        n_answered=len(records) - n_unanswered,
        n_unanswered=n_unanswered,
        n_errors=n_errors,
        stay_ids=[r.stay_id for r in records],
        true_labels=truth,
        predictions=preds,
        statuses=statuses,
        metrics=metrics,
    )
