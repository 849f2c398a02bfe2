"""Run configuration: one JSON tree, strict keys, env overrides for endpoints."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .arbiter import (
    ArbiterPolicy,
    ChatArbiter,
    FallbackKind,
    PromptTemplate,
    RuleArbiter,
    TranscriptWriter,
)
from .backends.lexicon import LexiconClassifier
from .backends.naive_bayes import WindowNaiveBayes
from .backends.remote import RemoteBackend
from .labels import TumorGroup
from .pipeline import DEFAULT_HARD_GROUP_NAMES, Member
from .voting import EnsembleConfig, HardGroupTest
from .windows import WindowSection

ARBITER_ENDPOINT_ENV = "ARBITER_ENDPOINT"
REMOTE_BACKEND_ENV_PREFIX = "REMOTE_BACKEND_"

DEFAULT_MEMBER_ROSTER = (("lexicon", "top"), ("lexicon", "bottom"),
                         ("nb_a", "top"), ("nb_a", "bottom"),
                         ("nb_b", "top"), ("nb_b", "bottom"))

DEFAULT_BACKENDS = {
    "lexicon": {"type": "lexicon"},
    "nb_a": {"type": "naive_bayes", "alpha": 1.0, "features": "unigram",
             "binarize": False},
    "nb_b": {"type": "naive_bayes", "alpha": 0.5, "features": "unigram_bigram",
             "binarize": True},
}


class ConfigError(ValueError):
    pass


def _require_keys(obj: dict, allowed: set[str], context: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"unknown {context} keys: {sorted(unknown)}")


@dataclass
class ArbiterSettings:
    mode: str = "off"  # off | rules | chat
    endpoint: str = ""
    model: str = "default"
    temperature: float = 0.0
    max_response_tokens: int = 256
    max_attempts: int = 3
    fallback: str = "plurality_vote"
    prompt_template: str | None = None
    report_char_cap: int = 12000
    transcript: str | None = None
    max_in_flight: int = 4


@dataclass
class RunConfig:
    seed: int = 0
    workers: int = 1
    ensemble: EnsembleConfig | None = None
    backends: dict = field(default_factory=lambda: dict(DEFAULT_BACKENDS))
    model_dir: str = "models"
    arbiter: ArbiterSettings = field(default_factory=ArbiterSettings)
    audit_log: str | None = None
    include_timings: bool = False

    def __post_init__(self):
        if self.ensemble is None:
            self.ensemble = _ensemble_from_obj({})

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            payload = json.loads(Path(path).read_text("utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        return cls.from_obj(payload)

    @classmethod
    def from_obj(cls, payload: dict) -> "RunConfig":
        _require_keys(payload, {"seed", "workers", "ensemble", "backends",
                                "model_dir", "arbiter", "audit_log",
                                "include_timings"}, "config")
        ensemble = _ensemble_from_obj(payload.get("ensemble", {}))
        backends = dict(DEFAULT_BACKENDS)
        if "backends" in payload:
            backends = {}
            for backend_id, spec in payload["backends"].items():
                backends[backend_id] = _validate_backend_spec(backend_id, dict(spec))
        arbiter = _arbiter_from_obj(payload.get("arbiter", {}))
        cfg = cls(seed=int(payload.get("seed", 0)),
                  workers=int(payload.get("workers", 1)),
                  ensemble=ensemble,
                  backends=backends,
                  model_dir=str(payload.get("model_dir", "models")),
                  arbiter=arbiter,
                  audit_log=payload.get("audit_log"),
                  include_timings=bool(payload.get("include_timings", False)))
        cfg._apply_env_overrides()
        cfg._check_members_have_backends()
        cfg.ensemble.validate()
        return cfg

    def _apply_env_overrides(self) -> None:
        endpoint = os.environ.get(ARBITER_ENDPOINT_ENV)
        if endpoint:
            self.arbiter.endpoint = endpoint
        for backend_id, spec in self.backends.items():
            if spec.get("type") != "remote":
                continue
            override = os.environ.get(REMOTE_BACKEND_ENV_PREFIX + backend_id.upper())
            if override:
                spec["endpoint"] = override

    def _check_members_have_backends(self) -> None:
        for backend_id, _ in self.ensemble.members:
            if backend_id not in self.backends:
                raise ConfigError(f"ensemble member {backend_id!r} has no backend definition")

    # -- construction ------------------------------------------------------

    def build_members(self, trained: bool = True) -> list[Member]:
        """Instantiate the roster; naive Bayes slots load their trained models."""
        instances: dict[tuple[str, WindowSection], object] = {}
        shared: dict[str, object] = {}
        members: list[Member] = []
        for backend_id, section in self.ensemble.members:
            spec = self.backends[backend_id]
            kind = spec["type"]
            if kind == "naive_bayes":
                key = (backend_id, section)
                if key not in instances:
                    if trained:
                        path = self.model_path(backend_id, section)
                        if not path.exists():
                            raise ConfigError(
                                f"model file {path} not found; run the train command first")
                        instances[key] = WindowNaiveBayes.load(path)
                    else:
                        instances[key] = WindowNaiveBayes(
                            alpha=float(spec.get("alpha", 1.0)),
                            features=spec.get("features", "unigram"),
                            binarize=bool(spec.get("binarize", False)),
                            backend_id=backend_id,
                            max_tokens=self.ensemble.window_tokens)
                members.append((instances[key], section))
            elif kind == "lexicon":
                if backend_id not in shared:
                    shared[backend_id] = LexiconClassifier(
                        source=spec.get("path"), backend_id=backend_id,
                        max_tokens=self.ensemble.window_tokens).fit()
                members.append((shared[backend_id], section))
            elif kind == "remote":
                if backend_id not in shared:
                    endpoint = spec.get("endpoint", "")
                    if not endpoint:
                        raise ConfigError(f"remote backend {backend_id!r} has no endpoint")
                    shared[backend_id] = RemoteBackend(
                        endpoint=endpoint, backend_id=backend_id,
                        timeout=float(spec.get("timeout", 10.0)),
                        max_tokens=self.ensemble.window_tokens,
                        max_in_flight=int(spec.get("max_in_flight", 4)))
                members.append((shared[backend_id], section))
            else:
                raise ConfigError(f"backend {backend_id!r} has unknown type {kind!r}")
        return members

    def model_path(self, backend_id: str, section: WindowSection) -> Path:
        return Path(self.model_dir) / f"{backend_id}_{section.value}.json"

    def build_arbiter(self):
        mode = self.arbiter.mode
        if mode == "off":
            return None
        template = PromptTemplate.load(self.arbiter.prompt_template)
        if mode == "rules":
            return RuleArbiter(template=template)
        if mode == "chat":
            if not self.arbiter.endpoint:
                raise ConfigError(
                    f"arbiter mode 'chat' needs an endpoint (config or ${ARBITER_ENDPOINT_ENV})")
            policy = ArbiterPolicy(
                endpoint=self.arbiter.endpoint, model=self.arbiter.model,
                temperature=self.arbiter.temperature,
                max_response_tokens=self.arbiter.max_response_tokens,
                max_attempts=self.arbiter.max_attempts,
                fallback=FallbackKind(self.arbiter.fallback),
                report_char_cap=self.arbiter.report_char_cap,
                max_in_flight=self.arbiter.max_in_flight)
            transcript = TranscriptWriter(self.arbiter.transcript) \
                if self.arbiter.transcript else None
            return ChatArbiter(policy, template=template, transcript=transcript)
        raise ConfigError(f"unknown arbiter mode {mode!r}")


def _ensemble_from_obj(obj: dict) -> EnsembleConfig:
    _require_keys(obj, {"members", "vote_threshold", "hard_groups",
                        "window_tokens", "hard_group_test"}, "ensemble")
    raw_members = obj.get("members", DEFAULT_MEMBER_ROSTER)
    members = tuple((str(backend_id), WindowSection(section))
                    for backend_id, section in raw_members)
    hard = frozenset(TumorGroup(name)
                     for name in obj.get("hard_groups", DEFAULT_HARD_GROUP_NAMES))
    try:
        return EnsembleConfig(
            members=members,
            vote_threshold=int(obj.get("vote_threshold", 5)),
            hard_groups=hard,
            window_tokens=int(obj.get("window_tokens", 512)),
            hard_group_test=HardGroupTest(obj.get("hard_group_test", "winner_only")))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _validate_backend_spec(backend_id: str, spec: dict) -> dict:
    kind = spec.get("type")
    allowed = {
        "lexicon": {"type", "path"},
        "naive_bayes": {"type", "alpha", "features", "binarize"},
        "remote": {"type", "endpoint", "timeout", "max_in_flight"},
    }
    if kind not in allowed:
        raise ConfigError(f"backend {backend_id!r}: unknown type {kind!r}")
    _require_keys(spec, allowed[kind], f"backend {backend_id!r}")
    return spec


def _arbiter_from_obj(obj: dict) -> ArbiterSettings:
    _require_keys(obj, {"mode", "endpoint", "model", "temperature",
                        "max_response_tokens", "max_attempts", "fallback",
                        "prompt_template", "report_char_cap", "transcript",
                        "max_in_flight"}, "arbiter")
    settings = ArbiterSettings(**obj)
    if settings.mode not in ("off", "rules", "chat"):
        raise ConfigError(f"unknown arbiter mode {settings.mode!r}")
    FallbackKind(settings.fallback)
    return settings
