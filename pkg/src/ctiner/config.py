"""Run configuration: one TOML or JSON file plus environment overrides.

The config names a chat backend (offline deterministic mock, scripted mock
from a rules file, or a remote OpenAI-compatible endpoint), per-role model
ids, an embedder, budget limits, and pipeline hyperparameters. LLM_API_BASE
and LLM_API_KEY override the remote endpoint settings.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import DatasetBundle
from .embeddings import CachedEmbedder, Embedder, HashEmbedder, RemoteEmbedder
from .errors import ConfigError
from .gateway import LlmGateway, MockBackend, MockRule, MockScript, Role
from .mockllm import OfflineWorkbenchBackend

ROLES = ("executor", "reflector", "editor", "strategy_generator",
         "guideline_generator")

BACKEND_KINDS = ("offline", "script", "remote")
EMBEDDER_KINDS = ("hash", "remote")


@dataclass
class RunConfig:
    seed: int
    backend_kind: str = "offline"
    base_url: str | None = None
    api_key: str = ""
    script_path: str | None = None
    models: dict[str, str] = field(default_factory=dict)
    embedder_kind: str = "hash"
    embedder_model: str = "hash-64"
    embedder_dim: int = 64
    max_calls: int | None = None
    max_parallel: int = 4
    cache_dir: str = "cache"
    k: int = 3
    fir_epochs: int = 5
    fir_fraction: float = 0.01
    fir_mode: str = "best"
    fir_max_validation_docs: int | None = None
    offline_miss_modulus: int = 4

    def __post_init__(self):
        if self.backend_kind not in BACKEND_KINDS:
            raise ConfigError(f"unknown backend kind {self.backend_kind!r}")
        if self.embedder_kind not in EMBEDDER_KINDS:
            raise ConfigError(f"unknown embedder kind {self.embedder_kind!r}")
        if self.backend_kind == "remote" and not self.base_url:
            raise ConfigError("remote backend requires base_url or LLM_API_BASE")
        if self.backend_kind == "script" and not self.script_path:
            raise ConfigError("script backend requires script path")
        for role in self.models:
            if role not in ROLES:
                raise ConfigError(f"unknown model role {role!r}; "
                                  f"expected one of {ROLES}")
        defaults = {"offline": "offline-mock", "script": "scripted-mock",
                    "remote": None}[self.backend_kind]
        for role in ROLES:
            if role not in self.models:
                if role == "guideline_generator" and \
                        "strategy_generator" in self.models:
                    self.models[role] = self.models["strategy_generator"]
                elif defaults is not None:
                    self.models[role] = defaults
                elif "executor" in self.models:
                    self.models[role] = self.models["executor"]
                else:
                    raise ConfigError(
                        f"remote backend: model id for role {role!r} missing")

    def as_dict(self) -> dict:
        return {
            "seed": self.seed,
            "backend": {"kind": self.backend_kind, "base_url": self.base_url,
                        "script": self.script_path,
                        "offline_miss_modulus": self.offline_miss_modulus},
            "models": dict(sorted(self.models.items())),
            "embedder": {"kind": self.embedder_kind,
                         "model_id": self.embedder_model,
                         "dim": self.embedder_dim},
            "limits": {"max_calls": self.max_calls,
                       "max_parallel": self.max_parallel},
            "cache_dir": self.cache_dir,
            "retrieval": {"k": self.k},
            "fir": {"epochs": self.fir_epochs, "fraction": self.fir_fraction,
                    "mode": self.fir_mode,
                    "max_validation_docs": self.fir_max_validation_docs},
        }

    def config_hash(self) -> str:
        """Hash of the behavior-relevant config; local paths are excluded so
        the same experiment hashes identically across machines."""
        payload = self.as_dict()
        payload.pop("cache_dir", None)
        payload["backend"].pop("script", None)
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _load_raw(path: Path) -> dict:
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from exc
    try:
        import tomllib as toml_parser  # 3.11+
    except ModuleNotFoundError:
        import tomli as toml_parser
    try:
        return toml_parser.loads(text)
    except toml_parser.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML ({exc})") from exc


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    raw = _load_raw(path)
    if "seed" not in raw:
        raise ConfigError("config must set a seed")
    backend = raw.get("backend", {})
    embedder = raw.get("embedder", {})
    limits = raw.get("limits", {})
    retrieval = raw.get("retrieval", {})
    fir = raw.get("fir", {})
    base_url = os.environ.get("LLM_API_BASE") or backend.get("base_url")
    api_key = os.environ.get("LLM_API_KEY") or backend.get("api_key", "")
    script_path = backend.get("script")
    if script_path:
        script_path = str((path.parent / script_path).resolve()
                          if not Path(script_path).is_absolute() else script_path)
    try:
        return RunConfig(
            seed=int(raw["seed"]),
            backend_kind=backend.get("kind", "offline"),
            base_url=base_url,
            api_key=api_key,
            script_path=script_path,
            models=dict(raw.get("models", {})),
            embedder_kind=embedder.get("kind", "hash"),
            embedder_model=embedder.get("model_id", "hash-64"),
            embedder_dim=int(embedder.get("dim", 64)),
            max_calls=limits.get("max_calls"),
            max_parallel=int(limits.get("max_parallel", 4)),
            cache_dir=raw.get("cache_dir", "cache"),
            k=int(retrieval.get("k", 3)),
            fir_epochs=int(fir.get("epochs", 5)),
            fir_fraction=float(fir.get("fraction", 0.01)),
            fir_mode=fir.get("mode", "best"),
            fir_max_validation_docs=fir.get("max_validation_docs"),
            offline_miss_modulus=int(backend.get("offline_miss_modulus", 4)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad config value: {exc}") from exc


def load_mock_script(path: str | Path) -> MockScript:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    rules = [MockRule(match=r["match"], response=r["response"])
             for r in raw.get("rules", [])]
    return MockScript(rules=rules, default=raw.get("default", "[]"))


def build_gateway(config: RunConfig, bundle: DatasetBundle | None = None
                  ) -> LlmGateway:
    if config.backend_kind == "offline":
        if bundle is None:
            raise ConfigError("offline backend needs a loaded dataset bundle")
        backend = OfflineWorkbenchBackend(
            bundle.all_docs(), bundle.schema,
            miss_modulus=config.offline_miss_modulus)
    elif config.backend_kind == "script":
        backend = MockBackend(load_mock_script(config.script_path))
    else:
        from .gateway import RemoteBackend

        backend = RemoteBackend(config.base_url, api_key=config.api_key)
    return LlmGateway(backend, cache_dir=config.cache_dir,
                      max_calls=config.max_calls,
                      max_parallel=config.max_parallel)


def build_roles(config: RunConfig, gateway: LlmGateway) -> dict[str, Role]:
    return {role: Role(name=role, model_id=config.models[role], gateway=gateway)
            for role in ROLES}


def build_embedder(config: RunConfig) -> Embedder:
    if config.embedder_kind == "hash":
        inner = HashEmbedder(dim=config.embedder_dim,
                             model_id=config.embedder_model)
    else:
        base_url = config.base_url or os.environ.get("LLM_API_BASE")
        if not base_url:
            raise ConfigError("remote embedder requires base_url or LLM_API_BASE")
        inner = RemoteEmbedder(base_url, model_id=config.embedder_model,
                               api_key=config.api_key)
    return CachedEmbedder(inner, config.cache_dir)
