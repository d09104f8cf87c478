"""Service configuration: a TOML-style key-value file.

A small built-in parser covers the subset this project needs: [section] and
[[array-of-table]] headers, string/int/float/bool scalars, single-line
arrays, and comments. Basic strings interpolate ${ENV_VAR} so secrets stay
out of the file itself.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field

from .db_connector import ConnectionProfile
from .pipeline import PipelineConfig


class ConfigError(Exception):
    pass


_SECTION_RE = re.compile(r"^\[(\[)?\s*([A-Za-z0-9_.-]+)\s*(\])?\]\s*$")
_KEY_RE = re.compile(r"^([A-Za-z0-9_-]+)\s*=\s*(.+)$")
_ENV_RE = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")


def _strip_comment(line: str) -> str:
    out = []
    in_basic = in_literal = False
    i = 0
    while i < len(line):
        ch = line[i]
        if in_basic:
            if ch == "\\" and i + 1 < len(line):
                out.append(line[i : i + 2])
                i += 2
                continue
            if ch == '"':
                in_basic = False
        elif in_literal:
            if ch == "'":
                in_literal = False
        elif ch == '"':
            in_basic = True
        elif ch == "'":
            in_literal = True
        elif ch == "#":
            break
        out.append(ch)
        i += 1
    return "".join(out).strip()


def _unescape(raw: str) -> str:
    return (
        raw.replace("\\\\", "\x00")
        .replace('\\"', '"')
        .replace("\\n", "\n")
        .replace("\\t", "\t")
        .replace("\x00", "\\")
    )


def _interpolate_env(value: str, lineno: int) -> str:
    def sub(match: re.Match) -> str:
        name = match.group(1)
        if name not in os.environ:
            raise ConfigError(f"line {lineno}: environment variable {name!r} is not set")
        return os.environ[name]

    return _ENV_RE.sub(sub, value)


def _parse_scalar(raw: str, lineno: int):
    raw = raw.strip()
    if raw.startswith('"') and raw.endswith('"') and len(raw) >= 2:
        return _interpolate_env(_unescape(raw[1:-1]), lineno)
    if raw.startswith("'") and raw.endswith("'") and len(raw) >= 2:
        return raw[1:-1]
    if raw == "true":
        return True
    if raw == "false":
        return False
    if raw.startswith("[") and raw.endswith("]"):
        inner = raw[1:-1].strip()
        if not inner:
            return []
        return [_parse_scalar(part, lineno) for part in _split_array(inner)]
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    raise ConfigError(f"line {lineno}: cannot parse value {raw!r}")


def _split_array(inner: str) -> list[str]:
    parts = []
    depth = 0
    in_basic = in_literal = False
    current = []
    for ch in inner:
        if in_basic:
            if ch == '"':
                in_basic = False
        elif in_literal:
            if ch == "'":
                in_literal = False
        elif ch == '"':
            in_basic = True
        elif ch == "'":
            in_literal = True
        elif ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
        elif ch == "," and depth == 0:
            parts.append("".join(current))
            current = []
            continue
        current.append(ch)
    if "".join(current).strip():
        parts.append("".join(current))
    return parts


def parse_config_text(text: str) -> dict:
    """Parse the supported TOML subset into nested dicts."""
    root: dict = {}
    target = root
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw_line)
        if not line:
            continue
        section = _SECTION_RE.match(line)
        if section:
            is_array = bool(section.group(1))
            if is_array != bool(section.group(3)):
                raise ConfigError(f"line {lineno}: unbalanced section brackets")
            path = section.group(2).split(".")
            node = root
            for part in path[:-1]:
                node = node.setdefault(part, {})
                if not isinstance(node, dict):
                    raise ConfigError(f"line {lineno}: {part!r} is not a table")
            leaf = path[-1]
            if is_array:
                node.setdefault(leaf, [])
                if not isinstance(node[leaf], list):
                    raise ConfigError(f"line {lineno}: {leaf!r} is not an array of tables")
                entry: dict = {}
                node[leaf].append(entry)
                target = entry
            else:
                target = node.setdefault(leaf, {})
                if not isinstance(target, dict):
                    raise ConfigError(f"line {lineno}: {leaf!r} is not a table")
            continue
        pair = _KEY_RE.match(line)
        if pair:
            target[pair.group(1)] = _parse_scalar(pair.group(2), lineno)
            continue
        raise ConfigError(f"line {lineno}: cannot parse {raw_line.strip()!r}")
    return root


@dataclass
class LlmSettings:
    backend: str = "http"  # http | scripted
    url: str = ""
    model: str = ""
    auth_env_var: str = ""
    retry_max: int = 2
    timeout_s: float = 60.0
    rate_limit_per_minute: int = 0  # 0 disables limiting
    script_file: str = ""
    model_by_template: dict = field(default_factory=dict)


@dataclass
class EmbedderSettings:
    kind: str = "builtin"  # builtin | remote
    dimension: int = 256
    url: str = ""
    model: str = ""
    auth_env_var: str = ""


@dataclass
class ServiceConfig:
    databases: list[ConnectionProfile]
    storage_dir: str
    listen_address: str = "127.0.0.1:8000"
    auth_token_env_var: str = ""
    llm: LlmSettings = field(default_factory=LlmSettings)
    embedder: EmbedderSettings = field(default_factory=EmbedderSettings)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)

    def validate(self) -> None:
        if not self.databases:
            raise ConfigError("config needs at least one [[databases]] profile")
        names = [p.name for p in self.databases]
        if len(names) != len(set(names)):
            raise ConfigError("database profile names must be unique")
        if not self.storage_dir:
            raise ConfigError("storage_dir is required")
        if self.llm.backend not in ("http", "scripted"):
            raise ConfigError(f"unknown llm backend: {self.llm.backend!r}")
        if self.llm.backend == "http" and not self.llm.url:
            raise ConfigError("llm.url is required for the http backend")
        if self.llm.backend == "scripted" and not self.llm.script_file:
            raise ConfigError("llm.script_file is required for the scripted backend")
        if self.llm.retry_max < 0 or self.llm.timeout_s <= 0:
            raise ConfigError("llm.retry_max must be >= 0 and llm.timeout_s > 0")
        if self.embedder.kind not in ("builtin", "remote"):
            raise ConfigError(f"unknown embedder kind: {self.embedder.kind!r}")
        if self.embedder.dimension < 8:
            raise ConfigError("embedder.dimension must be >= 8")
        if ":" not in self.listen_address:
            raise ConfigError("listen_address must be host:port")
        try:
            self.pipeline.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def listen_host(self) -> str:
        return self.listen_address.rsplit(":", 1)[0]

    @property
    def listen_port(self) -> int:
        return int(self.listen_address.rsplit(":", 1)[1])

    @classmethod
    def from_dict(cls, data: dict, base_dir: str = ".") -> "ServiceConfig":
        databases = []
        for entry in data.get("databases", []):
            location = entry.get("location", "")
            if location and not os.path.isabs(location):
                location = os.path.normpath(os.path.join(base_dir, location))
            databases.append(
                ConnectionProfile(
                    name=entry.get("name", ""),
                    kind=entry.get("kind", "embedded-file"),
                    location=location,
                    default_row_cap=entry.get("default_row_cap", 1000),
                )
            )
        storage_dir = data.get("storage_dir", "")
        if storage_dir and not os.path.isabs(storage_dir):
            storage_dir = os.path.normpath(os.path.join(base_dir, storage_dir))

        llm_data = dict(data.get("llm", {}))
        llm = LlmSettings(
            backend=llm_data.get("backend", "http"),
            url=llm_data.get("url", ""),
            model=llm_data.get("model", ""),
            auth_env_var=llm_data.get("auth_env_var", ""),
            retry_max=llm_data.get("retry_max", 2),
            timeout_s=float(llm_data.get("timeout_s", 60.0)),
            rate_limit_per_minute=llm_data.get("rate_limit_per_minute", 0),
            script_file=llm_data.get("script_file", ""),
            model_by_template=dict(llm_data.get("model_by_template", {})),
        )
        if llm.script_file and not os.path.isabs(llm.script_file):
            llm.script_file = os.path.normpath(os.path.join(base_dir, llm.script_file))

        emb_data = dict(data.get("embedder", {}))
        embedder = EmbedderSettings(
            kind=emb_data.get("kind", "builtin"),
            dimension=emb_data.get("dimension", 256),
            url=emb_data.get("url", ""),
            model=emb_data.get("model", ""),
            auth_env_var=emb_data.get("auth_env_var", ""),
        )

        pipe_data = dict(data.get("pipeline", {}))
        pipeline = PipelineConfig(
            max_iterations=pipe_data.get("max_iterations", 3),
            k_tables=pipe_data.get("k_tables", 5),
            k_rules=pipe_data.get("k_rules", 5),
            char_budget=pipe_data.get("char_budget", 8000),
            probe_rows=pipe_data.get("probe_rows", 10),
            row_cap_full=pipe_data.get("row_cap_full", 1000),
            rows_in_prompt=pipe_data.get("rows_in_prompt", 50),
            max_history=pipe_data.get("max_history", 4),
            dialect=pipe_data.get("dialect", "SQLite"),
        )

        config = cls(
            databases=databases,
            storage_dir=storage_dir,
            listen_address=data.get("listen_address", "127.0.0.1:8000"),
            auth_token_env_var=data.get("auth_token_env_var", ""),
            llm=llm,
            embedder=embedder,
            pipeline=pipeline,
        )
        config.validate()
        return config

    @classmethod
    def from_file(cls, path: str) -> "ServiceConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        data = parse_config_text(text)
        return cls.from_dict(data, base_dir=os.path.dirname(os.path.abspath(path)))
