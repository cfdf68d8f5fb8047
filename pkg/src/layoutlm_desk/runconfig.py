"""Run configuration: INI-style sections, defaults, full validation.

Every key has a default; a config file (or the ``config`` block of a run
manifest) overrides defaults and ``--set section.key=value`` flags override
the file. Validation collects every violation before failing.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .ingest import DEFAULT_CLASSES, SROIE_SLOTS

_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False,
         "on": True, "off": False}


def _bool(s):
    try:
        return _BOOL[s.strip().lower()]
    except KeyError:
        raise ValueError(f"expected a boolean, got {s!r}") from None


def _list(s):
    return tuple(x.strip() for x in s.split(",") if x.strip())


def _path(s):
    return s.strip()


# section -> key -> (parser, default string)
SCHEMA = {
    "run": {
        "seed": (int, "0"),
        "output_dir": (_path, "runs/default"),
        "steps": (int, "500"),
        "batch_size": (int, "8"),
        "epochs": (int, "30"),
    },
    "model": {
        "layers": (int, "2"),
        "hidden": (int, "64"),
        "heads": (int, "4"),
        "ffn_dim": (int, "256"),
        "max_len": (int, "128"),
        "img_feat_dim": (int, "16"),
        "vocab_target": (int, "512"),
    },
    "optim": {
        "lr": (float, "5e-5"),
        "beta1": (float, "0.9"),
        "beta2": (float, "0.999"),
        "eps": (float, "1e-8"),
    },
    "masking": {
        "select_rate": (float, "0.15"),
        "p_mask": (float, "0.8"),
        "p_random": (float, "0.1"),
        "p_keep": (float, "0.1"),
    },
    "objectives": {
        "mdc": (_bool, "false"),
    },
    "modality": {
        "use_layout": (_bool, "true"),
        "use_image": (_bool, "false"),
    },
    "data": {
        "pretrain": (_path, ""),
        "train": (_path, ""),
        "dev": (_path, ""),
        "vocab": (_path, ""),
        "checkpoint": (_path, ""),
        "text_checkpoint": (_path, ""),
        "features": (_path, ""),
        "entity_types": (_list, "question,answer"),
        "slot_keys": (_list, ",".join(SROIE_SLOTS)),
        "classes": (_list, ",".join(DEFAULT_CLASSES)),
    },
    "synth": {
        "n_pretrain": (int, "1000"),
        "n_form_train": (int, "200"),
        "n_form_dev": (int, "50"),
        "n_class_train": (int, "200"),
        "n_class_dev": (int, "100"),
        "n_receipt_train": (int, "100"),
        "n_receipt_dev": (int, "40"),
    },
}

MODALITIES = {
    (False, False): "text-only",
    (True, False): "text+layout",
    (True, True): "text+layout+image",
}


@dataclass
class RunConfig:
    raw: dict    # section -> key -> normalized string
    values: dict  # section -> key -> parsed value

    def __getitem__(self, section):
        return self.values[section]

    @property
    def seed(self) -> int:
        return self.values["run"]["seed"]

    @property
    def output_dir(self) -> Path:
        return Path(self.values["run"]["output_dir"])

    @property
    def modality(self) -> str:
        m = self.values["modality"]
        return MODALITIES[(m["use_layout"], m["use_image"])]

    def canonical(self) -> dict:
        return {s: dict(sorted(kv.items())) for s, kv in sorted(self.raw.items())}

    def hash(self) -> str:
        """Digest of the resolved config; ``run.output_dir`` is excluded so a
        re-run into a fresh directory hashes the same."""
        c = self.canonical()
        c["run"] = {k: v for k, v in c["run"].items() if k != "output_dir"}
        blob = json.dumps(c, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _read_file(path: Path) -> dict:
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        data = json.loads(text)
        block = data.get("config", data)
        if not isinstance(block, dict):
            raise ConfigError(f"{path}: manifest has no config block")
        return {s: {k: str(v) for k, v in kv.items()} for s, kv in block.items()}
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: cannot parse config", [str(exc)]) from None
    return {s: dict(cp[s]) for s in cp.sections()}


def load_config(path=None, overrides=()) -> RunConfig:
    """Merge defaults, file, and ``section.key=value`` overrides; validate all."""
    merged = {s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()}
    problems = []
    sources = []
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} does not exist")
        sources.append(_read_file(p))
    ov: dict = {}
    for item in overrides:
        key, eq, value = item.partition("=")
        section, dot, name = key.partition(".")
        if not eq or not dot:
            problems.append(f"override {item!r} is not of the form section.key=value")
            continue
        ov.setdefault(section, {})[name] = value
    sources.append(ov)
    for src in sources:
        for section, kv in src.items():
            if section not in SCHEMA:
                problems.append(f"unknown section [{section}]")
                continue
            for k, v in kv.items():
                if k not in SCHEMA[section]:
                    problems.append(f"unknown key {section}.{k}")
                    continue
                merged[section][k] = v.strip()
    values, parse_failed = {}, False
    for section, keys in SCHEMA.items():
        values[section] = {}
        for k, (parse, _) in keys.items():
            try:
                values[section][k] = parse(merged[section][k])
            except ValueError as exc:
                problems.append(f"{section}.{k}: {exc}")
                parse_failed = True
    if not parse_failed:
        problems.extend(_semantic_checks(values))
    if problems:
        raise ConfigError("invalid run configuration", problems)
    return RunConfig(merged, values)


def _semantic_checks(v) -> list[str]:
    out = []
    for section, key in (("run", "steps"), ("run", "epochs")):
        if v[section][key] < 0:
            out.append(f"{section}.{key} must be >= 0")
    if v["run"]["batch_size"] < 1:
        out.append("run.batch_size must be >= 1")
    m = v["model"]
    for k in ("hidden", "heads", "ffn_dim", "img_feat_dim"):
        if m[k] < 1:
            out.append(f"model.{k} must be >= 1")
    if m["layers"] < 0:
        out.append("model.layers must be >= 0")
    if m["max_len"] < 2:
        out.append("model.max_len must be >= 2")
    if m["heads"] >= 1 and m["hidden"] % m["heads"]:
        out.append("model.hidden must be divisible by model.heads")
    o = v["optim"]
    if o["lr"] < 0:
        out.append("optim.lr must be >= 0")
    for k in ("beta1", "beta2"):
        if not 0 <= o[k] < 1:
            out.append(f"optim.{k} must lie in [0, 1)")
    if o["eps"] <= 0:
        out.append("optim.eps must be > 0")
    mk = v["masking"]
    if not 0 <= mk["select_rate"] < 1:
        out.append("masking.select_rate must lie in [0, 1)")
    total = mk["p_mask"] + mk["p_random"] + mk["p_keep"]
    if abs(total - 1.0) > 1e-9 or min(mk["p_mask"], mk["p_random"], mk["p_keep"]) < 0:
        out.append("masking.p_mask + p_random + p_keep must be 1 with each >= 0")
    mod = v["modality"]
    if (mod["use_layout"], mod["use_image"]) not in MODALITIES:
        out.append("modality: use_image requires use_layout (text+layout+image)")
    for k, n in v["synth"].items():
        if n < 1:
            out.append(f"synth.{k} must be >= 1")
    return out


def require_paths(cfg: RunConfig, keys) -> None:
    """Check that the named ``[data]`` paths are set and exist."""
    problems = []
    for k in keys:
        p = cfg["data"][k]
        if not p:
            problems.append(f"data.{k} is required for this command")
        elif not Path(p).exists():
            problems.append(f"data.{k}: {p} does not exist")
    if problems:
        raise ConfigError("missing inputs", problems)
