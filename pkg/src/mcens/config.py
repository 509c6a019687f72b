"""Sectioned ``key = value`` run configuration and seed splitting.

A config file is parsed with :mod:`configparser`. Every key has a typed
default, unknown sections or keys are rejected, and path-valued keys are
resolved relative to the directory holding the config file.
"""
import configparser
import hashlib
import os
from dataclasses import fields

from .errors import ArgumentError
from .trainer.data import OOD_KINDS, DataSpec
from .trainer.train import CRITERIA, TrainConfig
from .transport import DEFAULT_RIDGE, SinkhornConfig
from .scoring import DEFAULT_SHRINKAGE

METRICS = ("MSP", "ENERGY", "MAHALANOBIS", "KNN")
# metrics computable from averaged features alone
FEATURE_METRICS = ("MAHALANOBIS", "KNN")


class ConfigError(ArgumentError):
    """Invalid configuration; ``key`` names the offending ``section.key``."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


def derive_seed(seed, purpose):
    """Child seed ``(seed + H(purpose)) mod 2**64``.

    ``H`` is the first 8 bytes of the SHA-256 digest of the UTF-8 purpose
    string read as a little-endian integer, so the rule is identical on
    every platform and Python build.
    """
    h = int.from_bytes(hashlib.sha256(purpose.encode("utf-8")).digest()[:8], "little")
    return (int(seed) + h) % (1 << 64)


def _str_list(text):
    return [t.strip() for t in text.split(",") if t.strip()]


def _int_list(text):
    return [int(t) for t in _str_list(text)]


def _bool(text):
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _render(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(str(v) for v in value)
    return str(value)


_TRAIN_DEFAULTS = TrainConfig()
_SINKHORN_DEFAULTS = SinkhornConfig()
_DATA_DEFAULTS = DataSpec()

# section -> key -> (parser, default)
SCHEMA = {
    "data": {
        "seed": (int, 0),
        "classes": (int, _DATA_DEFAULTS.classes),
        "per_class": (int, _DATA_DEFAULTS.per_class),
        "test_per_class": (int, _DATA_DEFAULTS.test_per_class),
        "dim": (int, _DATA_DEFAULTS.dim),
        "ood_kind": (_str_list, list(OOD_KINDS)),
        "ood_count": (int, _DATA_DEFAULTS.ood_count),
        "out_dir": ("path", "mcens-out"),
    },
    "train": {
        "criteria": (_str_list, list(CRITERIA)),
        "seeds": (_int_list, [0]),
        "epochs": (int, _TRAIN_DEFAULTS.epochs),
        "batch_size": (int, _TRAIN_DEFAULTS.batch_size),
        "learning_rate": (float, _TRAIN_DEFAULTS.learning_rate),
        "cosine": (_bool, _TRAIN_DEFAULTS.cosine),
        "momentum": (float, _TRAIN_DEFAULTS.momentum),
        "weight_decay": (float, _TRAIN_DEFAULTS.weight_decay),
        "temperature": (float, _TRAIN_DEFAULTS.temperature),
        "augment_noise_sigma": (float, _TRAIN_DEFAULTS.augment_noise_sigma),
        "augment_drop_prob": (float, _TRAIN_DEFAULTS.augment_drop_prob),
        "head_epochs": (int, _TRAIN_DEFAULTS.head_epochs),
        "head_learning_rate": (float, _TRAIN_DEFAULTS.head_learning_rate),
        "widths": (_int_list, list(_TRAIN_DEFAULTS.widths)),
    },
    "sinkhorn": {
        "epsilon": (float, _SINKHORN_DEFAULTS.epsilon),
        "iterations": (int, _SINKHORN_DEFAULTS.iterations),
        "marginal_tol": (float, _SINKHORN_DEFAULTS.marginal_tol),
        "anchors": (int, 64),
        "k": (int, 1),
        "ridge": (float, DEFAULT_RIDGE),
        "heatmaps": (_bool, True),
    },
    "scoring": {
        "metrics": (_str_list, list(METRICS)),
        "knn_k": (int, 1),
        "knn_normalize": (_bool, True),
        "shrinkage": (float, DEFAULT_SHRINKAGE),
        "tpr_target": (float, 0.95),
        "ensemble": (_str_list, None),
    },
    "selection": {
        "pool": (_str_list, None),
        "M": (int, None),
        "lambda": (float, 1.0),
        "sci": ("path", None),
    },
}


class RunConfig:
    """Resolved configuration: ``cfg[section][key]`` gives the typed value."""

    def __init__(self, values, base_dir):
        self._values = values
        self.base_dir = base_dir

    def __getitem__(self, section):
        return self._values[section]

    def to_dict(self):
        return {s: {k: (list(v) if isinstance(v, tuple) else v) for k, v in kv.items()}
                for s, kv in self._values.items()}

    # ------------------------------------------------------------ views
    @property
    def seed(self):
        return self["data"]["seed"]

    @property
    def out_dir(self):
        return self["data"]["out_dir"]

    def data_spec(self):
        d = self["data"]
        return DataSpec(classes=d["classes"], per_class=d["per_class"],
                        test_per_class=d["test_per_class"], dim=d["dim"],
                        ood_kind=tuple(d["ood_kind"]), ood_count=d["ood_count"],
                        seed=derive_seed(self.seed, "data"))

    def model_names(self):
        t = self["train"]
        return [f"{c}_{s}" for c in t["criteria"] for s in t["seeds"]]

    def train_config(self, criterion, model_seed):
        t = self["train"]
        kw = {f.name: t[f.name] for f in fields(TrainConfig)
              if f.name in t and f.name not in ("criterion", "seed")}
        kw["widths"] = tuple(kw["widths"])
        return TrainConfig(criterion=criterion, seed=derive_seed(self.seed, f"train:{model_seed}"), **kw)

    def sinkhorn_config(self):
        s = self["sinkhorn"]
        return SinkhornConfig(epsilon=s["epsilon"], iterations=s["iterations"],
                              marginal_tol=s["marginal_tol"])

    def ensemble_members(self):
        members = self["scoring"]["ensemble"]
        return self.model_names() if members is None else list(members)

    def selection_pool(self):
        pool = self["selection"]["pool"]
        return self.model_names() if pool is None else list(pool)


def _resolve(value, base_dir):
    if value is None or os.path.isabs(value):
        return value
    return os.path.normpath(os.path.join(base_dir, value))


def _validate(values):
    t = values["train"]
    crits = []
    for c in t["criteria"]:
        if c.upper() not in CRITERIA:
            raise ConfigError(f"train.criteria: unknown criterion {c!r}; expected one of {CRITERIA}",
                              "train.criteria")
        crits.append(c.upper())
    t["criteria"] = crits
    if not crits:
        raise ConfigError("train.criteria: at least one criterion is required", "train.criteria")
    if not t["seeds"]:
        raise ConfigError("train.seeds: at least one seed is required", "train.seeds")
    if any(s < 0 for s in t["seeds"]) or values["data"]["seed"] < 0:
        raise ConfigError("seeds must be nonnegative", "train.seeds")
    for k in values["data"]["ood_kind"]:
        if k not in OOD_KINDS:
            raise ConfigError(f"data.ood_kind: unknown kind {k!r}; expected one of {OOD_KINDS}",
                              "data.ood_kind")
    sc = values["scoring"]
    metrics = []
    for m in sc["metrics"]:
        if m.upper() not in METRICS:
            raise ConfigError(f"scoring.metrics: unknown metric {m!r}; expected one of {METRICS}",
                              "scoring.metrics")
        metrics.append(m.upper())
    sc["metrics"] = metrics
    if not 0.0 < sc["tpr_target"] <= 1.0:
        raise ConfigError("scoring.tpr_target must lie in (0, 1]", "scoring.tpr_target")
    if sc["knn_k"] < 1:
        raise ConfigError("scoring.knn_k must be >= 1", "scoring.knn_k")
    if not 0.0 <= sc["shrinkage"] <= 1.0:
        raise ConfigError("scoring.shrinkage must lie in [0, 1]", "scoring.shrinkage")
    sk = values["sinkhorn"]
    if sk["anchors"] < 2:
        raise ConfigError("sinkhorn.anchors must be >= 2", "sinkhorn.anchors")
    if sk["k"] < 1:
        raise ConfigError("sinkhorn.k must be >= 1", "sinkhorn.k")
    if values["selection"]["lambda"] < 0:
        raise ConfigError("selection.lambda must be nonnegative", "selection.lambda")
    # delegate remaining range checks to the library constructors
    checks = [("train", lambda: TrainConfig(**{k: (tuple(v) if k == "widths" else v) for k, v in t.items()
                                                if k not in ("criteria", "seeds")})),
              ("sinkhorn", lambda: SinkhornConfig(sk["epsilon"], sk["iterations"], sk["marginal_tol"])),
              ("data", lambda: DataSpec(values["data"]["classes"], values["data"]["per_class"],
                                        values["data"]["test_per_class"], values["data"]["dim"],
                                        tuple(values["data"]["ood_kind"]), values["data"]["ood_count"]))]
    for section, make in checks:
        try:
            make()
        except ArgumentError as exc:
            raise ConfigError(f"[{section}]: {exc}", section) from None


def load_config(path=None, overrides=None):
    """Parse ``path`` (or defaults only when ``None``) into a :class:`RunConfig`.

    ``overrides`` maps ``"section.key"`` to raw string values and is applied
    after the file, so command-line flags win.

    Raises
    ------
    ConfigError
        On unknown sections or keys, or values that fail to parse or
        validate. The message names the offending key.
    FileNotFoundError
        If ``path`` does not exist.
    """
    parser = configparser.ConfigParser(interpolation=None, default_section="\x00unused")
    parser.optionxform = str
    base_dir = os.getcwd()
    if path is not None:
        if not os.path.isfile(path):
            raise FileNotFoundError(path)
        base_dir = os.path.dirname(os.path.abspath(path))
        try:
            with open(path, encoding="utf-8") as f:
                parser.read_file(f)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config: {exc}") from None
    raw = {s: dict(parser.items(s)) for s in parser.sections()}
    for dotted, value in (overrides or {}).items():
        section, key = dotted.split(".", 1)
        raw.setdefault(section, {})[key] = value
    values = {}
    for section, spec in SCHEMA.items():
        given = raw.pop(section, {})
        for key in given:
            if key not in spec:
                raise ConfigError(f"unknown key {section}.{key}", f"{section}.{key}")
        out = {}
        for key, (kind, default) in spec.items():
            if key not in given:
                out[key] = _resolve(default, base_dir) if kind == "path" else default
                continue
            text = given[key]
            if kind == "path":
                out[key] = _resolve(text.strip(), base_dir)
                continue
            try:
                out[key] = kind(text)
            except ValueError as exc:
                raise ConfigError(f"invalid value for {section}.{key}: {exc}", f"{section}.{key}") from None
        values[section] = out
    if raw:
        name = sorted(raw)[0]
        raise ConfigError(f"unknown section [{name}]", name)
    _validate(values)
    return RunConfig(values, base_dir)


def dump_config(cfg, base_dir=None):
    """Render a :class:`RunConfig` back to config-file text.

    With ``base_dir``, path-valued keys are written relative to it, so a
    dump stored in that directory loads back to the same paths wherever the
    directory is moved.
    """
    lines = []
    for section, kv in cfg.to_dict().items():
        lines.append(f"[{section}]")
        for k, v in kv.items():
            if v is None:
                continue
            if base_dir is not None and SCHEMA[section][k][0] == "path":
                v = os.path.relpath(v, base_dir)
            lines.append(f"{k} = {_render(v)}")
        lines.append("")
    return "\n".join(lines)
