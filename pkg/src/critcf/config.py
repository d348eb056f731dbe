"""Flat key=value run configuration and the reproducibility manifest.

A run manifest is the training config with every default materialized plus
the dataset fingerprint and code version; it doubles as a config file, so
re-running `train` against a manifest reproduces the original run.
"""

import hashlib
import os

from . import __version__
from .errors import ConfigError, DataError
from .training import TrainConfig

# key in the flat file -> TrainConfig field
CONFIG_KEYS = (
    ("model", "model"),
    ("d", "dim"),
    ("lr", "lr"),
    ("batch", "batch_size"),
    ("epochs", "epochs"),
    ("dropout", "dropout"),
    ("w", "neg_weight"),
    ("alpha", "bound_ratio"),
    ("lambdas", "behavior_weights"),
    ("g", "penalty"),
    ("seed", "seed"),
    ("patience", "patience"),
    ("num_layers", "num_layers"),
    ("variant", "variant"),
    ("eval_cutoff", "eval_cutoff"),
)

_INT_KEYS = {"d", "batch", "epochs", "seed", "patience", "num_layers", "eval_cutoff"}
_FLOAT_KEYS = {"lr", "dropout", "w", "alpha"}

MANIFEST_KEYS = ("dataset_hash", "code_version")


def parse_kv_file(path):
    """Read key=value lines; '#' starts a comment, blank lines are skipped."""
    values = {}
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise ConfigError("cannot read config file %s: %s" % (path, exc)) from None
    with fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError("%s:%d: expected key=value, got %r" % (path, lineno, raw.strip()))
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return values


def apply_kv(cfg, values, source="config"):
    """Return a new TrainConfig with the given key=value strings applied."""
    known = dict(CONFIG_KEYS)
    updates = {}
    for key, raw in values.items():
        if key in MANIFEST_KEYS:
            continue
        if key not in known:
            raise ConfigError(
                "%s: unknown key %r (valid: %s)"
                % (source, key, ", ".join(k for k, _ in CONFIG_KEYS))
            )
        field = known[key]
        try:
            if key in _INT_KEYS:
                value = int(raw)
            elif key in _FLOAT_KEYS:
                value = float(raw)
            elif key == "lambdas":
                value = tuple(float(tok) for tok in raw.split(","))
            else:
                value = raw
        except ValueError:
            raise ConfigError("%s: bad value %r for key %r" % (source, raw, key)) from None
        updates[field] = value
    merged = {**cfg.__dict__, **updates}
    return TrainConfig(**merged)


def config_to_kv(cfg):
    """Materialize every field of a TrainConfig as flat strings."""
    out = {}
    for key, field in CONFIG_KEYS:
        value = getattr(cfg, field)
        if key == "lambdas":
            out[key] = ",".join(repr(float(v)) for v in value)
        elif isinstance(value, float):
            out[key] = repr(value)
        else:
            out[key] = str(value)
    return out


def dataset_fingerprint(dataset_dir):
    """Content hash of a dataset directory (file names and bytes, sorted)."""
    digest = hashlib.sha256()
    try:
        names = sorted(os.listdir(dataset_dir))
    except OSError as exc:
        raise DataError("cannot read dataset directory %s: %s" % (dataset_dir, exc)) from None
    for name in names:
        path = os.path.join(dataset_dir, name)
        if not os.path.isfile(path):
            continue
        digest.update(name.encode("utf-8"))
        digest.update(b"\0")
        with open(path, "rb") as fh:
            digest.update(fh.read())
        digest.update(b"\0")
    return digest.hexdigest()


def write_manifest(path, cfg, dataset_hash):
    kv = config_to_kv(cfg)
    with open(path, "w", encoding="utf-8") as fh:
        for key, _ in CONFIG_KEYS:
            fh.write("%s=%s\n" % (key, kv[key]))
        fh.write("dataset_hash=%s\n" % dataset_hash)
        fh.write("code_version=%s\n" % __version__)


def check_manifest_keys(values, dataset_hash, warn):
    """Validate manifest-only keys when a manifest is reused as config."""
    expected = values.get("dataset_hash")
    if expected is not None and expected != dataset_hash:
        raise DataError(
            "dataset fingerprint mismatch: config expects %s but directory hashes to %s"
            % (expected, dataset_hash)
        )
    version = values.get("code_version")
    if version is not None and version != __version__:
        warn("config was written by code version %s, running %s" % (version, __version__))
