"""Strict JSON experiment configuration.

Configs are validated before anything is computed: unknown keys anywhere are
errors, as are missing required keys and out-of-domain values. Parsing
produces a canonical dict (defaults materialized) whose serialization is
idempotent, and the sha256 digest of that canonical form identifies the
config in every output file's provenance header.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from . import rng as streams
from .bounds import BoundTrialConfig
from .data import (
    DatasetShard,
    GaussianClusters,
    GaussianLinear,
    generate,
    generate_pooled,
    load_delimited,
    partition_dirichlet,
    partition_iid,
    partition_label_sorted,
)
from .engine import ParticipationSpec, ScheduleSpec
from .models import LogisticL2Spec, MlpSpec, ModelSpec, RidgeSpec


class ConfigError(ValueError):
    """A config failed validation; the message names the offending key."""


def _check_keys(d: dict, where: str, required: set[str], optional: set[str] = frozenset()):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object.")
    unknown = set(d) - required - set(optional)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}.")
    missing = required - set(d)
    if missing:
        raise ConfigError(f"{where}: missing required keys {sorted(missing)}.")


def _as_int(d: dict, key: str, where: str, default=None, minimum=None):
    if key not in d:
        if default is None:
            raise ConfigError(f"{where}: missing {key}.")
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{where}.{key} must be an integer.")
    if minimum is not None and v < minimum:
        raise ConfigError(f"{where}.{key} must be >= {minimum}.")
    return v


def _as_float(d: dict, key: str, where: str, default=None, minimum=None, strict_min=None):
    if key not in d:
        if default is None:
            raise ConfigError(f"{where}: missing {key}.")
        return float(default)
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}.{key} must be a number.")
    v = float(v)
    if not np.isfinite(v):
        raise ConfigError(f"{where}.{key} must be finite.")
    if minimum is not None and v < minimum:
        raise ConfigError(f"{where}.{key} must be >= {minimum}.")
    if strict_min is not None and v <= strict_min:
        raise ConfigError(f"{where}.{key} must be > {strict_min}.")
    return v


def _as_choice(d: dict, key: str, where: str, choices, default=None):
    if key not in d:
        if default is None:
            raise ConfigError(f"{where}: missing {key}.")
        return default
    v = d[key]
    if v not in choices:
        raise ConfigError(f"{where}.{key} must be one of {sorted(choices)}, got {v!r}.")
    return v


def _as_bool(d: dict, key: str, where: str, default: bool):
    v = d.get(key, default)
    if not isinstance(v, bool):
        raise ConfigError(f"{where}.{key} must be true or false.")
    return v


def _as_float_list(v, where: str):
    if not isinstance(v, list) or not v:
        raise ConfigError(f"{where} must be a non-empty list of numbers.")
    out = []
    for x in v:
        if isinstance(x, bool) or not isinstance(x, (int, float)):
            raise ConfigError(f"{where} must contain only numbers.")
        out.append(float(x))
    return out


MODEL_FAMILIES = ("ridge", "logistic_l2", "mlp")
SOURCE_KINDS = ("gaussian_linear", "gaussian_clusters", "file")
PARTITION_MODES = ("per_client", "iid", "label_sorted", "dirichlet")
ALGORITHMS = ("fedavg", "fedals", "scaffold", "fedals_scaffold")


@dataclass
class ExperimentConfig:
    """A fully validated experiment. canonical is the normalized JSON dict."""

    canonical: dict

    @property
    def algorithm(self) -> str:
        return self.canonical["algorithm"]

    @property
    def num_clients(self) -> int:
        return self.canonical["clients"]

    @property
    def seeds(self) -> list[int]:
        return list(self.canonical["seeds"])

    @property
    def weights(self) -> list[float]:
        w = self.canonical["weights"]
        if w is None:
            return [1.0 / self.num_clients] * self.num_clients
        return list(w)

    @property
    def output(self) -> str:
        return self.canonical["output"]

    @property
    def cadence(self) -> int:
        return self.canonical["metrics"]["cadence"]

    @property
    def per_client_risks(self) -> bool:
        return self.canonical["metrics"]["per_client_risks"]

    @property
    def risks_at_sync(self) -> bool:
        return self.canonical["metrics"]["risks_at_sync"]

    @property
    def representation_layers(self) -> int:
        return self.canonical["model"].get("representation_layers", 0)

    def model_spec(self) -> ModelSpec:
        m = self.canonical["model"]
        if m["family"] == "ridge":
            return RidgeSpec(m["input_dim"], m["l2"])
        if m["family"] == "logistic_l2":
            return LogisticL2Spec(m["input_dim"], m["l2"])
        return MlpSpec(
            m["input_dim"],
            tuple(m["hidden"]),
            m["num_classes"],
            m["activation"],
            m["l2"],
        )

    def schedule_spec(self) -> ScheduleSpec:
        s = self.canonical["schedule"]
        return ScheduleSpec(
            tau=s["tau"],
            eta=s["eta"],
            rounds=s["rounds"],
            batch_size=s["batch_size"],
            alpha=s["alpha"],
        )

    def participation_spec(self) -> ParticipationSpec:
        p = self.canonical["participation"]
        return ParticipationSpec(p["mode"], p.get("num_sampled"))

    def to_json(self) -> str:
        return json.dumps(self.canonical, indent=2, sort_keys=True) + "\n"

    def digest(self) -> str:
        blob = json.dumps(self.canonical, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _parse_model(m: dict) -> dict:
    family = _as_choice(m, "family", "model", MODEL_FAMILIES)
    if family in ("ridge", "logistic_l2"):
        _check_keys(m, "model", {"family", "input_dim"}, {"l2"})
        return {
            "family": family,
            "input_dim": _as_int(m, "input_dim", "model", minimum=1),
            "l2": _as_float(m, "l2", "model", default=0.0, minimum=0.0),
        }
    _check_keys(
        m,
        "model",
        {"family", "input_dim", "hidden", "num_classes"},
        {"activation", "l2", "representation_layers"},
    )
    hidden = m["hidden"]
    if not isinstance(hidden, list) or not all(
        isinstance(h, int) and not isinstance(h, bool) and h >= 1 for h in hidden
    ):
        raise ConfigError("model.hidden must be a list of positive integers.")
    num_layers = len(hidden) + 1
    rep = _as_int(m, "representation_layers", "model", default=0, minimum=0)
    if rep > num_layers:
        raise ConfigError(f"model.representation_layers must be <= {num_layers}.")
    return {
        "family": family,
        "input_dim": _as_int(m, "input_dim", "model", minimum=1),
        "hidden": list(hidden),
        "num_classes": _as_int(m, "num_classes", "model", minimum=2),
        "activation": _as_choice(m, "activation", "model", ("relu", "tanh"), default="relu"),
        "l2": _as_float(m, "l2", "model", default=0.0, minimum=0.0),
        "representation_layers": rep,
    }


def _parse_covariance(v, dim: int, where: str) -> dict | str:
    if v == "identity":
        return "identity"
    if isinstance(v, dict):
        _check_keys(v, where, {"diagonal"})
        diag = _as_float_list(v["diagonal"], f"{where}.diagonal")
        if len(diag) != dim:
            raise ConfigError(f"{where}.diagonal must have {dim} entries.")
        if any(x < 0 for x in diag):
            raise ConfigError(f"{where}.diagonal entries must be >= 0.")
        return {"diagonal": diag}
    if isinstance(v, list):
        rows = [_as_float_list(r, f"{where} row") for r in v]
        if len(rows) != dim or any(len(r) != dim for r in rows):
            raise ConfigError(f"{where} must be a {dim}x{dim} matrix.")
        return rows
    raise ConfigError(f'{where} must be "identity", {{"diagonal": [...]}}, or a matrix.')


def _parse_source(s: dict, dim_owner: str = "data.source") -> dict:
    kind = _as_choice(s, "kind", dim_owner, SOURCE_KINDS)
    if kind == "gaussian_linear":
        _check_keys(
            s,
            dim_owner,
            {"kind", "dim"},
            {"covariance", "noise_std", "coef", "client_coefs", "coef_mode", "coef_scale"},
        )
        dim = _as_int(s, "dim", dim_owner, minimum=1)
        out = {
            "kind": kind,
            "dim": dim,
            "covariance": _parse_covariance(
                s.get("covariance", "identity"), dim, f"{dim_owner}.covariance"
            ),
            "noise_std": _as_float(s, "noise_std", dim_owner, default=1.0, minimum=0.0),
        }
        if "coef" in s and "client_coefs" in s:
            raise ConfigError(f"{dim_owner}: give coef or client_coefs, not both.")
        if "coef" in s:
            coef = _as_float_list(s["coef"], f"{dim_owner}.coef")
            if len(coef) != dim:
                raise ConfigError(f"{dim_owner}.coef must have {dim} entries.")
            out["coef"] = coef
        elif "client_coefs" in s:
            if not isinstance(s["client_coefs"], list) or not s["client_coefs"]:
                raise ConfigError(f"{dim_owner}.client_coefs must be a list of rows.")
            rows = [_as_float_list(r, f"{dim_owner}.client_coefs row") for r in s["client_coefs"]]
            if any(len(r) != dim for r in rows):
                raise ConfigError(f"{dim_owner}.client_coefs rows must have {dim} entries.")
            out["client_coefs"] = rows
        else:
            out["coef_mode"] = _as_choice(
                s,
                "coef_mode",
                dim_owner,
                ("zero", "shared_random", "per_client_random"),
                default="shared_random",
            )
            out["coef_scale"] = _as_float(s, "coef_scale", dim_owner, default=1.0, minimum=0.0)
        return out
    if kind == "gaussian_clusters":
        _check_keys(
            s,
            dim_owner,
            {"kind", "dim", "num_classes"},
            {"mean_scale", "cov_scale", "balanced"},
        )
        return {
            "kind": kind,
            "dim": _as_int(s, "dim", dim_owner, minimum=1),
            "num_classes": _as_int(s, "num_classes", dim_owner, minimum=2),
            "mean_scale": _as_float(s, "mean_scale", dim_owner, default=1.0, minimum=0.0),
            "cov_scale": _as_float(s, "cov_scale", dim_owner, default=1.0, strict_min=0.0),
            "balanced": _as_bool(s, "balanced", dim_owner, False),
        }
    _check_keys(s, dim_owner, {"kind", "path"})
    if not isinstance(s["path"], str) or not s["path"]:
        raise ConfigError(f"{dim_owner}.path must be a non-empty string.")
    return {"kind": kind, "path": s["path"]}


def _parse_partition(p: dict) -> dict:
    mode = _as_choice(p, "mode", "data.partition", PARTITION_MODES)
    if mode == "label_sorted":
        _check_keys(p, "data.partition", {"mode", "classes_per_client"})
        return {
            "mode": mode,
            "classes_per_client": _as_int(p, "classes_per_client", "data.partition", minimum=1),
        }
    if mode == "dirichlet":
        _check_keys(p, "data.partition", {"mode", "concentration"})
        return {
            "mode": mode,
            "concentration": _as_float(p, "concentration", "data.partition", strict_min=0.0),
        }
    _check_keys(p, "data.partition", {"mode"})
    return {"mode": mode}


def _parse_data(d: dict) -> dict:
    _check_keys(
        d,
        "data",
        {"source", "partition", "n_per_client"},
        {"holdout_per_client", "batches_with_replacement"},
    )
    source = _parse_source(d["source"])
    partition = _parse_partition(d["partition"])
    out = {
        "source": source,
        "partition": partition,
        "n_per_client": _as_int(d, "n_per_client", "data", minimum=1),
        "holdout_per_client": _as_int(d, "holdout_per_client", "data", default=0, minimum=0),
        "batches_with_replacement": _as_bool(d, "batches_with_replacement", "data", False),
    }
    if source["kind"] == "file":
        if partition["mode"] == "per_client":
            raise ConfigError("file sources have no per-client law; partition the file instead.")
        if out["holdout_per_client"] > 0:
            raise ConfigError("file sources cannot generate holdout samples.")
    if (
        source["kind"] == "gaussian_linear"
        and partition["mode"] != "per_client"
        and ("client_coefs" in source or source.get("coef_mode") == "per_client_random")
    ):
        raise ConfigError(
            "pooled partitions draw from a single law; per-client coefficients "
            'require partition mode "per_client".'
        )
    return out


def parse_config(doc: dict) -> ExperimentConfig:
    """Validate a config dict and return its canonical form."""
    _check_keys(
        doc,
        "config",
        {"algorithm", "clients", "model", "data", "schedule"},
        {"seed", "seeds", "weights", "participation", "metrics", "output"},
    )
    algorithm = _as_choice(doc, "algorithm", "config", ALGORITHMS)
    clients = _as_int(doc, "clients", "config", minimum=1)

    if ("seed" in doc) == ("seeds" in doc):
        raise ConfigError("config: give exactly one of seed or seeds.")
    if "seed" in doc:
        seeds = [_as_int(doc, "seed", "config", minimum=0)]
    else:
        raw = doc["seeds"]
        if not isinstance(raw, list) or not raw:
            raise ConfigError("config.seeds must be a non-empty list of integers.")
        if not all(isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in raw):
            raise ConfigError("config.seeds must contain non-negative integers.")
        seeds = list(raw)

    weights = doc.get("weights")
    if weights is not None:
        weights = _as_float_list(weights, "config.weights")
        if len(weights) != clients:
            raise ConfigError(f"config.weights must have {clients} entries.")
        if any(w < 0 for w in weights):
            raise ConfigError("config.weights must be non-negative.")
        if abs(sum(weights) - 1.0) > 1e-12:
            raise ConfigError("config.weights must sum to 1.")

    s = doc["schedule"]
    _check_keys(s, "schedule", {"tau", "eta", "rounds", "batch_size"}, {"alpha"})
    schedule = {
        "tau": _as_int(s, "tau", "schedule", minimum=1),
        "alpha": _as_int(s, "alpha", "schedule", default=1, minimum=1),
        "eta": _as_float(s, "eta", "schedule", strict_min=0.0),
        "rounds": _as_int(s, "rounds", "schedule", minimum=1),
        "batch_size": _as_int(s, "batch_size", "schedule", minimum=1),
    }
    if algorithm in ("fedavg", "scaffold") and schedule["alpha"] != 1:
        raise ConfigError(f"schedule.alpha must be 1 for {algorithm}.")

    p = doc.get("participation", {"mode": "full"})
    mode = _as_choice(p, "mode", "participation", ("full", "with_replacement", "without_replacement"))
    if mode == "full":
        _check_keys(p, "participation", {"mode"})
        participation = {"mode": mode}
    else:
        _check_keys(p, "participation", {"mode", "num_sampled"})
        num_sampled = _as_int(p, "num_sampled", "participation", minimum=1)
        if mode == "without_replacement" and num_sampled > clients:
            raise ConfigError("participation.num_sampled cannot exceed clients.")
        participation = {"mode": mode, "num_sampled": num_sampled}

    m = doc.get("metrics", {})
    _check_keys(m, "metrics", set(), {"cadence", "per_client_risks", "risks_at_sync"})
    metrics = {
        "cadence": _as_int(m, "cadence", "metrics", default=1, minimum=0),
        "per_client_risks": _as_bool(m, "per_client_risks", "metrics", False),
        "risks_at_sync": _as_bool(m, "risks_at_sync", "metrics", True),
    }

    model = _parse_model(doc["model"])
    data = _parse_data(doc["data"])

    if model["family"] == "mlp":
        if data["source"]["kind"] == "gaussian_linear":
            raise ConfigError("mlp models need classification data.")
        if (
            data["source"]["kind"] == "gaussian_clusters"
            and data["source"]["num_classes"] != model["num_classes"]
        ):
            raise ConfigError("model.num_classes must match data.source.num_classes.")
    if model["family"] == "ridge" and data["source"]["kind"] == "gaussian_clusters":
        raise ConfigError("ridge models need regression data.")
    if algorithm in ("fedals", "fedals_scaffold"):
        if model["family"] != "mlp":
            raise ConfigError(f"{algorithm} needs a model with representation and head blocks.")
        rep = model["representation_layers"]
        if rep < 1 or rep >= len(model["hidden"]) + 1:
            raise ConfigError(
                f"{algorithm} needs 1 <= model.representation_layers <= {len(model['hidden'])}."
            )

    output = doc.get("output", "fedsim_out")
    if not isinstance(output, str) or not output:
        raise ConfigError("config.output must be a non-empty string.")

    canonical = {
        "algorithm": algorithm,
        "clients": clients,
        "seeds": seeds,
        "weights": weights,
        "model": model,
        "data": data,
        "schedule": schedule,
        "participation": participation,
        "metrics": metrics,
        "output": output,
    }
    return ExperimentConfig(canonical)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object.")
    return parse_config(doc)


def _covariance_matrix(cov, dim: int) -> np.ndarray:
    if cov == "identity":
        return np.eye(dim)
    if isinstance(cov, dict):
        return np.diag(np.asarray(cov["diagonal"], dtype=np.float64))
    return np.asarray(cov, dtype=np.float64)


def build_generator(cfg: ExperimentConfig, seed: int):
    """Materialize the configured data source for one seed.

    Returns a GeneratorSpec, or (X, y) arrays for file sources. Random
    coefficients and class means come from a stream keyed by the run seed, so
    the whole data law is reproducible from (config, seed).
    """
    src = cfg.canonical["data"]["source"]
    if src["kind"] == "file":
        return load_delimited(src["path"])
    gen = streams.substream(seed, streams.COEF)
    if src["kind"] == "gaussian_linear":
        dim = src["dim"]
        cov = _covariance_matrix(src["covariance"], dim)
        if "coef" in src:
            coefs = np.asarray([src["coef"]])
        elif "client_coefs" in src:
            coefs = np.asarray(src["client_coefs"])
        elif src["coef_mode"] == "zero":
            coefs = np.zeros((1, dim))
        elif src["coef_mode"] == "shared_random":
            coefs = src["coef_scale"] * gen.standard_normal((1, dim))
        else:
            coefs = src["coef_scale"] * gen.standard_normal((cfg.num_clients, dim))
        return GaussianLinear(cov, coefs, src["noise_std"], seed)
    means = src["mean_scale"] * gen.standard_normal((src["num_classes"], src["dim"]))
    cov = src["cov_scale"] * np.eye(src["dim"])
    return GaussianClusters(means, cov, seed, balanced=src["balanced"])


def build_shards(cfg: ExperimentConfig, seed: int):
    """Build training shards and the population source for one seed.

    Returns (shards, pop_source) where pop_source is a GaussianLinear spec
    (exact test risk for ridge), a list of held-out shards, or None when the
    config provides no population route.
    """
    data_cfg = cfg.canonical["data"]
    part = data_cfg["partition"]
    n_per = data_cfg["n_per_client"]
    clients = cfg.num_clients
    source = build_generator(cfg, seed)

    if isinstance(source, tuple):  # file data
        X, y = source
        shards = _partition(X, y, part, clients, seed)
        return shards, None

    if part["mode"] == "per_client":
        shards = generate(source, n_per, clients)
    else:
        X, y = generate_pooled(source, n_per * clients)
        shards = _partition(X, y, part, clients, seed)

    holdout_n = data_cfg["holdout_per_client"]
    if cfg.canonical["model"]["family"] == "ridge" and isinstance(source, GaussianLinear):
        pop_source = source
    elif holdout_n > 0:
        pop_source = [
            DatasetShard(
                *source.sample(holdout_n, k, streams.substream(seed, streams.EVAL, k)),
                owner=k,
                provenance="holdout",
            )
            for k in range(clients)
        ]
    else:
        pop_source = None
    return shards, pop_source


def _partition(X, y, part: dict, clients: int, seed: int):
    if part["mode"] == "iid":
        return partition_iid(X, y, clients, seed)
    if part["mode"] == "label_sorted":
        return partition_label_sorted(X, y, clients, part["classes_per_client"])
    if part["mode"] == "dirichlet":
        return partition_dirichlet(X, y, clients, part["concentration"], seed)
    raise ConfigError(f"partition mode {part['mode']!r} needs generated data.")


BOUND_COEF_MODES = ("zero", "shared_random", "per_client_random")


def parse_bound_config(doc: dict) -> dict:
    """Validate a bound-verification config document; returns its canonical dict."""
    _check_keys(
        doc,
        "bound config",
        {"clients", "n_per_client", "dim", "l2", "trials", "seed"},
        {
            "noise_std",
            "covariance",
            "coef",
            "client_coefs",
            "coef_mode",
            "coef_scale",
            "weights",
            "identities",
        },
    )
    clients = _as_int(doc, "clients", "bound config", minimum=1)
    dim = _as_int(doc, "dim", "bound config", minimum=1)
    out = {
        "clients": clients,
        "n_per_client": _as_int(doc, "n_per_client", "bound config", minimum=2),
        "dim": dim,
        "l2": _as_float(doc, "l2", "bound config", strict_min=0.0),
        "trials": _as_int(doc, "trials", "bound config", minimum=1),
        "seed": _as_int(doc, "seed", "bound config", minimum=0),
        "noise_std": _as_float(doc, "noise_std", "bound config", default=1.0, minimum=0.0),
        "covariance": _parse_covariance(
            doc.get("covariance", "identity"), dim, "bound config.covariance"
        ),
    }
    if "coef" in doc and "client_coefs" in doc:
        raise ConfigError("bound config: give coef or client_coefs, not both.")
    if "coef" in doc:
        coef = _as_float_list(doc["coef"], "bound config.coef")
        if len(coef) != dim:
            raise ConfigError(f"bound config.coef must have {dim} entries.")
        out["coef"] = coef
    elif "client_coefs" in doc:
        rows = [
            _as_float_list(r, "bound config.client_coefs row") for r in doc["client_coefs"]
        ]
        if len(rows) != clients or any(len(r) != dim for r in rows):
            raise ConfigError(f"bound config.client_coefs must be {clients} rows of {dim}.")
        out["client_coefs"] = rows
    else:
        out["coef_mode"] = _as_choice(
            doc, "coef_mode", "bound config", BOUND_COEF_MODES, default="shared_random"
        )
        out["coef_scale"] = _as_float(doc, "coef_scale", "bound config", default=1.0, minimum=0.0)

    if "weights" in doc and doc["weights"] is not None:
        w = _as_float_list(doc["weights"], "bound config.weights")
        if len(w) != clients:
            raise ConfigError(f"bound config.weights must have {clients} entries.")
        out["weights"] = w
    else:
        out["weights"] = None

    ident = doc.get("identities")
    if ident is not None:
        _check_keys(ident, "bound config.identities", set(), {"num_sampled", "draws"})
        sampled = ident.get("num_sampled", [clients])
        if not isinstance(sampled, list) or not all(
            isinstance(k, int) and not isinstance(k, bool) and k >= 1 for k in sampled
        ):
            raise ConfigError("bound config.identities.num_sampled must be a list of ints >= 1.")
        out["identities"] = {
            "num_sampled": list(sampled),
            "draws": _as_int(ident, "draws", "bound config.identities", default=100000, minimum=2),
        }
    else:
        out["identities"] = None
    return out


def load_bound_config(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object.")
    return parse_bound_config(doc)


def build_bound_trial_config(canonical: dict, seed: int | None = None) -> BoundTrialConfig:
    """Turn a canonical bound config into runnable trial inputs."""
    seed = canonical["seed"] if seed is None else seed
    dim = canonical["dim"]
    cov = _covariance_matrix(canonical["covariance"], dim)
    gen = streams.substream(seed, streams.COEF)
    if "coef" in canonical:
        coefs = np.asarray([canonical["coef"]])
    elif "client_coefs" in canonical:
        coefs = np.asarray(canonical["client_coefs"])
    elif canonical["coef_mode"] == "zero":
        coefs = np.zeros((1, dim))
    elif canonical["coef_mode"] == "shared_random":
        coefs = canonical["coef_scale"] * gen.standard_normal((1, dim))
    else:
        coefs = canonical["coef_scale"] * gen.standard_normal((canonical["clients"], dim))
    generator = GaussianLinear(cov, coefs, canonical["noise_std"], seed)
    weights = canonical["weights"]
    try:
        return BoundTrialConfig(
            generator=generator,
            num_clients=canonical["clients"],
            n_per_client=canonical["n_per_client"],
            l2=canonical["l2"],
            trials=canonical["trials"],
            seed=seed,
            weights=None if weights is None else np.asarray(weights),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def bound_config_digest(canonical: dict) -> str:
    blob = json.dumps(canonical, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()
