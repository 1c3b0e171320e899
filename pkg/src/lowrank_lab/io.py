"""JSON / JSONL / CSV serialization for models, families, datasets and reports."""
from __future__ import annotations

import csv
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .mdp import FactoredLevel, LatentRepresentation, LowRankMDP, MixturePolicy, Policy, PrefixThenUniform, TabularPolicy

SCHEMA_VERSION = 1


def model_to_dict(model: LowRankMDP) -> dict:
    out = {
        "schema_version": SCHEMA_VERSION,
        "H": model.H,
        "N": model.N,
        "K": model.K,
        "d": model.d,
        "start_state": model.start_state,
        "levels": [{"phi": lvl.phi.tolist(), "mu": lvl.mu.tolist()} for lvl in model.levels],
    }
    if model.latent is not None:
        out["latent"] = [{"psi": r.psi.tolist(), "nu": r.nu.tolist()} for r in model.latent]
    return out


def model_from_dict(doc: dict) -> LowRankMDP:
    levels = tuple(FactoredLevel(np.array(l["phi"]), np.array(l["mu"])) for l in doc["levels"])
    latent = doc.get("latent")
    if latent is not None:
        latent = tuple(LatentRepresentation(np.array(r["psi"]), np.array(r["nu"])) for r in latent)
    model = LowRankMDP(levels, int(doc.get("start_state", 0)), latent)
    for key in ("H", "N", "K", "d"):
        if key in doc and doc[key] != getattr(model, key):
            raise ValueError(f"header {key}={doc[key]} disagrees with tables ({getattr(model, key)})")
    return model


def family_to_dict(family) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "phis": [p.tolist() for p in family.phis],
        "mus": [m.tolist() for m in family.mus],
    }


def family_from_dict(doc: dict):
    from .envs import HypothesisFamily

    return HypothesisFamily(tuple(np.array(p) for p in doc["phis"]), tuple(np.array(m) for m in doc["mus"]))


def policy_to_dict(policy: Policy) -> dict:
    if isinstance(policy, TabularPolicy):
        return {"kind": "tabular", "probs": policy.probs.tolist()}
    if isinstance(policy, MixturePolicy):
        return {"kind": "mixture", "weights": policy.weights.tolist(),
                "components": [policy_to_dict(c) for c in policy.components]}
    if isinstance(policy, PrefixThenUniform):
        base = None if policy.base is None else policy_to_dict(policy.base)
        return {"kind": "prefix_then_uniform", "prefix": policy.prefix, "base": base}
    raise TypeError(f"cannot serialize {type(policy).__name__}")


def policy_from_dict(doc: dict) -> Policy:
    kind = doc["kind"]
    if kind == "tabular":
        return TabularPolicy(np.array(doc["probs"]))
    if kind == "mixture":
        return MixturePolicy(tuple(policy_from_dict(c) for c in doc["components"]), np.array(doc["weights"]))
    if kind == "prefix_then_uniform":
        base = None if doc["base"] is None else policy_from_dict(doc["base"])
        return PrefixThenUniform(base, int(doc["prefix"]))
    raise ValueError(f"unknown policy kind {kind!r}")


def dumps(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=1)


def write_text_atomic(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_json(path, doc) -> None:
    write_text_atomic(path, dumps(doc) + "\n")


def read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def save_model(path, model: LowRankMDP) -> None:
    write_json(path, model_to_dict(model))


def load_model(path) -> LowRankMDP:
    return model_from_dict(read_json(path))


def write_jsonl(path, rows) -> None:
    write_text_atomic(path, "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows))


def read_jsonl(path) -> list:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_csv(path, columns, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            values = [row[c] for c in columns] if isinstance(row, dict) else list(row)
            writer.writerow([_fmt(v) for v in values])
    os.replace(tmp, path)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    return v


def read_csv(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
