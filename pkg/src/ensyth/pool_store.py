"""Model bundles: a ZIP of ``manifest.json`` plus ``arrays/<name>.ens``.

Entry order is fixed (manifest first, arrays lexicographic) and archive
timestamps are zeroed, so identical models serialize to stable bytes.  The
content digest covers the manifest minus ``created_at`` plus every array
payload, making it independent of when a bundle was written.
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from datetime import datetime, timezone

import numpy as np

from .errors import IntegrityError
from .network import ReluNetwork, TrainConfig
from .pruner import LayerFeasibility, PruneConfig, PrunedModel
from .tensor import DenseMatrix, SparseMatrix, decode_array, encode_array

SCHEMA_VERSION = 1
BUNDLE_SUFFIX = ".ezip"

_MANIFEST_KEYS = ("schema_version", "kind", "layer_dims", "activation",
                  "train_config", "prune_config", "parent_hash", "arrays",
                  "created_at")


def _train_config_dict(cfg: TrainConfig | None):
    if cfg is None:
        return None
    def plain(v):
        return list(v) if isinstance(v, (tuple, list)) else v
    return {
        "epochs": cfg.epochs,
        "batch_size": cfg.batch_size,
        "learning_rate": cfg.learning_rate,
        "l1": plain(cfg.l1),
        "l2": plain(cfg.l2),
        "dropout_keep": plain(cfg.dropout_keep),
        "seed": cfg.seed,
    }


def _train_config_from_dict(d):
    if d is None:
        return None
    def tup(v):
        return tuple(v) if isinstance(v, list) else v
    return TrainConfig(epochs=d["epochs"], batch_size=d["batch_size"],
                       learning_rate=d["learning_rate"], l1=tup(d["l1"]),
                       l2=tup(d["l2"]), dropout_keep=tup(d["dropout_keep"]),
                       seed=d["seed"])


def _auto_record(name, matrix, dtype):
    """Pick whichever of dense/coo is fewer bytes for this array."""
    dense = encode_array(name, matrix, "dense", dtype=dtype)
    coo = encode_array(name, matrix, "coo", dtype=dtype)
    return coo if len(coo.payload) < len(dense.payload) else dense


def _model_arrays(model, dtype):
    if isinstance(model, PrunedModel):
        net = model.network
    else:
        net = model
    records = []
    for l, (w, b) in enumerate(zip(net.weights, net.biases), start=1):
        records.append(_auto_record(f"W{l}", DenseMatrix(w), dtype))
        records.append(encode_array(f"b{l}", DenseMatrix(b[:, np.newaxis]),
                                    "dense", dtype=dtype))
    if isinstance(model, PrunedModel):
        # Mask arrays are stored only when they differ from the weight
        # support (possible after fine-tuning); otherwise the loader
        # reconstructs them from the weights.
        if any((m != (w != 0.0)).any() for m, w in zip(model.masks, net.weights)):
            for l, m in enumerate(model.masks, start=1):
                records.append(_auto_record(f"M{l}",
                                            DenseMatrix(m.astype(np.float64)), "i64"))
    return records


def _build_manifest(model, train_config, created_at, records):
    if isinstance(model, PrunedModel):
        kind = "pruned"
        net = model.network
        prune_cfg = model.config.to_dict()
        prune_cfg["layer_epsilons"] = [float(e) for e in model.layer_epsilons]
        prune_cfg["feasibility"] = [r.to_dict() for r in model.feasibility_report]
        parent = model.parent_hash
    else:
        kind = "baseline"
        net = model
        prune_cfg = None
        parent = None
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": kind,
        "layer_dims": list(net.layer_dims),
        "activation": "relu",
        "train_config": _train_config_dict(train_config),
        "prune_config": prune_cfg,
        "parent_hash": parent,
        "arrays": [{"name": r.name, "dtype": r.dtype, "encoding": r.encoding,
                    "dims": list(r.dims)} for r in records],
        "created_at": created_at,
    }


def _manifest_json(manifest):
    return json.dumps(manifest, separators=(",", ":"), sort_keys=False)


def _digest_of(manifest, records):
    stripped = {k: manifest[k] for k in _MANIFEST_KEYS if k != "created_at"}
    h = hashlib.sha256()
    h.update(_manifest_json(stripped).encode("utf-8"))
    for r in records:
        h.update(r.payload)
    return h.hexdigest()


def _serialize(model, train_config, created_at, dtype):
    records = _model_arrays(model, dtype)
    manifest = _build_manifest(model, train_config, created_at, records)
    digest = _digest_of(manifest, records)
    buf = io.BytesIO()
    stamp = (1980, 1, 1, 0, 0, 0)
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_DEFLATED, compresslevel=6) as zf:
        info = zipfile.ZipInfo("manifest.json", date_time=stamp)
        zf.writestr(info, _manifest_json(manifest))
        for r in sorted(records, key=lambda r: r.name):
            info = zipfile.ZipInfo(f"arrays/{r.name}.ens", date_time=stamp)
            zf.writestr(info, r.payload)
    return buf.getvalue(), digest


def bundle_bytes(model, *, train_config=None, dtype="f64", created_at="") -> bytes:
    """Serialized bundle without touching the filesystem."""
    blob, _ = _serialize(model, train_config, created_at, dtype)
    return blob


def bundle_digest(model, *, train_config=None, dtype="f64") -> str:
    """Content digest of a model, identical to what save_bundle returns."""
    records = _model_arrays(model, dtype)
    manifest = _build_manifest(model, train_config, "", records)
    return _digest_of(manifest, records)


def save_bundle(model, path, *, train_config=None, dtype="f64",
                created_at=None) -> str:
    """Write the bundle and return its content digest."""
    if created_at is None:
        created_at = datetime.now(timezone.utc).isoformat(timespec="seconds")
    blob, digest = _serialize(model, train_config, created_at, dtype)
    with open(path, "wb") as fh:
        fh.write(blob)
    return digest


def _as_dense(decoded):
    if isinstance(decoded, SparseMatrix):
        return decoded.to_dense().data
    return decoded.data


def load_bundle(path, expected_digest=None):
    """Exact inverse of save_bundle, with full consistency validation.

    Returns ``(model, train_config, digest)`` where model is a
    :class:`ReluNetwork` or :class:`PrunedModel`.
    """
    try:
        archive = zipfile.ZipFile(path, "r")
    except zipfile.BadZipFile as exc:
        raise IntegrityError(f"{path}: not a bundle archive ({exc})") from None
    with archive as zf:
        names = zf.namelist()
        if "manifest.json" not in names:
            raise IntegrityError(f"{path}: missing manifest.json")
        try:
            manifest = json.loads(zf.read("manifest.json"))
        except json.JSONDecodeError as exc:
            raise IntegrityError(f"{path}: manifest is not valid JSON ({exc})") \
                from None
        if set(manifest) != set(_MANIFEST_KEYS):
            raise IntegrityError(
                f"{path}: manifest keys {sorted(manifest)} != expected "
                f"{sorted(_MANIFEST_KEYS)}")
        if manifest["schema_version"] != SCHEMA_VERSION:
            raise IntegrityError(f"{path}: unsupported schema_version "
                                 f"{manifest['schema_version']}")
        if manifest["activation"] != "relu":
            raise IntegrityError(f"{path}: unsupported activation "
                                 f"{manifest['activation']!r}")

        index = manifest["arrays"]
        listed = {e["name"] for e in index}
        stored = {n[len("arrays/"):-len(".ens")] for n in names
                  if n.startswith("arrays/") and n.endswith(".ens")}
        if listed != stored:
            raise IntegrityError(
                f"{path}: manifest lists arrays {sorted(listed)} but archive "
                f"holds {sorted(stored)}")

        records = []
        arrays = {}
        for entry in index:
            payload = zf.read(f"arrays/{entry['name']}.ens")
            from .tensor import ArrayRecord
            rec = ArrayRecord(name=entry["name"], dtype=entry["dtype"],
                              encoding=entry["encoding"],
                              dims=tuple(entry["dims"]), payload=payload)
            decoded = decode_array(rec)
            if decoded.shape != tuple(entry["dims"]):
                raise IntegrityError(
                    f"{path}: array {entry['name']} has shape {decoded.shape} "
                    f"but manifest says {tuple(entry['dims'])}")
            records.append(rec)
            arrays[entry["name"]] = _as_dense(decoded)

    dims = tuple(manifest["layer_dims"])
    depth = len(dims) - 1
    weights = []
    biases = []
    for l in range(1, depth + 1):
        for key in (f"W{l}", f"b{l}"):
            if key not in arrays:
                raise IntegrityError(f"{path}: missing array {key} for "
                                     f"{depth}-layer architecture")
        w = arrays[f"W{l}"]
        if w.shape != (dims[l - 1], dims[l]):
            raise IntegrityError(
                f"{path}: W{l} has shape {w.shape}, expected "
                f"({dims[l-1]}, {dims[l]})")
        weights.append(w)
        biases.append(arrays[f"b{l}"].reshape(-1))
    expected_names = {f"W{l}" for l in range(1, depth + 1)}
    expected_names |= {f"b{l}" for l in range(1, depth + 1)}
    mask_names = {f"M{l}" for l in range(1, depth + 1)}
    extra = set(arrays) - expected_names - mask_names
    if extra:
        raise IntegrityError(f"{path}: unexpected arrays {sorted(extra)}")

    net = ReluNetwork(dims, tuple(weights), tuple(biases))
    train_config = _train_config_from_dict(manifest["train_config"])

    digest = _digest_of(manifest, records)
    if expected_digest is not None and digest != expected_digest:
        raise IntegrityError(f"{path}: digest mismatch: bundle {digest} != "
                             f"expected {expected_digest}")

    if manifest["kind"] == "baseline":
        return net, train_config, digest
    if manifest["kind"] != "pruned":
        raise IntegrityError(f"{path}: unknown kind {manifest['kind']!r}")

    if mask_names & set(arrays):
        if not mask_names <= set(arrays):
            raise IntegrityError(f"{path}: partial mask arrays present")
        masks = tuple(arrays[f"M{l}"].astype(bool) for l in range(1, depth + 1))
    else:
        masks = tuple(w != 0.0 for w in weights)

    cfg_dict = dict(manifest["prune_config"])
    epsilons = tuple(cfg_dict.pop("layer_epsilons"))
    feasibility = tuple(LayerFeasibility.from_dict(d)
                        for d in cfg_dict.pop("feasibility"))
    model = PrunedModel(network=net, masks=masks,
                        config=PruneConfig.from_dict(cfg_dict),
                        parent_hash=manifest["parent_hash"],
                        layer_epsilons=epsilons,
                        feasibility_report=feasibility)
    return model, train_config, digest
