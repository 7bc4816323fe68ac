"""Model container files: a textual key=value header, raw little-endian
float64 parameter blocks in declared order, and a trailing FNV-1a checksum.
Round-trips are bit-exact, so saved models reproduce densities to the last
bit."""

from dataclasses import dataclass, field

import numpy as np

from . import baselines, deepnade, nade, rnade

MAGIC = "nadekit-model"
FORMAT_VERSION = 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


class FormatError(ValueError):
    """Unreadable, truncated, or corrupted model file."""


def fnv1a64(data):
    """64-bit FNV-1a over a byte string."""
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


@dataclass
class ModelContainer:
    kind: str
    meta: dict
    blocks: dict  # name -> float64 ndarray, in declared order
    version: int = FORMAT_VERSION


def _shape_token(shape):
    return "x".join(str(s) for s in shape) if shape else "scalar"


def _parse_shape(token):
    if token == "scalar":
        return ()
    return tuple(int(s) for s in token.split("x"))


def save_model(container, path):
    lines = [f"{MAGIC} v{container.version}", f"model={container.kind}"]
    for key in sorted(container.meta):
        value = container.meta[key]
        if "\n" in str(value) or "=" in key:
            raise FormatError(f"metadata key/value not representable: {key!r}")
        lines.append(f"{key}={value}")
    manifest = ",".join(f"{name}:{_shape_token(np.shape(arr))}" for name, arr in container.blocks.items())
    lines.append(f"blocks={manifest}")
    header = ("\n".join(lines) + "\n\n").encode("utf-8")

    payload = b"".join(
        np.ascontiguousarray(arr, dtype="<f8").tobytes() for arr in container.blocks.values()
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)
        fh.write(fnv1a64(payload).to_bytes(8, "little"))


def load_model(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    sep = raw.find(b"\n\n")
    if sep < 0:
        raise FormatError(f"{path}: missing header terminator")
    header_lines = raw[:sep].decode("utf-8").splitlines()
    body = raw[sep + 2 :]

    if not header_lines or not header_lines[0].startswith(MAGIC):
        raise FormatError(f"{path}: not a model file")
    version_token = header_lines[0][len(MAGIC) :].strip()
    if version_token != f"v{FORMAT_VERSION}":
        raise FormatError(f"{path}: unsupported format version {version_token!r}")

    meta = {}
    for line in header_lines[1:]:
        key, _, value = line.partition("=")
        meta[key] = value
    kind = meta.pop("model", None)
    manifest = meta.pop("blocks", None)
    if kind is None or manifest is None:
        raise FormatError(f"{path}: header lacks model/blocks entries")

    if len(body) < 8:
        raise FormatError(f"{path}: truncated parameter section")
    payload, stored = body[:-8], int.from_bytes(body[-8:], "little")

    blocks = {}
    offset = 0
    for item in manifest.split(","):
        name, _, token = item.partition(":")
        shape = _parse_shape(token)
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8 if shape else 8
        if offset + nbytes > len(payload):
            raise FormatError(f"{path}: block {name!r} truncated")
        arr = np.frombuffer(payload[offset : offset + nbytes], dtype="<f8").reshape(shape)
        blocks[name] = arr.astype(np.float64).reshape(shape) if shape else float(arr)
        offset += nbytes
    if offset != len(payload):
        raise FormatError(f"{path}: {len(payload) - offset} unexpected trailing bytes")
    if fnv1a64(payload) != stored:
        raise FormatError(f"{path}: checksum mismatch")
    return ModelContainer(kind=kind, meta=meta, blocks=blocks, version=FORMAT_VERSION)


def _ints_csv(values):
    return ",".join(str(int(v)) for v in values)


def _parse_ints(token):
    return np.array([int(t) for t in token.split(",")], dtype=np.intp) if token else np.array([], dtype=np.intp)


def container_from_model(kind, params, ordering=None, meta=None):
    """Build a serializable container for any supported model kind."""
    meta = dict(meta or {})
    if kind == "nade":
        meta.update(D=params.D, H=params.H, ordering=_ints_csv(ordering))
        blocks = params.blocks()
    elif kind == "rnade":
        fam = params.family
        meta.update(
            D=params.D,
            H=params.H,
            family=fam.kind,
            components=fam.C,
            activation=params.activation,
            sigma_global=repr(params.sigma_global),
            ordering=_ints_csv(ordering),
        )
        blocks = params.blocks()
    elif kind == "deepnade":
        meta.update(
            D=params.D,
            hidden_sizes=_ints_csv(params.hidden_sizes),
            mask_concat=int(params.mask_concat),
            activation=params.activation,
        )
        meta.setdefault("ordering_seed", 0)
        blocks = params.blocks()
    elif kind == "mob":
        meta.update(K=params.K, D=params.D)
        blocks = params.blocks()
    elif kind == "chowliu":
        meta.update(D=params.D, root=params.root, parent=_ints_csv(params.parent))
        blocks = params.blocks()
    elif kind == "fvsbn":
        meta.update(D=params.D, ordering=_ints_csv(params.ordering))
        blocks = params.blocks()
    elif kind == "gaussian":
        meta.update(D=params.D)
        blocks = params.blocks()
    else:
        raise FormatError(f"unknown model kind {kind!r}")
    return ModelContainer(kind=kind, meta={k: str(v) for k, v in meta.items()}, blocks=blocks)


def model_from_container(container):
    """Rebuild (kind, params, ordering) from a loaded container."""
    kind = container.kind
    meta = container.meta
    blocks = container.blocks
    if kind == "nade":
        params = nade.NadeParams(W=blocks["W"], V=blocks["V"], b=blocks["b"], c=blocks["c"])
        return kind, params, _parse_ints(meta["ordering"])
    if kind == "rnade":
        fam = rnade.ConditionalFamily(meta["family"], int(meta["components"]))
        params = rnade.RnadeParams(
            family=fam,
            W=blocks["W"],
            c=blocks["c"],
            V_mu=blocks["V_mu"],
            b_mu=blocks["b_mu"],
            V_sigma=blocks.get("V_sigma"),
            b_sigma=blocks.get("b_sigma"),
            V_pi=blocks.get("V_pi"),
            b_pi=blocks.get("b_pi"),
            sigma_global=float(meta.get("sigma_global", "1.0")),
            activation=meta.get("activation", "relu"),
        )
        return kind, params, _parse_ints(meta["ordering"])
    if kind == "deepnade":
        n_layers = len([k for k in blocks if k.startswith("W")])
        stack = deepnade.LayerStack(
            D=int(meta["D"]),
            weights=[blocks[f"W{i}"] for i in range(n_layers)],
            biases=[blocks[f"b{i}"] for i in range(n_layers)],
            mask_concat=bool(int(meta.get("mask_concat", "1"))),
            activation=meta.get("activation", "relu"),
        )
        return kind, stack, None
    if kind == "mob":
        return kind, baselines.MoBParams(weights=blocks["weights"], means=blocks["means"]), None
    if kind == "chowliu":
        tree = baselines.ChowLiuTree(
            root=int(meta["root"]),
            parent=_parse_ints(meta["parent"]),
            cpt=blocks["cpt"],
            root_marginal=blocks["root_marginal"],
        )
        return kind, tree, None
    if kind == "fvsbn":
        params = baselines.FvsbnParams(ordering=_parse_ints(meta["ordering"]), Wtri=blocks["Wtri"], bias=blocks["bias"])
        return kind, params, params.ordering
    if kind == "gaussian":
        cov = blocks["cov"]
        return kind, baselines.FullGaussian(mean=blocks["mean"], cov=cov, chol=np.linalg.cholesky(cov)), None
    raise FormatError(f"unknown model kind {kind!r}")
