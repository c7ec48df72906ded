"""Versioned JSON round-trip for named parameter tensors."""

import json

import torch

from ..exceptions import ParseError
from .tensor import DTYPE

FORMAT = "netcausal.params"
VERSION = 1


def params_to_dict(params, meta=None):
    return {
        "format": FORMAT,
        "version": VERSION,
        "meta": meta or {},
        "params": {
            name: {"shape": list(t.shape), "values": t.detach().reshape(-1).tolist()}
            for name, t in params.items()
        },
    }


def params_from_dict(doc, requires_grad=True):
    if doc.get("format") != FORMAT:
        raise ParseError(f"not a {FORMAT} document")
    if doc.get("version") != VERSION:
        raise ParseError(f"unsupported version {doc.get('version')!r}")
    out = {}
    for name, entry in doc["params"].items():
        t = torch.tensor(entry["values"], dtype=DTYPE).reshape(entry["shape"])
        out[name] = t.requires_grad_(requires_grad)
    return out, doc.get("meta", {})


def save_params(path, params, meta=None):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(params_to_dict(params, meta), fh, sort_keys=True)


def load_params(path, requires_grad=True):
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(str(exc.msg), line=exc.lineno, column=exc.colno) from None
    return params_from_dict(doc, requires_grad)
