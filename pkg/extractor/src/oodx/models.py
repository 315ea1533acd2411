"""Checkpoint loading and penultimate-feature capture.

Two checkpoint layouts are supported: a plain dict with an architecture
description plus a state dict (the format our training scripts emit), or a
whole pickled nn.Module. Either way the final nn.Linear is taken as the
classification head and a forward pre-hook on it captures its input, which
is the penultimate feature vector.
"""

from __future__ import annotations

from pathlib import Path

import torch
from torch import nn

from .errors import CheckpointError, MissingHead

__all__ = ["build_mlp", "load_checkpoint", "find_head", "PenultimateCapture"]

_ACTIVATIONS = {"relu": nn.ReLU, "tanh": nn.Tanh, "gelu": nn.GELU}


def build_mlp(arch: dict) -> nn.Sequential:
    """Fully connected net from an architecture dict.

    Keys: in_dim, hidden (list of widths), num_classes, dropout (probability,
    0 disables the layers entirely), activation (relu | tanh | gelu).
    """
    try:
        in_dim = int(arch["in_dim"])
        hidden = [int(h) for h in arch.get("hidden", [])]
        num_classes = int(arch["num_classes"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"bad mlp architecture description: {exc}")
    act_name = arch.get("activation", "relu")
    if act_name not in _ACTIVATIONS:
        raise CheckpointError(f"unknown activation {act_name!r}")
    p = float(arch.get("dropout", 0.0))
    if not 0.0 <= p < 1.0:
        raise CheckpointError(f"dropout probability {p} outside [0, 1)")

    layers: list = []
    width = in_dim
    for h in hidden:
        layers.append(nn.Linear(width, h))
        layers.append(_ACTIVATIONS[act_name]())
        if p > 0:
            layers.append(nn.Dropout(p))
        width = h
    layers.append(nn.Linear(width, num_classes))
    return nn.Sequential(*layers)


def load_checkpoint(path, device: str = "cpu") -> nn.Module:
    p = Path(path)
    if not p.exists():
        raise CheckpointError(f"checkpoint not found: {p}")
    try:
        obj = torch.load(p, map_location=device, weights_only=True)
    except Exception:
        # full pickled modules need the unrestricted loader
        try:
            obj = torch.load(p, map_location=device, weights_only=False)
        except Exception as exc:
            raise CheckpointError(f"cannot load checkpoint {p}: {exc}")

    if isinstance(obj, nn.Module):
        model = obj
    elif isinstance(obj, dict):
        if obj.get("format") != "oodx-mlp":
            raise CheckpointError(
                f"checkpoint dict has format {obj.get('format')!r}, expected 'oodx-mlp'"
            )
        model = build_mlp(obj.get("arch", {}))
        try:
            model.load_state_dict(obj["state_dict"])
        except (KeyError, RuntimeError) as exc:
            raise CheckpointError(f"state dict does not fit the architecture: {exc}")
    else:
        raise CheckpointError(
            f"checkpoint holds a {type(obj).__name__}, expected a module or dict"
        )
    model.to(device)
    model.eval()
    for param in model.parameters():
        param.requires_grad_(False)
    return model


def find_head(model: nn.Module) -> nn.Linear:
    """Last linear layer in module order; assumed to run last in forward."""
    head = None
    for m in model.modules():
        if isinstance(m, nn.Linear):
            head = m
    if head is None:
        raise MissingHead(
            "model has no linear layer to anchor the penultimate features"
        )
    return head


class PenultimateCapture:
    """Context manager recording the input of the head at each forward."""

    def __init__(self, head: nn.Linear):
        self.head = head
        self.value = None
        self._handle = None

    def __enter__(self):
        def hook(_module, inputs):
            z = inputs[0].detach()
            if z.dim() > 2:
                z = z.flatten(1)
            self.value = z

        self._handle = self.head.register_forward_pre_hook(hook)
        return self

    def __exit__(self, *exc):
        self._handle.remove()
        return False

    def take(self) -> torch.Tensor:
        if self.value is None:
            raise MissingHead("head was never reached during the forward pass")
        out, self.value = self.value, None
        return out
