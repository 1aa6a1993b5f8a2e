"""Numeric preference-optimization objective over pair log-probabilities.

Validates exported datasets and serves as a reference for external trainers:
given the four log-probabilities of a (chosen, rejected) pair under the policy
and the frozen reference model, the loss is the mean of
``-log sigmoid(beta * margin)``. No model inference happens here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


@dataclass
class DpoItem:
    logp_policy_chosen: float
    logp_ref_chosen: float
    logp_policy_rejected: float
    logp_ref_rejected: float

    def __post_init__(self) -> None:
        for name in ("logp_policy_chosen", "logp_ref_chosen", "logp_policy_rejected", "logp_ref_rejected"):
            value = getattr(self, name)
            if not np.isfinite(value):
                raise ValueError(f"{name} must be finite")
            if value > 0:
                raise ValueError(f"{name} must be <= 0 (a log-probability)")


@dataclass
class DpoConfig:
    beta: float

    def __post_init__(self) -> None:
        if self.beta <= 0:
            raise ValueError("beta must be positive")


def margin(item: DpoItem) -> float:
    """Chosen log-ratio minus rejected log-ratio, before beta scaling."""
    chosen = item.logp_policy_chosen - item.logp_ref_chosen
    rejected = item.logp_policy_rejected - item.logp_ref_rejected
    return chosen - rejected


def _margins(items: Sequence[DpoItem]) -> np.ndarray:
    if not items:
        raise ValueError("items must be non-empty")
    return np.array([margin(item) for item in items], dtype=float)


def dpo_loss(items: Sequence[DpoItem], cfg: DpoConfig) -> float:
    """Mean of -log sigmoid(beta * margin), via softplus for stability."""
    z = cfg.beta * _margins(items)
    # -log sigmoid(z) == softplus(-z) == log(1 + exp(-z))
    return float(np.logaddexp(0.0, -z).mean())


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    expz = np.exp(z[~pos])
    out[~pos] = expz / (1.0 + expz)
    return out


def dpo_grad(items: Sequence[DpoItem], cfg: DpoConfig) -> list[tuple[float, float]]:
    """Per-item gradients w.r.t. the two policy log-probs.

    For m = beta * margin: d/d logp_policy_chosen = -beta * (1 - sigmoid(m)) / n
    and d/d logp_policy_rejected is its negation.
    """
    margins = _margins(items)
    n = margins.size
    weight = cfg.beta * _sigmoid(-cfg.beta * margins) / n  # 1 - sigmoid(m) == sigmoid(-m)
    return [(-float(w), float(w)) for w in weight]


@dataclass
class MarginReport:
    count: int
    beta: float
    mean_loss: float
    mean_margin: float
    min_margin: float
    max_margin: float
    positive_fraction: float

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "beta": self.beta,
            "mean_loss": self.mean_loss,
            "mean_margin": self.mean_margin,
            "min_margin": self.min_margin,
            "max_margin": self.max_margin,
            "positive_fraction": self.positive_fraction,
        }


def margin_report(items: Sequence[DpoItem], cfg: DpoConfig) -> MarginReport:
    """Dataset sanity summary: margin distribution and how often the policy
    already prefers the chosen side."""
    margins = _margins(items)
    return MarginReport(
        count=int(margins.size),
        beta=cfg.beta,
        mean_loss=dpo_loss(items, cfg),
        mean_margin=float(margins.mean()),
        min_margin=float(margins.min()),
        max_margin=float(margins.max()),
        positive_fraction=float(np.count_nonzero(margins > 0)) / margins.size,
    )


def load_items(path: str | Path) -> list[tuple[str, DpoItem]]:
    """Read dpo-check input: JSON-lines with an id and the four log-probs."""
    items = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                item = DpoItem(
                    logp_policy_chosen=float(record["logp_policy_chosen"]),
                    logp_ref_chosen=float(record["logp_ref_chosen"]),
                    logp_policy_rejected=float(record["logp_policy_rejected"]),
                    logp_ref_rejected=float(record["logp_ref_rejected"]),
                )
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{line_no}: {exc}") from exc
            items.append((str(record.get("id", line_no)), item))
    return items


def _pointwise_loss(
    logp_policy_chosen: float,
    logp_ref_chosen: float,
    logp_policy_rejected: float,
    logp_ref_rejected: float,
    beta: float,
) -> float:
    """Same -log sigmoid(beta * margin) as dpo_loss, on raw floats (lets the
    finite-difference probe step past the <= 0 item validation)."""
    z = beta * ((logp_policy_chosen - logp_ref_chosen) - (logp_policy_rejected - logp_ref_rejected))
    return float(np.logaddexp(0.0, -z))


def gradient_check(
    items: Sequence[DpoItem],
    cfg: DpoConfig,
    step: float = 1e-5,
    rel_tol: float = 1e-6,
) -> tuple[bool, float]:
    """Compare analytic gradients against central finite differences.

    Each item is checked as its own single-item batch; returns (passed,
    worst relative error).
    """
    worst = 0.0
    for item in items:
        (grad_chosen, grad_rejected) = dpo_grad([item], cfg)[0]
        values = {
            "logp_policy_chosen": item.logp_policy_chosen,
            "logp_ref_chosen": item.logp_ref_chosen,
            "logp_policy_rejected": item.logp_policy_rejected,
            "logp_ref_rejected": item.logp_ref_rejected,
        }
        for attr, analytic in (
            ("logp_policy_chosen", grad_chosen),
            ("logp_policy_rejected", grad_rejected),
        ):
            hi = dict(values, **{attr: values[attr] + step})
            lo = dict(values, **{attr: values[attr] - step})
            numeric = (
                _pointwise_loss(beta=cfg.beta, **hi) - _pointwise_loss(beta=cfg.beta, **lo)
            ) / (2 * step)
            scale = max(abs(analytic), abs(numeric), 1e-12)
            worst = max(worst, abs(analytic - numeric) / scale)
    return worst <= rel_tol, worst
