"""Scores for parameter recovery and for Gaussian predictions on the logit scale."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .errors import InvalidInputError

_INV_SQRT_PI = 1.0 / np.sqrt(np.pi)


def bias_rmse(estimates, truth) -> tuple[float, float]:
    """Mean error and root mean squared error of ``estimates`` around ``truth``."""
    est = np.asarray(estimates, dtype=float).ravel()
    if est.size == 0:
        raise InvalidInputError("bias_rmse needs at least one estimate")
    err = est - truth
    return float(err.mean()), float(np.sqrt(np.mean(err**2)))


def crps_gaussian(mean, sd, y):
    """CRPS of ``N(mean, sd^2)`` at the realized value ``y``.

    Uses ``sd * (z (2 Phi(z) - 1) + 2 phi(z) - 1/sqrt(pi))`` with
    ``z = (y - mean) / sd``; a zero ``sd`` gives ``|y - mean|``.
    Broadcasts over array inputs.
    """
    mean, sd, y = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (mean, sd, y)))
    if np.any(sd < 0):
        raise InvalidInputError("predictive sd must be nonnegative")
    dev = y - mean
    pos = sd > 0
    safe_sd = np.where(pos, sd, 1.0)
    with np.errstate(over="ignore", invalid="ignore"):
        z = dev / safe_sd
        val = safe_sd * (z * (2 * norm.cdf(z) - 1) + 2 * norm.pdf(z) - _INV_SQRT_PI)
    # a vanishing sd overflows z; the score is then |dev| to working precision
    out = np.where(pos & np.isfinite(val), val, np.abs(dev))
    return out[()] if out.ndim == 0 else out


def prediction_scores(mean, sd, truth) -> tuple[float, float]:
    """Predictive RMSE of the means and average CRPS over locations.

    Locations with a non-finite prediction are skipped.
    """
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if not (mean.shape == sd.shape == truth.shape):
        raise InvalidInputError(f"length mismatch: mean {mean.shape}, sd {sd.shape}, truth {truth.shape}")
    ok = np.isfinite(mean) & np.isfinite(sd) & np.isfinite(truth)
    if not np.any(ok):
        raise InvalidInputError("no location with a finite prediction")
    rmse = float(np.sqrt(np.mean((mean[ok] - truth[ok]) ** 2)))
    return rmse, float(np.mean(crps_gaussian(mean[ok], sd[ok], truth[ok])))


@dataclass
class ScoreTable:
    """Bias/RMSE per model and parameter plus predictive scores per model."""

    models: list
    parameters: list
    bias: dict = field(default_factory=dict)
    rmse: dict = field(default_factory=dict)
    pred_rmse: dict = field(default_factory=dict)
    crps: dict = field(default_factory=dict)
    n_ok: dict = field(default_factory=dict)
    title: str = ""

    @classmethod
    def from_replicates(cls, estimates: dict, truth: dict, pred: dict, title: str = "") -> "ScoreTable":
        """Build from per-model lists.

        ``estimates[model]`` is a list of dicts (parameter -> estimate),
        ``pred[model]`` a list of ``(rmse, crps)`` pairs, one per replicate.
        """
        models = list(estimates)
        params = list(truth)
        tab = cls(models, params, title=title)
        for m in models:
            reps = estimates[m]
            tab.n_ok[m] = len(reps)
            for p in params:
                vals = [r[p] for r in reps]
                if vals:
                    tab.bias[m, p], tab.rmse[m, p] = bias_rmse(vals, truth[p])
                else:
                    tab.bias[m, p] = tab.rmse[m, p] = float("nan")
            sc = np.asarray(pred.get(m, []), dtype=float).reshape(-1, 2)
            tab.pred_rmse[m] = float(sc[:, 0].mean()) if len(sc) else float("nan")
            tab.crps[m] = float(sc[:, 1].mean()) if len(sc) else float("nan")
        return tab

    def to_text(self, digits: int = 3) -> str:
        """Aligned table: bias with RMSE in parentheses, then predictive measures."""
        head = ["parameter"] + self.models
        rows = []
        for p in self.parameters:
            rows.append([p] + [f"{self.bias[m, p]:.{digits}f} ({self.rmse[m, p]:.{digits}f})" for m in self.models])
        rows.append(["pred_rmse_logit"] + [f"{self.pred_rmse[m]:.{digits}f}" for m in self.models])
        rows.append(["crps_logit"] + [f"{self.crps[m]:.{digits}f}" for m in self.models])
        rows.append(["replicates_ok"] + [str(self.n_ok.get(m, 0)) for m in self.models])
        widths = [max(len(r[i]) for r in [head] + rows) for i in range(len(head))]
        fmt = lambda r: "  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(r, widths)))
        lines = []
        if self.title:
            lines.append(f"# {self.title}")
        lines.append("# entries: bias (rmse); rho in km, sigma2 and coefficients unitless, predictive scores on logit scale")
        lines.append(fmt(head))
        lines.extend(fmt(r) for r in rows)
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "quantity", "bias", "rmse", "value"])
        for m in self.models:
            for p in self.parameters:
                w.writerow([m, p, repr(float(self.bias[m, p])), repr(float(self.rmse[m, p])), ""])
            w.writerow([m, "pred_rmse_logit", "", "", repr(float(self.pred_rmse[m]))])
            w.writerow([m, "crps_logit", "", "", repr(float(self.crps[m]))])
        return buf.getvalue()
