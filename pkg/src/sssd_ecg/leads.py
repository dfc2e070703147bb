"""Limb-lead reconstruction algebra for 12-lead ECGs.

Only two of the six limb leads are linearly independent. Given leads I and
aVF, the remaining four limb leads follow from

    III  = II - I
    aVL  = (I - III) / 2
    aVF  = (II + III) / 2
    -aVR = (I + II) / 2

Solving for (II, III, aVR, aVL) in terms of (I, aVF):

    II  = aVF + I/2
    III = aVF - I/2
    aVR = -(3*I/4 + aVF/2)
    aVL = 3*I/4 - aVF/2
"""

from __future__ import annotations

import numpy as np

TWELVE_LEADS = ["I", "II", "III", "aVR", "aVL", "aVF",
                "V1", "V2", "V3", "V4", "V5", "V6"]
EIGHT_LEADS = ["I", "aVF", "V1", "V2", "V3", "V4", "V5", "V6"]

# Indices of the 8 generated leads within the canonical 12-lead order.
EIGHT_IN_TWELVE = [TWELVE_LEADS.index(name) for name in EIGHT_LEADS]


def reconstruct_12_leads(frame: np.ndarray) -> np.ndarray:
    """Reconstruct a 12-lead record from an 8-lead frame.

    `frame` has shape [..., 8, L] in order [I, aVF, V1..V6]; the result has
    shape [..., 12, L] in canonical order [I, II, III, aVR, aVL, aVF, V1..V6].
    """
    frame = np.asarray(frame)
    if frame.shape[-2] != 8:
        raise ValueError(f"frame shape invalid: expected 8 leads, got {frame.shape}")
    lead_i = frame[..., 0, :]
    avf = frame[..., 1, :]
    out = np.empty(frame.shape[:-2] + (12,) + frame.shape[-1:], dtype=frame.dtype)
    out[..., 0, :] = lead_i
    out[..., 1, :] = avf + lead_i / 2            # II
    out[..., 2, :] = avf - lead_i / 2            # III
    out[..., 3, :] = -(0.75 * lead_i + avf / 2)  # aVR
    out[..., 4, :] = 0.75 * lead_i - avf / 2     # aVL
    out[..., 5, :] = avf
    out[..., 6:, :] = frame[..., 2:, :]
    return out


def project_to_8_leads(record: np.ndarray) -> np.ndarray:
    """Extract the 8 independent leads [I, aVF, V1..V6] from a 12-lead record."""
    record = np.asarray(record)
    if record.shape[-2] != 12:
        raise ValueError(f"frame shape invalid: expected 12 leads, got {record.shape}")
    return record[..., EIGHT_IN_TWELVE, :]


def check_lead_consistency(record: np.ndarray, tol: float = 1e-6) -> tuple[bool, float]:
    """Evaluate the four limb-lead identities pointwise on a 12-lead record.

    Returns (all identities hold within `tol`, max absolute residual).
    """
    record = np.asarray(record)
    if record.shape[-2] != 12:
        raise ValueError(f"frame shape invalid: expected 12 leads, got {record.shape}")
    i, ii, iii, avr, avl, avf = (record[..., k, :] for k in range(6))
    residuals = np.stack([
        iii - (ii - i),
        avl - (i - iii) / 2,
        avf - (ii + iii) / 2,
        -avr - (i + ii) / 2,
    ])
    max_resid = float(np.max(np.abs(residuals))) if residuals.size else 0.0
    return max_resid <= tol, max_resid
