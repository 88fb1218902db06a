"""Input validation helpers shared across the package."""

import numbers

import numpy as np


class ValidationError(ValueError):
    """An argument violates a documented invariant."""


def check_probability_rows(rows, atol=1e-12, name="array"):
    rows = np.asarray(rows, dtype=float)
    if not np.all(np.isfinite(rows)):
        raise ValidationError(f"{name} contains non-finite entries")
    if np.any(rows < 0):
        raise ValidationError(f"{name} has negative probabilities")
    sums = rows.sum(axis=-1)
    bad = np.abs(sums - 1.0) > atol
    if np.any(bad):
        worst = float(np.max(np.abs(sums - 1.0)))
        raise ValidationError(f"{name} rows must sum to 1 (worst deviation {worst:.3e})")
    return rows


def check_distribution(weights, shape=None, atol=1e-9, name="weights"):
    weights = np.asarray(weights, dtype=float)
    if shape is not None and weights.shape != tuple(shape):
        raise ValidationError(f"{name} must have shape {tuple(shape)}, got {weights.shape}")
    if not np.all(np.isfinite(weights)) or np.any(weights < 0):
        raise ValidationError(f"{name} must be finite and nonnegative")
    if abs(weights.sum() - 1.0) > atol:
        raise ValidationError(f"{name} must sum to 1, got {weights.sum():.12g}")
    return weights


def check_policy_vector(policy, num_states, num_actions):
    policy = np.asarray(policy)
    if policy.shape != (num_states,):
        raise ValidationError(f"policy must have length {num_states}, got shape {policy.shape}")
    if not np.issubdtype(policy.dtype, np.integer):
        if not np.all(np.equal(np.mod(policy, 1), 0)):
            raise ValidationError("policy entries must be integer action indices")
    if np.any(policy < 0) or np.any(policy >= num_actions):
        raise ValidationError(f"policy entries must lie in [0, {num_actions})")
    return policy.astype(int)


def check_scalar(value, name, target_type=numbers.Real, min_val=None, max_val=None,
                 include_min=True, include_max=True):
    """Type and range check for a scalar hyper-parameter; returns the value."""
    if isinstance(value, bool) or not isinstance(value, target_type):
        raise ValidationError(f"{name} must be {target_type.__name__}, got {type(value).__name__}")
    if min_val is not None:
        if value < min_val or (not include_min and value == min_val):
            op = ">=" if include_min else ">"
            raise ValidationError(f"{name} must be {op} {min_val}, got {value}")
    if max_val is not None:
        if value > max_val or (not include_max and value == max_val):
            op = "<=" if include_max else "<"
            raise ValidationError(f"{name} must be {op} {max_val}, got {value}")
    return value


def check_finite(theta, name="parameters"):
    if not np.all(np.isfinite(theta)):
        raise FloatingPointError(f"{name} became non-finite")
    return theta


def check_random_state(seed):
    """Turn ``seed`` into a ``numpy.random.Generator``."""
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None or isinstance(seed, (numbers.Integral, np.random.SeedSequence)):
        return np.random.default_rng(seed)
    raise ValidationError(f"cannot build a Generator from {seed!r}")
