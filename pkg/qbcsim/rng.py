"""
Seeded Random Streams
=====================
Every random draw in a session comes from a generator keyed by
(seed, session, trial, role), so results never depend on the order in
which trials or sessions are scheduled.
"""

from typing import Dict

import numpy as np

from .errors import InvalidParams


ROLES: Dict[str, int] = {
    "bob": 0,
    "world": 1,
    "alice": 2,
    "adversary": 3,
    "harness": 4,
}

_SESSION_SCOPE = 0
_TRIAL_SCOPE = 1


def _role_index(role: str) -> int:
    try:
        return ROLES[role]
    except KeyError:
        raise InvalidParams(f"unknown stream role '{role}' (expected one of {sorted(ROLES)})")


class SessionStreams:
    """Factory of independent generators for one session."""

    def __init__(self, seed: int, session_id: int = 0):
        if seed < 0 or session_id < 0:
            raise InvalidParams("seed and session_id must be non-negative")
        self.seed = int(seed)
        self.session_id = int(session_id)

    def trial(self, trial_id: int, role: str) -> np.random.Generator:
        key = (self.session_id, _TRIAL_SCOPE, int(trial_id), _role_index(role))
        return np.random.default_rng(np.random.SeedSequence(entropy=self.seed, spawn_key=key))

    def session(self, role: str) -> np.random.Generator:
        key = (self.session_id, _SESSION_SCOPE, _role_index(role))
        return np.random.default_rng(np.random.SeedSequence(entropy=self.seed, spawn_key=key))

    def __repr__(self) -> str:
        return f"SessionStreams(seed={self.seed}, session_id={self.session_id})"
