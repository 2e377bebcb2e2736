"""Shared contract for the model plugins."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ..expfam import NaturalParam


@dataclass
class ModelState:
    """Global variational parameters plus the locals of the last batch."""

    globals: dict[str, NaturalParam]
    local: Any = None
    batch: np.ndarray | None = None

    def copy(self):
        return ModelState(dict(self.globals), self.local, self.batch)


class CEFModel:
    """Conjugate-exponential-family model plugin.

    Subclasses provide

    ``priors()``
        prior natural parameter ``eta`` for every global variable id.
    ``update_groups``
        global ids updated together; groups are swept in order and each
        group gets a fresh local step against the current globals.
    ``init_globals(data, rng)``
    ``n_data(data)``
    ``local_step(data, idx, globals, init=None)``
        deterministic in its arguments; ``init`` is an optional warm start
        from a previous local result on the same indices.
    ``suff_stats(data, idx, local, globals, weights, group)``
        ``sum_n w_n E[t_n]`` for every global in ``group``, in the global's
        natural-parameter layout (unscaled by ``N / |S|``).
    ``datum_stats(data, idx, local, globals)``
        the same statistics materialized per datum, shape ``(|S|, *lam.shape)``.
    ``elbo(data, globals, local=None)``
    """

    name = "model"
    update_groups: list[list[str]] = []

    def priors(self) -> dict[str, NaturalParam]:
        raise NotImplementedError

    def n_data(self, data) -> int:
        raise NotImplementedError

    def init_globals(self, data, rng) -> dict[str, NaturalParam]:
        raise NotImplementedError

    def local_step(self, data, idx, globals, init=None):
        raise NotImplementedError

    def suff_stats(self, data, idx, local, globals, weights, group):
        raise NotImplementedError

    def datum_stats(self, data, idx, local, globals):
        raise NotImplementedError

    def elbo(self, data, globals, local=None):
        raise NotImplementedError

    def noise_groups(self, data, idx, group):
        """Labels partitioning the batch into independent noise groups, or ``None``."""
        return None

    def init_state(self, data, rng) -> ModelState:
        return ModelState(self.init_globals(data, rng))

    def flat_datum_stats(self, data, idx, globals, local=None):
        """Per-datum statistics of every global concatenated into ``(|S|, D)``."""
        if local is None:
            local = self.local_step(data, idx, globals)
        per = self.datum_stats(data, idx, local, globals)
        return np.concatenate(
            [per[g].reshape(len(idx), -1) for gs in self.update_groups for g in gs], axis=1
        )
