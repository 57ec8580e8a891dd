"""Group views over parameter tensors.

A group is the unit of structured (channel) pruning: all coordinates of one
output channel of a conv kernel, or one output row of a linear weight. With
weights stored output-major, group ``i`` of a parameter is row ``i`` of the
array reshaped to ``(n_groups, -1)``. Biases carry no group.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError


@dataclass(frozen=True)
class GroupView:
    """One group's label plus a flat view of its coordinates."""

    param_id: str
    layer: str
    index: int
    values: np.ndarray

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))


def collect_group_views(
    arrays: dict[str, np.ndarray], grouping: dict[str, tuple[str, int]]
) -> list[GroupView]:
    """Build group views of ``arrays`` for every grouped parameter.

    ``grouping`` maps param id to (layer label, group count); the group
    count must equal the parameter's leading dimension.
    """
    views: list[GroupView] = []
    for pid, (layer, count) in grouping.items():
        arr = arrays[pid]
        if arr.shape[0] != count:
            raise ContractError(
                f"parameter {pid} has leading dim {arr.shape[0]}, expected {count} groups"
            )
        rows = arr.reshape(count, -1)
        for i in range(count):
            views.append(GroupView(pid, layer, i, rows[i]))
    return views
