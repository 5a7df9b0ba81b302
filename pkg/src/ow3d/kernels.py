"""Dispatch to the numba or numpy kernel build (see ``ow3d.backend``)."""

from . import backend

if backend.resolve_backend() == "numba":
    from . import _kernels_numba as _impl
else:
    from . import _kernels_numpy as _impl

BACKEND = backend.resolve_backend()

nearest_pixel_index = _impl.nearest_pixel_index
greedy_select = _impl.greedy_select
raycast_aabbs = _impl.raycast_aabbs
radius_neighbors = _impl.radius_neighbors
conv3d_k3 = _impl.conv3d_k3
conv3d_k3_grad_weight = _impl.conv3d_k3_grad_weight
conv3d_k3_grad_input = _impl.conv3d_k3_grad_input
