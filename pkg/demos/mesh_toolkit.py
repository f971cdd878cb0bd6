"""Mesh utilities tour: generation, refinement, scaling, interpolation, file IO."""

from pathlib import Path

import numpy as np

from eitms import (
    generate_disk_mesh,
    interpolate_field,
    load_mesh,
    refine_mesh,
    save_mesh,
    scale_mesh,
)

out = Path(__file__).resolve().parent / "output"
out.mkdir(exist_ok=True)

coarse = generate_disk_mesh(0.15, 16, 1 / 32, target_edge_length=0.02)
print(f"coarse: {coarse.n_nodes} nodes, max edge {coarse.max_edge_length() * 100:.2f} cm, "
      f"area deficit {np.pi * 0.15**2 - coarse.total_area():.2e} m^2")

fine = refine_mesh(coarse)
print(f"refined: {fine.n_nodes} nodes, max edge {fine.max_edge_length() * 100:.2f} cm")

doubled = scale_mesh(coarse, 2.0)
print(f"scaled by 2: total area x{doubled.total_area() / coarse.total_area():.3f}")

# P1 interpolation reproduces affine fields exactly between nested meshes
field = 1.0 + 3.0 * coarse.nodes[:, 0] - 2.0 * coarse.nodes[:, 1]
onto_fine = interpolate_field(coarse, field, fine)
exact = 1.0 + 3.0 * fine.nodes[:, 0] - 2.0 * fine.nodes[:, 1]
print(f"affine interpolation error: {np.abs(onto_fine - exact).max():.2e}")

path = out / "coarse.mesh"
save_mesh(coarse, path)
again = load_mesh(path)
print(f"saved and reloaded {path.name}: "
      f"nodes identical {np.array_equal(again.nodes, coarse.nodes)}")
