"""Generate a phantom, simulate noisy boundary data, and render the truth.

The phantom is a smooth random background (1 S, +-0.2 S band, 12 cm
correlation length) with a conductive circle and a resistive square. The
simulation drives each electrode to 1 V, drops the injection currents, and
adds 0.01 percent relative Gaussian noise. Outputs land in demos/output/.
"""

from pathlib import Path

import numpy as np

from eitms import generate_disk_mesh
from eitms.cem import voltage_excitations
from eitms.metrics import default_color_scale, render_field, write_field_csv
from eitms.phantoms import (
    Inclusion,
    Phantom,
    realize_phantom,
    save_measurements,
    simulate_measurements,
)

out = Path(__file__).resolve().parent / "output"
out.mkdir(exist_ok=True)

mesh = generate_disk_mesh(0.15, 16, 1 / 32, target_edge_length=0.0075)
phantom = Phantom(
    background_mean=1.0,
    background_std=0.1,
    correlation_length=0.12,
    inclusions=(
        Inclusion("circle", (-0.06, 0.03, 0.035), 10.0),
        Inclusion("square", (0.05, -0.045, 0.055), 1e-4),
    ),
)
truth = realize_phantom(mesh, phantom, seed=5)
print(f"truth on {mesh.n_nodes} nodes: min {truth.min():.2e} S, max {truth.max():.2f} S")

excitations = voltage_excitations(16, 1.0, zeta=1e-5)
measurements = simulate_measurements(mesh, truth, excitations, noise_rel=1e-4, seed=1)
print(f"simulated {measurements.n_measurements} currents "
      f"(16 patterns x 15 electrodes, injection dropped)")

save_measurements(measurements, out / "measurements.txt")
write_field_csv(mesh, truth, out / "truth.csv")
(out / "truth.ppm").write_bytes(render_field(mesh, truth, default_color_scale(), 512))
print(f"wrote {out / 'measurements.txt'}, {out / 'truth.csv'}, {out / 'truth.ppm'}")
