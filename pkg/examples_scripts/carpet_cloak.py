"""Carpet cloak over a bump on rigid ground, vertical 2D section.

Runs the bare-bump and carpet presets and compares how far each total field
departs from the reflection off flat ground.  Field slices are written to
./carpet_out for inspection in a VTK viewer.
"""
from acloak import scene

for name in ("fig3-bump", "fig3-carpet"):
    summary = scene.run(scene.load_preset(name), f"carpet_out/{name}")
    f = summary["fdfd"]
    print(f"{name:12s} grid {f['grid']}, mismatch to flat ground {f['mismatch_to_flat_ground']:.4f}, "
          f"{summary['runtime_s']:.1f} s")
