"""Render a few documents from each preset and print them as text art next to their labels."""
import sys

from eaten.synthgen import PRESETS, generate_dataset

out = sys.argv[1] if len(sys.argv) > 1 else None

for name in sorted(PRESETS):
    scenario = PRESETS[name]()
    manifest, splits = generate_dataset(scenario.spec, scenario.transform, 4, 2, seed=0,
                                        out_dir=f"{out}/{name}" if out else None, schema=scenario.schema)
    sample = splits["train"][0]
    print(f"== {name}  ({scenario.spec.height}x{scenario.spec.width}, manifest {manifest['hash'][:12]})")
    for row in sample.image[::2]:
        print("".join("#" if v < 0.45 else "+" if v < 0.7 else " " for v in row[::1]))
    for entity in scenario.schema.entity_names:
        print(f"  {entity:12s} {sample.targets.get(entity, '')!r}")
    print(f"  rotation {sample.meta['transform']['rotation']:+.2f} deg, ops {[op[0] for op in sample.meta['transform']['ops']]}")
