"""Build a synthetic Manhattan road grid, snap positions to links, and map
links onto the cell raster the convolutional model consumes.

Run: python demos/01_road_grid_and_raster.py
"""

import numpy as np

from floatsim import build_manhattan, grid_to_json, link_of, raster_embed

# A 5-by-4 block grid: 12 interior intersections, 31 links (border stubs
# included), every block 150 m on a side.
grid = build_manhattan(5, 4, 150.0)
print(f"links: {grid.num_links}, intersections: {len(grid.intersections)}")
print(f"bounding box: {grid.bbox}")

stubs = [ln.id for ln in grid.links if ln.is_border_stub]
print(f"border stubs (vehicle entry/exit points): {stubs}")

# Positions snap to the nearest link within a 2 m tolerance.
probe = grid.links[7].midpoint
print(f"midpoint of link 7 {probe} -> link {link_of(grid, probe)}")

# Every link gets one raster cell; at 9x7 the mapping is one-to-one.
emb = raster_embed(grid, 9, 7, require_injective=True)
values = np.linspace(0.0, 1.0, grid.num_links)
plane = emb.rasterize(values)
print(f"raster {emb.H}x{emb.W}, occupied cells: {(plane > 0).sum()}")
print("round trip exact:", np.allclose(emb.unrasterize(plane), values))

# Grids serialize to a small JSON document.
doc = grid_to_json(grid)
print(f"serialized grid: {len(doc)} bytes of JSON")
