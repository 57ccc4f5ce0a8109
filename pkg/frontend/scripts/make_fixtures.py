"""Generate test fixtures: PNG images plus reference .hmgg bundles.

Writes into the directory given as the first argument (default
test/.fixtures). Requires the Python package from ../../ on the path.
"""

import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

sys.path.insert(0, str(Path(__file__).resolve().parents[2] / "src"))

from hmgdm.entity_graph import GraphParams, build_entity_graph, write_bundle
from hmgdm.synthetic import make_texture_corpus

PARAMS = {"regions": 24, "compactness": 10.0, "iters": 5, "tile": 24, "dilation": 2}


def main() -> None:
    out = Path(sys.argv[1] if len(sys.argv) > 1 else "test/.fixtures")
    img_dir = out / "images"
    ref_dir = out / "reference"
    img_dir.mkdir(parents=True, exist_ok=True)
    ref_dir.mkdir(parents=True, exist_ok=True)

    images, _ = make_texture_corpus(6, size=96, seed=101)
    corpus = list(images)
    rng = np.random.default_rng(102)
    for size in (80, 144):  # sizes that do not divide evenly into the seed grid
        coarse = rng.normal(170.0, 25.0, (size // 16, size // 16, 3))
        from scipy import ndimage

        img = ndimage.zoom(coarse, (16, 16, 1), order=1)[:size, :size]
        corpus.append(np.clip(img, 0, 255).astype(np.uint8))

    params = GraphParams(
        n_regions=PARAMS["regions"],
        compactness=PARAMS["compactness"],
        iterations=PARAMS["iters"],
        tile=PARAMS["tile"],
        dilation_radius=PARAMS["dilation"],
    )
    names = []
    for i, img in enumerate(corpus):
        name = f"fix{i:02d}"
        Image.fromarray(img).save(img_dir / f"{name}.png")
        write_bundle(ref_dir / f"{name}.hmgg", build_entity_graph(img, params))
        names.append(name)
    (out / "params.json").write_text(json.dumps({**PARAMS, "names": names}))
    print(f"wrote {len(names)} fixtures to {out}")


if __name__ == "__main__":
    main()
