"""Record the golden forward/predict outputs.  Run only when behaviour changes on purpose:

    python tests/golden/regen.py
"""

import json
import sys
from pathlib import Path

import numpy as np

HERE = Path(__file__).parent
sys.path.insert(0, str(HERE.parent))

from golden_fixture import fixture  # noqa: E402
from landmark.model import Toggles, forward_scene, predict_scene, ranked_triplets  # noqa: E402


def main():
    ds, scene, result = fixture()
    out = forward_scene(result.model, ds, scene, Toggles())
    np.savez(HERE / "forward_scene.npz", logits=out.logits.data, entity_logits=out.entity_logits.data)
    rec = predict_scene(result.model, ds, scene, "predcls", Toggles())
    rows = [[s, o, p, repr(v)] for s, o, p, v in ranked_triplets(rec)]
    (HERE / "predict_scene.json").write_text("[\n" + ",\n".join(json.dumps(r) for r in rows) + "\n]\n")


if __name__ == "__main__":
    main()
