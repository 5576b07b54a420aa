"""Secondary acceptance: the checkpoint exporter feeds the engine.

Requires the embed-export tool to be built (embed-export/dist); skipped
otherwise so the primary suite stands alone.
"""

import json
import shutil
import struct
import subprocess
from pathlib import Path

import numpy as np
import pytest

from qto.adjacency import EmbeddingScorer, build_matrix, complex_score
from qto.formats import load_embeddings, load_matrix, save_matrix
from qto.kg import from_triples
from qto.queries import standard_structures
from qto.solver import forward, rank_answers

TOOL = Path(__file__).resolve().parent.parent / "embed-export" / "dist" / "src" / "cli.js"

pytestmark = pytest.mark.skipif(
    shutil.which("node") is None or not TOOL.exists(),
    reason="embed-export tool not built",
)


def write_safetensors(path, tensors):
    """tensors: name -> float64 array (rows, cols), split re/im layout."""
    header = {}
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        header[name] = {"dtype": "F64", "shape": list(arr.shape), "data_offsets": [offset, offset + len(raw)]}
        blobs.append(raw)
        offset += len(raw)
    head = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for blob in blobs:
            fh.write(blob)


def test_export_verify_and_engine_consumption(tmp_path):
    nv, nr_raw, d = 8, 2, 4
    rng = np.random.default_rng(123)
    ent = rng.normal(size=(nv, d)) + 1j * rng.normal(size=(nv, d))
    rel = rng.normal(size=(2 * nr_raw, d)) + 1j * rng.normal(size=(2 * nr_raw, d))

    (tmp_path / "entities.txt").write_text("".join(f"e{i}\n" for i in range(nv)))
    (tmp_path / "relations.txt").write_text("".join(f"r{i}\n" for i in range(nr_raw)))
    checkpoint = tmp_path / "checkpoint.safetensors"
    write_safetensors(checkpoint, {
        "entity_embeddings": np.concatenate([ent.real, ent.imag], axis=1),
        "relation_embeddings": np.concatenate([rel.real, rel.imag], axis=1),
    })

    out = tmp_path / "emb.qtoe"
    result = subprocess.run(
        ["node", str(TOOL), "--checkpoint", str(checkpoint),
         "--entities", str(tmp_path / "entities.txt"),
         "--relations", str(tmp_path / "relations.txt"),
         "--out", str(out), "--layout", "split", "--verify", "1000"],
        capture_output=True, text=True,
    )
    assert result.returncode == 0, result.stderr
    assert "1000/1000 sampled scores match" in result.stdout

    # the engine reads the exported bytes back to the same complex values
    ent2, rel2 = load_embeddings(out)
    assert np.allclose(ent2, ent, atol=1e-12, rtol=0.0)
    assert np.allclose(rel2, rel, atol=1e-12, rtol=0.0)
    src = EmbeddingScorer(ent2, rel2)
    for h, r, t in [(0, 0, 1), (3, 2, 5), (7, 3, 0)]:
        reference = float(np.real(np.sum(rel[r] * ent[h] * np.conj(ent[t]))))
        assert complex_score(src, h, r, t) == pytest.approx(reference, abs=1e-9)

    # embeddings-only ranking pipeline is deterministic across fresh runs
    triples = sorted({(int(rng.integers(nv)), int(rng.integers(nr_raw)), int(rng.integers(nv)))
                      for _ in range(20)})
    kg = from_triples(triples, nv, nr_raw)
    rankings = []
    for _ in range(2):
        ent_i, rel_i = load_embeddings(out)
        matrix = build_matrix(kg, EmbeddingScorer(ent_i, rel_i), epsilon=0.001)
        path = tmp_path / "m.qtom"
        save_matrix(matrix, path)
        matrix = load_matrix(path)
        tree = standard_structures()["2p"].instantiate([0], [0, 2])
        rankings.append(rank_answers(forward(tree, matrix).root_vector))
    assert rankings[0] == rankings[1]
