"""Walkthrough: the binary embedding store and its metadata sidecar.

Embeddings are cached once and shared by every other component, so the store
is deliberately dumb: a fixed header, id-framed f32 vectors, bit-exact round
trips, and a JSON sidecar for clip metadata.
"""

import tempfile
from pathlib import Path

import numpy as np

from merit import (ClipMeta, EmbeddingRecord, read_meta, read_store,
                   validate_store, write_meta, write_store)

workdir = Path(tempfile.mkdtemp(prefix="merit-demo-"))
rng = np.random.default_rng(0)

# Three clips with 5120-d vectors, the encoder-shaped default (5 x 1024).
records = [
    EmbeddingRecord(f"track-{i:02d}", rng.standard_normal(5120).astype(np.float32))
    for i in range(3)
]
store_path = workdir / "store.bin"
write_store(records, store_path)
print(f"wrote {store_path} ({store_path.stat().st_size} bytes)")

header, loaded = read_store(store_path)
print(f"header: dim={header.dim} blocks={header.n_blocks}x{header.block_dim} "
      f"records={header.record_count}")

identical = all(
    a.clip_id == b.clip_id and a.vector.tobytes() == b.vector.tobytes()
    for a, b in zip(records, loaded)
)
print(f"bit-exact round trip: {identical}")

# Clip metadata lives next to the store, keyed by clip id.
metas = {
    r.clip_id: ClipMeta(r.clip_id, folder_id="folder-0",
                        class_label="piano", source_song_id="song-7")
    for r in records
}
meta_path = workdir / "store.bin.meta.json"
write_meta(metas, meta_path)
print(f"sidecar metadata: {read_meta(meta_path)['track-00']}")

report = validate_store(store_path, expected_dim=5120)
print(f"validation ok: {report.ok}")

report = validate_store(store_path, expected_dim=256)
print(f"deliberate dim mismatch reported: {report.dim_mismatches}")
