"""Walkthrough: folder expansion, folder-level splits, and probe triplets.

A folder is one anchor plus its k factor-matched positives. Every folder
expands into k^2 triplets: k anchor-positive plus k(k-1) cross-positive,
which is valid because everything in a folder shares the factor-defining
property. Splits happen at the folder level so no folder leaks across sides.
"""

from merit import (ClipMeta, FolderEntry, build_class_triplets, count_triplets,
                   expand_folder, split_folders)

folder = FolderEntry(
    folder_id="folder-0",
    anchor_id="anchor",
    positive_ids=[f"pos-{i}" for i in range(5)],
    factor="melody",
)
pool = [f"other-{i}" for i in range(40)]

triplets = expand_folder(folder, pool, seed=7)
print(f"k=5 folder -> {len(triplets)} triplets "
      f"({folder.k} anchor-positive + {folder.k * (folder.k - 1)} cross-positive)")
print("first anchor-positive: ", triplets[0])
print("first cross-positive:  ", triplets[5])

folders = [
    FolderEntry(f"folder-{i}", f"a{i}", [f"p{i}-{j}" for j in range(5)], "melody")
    for i in range(5000)
]
print(f"5000 folders at k=5 expand to {count_triplets(folders):,} triplets")

train, test = split_folders(folders, ratio=0.9, seed=1)
print(f"90/10 folder split: {len(train)} train / {len(test)} test "
      f"-> {count_triplets(test):,} held-out triplets")

# Probe triplets from class labels: anchor and positive share an instrument
# class across songs, the negative is a different class from the anchor's song.
metas = {}
for song in range(3):
    for inst in ("piano", "drums"):
        cid = f"s{song}-{inst}"
        metas[cid] = ClipMeta(cid, class_label=inst, source_song_id=f"song{song}")
probe = build_class_triplets(metas, rule="same_song_negative", seed=0)
print(f"class probe triplets from {len(metas)} stems:")
for t in probe[:3]:
    print("  ", t)
