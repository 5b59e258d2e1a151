#!/usr/bin/env python3
"""Independent oracle for the bundled fixture.

Recomputes, without touching the Rust code, the numbers the test suites pin:
record and turn counts, candidate counts, the instance count of a build with
top-k 5 and floor 0.2, and the instances kept under the reference thresholds.

Also writes `annotations_synthetic.csv`, three simulated annotators scoring
every instance as a noisy function of its similarity. When
`e2e_segments.json` (the seed-17 annotation sample) is present, the segment
boundaries are checked against this script's own ordering and the calibrated
thresholds and kept counts are recomputed from the sampled ids.

Writes `oracle_counts.json` next to this script.
"""

import hashlib
import json
import math
import re
import struct
from collections import Counter
from pathlib import Path

import numpy as np

HERE = Path(__file__).resolve().parent
STOPWORDS = HERE.parent / "crates" / "core" / "data" / "stopwords.txt"
TOPK = 5
FLOOR = 0.2
REFERENCE = {
    "persona+coco": 0.546, "persona+flickr": 0.509, "daily+coco": 0.555,
    "daily+flickr": 0.619, "empathetic+coco": 0.623, "empathetic+flickr": 0.516,
}
DIALOGUE_SOURCES = ["daily", "persona", "empathetic"]
IMAGE_SOURCES = ["coco", "flickr"]
ANNOTATORS = ["ann1", "ann2", "ann3"]
OFFSET = {"daily": 0.0, "persona": -0.03, "empathetic": 0.03, "coco": 0.0, "flickr": 0.02}
TARGETS = [2.0, 2.0, 3.0]
SEGMENTS = 10
PER_SEGMENT = 30


def tokens(text):
    return [t.lower() for t in re.findall(r"[^\W_]+", text)]


def load_stop():
    stop = set()
    for line in STOPWORDS.read_text().splitlines():
        line = line.split("#")[0].strip()
        if line:
            stop.update(tokens(line))
    return stop


def read_jsonl(path):
    with open(path) as fh:
        return [json.loads(l) for l in fh if l.strip()]


def read_packed(path):
    data = Path(path).read_bytes()
    assert data[:4] == b"EMB1"
    (dim,) = struct.unpack_from("<I", data, 4)
    pos, out = 8, {}
    while pos < len(data):
        (n,) = struct.unpack_from("<H", data, pos)
        pos += 2
        key = data[pos:pos + n].decode()
        pos += n
        out[key] = np.frombuffer(data, dtype="<f4", count=dim, offset=pos).copy()
        pos += 4 * dim
    return out


def normalize(v):
    v64 = v.astype(np.float64)
    return (v64 / np.sqrt((v64 * v64).sum())).astype(np.float32)


def unit(key):
    h = hashlib.sha256(key.encode()).digest()
    return int.from_bytes(h[:8], "little") / 2.0 ** 64


def clamp_round(v, hi):
    return int(min(hi, max(1, math.floor(v + 0.5))))


def synthetic_scores(iid, combo, sim, annotator):
    dsrc, isrc = combo.split("+")
    s = sim - OFFSET[dsrc] - OFFSET[isrc]
    noise = (unit(f"{iid}|{annotator}") - 0.5) * 0.8
    q1 = clamp_round(1 + 2 * (s - 0.30) / 0.5 + noise, 3)
    q2 = clamp_round(1 + 2 * (s - 0.25) / 0.5 + noise, 3)
    q3 = clamp_round(5 * s + 1.5 * noise, 5)
    q4 = 1 + int(unit(f"{iid}|{annotator}|q4") * 4)
    return q1, q2, q3, q4


def crossing(curve, target):
    best = curve[0][0] if curve[0][1] >= target else None
    for (x0, y0), (x1, y1) in zip(curve, curve[1:]):
        if y0 < target <= y1:
            x = x0 + (target - y0) / (y1 - y0) * (x1 - x0)
            best = x if best is None else max(best, x)
    return best


def calibrate(instances, scores, segments_file):
    by_combo = {}
    for inst in instances:
        by_combo.setdefault(inst["combo"], []).append(inst)
    by_id = {i["id"]: i for i in instances}
    sample = {s["combination"]: s for s in json.loads(segments_file.read_text())}
    assert sorted(sample) == sorted(by_combo)
    out = {}
    for combo, members in sorted(by_combo.items()):
        members = sorted(members, key=lambda i: (i["sim32"], i["id"]))
        n = len(members)
        base, extra = divmod(n, SEGMENTS)
        start, curves = 0, [[], [], []]
        for k, seg in enumerate(sample[combo]["segments"]):
            size = base + (1 if k < extra else 0)
            part = members[start:start + size]
            start += size
            assert seg["population"] == size
            assert seg["lower"] == part[0]["sim32"] and seg["upper"] == part[-1]["sim32"]
            ids = {i["id"] for i in part}
            assert len(seg["sampled"]) == min(size, PER_SEGMENT)
            assert len(set(seg["sampled"])) == len(seg["sampled"])
            assert all(i in ids for i in seg["sampled"])
            x = sum(by_id[i]["sim32"] for i in seg["sampled"]) / len(seg["sampled"])
            for q in range(3):
                y = sum(sum(sc[q] for sc in scores[i]) / len(scores[i])
                        for i in seg["sampled"]) / len(seg["sampled"])
                curves[q].append((x, y))
        per_q = [crossing(curves[q], TARGETS[q]) for q in range(3)]
        avail = [t for t in per_q if t is not None]
        chosen = max(avail) if avail else None
        kept = sum(1 for i in members if chosen is not None and i["sim32"] > chosen)
        out[combo] = {"q1": per_q[0], "q2": per_q[1], "q3": per_q[2],
                      "chosen": chosen, "kept": kept, "total": n}
    return out


def main():
    stop = load_stop()
    dialogues = {s: read_jsonl(HERE / f"dialogues_{s}.jsonl") for s in DIALOGUE_SOURCES}
    images = {s: read_jsonl(HERE / f"images_{s}.jsonl") for s in IMAGE_SOURCES}
    sent = {r["id"]: normalize(np.array(r["vector"], dtype=np.float32))
            for r in read_jsonl(HERE / "sentence_embeddings.jsonl")}
    img = {k: normalize(v) for k, v in read_packed(HERE / "image_embeddings.bin").items()}

    out = {
        "dialogues": {s: len(d) for s, d in dialogues.items()},
        "turns": {s: sum(len(x["turns"]) for x in d) for s, d in dialogues.items()},
        "images": {s: len(i) for s, i in images.items()},
    }

    candidates = []  # (dialogue, turn index)
    question_turns = 0
    for s in DIALOGUE_SOURCES:
        for d in dialogues[s]:
            for t, turn in enumerate(d["turns"]):
                if turn["text"].rstrip().endswith("?"):
                    question_turns += 1
                if t == 0 or turn["text"].rstrip().endswith("?"):
                    continue
                if not [w for w in tokens(turn["text"]) if w not in stop]:
                    continue
                candidates.append((d, t))
    out["candidates"] = len(candidates)
    out["question_turns"] = question_turns

    pools = {}
    for s in IMAGE_SOURCES:
        for r in images[s]:
            pools.setdefault((s, r["split"]), []).append(r["image_id"])

    per_split, per_combo, kept_combo = Counter(), Counter(), Counter()
    instances = []
    for d, t in candidates:
        q = sent[f"{d['dialogue_id']}#{t}"].astype(np.float64)
        qn = np.sqrt((q * q).sum())
        for s in IMAGE_SOURCES:
            ids = pools.get((s, d["split"]), [])
            scored = []
            for iid in ids:
                v = img[iid].astype(np.float64)
                sim = float((q * v).sum()) / (qn * np.sqrt((v * v).sum()))
                if sim >= FLOOR:
                    scored.append((-sim, iid))
            scored.sort()
            combo = f"{d['source']}+{s}"
            for neg, iid in scored[:TOPK]:
                sim32 = float(np.float32(-neg))
                instances.append({"id": f"{d['dialogue_id']}#{t}#{iid}", "combo": combo,
                                  "sim32": sim32, "split": d["split"]})
                per_split[d["split"]] += 1
                per_combo[combo] += 1
                if float(np.float32(-neg)) > REFERENCE[combo]:
                    kept_combo[combo] += 1

    out["build"] = {"topk": TOPK, "floor": FLOOR,
                    "instances": sum(per_split.values()),
                    "per_split": dict(sorted(per_split.items())),
                    "per_combination": dict(sorted(per_combo.items()))}
    out["reference_filter"] = {"kept": sum(kept_combo.values()),
                               "per_combination": {k: kept_combo.get(k, 0)
                                                   for k in sorted(per_combo)}}

    scores = {}
    rows = ["instance_id,annotator_id,q1,q2,q3,q4"]
    for inst in instances:
        scores[inst["id"]] = []
        for a in ANNOTATORS:
            q = synthetic_scores(inst["id"], inst["combo"], inst["sim32"], a)
            scores[inst["id"]].append(q)
            rows.append(f"{inst['id']},{a},{q[0]},{q[1]},{q[2]},{q[3]}")
    (HERE / "annotations_synthetic.csv").write_text("\n".join(rows) + "\n")
    out["annotations"] = {"rows": len(rows) - 1, "annotators": len(ANNOTATORS)}

    segments_file = HERE / "e2e_segments.json"
    if segments_file.exists():
        cal = calibrate(instances, scores, segments_file)
        kept_ids = {i["id"] for i in instances
                    if cal[i["combo"]]["chosen"] is not None
                    and i["sim32"] > cal[i["combo"]]["chosen"]}
        kept_split = Counter(i["split"] for i in instances if i["id"] in kept_ids)
        out["calibrated"] = {"seed": 17, "combinations": cal,
                             "kept": len(kept_ids),
                             "kept_per_split": dict(sorted(kept_split.items()))}

    norms = read_packed(HERE / "embeddings_1000x64.bin")
    out["norm_fixture"] = {"count": len(norms), "dim": 64}

    (HERE / "oracle_counts.json").write_text(json.dumps(out, indent=2) + "\n")
    print(json.dumps(out, indent=2))


if __name__ == "__main__":
    main()
