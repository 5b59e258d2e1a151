#!/usr/bin/env python3
"""Generate the bundled synthetic fixture.

Three dialogue sources (daily, persona, empathetic; 50 dialogues each), two
caption collections (coco: 200 images, flickr: 120 images), sentence
embeddings in the line-delimited text form and image embeddings in the packed
EMB1 form. Everything is derived from a fixed seed, so rerunning reproduces the
committed files byte for byte.

Also writes `embeddings_1000x64.bin`, 1000 unnormalized random vectors used by
the loader norm test.
"""

import json
import struct
from pathlib import Path

import numpy as np

HERE = Path(__file__).resolve().parent
DIM = 32
SEED = 20210801

TOPICS = {
    "dog": ["dog", "puppy", "leash", "bone", "kennel", "tail"],
    "beach": ["beach", "wave", "surfboard", "sand", "shell", "ocean"],
    "food": ["pizza", "sandwich", "salad", "noodles", "cake", "soup"],
    "city": ["street", "bus", "taxi", "traffic", "skyscraper", "crosswalk"],
    "sport": ["soccer", "tennis", "racket", "stadium", "goal", "referee"],
    "snow": ["snow", "ski", "sled", "snowman", "mountain", "glove"],
    "cat": ["cat", "kitten", "yarn", "whisker", "litter", "purr"],
    "train": ["train", "station", "platform", "railway", "ticket", "engine"],
    "garden": ["flower", "garden", "tulip", "shovel", "hose", "butterfly"],
    "music": ["guitar", "piano", "concert", "drummer", "violin", "melody"],
    "kitchen": ["oven", "kettle", "fridge", "spoon", "blender", "toaster"],
    "bike": ["bicycle", "helmet", "pedal", "trail", "saddle", "chain"],
}
ADJ = ["old", "little", "shiny", "muddy", "bright", "noisy", "quiet", "huge",
       "tiny", "colorful", "sleepy", "crowded", "wooden", "rusty", "fresh"]
VERBS = ["saw", "found", "photographed", "painted", "bought", "watched",
         "remember", "miss", "love", "cleaned", "fixed", "borrowed"]
PLACES = ["near the lake", "at home", "downtown", "by the river", "last summer",
          "this morning", "at the market", "behind the school", "in the park",
          "after work", "on vacation", "yesterday"]
SUBJ = ["I", "We", "My brother", "My friend", "Our neighbor", "Grandma",
        "My sister", "Everyone"]
GREETINGS = ["Hello there.", "Hi, good to see you.", "Hey, long time no see.",
             "Good morning.", "Hi!", "Hey there, friend."]
FILLERS = ["It is what it is.", "So do I.", "Me too.", "That is all."]

SOURCES = {"daily": 50, "persona": 50, "empathetic": 50}
SPLITS = [("train", 24), ("valid", 6), ("test", 20)]
IMAGES = {"coco": [("train", 120), ("valid", 20), ("test", 60)],
          "flickr": [("train", 72), ("valid", 12), ("test", 36)]}


def f32_list(v):
    return [float(np.float32(x)) for x in v]


def mixed_vector(rng, centroid):
    a = rng.uniform(0.5, 3.0)
    noise = rng.normal(size=DIM)
    noise /= np.linalg.norm(noise)
    return (a * centroid + noise).astype(np.float32)


def sentence(rng, topic, question):
    words = TOPICS[topic]
    noun = words[rng.integers(len(words))]
    other = words[rng.integers(len(words))]
    adj = ADJ[rng.integers(len(ADJ))]
    if question:
        forms = [f"Have you ever seen a {adj} {noun}?",
                 f"Do you like the {noun} {PLACES[rng.integers(len(PLACES))]}?",
                 f"What happened to your {noun}?",
                 f"Where did you get that {adj} {other}?"]
        return forms[rng.integers(len(forms))]
    subj = SUBJ[rng.integers(len(SUBJ))]
    verb = VERBS[rng.integers(len(VERBS))]
    place = PLACES[rng.integers(len(PLACES))]
    forms = [f"{subj} {verb} a {adj} {noun} {place}.",
             f"{subj} {verb} the {noun} and the {other} {place}.",
             f"The {noun} was so {adj} {place}!",
             f"{subj} {verb} that {adj} {noun}, with a {other} too."]
    return forms[rng.integers(len(forms))]


def main():
    rng = np.random.default_rng(SEED)
    topic_names = list(TOPICS)
    centroids = {}
    for t in topic_names:
        c = rng.normal(size=DIM)
        centroids[t] = c / np.linalg.norm(c)

    sentence_vectors = []
    for source, count in SOURCES.items():
        rows = []
        idx = 0
        for split, n in SPLITS:
            for _ in range(n):
                did = f"{source}-{idx:03d}"
                idx += 1
                main_topic = topic_names[rng.integers(len(topic_names))]
                n_turns = int(rng.integers(6, 13))
                turns = []
                for t in range(n_turns):
                    if t == 0:
                        text = GREETINGS[rng.integers(len(GREETINGS))]
                        topic = main_topic
                    else:
                        topic = main_topic if rng.random() < 0.7 else \
                            topic_names[rng.integers(len(topic_names))]
                        r = rng.random()
                        if r < 0.25:
                            text = sentence(rng, topic, True)
                        elif r < 0.29:
                            text = FILLERS[rng.integers(len(FILLERS))]
                        else:
                            text = sentence(rng, topic, False)
                    turns.append({"speaker": t % 2, "text": text})
                    sentence_vectors.append(
                        (f"{did}#{t}", mixed_vector(rng, centroids[topic])))
                rows.append({"dialogue_id": did, "source": source,
                             "split": split, "turns": turns})
        with open(HERE / f"dialogues_{source}.jsonl", "w") as fh:
            for r in rows:
                fh.write(json.dumps(r) + "\n")

    with open(HERE / "sentence_embeddings.jsonl", "w") as fh:
        for key, v in sentence_vectors:
            fh.write(json.dumps({"id": key, "vector": f32_list(v)}) + "\n")

    image_vectors = []
    for source, splits in IMAGES.items():
        rows = []
        idx = 0
        for split, n in splits:
            for _ in range(n):
                iid = f"{source}_{idx:04d}"
                idx += 1
                topic = topic_names[rng.integers(len(topic_names))]
                words = TOPICS[topic]
                caption = (f"a {ADJ[rng.integers(len(ADJ))]} "
                           f"{words[rng.integers(len(words))]} with a "
                           f"{words[rng.integers(len(words))]} "
                           f"{PLACES[rng.integers(len(PLACES))]}")
                rows.append({"image_id": iid, "source": source,
                             "split": split, "caption": caption})
                image_vectors.append((iid, mixed_vector(rng, centroids[topic])))
        with open(HERE / f"images_{source}.jsonl", "w") as fh:
            for r in rows:
                fh.write(json.dumps(r) + "\n")

    write_packed(HERE / "image_embeddings.bin", image_vectors, DIM)

    big_rng = np.random.default_rng(SEED + 1)
    big = [(f"v{i:04d}", (big_rng.normal(size=64) * big_rng.uniform(0.1, 50)).astype(np.float32))
           for i in range(1000)]
    write_packed(HERE / "embeddings_1000x64.bin", big, 64)


def write_packed(path, items, dim):
    with open(path, "wb") as fh:
        fh.write(b"EMB1")
        fh.write(struct.pack("<I", dim))
        for key, v in items:
            raw = key.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(np.asarray(v, dtype="<f4").tobytes())


if __name__ == "__main__":
    main()
