"""Regenerate the hand-description fixtures shipped as package data.

The toy two-finger hand is sized so that a perfect pinch on a 5 cm-radius
sphere centered at the origin exists: with the root at (0, 0, h), rotated
180 deg about x, and pinch angles +/- asin(0.2), both fingertip pads land
exactly on (-0.05, 0, 0) and (+0.05, 0, 0) with pad normals matching the
sphere's outward normals there.
"""

import json
import math
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "src" / "graspforge" / "data" / "hands"

THETA = math.asin(0.2)  # closing angle of the exact pinch
C, S = math.cos(THETA), math.sin(THETA)


def t(translation, quaternion=(1.0, 0.0, 0.0, 0.0)):
    return {"translation": list(translation), "quaternion": list(quaternion)}


def sphere(center, radius):
    return {"center": list(center), "radius": radius}


def toy_two_finger():
    palm_samples = [[x, y, 0.01] for x in (-0.018, -0.006, 0.006, 0.018)
                    for y in (-0.018, -0.006, 0.006, 0.018)]
    distal_line = [[0.006, 0.0, z] for z in
                   (0.0, 0.01, 0.02, 0.03, 0.04, 0.05)]
    distal_line_r = [[-0.006, 0.0, z] for z in
                     (0.0, 0.01, 0.02, 0.03, 0.04, 0.05)]
    return {
        "links": [
            {"name": "palm", "parent": -1, "transform": t([0, 0, 0]),
             "collision_spheres": [sphere([0.0, 0.0, 0.0], 0.012)]},
            {"name": "proximal_l", "parent": "palm", "transform": t([-0.06, 0.0, 0.01]),
             "collision_spheres": [sphere([0.0, 0.0, 0.005], 0.008)]},
            {"name": "distal_l", "parent": "proximal_l", "transform": t([0.0, 0.0, 0.01]),
             "collision_spheres": [sphere([-0.012, 0.0, 0.02], 0.008),
                                   sphere([-0.012, 0.0, 0.04], 0.008)]},
            {"name": "proximal_r", "parent": "palm", "transform": t([0.06, 0.0, 0.01]),
             "collision_spheres": [sphere([0.0, 0.0, 0.005], 0.008)]},
            {"name": "distal_r", "parent": "proximal_r", "transform": t([0.0, 0.0, 0.01]),
             "collision_spheres": [sphere([0.012, 0.0, 0.02], 0.008),
                                   sphere([0.012, 0.0, 0.04], 0.008)]},
        ],
        "joints": [
            {"child": "distal_l", "axis": [0.0, 1.0, 0.0], "type": "revolute",
             "lower": 0.0, "upper": 1.2},
            {"child": "distal_r", "axis": [0.0, 1.0, 0.0], "type": "revolute",
             "lower": -1.2, "upper": 0.0},
        ],
        "fingers": [["proximal_l", "distal_l"], ["proximal_r", "distal_r"]],
        "contact_candidates": {
            "palm": [
                {"point": [-0.01, 0.0, 0.012], "normal": [0.0, 0.0, -1.0]},
                {"point": [0.01, 0.0, 0.012], "normal": [0.0, 0.0, -1.0]},
            ],
            "proximal_l": [
                {"point": [0.008, 0.0, 0.006], "normal": [-1.0, 0.0, 0.0]},
            ],
            "distal_l": [
                {"point": [0.0, 0.0, 0.05], "normal": [-C, 0.0, -S]},
            ],
            "proximal_r": [
                {"point": [-0.008, 0.0, 0.006], "normal": [1.0, 0.0, 0.0]},
            ],
            "distal_r": [
                {"point": [0.0, 0.0, 0.05], "normal": [C, 0.0, -S]},
            ],
        },
        "surface_samples": {
            "palm": palm_samples,
            "proximal_l": [[0.008, 0.0, z] for z in (0.0, 0.005, 0.01)],
            "distal_l": distal_line,
            "proximal_r": [[-0.008, 0.0, z] for z in (0.0, 0.005, 0.01)],
            "distal_r": distal_line_r,
        },
        "auxiliary_links": ["palm"],
        "functional_fingers": [0, 1],
    }


def inspire_like():
    """Five fingers, six degrees of freedom: one curl joint per finger plus a
    two-joint thumb. Palm face normal +z, fingers extend +y and curl to +z."""
    finger_x = [-0.027, -0.009, 0.009, 0.027]
    finger_names = ["index", "middle", "ring", "pinky"]
    finger_len = [0.042, 0.046, 0.042, 0.034]

    links = [
        {"name": "palm", "parent": -1, "transform": t([0, 0, 0]),
         "collision_spheres": [sphere([x, y, 0.0], 0.015)
                               for x in (-0.02, 0.02) for y in (0.025, 0.055)]},
    ]
    joints = []
    fingers = []
    contacts = {}
    samples = {
        "palm": [[x, y, 0.01] for x in (-0.025, 0.0, 0.025) for y in (0.02, 0.04, 0.06, 0.08)],
    }
    contacts["palm"] = [
        {"point": [-0.015, 0.045, 0.012], "normal": [0.0, 0.0, -1.0]},
        {"point": [0.015, 0.045, 0.012], "normal": [0.0, 0.0, -1.0]},
    ]

    for name, x, ln in zip(finger_names, finger_x, finger_len):
        prox, dist = f"{name}_prox", f"{name}_distal"
        links.append({"name": prox, "parent": "palm", "transform": t([x, 0.09, 0.005]),
                      "collision_spheres": [sphere([0.0, ln * 0.5, 0.0], 0.007)]})
        links.append({"name": dist, "parent": prox, "transform": t([0.0, ln, 0.0]),
                      "collision_spheres": [sphere([0.0, ln * 0.35, 0.0], 0.0065),
                                            sphere([0.0, ln * 0.8, 0.0], 0.006)]})
        joints.append({"child": prox, "axis": [1.0, 0.0, 0.0], "type": "revolute",
                       "lower": 0.0, "upper": 1.5})
        fingers.append([prox, dist])
        contacts[prox] = [
            {"point": [0.0, ln * 0.6, 0.008], "normal": [0.0, 0.0, -1.0]},
        ]
        contacts[dist] = [
            {"point": [0.0, ln * 0.55, 0.008], "normal": [0.0, 0.0, -1.0]},
            {"point": [0.0, ln * 0.9, 0.007], "normal": [0.0, 0.0, -1.0]},
        ]
        samples[prox] = [[0.0, ln * f, 0.007] for f in (0.2, 0.5, 0.8)]
        samples[dist] = [[0.0, ln * f, 0.007] for f in (0.15, 0.4, 0.65, 0.9)]

    links.append({"name": "thumb_base", "parent": "palm", "transform": t([0.042, 0.025, 0.005]),
                  "collision_spheres": [sphere([0.008, 0.01, 0.0], 0.009)]})
    links.append({"name": "thumb_prox", "parent": "thumb_base", "transform": t([0.012, 0.022, 0.0]),
                  "collision_spheres": [sphere([0.0, 0.018, 0.0], 0.008)]})
    links.append({"name": "thumb_distal", "parent": "thumb_prox", "transform": t([0.0, 0.036, 0.0]),
                  "collision_spheres": [sphere([0.0, 0.012, 0.0], 0.007),
                                        sphere([0.0, 0.026, 0.0], 0.0065)]})
    joints.append({"child": "thumb_base", "axis": [0.0, 1.0, 0.0], "type": "revolute",
                   "lower": 0.0, "upper": 1.2})
    joints.append({"child": "thumb_prox", "axis": [1.0, 0.0, 0.0], "type": "revolute",
                   "lower": 0.0, "upper": 1.0})
    fingers.append(["thumb_base", "thumb_prox", "thumb_distal"])
    contacts["thumb_prox"] = [
        {"point": [0.0, 0.02, 0.007], "normal": [0.0, 0.0, 1.0]},
    ]
    contacts["thumb_distal"] = [
        {"point": [0.0, 0.014, 0.007], "normal": [0.0, 0.0, 1.0]},
        {"point": [0.0, 0.028, 0.006], "normal": [0.0, 0.0, 1.0]},
    ]
    samples["thumb_base"] = [[0.008, y, 0.006] for y in (0.005, 0.015)]
    samples["thumb_prox"] = [[0.0, y, 0.006] for y in (0.01, 0.02, 0.03)]
    samples["thumb_distal"] = [[0.0, y, 0.006] for y in (0.008, 0.018, 0.028)]

    return {
        "links": links,
        "joints": joints,
        "fingers": fingers,
        "contact_candidates": contacts,
        "surface_samples": samples,
        "auxiliary_links": ["palm"],
        "functional_fingers": [0, 4],
    }


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for name, doc in (("toy_two_finger", toy_two_finger()), ("inspire_like", inspire_like())):
        path = OUT / f"{name}.json"
        path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
        print("wrote", path)


if __name__ == "__main__":
    main()
