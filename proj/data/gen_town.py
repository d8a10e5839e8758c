#!/usr/bin/env python3
"""Writes town.json, the route-planning example model."""
import json
import sys

ADJ = {
    "A": "EBF", "B": "AGC", "C": "BJH", "D": "EKH", "E": "ADL", "F": "AGI",
    "G": "BFI", "H": "LCD", "I": "GJF", "J": "ICK", "K": "DJL", "L": "KEH",
}
INCIDENTS = ["pedestrian", "obstacle", "truck"]
NT = 7

# One incident type (or none) per undirected road segment.
ROAD_INCIDENT = {
    "AB": "pedestrian", "AE": "none", "AF": "obstacle", "BC": "truck", "BG": "none",
    "CH": "pedestrian", "CJ": "obstacle", "DE": "truck", "DH": "none", "DK": "pedestrian",
    "EL": "obstacle", "FG": "truck", "FI": "none", "GI": "pedestrian", "HL": "truck",
    "IJ": "none", "JK": "truck", "KL": "obstacle",
}

TAKEOVER_BASE = {"pedestrian": 0.9, "obstacle": 0.7, "truck": 0.8}
SUCCESS = {
    "pedestrian": {"tk": 0.95, "st": 0.85},
    "obstacle": {"tk": 0.95, "st": 0.8},
    "truck": {"tk": 0.9, "st": 0.7},
}


def road(p, q):
    return "".join(sorted(p + q))


def states():
    return [p + q for q in sorted(ADJ) for p in ADJ[q]]


def shift(theta, probs):
    """probs: {delta: p}; deltas clipped to the scale."""
    row = {str(t): 0.0 for t in range(1, NT + 1)}
    for d, p in probs.items():
        t = min(NT, max(1, theta + d))
        row[str(t)] += p
    return {k: round(v, 12) for k, v in row.items() if v > 0}


def trust_row(theta, incident, ah, er):
    if incident == "none":
        return {str(theta): 1.0}
    low = theta <= 2
    if ah == "st" and er == "succ":
        up = 0.2 if low else 0.45
        return shift(theta, {0: 1 - up, 1: up})
    if ah == "st" and er == "fail":
        return shift(theta, {0: 0.25, -1: 0.6, -2: 0.15})
    if ah == "tk" and er == "succ":
        return shift(theta, {0: 0.75, -1: 0.1, 1: 0.15})
    return shift(theta, {0: 0.7, -1: 0.3})


def build():
    xs = states()
    actions = {}
    incident_model = {}
    world = {}
    for x in xs:
        p, q = x
        acts = [q + r for r in ADJ[q] if r != p]
        actions[x] = acts
        incident_model[x] = {}
        world[x] = {}
        for a in acts:
            incident_model[x][a] = {ROAD_INCIDENT[road(*a)]: 1.0}
            world[x][a] = {a: 1.0}
    human = {}
    for t in range(1, NT + 1):
        rows = {"none": {"tk": 0.0, "st": 1.0}}
        for i in INCIDENTS:
            tk = round(TAKEOVER_BASE[i] * (NT + 1 - t) / NT, 12)
            rows[i] = {"tk": tk, "st": round(1 - tk, 12)}
        human[str(t)] = rows
    perf = {"none": {"tk": {"succ": 1.0, "fail": 0.0}, "st": {"succ": 1.0, "fail": 0.0}}}
    for i in INCIDENTS:
        perf[i] = {ah: {"succ": s, "fail": round(1 - s, 12)} for ah, s in SUCCESS[i].items()}
    dyn = {}
    for t in range(1, NT + 1):
        dyn[str(t)] = {
            i: {ah: {er: trust_row(t, i, ah, er) for er in ("succ", "fail")} for ah in ("tk", "st")}
            for i in ["none"] + INCIDENTS
        }
    return {
        "workspace_states": xs,
        "trust_levels": NT,
        "actions": actions,
        "incidents": INCIDENTS,
        "incident_model": incident_model,
        "human_decision_model": human,
        "performance_model": perf,
        "trust_dynamics": dyn,
        "world_transition": world,
        "initial_state": "EA",
        "initial_belief": [0.05, 0.1, 0.2, 0.3, 0.2, 0.1, 0.05],
    }


if __name__ == "__main__":
    out = sys.argv[1] if len(sys.argv) > 1 else "town.json"
    with open(out, "w") as f:
        json.dump(build(), f, indent=1)
        f.write("\n")
