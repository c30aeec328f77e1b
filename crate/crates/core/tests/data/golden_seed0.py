"""Regenerates golden_seed0.json: three-region template, 1 node, 1 prosumer, seed 0."""
import json

MASK = (1 << 64) - 1


class SplitMix64:
    def __init__(self, seed):
        self.state = seed

    def next_u64(self):
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
        return z ^ (z >> 31)

    def uniform(self, lo, hi):
        return lo + (hi - lo) * ((self.next_u64() >> 11) * (1.0 / (1 << 53)))


rng = SplitMix64(0)
a = rng.uniform(2.5e-3, 5e-3) / 1
c = rng.uniform(0.5e-3, 1e-3)
b = rng.uniform(0.01, 0.05)
p_max = rng.uniform(0.0, 40.0)
d = rng.uniform(-40.0, -20.0)
q = max(0.3 * abs(d) / 1000.0, 0.05)
R_PU, X_PU, L_MAX_PU = 0.004, 0.008, 100.0

case = {
    "format_version": 1,
    "base_power_kw": 1000.0,
    "nodes": [
        {"id": 0, "is_slack": True, "v_min_pu": 0.93, "v_max_pu": 1.07, "q_min_pu": -0.05, "q_max_pu": 0.05},
        {"id": 1, "is_slack": False, "v_min_pu": 0.93, "v_max_pu": 1.07, "q_min_pu": -q, "q_max_pu": q},
    ],
    "branches": [{"from": 0, "to": 1, "r_pu": R_PU, "x_pu": X_PU, "l_max_pu": L_MAX_PU}],
    "lesms": [
        {
            "node": 1,
            "a": a,
            "w_plus": 0.2,
            "w_minus": 0.05,
            "prosumers": [{"c": c, "b": b, "d_kw": d, "p_max_kw": p_max}],
        }
    ],
}
with open("golden_seed0.json", "w") as f:
    f.write(json.dumps(case, indent=2) + "\n")
