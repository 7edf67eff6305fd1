"""Named experiment configurations: the stagnation example, both quadratic settings, MLR and NN sweeps."""

from typing import Any, Dict, List

from .errors import ConfigError

MLR_STEPSIZES = (0.1, 0.25, 0.5, 1.0, 1.25)
EPSILONS = (0.1, 0.2, 0.4)
NN_STEPSIZE = 0.09375


def _modes(grad: str, mul: str, sub: str) -> Dict[str, str]:
    return {"mode_grad": grad, "mode_mul": mul, "mode_sub": sub}


def _build() -> Dict[str, Dict[str, Any]]:
    presets: Dict[str, Dict[str, Any]] = {}

    one_d = {"experiment": "quadratic", "setting": "stagnation", "format": "binary8", "iters": 30}
    presets["stagnation-1d"] = {**one_d, **_modes("rn", "rn", "rn"), "reps": 1}
    presets["stagnation-1d-sr"] = {**one_d, **_modes("rn", "rn", "sr"), "reps": 20}
    presets["round-demo"] = {"experiment": "round-demo", "format": "binary8", "reps": 20, "iters": 30}

    for label, setting, n in (("setting1", "I", 1000), ("setting2", "II", 200), ("setting2-full", "II", 1000)):
        base = {"experiment": "quadratic", "setting": setting, "dimension": n, "iters": 4000, "bounds": True}
        presets[f"{label}-binary32"] = {**base, "format": "binary32", **_modes("rn", "rn", "rn"), "reps": 1}
        presets[f"{label}-rn"] = {**base, "format": "bfloat16", **_modes("rn", "rn", "rn"), "reps": 1}
        presets[f"{label}-sr"] = {**base, "format": "bfloat16", **_modes("sr", "sr", "sr"), "reps": 20}
        presets[f"{label}-signed"] = {
            **base,
            "format": "bfloat16",
            **_modes("sr", "sr", "ssr_eps:0.4"),
            "reps": 20,
        }

    mlr = {"experiment": "mlr", "format": "binary8", "iters": 150, "reps": 20, "t": 0.5}
    presets["mlr-binary32"] = {**mlr, "format": "binary32", **_modes("rn", "rn", "rn"), "reps": 1}
    presets["mlr-rn"] = {**mlr, **_modes("rn", "rn", "sr")}
    presets["mlr-sr"] = {**mlr, **_modes("sr", "sr", "sr")}
    for eps in EPSILONS:
        presets[f"mlr-sr-eps-{eps}"] = {**mlr, **_modes(f"sr_eps:{eps}", f"sr_eps:{eps}", "sr")}
        presets[f"mlr-signed-{eps}"] = {
            **mlr,
            **_modes("sr", f"sr_eps:{eps}", f"ssr_eps:{eps}"),
            "t": 0.1,
        }
    for t in MLR_STEPSIZES:
        presets[f"mlr-lr-sr-t{t:g}"] = {**mlr, **_modes("sr", "sr", "sr"), "t": t}
        presets[f"mlr-lr-signed-t{t:g}"] = {
            **mlr,
            **_modes("sr_eps:0.1", "ssr_eps:0.1", "ssr_eps:0.1"),
            "t": t,
        }
        presets[f"mlr-lr-binary32-t{t:g}"] = {
            **mlr,
            "format": "binary32",
            **_modes("rn", "rn", "rn"),
            "reps": 1,
            "t": t,
        }

    nn = {"experiment": "nn", "format": "binary8", "iters": 50, "reps": 20, "t": NN_STEPSIZE}
    presets["nn-binary32"] = {**nn, "format": "binary32", **_modes("rn", "rn", "rn"), "reps": 1}
    presets["nn-rn"] = {**nn, **_modes("rn", "rn", "rn")}
    presets["nn-sr"] = {**nn, **_modes("sr", "sr", "sr")}
    for eps in EPSILONS:
        presets[f"nn-sr-eps-{eps}"] = {**nn, **_modes(f"sr_eps:{eps}", f"sr_eps:{eps}", "sr")}
        presets[f"nn-signed-{eps}"] = {
            **nn,
            **_modes(f"sr_eps:{eps}", f"sr_eps:{eps}", f"ssr_eps:{eps}"),
        }
    for name, preset in presets.items():
        preset["preset"] = name
    return presets


PRESETS = _build()


def preset_names() -> List[str]:
    return sorted(PRESETS)


def get_preset(name: str) -> Dict[str, Any]:
    try:
        return dict(PRESETS[name])
    except KeyError:
        raise ConfigError(f"unknown preset '{name}'; try one of {preset_names()}", key="preset")
