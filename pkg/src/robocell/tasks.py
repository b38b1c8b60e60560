"""The five builtin evaluation tasks across the three simulated scenes."""

from __future__ import annotations

from .core.types import (
    InitialStateRanges,
    Scene,
    SuccessThresholds,
    TaskSpec,
    VerdictLabel,
)

_RESET_PROMPT = "is the scene reset for a new trial? answer yes or no"

_YES_IS_SUCCESS = {
    "yes": VerdictLabel.SUCCESS,
    "no": VerdictLabel.FAILURE,
    "invalid": VerdictLabel.INVALID,
}
_NO_IS_SUCCESS = {
    "yes": VerdictLabel.FAILURE,
    "no": VerdictLabel.SUCCESS,
    "invalid": VerdictLabel.INVALID,
}


def build_default_tasks() -> dict[str, TaskSpec]:
    tasks = [
        TaskSpec(
            task_id="open_drawer",
            scene=Scene.DRAWER,
            instruction="open the drawer",
            max_steps=70,
            success_prompt="is the drawer open? answer yes or no",
            reset_instruction="push the drawer back shut",
            reset_prompt=_RESET_PROMPT,
            initial_state_distribution=InitialStateRanges(drawer_openness_m=(0.0, 0.01)),
            success_threshold_params=SuccessThresholds(rule="drawer_open", drawer_open_min_m=0.015),
            answer_table=_YES_IS_SUCCESS,
        ),
        TaskSpec(
            task_id="close_drawer",
            scene=Scene.DRAWER,
            instruction="close the drawer",
            max_steps=70,
            success_prompt="is the drawer open? answer yes or no",
            reset_instruction="pull the drawer back open",
            reset_prompt=_RESET_PROMPT,
            initial_state_distribution=InitialStateRanges(drawer_openness_m=(0.04, 0.12)),
            success_threshold_params=SuccessThresholds(rule="drawer_closed", drawer_closed_max_m=0.002),
            # Success means the drawer is no longer open, so "no" wins here.
            answer_table=_NO_IS_SUCCESS,
        ),
        TaskSpec(
            task_id="put_in_sink",
            scene=Scene.SINK,
            instruction="put the eggplant in the blue sink",
            max_steps=100,
            success_prompt="is the eggplant in the sink or in the basket? answer sink or basket or invalid",
            reset_instruction="move the eggplant back to the basket",
            reset_prompt=_RESET_PROMPT,
            initial_state_distribution=InitialStateRanges(
                object_x_m=(0.16, 0.24), object_y_m=(-0.16, -0.08)
            ),
            success_threshold_params=SuccessThresholds(
                rule="object_in_container", target_container="sink"
            ),
            answer_table={
                "sink": VerdictLabel.SUCCESS,
                "basket": VerdictLabel.FAILURE,
                "invalid": VerdictLabel.INVALID,
            },
        ),
        TaskSpec(
            task_id="put_in_basket",
            scene=Scene.SINK,
            instruction="put the eggplant in the yellow basket",
            max_steps=100,
            success_prompt="is the eggplant in the sink or in the basket? answer sink or basket or invalid",
            reset_instruction="move the eggplant back to the sink",
            reset_prompt=_RESET_PROMPT,
            initial_state_distribution=InitialStateRanges(
                object_x_m=(0.16, 0.24), object_y_m=(0.08, 0.16)
            ),
            success_threshold_params=SuccessThresholds(
                rule="object_in_container", target_container="basket"
            ),
            answer_table={
                "basket": VerdictLabel.SUCCESS,
                "sink": VerdictLabel.FAILURE,
                "invalid": VerdictLabel.INVALID,
            },
        ),
        TaskSpec(
            task_id="fold_cloth",
            scene=Scene.CLOTH,
            instruction="fold the cloth from top right to bottom left",
            max_steps=80,
            success_prompt="is the blue cloth folded or unfolded? answer yes or no",
            reset_instruction="spread the cloth flat again",
            reset_prompt=_RESET_PROMPT,
            initial_state_distribution=InitialStateRanges(fold_fraction=(0.0, 0.1)),
            success_threshold_params=SuccessThresholds(rule="cloth_folded", fold_fraction_min=0.25),
            answer_table=_YES_IS_SUCCESS,
        ),
    ]
    return {t.task_id: t for t in tasks}


DEFAULT_TASKS = build_default_tasks()
