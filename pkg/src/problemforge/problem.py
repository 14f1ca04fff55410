"""A problem pairs a task machine with a level instance."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Iterator

from .gridworld import Level, level_from_json, level_to_json, validate_level
from .reward_machine import RewardMachine, rm_from_json, rm_to_json, validate_rm

__all__ = ["Problem", "problem_to_json", "problem_from_json", "write_problems", "read_problems", "validate_problem"]


@dataclass(frozen=True)
class Problem:
    rm: RewardMachine
    level: Level


def validate_problem(problem: Problem) -> None:
    validate_rm(problem.rm)
    validate_level(problem.level)


def problem_to_json(problem: Problem) -> dict:
    return {"rm": rm_to_json(problem.rm), "level": level_to_json(problem.level)}


def problem_from_json(data: dict) -> Problem:
    return Problem(rm=rm_from_json(data["rm"]), level=level_from_json(data["level"]))


def write_problems(path, problems: Iterable[Problem]) -> None:
    with open(path, "w") as fh:
        for p in problems:
            fh.write(json.dumps(problem_to_json(p), sort_keys=True) + "\n")


def read_problems(path) -> Iterator[Problem]:
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield problem_from_json(json.loads(line))
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed problem ({exc})") from exc
