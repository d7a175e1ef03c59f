from __future__ import annotations

import pytest

from hlsdse.evaluator import kernel_model_from_dict
from hlsdse.space import build_space

NEST_TEMPLATE = """\
void nest(float a[64][16])
{
#pragma ACCEL PIPELINE auto{PIPE_L0}
#pragma ACCEL TILE FACTOR=auto{TILE_L0}
  for (int i = 0; i < 64; i++) {
#pragma ACCEL PARALLEL FACTOR=auto{PF_L1}
    for (int j = 0; j < 16; j++) {
      a[i][j] += 1.0f;
    }
  }
}
"""

NEST_DOC = {
    "name": "nest",
    "backend": "merlin",
    "params": [
        {"name": "PF_L1", "kind": "PARALLEL", "attach": "L1", "values": [1, 2, 4, 8]},
        {"name": "PIPE_L0", "kind": "PIPELINE", "attach": "L0", "values": ["off", "cg", "fg"]},
        {"name": "TILE_L0", "kind": "TILE", "attach": "L0", "values": [1, 2]},
    ],
}

NEST_MODEL = {
    "arrays": {"a": {"size": 1024, "ports": 2}},
    "loops": [
        {"id": "L0", "trip": 64, "body_cost": 1,
         "loops": [{"id": "L1", "trip": 16, "body_cost": 2, "body_dsp": 1, "accesses": ["a"]}]},
    ],
}

SINGLE_TEMPLATE = """\
void scale(float a[100])
{
#pragma ACCEL PIPELINE auto{PIPE_L0}
#pragma ACCEL PARALLEL FACTOR=auto{PF_L0}
  for (int i = 0; i < 100; i++)
    a[i] = a[i] * 2.0f;
}
"""

SINGLE_MODEL = {
    "arrays": {"a": {"size": 100, "ports": 4}},
    "loops": [{"id": "L0", "trip": 100, "body_cost": 2, "body_dsp": 1, "accesses": ["a"]}],
}


def single_space(pf=(1, 2, 4, 8), pipe=("off", "cg", "fg"), model=None):
    doc = {
        "name": "single",
        "params": [
            {"name": "PF_L0", "kind": "PARALLEL", "attach": "L0", "values": list(pf)},
            {"name": "PIPE_L0", "kind": "PIPELINE", "attach": "L0", "values": list(pipe)},
        ],
    }
    return build_space(doc, SINGLE_TEMPLATE, kernel_model_from_dict(model or SINGLE_MODEL))


@pytest.fixture
def nest_space():
    return build_space(NEST_DOC, NEST_TEMPLATE, kernel_model_from_dict(NEST_MODEL))


@pytest.fixture
def single():
    return single_space()


class RuleModel:
    """Stand-in chat model: valid, deterministic replies derived from the prompt.

    The router picks the first offered node, a specialist the last legal value,
    the arbitrator the first proposal, and the critic writes a fixed note.
    """

    def __init__(self):
        self.calls = 0

    def send(self, request):
        import json
        import re

        self.calls += 1
        system, user = (m["content"] for m in request["messages"])
        role = re.search(r"You are the (\w+)", system).group(1)
        if role == "router":
            reply = {"tasks": [{"node_id": int(re.search(r"- node (\d+)", user).group(1))}]}
        elif role == "specialist":
            legal = re.search(r"Legal values at this design: (.*)", user).group(1).split(", ")
            value = legal[-1]
            reply = {"new_value": int(value) if value.isdigit() else value, "prediction": "try it"}
        elif role == "arbitrator":
            reply = {"selected": [0]}
        else:
            reply = {"message": "noted"}
        content = "```json\n" + json.dumps(reply) + "\n```"
        return {
            "choices": [{"message": {"role": "assistant", "content": content}}],
            "usage": {"prompt_tokens": len(system + user) // 4, "completion_tokens": len(content) // 4},
        }
