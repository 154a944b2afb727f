"""Economic MPC toolkit for an islanded microgrid with input-nonlinear battery dynamics.

Three controllers are provided: a model-based reference MPC, a linear
data-driven MPC with slack-based mismatch handling, and a Hammerstein-type
data-driven MPC built from lifted-input Hankel representations, together with
the deterministic mixed-integer nonconvex solver and the closed-loop
evaluation harness needed to compare them.
"""

__version__ = "0.1.0"

from . import hankel, harness, plant, problems, scenario, solver  # noqa: F401
