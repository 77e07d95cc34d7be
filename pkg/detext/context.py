from contextvars import ContextVar
from typing import Optional

# Run-scoped context variables
run_id_var: ContextVar[Optional[str]] = ContextVar("run_id", default=None)
command_var: ContextVar[Optional[str]] = ContextVar("command", default=None)
seed_var: ContextVar[Optional[int]] = ContextVar("seed", default=None)
