"""
Subcommand registry.
Centralizes the CLI subcommands and maps library errors to exit codes.
"""
from dataclasses import dataclass, field
from typing import Callable, Awaitable, Optional
import logging

from src.services.errors import PolyrelaxError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1  # scientific failure: hypothesis or slope
EXIT_USAGE = 2
EXIT_ABORT = 3


@dataclass
class CommandResult:
    """Result of command execution."""
    exit_code: int = EXIT_OK
    payload: Optional[dict] = None  # certificate / summary printed to stdout
    message: Optional[str] = None
    artifacts: list[str] = field(default_factory=list)


class CommandHandler:
    """Registry and dispatcher for subcommands."""

    def __init__(self):
        self._commands: dict[str, Callable] = {}
        self._descriptions: dict[str, str] = {}

    def register(self, name: str, description: str = ""):
        """Decorator to register a command handler."""
        def decorator(func: Callable[..., Awaitable[CommandResult]]):
            self._commands[name.lower()] = func
            self._descriptions[name.lower()] = description
            return func
        return decorator

    @property
    def names(self) -> list[str]:
        return sorted(self._commands)

    def description(self, name: str) -> str:
        return self._descriptions.get(name, "")

    def get_help_text(self) -> str:
        """Generate help text from registered commands."""
        lines = ["Commands:"]
        for name, desc in sorted(self._descriptions.items()):
            if desc:
                lines.append(f"  {name:<16} {desc}")
            else:
                lines.append(f"  {name}")
        return "\n".join(lines)

    async def handle(self, name: str, **context) -> CommandResult:
        """
        Run a registered command.
        Library errors become their exit code; anything else is an abort.
        """
        handler = self._commands.get(name.lower())
        if not handler:
            return CommandResult(exit_code=EXIT_USAGE, message=f"unknown command '{name}'\n{self.get_help_text()}")

        try:
            return await handler(**context)
        except PolyrelaxError as e:
            logger.error(f"Command {name} failed: {e}", extra={"command": name})
            return CommandResult(exit_code=e.exit_code, message=f"{type(e).__name__}: {e}")
        except Exception as e:
            logger.exception(f"Command {name} crashed: {e}", extra={"command": name})
            return CommandResult(exit_code=EXIT_ABORT, message=f"internal error: {e}")


# Global command handler instance
commands = CommandHandler()
