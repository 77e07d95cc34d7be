"""Command handlers, one module per subcommand."""

from detext.commands import ablate, bench, eval, gen, precompute, pretrain, rank, train

COMMANDS = {module.NAME: module for module in (gen, pretrain, train, eval, precompute, rank, bench, ablate)}
