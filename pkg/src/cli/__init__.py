"""
Command-line interface for hurpipe

One `hurpipe` program with a subcommand per pipeline step plus the
config-driven `pipeline` command.
"""
