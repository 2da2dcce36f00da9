"""Subcommands; every module here exposes setup(subparsers) and is loaded by main.py."""
