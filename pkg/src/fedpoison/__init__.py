"""Desk-scale simulator of data-poisoning attacks on federated edge learning."""

__version__ = "0.1.0"
