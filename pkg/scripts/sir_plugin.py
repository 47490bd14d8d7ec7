#!/usr/bin/env python3
"""External-simulator plug-in wrapping the built-in SIR model.

Reads one JSON request line {"x": [beta, gamma], "seed": n} on stdin and
writes one response line {"t": [...], "outputs": {"S": [...], ...}}.
Use it as a template for wrapping other simulators:

    crnts run --sweep sweep.csv --out results --plugin scripts/sir_plugin.py
"""
from crnts.sir import serve_plugin

if __name__ == "__main__":
    serve_plugin()
