#!/usr/bin/env python3
"""
Bridgecraft - Main Entry Point
Runs the command-line interface (train / eval / compare / plot).
"""
import os
import sys

# Add src to Python path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), 'src'))

from src.scripts.bridgecraft_cli import main

if __name__ == "__main__":
    main()
