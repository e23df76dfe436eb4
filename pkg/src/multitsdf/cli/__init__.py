"""Command-line front end, dataset format and evaluation harness."""
