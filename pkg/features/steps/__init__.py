# This file makes the steps directory a Python package
