"""Test suite for LetC Lab."""
