"""Joint user scheduling, precoding, and power allocation minimizing sum
age of incorrect information for rate-splitting downlinks, with an SDMA
restriction for comparison."""

__version__ = "0.1.0"
