"""Creator Feedback Lab - ranking toward creator feedback in a simulated content ecosystem."""
__version__ = "1.0.0"
