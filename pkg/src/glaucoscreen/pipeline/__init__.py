"""Stage orchestration, configuration and reporting."""
