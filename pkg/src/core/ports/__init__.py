"""Protocol interfaces between the core and its adapters."""
