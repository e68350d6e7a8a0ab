"""Ex-post settlement of renewable energy communities.

The package turns metering data, member contracts and initial repartition
keys into a cost-optimal settlement: optimised keys, verified allocations,
local sales, self-sufficiency rates and bills.
"""

__version__ = "0.1.0"
