"""
ptp-csoe
~~~~~~~~~~~~~~
The package for joint clock skew and offset estimation over two-way message exchanges on several
master-slave paths, some of which carry an unknown delay asymmetry.

Usage example:
   >>> from ptp_csoe import ExperimentRunner, sage, initialize
   >>> runner = ExperimentRunner('convergence', trials=20, threads=4)
   >>> rows = runner.run()
   >>>
   >>> state = initialize(window)
   >>> result = sage.run(window, state)
   >>> result.state.clock.skew, result.state.clock.offset

:copyright: (c) 2024 by the ptp-csoe authors
:license: MIT, see LICENSE for more details.
"""

from . import sage, genie
from .runner import ExperimentRunner
from .async_runner import AsyncExperimentRunner
from .initialization import initialize, InitConfig
from .genie import GenieInputs, IntegrationGrid
from .gmm import GmmParams, fit_em
from .types import ClockParams, PathConfig, Scenario, ExchangeRecords, WindowData, ScenarioInfo, ExperimentInfo
