"""Seizure-prediction toolkit built around spatio-temporal attention.

Subsystems: ``autodiff``/``optim``/``gradcheck``/``checkpoint`` (numerics),
``ingest`` (recording IO and protocol), ``attention`` (the generator),
``adversarial`` (discriminator and training), ``evaluation`` (alarms and
clinical metrics), ``synthetic`` (test-signal generation), ``config``/
``pipeline``/``cli`` (orchestration).
"""

__version__ = "0.1.0"
