"""Force estimation for a simulated trocar-constrained surgical arm.

Modules: ``core`` (data types and I/O), ``manipulator`` (kinematics),
``dynsim`` (telemetry simulator), ``neuralnet`` (numpy LSTM/dense engine),
``pipeline`` (two-step predictors), ``estimator`` (wrench estimates),
``evalbench`` (experiment tables) and ``cli``.
"""
__version__ = "0.1.0"
