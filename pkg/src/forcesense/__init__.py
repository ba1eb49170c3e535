"""Contact-force estimation workbench for a simulated surgical manipulator.

Joint torques measured in free space train a predictor of the robot's own
torque; during contact, the residual between measured and predicted torque is
mapped to a tip wrench through the inverse-transpose Jacobian.
"""

__version__ = "0.1.0"
