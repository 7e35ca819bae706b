"""nlwg - differentiable inverse design of AlGaAs counterpropagating SPDC waveguides"""
__version__ = "1.0.0"
