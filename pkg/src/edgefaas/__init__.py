"""Resource allocation and simulation for edge FaaS platforms whose
applications alternate between stateless (lambda) and stateful (mu)
operation modes."""

__version__ = "0.1.0"
