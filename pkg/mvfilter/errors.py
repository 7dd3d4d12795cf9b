class ConfigError(ValueError):
    '''Raised for an invalid or unknown configuration key. The CLI turns it into exit code 2.'''

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"Invalid config key '{key}': {message}")


class NumericalAbortError(RuntimeError):
    '''Base class for numerical failures. The CLI turns these into exit code 1.'''


class BlowUpError(NumericalAbortError):
    def __init__(self, particle: int, time: float, process: str = 'signal'):
        self.particle = particle
        self.time = time
        self.process = process
        super().__init__(f"Non-finite {process} state: particle {particle} at t={time:.6g}. Check the model coefficients and step size.")


class WeightUnderflowError(NumericalAbortError):
    def __init__(self, min_log_weight: float, time: float):
        self.min_log_weight = min_log_weight
        self.time = time
        super().__init__(f"Degenerate filter normalizer at t={time:.6g} (minimum log-weight {min_log_weight:.6g}).")
