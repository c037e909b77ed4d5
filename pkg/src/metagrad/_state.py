"""Thread-local interpreter state shared by the tensor and autodiff layers."""

import threading


class _State(threading.local):
    def __init__(self):
        self.ledger = None
        # Named-save collectors of checkpoints whose forward pass is running.
        self.collectors = []
        # Replay contexts of checkpoints being re-executed in a backward pass.
        self.replays = []
        self.custom_depth = 0


state = _State()
